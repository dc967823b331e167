//! Slotted wireless simulator for ReduceCatch reliable communication patterns
//! and the partially synchronous BFT protocols built on top of them.
//!
//! Layering, bottom to top:
//!
//! - [`sim`]: slot clock, seeded RNG streams, trace, and the [`sim::World`] driver loop.
//! - [`channel`]: half-duplex shared medium with Bernoulli/Gilbert loss, collisions and GST.
//! - [`mac`]: TDMA ownership, slotted CSMA backoff and NACK bitmaps.
//! - [`patterns`]: 1-to-N, N-to-1 and N-to-N under ReduceCatch and the four baselines.
//! - [`crypto`]: pluggable signatures.
//! - [`consensus`]: PBFT, Tendermint (two variants) and HotStuff replicas.
//! - [`multihop`]: clustering and two-tier consensus.
//! - [`harness`]: experiment configs, metrics, sweeps and scaling checks.

pub mod channel;
pub mod consensus;
pub mod crypto;
pub mod harness;
pub mod mac;
pub mod multihop;
pub mod patterns;
pub mod sim;

pub use channel::{ChannelId, NodeId};
pub use sim::{SlotTime, World};
