//! Reliable 1-to-N, N-to-1 and N-to-N communication.
//!
//! Every pattern instance is described by a [`PhasePlan`] and executed by a
//! [`PhaseRun`], a slot-driven state machine that can be stepped on its own or
//! composed with others (consensus rounds, parallel clusters). The mechanism in
//! the plan picks the engine: ReduceCatch or one of the four baselines.

mod api;
mod baseline;
pub mod complexity;
pub mod ntx;
mod phase;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelId, DataItem, InstanceTag, NodeId};
use crate::mac::CsmaParams;
use crate::sim::SlotTime;

pub use api::{
    baseline_pattern, merged_leader_round, n_to_n, n_to_one, one_to_n, run_phase,
    ForcedDropSpec, PatternReport, PatternRun,
};
pub use complexity::{complexity_bound, Order};
pub use ntx::{ntx_recommend, predicted_active, predicted_active_for, NtxError};
pub use phase::PhaseRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    ReduceCatch,
    CsmaAck,
    CsmaNack,
    TdmaAck,
    TdmaNack,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::ReduceCatch,
        Mechanism::CsmaAck,
        Mechanism::CsmaNack,
        Mechanism::TdmaAck,
        Mechanism::TdmaNack,
    ];

    pub fn is_baseline(self) -> bool {
        self != Mechanism::ReduceCatch
    }

    pub fn uses_ack(self) -> bool {
        matches!(self, Mechanism::CsmaAck | Mechanism::TdmaAck)
    }

    pub fn uses_tdma(self) -> bool {
        matches!(self, Mechanism::TdmaAck | Mechanism::TdmaNack)
    }

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::ReduceCatch => "reduce-catch",
            Mechanism::CsmaAck => "csma-ack",
            Mechanism::CsmaNack => "csma-nack",
            Mechanism::TdmaAck => "tdma-ack",
            Mechanism::TdmaNack => "tdma-nack",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown mechanism {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternKind {
    #[serde(rename = "1-to-n")]
    OneToN,
    #[serde(rename = "n-to-1")]
    NToOne,
    #[serde(rename = "n-to-n")]
    NToN,
}

impl PatternKind {
    pub const ALL: [PatternKind; 3] = [PatternKind::OneToN, PatternKind::NToOne, PatternKind::NToN];

    pub fn label(self) -> &'static str {
        match self {
            PatternKind::OneToN => "1-to-n",
            PatternKind::NToOne => "n-to-1",
            PatternKind::NToN => "n-to-n",
        }
    }

    /// Default catch window per pattern kind.
    pub fn default_delta(self) -> u32 {
        match self {
            PatternKind::OneToN | PatternKind::NToOne => 5,
            PatternKind::NToN => 6,
        }
    }
}

impl std::fmt::Display for PatternKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| format!("unknown pattern {s:?}"))
    }
}

/// Mechanism plus the knobs that govern one pattern instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub mechanism: Mechanism,
    pub ntx: u32,
    pub delta: u32,
    #[serde(default)]
    pub csma: CsmaParams,
    /// Baseline slot cap; `None` means 50·N² slots.
    #[serde(default)]
    pub phase_budget: Option<u64>,
}

impl PatternConfig {
    pub fn reduce_catch(ntx: u32, delta: u32) -> Self {
        PatternConfig {
            mechanism: Mechanism::ReduceCatch,
            ntx,
            delta,
            csma: CsmaParams::default(),
            phase_budget: None,
        }
    }

    pub fn baseline(mechanism: Mechanism, ntx: u32) -> Self {
        PatternConfig {
            mechanism,
            ntx,
            delta: 1,
            csma: CsmaParams::default(),
            phase_budget: None,
        }
    }

    pub fn validate(&self) -> Result<(), PatternError> {
        if self.ntx == 0 {
            return Err(PatternError::InvalidConfig("ntx must be at least 1".into()));
        }
        if self.delta == 0 {
            return Err(PatternError::InvalidConfig("delta must be at least 1".into()));
        }
        if self.csma.window == 0 || self.csma.timer_budget == 0 {
            return Err(PatternError::InvalidConfig(
                "CSMA window and timer budget must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Slot cap for one phase. Baselines with per-packet feedback need
    /// O(N²) frames, so the default grows quadratically.
    pub fn budget_for(&self, participants: usize) -> u64 {
        let n = participants.max(2) as u64;
        self.phase_budget.unwrap_or(50 * n * n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quorum {
    /// A sink needs every voter's item.
    All,
    /// A sink needs this many matching items, its own included.
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadSpec<P> {
    pub node: NodeId,
    /// `None` when the lead has nothing to send this phase.
    pub payload: Option<P>,
    pub ntx: u32,
}

/// Who sends what to whom in one pattern instance.
#[derive(Debug, Clone)]
pub struct PhasePlan<P> {
    pub instance: InstanceTag,
    pub channel: ChannelId,
    /// Everyone taking part, sorted. TDMA baselines cycle over all of them.
    pub members: Vec<NodeId>,
    pub lead: Option<LeadSpec<P>>,
    /// Vote senders in TDMA order.
    pub voters: Vec<NodeId>,
    pub vote_ntx: u32,
    /// Nodes that collect votes.
    pub sinks: Vec<NodeId>,
    pub quorum: Quorum,
    pub delta: u32,
    pub mechanism: Mechanism,
    pub csma: CsmaParams,
    pub phase_budget: u64,
    /// Stop as soon as every honest node is satisfied.
    pub early_exit: bool,
    /// Extra catch slots granted while some honest node is unsatisfied.
    pub catch_extension: u32,
    /// The single sink sends its first NACK in the first catch slot without contending.
    pub first_nack_owned: bool,
}

impl<P> PhasePlan<P> {
    pub fn lead_node(&self) -> Option<NodeId> {
        self.lead.as_ref().map(|l| l.node)
    }

    /// Slots of the reduce phase under ReduceCatch.
    pub fn reduce_len(&self) -> u64 {
        let lead = self.lead.as_ref().map_or(0, |l| u64::from(l.ntx));
        lead + self.voters.len() as u64 * u64::from(self.vote_ntx)
    }
}

pub type AcceptFn<P> = Arc<dyn Fn(NodeId, &DataItem<P>) -> bool + Send + Sync>;
pub type VoteFn<P> = Arc<dyn Fn(NodeId, Option<&P>) -> Option<P> + Send + Sync>;

/// Decides what honest nodes accept and how they vote.
pub struct PhaseLogic<P> {
    pub accept: AcceptFn<P>,
    /// Vote of `node` given the lead item it holds (if any).
    pub vote: VoteFn<P>,
}

impl<P> Clone for PhaseLogic<P> {
    fn clone(&self) -> Self {
        PhaseLogic {
            accept: Arc::clone(&self.accept),
            vote: Arc::clone(&self.vote),
        }
    }
}

impl<P: Clone + Send + Sync + 'static> PhaseLogic<P> {
    /// Each voter contributes a fixed payload regardless of the lead.
    pub fn fixed(votes: BTreeMap<NodeId, P>) -> Self {
        PhaseLogic {
            accept: Arc::new(|_, _| true),
            vote: Arc::new(move |node, _| votes.get(&node).cloned()),
        }
    }

    /// Voters echo the lead item once they hold it.
    pub fn echo() -> Self {
        PhaseLogic {
            accept: Arc::new(|_, _| true),
            vote: Arc::new(|_, lead| lead.cloned()),
        }
    }
}

/// Node behaviour inside a pattern. Everything but `Honest` is Byzantine.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Conduct<P> {
    #[default]
    Honest,
    /// Never transmits.
    Silent,
    /// Sends its own items with a per-receiver payload (others get the default).
    Equivocate(BTreeMap<NodeId, P>),
    /// Sends lead items but never votes.
    WithholdVotes,
    /// Floods NACKs naming everyone. Inside the window they carry the live
    /// instance tag; otherwise they go out in reduce slots or with a stale tag.
    NackSpam { inside_window: bool },
}

impl<P> Conduct<P> {
    pub fn is_honest(&self) -> bool {
        matches!(self, Conduct::Honest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Satisfied,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub data: u64,
    pub ack: u64,
    pub nack: u64,
}

impl FrameCounts {
    pub fn total(&self) -> u64 {
        self.data + self.ack + self.nack
    }

    pub fn add(&mut self, other: &FrameCounts) {
        self.data += other.data;
        self.ack += other.ack;
        self.nack += other.nack;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternOutcome {
    pub status: BTreeMap<NodeId, NodeStatus>,
    pub byzantine: BTreeSet<NodeId>,
    pub slots_used: u64,
    pub frames: FrameCounts,
    pub completed_at: Option<SlotTime>,
    /// Slots of the reduce phase (0 for baselines).
    pub reduce_slots: u64,
    /// Nodes still active when the reduce phase ended.
    pub active_after_reduce: usize,
    /// Data frames sent after the first transmission window.
    pub retransmissions: u64,
    pub budget_exhausted: bool,
    /// Satisfied honest nodes at the end of each slot.
    pub progress: Vec<u32>,
}

impl PatternOutcome {
    pub fn all_satisfied(&self) -> bool {
        self.status
            .iter()
            .filter(|(n, _)| !self.byzantine.contains(n))
            .all(|(_, s)| *s == NodeStatus::Satisfied)
    }

    pub fn is_satisfied(&self, node: NodeId) -> bool {
        self.status.get(&node) == Some(&NodeStatus::Satisfied)
    }

    pub fn failed(&self) -> Vec<NodeId> {
        self.status
            .iter()
            .filter(|(n, s)| **s == NodeStatus::Failed && !self.byzantine.contains(n))
            .map(|(n, _)| *n)
            .collect()
    }

    /// Outcome of a pattern with nothing to exchange.
    pub fn vacuous(nodes: &[NodeId]) -> Self {
        PatternOutcome {
            status: nodes.iter().map(|n| (*n, NodeStatus::Satisfied)).collect(),
            byzantine: BTreeSet::new(),
            slots_used: 0,
            frames: FrameCounts::default(),
            completed_at: Some(SlotTime::ZERO),
            reduce_slots: 0,
            active_after_reduce: 0,
            retransmissions: 0,
            budget_exhausted: false,
            progress: Vec::new(),
        }
    }
}

/// Outcome plus what every node ended up holding.
#[derive(Debug, Clone)]
pub struct PhaseResult<P> {
    pub outcome: PatternOutcome,
    pub holdings: BTreeMap<NodeId, Holding<P>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Holding<P> {
    pub lead: Option<P>,
    /// Votes by origin, the holder's own included.
    pub votes: BTreeMap<NodeId, P>,
}

impl<P> Default for Holding<P> {
    fn default() -> Self {
        Holding {
            lead: None,
            votes: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("phase budget of {budget} slots exhausted")]
    PhaseBudgetExhausted {
        budget: u64,
        outcome: Box<PatternOutcome>,
    },
    #[error("invalid pattern config: {0}")]
    InvalidConfig(String),
    #[error("mechanism {0} is not valid here")]
    WrongMechanism(Mechanism),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
}
