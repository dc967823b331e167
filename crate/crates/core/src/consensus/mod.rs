//! PBFT, Tendermint (two variants) and HotStuff over the reliable patterns.
//!
//! A round is a fixed sequence of pattern phases on one channel. Under
//! ReduceCatch a leader broadcast shares its reduce and catch phases with the
//! votes that follow it; the baselines run every pattern on its own. Replica
//! state changes only at phase boundaries, from what each node holds.

mod adversary;
mod driver;
mod message;
mod replica;
mod safety;
mod schedule;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::crypto::SignerKind;
use crate::mac::CsmaParams;
use crate::patterns::Mechanism;

pub use adversary::AdversaryStrategy;
pub use driver::{
    run_consensus, ConsensusDriver, ConsensusOutcome, ConsensusReport, ConsensusRun, Decision,
    DriverOptions,
};
pub use message::{
    qc_form, qc_verify, quorum_size, ConsensusMessage, Digest, Insufficient, MsgHeader, MsgKind,
    QuorumCertificate,
};
pub use replica::{CommitRecord, ReplicaState};
pub use safety::{check_safety, SafetyViolation};
pub use schedule::{round_schedule, LeadItem, Step, StepSinks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Pbft,
    /// Votes exchanged N-to-N.
    TendermintV1,
    /// Votes collected and relayed by the leader.
    TendermintV2,
    HotStuff,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Pbft,
        Protocol::TendermintV1,
        Protocol::TendermintV2,
        Protocol::HotStuff,
    ];

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Protocol::Pbft => "pbft",
            Protocol::TendermintV1 => "tendermint-v1",
            Protocol::TendermintV2 => "tendermint-v2",
            Protocol::HotStuff => "hotstuff",
        }
    }

    /// Voting stages per round.
    pub fn stages(self) -> u8 {
        match self {
            Protocol::HotStuff => 3,
            _ => 2,
        }
    }

    /// Stage whose certificate locks a replica on a value.
    pub fn lock_stage(self) -> u8 {
        self.stages() - 1
    }

    pub fn vote_kind(self, stage: u8) -> MsgKind {
        match (self, stage) {
            (Protocol::Pbft, 1) => MsgKind::Prepare,
            (Protocol::Pbft, _) => MsgKind::Commit,
            _ => MsgKind::Vote,
        }
    }

    /// Leaders change every round, not only on failure.
    pub fn rotates_every_round(self) -> bool {
        !matches!(self, Protocol::Pbft)
    }

    pub fn leader_relayed(self) -> bool {
        matches!(self, Protocol::TendermintV2 | Protocol::HotStuff)
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

/// Catch-phase lengths per pattern kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deltas {
    pub one_to_n: u32,
    pub n_to_one: u32,
    pub n_to_n: u32,
}

impl Default for Deltas {
    fn default() -> Self {
        Deltas {
            one_to_n: 5,
            n_to_one: 5,
            n_to_n: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub protocol: Protocol,
    pub mechanism: Mechanism,
    pub ntx_proposal: u32,
    pub ntx_vote: u32,
    /// Copies of each frame the baselines send before relying on feedback.
    pub baseline_ntx: u32,
    pub deltas: Deltas,
    pub csma: CsmaParams,
    /// View timer as a multiple of a lossless round.
    pub timer_factor: u64,
    /// Longest extra wait of a Tendermint leader for missing view-change messages.
    pub tendermint_cap: u64,
    pub signer: SignerKind,
    pub phase_budget: Option<u64>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            protocol: Protocol::Pbft,
            mechanism: Mechanism::ReduceCatch,
            ntx_proposal: 5,
            ntx_vote: 3,
            baseline_ntx: 1,
            deltas: Deltas::default(),
            csma: CsmaParams::default(),
            timer_factor: 3,
            tendermint_cap: 30,
            signer: SignerKind::Test,
            phase_budget: None,
        }
    }
}

impl ConsensusConfig {
    pub fn new(protocol: Protocol, mechanism: Mechanism) -> Self {
        ConsensusConfig {
            protocol,
            mechanism,
            ..ConsensusConfig::default()
        }
    }

    pub(crate) fn lead_ntx(&self) -> u32 {
        if self.mechanism.is_baseline() {
            self.baseline_ntx
        } else {
            self.ntx_proposal
        }
    }

    pub(crate) fn vote_ntx(&self) -> u32 {
        if self.mechanism.is_baseline() {
            self.baseline_ntx
        } else {
            self.ntx_vote
        }
    }
}

/// Byzantine budget for `n` replicas.
pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}
