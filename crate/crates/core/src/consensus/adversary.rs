//! Byzantine behaviour, expressed as what a node does in each phase.

use serde::{Deserialize, Serialize};

use crate::sim::SlotTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum AdversaryStrategy {
    /// Sends nothing while it is the leader; otherwise follows the protocol.
    SilentLeader,
    /// Never transmits.
    Crashed,
    /// Follows the protocol, then stops transmitting from `slot` on.
    CrashAt { slot: u64 },
    /// As leader, proposes one digest to half of the followers and another to the rest.
    EquivocatingLeader,
    /// Never votes.
    VoteWithholding,
    /// Votes for a different digest towards half of the receivers.
    ConflictingVotes,
    /// Floods NACKs naming everyone: with a stale instance tag outside the
    /// catch window, or with the live tag inside it.
    MaliciousNack { inside_window: bool },
}

impl AdversaryStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            AdversaryStrategy::SilentLeader => "silent-leader",
            AdversaryStrategy::Crashed => "crashed",
            AdversaryStrategy::CrashAt { .. } => "crash-at",
            AdversaryStrategy::EquivocatingLeader => "equivocating-leader",
            AdversaryStrategy::VoteWithholding => "vote-withholding",
            AdversaryStrategy::ConflictingVotes => "conflicting-votes",
            AdversaryStrategy::MaliciousNack { .. } => "malicious-nack",
        }
    }
}

/// Behaviour of one node in one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Intent {
    Honest,
    Silent,
    SplitLead,
    SplitVote,
    Withhold,
    Spam { inside_window: bool },
}

/// Facts about the phase a strategy reacts to.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PhaseRole {
    pub leads: bool,
    pub proposes: bool,
    pub votes: bool,
    pub now: SlotTime,
}

impl AdversaryStrategy {
    pub(crate) fn intent(&self, role: PhaseRole) -> Intent {
        match *self {
            AdversaryStrategy::SilentLeader if role.leads => Intent::Silent,
            AdversaryStrategy::SilentLeader => Intent::Honest,
            AdversaryStrategy::Crashed => Intent::Silent,
            AdversaryStrategy::CrashAt { slot } if role.now.0 >= slot => Intent::Silent,
            AdversaryStrategy::CrashAt { .. } => Intent::Honest,
            AdversaryStrategy::EquivocatingLeader if role.proposes => Intent::SplitLead,
            AdversaryStrategy::EquivocatingLeader => Intent::Honest,
            AdversaryStrategy::VoteWithholding => Intent::Withhold,
            AdversaryStrategy::ConflictingVotes if role.votes && !role.leads => Intent::SplitVote,
            AdversaryStrategy::ConflictingVotes => Intent::Honest,
            AdversaryStrategy::MaliciousNack { inside_window } => Intent::Spam { inside_window },
        }
    }
}
