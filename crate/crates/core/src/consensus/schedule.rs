//! Pattern phases that make up one round of each protocol.

use serde::{Deserialize, Serialize};

use crate::patterns::Mechanism;

use super::Protocol;

/// What the leader broadcasts at the start of a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeadItem {
    Proposal,
    /// The certificate of the given voting stage.
    Cert(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSinks {
    /// Every replica collects the votes (N-to-N).
    All,
    /// Only the leader collects them (N-to-1).
    Leader,
}

/// One pattern phase of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub lead: Option<LeadItem>,
    pub vote: Option<u8>,
    pub sinks: StepSinks,
}

impl Step {
    fn lead(item: LeadItem) -> Self {
        Step {
            lead: Some(item),
            vote: None,
            sinks: StepSinks::All,
        }
    }

    fn vote(stage: u8, sinks: StepSinks) -> Self {
        Step {
            lead: None,
            vote: Some(stage),
            sinks,
        }
    }

    fn merged(item: LeadItem, stage: u8, sinks: StepSinks) -> Self {
        Step {
            lead: Some(item),
            vote: Some(stage),
            sinks,
        }
    }

    /// Pattern name for traces and docs.
    pub fn pattern(&self) -> &'static str {
        match (self.lead, self.vote, self.sinks) {
            (Some(_), None, _) => "1-to-n",
            (None, Some(_), StepSinks::All) => "n-to-n",
            (None, Some(_), StepSinks::Leader) => "n-to-1",
            (Some(_), Some(_), StepSinks::All) => "1-to-n+n-to-n",
            (Some(_), Some(_), StepSinks::Leader) => "1-to-n+n-to-1",
            (None, None, _) => "empty",
        }
    }
}

/// Phases of one round. ReduceCatch merges each leader broadcast with the
/// vote collection that follows it; baselines keep them apart.
pub fn round_schedule(protocol: Protocol, mechanism: Mechanism) -> Vec<Step> {
    use LeadItem::*;
    use StepSinks::*;
    let merged = match protocol {
        Protocol::Pbft | Protocol::TendermintV1 => {
            vec![Step::merged(Proposal, 1, All), Step::vote(2, All)]
        }
        Protocol::TendermintV2 => vec![
            Step::merged(Proposal, 1, Leader),
            Step::merged(Cert(1), 2, Leader),
            Step::lead(Cert(2)),
        ],
        Protocol::HotStuff => vec![
            Step::merged(Proposal, 1, Leader),
            Step::merged(Cert(1), 2, Leader),
            Step::merged(Cert(2), 3, Leader),
            Step::lead(Cert(3)),
        ],
    };
    if !mechanism.is_baseline() {
        return merged;
    }
    merged
        .into_iter()
        .flat_map(|s| match (s.lead, s.vote) {
            (Some(item), Some(stage)) => vec![Step::lead(item), Step::vote(stage, s.sinks)],
            _ => vec![s],
        })
        .collect()
}
