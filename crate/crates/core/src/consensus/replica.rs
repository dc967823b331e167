//! Per-replica protocol state and the lock rule.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::NodeId;
use crate::sim::SlotTime;

use super::message::{ConsensusMessage, Digest, QuorumCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub sequence: u64,
    pub digest: Digest,
    pub view: u64,
    pub slot: SlotTime,
}

#[derive(Debug, Clone)]
pub struct ReplicaState {
    pub node: NodeId,
    pub view: u64,
    pub sequence: u64,
    /// Proposal accepted in the current round.
    pub proposal: Option<ConsensusMessage>,
    /// Certificates held in the current round, by voting stage.
    pub certs: BTreeMap<u8, Arc<QuorumCertificate>>,
    /// Lock for the current sequence; survives view changes.
    pub lock: Option<Arc<QuorumCertificate>>,
    /// `(view, stage, digest)` of every vote this replica produced.
    pub vote_log: Vec<(u64, u8, Digest)>,
    pub commits: Vec<CommitRecord>,
}

impl ReplicaState {
    pub fn new(node: NodeId) -> Self {
        ReplicaState {
            node,
            view: 0,
            sequence: 0,
            proposal: None,
            certs: BTreeMap::new(),
            lock: None,
            vote_log: Vec::new(),
            commits: Vec::new(),
        }
    }

    /// Resets per-round state. A new sequence also drops the lock.
    pub fn enter(&mut self, view: u64, sequence: u64) {
        debug_assert!(view >= self.view, "views never decrease");
        self.view = view;
        if sequence != self.sequence {
            self.lock = None;
        }
        self.sequence = sequence;
        self.proposal = None;
        self.certs.clear();
    }

    /// A locked replica votes only for its locked value, unless the proposal
    /// justifies itself with a certificate from a later view.
    pub fn safe_to_vote(&self, proposal: &ConsensusMessage) -> bool {
        let Some(lock) = &self.lock else {
            return true;
        };
        lock.digest == proposal.digest
            || proposal
                .justify
                .as_ref()
                .is_some_and(|j| j.view > lock.view && j.digest == proposal.digest)
    }

    /// Stores a certificate; the lock stage also moves the lock forward.
    pub fn record_cert(&mut self, qc: Arc<QuorumCertificate>, lock_stage: u8) {
        if qc.stage == lock_stage && self.lock.as_ref().is_none_or(|l| qc.view >= l.view) {
            self.lock = Some(qc.clone());
        }
        self.certs.insert(qc.stage, qc);
    }

    pub fn committed(&self, sequence: u64) -> Option<Digest> {
        self.commits
            .iter()
            .find(|c| c.sequence == sequence)
            .map(|c| c.digest)
    }
}
