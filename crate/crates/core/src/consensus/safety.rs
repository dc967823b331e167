//! Agreement checker over honest commit logs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channel::NodeId;

use super::message::Digest;
use super::replica::CommitRecord;

/// Two honest commits that disagree on one sequence number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyViolation {
    pub sequence: u64,
    pub first: (NodeId, Digest),
    pub second: (NodeId, Digest),
}

/// Every disagreement among honest replicas, including a replica that
/// contradicts itself.
pub fn check_safety(
    logs: &BTreeMap<NodeId, Vec<CommitRecord>>,
    honest: &BTreeSet<NodeId>,
) -> Vec<SafetyViolation> {
    let mut first: BTreeMap<u64, (NodeId, Digest)> = BTreeMap::new();
    let mut out = Vec::new();
    for (node, log) in logs.iter().filter(|(n, _)| honest.contains(n)) {
        for c in log {
            match first.get(&c.sequence) {
                None => {
                    first.insert(c.sequence, (*node, c.digest));
                }
                Some(&(other, d)) if d != c.digest => out.push(SafetyViolation {
                    sequence: c.sequence,
                    first: (other, d),
                    second: (*node, c.digest),
                }),
                Some(_) => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SlotTime;

    fn rec(sequence: u64, byte: u8) -> CommitRecord {
        CommitRecord {
            sequence,
            digest: Digest([byte; 32]),
            view: 0,
            slot: SlotTime(0),
        }
    }

    #[test]
    fn byzantine_logs_are_ignored() {
        let mut logs = BTreeMap::new();
        logs.insert(NodeId(0), vec![rec(0, 1), rec(1, 2)]);
        logs.insert(NodeId(1), vec![rec(0, 1)]);
        logs.insert(NodeId(2), vec![rec(0, 9)]);
        let honest: BTreeSet<NodeId> = [NodeId(0), NodeId(1)].into();
        assert!(check_safety(&logs, &honest).is_empty());
        let all: BTreeSet<NodeId> = logs.keys().copied().collect();
        let v = check_safety(&logs, &all);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sequence, 0);
        assert_eq!(v[0].second.0, NodeId(2));
    }
}
