use std::collections::{BTreeMap, BTreeSet};

use std::sync::Arc;

use super::*;
use crate::channel::NodeId;
use crate::crypto::{Keyring, SignerKind};
use crate::patterns::Mechanism;
use crate::sim::{SlotTime, TraceKind};

fn rc(protocol: Protocol) -> ConsensusConfig {
    ConsensusConfig::new(protocol, Mechanism::ReduceCatch)
}

fn agree(report: &ConsensusReport) {
    assert!(report.safety_violations.is_empty(), "{:?}", report.safety_violations);
}

#[test]
fn pbft_lossless_commit_after_41_slots() {
    // merged pre-prepare + prepare: 5 + 4*3 + 6; commit: 4*3 + 6
    let oracle = 5 + (4 * 3 + 6) + (4 * 3 + 6);
    let out = run_consensus(&ConsensusRun::new(rc(Protocol::Pbft), 4).traced());
    assert!(out.reached_target);
    let d = &out.report.decisions[0];
    assert_eq!(d.latency, oracle);
    assert_eq!(d.started, SlotTime(0));
    assert_eq!(d.committed, SlotTime(oracle - 1));
    let commits: Vec<_> = out.trace.of_kind(TraceKind::Commit).collect();
    assert_eq!(commits.len(), 4);
    assert!(commits.iter().all(|e| e.slot == SlotTime(oracle - 1)));
    assert_eq!(out.report.pattern_failures, 0);
    assert_eq!(out.report.view_changes, 0);
    agree(&out.report);
}

#[test]
fn lossless_round_lengths_follow_the_schedule() {
    // leader-relayed merged phase: 5 + 3*3 + 5; final broadcast: 5 + 5
    let relay = 5 + 3 * 3 + 5;
    let cases = [
        (Protocol::TendermintV1, 41),
        (Protocol::TendermintV2, 2 * relay + 10),
        (Protocol::HotStuff, 3 * relay + 10),
    ];
    for (protocol, oracle) in cases {
        let out = run_consensus(&ConsensusRun::new(rc(protocol), 4));
        assert_eq!(out.report.decisions[0].latency, oracle, "{protocol}");
        agree(&out.report);
    }
}

#[test]
fn every_protocol_and_mechanism_commits_without_loss() {
    for protocol in Protocol::ALL {
        for mechanism in Mechanism::ALL {
            let mut run = ConsensusRun::new(ConsensusConfig::new(protocol, mechanism), 4);
            run.decisions = 3;
            let out = run_consensus(&run);
            assert!(out.reached_target, "{protocol} {mechanism}");
            assert_eq!(out.report.decisions.len(), 3);
            if mechanism.uses_tdma() || !mechanism.is_baseline() {
                assert_eq!(out.report.view_changes, 0, "{protocol} {mechanism}");
            }
            let digests: BTreeSet<_> = out.report.decisions.iter().map(|d| d.digest).collect();
            assert_eq!(digests.len(), 3);
            for log in out.report.commit_logs.values() {
                assert_eq!(log.len(), 3);
            }
            agree(&out.report);
        }
    }
}

#[test]
fn leaders_rotate_per_protocol() {
    for protocol in Protocol::ALL {
        let mut run = ConsensusRun::new(rc(protocol), 4);
        run.decisions = 3;
        let out = run_consensus(&run);
        let views: Vec<u64> = out.report.decisions.iter().map(|d| d.view).collect();
        if protocol.rotates_every_round() {
            assert_eq!(views, [0, 1, 2]);
        } else {
            assert_eq!(views, [0, 0, 0]);
        }
    }
}



fn keys(n: u32) -> Keyring {
    Keyring::deal(SignerKind::Test, (0..n).map(NodeId), 7)
}

fn vote(keys: &Keyring, node: u32, byte: u8) -> ConsensusMessage {
    let header = MsgHeader {
        protocol: Protocol::HotStuff,
        kind: MsgKind::Vote,
        stage: 1,
        view: 3,
        sequence: 2,
    };
    ConsensusMessage::signed(keys.signing_key(NodeId(node)).unwrap(), header, Digest([byte; 32]), None)
}

#[test]
fn qc_needs_three_distinct_matching_senders() {
    let k = keys(4);
    let qc = qc_form(&[vote(&k, 0, 1), vote(&k, 1, 1), vote(&k, 2, 1)], 1).unwrap();
    assert_eq!(qc.votes.len(), 3);
    assert!(qc_verify(&qc, &k, 1));
    let dup = [vote(&k, 0, 1), vote(&k, 0, 1), vote(&k, 2, 1)];
    assert_eq!(qc_form(&dup, 1), Err(Insufficient { best: 2, needed: 3 }));
}

#[test]
fn qc_picks_the_majority_digest() {
    let k = keys(4);
    let votes = [vote(&k, 0, 1), vote(&k, 1, 1), vote(&k, 2, 2), vote(&k, 3, 1)];
    let qc = qc_form(&votes, 1).unwrap();
    assert_eq!(qc.digest, Digest([1; 32]));
    let senders: Vec<u32> = qc.senders().iter().map(|n| n.0).collect();
    assert_eq!(senders, [0, 1, 3]);
}

#[test]
fn tampered_certificates_are_rejected() {
    let k = keys(4);
    let mut qc = qc_form(&[vote(&k, 0, 1), vote(&k, 1, 1), vote(&k, 2, 1)], 1).unwrap();
    // a byzantine node relabels a vote as its own
    qc.votes[2].sender = NodeId(3);
    assert!(!qc_verify(&qc, &k, 1));
    let mut short = qc_form(&[vote(&k, 0, 1), vote(&k, 1, 1), vote(&k, 2, 1)], 1).unwrap();
    short.votes.pop();
    assert!(!qc_verify(&short, &k, 1));
    // a vote set from the wrong dealer does not verify
    let other = Keyring::deal(SignerKind::Test, (0..4).map(NodeId), 8);
    let qc = qc_form(&[vote(&k, 0, 1), vote(&k, 1, 1), vote(&k, 2, 1)], 1).unwrap();
    assert!(!qc_verify(&qc, &other, 1));
}

#[test]
fn schnorr_signer_runs_a_round() {
    let mut cfg = rc(Protocol::HotStuff);
    cfg.signer = SignerKind::Schnorr;
    let out = run_consensus(&ConsensusRun::new(cfg, 4));
    assert_eq!(out.report.decisions.len(), 1);
    agree(&out.report);
}

#[test]
fn silent_leader_forces_a_view_change() {
    for protocol in Protocol::ALL {
        let run = ConsensusRun::new(rc(protocol), 4).byzantine(0, AdversaryStrategy::SilentLeader);
        let out = run_consensus(&run.traced());
        assert!(out.reached_target, "{protocol}");
        let d = &out.report.decisions[0];
        assert!(d.view >= 1, "{protocol}");
        assert!(out.report.view_changes >= 1);
        assert!(out.report.commit_logs.values().flatten().all(|c| c.view >= 1));
        agree(&out.report);
    }
}

#[test]
fn equivocation_cannot_split_honest_replicas() {
    let run = ConsensusRun::new(rc(Protocol::Pbft), 4)
        .byzantine(0, AdversaryStrategy::EquivocatingLeader)
        .traced();
    let out = run_consensus(&run);
    // node 3 got the other digest and refuses it, but the leader's own vote
    // with nodes 1 and 2 still forms a quorum, so everyone ends on one value
    let first = out.trace.of_kind(TraceKind::PatternEnd).next().unwrap();
    assert!(first.detail.ends_with("failed=1"), "{}", first.detail);
    assert!(out.reached_target);
    let digests: BTreeSet<_> = out.report.commit_logs.values().flatten().map(|c| c.digest).collect();
    assert_eq!(digests.len(), 1);
    assert!(out.report.safety_violations.is_empty());
}

#[test]
fn locked_value_survives_a_leader_crash() {
    // HotStuff locks on the second certificate, broadcast in the step that
    // starts at slot 38. The leader crashes while collecting the third
    // votes, so no honest replica commits in view 0.
    let run = ConsensusRun::new(rc(Protocol::HotStuff), 4)
        .byzantine(0, AdversaryStrategy::CrashAt { slot: 38 + 10 });
    let out = run_consensus(&run);
    let d = &out.report.decisions[0];
    assert!(d.view >= 1);
    assert!(out.report.commit_logs.values().flatten().all(|c| c.view >= 1));
    // the value proposed in view 0 is the one decided
    assert_eq!(d.digest, Digest::fresh(0, 0, NodeId(0)));
    agree(&out.report);
}

#[test]
fn view_change_asymmetry_with_a_crashed_follower() {
    // f = 2: node 0 stays silent as leader, node 3 never speaks
    let mut slots = BTreeMap::new();
    for protocol in [Protocol::TendermintV1, Protocol::HotStuff] {
        let run = ConsensusRun::new(rc(protocol), 7)
            .byzantine(0, AdversaryStrategy::SilentLeader)
            .byzantine(3, AdversaryStrategy::Crashed);
        let out = run_consensus(&run);
        assert!(out.reached_target);
        slots.insert(protocol, out.report.view_change_slots[0]);
    }
    // reduce 6*3 + catch 5; HotStuff stops as soon as it holds 5 messages
    let tendermint = 6 * 3 + 5 + 30;
    assert_eq!(slots[&Protocol::TendermintV1], tendermint);
    assert!(slots[&Protocol::HotStuff] <= 6 * 3 + 5);
}

#[test]
fn tendermint_variants_agree_under_loss() {
    for protocol in [Protocol::TendermintV1, Protocol::TendermintV2] {
        let mut latencies = Vec::new();
        for seed in 0..50 {
            let run = ConsensusRun::new(rc(protocol), 10).lossy(0.3, seed);
            let out = run_consensus(&run);
            assert!(out.reached_target, "{protocol} seed {seed}");
            agree(&out.report);
            latencies.push(out.report.decisions[0].latency);
        }
        assert!(latencies.iter().all(|l| *l > 0));
    }
}

#[test]
fn hotstuff_tolerates_two_conflicting_voters() {
    for seed in 0..100 {
        let run = ConsensusRun::new(rc(Protocol::HotStuff), 7)
            .lossy(0.2, seed)
            .byzantine(1, AdversaryStrategy::ConflictingVotes)
            .byzantine(4, AdversaryStrategy::ConflictingVotes);
        let out = run_consensus(&run);
        assert!(out.reached_target, "seed {seed}");
        agree(&out.report);
    }
}

#[test]
fn nack_floods_outside_the_window_are_ignored() {
    let run = ConsensusRun::new(rc(Protocol::Pbft), 4)
        .byzantine(2, AdversaryStrategy::MaliciousNack { inside_window: false })
        .traced();
    let out = run_consensus(&run);
    assert!(out.reached_target);
    let honored = out
        .trace
        .of_kind(TraceKind::StateChange)
        .filter(|e| e.detail.starts_with("honor-nack from 2 "))
        .count();
    assert_eq!(honored, 0);
    assert_eq!(out.report.retransmissions, 0);
    agree(&out.report);
}

#[test]
fn replay_is_deterministic() {
    let run = ConsensusRun::new(ConsensusConfig::new(Protocol::HotStuff, Mechanism::CsmaAck), 7)
        .lossy(0.3, 42)
        .byzantine(2, AdversaryStrategy::VoteWithholding)
        .traced();
    let a = run_consensus(&run);
    let b = run_consensus(&run);
    assert_eq!(a.report, b.report);
    assert_eq!(a.trace.render(crate::sim::TraceFormat::Json), b.trace.render(crate::sim::TraceFormat::Json));
}

#[test]
fn views_never_decrease() {
    let run = ConsensusRun::new(rc(Protocol::Pbft), 4)
        .lossy(0.5, 3)
        .byzantine(0, AdversaryStrategy::SilentLeader)
        .traced();
    let out = run_consensus(&run);
    let installed: Vec<u64> = out
        .trace
        .of_kind(TraceKind::ViewChange)
        .filter_map(|e| e.detail.strip_prefix("installed v="))
        .map(|r| r.split(' ').next().unwrap().parse().unwrap())
        .collect();
    assert!(installed.windows(2).all(|w| w[0] < w[1]));
    let _ = Arc::new(0);
}

