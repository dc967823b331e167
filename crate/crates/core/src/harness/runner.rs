use anyhow::Context;
use rayon::prelude::*;

use crate::channel::NodeId;
use crate::consensus::{run_consensus, ConsensusRun};
use crate::crypto;
use crate::multihop::{partition, run_two_tier, ClusterLayout, TwoTierRun};
use crate::patterns::FrameCounts;
use crate::sim::fork_rng;

use super::config::{ExperimentConfig, PointSpec, Topology};
use super::export::{config_hash, ResultsFile, CODE_VERSION};
use super::metrics::{tpm, MetricsRecord};

/// Seed of trial `trial`. Every protocol and mechanism sees the same seeds,
/// so comparisons within a trial share channel randomness.
pub fn trial_seed(master_seed: u64, trial: u32) -> u64 {
    let h = crypto::hash(&[b"trial", &master_seed.to_le_bytes(), &trial.to_le_bytes()]);
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

fn blank(cfg: &ExperimentConfig, point: &PointSpec, trial: u32, index: usize, hash: &str) -> MetricsRecord {
    MetricsRecord {
        index,
        protocol: point.protocol,
        mechanism: point.mechanism,
        alpha: point.alpha,
        nodes: cfg.topology.node_count(),
        clusters: cfg.topology.cluster_count(),
        trial,
        seed: trial_seed(cfg.master_seed, trial),
        decisions: 0,
        latency_mean_slots: None,
        latency_median_slots: None,
        latency_mean_s: None,
        latency_median_s: None,
        tpm: 0.0,
        frames_data: 0,
        frames_ack: 0,
        frames_nack: 0,
        frames_total: 0,
        retransmissions: 0,
        view_changes: 0,
        pattern_failures: 0,
        slots: 0,
        budget_exceeded: false,
        safety_violations: 0,
        invalid_global_entries: 0,
        config_hash: hash.to_string(),
        version: CODE_VERSION.to_string(),
    }
}

/// Runs trial `trial` of `point`. `index` is the row number recorded.
pub fn run_point(
    cfg: &ExperimentConfig,
    point: &PointSpec,
    trial: u32,
    index: usize,
) -> anyhow::Result<MetricsRecord> {
    let hash = config_hash(cfg);
    let mut rec = blank(cfg, point, trial, index, &hash);
    let seed = rec.seed;
    let loss = cfg.loss(point.alpha)?;
    match &cfg.topology {
        Topology::SingleHop { nodes } => {
            let mut run = ConsensusRun::new(cfg.consensus(point), *nodes);
            run.loss = loss;
            run.burst = cfg.burst;
            run.seed = seed;
            run.adversaries = cfg.adversary_map();
            run.decisions = cfg.rounds;
            run.max_slots = cfg.slot_cap;
            let out = run_consensus(&run);
            let r = &out.report;
            let latencies: Vec<u64> = r.decisions.iter().map(|d| d.latency).collect();
            rec.decisions = r.decisions.len() as u64;
            rec.set_latencies(&latencies, cfg.slot_seconds);
            rec.set_frames(&r.frames);
            rec.retransmissions = r.retransmissions;
            rec.view_changes = r.view_changes;
            rec.pattern_failures = r.pattern_failures;
            rec.slots = out.slots;
            rec.budget_exceeded = !out.reached_target;
            rec.safety_violations = r.safety_violations.len() as u64;
        }
        Topology::Clusters { .. } => {
            let layout = layout_for(cfg, seed)?;
            let mut run = TwoTierRun::new(layout, cfg.consensus(point), cfg.rounds);
            run.loss = loss;
            run.burst = cfg.burst;
            run.seed = seed;
            run.adversaries = cfg.adversary_map();
            run.rogue_relays = cfg.rogue_set();
            run.tier_budget = cfg.slot_cap;
            let out = run_two_tier(&run)?;
            let latencies: Vec<u64> = out.rounds.iter().map(|r| r.latency).collect();
            let reports = out.local.values().chain(&out.global);
            let mut frames = FrameCounts::default();
            for r in reports.clone() {
                frames.add(&r.frames);
                rec.retransmissions += r.retransmissions;
                rec.view_changes += r.view_changes;
                rec.pattern_failures += r.pattern_failures;
            }
            rec.decisions = out.rounds.len() as u64;
            rec.set_latencies(&latencies, cfg.slot_seconds);
            rec.set_frames(&frames);
            rec.slots = out.slots;
            rec.budget_exceeded = out.error.is_some();
            rec.safety_violations = out.safety_violations().len() as u64;
            rec.invalid_global_entries = out.invalid_entries() as u64;
        }
    }
    rec.tpm = tpm(rec.decisions, rec.slots, cfg.slot_seconds);
    Ok(rec)
}

/// Cluster layout of a trial, seeded like the trial itself.
pub(crate) fn layout_for(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<ClusterLayout> {
    let Topology::Clusters {
        nodes,
        count,
        memberships,
        allow_small,
    } = &cfg.topology
    else {
        anyhow::bail!("not a clustered topology");
    };
    let mut rng = fork_rng(seed, "layout");
    let layout = match memberships {
        Some(groups) => {
            let groups = groups
                .iter()
                .map(|g| g.iter().copied().map(NodeId).collect())
                .collect();
            ClusterLayout::from_memberships(groups, &mut rng, *allow_small)?
        }
        None => {
            let all: Vec<NodeId> = (0..*nodes).map(NodeId).collect();
            partition(&all, *count as usize, &mut rng, *allow_small)?
        }
    };
    Ok(layout)
}

/// Runs every point and trial on `workers` threads (0 = all cores). Rows
/// come back in sweep order regardless of which finishes first.
pub fn run_matrix(cfg: &ExperimentConfig, workers: usize) -> anyhow::Result<ResultsFile> {
    cfg.validate()?;
    let jobs: Vec<(PointSpec, u32)> = cfg
        .points()
        .into_iter()
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the worker pool")?;
    let records = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(i, (p, t))| run_point(cfg, p, *t, i))
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    Ok(ResultsFile::new(cfg.clone(), records))
}
