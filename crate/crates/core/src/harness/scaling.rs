use serde::{Deserialize, Serialize};

use crate::channel::{LossSchedule, NodeId};
use crate::patterns::{
    complexity_bound, n_to_n, n_to_one, ntx_recommend, one_to_n, Mechanism, Order, PatternConfig,
    PatternError, PatternKind, PatternOutcome, PatternRun,
};

use super::runner::trial_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub nodes: u32,
    pub ntx: u32,
    pub mean_frames: f64,
    pub mean_slots: f64,
    pub mean_active_after_reduce: f64,
    /// `mean_frames / message_order(N)`.
    pub frame_constant: f64,
    /// `mean_slots / time_order(N)` with β = 1; for CSMA mechanisms this is
    /// the measured β.
    pub slot_constant: f64,
    /// Trials that hit the slot cap or left an honest node unsatisfied.
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub mechanism: Mechanism,
    pub pattern: PatternKind,
    pub alpha: f64,
    pub message_order: String,
    pub time_order: String,
    pub points: Vec<ScalingPoint>,
    /// max / min of the frame constant across the sweep.
    pub constancy_ratio: f64,
}

impl ScalingReport {
    pub fn point(&self, nodes: u32) -> Option<&ScalingPoint> {
        self.points.iter().find(|p| p.nodes == nodes)
    }
}

/// NTX used at size `n`: the smallest leaving one expected active node for
/// ReduceCatch, a single copy for the baselines.
pub fn scaling_ntx(mechanism: Mechanism, alpha: f64, n: u32) -> u32 {
    if mechanism.is_baseline() {
        return 1;
    }
    ntx_recommend(alpha, n.max(2), 1.0).map_or(1, |(ntx, _)| ntx)
}

fn run_once(kind: PatternKind, n: u32, cfg: &PatternConfig, env: &PatternRun) -> (PatternOutcome, bool) {
    let nodes: Vec<NodeId> = (0..n).map(NodeId).collect();
    let result = match kind {
        PatternKind::OneToN => one_to_n(nodes[0], 1, &nodes[1..], cfg, env),
        PatternKind::NToOne => n_to_one(&nodes[1..], nodes[0], cfg, env),
        PatternKind::NToN => n_to_n(&nodes, cfg, env),
    };
    match result {
        Ok(r) => {
            let ok = r.outcome.all_satisfied();
            (r.outcome, ok)
        }
        Err(PatternError::PhaseBudgetExhausted { outcome, .. }) => (*outcome, false),
        Err(e) => panic!("scaling configs are valid: {e}"),
    }
}

/// Mean frames and slots per pattern instance over `trials` seeded runs at
/// each size, normalised by the pattern's complexity order.
pub fn scaling_check(
    mechanism: Mechanism,
    pattern: PatternKind,
    nodes: &[u32],
    alpha: f64,
    trials: u32,
    seed: u64,
) -> ScalingReport {
    let (message_order, time_order) = complexity_bound(mechanism, pattern);
    let points: Vec<ScalingPoint> = nodes
        .iter()
        .map(|&n| measure(mechanism, pattern, n, alpha, trials, seed, message_order, time_order))
        .collect();
    let constants = points.iter().map(|p| p.frame_constant);
    let max = constants.clone().fold(f64::MIN, f64::max);
    let min = constants.fold(f64::MAX, f64::min);
    ScalingReport {
        mechanism,
        pattern,
        alpha,
        message_order: message_order.to_string(),
        time_order: time_order.to_string(),
        points,
        constancy_ratio: if min > 0.0 { max / min } else { f64::INFINITY },
    }
}

#[allow(clippy::too_many_arguments)]
fn measure(
    mechanism: Mechanism,
    pattern: PatternKind,
    n: u32,
    alpha: f64,
    trials: u32,
    seed: u64,
    message_order: Order,
    time_order: Order,
) -> ScalingPoint {
    let ntx = scaling_ntx(mechanism, alpha, n);
    let cfg = if mechanism.is_baseline() {
        PatternConfig::baseline(mechanism, ntx)
    } else {
        PatternConfig::reduce_catch(ntx, pattern.default_delta())
    };
    let (mut frames, mut slots, mut active, mut failures) = (0u64, 0u64, 0usize, 0u32);
    for t in 0..trials {
        let env = PatternRun {
            loss: LossSchedule::constant(alpha),
            seed: trial_seed(seed, t) ^ u64::from(n),
            ..PatternRun::default()
        };
        let (outcome, ok) = run_once(pattern, n, &cfg, &env);
        frames += outcome.frames.total();
        slots += outcome.slots_used;
        active += outcome.active_after_reduce;
        failures += u32::from(!ok);
    }
    let trials_f = f64::from(trials.max(1));
    let mean_frames = frames as f64 / trials_f;
    let mean_slots = slots as f64 / trials_f;
    let mean_active = active as f64 / trials_f;
    let nf = f64::from(n);
    ScalingPoint {
        nodes: n,
        ntx,
        mean_frames,
        mean_slots,
        mean_active_after_reduce: mean_active,
        frame_constant: mean_frames / message_order.eval(nf, 1.0, mean_active),
        slot_constant: mean_slots / time_order.eval(nf, 1.0, mean_active),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_reduce_catch_broadcast_costs_exactly_ntx_frames() {
        let r = scaling_check(Mechanism::ReduceCatch, PatternKind::OneToN, &[4, 8, 16], 0.0, 2, 1);
        for p in &r.points {
            assert_eq!(p.ntx, 1);
            assert_eq!(p.mean_frames, f64::from(p.ntx));
            assert_eq!(p.failures, 0);
        }
        assert_eq!(r.message_order, "log N");
        // log2 4, log2 8, log2 16 normalise a constant 1 frame
        assert!((r.constancy_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn baselines_send_one_copy() {
        assert_eq!(scaling_ntx(Mechanism::TdmaNack, 0.3, 32), 1);
        assert!(scaling_ntx(Mechanism::ReduceCatch, 0.3, 32) > scaling_ntx(Mechanism::ReduceCatch, 0.3, 4));
    }
}
