use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::channel::{BurstParams, LossSchedule, NodeId};
use crate::consensus::{AdversaryStrategy, ConsensusConfig, Deltas, Protocol};
use crate::crypto::SignerKind;
use crate::mac::CsmaParams;
use crate::patterns::{Mechanism, PatternKind};
use crate::sim::SlotTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    SingleHop {
        nodes: u32,
    },
    /// `count` seeded clusters over `nodes`, or explicit `memberships`.
    Clusters {
        #[serde(default)]
        nodes: u32,
        #[serde(default)]
        count: u32,
        #[serde(default)]
        memberships: Option<Vec<Vec<u32>>>,
        #[serde(default)]
        allow_small: bool,
    },
}

impl Topology {
    pub fn node_count(&self) -> u32 {
        match self {
            Topology::SingleHop { nodes } => *nodes,
            Topology::Clusters {
                memberships: Some(m),
                ..
            } => m.iter().map(|c| c.len() as u32).sum(),
            Topology::Clusters { nodes, .. } => *nodes,
        }
    }

    pub fn cluster_count(&self) -> u32 {
        match self {
            Topology::SingleHop { .. } => 1,
            Topology::Clusters {
                memberships: Some(m),
                ..
            } => m.len() as u32,
            Topology::Clusters { count, .. } => *count,
        }
    }

    pub fn is_multihop(&self) -> bool {
        matches!(self, Topology::Clusters { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub node: u32,
    #[serde(flatten)]
    pub strategy: AdversaryStrategy,
}

/// Pattern scaling sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingSpec {
    pub mechanisms: Vec<Mechanism>,
    pub patterns: Vec<PatternKind>,
    pub nodes: Vec<u32>,
    pub alpha: f64,
    pub trials: u32,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec {
            mechanisms: Mechanism::ALL.to_vec(),
            patterns: PatternKind::ALL.to_vec(),
            nodes: vec![4, 8, 16, 32],
            alpha: 0.2,
            trials: 5,
        }
    }
}

/// Everything that determines a sweep. Lists are swept as a cross product
/// in the order protocol, mechanism, alpha, trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub protocols: Vec<Protocol>,
    pub mechanisms: Vec<Mechanism>,
    pub topology: Topology,
    /// Post-GST loss rates.
    pub alphas: Vec<f64>,
    pub gst_slot: Option<u64>,
    /// Loss before `gst_slot`.
    pub pre_gst_alpha: Option<f64>,
    pub burst: Option<BurstParams>,
    pub ntx_proposal: u32,
    pub ntx_vote: u32,
    pub baseline_ntx: u32,
    pub deltas: Deltas,
    pub csma: CsmaParams,
    pub timer_factor: u64,
    pub tendermint_cap: u64,
    pub signer: SignerKind,
    pub adversaries: Vec<AdversarySpec>,
    /// Cluster leaders that relay digests their cluster never committed.
    pub rogue_relays: Vec<u32>,
    /// Decisions per single-hop trial, global rounds per multi-hop trial.
    pub rounds: u64,
    pub trials: u32,
    pub master_seed: u64,
    pub slot_seconds: f64,
    /// Slot cap per trial (per tier and round for multi-hop).
    pub slot_cap: u64,
    pub scaling: ScalingSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let c = ConsensusConfig::default();
        ExperimentConfig {
            protocols: vec![Protocol::Pbft],
            mechanisms: vec![Mechanism::ReduceCatch],
            topology: Topology::SingleHop { nodes: 10 },
            alphas: vec![0.0],
            gst_slot: None,
            pre_gst_alpha: None,
            burst: None,
            ntx_proposal: c.ntx_proposal,
            ntx_vote: c.ntx_vote,
            baseline_ntx: c.baseline_ntx,
            deltas: c.deltas,
            csma: c.csma,
            timer_factor: c.timer_factor,
            tendermint_cap: c.tendermint_cap,
            signer: c.signer,
            adversaries: Vec::new(),
            rogue_relays: Vec::new(),
            rounds: 1,
            trials: 5,
            master_seed: 0,
            slot_seconds: 1.0,
            slot_cap: 1_000_000,
            scaling: ScalingSpec::default(),
        }
    }
}

/// One cell of the sweep, before trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSpec {
    pub protocol: Protocol,
    pub mechanism: Mechanism,
    pub alpha: f64,
}

impl ExperimentConfig {
    /// Reads JSON, or TOML when the file name ends in `.toml`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.protocols.is_empty() || self.mechanisms.is_empty() || self.alphas.is_empty() {
            bail!("protocols, mechanisms and alphas must be non-empty");
        }
        if self.trials == 0 || self.rounds == 0 {
            bail!("trials and rounds must be positive");
        }
        for a in self.alphas.iter().chain(&self.pre_gst_alpha) {
            if !(0.0..=1.0).contains(a) {
                bail!("loss rate {a} outside [0, 1]");
            }
        }
        if !self.slot_seconds.is_finite() || self.slot_seconds <= 0.0 {
            bail!("slot_seconds must be positive");
        }
        if self.ntx_proposal == 0 || self.ntx_vote == 0 || self.baseline_ntx == 0 {
            bail!("NTX values must be at least 1");
        }
        let n = self.topology.node_count();
        if n < 1 {
            bail!("topology has no nodes");
        }
        for a in &self.adversaries {
            if a.node >= n {
                bail!("adversary {} is not one of the {n} nodes", a.node);
            }
        }
        let s = &self.scaling;
        if s.nodes.len() < 3 || s.nodes.windows(2).any(|w| w[0] >= w[1]) {
            bail!("scaling node counts must be strictly increasing, at least three");
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<PointSpec> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &mechanism in &self.mechanisms {
                for &alpha in &self.alphas {
                    out.push(PointSpec {
                        protocol,
                        mechanism,
                        alpha,
                    });
                }
            }
        }
        out
    }

    pub fn consensus(&self, point: &PointSpec) -> ConsensusConfig {
        ConsensusConfig {
            protocol: point.protocol,
            mechanism: point.mechanism,
            ntx_proposal: self.ntx_proposal,
            ntx_vote: self.ntx_vote,
            baseline_ntx: self.baseline_ntx,
            deltas: self.deltas,
            csma: self.csma,
            timer_factor: self.timer_factor,
            tendermint_cap: self.tendermint_cap,
            signer: self.signer,
            phase_budget: None,
        }
    }

    pub fn loss(&self, alpha: f64) -> anyhow::Result<LossSchedule> {
        Ok(match (self.gst_slot, self.pre_gst_alpha) {
            (Some(gst), Some(pre)) => LossSchedule::with_gst(SlotTime(gst), pre, alpha)?,
            (Some(_), None) | (None, Some(_)) => {
                bail!("gst_slot and pre_gst_alpha go together")
            }
            (None, None) => LossSchedule::constant(alpha),
        })
    }

    pub fn adversary_map(&self) -> BTreeMap<NodeId, AdversaryStrategy> {
        self.adversaries
            .iter()
            .map(|a| (NodeId(a.node), a.strategy))
            .collect()
    }

    pub fn rogue_set(&self) -> BTreeSet<NodeId> {
        self.rogue_relays.iter().copied().map(NodeId).collect()
    }
}
