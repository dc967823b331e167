//! Clustering and two-tier consensus.
//!
//! Nodes are split into clusters, each on its own channel. Every round the
//! clusters run local consensus side by side, then the cluster leaders order
//! the local results with a second consensus instance on the global channel.
//! The two tiers alternate, so a leader never needs two channels in one slot.
//!
//! Routing between leaders is not modelled: the leaders share a single-hop
//! global channel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{BurstParams, ChannelId, Frame, LossSchedule, Medium, NodeId, TopologyMap};
use crate::consensus::{
    AdversaryStrategy, ConsensusConfig, ConsensusDriver, ConsensusMessage,
    ConsensusReport, Digest, DriverOptions, SafetyViolation,
};
use crate::crypto::{self, Keyring};
use crate::sim::{fork_rng, RngStream, SlotDriver, SlotReport, SlotTime, Trace, TraceKind, World};

/// Smallest cluster that can tolerate one Byzantine member.
pub const MIN_CLUSTER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub u16);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub members: Vec<NodeId>,
    pub channel: ChannelId,
    pub leader: NodeId,
}

impl Cluster {
    /// Byzantine members this cluster tolerates.
    pub fn max_faulty(&self) -> usize {
        crate::consensus::max_faulty(self.members.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLayout {
    pub clusters: Vec<Cluster>,
    pub global: ChannelId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("need at least one cluster")]
    NoClusters,
    #[error("{nodes} nodes cannot form {clusters} clusters of at least {MIN_CLUSTER}")]
    TooSmall { nodes: usize, clusters: usize },
    #[error("node {0} appears in more than one cluster")]
    Overlap(NodeId),
    #[error("cluster {0} is empty")]
    Empty(ClusterId),
    #[error("channel {0:?} is used twice")]
    SharedChannel(ChannelId),
    #[error("leader {0} is not a member of its cluster")]
    ForeignLeader(NodeId),
}

/// Seeded split of `nodes` into `k` clusters whose sizes differ by at most
/// one. Cluster `i` gets channel `i + 1`. Clusters below [`MIN_CLUSTER`] are
/// rejected unless `allow_small`.
pub fn partition(
    nodes: &[NodeId],
    k: usize,
    rng: &mut RngStream,
    allow_small: bool,
) -> Result<ClusterLayout, LayoutError> {
    if k == 0 || nodes.is_empty() {
        return Err(LayoutError::NoClusters);
    }
    let too_small = LayoutError::TooSmall {
        nodes: nodes.len(),
        clusters: k,
    };
    if nodes.len() < k || (!allow_small && nodes.len() < k * MIN_CLUSTER) {
        return Err(too_small);
    }
    let mut shuffled = nodes.to_vec();
    shuffled.sort();
    shuffled.dedup();
    shuffled.shuffle(rng);
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut rest = shuffled.as_slice();
    let mut groups = Vec::with_capacity(k);
    for i in 0..k {
        let (head, tail) = rest.split_at(base + usize::from(i < extra));
        groups.push(head.to_vec());
        rest = tail;
    }
    ClusterLayout::from_memberships(groups, rng, allow_small)
}

/// Uniform seeded choice among `candidates`.
pub fn elect_cluster_leader(candidates: &[NodeId], rng: &mut RngStream) -> Option<NodeId> {
    let mut sorted = candidates.to_vec();
    sorted.sort();
    sorted.choose(rng).copied()
}

impl ClusterLayout {
    /// Explicit memberships; channels `1..=k`, leaders elected from `rng`.
    pub fn from_memberships(
        groups: Vec<Vec<NodeId>>,
        rng: &mut RngStream,
        allow_small: bool,
    ) -> Result<Self, LayoutError> {
        let mut clusters = Vec::with_capacity(groups.len());
        for (i, mut members) in groups.into_iter().enumerate() {
            let id = ClusterId(i as u16 + 1);
            members.sort();
            members.dedup();
            let leader = elect_cluster_leader(&members, rng).ok_or(LayoutError::Empty(id))?;
            clusters.push(Cluster {
                id,
                members,
                channel: ChannelId(id.0),
                leader,
            });
        }
        let layout = ClusterLayout {
            clusters,
            global: ChannelId::GLOBAL,
        };
        layout.validate(allow_small)?;
        Ok(layout)
    }

    pub fn validate(&self, allow_small: bool) -> Result<(), LayoutError> {
        if self.clusters.is_empty() {
            return Err(LayoutError::NoClusters);
        }
        let mut seen = BTreeSet::new();
        let mut channels = BTreeSet::from([self.global]);
        for c in &self.clusters {
            if c.members.is_empty() {
                return Err(LayoutError::Empty(c.id));
            }
            if !allow_small && c.members.len() < MIN_CLUSTER {
                return Err(LayoutError::TooSmall {
                    nodes: self.nodes().len(),
                    clusters: self.clusters.len(),
                });
            }
            if !channels.insert(c.channel) {
                return Err(LayoutError::SharedChannel(c.channel));
            }
            for m in &c.members {
                if !seen.insert(*m) {
                    return Err(LayoutError::Overlap(*m));
                }
            }
            if !c.members.contains(&c.leader) {
                return Err(LayoutError::ForeignLeader(c.leader));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut all: Vec<NodeId> = self.clusters.iter().flat_map(|c| c.members.clone()).collect();
        all.sort();
        all
    }

    pub fn leaders(&self) -> Vec<NodeId> {
        self.clusters.iter().map(|c| c.leader).collect()
    }

    pub fn cluster_of(&self, node: NodeId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.members.contains(&node))
    }

    /// Members hear their cluster channel; leaders also hear the global one.
    pub fn topology(&self) -> TopologyMap {
        let mut t = TopologyMap::empty();
        for c in &self.clusters {
            for m in &c.members {
                t.tune(*m, c.channel);
            }
            t.tune(c.leader, self.global);
        }
        t
    }
}

/// One globally ordered local result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalEntry {
    pub round: u64,
    pub cluster: ClusterId,
    pub digest: Digest,
}

/// Local results in the order the leaders agreed on, after the follower audit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalDecision {
    pub entries: Vec<GlobalEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoTierRound {
    pub round: u64,
    pub started: SlotTime,
    /// First slot after the slowest cluster committed.
    pub local_done: SlotTime,
    /// Slot of the global commit.
    pub finished: SlotTime,
    pub local_latency: BTreeMap<ClusterId, u64>,
    pub global_latency: u64,
    /// Slots from `started` through `finished`.
    pub latency: u64,
    pub relayed: BTreeMap<ClusterId, Digest>,
    /// Clusters whose relayed digest failed the audit.
    pub rejected: Vec<ClusterId>,
    /// `(cluster, old leader, new leader)`.
    pub reelected: Vec<(ClusterId, NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TwoTierError {
    #[error("cluster {cluster} missed its local budget in round {round}")]
    LocalRoundTimeout { round: u64, cluster: ClusterId },
    #[error("leaders missed the global budget in round {round}")]
    GlobalRoundTimeout { round: u64 },
}

#[derive(Debug, Clone)]
pub struct TwoTierRun {
    pub layout: ClusterLayout,
    /// Protocol and mechanism for both tiers.
    pub config: ConsensusConfig,
    pub loss: LossSchedule,
    /// Per-channel overrides of `loss`.
    pub channel_loss: BTreeMap<ChannelId, LossSchedule>,
    /// Good/bad loss chain applied to every channel.
    pub burst: Option<BurstParams>,
    /// Applies in the local instance and, while the node leads its cluster,
    /// in the global one.
    pub adversaries: BTreeMap<NodeId, AdversaryStrategy>,
    /// Nodes that, as cluster leaders, relay a digest their cluster never
    /// committed.
    pub rogue_relays: BTreeSet<NodeId>,
    pub rounds: u64,
    pub seed: u64,
    /// Slot cap for each tier of each round.
    pub tier_budget: u64,
    pub record_trace: bool,
}

impl TwoTierRun {
    pub fn new(layout: ClusterLayout, config: ConsensusConfig, rounds: u64) -> Self {
        TwoTierRun {
            layout,
            config,
            loss: LossSchedule::constant(0.0),
            channel_loss: BTreeMap::new(),
            burst: None,
            adversaries: BTreeMap::new(),
            rogue_relays: BTreeSet::new(),
            rounds,
            seed: 0,
            tier_budget: 200_000,
            record_trace: false,
        }
    }

    pub fn lossy(mut self, alpha: f64, seed: u64) -> Self {
        self.loss = LossSchedule::constant(alpha);
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct TwoTierOutcome {
    /// Layout after any re-elections.
    pub layout: ClusterLayout,
    pub rounds: Vec<TwoTierRound>,
    pub decision: GlobalDecision,
    pub local: BTreeMap<ClusterId, ConsensusReport>,
    /// One report per leader set; the global instance restarts when a leader
    /// is replaced.
    pub global: Vec<ConsensusReport>,
    pub slots: u64,
    pub trace: Trace,
    pub error: Option<TwoTierError>,
}

impl TwoTierOutcome {
    pub fn safety_violations(&self) -> Vec<SafetyViolation> {
        let local = self.local.values().flat_map(|r| r.safety_violations.iter());
        let global = self.global.iter().flat_map(|r| r.safety_violations.iter());
        local.chain(global).cloned().collect()
    }

    /// Every ordered digest was committed by some cluster.
    pub fn globally_valid(&self) -> bool {
        self.invalid_entries() == 0
    }

    /// Ordered digests that no cluster committed.
    pub fn invalid_entries(&self) -> usize {
        invalid_entries(&self.decision, &self.local)
    }

    pub fn mean_round_latency(&self) -> Option<f64> {
        (!self.rounds.is_empty()).then(|| {
            self.rounds.iter().map(|r| r.latency as f64).sum::<f64>() / self.rounds.len() as f64
        })
    }
}

pub fn global_validity(
    decision: &GlobalDecision,
    local: &BTreeMap<ClusterId, ConsensusReport>,
) -> bool {
    invalid_entries(decision, local) == 0
}

fn invalid_entries(decision: &GlobalDecision, local: &BTreeMap<ClusterId, ConsensusReport>) -> usize {
    let committed: BTreeSet<Digest> = local
        .values()
        .flat_map(|r| r.commit_logs.values().flatten().map(|c| c.digest))
        .collect();
    decision.entries.iter().filter(|e| !committed.contains(&e.digest)).count()
}

/// Drives several instances on their own channels in the same slots.
struct Tier<'a>(&'a mut [ConsensusDriver]);

impl SlotDriver<ConsensusMessage> for Tier<'_> {
    fn transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<ConsensusMessage>>) {
        for d in self.0.iter_mut() {
            d.transmit(now, out);
        }
    }

    fn receive(&mut self, report: &SlotReport<ConsensusMessage>, trace: &mut Trace) {
        for d in self.0.iter_mut() {
            d.receive(report, trace);
        }
    }
}

fn batch_digest(round: u64, relayed: &BTreeMap<ClusterId, Digest>) -> Digest {
    let mut parts: Vec<Vec<u8>> = vec![b"batch".to_vec(), round.to_le_bytes().to_vec()];
    for (c, d) in relayed {
        parts.push(c.0.to_le_bytes().to_vec());
        parts.push(d.0.to_vec());
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Digest(crypto::hash(&refs))
}

struct GlobalTier {
    driver: ConsensusDriver,
    /// Decisions the current driver had made before this round.
    base: u64,
    batch: Arc<Mutex<Digest>>,
}

impl GlobalTier {
    fn new(run: &TwoTierRun, layout: &ClusterLayout, keys: &Arc<Keyring>, epoch: u64) -> Self {
        let leaders = layout.leaders();
        let adversaries = leaders
            .iter()
            .filter_map(|l| run.adversaries.get(l).map(|s| (*l, *s)))
            .collect();
        let mut driver = ConsensusDriver::new(
            run.config.clone(),
            layout.global,
            leaders,
            keys.clone(),
            adversaries,
            run.seed ^ (epoch << 32) ^ 0x9e37,
            DriverOptions {
                target_decisions: Some(0),
                view_timer: None,
            },
        );
        let batch = Arc::new(Mutex::new(Digest([0; 32])));
        let shared = batch.clone();
        driver.set_value_source(Arc::new(move |_, _, _| {
            *shared.lock().expect("batch digest lock")
        }));
        GlobalTier {
            driver,
            base: 0,
            batch,
        }
    }
}

/// Runs `run.rounds` rounds of local-then-global consensus. Stops early on
/// the first tier that misses its budget and reports it in `error`.
pub fn run_two_tier(run: &TwoTierRun) -> Result<TwoTierOutcome, LayoutError> {
    let mut layout = run.layout.clone();
    layout.validate(true)?;
    let keys = Arc::new(Keyring::deal(run.config.signer, layout.nodes(), run.seed));
    let mut medium = Medium::new(layout.topology(), run.loss.clone(), run.seed);
    for (channel, loss) in &run.channel_loss {
        // unknown channels are simply unused
        let _ = medium.set_loss(*channel, loss.clone());
    }
    if let Some(burst) = run.burst {
        for c in layout.topology().channels() {
            medium.set_burst_mode(c, burst).expect("channel from the layout");
        }
    }
    let mut world = World::new(medium, run.record_trace);
    let mut elections = fork_rng(run.seed, "multihop:reelect");

    let mut locals: Vec<ConsensusDriver> = layout
        .clusters
        .iter()
        .map(|c| {
            let adversaries = c
                .members
                .iter()
                .filter_map(|m| run.adversaries.get(m).map(|s| (*m, *s)))
                .collect();
            ConsensusDriver::new(
                run.config.clone(),
                c.channel,
                c.members.clone(),
                keys.clone(),
                adversaries,
                run.seed.wrapping_add(u64::from(c.id.0)),
                DriverOptions {
                    target_decisions: Some(0),
                    view_timer: None,
                },
            )
        })
        .collect();
    let mut epoch = 0;
    let mut global = GlobalTier::new(run, &layout, &keys, epoch);
    let mut global_reports = Vec::new();
    let mut suspects: BTreeSet<NodeId> = BTreeSet::new();
    let mut rounds = Vec::new();
    let mut decision = GlobalDecision::default();
    let mut error = None;

    for round in 0..run.rounds {
        let started = world.now();
        for d in locals.iter_mut() {
            d.set_target(round + 1);
        }
        while locals.iter().any(|d| !d.is_idle()) && world.now().since(started) < run.tier_budget {
            world.step(&mut Tier(&mut locals)).expect("cluster frames stay on cluster channels");
        }
        if let Some(i) = locals.iter().position(|d| !d.is_idle()) {
            let cluster = layout.clusters[i].id;
            error = Some(TwoTierError::LocalRoundTimeout { round, cluster });
            break;
        }
        let local_done = world.now();

        let mut relayed = BTreeMap::new();
        let mut committed = BTreeMap::new();
        let mut local_latency = BTreeMap::new();
        for (c, d) in layout.clusters.iter().zip(&locals) {
            let local = d.report().decisions[round as usize].clone();
            let sent = if run.rogue_relays.contains(&c.leader) {
                Digest::conflicting(round, 0, c.leader)
            } else {
                local.digest
            };
            world.trace_mut().record(local_done, TraceKind::StateChange, Some(layout.global), Some(c.leader), || {
                format!("relay {} r={round} d={}", c.id, sent.short())
            });
            relayed.insert(c.id, sent);
            committed.insert(c.id, local.digest);
            local_latency.insert(c.id, local.latency);
        }

        let batch = batch_digest(round, &relayed);
        *global.batch.lock().expect("batch digest lock") = batch;
        let target = global.base + 1;
        global.driver.set_target(target);
        let global_start = world.now();
        while !global.driver.is_idle() && world.now().since(global_start) < run.tier_budget {
            world.step(&mut global.driver).expect("leader frames stay on the global channel");
        }
        if !global.driver.is_idle() {
            error = Some(TwoTierError::GlobalRoundTimeout { round });
            break;
        }
        global.base = target;
        let agreed = global.driver.report().decisions[(target - 1) as usize].clone();
        let finished = agreed.committed;

        // followers compare what their leader relayed with their own log
        let mut rejected = Vec::new();
        let mut reelected = Vec::new();
        for (i, c) in layout.clusters.iter_mut().enumerate() {
            let ok = relayed[&c.id] == committed[&c.id];
            if ok && agreed.digest == batch {
                decision.entries.push(GlobalEntry {
                    round,
                    cluster: c.id,
                    digest: relayed[&c.id],
                });
                continue;
            }
            if ok {
                continue;
            }
            rejected.push(c.id);
            suspects.insert(c.leader);
            let candidates: Vec<NodeId> =
                c.members.iter().copied().filter(|m| !suspects.contains(m)).collect();
            if let Some(next) = elect_cluster_leader(&candidates, &mut elections) {
                let medium = world.medium_mut();
                medium.retune(c.leader, layout.global, false).expect("global channel exists");
                medium.retune(next, layout.global, true).expect("global channel exists");
                world.trace_mut().record(finished, TraceKind::ViewChange, Some(c.channel), Some(next), || {
                    format!("reelect {} old={} new={next}", c.id, c.leader)
                });
                reelected.push((c.id, c.leader, next));
                c.leader = next;
            }
            locals[i].request_view_change();
        }
        if !reelected.is_empty() {
            epoch += 1;
            let fresh = GlobalTier::new(run, &layout, &keys, epoch);
            let old = std::mem::replace(&mut global, fresh);
            global_reports.push(old.driver.into_report());
        }

        rounds.push(TwoTierRound {
            round,
            started,
            local_done,
            finished,
            local_latency,
            global_latency: agreed.latency,
            latency: finished.since(started) + 1,
            relayed,
            rejected,
            reelected,
        });
    }

    global_reports.push(global.driver.into_report());
    let local = layout
        .clusters
        .iter()
        .map(|c| c.id)
        .zip(locals.into_iter().map(ConsensusDriver::into_report))
        .collect();
    Ok(TwoTierOutcome {
        layout,
        rounds,
        decision,
        local,
        global: global_reports,
        slots: world.now().0,
        trace: world.take_trace(),
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::Protocol;
    use crate::patterns::Mechanism;

    fn nodes(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    fn grid(seed: u64) -> ClusterLayout {
        partition(&nodes(16), 4, &mut fork_rng(seed, "layout"), false).unwrap()
    }

    fn rc(protocol: Protocol) -> ConsensusConfig {
        ConsensusConfig::new(protocol, Mechanism::ReduceCatch)
    }

    #[test]
    fn sixteen_nodes_make_four_clusters_of_four() {
        let layout = grid(1);
        assert_eq!(layout.clusters.len(), 4);
        assert!(layout.clusters.iter().all(|c| c.members.len() == 4 && c.max_faulty() == 1));
        let channels: Vec<u16> = layout.clusters.iter().map(|c| c.channel.0).collect();
        assert_eq!(channels, [1, 2, 3, 4]);
        assert_eq!(layout.nodes(), nodes(16));
        let t = layout.topology();
        for c in &layout.clusters {
            assert!(t.hears(c.leader, ChannelId::GLOBAL));
            let followers = c.members.iter().filter(|m| **m != c.leader);
            assert!(followers.clone().all(|m| t.hears(*m, c.channel) && !t.hears(*m, ChannelId::GLOBAL)));
        }
        assert_eq!(grid(1), layout);
        assert_ne!(grid(2).clusters, layout.clusters);
    }

    #[test]
    fn single_cluster_is_the_single_hop_case() {
        let layout = partition(&nodes(4), 1, &mut fork_rng(0, "l"), false).unwrap();
        assert_eq!(layout.clusters.len(), 1);
        assert_eq!(layout.clusters[0].members, nodes(4));
    }

    #[test]
    fn undersized_clusters_need_an_override() {
        let err = partition(&nodes(10), 3, &mut fork_rng(0, "l"), false).unwrap_err();
        assert_eq!(err, LayoutError::TooSmall { nodes: 10, clusters: 3 });
        let layout = partition(&nodes(10), 3, &mut fork_rng(0, "l"), true).unwrap();
        let mut sizes: Vec<usize> = layout.clusters.iter().map(|c| c.members.len()).collect();
        sizes.sort();
        assert_eq!(sizes, [3, 3, 4]);
    }

    #[test]
    fn explicit_layouts_are_checked() {
        let groups = vec![nodes(4), vec![NodeId(3), NodeId(4), NodeId(5), NodeId(6)]];
        let err = ClusterLayout::from_memberships(groups, &mut fork_rng(0, "l"), false);
        assert_eq!(err, Err(LayoutError::Overlap(NodeId(3))));
        let mut layout = grid(0);
        layout.clusters[1].channel = layout.clusters[0].channel;
        assert!(matches!(layout.validate(false), Err(LayoutError::SharedChannel(_))));
        let mut layout = grid(0);
        layout.clusters[0].leader = layout.clusters[1].leader;
        assert!(matches!(layout.validate(false), Err(LayoutError::ForeignLeader(_))));
    }

    #[test]
    fn leader_election_is_seeded() {
        assert_eq!(elect_cluster_leader(&[NodeId(9)], &mut fork_rng(3, "e")), Some(NodeId(9)));
        assert_eq!(elect_cluster_leader(&[], &mut fork_rng(3, "e")), None);
        let members = nodes(4);
        let pick = |seed| elect_cluster_leader(&members, &mut fork_rng(seed, "e")).unwrap();
        assert_eq!(pick(5), pick(5));
        let picked: BTreeSet<NodeId> = (0..40).map(pick).collect();
        assert_eq!(picked.len(), 4, "every member gets elected for some seed");
    }

    #[test]
    fn honest_lossless_rounds_order_every_cluster() {
        for protocol in Protocol::ALL {
            let out = run_two_tier(&TwoTierRun::new(grid(3), rc(protocol), 3)).unwrap();
            assert_eq!(out.error, None, "{protocol}");
            assert_eq!(out.decision.entries.len(), 12);
            for (r, chunk) in out.decision.entries.chunks(4).enumerate() {
                assert!(chunk.iter().all(|e| e.round == r as u64));
            }
            assert!(out.globally_valid());
            assert!(out.safety_violations().is_empty());
            for round in &out.rounds {
                // clusters overlap in time, so one round beats running them back to back
                let isolated: u64 = round.local_latency.values().sum();
                assert!(round.latency < isolated, "{protocol}: {} vs {isolated}", round.latency);
                assert!(round.rejected.is_empty());
            }
        }
    }

    #[test]
    fn rogue_relay_is_caught_and_replaced() {
        let layout = grid(4);
        let rogue = layout.clusters[1].leader;
        let mut run = TwoTierRun::new(layout, rc(Protocol::Pbft), 3).lossy(0.1, 4);
        run.rogue_relays.insert(rogue);
        run.record_trace = true;
        let out = run_two_tier(&run).unwrap();
        assert_eq!(out.error, None);
        let first = &out.rounds[0];
        assert_eq!(first.rejected, [ClusterId(2)]);
        assert_eq!(first.reelected.len(), 1);
        let (_, old, new) = first.reelected[0];
        assert_eq!(old, rogue);
        assert_ne!(new, rogue);
        assert_eq!(out.layout.clusters[1].leader, new);
        assert!(out.rounds[1..].iter().all(|r| r.rejected.is_empty()));
        // round 0 orders three clusters, later rounds all four
        assert_eq!(out.decision.entries.len(), 3 + 4 + 4);
        assert!(out.globally_valid());
        assert!(out.safety_violations().is_empty());
        assert_eq!(out.global.len(), 2);
        // the cluster also ran a view change before its next local round
        assert!(out.local[&ClusterId(2)].view_changes >= 1);
        assert_eq!(out.trace.of_kind(TraceKind::ViewChange).filter(|e| e.detail.starts_with("reelect c2")).count(), 1);
    }

    #[test]
    fn clusters_do_not_feel_each_others_loss() {
        let base = TwoTierRun::new(grid(5), rc(Protocol::HotStuff), 4).lossy(0.3, 11);
        let mut noisy = base.clone();
        noisy.channel_loss.insert(ChannelId(2), LossSchedule::constant(0.6));
        let a = run_two_tier(&base).unwrap();
        let b = run_two_tier(&noisy).unwrap();
        assert_eq!(a.error, None);
        assert_eq!(b.error, None);
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            for c in [1, 3, 4] {
                assert_eq!(ra.local_latency[&ClusterId(c)], rb.local_latency[&ClusterId(c)]);
            }
        }
        let differs = a.rounds.iter().zip(&b.rounds).any(|(x, y)| x.local_latency[&ClusterId(2)] != y.local_latency[&ClusterId(2)]);
        assert!(differs);
    }

    #[test]
    fn byzantine_member_within_budget() {
        let layout = grid(6);
        let c = &layout.clusters[0];
        let follower = *c.members.iter().find(|m| **m != c.leader).unwrap();
        let mut run = TwoTierRun::new(layout, rc(Protocol::TendermintV2), 2).lossy(0.3, 6);
        run.adversaries.insert(follower, AdversaryStrategy::ConflictingVotes);
        let out = run_two_tier(&run).unwrap();
        assert_eq!(out.error, None);
        assert_eq!(out.decision.entries.len(), 8);
        assert!(out.globally_valid());
        assert!(out.safety_violations().is_empty());
    }

    #[test]
    fn tier_budget_overrun_is_reported() {
        let mut run = TwoTierRun::new(grid(7), rc(Protocol::Pbft), 2);
        run.tier_budget = 10;
        let out = run_two_tier(&run).unwrap();
        assert!(matches!(out.error, Some(TwoTierError::LocalRoundTimeout { round: 0, .. })));
        assert!(out.rounds.is_empty());
    }

    #[test]
    fn two_tier_runs_replay() {
        let run = TwoTierRun::new(grid(8), ConsensusConfig::new(Protocol::Pbft, Mechanism::CsmaNack), 2).lossy(0.3, 8);
        let a = run_two_tier(&run).unwrap();
        let b = run_two_tier(&run).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.decision, b.decision);
    }
}
