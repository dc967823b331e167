use std::collections::BTreeMap;
use std::ops::Range;

use crate::channel::{ChannelId, InstanceTag, LossSchedule, Medium, NodeId, Payload, TopologyMap};
use crate::mac::BackoffSource;
use crate::sim::{Trace, World};

use super::{
    Conduct, Holding, LeadSpec, PatternConfig, PatternError, PatternKind, PatternOutcome,
    PhaseLogic, PhasePlan, PhaseResult, PhaseRun, Quorum,
};

fn sorted(nodes: impl IntoIterator<Item = NodeId>) -> Vec<NodeId> {
    let mut v: Vec<NodeId> = nodes.into_iter().collect();
    v.sort();
    v.dedup();
    v
}

impl<P> PhasePlan<P> {
    fn base(
        instance: InstanceTag,
        channel: ChannelId,
        members: Vec<NodeId>,
        cfg: &PatternConfig,
    ) -> Self {
        let budget = cfg.budget_for(members.len());
        PhasePlan {
            instance,
            channel,
            members,
            lead: None,
            voters: Vec::new(),
            vote_ntx: cfg.ntx,
            sinks: Vec::new(),
            quorum: Quorum::All,
            delta: cfg.delta,
            mechanism: cfg.mechanism,
            csma: cfg.csma,
            phase_budget: budget,
            early_exit: false,
            catch_extension: 0,
            first_nack_owned: false,
        }
    }

    pub fn one_to_n(
        instance: InstanceTag,
        channel: ChannelId,
        sender: NodeId,
        payload: Option<P>,
        receivers: &[NodeId],
        cfg: &PatternConfig,
    ) -> Self {
        let members = sorted(receivers.iter().copied().chain([sender]));
        let mut plan = Self::base(instance, channel, members, cfg);
        plan.lead = Some(LeadSpec {
            node: sender,
            payload,
            ntx: cfg.ntx,
        });
        plan
    }

    pub fn n_to_one(
        instance: InstanceTag,
        channel: ChannelId,
        senders: &[NodeId],
        receiver: NodeId,
        cfg: &PatternConfig,
    ) -> Self {
        let members = sorted(senders.iter().copied().chain([receiver]));
        let mut plan = Self::base(instance, channel, members, cfg);
        plan.voters = sorted(senders.iter().copied().filter(|s| *s != receiver));
        plan.sinks = vec![receiver];
        plan.first_nack_owned = true;
        plan
    }

    pub fn n_to_n(
        instance: InstanceTag,
        channel: ChannelId,
        nodes: &[NodeId],
        cfg: &PatternConfig,
    ) -> Self {
        let members = sorted(nodes.iter().copied());
        let mut plan = Self::base(instance, channel, members.clone(), cfg);
        plan.voters = members.clone();
        plan.sinks = members;
        plan
    }

    /// Leader broadcast and follower votes sharing one reduce and one catch phase.
    #[allow(clippy::too_many_arguments)]
    pub fn merged(
        instance: InstanceTag,
        channel: ChannelId,
        leader: NodeId,
        payload: Option<P>,
        followers: &[NodeId],
        ntx_lead: u32,
        cfg: &PatternConfig,
        quorum: Quorum,
    ) -> Self {
        let members = sorted(followers.iter().copied().chain([leader]));
        let mut plan = Self::base(instance, channel, members, cfg);
        plan.lead = Some(LeadSpec {
            node: leader,
            payload,
            ntx: ntx_lead,
        });
        plan.voters = sorted(followers.iter().copied().filter(|f| *f != leader));
        plan.sinks = vec![leader];
        plan.quorum = quorum;
        plan
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcedDropSpec {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub slots: Range<u64>,
}

/// Channel and node behaviour for running a standalone pattern.
#[derive(Debug, Clone)]
pub struct PatternRun {
    pub loss: LossSchedule,
    pub seed: u64,
    pub record_trace: bool,
    /// Pins every CSMA draw; unscripted draws are 0.
    pub backoffs: Option<BTreeMap<NodeId, Vec<u32>>>,
    pub drops: Vec<ForcedDropSpec>,
    pub conduct: BTreeMap<NodeId, Conduct<u64>>,
    pub instance: InstanceTag,
}

impl Default for PatternRun {
    fn default() -> Self {
        PatternRun {
            loss: LossSchedule::constant(0.0),
            seed: 0,
            record_trace: false,
            backoffs: None,
            drops: Vec::new(),
            conduct: BTreeMap::new(),
            instance: InstanceTag(1),
        }
    }
}

impl PatternRun {
    pub fn lossy(alpha: f64, seed: u64) -> Self {
        PatternRun {
            loss: LossSchedule::constant(alpha),
            seed,
            ..PatternRun::default()
        }
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }

    pub fn drop_frames(mut self, sender: u32, receiver: u32, slots: Range<u64>) -> Self {
        self.drops.push(ForcedDropSpec {
            sender: NodeId(sender),
            receiver: NodeId(receiver),
            slots,
        });
        self
    }

    pub fn script_backoffs(mut self, script: BTreeMap<NodeId, Vec<u32>>) -> Self {
        self.backoffs = Some(script);
        self
    }
}

/// Outcome of a standalone pattern run.
#[derive(Debug, Clone)]
pub struct PatternReport {
    pub outcome: PatternOutcome,
    pub holdings: BTreeMap<NodeId, Holding<u64>>,
    pub trace: Trace,
}

/// Steps `run` on `world` until it finishes.
pub fn run_phase<P: Payload>(
    world: &mut World<P>,
    mut run: PhaseRun<P>,
) -> Result<PhaseResult<P>, PatternError> {
    while !run.is_done() {
        world.step(&mut run)?;
    }
    Ok(run.finish())
}

fn execute(
    plan: PhasePlan<u64>,
    logic: PhaseLogic<u64>,
    env: &PatternRun,
) -> Result<PatternReport, PatternError> {
    let topology = TopologyMap::single_hop_nodes(plan.members.iter().copied());
    let mut medium = Medium::new(topology, env.loss.clone(), env.seed);
    for d in &env.drops {
        medium.force_drop(plan.channel, d.sender, d.receiver, d.slots.clone())?;
    }
    let backoff = match &env.backoffs {
        Some(script) => BackoffSource::scripted(script.clone()),
        None => BackoffSource::random(
            env.seed,
            &format!("pattern:{}", plan.instance.0),
            &plan.members,
        ),
    };
    let budget = plan.phase_budget;
    let run = PhaseRun::new(plan, logic, env.conduct.clone(), backoff);
    let mut world = World::new(medium, env.record_trace);
    let result = run_phase(&mut world, run)?;
    if result.outcome.budget_exhausted {
        return Err(PatternError::PhaseBudgetExhausted {
            budget,
            outcome: Box::new(result.outcome),
        });
    }
    Ok(PatternReport {
        outcome: result.outcome,
        holdings: result.holdings,
        trace: world.take_trace(),
    })
}

fn vacuous(nodes: &[NodeId]) -> PatternReport {
    PatternReport {
        outcome: PatternOutcome::vacuous(nodes),
        holdings: nodes.iter().map(|n| (*n, Holding::default())).collect(),
        trace: Trace::new(false),
    }
}

/// Default payload of a node in the standalone patterns.
fn own_payload(node: NodeId) -> u64 {
    0x1000 + u64::from(node.0)
}

/// One sender delivers `payload` to every receiver.
pub fn one_to_n(
    sender: NodeId,
    payload: u64,
    receivers: &[NodeId],
    cfg: &PatternConfig,
    env: &PatternRun,
) -> Result<PatternReport, PatternError> {
    cfg.validate()?;
    if receivers.iter().all(|r| *r == sender) {
        return Ok(vacuous(&[sender]));
    }
    let plan = PhasePlan::one_to_n(
        env.instance,
        ChannelId::GLOBAL,
        sender,
        Some(payload),
        receivers,
        cfg,
    );
    execute(plan, PhaseLogic::fixed(BTreeMap::new()), env)
}

/// Every sender delivers its own payload to one receiver.
pub fn n_to_one(
    senders: &[NodeId],
    receiver: NodeId,
    cfg: &PatternConfig,
    env: &PatternRun,
) -> Result<PatternReport, PatternError> {
    cfg.validate()?;
    let plan = PhasePlan::n_to_one(env.instance, ChannelId::GLOBAL, senders, receiver, cfg);
    let votes = plan.voters.iter().map(|n| (*n, own_payload(*n))).collect();
    execute(plan, PhaseLogic::fixed(votes), env)
}

/// Every node delivers its own payload to every other node.
pub fn n_to_n(
    nodes: &[NodeId],
    cfg: &PatternConfig,
    env: &PatternRun,
) -> Result<PatternReport, PatternError> {
    cfg.validate()?;
    if sorted(nodes.iter().copied()).len() <= 1 {
        return Ok(vacuous(nodes));
    }
    let plan = PhasePlan::n_to_n(env.instance, ChannelId::GLOBAL, nodes, cfg);
    let votes = plan.voters.iter().map(|n| (*n, own_payload(*n))).collect();
    execute(plan, PhaseLogic::fixed(votes), env)
}

/// Runs a pattern under one of the four baseline mechanisms. `nodes[0]` is
/// the sender of a 1-to-N pattern and the receiver of an N-to-1 pattern.
pub fn baseline_pattern(
    kind: PatternKind,
    nodes: &[NodeId],
    cfg: &PatternConfig,
    env: &PatternRun,
) -> Result<PatternReport, PatternError> {
    if !cfg.mechanism.is_baseline() {
        return Err(PatternError::WrongMechanism(cfg.mechanism));
    }
    let Some((&first, rest)) = nodes.split_first() else {
        return Ok(vacuous(&[]));
    };
    match kind {
        PatternKind::OneToN => one_to_n(first, own_payload(first), rest, cfg, env),
        PatternKind::NToOne => n_to_one(rest, first, cfg, env),
        PatternKind::NToN => n_to_n(nodes, cfg, env),
    }
}

/// Leader broadcast followed by follower votes back to the leader, with one
/// shared catch phase. Followers vote for the payload once they hold it.
pub fn merged_leader_round(
    leader: NodeId,
    payload: u64,
    followers: &[NodeId],
    cfg: &PatternConfig,
    env: &PatternRun,
) -> Result<PatternReport, PatternError> {
    cfg.validate()?;
    let plan = PhasePlan::merged(
        env.instance,
        ChannelId::GLOBAL,
        leader,
        Some(payload),
        followers,
        cfg.ntx,
        cfg,
        Quorum::All,
    );
    execute(plan, PhaseLogic::echo(), env)
}
