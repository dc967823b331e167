//! Slot driver that sequences pattern phases into rounds and view changes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::{
    BurstParams, ChannelId, Frame, InstanceTag, ItemRole, LossSchedule, Medium, NodeId, TopologyMap,
};
use crate::crypto::Keyring;
use crate::mac::BackoffSource;
use crate::patterns::{
    Conduct, FrameCounts, Holding, LeadSpec, PatternConfig, PatternRun, PhaseLogic,
    PhasePlan, PhaseRun, Quorum,
};
use crate::sim::{SlotDriver, SlotReport, SlotTime, Trace, TraceKind, World};

use super::adversary::{AdversaryStrategy, Intent, PhaseRole};
use super::message::{
    qc_form, qc_verify, quorum_size, ConsensusMessage, Digest, MsgHeader, MsgKind,
    QuorumCertificate,
};
use super::replica::{CommitRecord, ReplicaState};
use super::safety::{check_safety, SafetyViolation};
use super::schedule::{round_schedule, LeadItem, Step, StepSinks};
use super::{max_faulty, ConsensusConfig, Protocol};

type Msg = ConsensusMessage;

/// Chooses the value a leader proposes for `(sequence, view)`.
pub type ValueSource = Arc<dyn Fn(u64, u64, NodeId) -> Digest + Send + Sync>;

/// One decided sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub sequence: u64,
    pub digest: Digest,
    pub view: u64,
    /// First slot of the first round that tried this sequence.
    pub started: SlotTime,
    /// Slot of the first honest commit.
    pub first_commit: SlotTime,
    /// Slot of the last honest commit.
    pub committed: SlotTime,
    /// Slots from `started` through `committed`, both included.
    pub latency: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub decisions: Vec<Decision>,
    /// Views installed through a view change.
    pub view_changes: u64,
    pub view_change_attempts: u64,
    /// Slots spent in each successful view change.
    pub view_change_slots: Vec<u64>,
    /// Phases that ended with some honest node unsatisfied.
    pub pattern_failures: u64,
    pub phases: u64,
    pub frames: FrameCounts,
    pub retransmissions: u64,
    pub slots: u64,
    pub commit_logs: BTreeMap<NodeId, Vec<CommitRecord>>,
    pub honest: BTreeSet<NodeId>,
    pub safety_violations: Vec<SafetyViolation>,
}

impl ConsensusReport {
    pub fn mean_latency(&self) -> Option<f64> {
        if self.decisions.is_empty() {
            return None;
        }
        let sum: u64 = self.decisions.iter().map(|d| d.latency).sum();
        Some(sum as f64 / self.decisions.len() as f64)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DriverOptions {
    /// Stop scheduling phases after this many decisions.
    pub target_decisions: Option<u64>,
    /// Base view timer in slots; derived from a lossless dry run when unset.
    pub view_timer: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Step(usize),
    ViewChange { target: u64 },
}

struct Active {
    run: PhaseRun<Msg>,
    phase: Phase,
}

/// Replica fields a vote depends on, frozen at phase start.
#[derive(Debug, Clone)]
struct Basis {
    proposal: Option<Msg>,
    certs: BTreeMap<u8, Arc<QuorumCertificate>>,
    lock: Option<Arc<QuorumCertificate>>,
}

pub struct ConsensusDriver {
    cfg: ConsensusConfig,
    channel: ChannelId,
    members: Vec<NodeId>,
    f: usize,
    keys: Arc<Keyring>,
    adversaries: BTreeMap<NodeId, AdversaryStrategy>,
    replicas: BTreeMap<NodeId, ReplicaState>,
    seed: u64,
    schedule: Vec<Step>,
    target: Option<u64>,
    timer_base: u64,
    /// Tendermint view-change wait under the baselines.
    vc_budget: u64,
    values: Option<ValueSource>,
    next: Phase,
    active: Option<Active>,
    view: u64,
    sequence: u64,
    carried_lock: Option<Arc<QuorumCertificate>>,
    round_start: SlotTime,
    seq_start: Option<SlotTime>,
    failures: u32,
    next_instance: u64,
    report: ConsensusReport,
}

impl ConsensusDriver {
    pub fn new(
        cfg: ConsensusConfig,
        channel: ChannelId,
        members: Vec<NodeId>,
        keys: Arc<Keyring>,
        adversaries: BTreeMap<NodeId, AdversaryStrategy>,
        seed: u64,
        opts: DriverOptions,
    ) -> Self {
        let mut members = members;
        members.sort();
        members.dedup();
        let f = max_faulty(members.len());
        let replicas = members.iter().map(|n| (*n, ReplicaState::new(*n))).collect();
        let honest = members
            .iter()
            .copied()
            .filter(|n| !adversaries.contains_key(n))
            .collect();
        let timer_base = opts.view_timer.unwrap_or_else(|| {
            lossless_round_slots(&cfg, &members, &keys).saturating_mul(cfg.timer_factor.max(1))
        });
        let vc_budget = tendermint_vc_budget(&cfg, &members);
        ConsensusDriver {
            schedule: round_schedule(cfg.protocol, cfg.mechanism),
            cfg,
            channel,
            members,
            f,
            keys,
            adversaries,
            replicas,
            seed,
            target: opts.target_decisions,
            timer_base: timer_base.max(1),
            vc_budget,
            values: None,
            next: Phase::Step(0),
            active: None,
            view: 0,
            sequence: 0,
            carried_lock: None,
            round_start: SlotTime::ZERO,
            seq_start: None,
            failures: 0,
            next_instance: 1,
            report: ConsensusReport {
                honest,
                ..ConsensusReport::default()
            },
        }
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.cfg
    }

    pub fn channel(&self) -> ChannelId {
        self.channel
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn leader(&self) -> NodeId {
        self.leader_of(self.view)
    }

    pub fn leader_of(&self, view: u64) -> NodeId {
        self.members[(view % self.members.len() as u64) as usize]
    }

    pub fn view_timer_base(&self) -> u64 {
        self.timer_base
    }

    pub fn replica(&self, node: NodeId) -> Option<&ReplicaState> {
        self.replicas.get(&node)
    }

    pub fn decisions(&self) -> u64 {
        self.report.decisions.len() as u64
    }

    /// Raises the decision target; the driver resumes on the next slot.
    pub fn set_target(&mut self, decisions: u64) {
        self.target = Some(decisions);
    }

    pub fn set_value_source(&mut self, values: ValueSource) {
        self.values = Some(values);
    }

    /// Replaces the strategy of `node` (e.g. a cluster leader turning rogue).
    pub fn set_adversary(&mut self, node: NodeId, strategy: Option<AdversaryStrategy>) {
        match strategy {
            Some(s) => {
                self.adversaries.insert(node, s);
                self.report.honest.remove(&node);
            }
            None => {
                self.adversaries.remove(&node);
                self.report.honest.insert(node);
            }
        }
    }

    /// Forces a view change at the next phase boundary.
    pub fn request_view_change(&mut self) {
        if self.active.is_none() {
            self.next = Phase::ViewChange {
                target: self.view + 1,
            };
        }
    }

    /// Nothing running and the decision target reached.
    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.target.is_some_and(|t| self.decisions() >= t)
    }

    pub fn report(&self) -> &ConsensusReport {
        &self.report
    }

    pub fn into_report(mut self) -> ConsensusReport {
        self.finalize_report();
        self.report
    }

    fn finalize_report(&mut self) {
        self.report.commit_logs = self
            .replicas
            .iter()
            .filter(|(n, _)| !self.adversaries.contains_key(*n))
            .map(|(n, r)| (*n, r.commits.clone()))
            .collect();
        self.report.safety_violations = check_safety(&self.report.commit_logs, &self.report.honest);
    }

    fn honest(&self, node: NodeId) -> bool {
        !self.adversaries.contains_key(&node)
    }

    fn instance(&mut self) -> InstanceTag {
        let tag = InstanceTag((u64::from(self.channel.0) << 48) | self.next_instance);
        self.next_instance += 1;
        tag
    }

    fn header(&self, kind: MsgKind, stage: u8, view: u64) -> MsgHeader {
        MsgHeader {
            protocol: self.cfg.protocol,
            kind,
            stage,
            view,
            sequence: self.sequence,
        }
    }

    fn phase_budget(&self) -> u64 {
        let n = self.members.len().max(2) as u64;
        self.cfg.phase_budget.unwrap_or(50 * n * n)
    }

    fn current_timer(&self) -> u64 {
        self.timer_base.saturating_mul(1u64 << self.failures.min(16))
    }
}

/// Mean slots of one honest round at α = 0. TDMA and ReduceCatch rounds are
/// deterministic; CSMA rounds are averaged over a few backoff seeds.
fn lossless_round_slots(cfg: &ConsensusConfig, members: &[NodeId], keys: &Arc<Keyring>) -> u64 {
    let samples: u64 = if cfg.mechanism.uses_tdma() || !cfg.mechanism.is_baseline() {
        1
    } else {
        5
    };
    let total: u64 = (0..samples)
        .map(|seed| dry_run(cfg, members, keys, seed))
        .sum();
    total.div_ceil(samples)
}

fn dry_run(cfg: &ConsensusConfig, members: &[NodeId], keys: &Arc<Keyring>, seed: u64) -> u64 {
    let opts = DriverOptions {
        target_decisions: Some(1),
        view_timer: Some(u64::MAX / 4),
    };
    let mut driver = ConsensusDriver::new(
        cfg.clone(),
        ChannelId::GLOBAL,
        members.to_vec(),
        keys.clone(),
        BTreeMap::new(),
        seed,
        opts,
    );
    let topology = TopologyMap::single_hop_nodes(members.iter().copied());
    let mut world = World::new(Medium::new(topology, LossSchedule::constant(0.0), seed), false);
    let cap = driver.phase_budget() * driver.schedule.len() as u64;
    while !driver.is_idle() && world.now().0 < cap {
        world.step(&mut driver).expect("lossless dry run");
    }
    driver.report.decisions.first().map_or(cap, |d| d.latency)
}

/// Baseline Tendermint leaders wait for all view-change messages at most this
/// long: a lossless N-to-1 exchange plus the configured cap.
fn tendermint_vc_budget(cfg: &ConsensusConfig, members: &[NodeId]) -> u64 {
    if !cfg.mechanism.is_baseline() || members.len() < 2 {
        return cfg.tendermint_cap;
    }
    let mut pcfg = PatternConfig::baseline(cfg.mechanism, cfg.baseline_ntx);
    pcfg.csma = cfg.csma;
    pcfg.phase_budget = cfg.phase_budget;
    let nominal = crate::patterns::n_to_one(&members[1..], members[0], &pcfg, &PatternRun::default())
        .map(|r| r.outcome.slots_used)
        .unwrap_or(0);
    nominal + cfg.tendermint_cap
}

/// What an accept closure expects in one phase.
#[derive(Clone, Copy)]
struct Expect {
    protocol: Protocol,
    view: u64,
    sequence: u64,
    leader: NodeId,
    lead: Option<LeadItem>,
    vote: Option<(MsgKind, u8)>,
    lock_stage: u8,
    f: usize,
}

impl Expect {
    fn justify_ok(&self, m: &Msg, keys: &Keyring) -> bool {
        m.justify.as_ref().is_none_or(|j| {
            j.sequence == self.sequence
                && j.stage == self.lock_stage
                && j.digest == m.digest
                && j.view < self.view
                && qc_verify(j, keys, self.f)
        })
    }

    fn accepts(&self, role: ItemRole, m: &Msg, keys: &Keyring) -> bool {
        if m.protocol != self.protocol
            || m.view != self.view
            || m.sequence != self.sequence
            || !m.verify(keys)
        {
            return false;
        }
        match role {
            ItemRole::Lead => {
                m.sender == self.leader
                    && match self.lead {
                        Some(LeadItem::Proposal) => {
                            m.kind == MsgKind::Proposal && self.justify_ok(m, keys)
                        }
                        Some(LeadItem::Cert(k)) => {
                            m.kind == MsgKind::VoteSet
                                && m.stage == k
                                && m.justify.as_ref().is_some_and(|j| {
                                    j.stage == k
                                        && j.view == self.view
                                        && j.sequence == self.sequence
                                        && j.digest == m.digest
                                        && qc_verify(j, keys, self.f)
                                })
                        }
                        None => false,
                    }
            }
            ItemRole::Vote => match self.vote {
                Some((MsgKind::ViewChange, _)) => {
                    m.kind == MsgKind::ViewChange
                        && m.justify.as_ref().is_none_or(|j| {
                            j.sequence == self.sequence
                                && j.stage == self.lock_stage
                                && j.digest == m.digest
                                && qc_verify(j, keys, self.f)
                        })
                }
                Some((kind, stage)) => m.kind == kind && m.stage == stage && m.justify.is_none(),
                None => false,
            },
        }
    }
}

fn other_half(members: &[NodeId], node: NodeId) -> Vec<NodeId> {
    let others: Vec<NodeId> = members.iter().copied().filter(|m| *m != node).collect();
    let keep = others.len().div_ceil(2);
    others[keep..].to_vec()
}

impl ConsensusDriver {
    fn bases(&self) -> Arc<BTreeMap<NodeId, Basis>> {
        Arc::new(
            self.replicas
                .iter()
                .map(|(n, r)| {
                    let basis = Basis {
                        proposal: r.proposal.clone(),
                        certs: r.certs.clone(),
                        lock: r.lock.clone(),
                    };
                    (*n, basis)
                })
                .collect(),
        )
    }

    /// Highest lock the leader knows of: its own or one carried in by a view change.
    fn best_lock(&self, leader: NodeId) -> Option<Arc<QuorumCertificate>> {
        let own = self.replicas.get(&leader).and_then(|r| r.lock.clone());
        [own, self.carried_lock.clone()]
            .into_iter()
            .flatten()
            .max_by_key(|qc| qc.view)
    }

    fn lead_message(&self, item: LeadItem, leader: NodeId) -> Option<Msg> {
        let key = self.keys.signing_key(leader)?;
        match item {
            LeadItem::Proposal => {
                let (digest, justify) = match self.best_lock(leader) {
                    Some(lock) => (lock.digest, Some(lock)),
                    None => {
                        let digest = match &self.values {
                            Some(source) => source(self.sequence, self.view, leader),
                            None => Digest::fresh(self.sequence, self.view, leader),
                        };
                        (digest, None)
                    }
                };
                let header = self.header(MsgKind::Proposal, 0, self.view);
                Some(Msg::signed(key, header, digest, justify))
            }
            LeadItem::Cert(k) => {
                let qc = self.replicas.get(&leader)?.certs.get(&k)?.clone();
                let header = self.header(MsgKind::VoteSet, k, self.view);
                Some(Msg::signed(key, header, qc.digest, Some(qc)))
            }
        }
    }

    fn conduct_for(
        &self,
        role_of: impl Fn(NodeId) -> PhaseRole,
        lead: Option<&Msg>,
        vote: Option<(MsgKind, u8, u64)>,
    ) -> BTreeMap<NodeId, Conduct<Msg>> {
        let mut out = BTreeMap::new();
        for (&node, strategy) in &self.adversaries {
            let conduct = match strategy.intent(role_of(node)) {
                Intent::Honest => Conduct::Honest,
                Intent::Silent => Conduct::Silent,
                Intent::Withhold => Conduct::WithholdVotes,
                Intent::Spam { inside_window } => Conduct::NackSpam { inside_window },
                Intent::SplitLead => match (lead, self.keys.signing_key(node)) {
                    (Some(m), Some(key)) => {
                        let alt = Msg::signed(
                            key,
                            m.header(),
                            Digest::conflicting(self.sequence, m.view, node),
                            None,
                        );
                        let targets = other_half(&self.members, node);
                        Conduct::Equivocate(targets.into_iter().map(|t| (t, alt.clone())).collect())
                    }
                    _ => Conduct::Honest,
                },
                Intent::SplitVote => match (vote, self.keys.signing_key(node)) {
                    (Some((kind, stage, view)), Some(key)) => {
                        let alt = Msg::signed(
                            key,
                            self.header(kind, stage, view),
                            Digest::conflicting(self.sequence, view, node),
                            None,
                        );
                        let targets = other_half(&self.members, node);
                        Conduct::Equivocate(targets.into_iter().map(|t| (t, alt.clone())).collect())
                    }
                    _ => Conduct::Honest,
                },
            };
            out.insert(node, conduct);
        }
        out
    }

    fn base_plan(&mut self, delta: u32) -> PhasePlan<Msg> {
        PhasePlan {
            instance: self.instance(),
            channel: self.channel,
            members: self.members.clone(),
            lead: None,
            voters: Vec::new(),
            vote_ntx: self.cfg.vote_ntx(),
            sinks: Vec::new(),
            quorum: Quorum::Count(quorum_size(self.f)),
            delta,
            mechanism: self.cfg.mechanism,
            csma: self.cfg.csma,
            phase_budget: self.phase_budget(),
            early_exit: false,
            catch_extension: 0,
            first_nack_owned: false,
        }
    }

    fn backoff(&self, instance: InstanceTag) -> BackoffSource {
        BackoffSource::random(
            self.seed,
            &format!("consensus:{}:{}", self.channel.0, instance.0),
            &self.members,
        )
    }
}

impl ConsensusDriver {
    fn step_run(&mut self, step: Step, now: SlotTime) -> PhaseRun<Msg> {
        let leader = self.leader();
        let protocol = self.cfg.protocol;
        let deltas = self.cfg.deltas;
        let delta = match (step.lead, step.vote, step.sinks) {
            (_, Some(_), StepSinks::All) => deltas.n_to_n,
            (_, Some(_), StepSinks::Leader) => deltas.n_to_one,
            _ => deltas.one_to_n,
        };
        let mut plan = self.base_plan(delta);
        let lead_msg = step.lead.and_then(|item| self.lead_message(item, leader));
        if step.lead.is_some() {
            plan.lead = Some(LeadSpec {
                node: leader,
                payload: lead_msg.clone(),
                ntx: self.cfg.lead_ntx(),
            });
        }
        if step.vote.is_some() {
            match step.sinks {
                StepSinks::All => {
                    plan.voters = self.members.clone();
                    plan.sinks = self.members.clone();
                }
                StepSinks::Leader => {
                    plan.voters = self.members.iter().copied().filter(|m| *m != leader).collect();
                    plan.sinks = vec![leader];
                    plan.first_nack_owned = true;
                }
            }
        }
        let expect = Expect {
            protocol,
            view: self.view,
            sequence: self.sequence,
            leader,
            lead: step.lead,
            vote: step.vote.map(|k| (protocol.vote_kind(k), k)),
            lock_stage: protocol.lock_stage(),
            f: self.f,
        };
        let keys = self.keys.clone();
        let accept = {
            let keys = keys.clone();
            Arc::new(move |_: NodeId, item: &crate::channel::DataItem<Msg>| {
                item.payload.sender == item.origin && expect.accepts(item.role, &item.payload, &keys)
            })
        };
        let bases = self.bases();
        let header = self.header(MsgKind::Vote, 0, self.view);
        let vote = Arc::new(move |node: NodeId, lead: Option<&Msg>| -> Option<Msg> {
            let k = step.vote?;
            let basis = bases.get(&node)?;
            let digest = if k == 1 {
                let proposal = match lead {
                    Some(m) if m.kind == MsgKind::Proposal => m,
                    _ => basis.proposal.as_ref()?,
                };
                let locked_elsewhere = basis.lock.as_ref().is_some_and(|l| {
                    l.digest != proposal.digest
                        && !proposal
                            .justify
                            .as_ref()
                            .is_some_and(|j| j.view > l.view && j.digest == proposal.digest)
                });
                if locked_elsewhere {
                    return None;
                }
                proposal.digest
            } else {
                match lead {
                    Some(m) if m.kind == MsgKind::VoteSet => m.justify.as_ref()?.digest,
                    _ => basis.certs.get(&(k - 1))?.digest,
                }
            };
            let header = MsgHeader {
                kind: protocol.vote_kind(k),
                stage: k,
                ..header
            };
            Some(Msg::signed(keys.signing_key(node)?, header, digest, None))
        });
        let vote_info = step.vote.map(|k| (protocol.vote_kind(k), k, self.view));
        let conduct = self.conduct_for(
            |n| PhaseRole {
                leads: n == leader && step.lead.is_some(),
                proposes: n == leader && step.lead == Some(LeadItem::Proposal),
                votes: step.vote.is_some(),
                now,
            },
            lead_msg.as_ref(),
            vote_info,
        );
        let backoff = self.backoff(plan.instance);
        PhaseRun::new(plan, PhaseLogic { accept, vote }, conduct, backoff)
    }

    fn view_change_run(&mut self, target: u64, now: SlotTime) -> PhaseRun<Msg> {
        let leader = self.leader_of(target);
        let protocol = self.cfg.protocol;
        let mut plan = match protocol {
            Protocol::Pbft => {
                let mut plan = self.base_plan(self.cfg.deltas.n_to_n);
                plan.voters = self.members.clone();
                plan.sinks = self.members.clone();
                plan
            }
            _ => {
                let mut plan = self.base_plan(self.cfg.deltas.n_to_one);
                plan.voters = self.members.iter().copied().filter(|m| *m != leader).collect();
                plan.sinks = vec![leader];
                plan.first_nack_owned = true;
                plan.early_exit = true;
                plan
            }
        };
        if matches!(protocol, Protocol::TendermintV1 | Protocol::TendermintV2) {
            // wait for everyone, but only so long
            plan.quorum = Quorum::All;
            if self.cfg.mechanism.is_baseline() {
                plan.phase_budget = plan.phase_budget.min(self.vc_budget);
            } else {
                plan.catch_extension = self.cfg.tendermint_cap.min(u64::from(u32::MAX)) as u32;
            }
        }
        let expect = Expect {
            protocol,
            view: target,
            sequence: self.sequence,
            leader,
            lead: None,
            vote: Some((MsgKind::ViewChange, 0)),
            lock_stage: protocol.lock_stage(),
            f: self.f,
        };
        let keys = self.keys.clone();
        let accept = {
            let keys = keys.clone();
            Arc::new(move |_: NodeId, item: &crate::channel::DataItem<Msg>| {
                item.payload.sender == item.origin && expect.accepts(item.role, &item.payload, &keys)
            })
        };
        let bases = self.bases();
        let header = self.header(MsgKind::ViewChange, 0, target);
        let vote = Arc::new(move |node: NodeId, _: Option<&Msg>| -> Option<Msg> {
            // a lock from an already decided sequence is stale
            let lock = bases
                .get(&node)?
                .lock
                .clone()
                .filter(|l| l.sequence == header.sequence);
            let digest = lock.as_ref().map_or(Digest::default(), |l| l.digest);
            Some(Msg::signed(keys.signing_key(node)?, header, digest, lock))
        });
        let conduct = self.conduct_for(
            |n| PhaseRole {
                leads: n == leader,
                proposes: false,
                votes: true,
                now,
            },
            None,
            None,
        );
        let backoff = self.backoff(plan.instance);
        PhaseRun::new(plan, PhaseLogic { accept, vote }, conduct, backoff)
    }
}

impl ConsensusDriver {
    fn begin(&mut self, now: SlotTime) {
        let run = match self.next {
            Phase::Step(i) => {
                if i == 0 {
                    self.round_start = now;
                    self.seq_start.get_or_insert(now);
                    let (view, seq) = (self.view, self.sequence);
                    for r in self.replicas.values_mut() {
                        r.enter(view, seq);
                    }
                }
                let step = self.schedule[i];
                self.step_run(step, now)
            }
            Phase::ViewChange { target } => {
                self.report.view_change_attempts += 1;
                self.view_change_run(target, now)
            }
        };
        self.active = Some(Active {
            run,
            phase: self.next,
        });
    }

    fn account(&mut self, outcome: &crate::patterns::PatternOutcome) {
        self.report.phases += 1;
        self.report.frames.add(&outcome.frames);
        self.report.retransmissions += outcome.retransmissions;
        if !outcome.failed().is_empty() {
            self.report.pattern_failures += 1;
        }
    }

    fn apply_step(&mut self, step: Step, holdings: &BTreeMap<NodeId, Holding<Msg>>) {
        let leader = self.leader();
        let lock_stage = self.cfg.protocol.lock_stage();
        let f = self.f;
        for (node, hold) in holdings {
            let Some(replica) = self.replicas.get_mut(node) else {
                continue;
            };
            match (step.lead, &hold.lead) {
                (Some(LeadItem::Proposal), Some(m)) => replica.proposal = Some(m.clone()),
                (Some(LeadItem::Cert(_)), Some(m)) => {
                    if let Some(qc) = &m.justify {
                        replica.record_cert(qc.clone(), lock_stage);
                    }
                }
                _ => {}
            }
            let Some(k) = step.vote else {
                continue;
            };
            if let Some(own) = hold.votes.get(node) {
                replica.vote_log.push((own.view, k, own.digest));
            }
            let collects = step.sinks == StepSinks::All || *node == leader;
            if collects {
                let votes: Vec<Msg> = hold.votes.values().cloned().collect();
                if let Ok(qc) = qc_form(&votes, f) {
                    replica.record_cert(Arc::new(qc), lock_stage);
                }
            }
        }
    }

    fn conclude(&mut self, active: Active, slot: SlotTime, trace: &mut Trace) {
        let result = active.run.finish();
        self.account(&result.outcome);
        match active.phase {
            Phase::Step(i) => {
                self.apply_step(self.schedule[i], &result.holdings);
                if i + 1 < self.schedule.len() {
                    self.next = Phase::Step(i + 1);
                } else {
                    self.end_round(slot, trace);
                }
            }
            Phase::ViewChange { target } => {
                self.end_view_change(target, &result, slot, trace)
            }
        }
    }

    fn end_round(&mut self, slot: SlotTime, trace: &mut Trace) {
        let last = self.cfg.protocol.stages();
        let (view, seq) = (self.view, self.sequence);
        let mut newly = Vec::new();
        for (node, r) in self.replicas.iter_mut() {
            let Some(qc) = r.certs.get(&last) else {
                continue;
            };
            let digest = qc.digest;
            if r.committed(seq).is_none() {
                r.commits.push(CommitRecord {
                    sequence: seq,
                    digest,
                    view,
                    slot,
                });
                newly.push((*node, digest));
            }
        }
        for (node, digest) in &newly {
            trace.record(slot, TraceKind::Commit, Some(self.channel), Some(*node), || {
                format!("s={seq} v={view} d={}", digest.short())
            });
        }
        let honest: Vec<NodeId> = self.members.iter().copied().filter(|n| self.honest(*n)).collect();
        let all_done = honest.iter().all(|n| self.replicas[n].committed(seq).is_some());
        if !all_done {
            self.fail_round(slot, trace, "incomplete");
            return;
        }
        let records: Vec<&CommitRecord> = honest
            .iter()
            .filter_map(|n| self.replicas[n].commits.iter().find(|c| c.sequence == seq))
            .collect();
        let first_commit = records.iter().map(|c| c.slot).min().unwrap_or(slot);
        let committed = records.iter().map(|c| c.slot).max().unwrap_or(slot);
        let digest = records.first().map_or(Digest::default(), |c| c.digest);
        let started = self.seq_start.take().unwrap_or(self.round_start);
        self.report.decisions.push(Decision {
            sequence: seq,
            digest,
            view,
            started,
            first_commit,
            committed,
            latency: committed.since(started) + 1,
        });
        self.sequence += 1;
        self.failures = 0;
        self.carried_lock = None;
        if self.cfg.protocol.rotates_every_round() {
            self.view += 1;
        }
        self.next = Phase::Step(0);
    }

    fn fail_round(&mut self, slot: SlotTime, trace: &mut Trace, reason: &str) {
        self.failures = self.failures.saturating_add(1);
        let target = self.view + 1;
        trace.record(slot, TraceKind::ViewChange, Some(self.channel), None, || {
            format!("start v={target} s={} reason={reason}", self.sequence)
        });
        self.next = Phase::ViewChange { target };
    }

    fn end_view_change(
        &mut self,
        target: u64,
        result: &crate::patterns::PhaseResult<Msg>,
        slot: SlotTime,
        trace: &mut Trace,
    ) {
        let leader = self.leader_of(target);
        let held: Vec<&Msg> = result
            .holdings
            .get(&leader)
            .map(|h| h.votes.values().collect())
            .unwrap_or_default();
        let enough = match self.cfg.protocol {
            Protocol::TendermintV1 | Protocol::TendermintV2 => true,
            _ => held.len() >= quorum_size(self.f),
        };
        if !enough {
            trace.record(slot, TraceKind::ViewChange, Some(self.channel), Some(leader), || {
                format!("failed v={target} held={}", held.len())
            });
            self.failures = self.failures.saturating_add(1);
            self.next = Phase::ViewChange { target: target + 1 };
            return;
        }
        self.carried_lock = held
            .iter()
            .filter_map(|m| m.justify.clone())
            .max_by_key(|qc| qc.view);
        self.view = target;
        self.report.view_changes += 1;
        self.report.view_change_slots.push(result.outcome.slots_used);
        trace.record(slot, TraceKind::ViewChange, Some(self.channel), Some(leader), || {
            format!(
                "installed v={target} held={} slots={}",
                held.len(),
                result.outcome.slots_used
            )
        });
        self.next = Phase::Step(0);
    }

    fn abort(&mut self, slot: SlotTime, trace: &mut Trace) {
        if let Some(active) = self.active.take() {
            let mut run = active.run;
            run.finish_now();
            let result = run.finish();
            self.account(&result.outcome);
        }
        self.fail_round(slot, trace, "timer");
    }
}

impl SlotDriver<Msg> for ConsensusDriver {
    fn transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<Msg>>) {
        if self.active.is_none() {
            if self.target.is_some_and(|t| self.decisions() >= t) {
                return;
            }
            self.begin(now);
        }
        if let Some(active) = &mut self.active {
            active.run.transmit(now, out);
        }
    }

    fn receive(&mut self, report: &SlotReport<Msg>, trace: &mut Trace) {
        let Some(active) = &mut self.active else {
            return;
        };
        active.run.receive(report, trace);
        self.report.slots = report.slot.0 + 1;
        if active.run.is_done() {
            let active = self.active.take().expect("active phase");
            self.conclude(active, report.slot, trace);
        } else if matches!(active.phase, Phase::Step(_))
            && report.slot.since(self.round_start) + 1 >= self.current_timer()
        {
            self.abort(report.slot, trace);
        }
    }
}

/// A standalone single-hop consensus run.
#[derive(Debug, Clone)]
pub struct ConsensusRun {
    pub config: ConsensusConfig,
    pub nodes: u32,
    pub loss: LossSchedule,
    /// Optional good/bad loss chain on top of `loss`.
    pub burst: Option<BurstParams>,
    pub seed: u64,
    pub adversaries: BTreeMap<NodeId, AdversaryStrategy>,
    pub decisions: u64,
    pub max_slots: u64,
    pub record_trace: bool,
    pub view_timer: Option<u64>,
}

impl ConsensusRun {
    pub fn new(config: ConsensusConfig, nodes: u32) -> Self {
        ConsensusRun {
            config,
            nodes,
            loss: LossSchedule::constant(0.0),
            burst: None,
            seed: 0,
            adversaries: BTreeMap::new(),
            decisions: 1,
            max_slots: 1_000_000,
            record_trace: false,
            view_timer: None,
        }
    }

    pub fn lossy(mut self, alpha: f64, seed: u64) -> Self {
        self.loss = LossSchedule::constant(alpha);
        self.seed = seed;
        self
    }

    pub fn byzantine(mut self, node: u32, strategy: AdversaryStrategy) -> Self {
        self.adversaries.insert(NodeId(node), strategy);
        self
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub report: ConsensusReport,
    pub trace: Trace,
    /// Slots simulated, whether or not the target was met.
    pub slots: u64,
    pub reached_target: bool,
}

pub fn run_consensus(run: &ConsensusRun) -> ConsensusOutcome {
    let members: Vec<NodeId> = (0..run.nodes).map(NodeId).collect();
    let keys = Arc::new(Keyring::deal(run.config.signer, members.iter().copied(), run.seed));
    let opts = DriverOptions {
        target_decisions: Some(run.decisions),
        view_timer: run.view_timer,
    };
    let mut driver = ConsensusDriver::new(
        run.config.clone(),
        ChannelId::GLOBAL,
        members,
        keys,
        run.adversaries.clone(),
        run.seed,
        opts,
    );
    let topology = TopologyMap::single_hop(run.nodes);
    let mut medium = Medium::new(topology, run.loss.clone(), run.seed);
    if let Some(burst) = run.burst {
        medium
            .set_burst_mode(ChannelId::GLOBAL, burst)
            .expect("global channel exists");
    }
    let mut world = World::new(medium, run.record_trace);
    while !driver.is_idle() && world.now().0 < run.max_slots {
        world.step(&mut driver).expect("consensus frames stay on configured channels");
    }
    let reached_target = driver.is_idle();
    let slots = world.now().0;
    let mut report = driver.into_report();
    report.slots = slots;
    ConsensusOutcome {
        report,
        trace: world.take_trace(),
        slots,
        reached_target,
    }
}

