use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::channel::{Body, DataItem, Frame, InstanceTag, ItemRole, NodeId, Payload};
use crate::mac::{BackoffSource, CatchWindow, CsmaState, NackBitmap};
use crate::sim::{SlotDriver, SlotReport, SlotTime, Trace, TraceKind};

use super::{
    Conduct, FrameCounts, Holding, Mechanism, NodeStatus, PatternOutcome, PhaseLogic, PhasePlan,
    PhaseResult, Quorum,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Action {
    Data(Option<NodeId>),
    Ack(NodeId),
    Nack(NodeId),
}

pub(super) struct NodeState<P> {
    pub conduct: Conduct<P>,
    pub hold: Holding<P>,
    pub own_vote: Option<P>,
    pub vote_sent: bool,
    pub data_sent: u32,
    pub satisfied_at: Option<SlotTime>,
    pub csma: Option<CsmaState>,
    /// ReduceCatch: an honored NACK or a late vote is waiting to go out.
    pub want_data: bool,
    pub acked_by: BTreeSet<NodeId>,
    pub acks_owed: VecDeque<NodeId>,
    pub requests: VecDeque<NodeId>,
    pub actions: VecDeque<Action>,
    pub retry_at: Option<SlotTime>,
    pub next_nack_at: Option<SlotTime>,
    pub nack_cursor: usize,
}

/// One pattern instance being executed slot by slot.
pub struct PhaseRun<P: Payload> {
    pub(super) plan: PhasePlan<P>,
    pub(super) logic: PhaseLogic<P>,
    pub(super) nodes: BTreeMap<NodeId, NodeState<P>>,
    pub(super) backoff: BackoffSource,
    pub(super) voters: BTreeSet<NodeId>,
    pub(super) sinks: BTreeSet<NodeId>,
    pub(super) start: Option<SlotTime>,
    pub(super) last_busy: bool,
    pub(super) frames: FrameCounts,
    pub(super) retransmissions: u64,
    extension_used: u32,
    active_after_reduce: Option<usize>,
    completed_at: Option<SlotTime>,
    progress: Vec<u32>,
    done: bool,
    pub(super) budget_exhausted: bool,
    slots: u64,
}

impl<P: Payload> PhaseRun<P> {
    pub fn new(
        plan: PhasePlan<P>,
        logic: PhaseLogic<P>,
        mut conduct: BTreeMap<NodeId, Conduct<P>>,
        backoff: BackoffSource,
    ) -> Self {
        let voters: BTreeSet<NodeId> = plan.voters.iter().copied().collect();
        let sinks: BTreeSet<NodeId> = plan.sinks.iter().copied().collect();
        let lead = plan.lead.clone();
        let mut nodes = BTreeMap::new();
        for &n in &plan.members {
            let mut hold = Holding::default();
            let mut own_vote = None;
            let is_lead = lead.as_ref().is_some_and(|l| l.node == n);
            if is_lead {
                hold.lead = lead.as_ref().and_then(|l| l.payload.clone());
            }
            if voters.contains(&n) || sinks.contains(&n) {
                // a follower's vote waits for the lead item
                if lead.is_none() || is_lead {
                    own_vote = (logic.vote)(n, hold.lead.as_ref());
                }
            }
            if let Some(v) = &own_vote {
                hold.votes.insert(n, v.clone());
            }
            nodes.insert(
                n,
                NodeState {
                    conduct: conduct.remove(&n).unwrap_or_default(),
                    hold,
                    own_vote,
                    vote_sent: false,
                    data_sent: 0,
                    satisfied_at: None,
                    csma: None,
                    want_data: false,
                    acked_by: BTreeSet::new(),
                    acks_owed: VecDeque::new(),
                    requests: VecDeque::new(),
                    actions: VecDeque::new(),
                    retry_at: None,
                    next_nack_at: None,
                    nack_cursor: 0,
                },
            );
        }
        PhaseRun {
            plan,
            logic,
            nodes,
            backoff,
            voters,
            sinks,
            start: None,
            last_busy: false,
            frames: FrameCounts::default(),
            retransmissions: 0,
            extension_used: 0,
            active_after_reduce: None,
            completed_at: None,
            progress: Vec::new(),
            done: false,
            budget_exhausted: false,
            slots: 0,
        }
    }

    pub fn plan(&self) -> &PhasePlan<P> {
        &self.plan
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn holding(&self, node: NodeId) -> Option<&Holding<P>> {
        self.nodes.get(&node).map(|s| &s.hold)
    }

    /// Same as `missing(node).is_empty()`, without allocating.
    pub fn is_satisfied(&self, node: NodeId) -> bool {
        let Some(state) = self.nodes.get(&node) else {
            return true;
        };
        if let Some(lead) = &self.plan.lead {
            if lead.node != node && state.hold.lead.is_none() {
                return false;
            }
        }
        !(self.sinks.contains(&node)
            && self
                .plan
                .voters
                .iter()
                .any(|v| *v != node && !state.hold.votes.contains_key(v))
            && !self.quorum_met(node))
    }

    pub(super) fn honest(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|s| s.conduct.is_honest())
    }

    /// Origins whose items `node` still needs.
    pub(super) fn missing(&self, node: NodeId) -> Vec<NodeId> {
        let Some(state) = self.nodes.get(&node) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if let Some(lead) = &self.plan.lead {
            if lead.node != node && state.hold.lead.is_none() {
                out.push(lead.node);
            }
        }
        if self.sinks.contains(&node) && !self.quorum_met(node) {
            out.extend(
                self.plan
                    .voters
                    .iter()
                    .filter(|v| **v != node && !state.hold.votes.contains_key(v)),
            );
        }
        out.sort();
        out.dedup();
        out
    }

    fn quorum_met(&self, node: NodeId) -> bool {
        let votes = &self.nodes[&node].hold.votes;
        match self.plan.quorum {
            Quorum::All => self
                .plan
                .voters
                .iter()
                .all(|v| *v == node || votes.contains_key(v)),
            Quorum::Count(q) => {
                let mut tally: BTreeMap<u64, usize> = BTreeMap::new();
                for p in votes.values() {
                    *tally.entry(p.quorum_key()).or_default() += 1;
                }
                tally.values().any(|c| *c >= q)
            }
        }
    }

    /// Nodes that need `node`'s items.
    pub(super) fn intended(&self, node: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        if self.plan.lead_node() == Some(node) {
            out.extend(self.plan.members.iter().filter(|m| **m != node));
        }
        if self.voters.contains(&node) {
            out.extend(self.sinks.iter().filter(|m| **m != node));
        }
        out
    }

    fn lacks_item_of(&self, holder: NodeId, origin: NodeId) -> bool {
        let hold = &self.nodes[&holder].hold;
        let lead_missing = self.plan.lead_node() == Some(origin) && hold.lead.is_none();
        let vote_missing = self.voters.contains(&origin)
            && self.sinks.contains(&holder)
            && !hold.votes.contains_key(&origin);
        lead_missing || vote_missing
    }

    pub(super) fn all_honest_satisfied(&self) -> bool {
        self.nodes
            .iter()
            .filter(|(_, s)| s.conduct.is_honest())
            .all(|(n, _)| self.is_satisfied(*n))
    }

    pub(super) fn fully_acked(&self, node: NodeId) -> bool {
        let acked = &self.nodes[&node].acked_by;
        self.intended(node).iter().all(|r| acked.contains(r))
    }

    pub(super) fn has_items(&self, node: NodeId) -> bool {
        !self.own_items(node).is_empty()
    }

    fn complete(&self) -> bool {
        if !self.all_honest_satisfied() {
            return false;
        }
        if self.plan.mechanism.uses_ack() && self.plan.quorum == Quorum::All {
            return self
                .nodes
                .iter()
                .filter(|(n, s)| s.conduct.is_honest() && self.has_items(**n))
                .all(|(n, _)| self.fully_acked(*n));
        }
        true
    }

    fn count_active(&self) -> usize {
        let unsatisfied: BTreeSet<NodeId> = self
            .nodes
            .keys()
            .copied()
            .filter(|n| !self.is_satisfied(*n))
            .collect();
        self.nodes
            .iter()
            .filter(|(n, s)| {
                if !s.conduct.is_honest() {
                    return false;
                }
                let n = **n;
                unsatisfied.contains(&n)
                    || self
                        .intended(n)
                        .iter()
                        .any(|m| unsatisfied.contains(m) && self.lacks_item_of(*m, n))
            })
            .count()
    }

    pub(super) fn own_items(&self, node: NodeId) -> Vec<DataItem<P>> {
        let state = &self.nodes[&node];
        if matches!(state.conduct, Conduct::Silent) {
            return Vec::new();
        }
        let mut items = Vec::new();
        if self.plan.lead_node() == Some(node) {
            if let Some(p) = &state.hold.lead {
                items.push(DataItem {
                    origin: node,
                    role: ItemRole::Lead,
                    payload: p.clone(),
                });
            }
        }
        if self.voters.contains(&node) && !matches!(state.conduct, Conduct::WithholdVotes) {
            if let Some(v) = &state.own_vote {
                items.push(DataItem {
                    origin: node,
                    role: ItemRole::Vote,
                    payload: v.clone(),
                });
            }
        }
        items
    }

    pub(super) fn data_frame(&mut self, node: NodeId, now: SlotTime) -> Option<Frame<P>> {
        let items = self.own_items(node);
        if items.is_empty() {
            return None;
        }
        let mut frame = Frame::new(
            node,
            self.plan.channel,
            now,
            self.plan.instance,
            Body::Data(items.clone()),
        );
        if let Conduct::Equivocate(per_receiver) = &self.nodes[&node].conduct {
            for (receiver, payload) in per_receiver {
                let forged = items
                    .iter()
                    .map(|i| DataItem {
                        payload: payload.clone(),
                        ..i.clone()
                    })
                    .collect();
                frame.targeted.insert(*receiver, Body::Data(forged));
            }
        }
        let state = self.nodes.get_mut(&node).expect("member");
        state.data_sent += 1;
        if items.iter().any(|i| i.role == ItemRole::Vote) {
            state.vote_sent = true;
        }
        self.frames.data += 1;
        Some(frame)
    }

    pub(super) fn nack_frame(
        &mut self,
        node: NodeId,
        now: SlotTime,
        missing: impl IntoIterator<Item = NodeId>,
        instance: InstanceTag,
    ) -> Frame<P> {
        self.frames.nack += 1;
        Frame::new(
            node,
            self.plan.channel,
            now,
            instance,
            Body::Nack(NackBitmap {
                instance,
                missing: missing.into_iter().collect(),
            }),
        )
    }

    pub(super) fn ack_frame(&mut self, node: NodeId, now: SlotTime, target: NodeId) -> Frame<P> {
        self.frames.ack += 1;
        Frame::new(
            node,
            self.plan.channel,
            now,
            self.plan.instance,
            Body::Ack { target },
        )
    }

    /// Runs one CSMA step for `node`, creating the state on demand. Expired
    /// timers re-arm on the next slot.
    pub(super) fn contend(&mut self, node: NodeId) -> bool {
        let busy = self.last_busy;
        let params = self.plan.csma;
        let Self { nodes, backoff, .. } = self;
        let state = nodes.get_mut(&node).expect("member");
        let csma = state
            .csma
            .get_or_insert_with(|| CsmaState::new(params, |w| backoff.draw(node, w)));
        match csma.step(busy, |w| backoff.draw(node, w)) {
            Ok(fire) => fire,
            Err(_) => {
                state.csma = None;
                false
            }
        }
    }

    fn stale_instance(&self) -> InstanceTag {
        InstanceTag(self.plan.instance.0 ^ (1 << 63))
    }

    fn catch_window(&self) -> Option<CatchWindow> {
        let start = self.start?;
        Some(CatchWindow {
            start: start.plus(self.plan.reduce_len()),
            delta: u64::from(self.plan.delta) + u64::from(self.extension_used),
        })
    }

    fn reduce_slot(&mut self, node: NodeId, now: SlotTime, out: &mut Vec<Frame<P>>) {
        match self.nodes[&node].conduct {
            Conduct::Silent => {}
            Conduct::NackSpam {
                inside_window: false,
            } => {
                let everyone: Vec<NodeId> =
                    self.plan.members.iter().copied().filter(|m| *m != node).collect();
                let instance = self.plan.instance;
                out.push(self.nack_frame(node, now, everyone, instance));
            }
            _ => out.extend(self.data_frame(node, now)),
        }
    }

    fn rc_transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<P>>) {
        let start = self.start.expect("started");
        let offset = now.since(start);
        let lead_ntx = self.plan.lead.as_ref().map_or(0, |l| u64::from(l.ntx));
        let reduce = self.plan.reduce_len();
        if offset < lead_ntx {
            let lead = self.plan.lead_node().expect("lead slots imply a lead");
            self.reduce_slot(lead, now, out);
            return;
        }
        if offset < reduce {
            let idx = ((offset - lead_ntx) % self.plan.voters.len() as u64) as usize;
            let owner = self.plan.voters[idx];
            self.reduce_slot(owner, now, out);
            return;
        }
        let catch_offset = offset - reduce;
        if catch_offset == 0 {
            self.active_after_reduce = Some(self.count_active());
        }
        let members: Vec<NodeId> = self.nodes.keys().copied().collect();
        let sole_sink = (self.plan.sinks.len() == 1).then(|| self.plan.sinks[0]);
        for n in members {
            let conduct = self.nodes[&n].conduct.clone();
            match conduct {
                Conduct::Silent => continue,
                Conduct::NackSpam { inside_window } => {
                    if self.contend(n) {
                        let everyone: Vec<NodeId> =
                            self.plan.members.iter().copied().filter(|m| *m != n).collect();
                        let instance = if inside_window {
                            self.plan.instance
                        } else {
                            self.stale_instance()
                        };
                        out.push(self.nack_frame(n, now, everyone, instance));
                    }
                    continue;
                }
                _ => {}
            }
            let missing = self.missing(n);
            {
                let has_vote = self.voters.contains(&n) && self.has_items(n);
                let state = self.nodes.get_mut(&n).expect("member");
                if has_vote && state.own_vote.is_some() && !state.vote_sent {
                    state.want_data = true;
                }
            }
            if self.plan.first_nack_owned
                && catch_offset == 0
                && sole_sink == Some(n)
                && !missing.is_empty()
            {
                let instance = self.plan.instance;
                out.push(self.nack_frame(n, now, missing, instance));
                continue;
            }
            let want_data = self.nodes[&n].want_data;
            if !want_data && missing.is_empty() {
                self.nodes.get_mut(&n).expect("member").csma = None;
                continue;
            }
            if !self.contend(n) {
                continue;
            }
            if want_data {
                if let Some(frame) = self.data_frame(n, now) {
                    self.retransmissions += 1;
                    out.push(frame);
                }
                self.nodes.get_mut(&n).expect("member").want_data = false;
            } else {
                let instance = self.plan.instance;
                out.push(self.nack_frame(n, now, missing, instance));
            }
        }
    }

    fn absorb_data(&mut self, receiver: NodeId, sender: NodeId, items: &[DataItem<P>]) {
        let lead_node = self.plan.lead_node();
        let mut got_lead = false;
        for item in items.iter().filter(|i| i.origin == sender) {
            if !(self.logic.accept)(receiver, item) {
                continue;
            }
            let state = self.nodes.get_mut(&receiver).expect("member");
            match item.role {
                ItemRole::Lead => {
                    if lead_node == Some(sender) && state.hold.lead.is_none() {
                        state.hold.lead = Some(item.payload.clone());
                        got_lead = true;
                    }
                }
                ItemRole::Vote => {
                    if self.voters.contains(&sender) && self.sinks.contains(&receiver) {
                        state.hold.votes.entry(sender).or_insert(item.payload.clone());
                    }
                }
            }
        }
        if got_lead
            && (self.voters.contains(&receiver) || self.sinks.contains(&receiver))
            && self.nodes[&receiver].own_vote.is_none()
        {
            let vote = {
                let state = &self.nodes[&receiver];
                (self.logic.vote)(receiver, state.hold.lead.as_ref())
            };
            let state = self.nodes.get_mut(&receiver).expect("member");
            if let Some(v) = vote {
                state.hold.votes.insert(receiver, v.clone());
                state.own_vote = Some(v);
                if self.plan.mechanism.is_baseline() && self.voters.contains(&receiver) {
                    state.actions.push_back(Action::Data(None));
                }
            }
        }
    }

    fn on_nack(
        &mut self,
        receiver: NodeId,
        sender: NodeId,
        frame_instance: InstanceTag,
        bitmap: &NackBitmap,
        slot: SlotTime,
        trace: &mut Trace,
    ) {
        if !bitmap.names(receiver) {
            return;
        }
        let live = frame_instance == self.plan.instance && bitmap.instance == self.plan.instance;
        if self.plan.mechanism.is_baseline() {
            if live {
                self.baseline_request(receiver, sender);
            }
            return;
        }
        let in_window = self.catch_window().is_some_and(|w| w.contains(slot));
        let channel = Some(self.plan.channel);
        if live && in_window && self.has_items(receiver) && self.honest_or_byz_responder(receiver)
        {
            self.nodes.get_mut(&receiver).expect("member").want_data = true;
            trace.record(slot, TraceKind::StateChange, channel, Some(receiver), || {
                format!("honor-nack from {} i={}", sender.0, bitmap.instance.0)
            });
        } else {
            trace.record(slot, TraceKind::StateChange, channel, Some(receiver), || {
                format!("ignore-nack from {} i={}", sender.0, bitmap.instance.0)
            });
        }
    }

    fn honest_or_byz_responder(&self, node: NodeId) -> bool {
        !matches!(
            self.nodes[&node].conduct,
            Conduct::Silent | Conduct::NackSpam { .. }
        )
    }

    fn catch_end_offset(&self) -> u64 {
        self.plan.reduce_len() + u64::from(self.plan.delta) + u64::from(self.extension_used)
    }

    fn after_slot(&mut self, slot: SlotTime, trace: &mut Trace) {
        let start = self.start.expect("started");
        let elapsed = slot.since(start) + 1;
        self.slots = elapsed;
        let members: Vec<NodeId> = self.nodes.keys().copied().collect();
        let mut satisfied = 0;
        for n in members {
            if self.nodes[&n].satisfied_at.is_none() && self.is_satisfied(n) {
                self.nodes.get_mut(&n).expect("member").satisfied_at = Some(slot);
                let channel = Some(self.plan.channel);
                trace.record(slot, TraceKind::StateChange, channel, Some(n), || {
                    format!("satisfied i={}", self.plan.instance.0)
                });
            }
            if self.nodes[&n].satisfied_at.is_some() && self.honest(n) {
                satisfied += 1;
            }
        }
        self.progress.push(satisfied);
        let complete = self.complete();
        if complete && self.completed_at.is_none() {
            self.completed_at = Some(slot.next());
        }
        let scheduled = self.plan.mechanism == Mechanism::TdmaNack
            && elapsed < self.baseline_initial_slots();
        if complete && !scheduled && (self.plan.early_exit || self.plan.mechanism.is_baseline()) {
            self.done = true;
        } else if self.plan.mechanism.is_baseline() {
            if elapsed >= self.plan.phase_budget {
                self.done = true;
                self.budget_exhausted = true;
            }
        } else if elapsed >= self.catch_end_offset() {
            if !self.all_honest_satisfied() && self.extension_used < self.plan.catch_extension {
                self.extension_used += 1;
            } else {
                self.done = true;
            }
        }
        if self.done {
            let failed = self.failed_count();
            trace.record(
                slot,
                TraceKind::PatternEnd,
                Some(self.plan.channel),
                None,
                || format!("i={} slots={} failed={}", self.plan.instance.0, elapsed, failed),
            );
        }
    }

    fn failed_count(&self) -> usize {
        self.nodes
            .keys()
            .filter(|n| self.honest(**n) && !self.is_satisfied(**n))
            .count()
    }

    /// Marks the run finished without executing any slot (degenerate plans).
    pub fn finish_now(&mut self) {
        self.done = true;
    }

    pub fn finish(self) -> PhaseResult<P> {
        let status = self
            .nodes
            .keys()
            .map(|n| {
                let s = if self.is_satisfied(*n) {
                    NodeStatus::Satisfied
                } else {
                    NodeStatus::Failed
                };
                (*n, s)
            })
            .collect();
        let byzantine = self
            .nodes
            .iter()
            .filter(|(_, s)| !s.conduct.is_honest())
            .map(|(n, _)| *n)
            .collect();
        let reduce_slots = if self.plan.mechanism == Mechanism::ReduceCatch {
            self.plan.reduce_len().min(self.slots)
        } else {
            0
        };
        let outcome = PatternOutcome {
            status,
            byzantine,
            slots_used: self.slots,
            frames: self.frames,
            completed_at: self.completed_at,
            reduce_slots,
            active_after_reduce: self.active_after_reduce.unwrap_or(0),
            retransmissions: self.retransmissions,
            budget_exhausted: self.budget_exhausted,
            progress: self.progress,
        };
        let holdings = self
            .nodes
            .into_iter()
            .map(|(n, s)| (n, s.hold))
            .collect();
        PhaseResult { outcome, holdings }
    }
}

impl<P: Payload> SlotDriver<P> for PhaseRun<P> {
    fn transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<P>>) {
        if self.done {
            return;
        }
        if self.start.is_none() {
            self.start = Some(now);
            if self.plan.mechanism.is_baseline() {
                self.baseline_start(now);
            }
        }
        if self.plan.mechanism.is_baseline() {
            self.baseline_transmit(now, out);
        } else {
            self.rc_transmit(now, out);
        }
    }

    fn receive(&mut self, report: &SlotReport<P>, trace: &mut Trace) {
        if self.done || self.start.is_none() {
            return;
        }
        if self.start == Some(report.slot) {
            let plan = &self.plan;
            trace.record(
                report.slot,
                TraceKind::PatternStart,
                Some(plan.channel),
                None,
                || {
                    let members: Vec<String> =
                        plan.members.iter().map(|m| m.0.to_string()).collect();
                    format!(
                        "i={} {} members=[{}]",
                        plan.instance.0,
                        plan.mechanism,
                        members.join(",")
                    )
                },
            );
        }
        let channel = self.plan.channel;
        self.last_busy = report.was_busy(channel);
        for delivery in report.deliveries.iter().filter(|d| d.frame.channel == channel) {
            let receiver = delivery.receiver;
            if !self.nodes.contains_key(&receiver) {
                continue;
            }
            let frame = &delivery.frame;
            if frame.to.is_some_and(|to| to != receiver) {
                continue;
            }
            match delivery.body() {
                Body::Data(items) => {
                    if frame.instance == self.plan.instance {
                        self.absorb_data(receiver, frame.sender, items);
                        if self.plan.mechanism.is_baseline() {
                            self.baseline_on_data(receiver, frame.sender);
                        }
                    }
                }
                Body::Ack { target } => {
                    if frame.instance == self.plan.instance && *target == receiver {
                        self.nodes
                            .get_mut(&receiver)
                            .expect("member")
                            .acked_by
                            .insert(frame.sender);
                    }
                }
                Body::Nack(bitmap) => {
                    self.on_nack(receiver, frame.sender, frame.instance, bitmap, report.slot, trace)
                }
            }
        }
        self.after_slot(report.slot, trace);
    }
}
