//! The four baseline disciplines: TDMA or CSMA medium access combined with
//! per-packet ACK or NACK feedback.

use crate::channel::{Frame, NodeId, Payload};
use crate::sim::SlotTime;

use super::phase::{Action, PhaseRun};
use super::{Conduct, Mechanism};

/// Answers to a per-packet NACK go to the requester alone.
fn addressed<P>(mut frame: Frame<P>, requester: NodeId) -> Frame<P> {
    frame.to = Some(requester);
    frame
}

impl<P: Payload> PhaseRun<P> {
    fn baseline_ntx(&self) -> u64 {
        let lead = self.plan.lead.as_ref().map_or(0, |l| l.ntx);
        u64::from(lead.max(self.plan.vote_ntx).max(1))
    }

    /// Slots of the scheduled TDMA-NACK transmissions that always run.
    pub(super) fn baseline_initial_slots(&self) -> u64 {
        self.baseline_ntx() * self.plan.members.len() as u64
    }

    pub(super) fn baseline_start(&mut self, now: SlotTime) {
        let csma = !self.plan.mechanism.uses_tdma();
        let first_nack = now.plus(u64::from(self.plan.csma.timer_budget));
        let members: Vec<NodeId> = self.nodes.keys().copied().collect();
        for n in members {
            let has_items = self.has_items(n);
            let state = self.nodes.get_mut(&n).expect("member");
            if csma && has_items {
                state.actions.push_back(Action::Data(None));
            }
            state.next_nack_at = Some(first_nack);
        }
    }

    pub(super) fn baseline_on_data(&mut self, receiver: NodeId, sender: NodeId) {
        if !self.plan.mechanism.uses_ack() || !self.intended(sender).contains(&receiver) {
            return;
        }
        let tdma = self.plan.mechanism.uses_tdma();
        let state = self.nodes.get_mut(&receiver).expect("member");
        if tdma {
            if !state.acks_owed.contains(&sender) {
                state.acks_owed.push_back(sender);
            }
        } else if !state.actions.contains(&Action::Ack(sender)) {
            state.actions.push_back(Action::Ack(sender));
        }
    }

    pub(super) fn baseline_request(&mut self, holder: NodeId, requester: NodeId) {
        if self.plan.mechanism.uses_ack() || !self.has_items(holder) {
            return;
        }
        let tdma = self.plan.mechanism.uses_tdma();
        let state = self.nodes.get_mut(&holder).expect("member");
        if tdma {
            if !state.requests.contains(&requester) {
                state.requests.push_back(requester);
            }
        } else if !state.actions.contains(&Action::Data(Some(requester))) {
            state.actions.push_back(Action::Data(Some(requester)));
        }
    }

    fn spam_frame(&mut self, node: NodeId, now: SlotTime, inside_window: bool) -> Frame<P> {
        let everyone: Vec<NodeId> = self
            .plan
            .members
            .iter()
            .copied()
            .filter(|m| *m != node)
            .collect();
        let instance = if inside_window {
            self.plan.instance
        } else {
            crate::channel::InstanceTag(self.plan.instance.0 ^ (1 << 63))
        };
        self.nack_frame(node, now, everyone, instance)
    }

    fn baseline_data(&mut self, node: NodeId, now: SlotTime, initial_copies: u32) -> Option<Frame<P>> {
        let repeat = self.nodes[&node].data_sent >= initial_copies;
        let frame = self.data_frame(node, now)?;
        if repeat {
            self.retransmissions += 1;
        }
        Some(frame)
    }

    /// Next missing origin for a per-packet NACK, rotating so one lost
    /// retransmission does not starve the others.
    fn next_nack_target(&mut self, node: NodeId) -> Option<NodeId> {
        let missing = self.missing(node);
        if missing.is_empty() {
            return None;
        }
        let state = self.nodes.get_mut(&node).expect("member");
        let target = missing[state.nack_cursor % missing.len()];
        state.nack_cursor += 1;
        Some(target)
    }

    pub(super) fn baseline_transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<P>>) {
        if self.plan.mechanism.uses_tdma() {
            self.tdma_transmit(now, out);
        } else {
            self.csma_transmit(now, out);
        }
    }

    fn tdma_transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<P>>) {
        let start = self.start.expect("started");
        let offset = now.since(start);
        let members = &self.plan.members;
        if members.is_empty() {
            return;
        }
        let owner = members[(offset % members.len() as u64) as usize];
        match self.nodes[&owner].conduct {
            Conduct::Silent => return,
            Conduct::NackSpam { inside_window } => {
                out.push(self.spam_frame(owner, now, inside_window));
                return;
            }
            _ => {}
        }
        match self.plan.mechanism {
            Mechanism::TdmaAck => {
                let owed = self
                    .nodes
                    .get_mut(&owner)
                    .expect("member")
                    .acks_owed
                    .pop_front();
                if let Some(target) = owed {
                    out.push(self.ack_frame(owner, now, target));
                } else if !self.fully_acked(owner) {
                    out.extend(self.baseline_data(owner, now, 1));
                }
            }
            Mechanism::TdmaNack => {
                let ntx = self.baseline_ntx();
                let initial = ntx * members.len() as u64;
                if offset < initial {
                    out.extend(self.baseline_data(owner, now, ntx as u32));
                    return;
                }
                let request = self
                    .nodes
                    .get_mut(&owner)
                    .expect("member")
                    .requests
                    .pop_front();
                if let Some(requester) = request {
                    out.extend(self.baseline_data(owner, now, ntx as u32).map(|f| addressed(f, requester)));
                } else if let Some(target) = self.next_nack_target(owner) {
                    let instance = self.plan.instance;
                    out.push(self.nack_frame(owner, now, [target], instance));
                }
            }
            other => unreachable!("{other} is not a TDMA mechanism"),
        }
    }

    fn csma_transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<P>>) {
        let timer = u64::from(self.plan.csma.timer_budget);
        let ack_mode = self.plan.mechanism == Mechanism::CsmaAck;
        let members: Vec<NodeId> = self.nodes.keys().copied().collect();
        for n in members {
            match self.nodes[&n].conduct {
                Conduct::Silent => continue,
                Conduct::NackSpam { inside_window } => {
                    if self.contend(n) {
                        out.push(self.spam_frame(n, now, inside_window));
                    }
                    continue;
                }
                _ => {}
            }
            if ack_mode {
                let retry_due = self.nodes[&n].retry_at.is_some_and(|t| t <= now);
                if retry_due && !self.fully_acked(n) {
                    let state = self.nodes.get_mut(&n).expect("member");
                    state.retry_at = None;
                    if !state.actions.contains(&Action::Data(None)) {
                        state.actions.push_back(Action::Data(None));
                    }
                }
            } else {
                let nack_due = self.nodes[&n].next_nack_at.is_some_and(|t| t <= now);
                let queued = self.nodes[&n]
                    .actions
                    .iter()
                    .any(|a| matches!(a, Action::Nack(_)));
                if nack_due && !queued {
                    if let Some(target) = self.next_nack_target(n) {
                        let state = self.nodes.get_mut(&n).expect("member");
                        state.actions.push_back(Action::Nack(target));
                        state.next_nack_at = Some(now.plus(timer));
                    }
                }
            }
            if self.nodes[&n].actions.is_empty() {
                self.nodes.get_mut(&n).expect("member").csma = None;
                continue;
            }
            if !self.contend(n) {
                continue;
            }
            let action = self
                .nodes
                .get_mut(&n)
                .expect("member")
                .actions
                .pop_front()
                .expect("non-empty queue");
            match action {
                Action::Data(requester) => {
                    if let Some(frame) = self.baseline_data(n, now, 1) {
                        out.push(match requester {
                            Some(r) => addressed(frame, r),
                            None => frame,
                        });
                        if ack_mode {
                            self.nodes.get_mut(&n).expect("member").retry_at =
                                Some(now.plus(1 + timer));
                        }
                    }
                }
                Action::Ack(target) => out.push(self.ack_frame(n, now, target)),
                Action::Nack(target) => {
                    let instance = self.plan.instance;
                    out.push(self.nack_frame(n, now, [target], instance));
                }
            }
        }
    }
}
