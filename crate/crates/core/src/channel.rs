//! Shared half-duplex wireless medium.
//!
//! A slot on a channel carries zero, one or several frames. Two or more frames
//! destroy each other (no capture effect). A single frame reaches each eligible
//! receiver independently with probability `1 - alpha(slot)`. A node that
//! transmits in a slot hears nothing in that slot on any channel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::NackBitmap;
use crate::sim::{fork_rng, RngStream, SlotReport, SlotTime, Trace, TraceKind};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Channel 0 is the global channel; 1..=k are cluster channels.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ChannelId(pub u16);

impl ChannelId {
    pub const GLOBAL: ChannelId = ChannelId(0);
}

/// Tags every frame with the pattern instance it belongs to so stale frames
/// from earlier instances are discarded instead of misattributed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct InstanceTag(pub u64);

/// Application data carried inside data frames.
pub trait Payload: Clone + fmt::Debug + Send + Sync + 'static {
    /// Payloads with equal keys count toward the same quorum.
    fn quorum_key(&self) -> u64;

    fn brief(&self) -> String {
        format!("{:x}", self.quorum_key() & 0xffff)
    }
}

impl Payload for u64 {
    fn quorum_key(&self) -> u64 {
        *self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ItemRole {
    /// The leader's broadcast item (proposal or certificate).
    Lead,
    /// A participant's own contribution (vote, view-change message, data).
    Vote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataItem<P> {
    pub origin: NodeId,
    pub role: ItemRole,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    Data,
    Ack,
    Nack,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body<P> {
    Data(Vec<DataItem<P>>),
    /// Positive acknowledgement of `target`'s data.
    Ack { target: NodeId },
    Nack(NackBitmap),
}

impl<P> Body<P> {
    pub fn kind(&self) -> FrameKind {
        match self {
            Body::Data(_) => FrameKind::Data,
            Body::Ack { .. } => FrameKind::Ack,
            Body::Nack(_) => FrameKind::Nack,
        }
    }
}

impl<P: Payload> Body<P> {
    pub fn describe(&self) -> String {
        match self {
            Body::Data(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| {
                        let tag = match i.role {
                            ItemRole::Lead => 'L',
                            ItemRole::Vote => 'V',
                        };
                        format!("{tag}{}:{}", i.origin.0, i.payload.brief())
                    })
                    .collect();
                format!("data [{}]", parts.join(" "))
            }
            Body::Ack { target } => format!("ack ->{}", target.0),
            Body::Nack(bitmap) => format!("nack {}", bitmap),
        }
    }
}

/// One MAC-level transmission in one slot on one channel.
#[derive(Debug, Clone)]
pub struct Frame<P> {
    pub sender: NodeId,
    pub channel: ChannelId,
    pub slot: SlotTime,
    pub instance: InstanceTag,
    pub body: Body<P>,
    /// Per-receiver body overrides. Only adversaries build these (equivocation).
    pub targeted: BTreeMap<NodeId, Body<P>>,
    /// Addressee of a unicast frame. Everyone else overhears it and drops it.
    pub to: Option<NodeId>,
}

impl<P> Frame<P> {
    pub fn new(
        sender: NodeId,
        channel: ChannelId,
        slot: SlotTime,
        instance: InstanceTag,
        body: Body<P>,
    ) -> Self {
        Frame {
            sender,
            channel,
            slot,
            instance,
            body,
            targeted: BTreeMap::new(),
            to: None,
        }
    }

    pub fn kind(&self) -> FrameKind {
        self.body.kind()
    }

    /// The body as seen by `receiver`.
    pub fn body_for(&self, receiver: NodeId) -> &Body<P> {
        self.targeted.get(&receiver).unwrap_or(&self.body)
    }
}

impl<P: Payload> Frame<P> {
    fn describe(&self) -> String {
        let star = if self.targeted.is_empty() { "" } else { "*" };
        let to = self.to.map_or(String::new(), |n| format!(" to={}", n.0));
        format!("i={} {}{}{to}", self.instance.0, self.body.describe(), star)
    }
}

#[derive(Debug, Clone)]
pub struct Delivery<P> {
    pub receiver: NodeId,
    pub frame: Arc<Frame<P>>,
}

impl<P> Delivery<P> {
    pub fn body(&self) -> &Body<P> {
        self.frame.body_for(self.receiver)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("node {0} already transmitted in slot {1}")]
    DuplicateTransmit(NodeId, SlotTime),
    #[error("frame stamped for slot {frame} enqueued at slot {now}")]
    StaleSlot { frame: SlotTime, now: SlotTime },
    #[error("channel {0:?} is not configured")]
    UnknownChannel(ChannelId),
    #[error("node {0} is not tuned to channel {1:?}")]
    NotTuned(NodeId, ChannelId),
    #[error("invalid loss schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSegment {
    pub from: SlotTime,
    pub alpha: f64,
}

/// Piecewise-constant loss probability over time plus the GST position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule {
    segments: Vec<LossSegment>,
    gst_slot: SlotTime,
    alpha_max: f64,
}

impl LossSchedule {
    pub fn new(
        segments: Vec<LossSegment>,
        gst_slot: SlotTime,
        alpha_max: f64,
    ) -> Result<Self, ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidSchedule(m.to_string()));
        if segments.is_empty() || segments[0].from != SlotTime::ZERO {
            return bad("segments must start at slot 0");
        }
        if segments.windows(2).any(|w| w[0].from >= w[1].from) {
            return bad("segment starts must be strictly increasing");
        }
        if segments.iter().any(|s| !(0.0..=1.0).contains(&s.alpha)) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&alpha_max) {
            return bad("alpha_max must lie in [0, 1]");
        }
        let schedule = LossSchedule {
            segments,
            gst_slot,
            alpha_max,
        };
        // every segment in force at or after GST must respect the bound
        let violates = schedule.segments.iter().enumerate().any(|(i, s)| {
            let ends_after_gst = schedule
                .segments
                .get(i + 1)
                .is_none_or(|next| next.from > gst_slot);
            ends_after_gst && s.alpha > alpha_max
        });
        if violates {
            return bad("post-GST alpha exceeds alpha_max");
        }
        Ok(schedule)
    }

    pub fn constant(alpha: f64) -> Self {
        LossSchedule::new(
            vec![LossSegment {
                from: SlotTime::ZERO,
                alpha,
            }],
            SlotTime::ZERO,
            1.0,
        )
        .expect("constant schedule is valid")
    }

    /// `pre` until `gst`, then `post`; `post` doubles as the synchronous bound.
    pub fn with_gst(gst: SlotTime, pre: f64, post: f64) -> Result<Self, ChannelError> {
        let mut segments = vec![LossSegment {
            from: SlotTime::ZERO,
            alpha: pre,
        }];
        if gst > SlotTime::ZERO {
            segments.push(LossSegment {
                from: gst,
                alpha: post,
            });
        } else {
            segments[0].alpha = post;
        }
        LossSchedule::new(segments, gst, post)
    }

    pub fn segments(&self) -> &[LossSegment] {
        &self.segments
    }

    pub fn gst_slot(&self) -> SlotTime {
        self.gst_slot
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn alpha_at(&self, slot: SlotTime) -> f64 {
        let idx = self.segments.partition_point(|s| s.from <= slot);
        self.segments[idx - 1].alpha
    }
}

/// Two-state (good/bad) loss chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    /// Per-slot probability of moving good -> bad.
    pub p_enter: f64,
    /// Per-slot probability of moving bad -> good.
    pub p_exit: f64,
    pub alpha_burst: f64,
    /// Loss in the good state; `None` uses the channel's schedule.
    #[serde(default)]
    pub alpha_good: Option<f64>,
}

impl BurstParams {
    /// Stationary mean loss given the good-state rate.
    pub fn long_run_loss(&self, alpha_good: f64) -> f64 {
        let total = self.p_enter + self.p_exit;
        if total == 0.0 {
            return alpha_good;
        }
        let bad = self.p_enter / total;
        bad * self.alpha_burst + (1.0 - bad) * alpha_good
    }
}

#[derive(Debug, Clone)]
struct BurstState {
    params: BurstParams,
    in_burst: bool,
    chain: RngStream,
    last_slot: Option<SlotTime>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub frames: u64,
    pub collisions: u64,
    pub deliveries: u64,
    pub drops: u64,
}

impl ChannelStats {
    pub fn observed_loss(&self) -> f64 {
        let attempts = self.deliveries + self.drops;
        if attempts == 0 {
            0.0
        } else {
            self.drops as f64 / attempts as f64
        }
    }
}

#[derive(Debug, Clone)]
struct ForcedDrop {
    sender: NodeId,
    receiver: NodeId,
    slots: Range<u64>,
}

#[derive(Debug, Clone)]
struct ChannelState {
    loss: LossSchedule,
    burst: Option<BurstState>,
    rng: RngStream,
    forced: Vec<ForcedDrop>,
    stats: ChannelStats,
}

impl ChannelState {
    /// Loss probability in force for `slot`, advancing the burst chain if any.
    fn alpha(&mut self, slot: SlotTime) -> f64 {
        let base = self.loss.alpha_at(slot);
        let alpha = match &mut self.burst {
            None => base,
            Some(b) => {
                // the chain moves once per slot, whether or not the slot is used
                let steps = match b.last_slot {
                    None => 0,
                    Some(prev) => slot.since(prev),
                };
                for _ in 0..steps {
                    let u: f64 = b.chain.gen();
                    b.in_burst = if b.in_burst {
                        u >= b.params.p_exit
                    } else {
                        u < b.params.p_enter
                    };
                }
                b.last_slot = Some(slot);
                if b.in_burst {
                    b.params.alpha_burst
                } else {
                    b.params.alpha_good.unwrap_or(base)
                }
            }
        };
        if slot >= self.loss.gst_slot() {
            alpha.min(self.loss.alpha_max())
        } else {
            alpha
        }
    }

}

/// Which channels each node can hear (and transmit on).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyMap {
    membership: BTreeMap<NodeId, BTreeSet<ChannelId>>,
}

impl TopologyMap {
    /// Nodes `0..n`, all on the global channel.
    pub fn single_hop(n: u32) -> Self {
        Self::single_hop_nodes((0..n).map(NodeId))
    }

    pub fn single_hop_nodes(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let membership = nodes
            .into_iter()
            .map(|n| (n, BTreeSet::from([ChannelId::GLOBAL])))
            .collect();
        TopologyMap { membership }
    }

    pub fn empty() -> Self {
        TopologyMap {
            membership: BTreeMap::new(),
        }
    }

    pub fn tune(&mut self, node: NodeId, channel: ChannelId) {
        self.membership.entry(node).or_default().insert(channel);
    }

    pub fn detune(&mut self, node: NodeId, channel: ChannelId) {
        if let Some(chs) = self.membership.get_mut(&node) {
            chs.remove(&channel);
        }
    }

    pub fn hears(&self, node: NodeId, channel: ChannelId) -> bool {
        self.membership
            .get(&node)
            .is_some_and(|chs| chs.contains(&channel))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.membership.keys().copied()
    }

    pub fn listeners(&self, channel: ChannelId) -> Vec<NodeId> {
        self.membership
            .iter()
            .filter(|(_, chs)| chs.contains(&channel))
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn channels(&self) -> BTreeSet<ChannelId> {
        self.membership.values().flatten().copied().collect()
    }
}

/// Result of resolving one channel for one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelOutcome {
    Idle,
    Collision,
    Single {
        delivered: Vec<NodeId>,
        dropped: Vec<NodeId>,
    },
}

/// Resolves one channel in one slot.
///
/// `eligible` must already exclude every node transmitting this slot. One loss
/// draw is consumed per eligible receiver of a lone frame; forced drops consume
/// their draw too so scripted losses do not shift the stream.
pub fn resolve_channel(
    transmitters: usize,
    sender: Option<NodeId>,
    eligible: &[NodeId],
    alpha: f64,
    rng: &mut impl Rng,
    forced: impl Fn(NodeId, NodeId) -> bool,
) -> ChannelOutcome {
    match (transmitters, sender) {
        (0, _) => ChannelOutcome::Idle,
        (1, Some(sender)) => {
            let mut delivered = Vec::new();
            let mut dropped = Vec::new();
            for &r in eligible {
                let lost = rng.gen::<f64>() < alpha;
                if lost || forced(sender, r) {
                    dropped.push(r);
                } else {
                    delivered.push(r);
                }
            }
            ChannelOutcome::Single { delivered, dropped }
        }
        _ => ChannelOutcome::Collision,
    }
}

/// All channels of one simulation instance plus this slot's pending frames.
pub struct Medium<P> {
    topology: TopologyMap,
    channels: BTreeMap<ChannelId, ChannelState>,
    pending: Vec<Frame<P>>,
    master_seed: u64,
}

impl<P: Payload> Medium<P> {
    /// Every channel the topology mentions gets `loss` and its own RNG stream.
    pub fn new(topology: TopologyMap, loss: LossSchedule, master_seed: u64) -> Self {
        let channels = topology
            .channels()
            .into_iter()
            .map(|c| (c, Self::channel_state(master_seed, c, loss.clone())))
            .collect();
        Medium {
            topology,
            channels,
            pending: Vec::new(),
            master_seed,
        }
    }

    fn channel_state(seed: u64, c: ChannelId, loss: LossSchedule) -> ChannelState {
        ChannelState {
            loss,
            burst: None,
            rng: fork_rng(seed, &format!("channel:{}", c.0)),
            forced: Vec::new(),
            stats: ChannelStats::default(),
        }
    }

    pub fn topology(&self) -> &TopologyMap {
        &self.topology
    }

    /// Moves `node` onto or off an existing channel (e.g. a new cluster leader).
    pub fn retune(&mut self, node: NodeId, channel: ChannelId, on: bool) -> Result<(), ChannelError> {
        if !self.channels.contains_key(&channel) {
            return Err(ChannelError::UnknownChannel(channel));
        }
        if on {
            self.topology.tune(node, channel);
        } else {
            self.topology.detune(node, channel);
        }
        Ok(())
    }

    pub fn set_loss(&mut self, channel: ChannelId, loss: LossSchedule) -> Result<(), ChannelError> {
        let state = self
            .channels
            .get_mut(&channel)
            .ok_or(ChannelError::UnknownChannel(channel))?;
        state.loss = loss;
        Ok(())
    }

    pub fn loss(&self, channel: ChannelId) -> Option<&LossSchedule> {
        self.channels.get(&channel).map(|s| &s.loss)
    }

    pub fn set_burst_mode(
        &mut self,
        channel: ChannelId,
        params: BurstParams,
    ) -> Result<(), ChannelError> {
        let seed = self.master_seed;
        let state = self
            .channels
            .get_mut(&channel)
            .ok_or(ChannelError::UnknownChannel(channel))?;
        state.burst = Some(BurstState {
            params,
            in_burst: false,
            chain: fork_rng(seed, &format!("burst:{}", channel.0)),
            last_slot: None,
        });
        Ok(())
    }

    /// Long-run average loss of a channel (stationary value in burst mode,
    /// the post-GST schedule value otherwise).
    pub fn long_run_loss(&self, channel: ChannelId) -> Option<f64> {
        let state = self.channels.get(&channel)?;
        let base = state.loss.alpha_at(state.loss.gst_slot());
        Some(match &state.burst {
            None => base,
            Some(b) => b.params.long_run_loss(b.params.alpha_good.unwrap_or(base)),
        })
    }

    /// Scripted loss: frames from `sender` never reach `receiver` during `slots`.
    pub fn force_drop(
        &mut self,
        channel: ChannelId,
        sender: NodeId,
        receiver: NodeId,
        slots: Range<u64>,
    ) -> Result<(), ChannelError> {
        let state = self
            .channels
            .get_mut(&channel)
            .ok_or(ChannelError::UnknownChannel(channel))?;
        state.forced.push(ForcedDrop {
            sender,
            receiver,
            slots,
        });
        Ok(())
    }

    pub fn stats(&self, channel: ChannelId) -> Option<ChannelStats> {
        self.channels.get(&channel).map(|s| s.stats)
    }

    pub fn enqueue(&mut self, frame: Frame<P>, now: SlotTime) -> Result<(), ChannelError> {
        if frame.slot != now {
            return Err(ChannelError::StaleSlot {
                frame: frame.slot,
                now,
            });
        }
        if !self.channels.contains_key(&frame.channel) {
            return Err(ChannelError::UnknownChannel(frame.channel));
        }
        if !self.topology.hears(frame.sender, frame.channel) {
            return Err(ChannelError::NotTuned(frame.sender, frame.channel));
        }
        if self.pending.iter().any(|f| f.sender == frame.sender) {
            return Err(ChannelError::DuplicateTransmit(frame.sender, now));
        }
        self.pending.push(frame);
        Ok(())
    }

    pub(crate) fn resolve(&mut self, slot: SlotTime, trace: &mut Trace) -> SlotReport<P> {
        let mut frames = std::mem::take(&mut self.pending);
        frames.sort_by_key(|f| (f.channel, f.sender));
        let transmitters: Vec<NodeId> = frames.iter().map(|f| f.sender).collect();
        let mut report = SlotReport {
            slot,
            deliveries: Vec::new(),
            busy: Vec::new(),
            transmitters: transmitters.clone(),
        };

        for (&channel, state) in self.channels.iter_mut() {
            let alpha = state.alpha(slot);
            let on_channel: Vec<&Frame<P>> =
                frames.iter().filter(|f| f.channel == channel).collect();
            if on_channel.is_empty() {
                continue;
            }
            report.busy.push(channel);
            for f in &on_channel {
                state.stats.frames += 1;
                trace.record(slot, TraceKind::Transmit, Some(channel), Some(f.sender), || {
                    f.describe()
                });
            }
            let sender = (on_channel.len() == 1).then(|| on_channel[0].sender);
            let eligible: Vec<NodeId> = match sender {
                Some(s) => self
                    .topology
                    .listeners(channel)
                    .into_iter()
                    .filter(|r| *r != s && !transmitters.contains(r))
                    .collect(),
                None => Vec::new(),
            };
            let outcome = {
                let ChannelState { rng, forced, .. } = &mut *state;
                let forced = |s: NodeId, r: NodeId| {
                    forced
                        .iter()
                        .any(|f| f.sender == s && f.receiver == r && f.slots.contains(&slot.0))
                };
                resolve_channel(on_channel.len(), sender, &eligible, alpha, rng, forced)
            };
            match outcome {
                ChannelOutcome::Idle => {}
                ChannelOutcome::Collision => {
                    state.stats.collisions += 1;
                    trace.record(slot, TraceKind::Collide, Some(channel), None, || {
                        let senders: Vec<String> =
                            on_channel.iter().map(|f| f.sender.0.to_string()).collect();
                        format!("senders={}", senders.join(","))
                    });
                }
                ChannelOutcome::Single { delivered, dropped } => {
                    let frame = Arc::new(on_channel[0].clone());
                    let mut all: Vec<(NodeId, bool)> = delivered
                        .iter()
                        .map(|r| (*r, true))
                        .chain(dropped.iter().map(|r| (*r, false)))
                        .collect();
                    all.sort();
                    for (r, ok) in all {
                        if ok {
                            state.stats.deliveries += 1;
                            trace.record(slot, TraceKind::Deliver, Some(channel), Some(r), || {
                                format!("from={}", frame.sender.0)
                            });
                            report.deliveries.push(Delivery {
                                receiver: r,
                                frame: Arc::clone(&frame),
                            });
                        } else {
                            state.stats.drops += 1;
                            trace.record(slot, TraceKind::Drop, Some(channel), Some(r), || {
                                format!("from={}", frame.sender.0)
                            });
                        }
                    }
                }
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{fork_rng, World};

    fn frame(sender: u32, channel: u16, slot: u64) -> Frame<u64> {
        Frame::new(
            NodeId(sender),
            ChannelId(channel),
            SlotTime(slot),
            InstanceTag(0),
            Body::Data(vec![DataItem {
                origin: NodeId(sender),
                role: ItemRole::Vote,
                payload: 1,
            }]),
        )
    }

    #[test]
    fn enqueue_contract() {
        let mut m: Medium<u64> = Medium::new(TopologyMap::single_hop(4), LossSchedule::constant(0.0), 1);
        assert!(m.enqueue(frame(0, 0, 3), SlotTime(3)).is_ok());
        assert_eq!(
            m.enqueue(frame(0, 0, 3), SlotTime(3)),
            Err(ChannelError::DuplicateTransmit(NodeId(0), SlotTime(3)))
        );
        assert!(matches!(
            m.enqueue(frame(1, 0, 2), SlotTime(3)),
            Err(ChannelError::StaleSlot { .. })
        ));
        assert_eq!(
            m.enqueue(frame(1, 5, 3), SlotTime(3)),
            Err(ChannelError::UnknownChannel(ChannelId(5)))
        );
    }

    #[test]
    fn pure_resolution_cases() {
        let mut rng = fork_rng(1, "t");
        let rx: Vec<NodeId> = (1..4).map(NodeId).collect();
        let out = resolve_channel(1, Some(NodeId(0)), &rx, 0.0, &mut rng, |_, _| false);
        assert_eq!(
            out,
            ChannelOutcome::Single {
                delivered: rx.clone(),
                dropped: vec![]
            }
        );
        let out = resolve_channel(2, None, &rx, 0.0, &mut rng, |_, _| false);
        assert_eq!(out, ChannelOutcome::Collision);
        let out = resolve_channel(1, Some(NodeId(0)), &rx, 1.0, &mut rng, |_, _| false);
        assert_eq!(
            out,
            ChannelOutcome::Single {
                delivered: vec![],
                dropped: rx
            }
        );
    }

    #[test]
    fn bernoulli_mean_matches_monte_carlo() {
        // 9 receivers, alpha = 0.3: mean deliveries 0.7 * 9 = 6.3
        let mut rng = fork_rng(99, "mc");
        let rx: Vec<NodeId> = (1..10).map(NodeId).collect();
        let trials = 100_000;
        let mut total = 0usize;
        for _ in 0..trials {
            if let ChannelOutcome::Single { delivered, .. } =
                resolve_channel(1, Some(NodeId(0)), &rx, 0.3, &mut rng, |_, _| false)
            {
                total += delivered.len();
            }
        }
        let mean = total as f64 / trials as f64;
        assert!((mean - 6.3).abs() < 0.05, "mean deliveries {mean}");
    }

    #[test]
    fn half_duplex_across_channels() {
        let mut topo = TopologyMap::empty();
        for n in 0..3 {
            topo.tune(NodeId(n), ChannelId(1));
        }
        topo.tune(NodeId(2), ChannelId(0));
        topo.tune(NodeId(3), ChannelId(0));
        let mut w: World<u64> = World::new(Medium::new(topo, LossSchedule::constant(0.0), 3), false);
        // node 2 transmits on channel 0 while node 0 transmits on channel 1
        w.enqueue(frame(0, 1, 0)).unwrap();
        w.enqueue(frame(2, 0, 0)).unwrap();
        let report = w.advance_slot();
        let got: Vec<(u32, u32)> = report
            .deliveries
            .iter()
            .map(|d| (d.frame.sender.0, d.receiver.0))
            .collect();
        assert_eq!(got.len(), 2);
        assert!(got.contains(&(0, 1)));
        assert!(got.contains(&(2, 3)));
        assert!(!got.iter().any(|(_, r)| *r == 2), "transmitter heard something");
    }

    #[test]
    fn gst_schedule_validation() {
        let s = LossSchedule::with_gst(SlotTime(200), 0.9, 0.2).unwrap();
        assert_eq!(s.alpha_at(SlotTime(0)), 0.9);
        assert_eq!(s.alpha_at(SlotTime(199)), 0.9);
        assert_eq!(s.alpha_at(SlotTime(200)), 0.2);
        let bad = LossSchedule::new(
            vec![LossSegment {
                from: SlotTime(0),
                alpha: 0.5,
            }],
            SlotTime(10),
            0.3,
        );
        assert!(bad.is_err());
    }

    fn burst_medium(params: BurstParams, base: f64) -> Medium<u64> {
        let mut m = Medium::new(TopologyMap::single_hop(2), LossSchedule::constant(base), 5);
        m.set_burst_mode(ChannelId::GLOBAL, params).unwrap();
        m
    }

    fn run_lossy(m: Medium<u64>, slots: u64) -> (Vec<usize>, ChannelStats) {
        let mut w = World::new(m, false);
        let mut got = Vec::new();
        for s in 0..slots {
            w.enqueue(frame(0, 0, s)).unwrap();
            got.push(w.advance_slot().deliveries.len());
        }
        (got, w.medium().stats(ChannelId::GLOBAL).unwrap())
    }

    #[test]
    fn degenerate_burst_equals_iid() {
        let iid = Medium::new(TopologyMap::single_hop(2), LossSchedule::constant(0.3), 5);
        let burst = burst_medium(
            BurstParams {
                p_enter: 0.0,
                p_exit: 0.5,
                alpha_burst: 1.0,
                alpha_good: None,
            },
            0.3,
        );
        assert_eq!(run_lossy(iid, 500).0, run_lossy(burst, 500).0);
    }

    #[test]
    fn absorbing_burst_loses_everything_after_first_slot() {
        let m = burst_medium(
            BurstParams {
                p_enter: 1.0,
                p_exit: 0.0,
                alpha_burst: 1.0,
                alpha_good: Some(0.0),
            },
            0.0,
        );
        let (got, _) = run_lossy(m, 50);
        assert_eq!(got[0], 1);
        assert!(got[1..].iter().all(|&d| d == 0));
    }

    #[test]
    fn burst_long_run_loss_matches_stationary_distribution() {
        let params = BurstParams {
            p_enter: 0.1,
            p_exit: 0.5,
            alpha_burst: 0.9,
            alpha_good: Some(0.05),
        };
        // pi_bad = 0.1 / 0.6
        let oracle = (0.1 / 0.6) * 0.9 + (0.5 / 0.6) * 0.05;
        assert!((params.long_run_loss(0.05) - oracle).abs() < 1e-12);
        let m = burst_medium(params, 0.05);
        assert!((m.long_run_loss(ChannelId::GLOBAL).unwrap() - oracle).abs() < 1e-12);
        let (_, stats) = run_lossy(m, 200_000);
        assert!(
            (stats.observed_loss() - oracle).abs() < 0.01,
            "observed {} vs {oracle}",
            stats.observed_loss()
        );
    }
}
