//! Deterministic slotted engine: slot clock, seeded RNG streams, trace recording
//! and the per-slot driver loop shared by every layer above.

use std::fmt;
use std::io::{self, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::channel::{ChannelError, ChannelId, Delivery, Frame, Medium, NodeId, Payload};

/// Algorithm identifier embedded in run metadata so results are self-describing.
pub const RNG_ALGORITHM: &str = "chacha8(sha256(le64(seed)||label))";

/// One slot of logical time.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SlotTime(pub u64);

impl SlotTime {
    pub const ZERO: SlotTime = SlotTime(0);

    pub fn index(self) -> u64 {
        self.0
    }

    pub fn next(self) -> SlotTime {
        SlotTime(self.0 + 1)
    }

    /// Slots from `earlier` to `self`; zero if `earlier` is later.
    pub fn since(self, earlier: SlotTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    pub fn plus(self, slots: u64) -> SlotTime {
        SlotTime(self.0 + slots)
    }
}

impl fmt::Display for SlotTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A labelled pseudo-random stream. Equal `(master_seed, label)` pairs replay the
/// same sequence; distinct labels give unrelated sequences.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

pub fn fork_rng(master_seed: u64, stream_label: &str) -> RngStream {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(stream_label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    RngStream {
        master_seed,
        label: stream_label.to_string(),
        inner: ChaCha8Rng::from_seed(seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TraceKind {
    Transmit,
    Deliver,
    Collide,
    Drop,
    StateChange,
    Commit,
    ViewChange,
    PatternStart,
    PatternEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub slot: SlotTime,
    pub kind: TraceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub detail: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>6} {:?}", self.slot.0, self.kind)?;
        if let Some(c) = self.channel {
            write!(f, " ch={}", c.0)?;
        }
        if let Some(n) = self.node {
            write!(f, " node={}", n.0)?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Text,
    Json,
}

/// Append-only event log. Recording can be switched off for Monte-Carlo runs;
/// `push` is then a no-op and `enabled()` lets callers skip building details.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    enabled: bool,
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace {
            enabled,
            events: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, event: TraceEvent) {
        if self.enabled {
            self.events.push(event);
        }
    }

    pub fn record(
        &mut self,
        slot: SlotTime,
        kind: TraceKind,
        channel: Option<ChannelId>,
        node: Option<NodeId>,
        detail: impl FnOnce() -> String,
    ) {
        if self.enabled {
            self.events.push(TraceEvent {
                slot,
                kind,
                channel,
                node,
                detail: detail(),
            });
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_to(&self, format: TraceFormat, out: &mut impl Write) -> io::Result<()> {
        for event in &self.events {
            match format {
                TraceFormat::Text => writeln!(out, "{event}")?,
                TraceFormat::Json => {
                    serde_json::to_writer(&mut *out, event)?;
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, format: TraceFormat) -> String {
        let mut buf = Vec::new();
        self.write_to(format, &mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace output is utf-8")
    }
}

/// What happened on the medium during one resolved slot.
#[derive(Debug, Clone)]
pub struct SlotReport<P> {
    pub slot: SlotTime,
    pub deliveries: Vec<Delivery<P>>,
    /// Channels that carried at least one transmission (carrier sense).
    pub busy: Vec<ChannelId>,
    pub transmitters: Vec<NodeId>,
}

impl<P> SlotReport<P> {
    pub fn was_busy(&self, channel: ChannelId) -> bool {
        self.busy.contains(&channel)
    }
}

/// Node logic stepped once per slot by [`World::step`].
pub trait SlotDriver<P> {
    /// Frames this driver puts on the air in slot `now`.
    fn transmit(&mut self, now: SlotTime, out: &mut Vec<Frame<P>>);

    /// Outcome of slot `report.slot`; protocol-level trace events go to `trace`.
    fn receive(&mut self, report: &SlotReport<P>, trace: &mut Trace);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Predicate,
    Budget,
}

/// Slot clock, medium and trace for one simulation instance.
pub struct World<P> {
    clock: SlotTime,
    medium: Medium<P>,
    trace: Trace,
    advances: u64,
}

impl<P: Payload> World<P> {
    pub fn new(medium: Medium<P>, record_trace: bool) -> Self {
        World {
            clock: SlotTime::ZERO,
            medium,
            trace: Trace::new(record_trace),
            advances: 0,
        }
    }

    pub fn now(&self) -> SlotTime {
        self.clock
    }

    pub fn slot_advances(&self) -> u64 {
        self.advances
    }

    pub fn medium(&self) -> &Medium<P> {
        &self.medium
    }

    pub fn medium_mut(&mut self) -> &mut Medium<P> {
        &mut self.medium
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    pub fn take_trace(&mut self) -> Trace {
        let enabled = self.trace.enabled();
        std::mem::replace(&mut self.trace, Trace::new(enabled))
    }

    pub fn enqueue(&mut self, frame: Frame<P>) -> Result<(), ChannelError> {
        self.medium.enqueue(frame, self.clock)
    }

    /// Resolves every channel for the current slot, records the trace and moves
    /// the clock forward by exactly one slot.
    pub fn advance_slot(&mut self) -> SlotReport<P> {
        let report = self.medium.resolve(self.clock, &mut self.trace);
        self.clock = self.clock.next();
        self.advances += 1;
        report
    }

    /// One full slot: collect frames from the driver, resolve, hand back the report.
    pub fn step<D: SlotDriver<P> + ?Sized>(&mut self, driver: &mut D) -> Result<(), ChannelError> {
        let mut frames = Vec::new();
        driver.transmit(self.clock, &mut frames);
        for frame in frames {
            self.enqueue(frame)?;
        }
        let report = self.advance_slot();
        driver.receive(&report, &mut self.trace);
        Ok(())
    }

    /// Steps until `stop` holds (checked before each slot) or `max_slots` slots
    /// have been advanced in this call.
    pub fn run_until<D: SlotDriver<P> + ?Sized>(
        &mut self,
        driver: &mut D,
        mut stop: impl FnMut(&World<P>) -> bool,
        max_slots: u64,
    ) -> Result<StopReason, ChannelError> {
        assert!(max_slots > 0, "run_until needs a positive slot budget");
        for _ in 0..max_slots {
            if stop(self) {
                return Ok(StopReason::Predicate);
            }
            self.step(driver)?;
        }
        if stop(self) {
            Ok(StopReason::Predicate)
        } else {
            Ok(StopReason::Budget)
        }
    }
}

/// A driver that never transmits.
pub struct Idle;

impl<P> SlotDriver<P> for Idle {
    fn transmit(&mut self, _now: SlotTime, _out: &mut Vec<Frame<P>>) {}
    fn receive(&mut self, _report: &SlotReport<P>, _trace: &mut Trace) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Body, DataItem, InstanceTag, ItemRole, LossSchedule, TopologyMap};
    use rand::Rng;

    fn world(n: u32, alpha: f64) -> World<u64> {
        let medium = Medium::new(
            TopologyMap::single_hop(n),
            LossSchedule::constant(alpha),
            7,
        );
        World::new(medium, true)
    }

    fn data(sender: u32, slot: SlotTime) -> Frame<u64> {
        Frame::new(
            NodeId(sender),
            ChannelId::GLOBAL,
            slot,
            InstanceTag(1),
            Body::Data(vec![DataItem {
                origin: NodeId(sender),
                role: ItemRole::Lead,
                payload: 9,
            }]),
        )
    }

    #[test]
    fn empty_slot_advances_clock_without_events() {
        let mut w = world(4, 0.0);
        let report = w.advance_slot();
        assert_eq!(w.now(), SlotTime(1));
        assert!(report.deliveries.is_empty());
        assert!(w.trace().is_empty());
    }

    #[test]
    fn single_lossless_frame_reaches_everyone_else() {
        let mut w = world(4, 0.0);
        w.enqueue(data(0, SlotTime(0))).unwrap();
        let report = w.advance_slot();
        assert_eq!(w.now(), SlotTime(1));
        assert_eq!(report.deliveries.len(), 3);
        assert_eq!(w.trace().of_kind(TraceKind::Transmit).count(), 1);
        assert_eq!(w.trace().of_kind(TraceKind::Deliver).count(), 3);
    }

    #[test]
    fn two_frames_collide() {
        let mut w = world(4, 0.0);
        w.enqueue(data(0, SlotTime(0))).unwrap();
        w.enqueue(data(1, SlotTime(0))).unwrap();
        let report = w.advance_slot();
        assert!(report.deliveries.is_empty());
        assert_eq!(w.trace().of_kind(TraceKind::Transmit).count(), 2);
        assert_eq!(w.trace().of_kind(TraceKind::Collide).count(), 1);
        assert_eq!(w.trace().of_kind(TraceKind::Deliver).count(), 0);
    }

    #[test]
    fn run_until_predicate_and_budget() {
        let mut w = world(2, 0.0);
        let reason = w.run_until(&mut Idle, |w| w.now() >= SlotTime(5), 100).unwrap();
        assert_eq!(reason, StopReason::Predicate);
        assert_eq!(w.now(), SlotTime(5));

        let mut w = world(2, 0.0);
        let reason = w.run_until(&mut Idle, |_| false, 100).unwrap();
        assert_eq!(reason, StopReason::Budget);
        assert_eq!(w.now(), SlotTime(100));
        assert_eq!(w.slot_advances(), 100);
    }

    #[test]
    fn forked_streams_are_reproducible_and_label_separated() {
        let draws = |seed, label: &str| {
            let mut r = fork_rng(seed, label);
            (0..1000).map(|_| r.gen::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draws(42, "channel"), draws(42, "channel"));
        assert_ne!(draws(42, "channel"), draws(42, "node:1"));
        assert_ne!(draws(42, "channel"), draws(43, "channel"));
    }

    #[test]
    fn trace_formats() {
        let mut w = world(3, 0.0);
        w.enqueue(data(2, SlotTime(0))).unwrap();
        w.advance_slot();
        let text = w.trace().render(TraceFormat::Text);
        assert_eq!(text.lines().count(), 3);
        let json = w.trace().render(TraceFormat::Json);
        for line in json.lines() {
            let ev: TraceEvent = serde_json::from_str(line).unwrap();
            assert_eq!(ev.slot, SlotTime(0));
        }
    }
}
