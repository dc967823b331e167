//! Channel access (TDMA ownership, slotted CSMA) and NACK bitmaps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{InstanceTag, NodeId};
use crate::sim::SlotTime;

/// Round-robin slot ownership repeated for `cycles` rounds from `origin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdmaSchedule {
    pub participants: Vec<NodeId>,
    pub cycles: u32,
    pub origin: SlotTime,
}

impl TdmaSchedule {
    pub fn new(participants: Vec<NodeId>, cycles: u32, origin: SlotTime) -> Self {
        TdmaSchedule {
            participants,
            cycles,
            origin,
        }
    }

    pub fn len_slots(&self) -> u64 {
        self.participants.len() as u64 * u64::from(self.cycles)
    }

    pub fn owner(&self, slot: SlotTime) -> Option<NodeId> {
        tdma_owner(self, slot)
    }
}

pub fn tdma_owner(schedule: &TdmaSchedule, slot: SlotTime) -> Option<NodeId> {
    if slot < schedule.origin || schedule.participants.is_empty() {
        return None;
    }
    let offset = slot.since(schedule.origin);
    if offset >= schedule.len_slots() {
        return None;
    }
    Some(schedule.participants[(offset % schedule.participants.len() as u64) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsmaParams {
    /// Backoff is drawn uniformly from `[0, window)`.
    pub window: u32,
    /// Slots a pending transmission may wait before its timer fires.
    pub timer_budget: u32,
}

impl Default for CsmaParams {
    fn default() -> Self {
        // 4.5 s at 1 s/slot, rounded up
        CsmaParams {
            window: 8,
            timer_budget: 5,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MacError {
    #[error("CSMA timer expired before the frame went out")]
    TimerExpired,
}

/// Slotted 1-persistent CSMA with frozen uniform backoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsmaState {
    pub window: u32,
    pub backoff: u32,
    pub attempts: u32,
    /// Slots left before the timer fires; refilled after every transmission.
    pub timer_budget: u32,
    pub timer_reset: u32,
}

impl CsmaState {
    pub fn new(params: CsmaParams, mut draw: impl FnMut(u32) -> u32) -> Self {
        let window = params.window.max(1);
        CsmaState {
            window,
            backoff: draw(window),
            attempts: 0,
            timer_budget: params.timer_budget,
            timer_reset: params.timer_budget,
        }
    }

    /// One slot of contention. Transmits when the backoff has run out and the
    /// previous slot was idle; the backoff is frozen while the channel is busy.
    pub fn step(
        &mut self,
        channel_was_busy: bool,
        mut draw: impl FnMut(u32) -> u32,
    ) -> Result<bool, MacError> {
        if self.timer_budget == 0 {
            return Err(MacError::TimerExpired);
        }
        self.timer_budget -= 1;
        let transmit = if channel_was_busy {
            false
        } else if self.backoff == 0 {
            self.attempts += 1;
            self.backoff = draw(self.window);
            self.timer_budget = self.timer_reset;
            true
        } else {
            self.backoff -= 1;
            false
        };
        if !transmit && self.timer_budget == 0 {
            return Err(MacError::TimerExpired);
        }
        Ok(transmit)
    }
}

pub fn csma_step(
    state: &mut CsmaState,
    channel_was_busy: bool,
    rng: &mut impl Rng,
) -> Result<bool, MacError> {
    state.step(channel_was_busy, |w| rng.gen_range(0..w))
}

/// Where CSMA backoff values come from: seeded per-node streams, or a script
/// (used by golden-trace tests to pin the catch-phase timeline).
pub enum BackoffSource {
    Random(BTreeMap<NodeId, crate::sim::RngStream>),
    Scripted(BTreeMap<NodeId, VecDeque<u32>>),
}

impl BackoffSource {
    pub fn random(seed: u64, scope: &str, nodes: &[NodeId]) -> Self {
        let streams = nodes
            .iter()
            .map(|n| (*n, crate::sim::fork_rng(seed, &format!("node:{}:{scope}", n.0))))
            .collect();
        BackoffSource::Random(streams)
    }

    pub fn scripted(script: BTreeMap<NodeId, Vec<u32>>) -> Self {
        BackoffSource::Scripted(script.into_iter().map(|(n, v)| (n, v.into())).collect())
    }

    /// Draw from `[0, window)` for `node`. Exhausted scripts yield 0.
    pub fn draw(&mut self, node: NodeId, window: u32) -> u32 {
        match self {
            BackoffSource::Random(streams) => {
                let stream = streams
                    .entry(node)
                    .or_insert_with(|| crate::sim::fork_rng(0, &format!("node:{}", node.0)));
                stream.gen_range(0..window.max(1))
            }
            BackoffSource::Scripted(script) => script
                .get_mut(&node)
                .and_then(|q| q.pop_front())
                .map_or(0, |v| v.min(window.saturating_sub(1))),
        }
    }
}

/// Senders whose data the issuer still lacks for one pattern instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NackBitmap {
    pub instance: InstanceTag,
    pub missing: BTreeSet<NodeId>,
}

impl NackBitmap {
    pub fn names(&self, node: NodeId) -> bool {
        self.missing.contains(&node)
    }
}

impl fmt::Display for NackBitmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.missing.iter().map(|n| n.0.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// NACK naming every required sender not yet received; `None` when nothing is missing.
pub fn build_nack(
    required: impl IntoIterator<Item = NodeId>,
    received: impl Fn(NodeId) -> bool,
    instance: InstanceTag,
) -> Option<NackBitmap> {
    let missing: BTreeSet<NodeId> = required.into_iter().filter(|n| !received(*n)).collect();
    (!missing.is_empty()).then_some(NackBitmap { instance, missing })
}

/// The catch window `[start, start + delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatchWindow {
    pub start: SlotTime,
    pub delta: u64,
}

impl CatchWindow {
    pub fn contains(&self, slot: SlotTime) -> bool {
        slot >= self.start && slot.since(self.start) < self.delta
    }
}
