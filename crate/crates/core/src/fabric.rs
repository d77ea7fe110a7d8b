//! Discrete-event substrate: simulated time, the event queue, node
//! provisioning and preemption, and the alpha-beta interconnect model.
//!
//! All randomness is derived per entity from `(seed, label, entity id)`, so
//! a node's boot latency or preemption time does not depend on the order in
//! which other entities were created.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{AZURE_INTERCONNECT, COLONIAL_ONE_INTERCONNECT};

pub const MILLIS_PER_SECOND: u64 = 1000;
pub const MILLIS_PER_HOUR: u64 = 3600 * MILLIS_PER_SECOND;

/// Simulated instant, in milliseconds since the start of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

/// Simulated span, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MILLIS_PER_SECOND as f64
    }

    pub fn from_secs(s: u64) -> SimTime {
        SimTime(s * MILLIS_PER_SECOND)
    }

    pub fn saturating_since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_secs(s: u64) -> SimDuration {
        SimDuration(s * MILLIS_PER_SECOND)
    }

    /// Rounds up to the next millisecond.
    pub fn from_secs_f64(s: f64) -> SimDuration {
        assert!(s.is_finite() && s >= 0.0, "duration must be finite and non-negative");
        SimDuration((s * MILLIS_PER_SECOND as f64).ceil() as u64)
    }

    /// Exact for hour values with at most 7 fractional digits.
    pub fn from_hours(h: rust_decimal::Decimal) -> SimDuration {
        use rust_decimal::prelude::ToPrimitive;
        let ms = (h * rust_decimal::Decimal::from(MILLIS_PER_HOUR)).round();
        SimDuration(ms.to_u64().expect("duration out of range"))
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MILLIS_PER_SECOND as f64
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, d: SimDuration) -> SimTime {
        SimTime(self.0 + d.0)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, d: SimDuration) -> SimDuration {
        SimDuration(self.0 + d.0)
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0.checked_sub(rhs.0).expect("negative duration"))
    }
}

impl std::iter::Sum for SimDuration {
    fn sum<I: Iterator<Item = SimDuration>>(iter: I) -> SimDuration {
        SimDuration(iter.map(|d| d.0).sum())
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / MILLIS_PER_SECOND, self.0 % MILLIS_PER_SECOND)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", SimTime(self.0))
    }
}

struct Scheduled<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl<E: Clone> Clone for Scheduled<E> {
    fn clone(&self) -> Self {
        Scheduled { at: self.at, seq: self.seq, event: self.event.clone() }
    }
}

/// Monotone clock with a time-ordered event queue. Events scheduled for the
/// same instant fire in insertion order.
pub struct SimClock<E> {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
}

impl<E: Clone> Clone for SimClock<E> {
    fn clone(&self) -> Self {
        SimClock { now: self.now, seq: self.seq, queue: self.queue.clone() }
    }
}

impl<E> fmt::Debug for SimClock<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimClock").field("now", &self.now).field("pending", &self.queue.len()).finish()
    }
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        SimClock { now: SimTime::ZERO, seq: 0, queue: BinaryHeap::new() }
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule_at(&mut self, at: SimTime, event: E) {
        assert!(at >= self.now, "cannot schedule in the past ({at} < {})", self.now);
        self.queue.push(Reverse(Scheduled { at, seq: self.seq, event }));
        self.seq += 1;
    }

    pub fn schedule_in(&mut self, delay: SimDuration, event: E) {
        self.schedule_at(self.now + delay, event);
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(s)| s.at)
    }

    /// Pops the next event and advances `now` to its timestamp.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(s) = self.queue.pop()?;
        self.now = s.at;
        Some((s.at, s.event))
    }

    /// Moves the clock forward without firing anything. Fails if an event
    /// is pending before `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.now, "time never decreases");
        if let Some(next) = self.peek_time() {
            assert!(next >= t, "advance_to would skip a pending event");
        }
        self.now = t;
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("low-priority capacity unavailable at t={at}s")]
    AllocationUnavailable { at: SimTime },
    #[error("illegal node transition {node}: {from:?} -> {to:?}")]
    IllegalTransition { node: String, from: NodeState, to: NodeState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Dedicated,
    LowPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Starting,
    Idle,
    Running,
    Preempted,
    Unusable,
}

impl NodeState {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Starting => "Starting",
            NodeState::Idle => "Idle",
            NodeState::Running => "Running",
            NodeState::Preempted => "Preempted",
            NodeState::Unusable => "Unusable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub node_id: String,
    pub pool_id: String,
    pub sku: String,
    pub priority: Priority,
    pub state: NodeState,
    pub boot_latency: SimDuration,
    pub provisioned_at: SimTime,
}

impl Node {
    pub fn can_transition(&self, to: NodeState) -> bool {
        use NodeState::*;
        match (self.state, to) {
            (Starting, Idle) | (Idle, Running) | (Running, Idle) => true,
            (Idle | Running, Preempted) => self.priority == Priority::LowPriority,
            (Unusable, _) => false,
            (_, Unusable) => true,
            _ => false,
        }
    }

    pub fn transition(&mut self, to: NodeState) -> Result<(), FabricError> {
        if !self.can_transition(to) {
            return Err(FabricError::IllegalTransition {
                node: self.node_id.clone(),
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }
}

/// Latency/bandwidth pair for one platform's interconnect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectModel {
    pub name: String,
    /// Per-message latency, seconds.
    pub alpha: f64,
    /// Sustained bandwidth, bytes per second.
    pub beta: f64,
}

impl InterconnectModel {
    pub fn new(name: impl Into<String>, alpha: f64, beta: f64) -> Self {
        assert!(alpha > 0.0 && beta > 0.0, "alpha and beta must be positive");
        InterconnectModel { name: name.into(), alpha, beta }
    }

    /// NC24r nodes, FDR InfiniBand.
    pub fn azure() -> Self {
        Self::new(AZURE_INTERCONNECT, 1.95e-6, 5.2e9)
    }

    /// Ivygpu nodes on the university cluster.
    pub fn colonial_one() -> Self {
        Self::new(COLONIAL_ONE_INTERCONNECT, 1.25e-6, 6.2e9)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            AZURE_INTERCONNECT => Some(Self::azure()),
            COLONIAL_ONE_INTERCONNECT => Some(Self::colonial_one()),
            _ => None,
        }
    }

    /// `alpha + bytes / beta`
    pub fn comm_time(&self, message_bytes: u64) -> f64 {
        self.alpha + message_bytes as f64 / self.beta
    }

    /// Recursive-doubling allreduce: `ceil(log2 p)` rounds of one message.
    pub fn allreduce_time(&self, participants: u64, message_bytes: u64) -> f64 {
        assert!(participants >= 1, "allreduce needs at least one participant");
        if participants == 1 {
            return 0.0;
        }
        let rounds = u64::BITS - (participants - 1).leading_zeros();
        rounds as f64 * self.comm_time(message_bytes)
    }
}

/// Half-open interval of simulated time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: SimTime,
    pub end: SimTime,
}

impl Window {
    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

/// Poisson preemption of low-priority nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreemptionProcess {
    pub rate_per_node_hour: f64,
    pub seed: u64,
}

pub const DEFAULT_PREEMPTION_RATE: f64 = 0.05;

impl PreemptionProcess {
    /// Time from `epoch` until the node is preempted, or `None` when the
    /// rate is zero.
    pub fn time_to_preemption(&self, node_id: &str, epoch: u32) -> Option<SimDuration> {
        assert!(self.rate_per_node_hour >= 0.0);
        if self.rate_per_node_hour == 0.0 {
            return None;
        }
        let mut rng = entity_rng(self.seed, "preempt", &format!("{node_id}#{epoch}"));
        let u: f64 = rng.gen();
        let hours = -(1.0 - u).ln() / self.rate_per_node_hour;
        Some(SimDuration((hours * MILLIS_PER_HOUR as f64).ceil() as u64))
    }
}

/// Deterministic generator for one entity.
pub fn entity_rng(seed: u64, label: &str, entity: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(entity.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricSettings {
    pub seed: u64,
    /// Inclusive bounds for node boot latency, seconds.
    pub boot_latency_secs: (u64, u64),
    pub preemption_rate_per_node_hour: f64,
    pub low_priority_scarcity: Vec<Window>,
}

impl FabricSettings {
    pub fn with_seed(seed: u64) -> Self {
        FabricSettings {
            seed,
            boot_latency_secs: (60, 300),
            preemption_rate_per_node_hour: DEFAULT_PREEMPTION_RATE,
            low_priority_scarcity: Vec::new(),
        }
    }

    pub fn preemption(&self) -> PreemptionProcess {
        PreemptionProcess { rate_per_node_hour: self.preemption_rate_per_node_hour, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvisionRequest {
    pub pool_id: String,
    pub sku: String,
    pub dedicated: u32,
    pub low_priority: u32,
}

/// Node ids are `<pool>-d<i>` for dedicated and `<pool>-lp<i>` for
/// low-priority nodes.
pub fn node_id(pool_id: &str, priority: Priority, index: u32) -> String {
    match priority {
        Priority::Dedicated => format!("{pool_id}-d{index}"),
        Priority::LowPriority => format!("{pool_id}-lp{index}"),
    }
}

impl FabricSettings {
    pub fn boot_latency(&self, node_id: &str) -> SimDuration {
        let (lo, hi) = self.boot_latency_secs;
        let mut rng = entity_rng(self.seed, "boot", node_id);
        SimDuration::from_secs(rng.gen_range(lo..=hi))
    }

    /// Creates the requested nodes in `Starting` and enqueues one
    /// boot-complete event per node.
    pub fn provision<E>(
        &self,
        clock: &mut SimClock<E>,
        request: &ProvisionRequest,
        on_booted: impl Fn(&str) -> E,
    ) -> Result<Vec<Node>, FabricError> {
        let now = clock.now();
        if request.low_priority > 0 && self.low_priority_scarcity.iter().any(|w| w.contains(now)) {
            return Err(FabricError::AllocationUnavailable { at: now });
        }
        let specs = (0..request.dedicated)
            .map(|i| (Priority::Dedicated, i))
            .chain((0..request.low_priority).map(|i| (Priority::LowPriority, i)));
        let mut nodes = Vec::new();
        for (priority, i) in specs {
            let id = node_id(&request.pool_id, priority, i);
            let boot_latency = self.boot_latency(&id);
            clock.schedule_in(boot_latency, on_booted(&id));
            nodes.push(Node {
                node_id: id,
                pool_id: request.pool_id.clone(),
                sku: request.sku.clone(),
                priority,
                state: NodeState::Starting,
                boot_latency,
                provisioned_at: now,
            });
        }
        Ok(nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comm_time_endpoints() {
        assert_eq!(InterconnectModel::azure().comm_time(0), 1.95e-6);
        assert_eq!(InterconnectModel::colonial_one().comm_time(0), 1.25e-6);
        let t = InterconnectModel::azure().comm_time(4_194_304);
        assert!((t - (1.95e-6 + 4_194_304.0 / 5.2e9)).abs() < 1e-18);
        assert!((t - 8.0847e-4).abs() < 1e-7);
    }

    #[test]
    fn allreduce_rounds() {
        let m = InterconnectModel::azure();
        assert_eq!(m.allreduce_time(1, 1 << 20), 0.0);
        let one = 1.95e-6 + 8.0 / 5.2e9;
        assert_eq!(m.allreduce_time(2, 8), one);
        assert_eq!(m.allreduce_time(8, 8), 3.0 * one);
        assert_eq!(m.allreduce_time(5, 8), 3.0 * one);
        assert_eq!(m.allreduce_time(3, 8), 2.0 * one);
    }

    #[test]
    fn clock_orders_by_time_then_insertion() {
        let mut c = SimClock::new();
        c.schedule_at(SimTime(10), "b");
        c.schedule_at(SimTime(5), "a");
        c.schedule_at(SimTime(10), "c");
        let order: Vec<_> = std::iter::from_fn(|| c.pop()).map(|(_, e)| e).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
        assert_eq!(c.now(), SimTime(10));
    }

    #[test]
    #[should_panic(expected = "past")]
    fn clock_rejects_past_events() {
        let mut c = SimClock::new();
        c.schedule_at(SimTime(10), ());
        c.pop();
        c.schedule_at(SimTime(9), ());
    }

    #[test]
    fn node_transitions() {
        let mut n = Node {
            node_id: "p-d0".into(),
            pool_id: "p".into(),
            sku: "NC6".into(),
            priority: Priority::Dedicated,
            state: NodeState::Starting,
            boot_latency: SimDuration::ZERO,
            provisioned_at: SimTime::ZERO,
        };
        assert!(n.transition(NodeState::Running).is_err());
        n.transition(NodeState::Idle).unwrap();
        n.transition(NodeState::Running).unwrap();
        assert!(n.transition(NodeState::Preempted).is_err(), "dedicated nodes are never preempted");
        n.transition(NodeState::Idle).unwrap();
        n.transition(NodeState::Unusable).unwrap();
        assert!(n.transition(NodeState::Idle).is_err());

        n.priority = Priority::LowPriority;
        n.state = NodeState::Running;
        n.transition(NodeState::Preempted).unwrap();
        assert!(n.transition(NodeState::Idle).is_err());
        n.transition(NodeState::Unusable).unwrap();
    }

    fn request(d: u32, lp: u32) -> ProvisionRequest {
        ProvisionRequest { pool_id: "pool".into(), sku: "NC24r".into(), dedicated: d, low_priority: lp }
    }

    #[test]
    fn provision_is_deterministic() {
        let settings = FabricSettings::with_seed(42);
        let run = || {
            let mut c: SimClock<String> = SimClock::new();
            let nodes = settings.provision(&mut c, &request(2, 0), |id| id.to_string()).unwrap();
            let events: Vec<_> = std::iter::from_fn(|| c.pop()).collect();
            (nodes, events)
        };
        let (a, ea) = run();
        let (b, eb) = run();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|n| n.state == NodeState::Starting));
        for n in &a {
            let s = n.boot_latency.millis() / 1000;
            assert!((60..=300).contains(&s));
        }
    }

    #[test]
    fn provision_nothing() {
        let settings = FabricSettings::with_seed(1);
        let mut c: SimClock<()> = SimClock::new();
        let nodes = settings.provision(&mut c, &request(0, 0), |_| ()).unwrap();
        assert!(nodes.is_empty());
        assert_eq!(c.pending(), 0);
    }

    #[test]
    fn scarcity_window_denies_low_priority() {
        let mut settings = FabricSettings::with_seed(1);
        settings.low_priority_scarcity = vec![Window { start: SimTime(0), end: SimTime::from_secs(3600) }];
        let mut c: SimClock<()> = SimClock::new();
        assert!(matches!(
            settings.provision(&mut c, &request(0, 1), |_| ()),
            Err(FabricError::AllocationUnavailable { .. })
        ));
        assert_eq!(c.pending(), 0);
        assert!(settings.provision(&mut c, &request(1, 0), |_| ()).is_ok());
    }

    #[test]
    fn preemption_schedule_is_reproducible() {
        let p = PreemptionProcess { rate_per_node_hour: 0.05, seed: 7 };
        assert_eq!(p.time_to_preemption("n", 0), p.time_to_preemption("n", 0));
        assert_ne!(p.time_to_preemption("n", 0), p.time_to_preemption("m", 0));
        let none = PreemptionProcess { rate_per_node_hour: 0.0, seed: 7 };
        assert_eq!(none.time_to_preemption("n", 0), None);
    }

    #[test]
    fn preemption_mean_matches_rate() {
        let p = PreemptionProcess { rate_per_node_hour: 2.0, seed: 3 };
        let n = 20_000;
        let mean_h: f64 = (0..n)
            .map(|i| p.time_to_preemption(&format!("n{i}"), 0).unwrap().millis() as f64 / MILLIS_PER_HOUR as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean_h - 0.5).abs() < 0.02, "mean {mean_h}");
    }
}
