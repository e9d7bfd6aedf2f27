//! Deterministic discrete-event scheduler.
//!
//! Time is integer nanoseconds. Events dequeue in `(time, seq)` order where
//! `seq` is the insertion counter, so ties resolve in scheduling order and a
//! run is a pure function of its inputs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Simulation time in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    /// Rounds to the nearest nanosecond. Negative or NaN input saturates to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e9).round().max(0.0) as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl std::ops::Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.as_secs_f64())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: {at} < now {now}")]
    InThePast { at: SimTime, now: SimTime },
}

/// What the trace needs to know about an event payload.
pub trait TraceKind {
    fn name(&self) -> &'static str;
    fn node(&self) -> Option<u32>;
}

#[derive(Debug, Clone)]
pub struct Event<K> {
    pub time: SimTime,
    pub seq: u64,
    pub kind: K,
}

struct Entry<K> {
    time: SimTime,
    seq: u64,
    kind: K,
}

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<K> Eq for Entry<K> {}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Priority queue of pending events plus the simulation clock.
pub struct Scheduler<K> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Entry<K>>>,
}

impl<K> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Scheduler<K> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Enqueues `kind` at `time` and returns the assigned sequence number.
    pub fn schedule(&mut self, time: SimTime, kind: K) -> Result<u64, EngineError> {
        if time < self.now {
            return Err(EngineError::InThePast { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, seq, kind }));
        Ok(seq)
    }

    /// Pops the next event if its time is `<= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<K>> {
        match self.heap.peek() {
            Some(Reverse(e)) if e.time <= t_end => {}
            _ => return None,
        }
        let Reverse(e) = self.heap.pop()?;
        self.now = e.time;
        Some(Event { time: e.time, seq: e.seq, kind: e.kind })
    }

    /// Moves the clock forward to `t` once no events remain before it.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Drains every event with time `<= t_end` through `handler`, then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<(), EngineError>
    where
        F: FnMut(&mut Scheduler<K>, Event<K>),
    {
        if t_end < self.now {
            return Err(EngineError::InThePast { at: t_end, now: self.now });
        }
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
        }
        self.advance_to(t_end);
        Ok(())
    }
}

/// Rolling 64-bit FNV-1a hash over the processed event sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHash(u64);

impl Default for TraceHash {
    fn default() -> Self {
        TraceHash(0xcbf2_9ce4_8422_2325)
    }
}

impl TraceHash {
    fn absorb(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn record<K: TraceKind>(&mut self, ev: &Event<K>) {
        self.absorb(&ev.time.0.to_le_bytes());
        self.absorb(&ev.seq.to_le_bytes());
        self.absorb(ev.kind.name().as_bytes());
        self.absorb(&ev.kind.node().map_or(u32::MAX, |n| n).to_le_bytes());
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

/// Formats one trace line: `time_ns \t seq \t kind \t node`.
pub fn trace_line<K: TraceKind>(ev: &Event<K>) -> String {
    match ev.kind.node() {
        Some(n) => format!("{}\t{}\t{}\t{}", ev.time.0, ev.seq, ev.kind.name(), n),
        None => format!("{}\t{}\t{}\t-", ev.time.0, ev.seq, ev.kind.name()),
    }
}

/// Purpose tag of a random stream. Each (vehicle, purpose) pair gets its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Backoff = 0,
    Jitter = 1,
    RadcomLoss = 2,
    World = 3,
}

/// Independent, reproducible random stream for one (vehicle, purpose) pair.
pub fn rng_stream(master_seed: u64, vehicle: u32, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((u64::from(vehicle) << 8) | purpose as u64);
    rng
}

/// Derives the master seed of replication `index` from a run-level seed.
pub fn replication_seed(master_seed: u64, index: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(u64::from(index) + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(u32);

    impl TraceKind for Tag {
        fn name(&self) -> &'static str {
            "tag"
        }
        fn node(&self) -> Option<u32> {
            Some(self.0)
        }
    }

    #[test]
    fn same_time_dequeues_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), Tag(1)).unwrap();
        s.schedule(SimTime(10), Tag(2)).unwrap();
        s.schedule(SimTime(5), Tag(3)).unwrap();
        let order: Vec<u32> = std::iter::from_fn(|| s.pop_until(SimTime(100)).map(|e| e.kind.0)).collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn event_at_now_precedes_later_events() {
        let mut s = Scheduler::new();
        s.advance_to(SimTime(50));
        s.schedule(SimTime(60), Tag(1)).unwrap();
        s.schedule(SimTime(50), Tag(2)).unwrap();
        assert_eq!(s.pop_until(SimTime(100)).unwrap().kind, Tag(2));
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        s.advance_to(SimTime(100));
        assert_eq!(
            s.schedule(SimTime(99), Tag(0)),
            Err(EngineError::InThePast { at: SimTime(99), now: SimTime(100) })
        );
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        s.run_until(SimTime::from_millis(120), |_, _| panic!("no events")).unwrap();
        assert_eq!(s.now(), SimTime::from_millis(120));
    }

    // A self-rescheduling ticker: split runs must equal a single run.
    fn ticker_trace(splits: &[u64]) -> (Vec<(u64, u64)>, SimTime) {
        let mut s = Scheduler::new();
        s.schedule(SimTime(0), Tag(0)).unwrap();
        s.schedule(SimTime(3), Tag(1)).unwrap();
        let mut log = Vec::new();
        for &end in splits {
            s.run_until(SimTime(end), |s, ev| {
                log.push((ev.time.0, ev.seq));
                let step = if ev.kind.0 == 0 { 7 } else { 11 };
                s.schedule(ev.time + SimTime(step), ev.kind).unwrap();
            })
            .unwrap();
        }
        (log, s.now())
    }

    #[test]
    fn run_until_is_compositional() {
        assert_eq!(ticker_trace(&[120, 150]), ticker_trace(&[150]));
        assert_eq!(ticker_trace(&[150]).1, SimTime(150));
    }

    #[test]
    fn run_until_rejects_going_backwards() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        s.advance_to(SimTime(10));
        assert!(s.run_until(SimTime(5), |_, _| {}).is_err());
    }

    #[test]
    fn trace_hash_depends_on_order() {
        let a = Event { time: SimTime(1), seq: 0, kind: Tag(1) };
        let b = Event { time: SimTime(1), seq: 1, kind: Tag(2) };
        let mut h1 = TraceHash::default();
        h1.record(&a);
        h1.record(&b);
        let mut h2 = TraceHash::default();
        h2.record(&b);
        h2.record(&a);
        assert_ne!(h1, h2);
        assert_eq!(trace_line(&a), "1\t0\ttag\t1");
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let draw = |v, p| -> Vec<u32> {
            let mut r = rng_stream(42, v, p);
            (0..8).map(|_| r.gen()).collect()
        };
        assert_eq!(draw(3, StreamPurpose::Backoff), draw(3, StreamPurpose::Backoff));
        assert_ne!(draw(3, StreamPurpose::Backoff), draw(3, StreamPurpose::Jitter));
        assert_ne!(draw(3, StreamPurpose::Backoff), draw(4, StreamPurpose::Backoff));
        assert_ne!(replication_seed(1, 0), replication_seed(1, 1));
    }

    #[test]
    fn secs_round_trip() {
        assert_eq!(SimTime::from_secs_f64(0.5), SimTime::from_millis(500));
        assert_eq!(SimTime::from_micros(424).as_nanos(), 424_000);
    }
}
