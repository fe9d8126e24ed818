//! Deterministic discrete-event engine.
//!
//! Time is an integer count of picoseconds. Events firing at the same instant
//! are dispatched in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use thiserror::Error;

/// Simulation time in picoseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000_000)
    }

    /// Rounds to the nearest picosecond.
    pub fn from_ms_f64(ms: f64) -> Self {
        SimTime((ms * 1e9).round().max(0.0) as u64)
    }

    pub fn from_us_f64(us: f64) -> Self {
        SimTime((us * 1e6).round().max(0.0) as u64)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    InThePast { fire_at: SimTime, now: SimTime },
}

struct Scheduled<E> {
    fire_at: SimTime,
    sequence: u64,
    payload: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // BinaryHeap is a max-heap; invert so the smallest (fire_at, sequence) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// One dispatched event as recorded in the optional dispatch log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRecord {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub tag: u32,
}

/// Event kinds expose a small integer tag so dispatch logs can be compared
/// without requiring the payload to be `Eq`.
pub trait EventTag {
    fn tag(&self) -> u32;
}

/// Single-threaded event queue and clock.
pub struct Kernel<E> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Scheduled<E>>,
    dispatched: u64,
    log: Option<Vec<LogRecord>>,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            dispatched: 0,
            log: None,
        }
    }

    /// Record every dispatched event. Meant for small determinism checks.
    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn log(&self) -> Option<&[LogRecord]> {
        self.log.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn try_schedule(&mut self, fire_at: SimTime, payload: E) -> Result<u64, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::InThePast {
                fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Scheduled {
            fire_at,
            sequence,
            payload,
        });
        Ok(sequence)
    }

    /// Schedules an event. Scheduling before the current clock is a logic
    /// error in the caller and aborts.
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> u64 {
        match self.try_schedule(fire_at, payload) {
            Ok(seq) => seq,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> u64 {
        let at = self.now + delay;
        self.schedule(at, payload)
    }

    /// Pops the next event if it fires at or before `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, E)>
    where
        E: EventTag,
    {
        if self.heap.peek().map(|s| s.fire_at <= end) != Some(true) {
            return None;
        }
        let s = self.heap.pop()?;
        debug_assert!(s.fire_at >= self.now);
        self.now = s.fire_at;
        self.dispatched += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(LogRecord {
                fire_at: s.fire_at,
                sequence: s.sequence,
                tag: s.payload.tag(),
            });
        }
        Some((s.fire_at, s.payload))
    }

    /// Moves the clock forward to `t` once the caller has drained every event
    /// up to it.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches every event with `fire_at <= end` through `handler` and
    /// returns the final clock, which is `end` unless the clock was already past it.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> SimTime
    where
        E: EventTag,
        F: FnMut(&mut Kernel<E>, SimTime, E),
    {
        while let Some((t, ev)) = self.pop_until(end) {
            handler(self, t, ev);
        }
        self.advance_to(end);
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    struct Ev(u32);

    impl EventTag for Ev {
        fn tag(&self) -> u32 {
            self.0
        }
    }

    #[test]
    fn same_time_dispatches_in_insertion_order() {
        let mut k = Kernel::new();
        k.schedule(SimTime(10), Ev(1));
        k.schedule(SimTime(10), Ev(2));
        let mut seen = vec![];
        k.run_until(SimTime(100), |_, _, e| seen.push(e.0));
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn earlier_time_dispatches_first() {
        let mut k = Kernel::new();
        k.schedule(SimTime(5), Ev(5));
        k.schedule(SimTime(3), Ev(3));
        let mut seen = vec![];
        k.run_until(SimTime(100), |_, t, e| seen.push((t.0, e.0)));
        assert_eq!(seen, vec![(3, 3), (5, 5)]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut k = Kernel::new();
        k.schedule(SimTime(50), Ev(0));
        k.run_until(SimTime(60), |_, _, _| {});
        assert_eq!(
            k.try_schedule(SimTime(10), Ev(1)),
            Err(KernelError::InThePast {
                fire_at: SimTime(10),
                now: SimTime(60)
            })
        );
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn schedule_panics_in_the_past() {
        let mut k = Kernel::new();
        k.advance_to(SimTime(5));
        k.schedule(SimTime(1), Ev(0));
    }

    #[test]
    fn empty_queue_runs_to_end() {
        let mut k: Kernel<Ev> = Kernel::new();
        let end = SimTime::from_ms(120);
        assert_eq!(k.run_until(end, |_, _, _| {}), end);
        assert_eq!(k.dispatched(), 0);
    }

    #[test]
    fn single_event_dispatched_once() {
        let mut k = Kernel::new();
        k.schedule(SimTime::from_ms(3), Ev(7));
        let mut n = 0;
        k.run_until(SimTime::from_ms(120), |_, _, _| n += 1);
        assert_eq!(n, 1);
        assert_eq!(k.now(), SimTime::from_ms(120));
    }

    #[test]
    fn events_past_end_stay_queued() {
        let mut k = Kernel::new();
        k.schedule(SimTime(10), Ev(1));
        k.schedule(SimTime(30), Ev(2));
        let mut seen = vec![];
        k.run_until(SimTime(20), |_, _, e| seen.push(e.0));
        assert_eq!(seen, vec![1]);
        assert_eq!(k.pending(), 1);
        k.run_until(SimTime(30), |_, _, e| seen.push(e.0));
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn handlers_may_schedule_follow_ups() {
        let mut k = Kernel::new();
        k.schedule(SimTime(0), Ev(0));
        let mut count = 0;
        k.run_until(SimTime(1_000), |k, t, e| {
            count += 1;
            if e.0 < 9 {
                k.schedule(t + SimTime(100), Ev(e.0 + 1));
            }
        });
        assert_eq!(count, 10);
    }

    #[test]
    fn dispatch_log_is_monotone() {
        let mut k = Kernel::new();
        k.enable_log();
        for (i, t) in [40u64, 10, 30, 10, 20].iter().enumerate() {
            k.schedule(SimTime(*t), Ev(i as u32));
        }
        k.run_until(SimTime(100), |_, _, _| {});
        let log = k.log().unwrap();
        assert_eq!(log.len(), 5);
        assert!(log
            .windows(2)
            .all(|w| (w[0].fire_at, w[0].sequence) < (w[1].fire_at, w[1].sequence)));
    }

    #[test]
    fn serialization_time_is_exact() {
        // 4 KiB at 100 Gb/s
        let ps = 4096u64 * 8 * 1000 / 100;
        assert_eq!(ps, 327_680);
        assert_eq!(SimTime::from_ns(30).as_ps(), 30_000);
    }
}
