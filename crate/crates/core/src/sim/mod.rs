//! Seeded discrete-event engine.
//!
//! Events run in `(at, seq)` order where `seq` is a global counter assigned at
//! scheduling time, so simultaneous events run in the order they were
//! scheduled. Every executed event is appended to an [`EventTrace`].

mod streams;
mod trace;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::domain::Seconds;

pub use streams::RngStreams;
pub use trace::{EventTrace, FailureRecord, TraceError, TraceFile, TraceRecord, TRACE_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("negative or non-finite delay {0}")]
    InvalidDelay(Seconds),
    #[error("cannot run to {t_end}: clock already at {clock}")]
    EndBeforeClock { t_end: Seconds, clock: Seconds },
    #[error("handler failed at t={at} (seq {seq}): {message}")]
    HandlerFailed { at: Seconds, seq: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle {
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub at: Seconds,
    pub seq: u64,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .at
            .total_cmp(&self.0.at)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Clock and pending-event queue. Handlers receive this to schedule
/// follow-up events.
pub struct Scheduler<P> {
    clock: Seconds,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
}

impl<P> Scheduler<P> {
    fn new() -> Self {
        Self {
            clock: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Seconds {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, delay: Seconds, payload: P) -> Result<EventHandle, SimError> {
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(SimError::InvalidDelay(delay));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            at: self.clock + delay,
            seq,
            payload,
        }));
        Ok(EventHandle { seq })
    }

    /// Schedules at an absolute time; times in the past are clamped to now.
    pub fn schedule_at(&mut self, at: Seconds, payload: P) -> Result<EventHandle, SimError> {
        self.schedule((at - self.clock).max(0.0), payload)
    }

    fn pop_due(&mut self, t_end: Seconds) -> Option<Event<P>> {
        if self.queue.peek().is_some_and(|q| q.0.at <= t_end) {
            self.queue.pop().map(|q| q.0)
        } else {
            None
        }
    }
}

pub struct Engine<P> {
    sched: Scheduler<P>,
    trace: EventTrace,
}

impl<P: Serialize> Engine<P> {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            sched: Scheduler::new(),
            trace: EventTrace::new(seed, config_digest),
        }
    }

    pub fn now(&self) -> Seconds {
        self.sched.clock
    }

    pub fn schedule(&mut self, delay: Seconds, payload: P) -> Result<EventHandle, SimError> {
        self.sched.schedule(delay, payload)
    }

    pub fn schedule_at(&mut self, at: Seconds, payload: P) -> Result<EventHandle, SimError> {
        self.sched.schedule_at(at, payload)
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EventTrace {
        self.trace
    }

    /// Executes every event with `at <= t_end`, then sets the clock to
    /// `t_end`. The handler's return value is stored as the record's detail.
    ///
    /// A handler error or panic stops the run; the trace keeps the records
    /// executed so far plus a failure record.
    pub fn run_until<F>(&mut self, t_end: Seconds, mut handler: F) -> Result<usize, SimError>
    where
        F: FnMut(&mut Scheduler<P>, &Event<P>) -> Result<Value, String>,
    {
        if t_end < self.sched.clock {
            return Err(SimError::EndBeforeClock {
                t_end,
                clock: self.sched.clock,
            });
        }
        let mut executed = 0;
        while let Some(ev) = self.sched.pop_due(t_end) {
            debug_assert!(ev.at >= self.sched.clock);
            self.sched.clock = ev.at;
            let outcome = catch_unwind(AssertUnwindSafe(|| handler(&mut self.sched, &ev)));
            let message = match outcome {
                Ok(Ok(detail)) => {
                    self.trace.records.push(TraceRecord {
                        at: ev.at,
                        seq: ev.seq,
                        event: serde_json::to_value(&ev.payload).unwrap_or(Value::Null),
                        detail,
                    });
                    executed += 1;
                    continue;
                }
                Ok(Err(message)) => message,
                Err(panic) => panic_message(panic.as_ref()),
            };
            self.trace.failure = Some(FailureRecord {
                at: ev.at,
                seq: ev.seq,
                message: message.clone(),
            });
            self.trace.clock = self.sched.clock;
            return Err(SimError::HandlerFailed {
                at: ev.at,
                seq: ev.seq,
                message,
            });
        }
        self.sched.clock = t_end;
        self.trace.clock = t_end;
        Ok(executed)
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use serde_json::json;

    fn record_all(engine: &mut Engine<u32>, t_end: Seconds) -> Vec<(Seconds, u32)> {
        let mut seen = Vec::new();
        engine
            .run_until(t_end, |s, ev| {
                assert!(s.now() >= ev.at);
                seen.push((ev.at, ev.payload));
                Ok(Value::Null)
            })
            .unwrap();
        seen
    }

    #[test]
    fn zero_delay_runs_after_current_event() {
        let mut e: Engine<u32> = Engine::new(0, "");
        e.schedule(1.0, 1).unwrap();
        let mut order = Vec::new();
        e.run_until(10.0, |s, ev| {
            order.push((ev.at, ev.payload));
            if ev.payload == 1 {
                s.schedule(0.0, 2).unwrap();
            }
            Ok(Value::Null)
        })
        .unwrap();
        assert_eq!(order, vec![(1.0, 1), (1.0, 2)]);
        assert!(e.trace().records[0].seq < e.trace().records[1].seq);
    }

    #[test]
    fn same_time_runs_in_schedule_order() {
        let mut e: Engine<u32> = Engine::new(0, "");
        for p in [5, 3, 9] {
            e.schedule(2.0, p).unwrap();
        }
        let seen = record_all(&mut e, 2.0);
        assert_eq!(seen, vec![(2.0, 5), (2.0, 3), (2.0, 9)]);
    }

    #[test]
    fn negative_delay_rejected() {
        let mut e: Engine<u32> = Engine::new(0, "");
        assert_eq!(e.schedule(-1.0, 0), Err(SimError::InvalidDelay(-1.0)));
        assert!(e.schedule(f64::NAN, 0).is_err());
    }

    #[test]
    fn pop_order_matches_sort_oracle() {
        let mut rng = RngStreams::new(3).stream("engine-test");
        let mut e: Engine<u32> = Engine::new(0, "");
        let mut expected = Vec::new();
        for i in 0..100_000u32 {
            // coarse times force plenty of ties
            let delay = (rng.random_range(0..5_000u32) as f64) * 0.25;
            e.schedule(delay, i).unwrap();
            expected.push((delay, i));
        }
        // stable sort by time keeps schedule order within ties
        expected.sort_by(|a, b| a.0.total_cmp(&b.0));
        let seen = record_all(&mut e, f64::MAX);
        assert_eq!(seen, expected);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut e: Engine<u32> = Engine::new(0, "");
        assert_eq!(e.run_until(50.0, |_, _| Ok(Value::Null)).unwrap(), 0);
        assert_eq!(e.now(), 50.0);
        assert!(e.trace().is_empty());
        assert!(e.run_until(10.0, |_, _| Ok(Value::Null)).is_err());
    }

    #[test]
    fn events_after_end_stay_queued() {
        let mut e: Engine<u32> = Engine::new(0, "");
        e.schedule(5.0, 1).unwrap();
        e.schedule(15.0, 2).unwrap();
        assert_eq!(record_all(&mut e, 10.0), vec![(5.0, 1)]);
        assert_eq!(record_all(&mut e, 20.0), vec![(15.0, 2)]);
    }

    #[test]
    fn week_of_five_minute_probes() {
        let mut e: Engine<u32> = Engine::new(0, "");
        let week = 7.0 * 24.0 * 3600.0;
        let mut k = 0u32;
        while (k as f64) * 300.0 < week {
            e.schedule_at(k as f64 * 300.0, k).unwrap();
            k += 1;
        }
        let n = e.run_until(week, |_, _| Ok(Value::Null)).unwrap();
        assert_eq!(n, 2016);
    }

    #[test]
    fn identical_runs_identical_digest() {
        let run = || {
            let streams = RngStreams::new(11);
            let mut rng = streams.stream("delays");
            let mut e: Engine<u32> = Engine::new(11, "cfg");
            for i in 0..1000 {
                e.schedule(rng.random::<f64>() * 100.0, i).unwrap();
            }
            e.run_until(100.0, |s, ev| Ok(json!({"now": s.now(), "p": ev.payload})))
                .unwrap();
            e.into_trace().digest()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn handler_panic_truncates_trace() {
        let mut e: Engine<u32> = Engine::new(0, "");
        for i in 0..5 {
            e.schedule(i as f64, i).unwrap();
        }
        let err = e
            .run_until(10.0, |_, ev| {
                if ev.payload == 3 {
                    panic!("boom");
                }
                Ok(Value::Null)
            })
            .unwrap_err();
        assert!(matches!(err, SimError::HandlerFailed { seq: 3, .. }));
        assert_eq!(e.trace().len(), 3);
        let failure = e.trace().failure.as_ref().unwrap();
        assert!(failure.message.contains("boom"));
    }
}
