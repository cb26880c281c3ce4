//! One server-scheduled station against locally scheduled ones, with a
//! circuit-limit audit after every event.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{details, handler_error, Analysis, Check, ExperimentConfig, ExperimentError, Table};
use crate::control::{current_to_duty, select_algorithm_mode, ServerStore};
use crate::domain::{Amps, ChargingStation, Seconds};
use crate::latency::{SegmentStreams, StationLinks};
use crate::proto::{Message, MessageKind, Payload};
use crate::sched::{apply_allocation, round_robin_step, slot_index, LocalController};
use crate::sim::{Engine, EventTrace, RngStreams, Scheduler};

const SERVER_DRIVEN: usize = 0;
const LOCAL: usize = 1;
/// Plug or unplug events per randomized station-day.
const SCENARIO_TOGGLES: usize = 24;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SchedEvent {
    Slot { n: u64 },
    ModeSelect,
    /// Server duty-cycle commands for one slot reaching the station.
    Apply { slot: u64, alloc: Vec<Amps> },
    Toggle { station: usize, outlet: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Violation {
    station: usize,
    total: Amps,
    limit: Amps,
    reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Detail {
    /// Messages the server sent while handling this event.
    sent: Vec<Message>,
    /// Allocations of the two reference stations after the event.
    server_driven: Vec<Amps>,
    local: Vec<Amps>,
    /// Set when the server-driven allocation for the slot changed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slot_change: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effective_at: Option<Seconds>,
    violations: Vec<Violation>,
}

struct State<'c> {
    config: &'c ExperimentConfig,
    stations: Vec<ChargingStation>,
    controllers: Vec<LocalController>,
    store: ServerStore,
    uplink: SegmentStreams,
    /// What the server last commanded for the server-driven station.
    commanded: Vec<Amps>,
}

impl State<'_> {
    fn allocations(&self, station: usize) -> Vec<Amps> {
        let s = &self.stations[station];
        (0..s.meter_count())
            .map(|o| s.outlet(o).map_or(0.0, |o| o.allocated_current()))
            .collect()
    }

    fn local_apply(&mut self, station: usize, now: Seconds, violations: &mut Vec<Violation>) {
        let s = &mut self.stations[station];
        if let Some(alloc) = self.controllers[station].allocate(&s.plugged_mask(), now) {
            if let Err(e) = apply_allocation(s, &alloc, now) {
                violations.push(Violation {
                    station,
                    total: s.allocated_current_total(),
                    limit: s.circuit_limit,
                    reason: e.to_string(),
                });
            }
        }
    }

    fn audit(&self, violations: &mut Vec<Violation>) {
        for s in &self.stations {
            let total = s.allocated_current_total();
            if total > s.circuit_limit + 1e-9 {
                violations.push(Violation {
                    station: s.id,
                    total,
                    limit: s.circuit_limit,
                    reason: "total over circuit limit".into(),
                });
            }
        }
    }

    fn handle(&mut self, sched: &mut Scheduler<SchedEvent>, ev: &SchedEvent, now: Seconds) -> Result<Detail, String> {
        let config = self.config;
        let mut violations = Vec::new();
        let mut sent = Vec::new();
        let mut slot_change = None;
        let mut effective_at = None;
        match ev {
            &SchedEvent::Slot { n } => {
                let next = (n + 1) as f64 * config.sched.round_robin.slot_length;
                if next < config.sched.duration {
                    sched.schedule_at(next, SchedEvent::Slot { n: n + 1 }).map_err(handler_error)?;
                }
                // The server runs round-robin itself for the station that
                // has no local algorithm.
                let mask = self.stations[SERVER_DRIVEN].plugged_mask();
                let alloc = round_robin_step(&config.sched.round_robin, &mask, now);
                if alloc != self.commanded {
                    slot_change = Some(n);
                    let station = &self.stations[SERVER_DRIVEN];
                    for (outlet, (&new, &old)) in alloc.iter().zip(&self.commanded).enumerate() {
                        if new == old {
                            continue;
                        }
                        // duty 0 pauses charging
                        let duty = if new > 0.0 { current_to_duty(new).map_err(handler_error)? } else { 0.0 };
                        let meter = station.meter_id(outlet).map_err(handler_error)?;
                        sent.push(
                            Message::new(MessageKind::DutyCycleSet, station.id, self.store.next_seq(), now)
                                .with_meter(meter)
                                .with_payload(Payload::DutyPercent(duty)),
                        );
                    }
                    let mut links = StationLinks::new(&config.links, station.link, self.uplink.clone());
                    let arrive = now + links.network_rtt(now) / 2.0;
                    self.uplink = links.rng;
                    sched
                        .schedule_at(arrive, SchedEvent::Apply { slot: n, alloc: alloc.clone() })
                        .map_err(handler_error)?;
                    self.commanded = alloc;
                }
                for station in LOCAL..self.stations.len() {
                    self.local_apply(station, now, &mut violations);
                }
            }
            SchedEvent::ModeSelect => {
                let station = &self.stations[LOCAL];
                let mut links = StationLinks::new(&config.links, station.link, self.uplink.clone());
                let ack = select_algorithm_mode(
                    &mut self.store,
                    station,
                    &mut self.controllers[LOCAL],
                    &mut links,
                    config.sched.local_mode,
                    now,
                )
                .map_err(handler_error)?;
                self.uplink = links.rng;
                effective_at = Some(ack.effective_at);
                sent.push(ack.request);
                // A mode landing exactly on a boundary already passed is
                // applied at once.
                if ack.effective_at <= now {
                    self.local_apply(LOCAL, now, &mut violations);
                }
            }
            SchedEvent::Apply { alloc, .. } => {
                let s = &mut self.stations[SERVER_DRIVEN];
                if let Err(e) = apply_allocation(s, alloc, now) {
                    violations.push(Violation {
                        station: SERVER_DRIVEN,
                        total: s.allocated_current_total(),
                        limit: s.circuit_limit,
                        reason: e.to_string(),
                    });
                }
            }
            &SchedEvent::Toggle { station, outlet } => {
                let s = &mut self.stations[station];
                if s.is_plugged(outlet) {
                    s.unplug(outlet, now).map_err(handler_error)?;
                } else {
                    s.plug(outlet, config.fleet.ev, now).map_err(handler_error)?;
                }
                self.local_apply(station, now, &mut violations);
            }
        }
        self.audit(&mut violations);
        Ok(Detail {
            sent,
            server_driven: self.allocations(SERVER_DRIVEN),
            local: self.allocations(LOCAL),
            slot_change,
            effective_at,
            violations,
        })
    }
}

pub(super) fn simulate(config: &ExperimentConfig) -> Result<EventTrace, ExperimentError> {
    let streams = RngStreams::new(config.seed);
    let sc = &config.sched;
    let f = &config.fleet;
    let total = 2 + sc.random_scenarios;
    let mut stations = Vec::with_capacity(total);
    let mut controllers = Vec::with_capacity(total);
    for id in 0..total {
        let mut s = ChargingStation::new(id, f.meters_per_station, f.circuit_limit, f.link);
        s.volts = f.volts;
        let plugged = if id <= LOCAL { sc.evs.min(f.meters_per_station) } else { 0 };
        for outlet in 0..plugged {
            s.plug(outlet, f.ev, 0.0).map_err(|e| ExperimentError::Analysis(e.to_string()))?;
        }
        let mut c = LocalController::new(sc.round_robin, sc.schedule_time.clone());
        if id > LOCAL {
            c.deliver(sc.local_mode, 0.0);
        }
        stations.push(s);
        controllers.push(c);
    }

    let mut engine: Engine<SchedEvent> = Engine::new(config.seed, config.digest());
    engine.schedule_at(0.0, SchedEvent::Slot { n: 0 })?;
    engine.schedule_at(sc.mode_select_at, SchedEvent::ModeSelect)?;
    for id in LOCAL + 1..total {
        let mut rng = streams.stream(&format!("sched/scenario/{}", id - LOCAL - 1));
        let mut toggles: Vec<(Seconds, usize)> = (0..SCENARIO_TOGGLES)
            .map(|_| (rng.random_range(0.0..sc.duration), rng.random_range(0..f.meters_per_station)))
            .collect();
        toggles.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (at, outlet) in toggles {
            engine.schedule_at(at, SchedEvent::Toggle { station: id, outlet })?;
        }
    }

    let mut state = State {
        config,
        commanded: vec![0.0; f.meters_per_station],
        stations,
        controllers,
        store: ServerStore::new(),
        uplink: SegmentStreams::derive(&streams, "sched/uplink"),
    };
    engine.run_until(sc.duration, |sched, ev| {
        let detail = state.handle(sched, &ev.payload, ev.at)?;
        serde_json::to_value(detail).map_err(handler_error)
    })?;
    Ok(engine.into_trace())
}

pub(super) fn analyze(config: &ExperimentConfig, trace: &EventTrace) -> Result<Analysis, ExperimentError> {
    let all: Vec<Detail> = details(trace)?;
    let sc = &config.sched;
    let mut messages = Table::new("messages", &["t", "station", "kind", "seq", "outlet", "payload"]);
    let mut allocations = Table::new("allocations", &["t", "station", "outlet", "amps"]);
    let mut scheduling_to = vec![0usize; 2 + sc.random_scenarios];
    let mut changes = 0usize;
    let mut changes_without_message = Vec::new();
    let mut violations = Vec::new();
    let mut effective = None;
    let mut last: [Vec<Amps>; 2] = [Vec::new(), Vec::new()];
    for (d, rec) in all.iter().zip(&trace.records) {
        for m in &d.sent {
            if m.kind.is_scheduling() {
                scheduling_to[m.station] += 1;
            }
            messages.push([
                rec.at.to_string(),
                m.station.to_string(),
                serde_json::to_value(m.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                m.seq.to_string(),
                m.meter.map_or(String::new(), |id| id.outlet.to_string()),
                serde_json::to_string(&m.payload).unwrap_or_default(),
            ]);
        }
        if let Some(n) = d.slot_change {
            changes += 1;
            if !d.sent.iter().any(|m| m.kind.is_scheduling() && m.station == SERVER_DRIVEN) {
                changes_without_message.push(n);
            }
        }
        if d.effective_at.is_some() {
            effective = d.effective_at;
        }
        for (station, now) in [(SERVER_DRIVEN, &d.server_driven), (LOCAL, &d.local)] {
            if &last[station] != now {
                for (outlet, amps) in now.iter().enumerate() {
                    allocations.push([rec.at.to_string(), station.to_string(), outlet.to_string(), amps.to_string()]);
                }
                last[station] = now.clone();
            }
        }
        violations.extend(d.violations.iter().cloned());
    }

    let local_scheduling: usize = scheduling_to[LOCAL..].iter().sum();
    let slot = sc.round_robin.slot_length;
    let mut a = Analysis::default();
    a.checks.push(Check::new(
        "locality",
        local_scheduling == 0,
        format!("{local_scheduling} scheduling messages to locally scheduled stations"),
    ));
    a.checks.push(Check::new(
        "server_driven_messages",
        changes > 0 && changes_without_message.is_empty(),
        format!(
            "{changes} slot changes, {} scheduling messages, uncovered slots {changes_without_message:?}",
            scheduling_to[SERVER_DRIVEN]
        ),
    ));
    a.checks.push(Check::new(
        "circuit_safety",
        violations.is_empty(),
        format!("{} violations across {} stations", violations.len(), scheduling_to.len()),
    ));
    let on_boundary = effective.is_some_and(|t: Seconds| (t / slot).fract() == 0.0);
    a.checks.push(Check::new(
        "mode_at_slot_boundary",
        on_boundary,
        format!("mode effective at {effective:?} with {slot} s slots"),
    ));
    a.summary = json!({
        "slots": slot_index(slot, sc.duration),
        "slot_changes": changes,
        "scheduling_messages": {
            "server_driven": scheduling_to[SERVER_DRIVEN],
            "local": scheduling_to[LOCAL],
            "random_scenarios": scheduling_to[LOCAL + 1..].iter().sum::<usize>(),
        },
        "local_mode": sc.local_mode,
        "mode_effective_at": effective,
        "random_scenarios": sc.random_scenarios,
        "violations": violations,
    });
    a.tables.push(messages);
    a.tables.push(allocations);
    Ok(a)
}
