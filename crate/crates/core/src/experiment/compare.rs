//! Legacy pull, PIC pull and PIC push on shared latency draws, plus a
//! push-mode run probed for staleness.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{details, handler_error, mean, Analysis, Check, ExperimentConfig, ExperimentError, Table};
use crate::control::ServerStore;
use crate::domain::{ChargingStation, Seconds};
use crate::latency::{SegmentStreams, StationLinks, TimingBudget};
use crate::pic_fw::{PicState, SimMeterBus};
use crate::proto::{
    legacy_pull, legacy_retrieval_time, pic_pull, push_consume, push_cycle_time, speedup, t_save, Message,
    PullOptions,
};
use crate::sim::{Engine, EventTrace, RngStreams, Scheduler};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum CompareEvent {
    Retrieval { i: usize },
    Timer { n: u64 },
    MainLoop,
    Deliver { seq: u64 },
    Probe { k: u64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Pull {
    wall: Seconds,
    requests: usize,
    max_staleness: Option<Seconds>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RetrievalDetail {
    i: usize,
    legacy: Pull,
    legacy_status: Pull,
    pic: Pull,
    /// Collection plus uplink for one push.
    push_cycle: Seconds,
    push_staleness: Option<Seconds>,
    /// Analytic means at the retrieval instant: full network round trip
    /// and one local bus hop.
    mean_3g: Seconds,
    mean_ethernet: Seconds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbeDetail {
    k: u64,
    max_staleness: Option<Seconds>,
    bound: Seconds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Detail {
    Retrieval(RetrievalDetail),
    Timer { push_period: Seconds },
    MainLoop { collections: usize, busy_until: Seconds, packets: Vec<u64> },
    Deliver { seq: u64, max_staleness: Option<Seconds>, accepted: bool },
    Probe(ProbeDetail),
}

struct State<'c> {
    config: &'c ExperimentConfig,
    streams: RngStreams,
    station: ChargingStation,
    template: PicState,
    // push-mode run
    push_pic: PicState,
    push_bus: SegmentStreams,
    push_uplink: SegmentStreams,
    store: ServerStore,
    in_flight: BTreeMap<u64, Message>,
    bound: Seconds,
}

impl State<'_> {
    fn links(&self, rng: SegmentStreams) -> StationLinks<'_> {
        StationLinks::new(&self.config.links, self.station.link, rng)
    }

    fn retrieval(&mut self, i: usize, t: Seconds) -> Result<Detail, String> {
        let config = self.config;
        let seg = SegmentStreams::derive(&self.streams, &format!("retrieval/{i}"));
        let mut store = ServerStore::new();
        let summarize = |r: crate::proto::RetrievalResult| Pull {
            wall: r.wall_time,
            requests: r.request_count,
            max_staleness: r.max_staleness(),
        };

        let power_only = PullOptions {
            include_status: false,
            ..config.compare.pull
        };
        let with_status = PullOptions {
            include_status: true,
            ..config.compare.pull
        };
        let legacy = legacy_pull(&mut store, &self.station, &mut self.links(seg.clone()), &power_only, t).map_err(handler_error)?;
        let legacy_status =
            legacy_pull(&mut store, &self.station, &mut self.links(seg.clone()), &with_status, t).map_err(handler_error)?;

        // The pulled PIC refreshes its cache on its own timer; the last
        // refresh happened one push period before the request.
        let mut pic = self.template.clone();
        let mut bus_links = self.links(seg.clone());
        let mut bus = SimMeterBus::new(&self.station, &mut bus_links);
        if pic.serve_cache() {
            pic.collect_all(&mut bus, t - pic.push_period());
        }
        let pulled = pic_pull(
            &mut store,
            &self.station,
            &mut pic,
            &mut bus,
            &mut self.links(seg.clone()),
            &config.compare.pull,
            t,
        )
        .map_err(handler_error)?;

        let mut pusher = self.template.clone();
        let mut bus_links = self.links(seg.clone());
        let mut bus = SimMeterBus::new(&self.station, &mut bus_links);
        pusher.on_timer_interrupt();
        let out = pusher.main_loop_step(&mut bus, t);
        let packet = out.messages.last().ok_or("push produced no packet")?;
        let rtt = self.links(seg).network_rtt(packet.sent_at);
        let delivered = packet.sent_at + rtt / 2.0;
        let report = push_consume(&mut store, packet, delivered).map_err(handler_error)?;

        let means = TimingBudget::from_means(&config.links, t);
        Ok(Detail::Retrieval(RetrievalDetail {
            i,
            legacy: summarize(legacy),
            legacy_status: summarize(legacy_status),
            pic: summarize(pulled),
            push_cycle: delivered - t,
            push_staleness: report.max(),
            mean_3g: config.links.t_server_cloud + config.links.t_cloud + config.links.uplink(self.station.link).mean_at(t),
            mean_ethernet: means.t_ethernet,
        }))
    }

    fn handle(&mut self, sched: &mut Scheduler<CompareEvent>, ev: &CompareEvent, now: Seconds) -> Result<Detail, String> {
        let config = self.config;
        let push_end = config.compare.push_duration;
        match *ev {
            CompareEvent::Retrieval { i } => self.retrieval(i, now),
            CompareEvent::Timer { n } => {
                self.push_pic.on_timer_interrupt();
                let next = (n + 1) as f64 * self.push_pic.push_period();
                if next < push_end {
                    sched.schedule_at(next, CompareEvent::Timer { n: n + 1 }).map_err(handler_error)?;
                }
                sched
                    .schedule_at(now.max(self.push_pic.busy_until()), CompareEvent::MainLoop)
                    .map_err(handler_error)?;
                Ok(Detail::Timer {
                    push_period: self.push_pic.push_period(),
                })
            }
            CompareEvent::MainLoop => {
                let mut bus_links = StationLinks::new(&config.links, self.station.link, self.push_bus.clone());
                let mut bus = SimMeterBus::new(&self.station, &mut bus_links);
                let out = self.push_pic.main_loop_step(&mut bus, now);
                self.push_bus = bus_links.rng;
                let mut uplink = StationLinks::new(&config.links, self.station.link, self.push_uplink.clone());
                let mut packets = Vec::new();
                for m in out.messages {
                    let rtt = uplink.network_rtt(m.sent_at);
                    sched
                        .schedule_at(m.sent_at + rtt / 2.0, CompareEvent::Deliver { seq: m.seq })
                        .map_err(handler_error)?;
                    packets.push(m.seq);
                    self.in_flight.insert(m.seq, m);
                }
                self.push_uplink = uplink.rng;
                Ok(Detail::MainLoop {
                    collections: out.collections,
                    busy_until: out.busy_until,
                    packets,
                })
            }
            CompareEvent::Deliver { seq } => {
                let packet = self.in_flight.remove(&seq).ok_or("delivery of unknown packet")?;
                let (accepted, max_staleness) = match push_consume(&mut self.store, &packet, now) {
                    Ok(report) => (true, report.max()),
                    Err(_) => (false, None),
                };
                Ok(Detail::Deliver {
                    seq,
                    max_staleness,
                    accepted,
                })
            }
            CompareEvent::Probe { k } => {
                let next = (k + 1) as f64 * config.probe_interval;
                if next <= push_end {
                    sched.schedule_at(next, CompareEvent::Probe { k: k + 1 }).map_err(handler_error)?;
                }
                let max_staleness = self
                    .store
                    .staleness_at(self.station.id, now)
                    .into_iter()
                    .map(|(_, s)| s)
                    .try_fold(0.0f64, |acc, s| s.map(|s| acc.max(s)));
                Ok(Detail::Probe(ProbeDetail {
                    k,
                    max_staleness: max_staleness.filter(|_| !self.store.readings(self.station.id).is_empty()),
                    bound: self.bound,
                }))
            }
        }
    }
}

pub(super) fn simulate(config: &ExperimentConfig) -> Result<EventTrace, ExperimentError> {
    let streams = RngStreams::new(config.seed);
    let station = config.fleet.build_station(0).map_err(|e| ExperimentError::Analysis(e.to_string()))?;
    let mut setup_links = StationLinks::new(&config.links, station.link, SegmentStreams::derive(&streams, "pic/setup"));
    let mut bus = SimMeterBus::new(&station, &mut setup_links);
    let template = PicState::startup_init(station.id, &mut bus, config.pic)
        .map_err(|e| ExperimentError::Analysis(e.to_string()))?;
    let meters = station.meter_count();
    let bound = config.pic.push_period + push_cycle_time(&TimingBudget::upper_bounds(&config.links), meters);
    let mut state = State {
        config,
        push_pic: template.clone(),
        template,
        push_bus: SegmentStreams::derive(&streams, "push/bus"),
        push_uplink: SegmentStreams::derive(&streams, "push/uplink"),
        streams,
        station,
        store: ServerStore::new(),
        in_flight: BTreeMap::new(),
        bound,
    };
    let mut engine: Engine<CompareEvent> = Engine::new(config.seed, config.digest());
    let n = config.compare.retrievals;
    let spacing = config.duration / n as f64;
    for i in 0..n {
        engine.schedule_at(i as f64 * spacing, CompareEvent::Retrieval { i })?;
    }
    engine.schedule_at(0.0, CompareEvent::Timer { n: 0 })?;
    engine.schedule_at(config.probe_interval, CompareEvent::Probe { k: 1 })?;
    let end = config.duration.max(config.compare.push_duration);
    engine.run_until(end, |sched, ev| {
        let detail = state.handle(sched, &ev.payload, ev.at)?;
        serde_json::to_value(detail).map_err(handler_error)
    })?;
    Ok(engine.into_trace())
}

fn ratio(x: Option<f64>) -> serde_json::Value {
    match x {
        Some(v) => json!(v),
        None => json!("undefined"),
    }
}

pub(super) fn analyze(config: &ExperimentConfig, trace: &EventTrace) -> Result<Analysis, ExperimentError> {
    let all: Vec<Detail> = details(trace)?;
    let mut retrievals = Table::new(
        "retrievals",
        &[
            "i",
            "t",
            "legacy_wall_s",
            "legacy_requests",
            "legacy_status_wall_s",
            "legacy_status_requests",
            "pic_pull_wall_s",
            "pic_pull_requests",
            "pic_pull_max_staleness_s",
            "push_cycle_s",
            "push_requests",
        ],
    );
    let mut staleness = Table::new("staleness", &["probe", "t", "max_staleness_s", "bound_s", "violation"]);
    let mut rs = Vec::new();
    let mut probes = Vec::new();
    for (d, rec) in all.iter().zip(&trace.records) {
        match d {
            Detail::Retrieval(r) => {
                retrievals.push([
                    r.i.to_string(),
                    rec.at.to_string(),
                    r.legacy.wall.to_string(),
                    r.legacy.requests.to_string(),
                    r.legacy_status.wall.to_string(),
                    r.legacy_status.requests.to_string(),
                    r.pic.wall.to_string(),
                    r.pic.requests.to_string(),
                    r.pic.max_staleness.map_or(String::new(), |s| s.to_string()),
                    r.push_cycle.to_string(),
                    "0".to_string(),
                ]);
                rs.push(r);
            }
            Detail::Probe(p) => {
                let violation = p.max_staleness.is_none_or(|s| s > p.bound);
                staleness.push([
                    p.k.to_string(),
                    rec.at.to_string(),
                    p.max_staleness.map_or(String::new(), |s| s.to_string()),
                    p.bound.to_string(),
                    violation.to_string(),
                ]);
                probes.push((rec.at, p, violation));
            }
            _ => {}
        }
    }

    let meters = config.fleet.meters_per_station;
    let m = |f: &dyn Fn(&RetrievalDetail) -> f64| mean(rs.iter().map(|r| f(r))).unwrap_or(0.0);
    let legacy = m(&|r| r.legacy.wall);
    let legacy_status = m(&|r| r.legacy_status.wall);
    let pic = m(&|r| r.pic.wall);
    let push = m(&|r| r.push_cycle);
    let empirical_savings = legacy - push;
    let analytic_savings = m(&|r| {
        t_save(&TimingBudget {
            t_3g: r.mean_3g,
            t_ethernet: r.mean_ethernet,
            ..TimingBudget::default()
        })
    });
    let savings_err = (empirical_savings - analytic_savings).abs();
    let speedup_power = speedup(legacy, pic);
    let speedup_status = speedup(legacy_status, pic);
    let violations = probes.iter().filter(|p| p.2).count();
    let max_staleness = probes.iter().filter_map(|p| p.1.max_staleness).fold(0.0, f64::max);
    let worst = TimingBudget::worst_case();
    let worst_pull = TimingBudget {
        t_3g: 4.5,
        t_metering: 0.5,
        ..TimingBudget::default()
    };

    let mut a = Analysis::default();
    let counts_ok = rs.iter().all(|r| {
        r.legacy.requests == meters && r.legacy_status.requests == 2 * meters && r.pic.requests == 1
    });
    a.checks.push(Check::new(
        "request_counts",
        counts_ok,
        format!("legacy {meters}, legacy with status {}, PIC pull 1, push 0", 2 * meters),
    ));
    let tol = config.compare.savings_tolerance;
    // 1 ms floor: on colocated links both sides sit at float noise around 0
    a.checks.push(Check::new(
        "savings_identity",
        savings_err <= tol * analytic_savings.abs() + 1e-3,
        format!("empirical {empirical_savings:.4} s vs analytic {analytic_savings:.4} s (tolerance {tol})"),
    ));
    a.checks.push(Check::new(
        "staleness_bound",
        violations == 0 && !probes.is_empty(),
        format!("{} probes, {violations} over bound, max {max_staleness:.4} s", probes.len()),
    ));
    if let Some(e) = config.compare.expect_speedups {
        for (name, got, want) in [
            ("speedup_power_only", speedup_power, e.power_only),
            ("speedup_with_status", speedup_status, e.with_status),
        ] {
            let ok = got.is_some_and(|g| (g - want).abs() <= e.tolerance * want);
            a.checks.push(Check::new(
                name,
                ok,
                format!("{} vs expected {want} ± {}%", got.map_or("undefined".into(), |g| format!("{g:.4}")), e.tolerance * 100.0),
            ));
        }
    }

    let budget = TimingBudget::from_means(&config.links, 0.0);
    a.summary = json!({
        "retrievals": rs.len(),
        "mean_wall_s": {
            "legacy": legacy,
            "legacy_with_status": legacy_status,
            "pic_pull": pic,
            "push_cycle": push,
        },
        "speedup": {
            "power_only": ratio(speedup_power),
            "with_status": ratio(speedup_status),
        },
        "savings_s": {
            "empirical": empirical_savings,
            "analytic": analytic_savings,
            "abs_error": savings_err,
        },
        "staleness": {
            "probes": probes.len(),
            "violations": violations,
            "max_s": max_staleness,
            "bound_s": probes.first().map(|p| p.1.bound),
        },
        "closed_form": {
            "config_budget": budget,
            "legacy_retrieval_s": legacy_retrieval_time(&budget, meters),
            "push_cycle_s": push_cycle_time(&budget, meters),
            "t_save_s": t_save(&budget),
            "worst_case_legacy_s": legacy_retrieval_time(&worst_pull, meters),
            "worst_case_push_cycle_s": push_cycle_time(&worst, meters),
            "worst_case_t_save_s": t_save(&worst),
        },
    });
    a.tables.push(retrievals);
    a.tables.push(staleness);
    Ok(a)
}
