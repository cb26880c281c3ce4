//! Duty-cycle changes with adaptive and fixed waiting on the same draws.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{details, handler_error, mean, Analysis, Check, ExperimentConfig, ExperimentError, Table};
use crate::control::{
    change_duty_cycle, compute_t_waiting, current_to_duty, DutyCycleChange, DutyCycleOptions, DutyOutcome, ServerStore,
    WaitPolicy,
};
use crate::domain::{Amps, ChargingStation, RelayState, Seconds};
use crate::latency::{SegmentStreams, StationLinks};
use crate::sim::{Engine, EventTrace, RngStreams};

/// Spacing between steps; every step runs on its own station, so this only
/// keeps the trace readable.
const STEP_SPACING: Seconds = 60.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum DutyEvent {
    Step {
        index: usize,
        i_init: Amps,
        i_final: Amps,
        sweep: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Run {
    t_ev: Seconds,
    t_waiting: Seconds,
    outcome: DutyOutcome,
    reads: usize,
    first_read_ok: bool,
    total_latency: Seconds,
    final_amps: Option<Amps>,
}

impl Run {
    fn from_change(c: &DutyCycleChange, tolerance: Amps) -> Self {
        Self {
            t_ev: c.t_ev,
            t_waiting: c.t_waiting,
            outcome: c.outcome,
            reads: c.reads.len(),
            first_read_ok: c.reads.first().is_some_and(|r| (r.amps - c.i_final).abs() <= tolerance),
            total_latency: c.total_latency(),
            final_amps: c.reads.last().map(|r| r.amps),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StepDetail {
    index: usize,
    sweep: bool,
    i_init: Amps,
    i_final: Amps,
    adaptive: Run,
    fixed: Run,
}

fn fixed_wait(config: &ExperimentConfig) -> Seconds {
    let d = &config.duty;
    d.fixed_wait
        .unwrap_or_else(|| compute_t_waiting(config.fleet.ev.settle_cap, &d.options.budget))
}

/// A station with one vehicle on outlet 0, settled at `i_init` well before `t`.
fn station(config: &ExperimentConfig, i_init: Amps, t: Seconds) -> Result<ChargingStation, String> {
    let f = &config.fleet;
    let mut s = ChargingStation::new(0, f.meters_per_station, f.circuit_limit, f.link);
    s.volts = f.volts;
    let setup = t - STEP_SPACING;
    s.plug(0, f.ev, setup).map_err(handler_error)?;
    s.set_allocation(0, i_init, setup).map_err(handler_error)?;
    s.apply_relay(0, RelayState::On, setup).map_err(handler_error)?;
    s.set_settle_scale(0, config.duty.settle_scale).map_err(handler_error)?;
    Ok(s)
}

fn steps(config: &ExperimentConfig, streams: &RngStreams) -> Vec<DutyEvent> {
    let d = &config.duty;
    let mut out = Vec::new();
    let mut delta = 0.0;
    while delta <= d.max_step + 1e-9 {
        out.push(DutyEvent::Step {
            index: out.len(),
            i_init: d.base_current,
            i_final: d.base_current + delta,
            sweep: true,
        });
        delta += d.step;
    }
    let lo = d.base_current;
    let hi = config.fleet.ev.max_current.min(config.fleet.circuit_limit);
    let mut rng = streams.stream("duty/random");
    for _ in 0..d.random_steps {
        let mut pick = || (rng.random_range(lo..=hi) * 10.0).round() / 10.0;
        let (i_init, i_final) = (pick(), pick());
        out.push(DutyEvent::Step {
            index: out.len(),
            i_init,
            i_final,
            sweep: false,
        });
    }
    out
}

pub(super) fn simulate(config: &ExperimentConfig) -> Result<EventTrace, ExperimentError> {
    let streams = RngStreams::new(config.seed);
    let d = &config.duty;
    let adaptive = DutyCycleOptions {
        wait: WaitPolicy::Adaptive,
        ..d.options
    };
    let fixed = DutyCycleOptions {
        wait: WaitPolicy::Fixed(fixed_wait(config)),
        ..d.options
    };
    let mut engine: Engine<DutyEvent> = Engine::new(config.seed, config.digest());
    let all = steps(config, &streams);
    let end = all.len() as f64 * STEP_SPACING;
    for (i, step) in all.into_iter().enumerate() {
        engine.schedule_at((i + 1) as f64 * STEP_SPACING, step)?;
    }
    engine.run_until(end, |_, ev| {
        let DutyEvent::Step {
            index,
            i_init,
            i_final,
            sweep,
        } = ev.payload;
        let duty = current_to_duty(i_final).map_err(handler_error)?;
        let seg = SegmentStreams::derive(&streams, &format!("duty/{index}"));
        let run = |opts: &DutyCycleOptions| -> Result<Run, String> {
            let mut s = station(config, i_init, ev.at)?;
            let mut links = StationLinks::new(&config.links, s.link, seg.clone());
            let mut store = ServerStore::new();
            let c = change_duty_cycle(&mut store, &mut s, 0, duty, &mut links, opts, ev.at).map_err(handler_error)?;
            Ok(Run::from_change(&c, opts.tolerance))
        };
        let detail = StepDetail {
            index,
            sweep,
            i_init,
            i_final,
            adaptive: run(&adaptive)?,
            fixed: run(&fixed)?,
        };
        serde_json::to_value(detail).map_err(handler_error)
    })?;
    Ok(engine.into_trace())
}

pub(super) fn analyze(config: &ExperimentConfig, trace: &EventTrace) -> Result<Analysis, ExperimentError> {
    let steps: Vec<StepDetail> = details(trace)?;
    let mut table = Table::new(
        "duty",
        &[
            "index",
            "sweep",
            "i_init_a",
            "i_final_a",
            "t_ev_s",
            "adaptive_wait_s",
            "adaptive_outcome",
            "adaptive_reads",
            "adaptive_latency_s",
            "fixed_wait_s",
            "fixed_outcome",
            "fixed_reads",
            "fixed_latency_s",
        ],
    );
    let outcome = |o: DutyOutcome| serde_json::to_value(o).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    for s in &steps {
        table.push([
            s.index.to_string(),
            s.sweep.to_string(),
            s.i_init.to_string(),
            s.i_final.to_string(),
            s.adaptive.t_ev.to_string(),
            s.adaptive.t_waiting.to_string(),
            outcome(s.adaptive.outcome),
            s.adaptive.reads.to_string(),
            s.adaptive.total_latency.to_string(),
            s.fixed.t_waiting.to_string(),
            outcome(s.fixed.outcome),
            s.fixed.reads.to_string(),
            s.fixed.total_latency.to_string(),
        ]);
    }

    let bound = fixed_wait(config);
    let sweep: Vec<&StepDetail> = steps.iter().filter(|s| s.sweep).collect();
    let random: Vec<&StepDetail> = steps.iter().filter(|s| !s.sweep).collect();
    let reference = compute_t_waiting(6.0, &crate::latency::TimingBudget::worst_case());
    let max_adaptive = sweep.iter().map(|s| s.adaptive.t_waiting).fold(0.0, f64::max);
    let unconfirmed: Vec<usize> = sweep
        .iter()
        .filter(|s| s.adaptive.outcome != DutyOutcome::Confirmed)
        .map(|s| s.index)
        .collect();

    let mut a = Analysis::default();
    a.checks.push(Check::new(
        "reference_wait",
        reference == 3.5,
        format!("t_waiting(t_ev = 6 s, t_3g = 5 s) = {reference} s"),
    ));
    a.checks.push(Check::new(
        "adaptive_within_fixed_bound",
        !sweep.is_empty() && sweep.iter().all(|s| s.adaptive.t_waiting <= bound),
        format!("max adaptive wait {max_adaptive} s, fixed bound {bound} s over {} sweep points", sweep.len()),
    ));
    a.checks.push(Check::new(
        "sweep_confirmed",
        !sweep.is_empty() && unconfirmed.is_empty(),
        if unconfirmed.is_empty() {
            format!("{} of {} sweep points confirmed", sweep.len(), sweep.len())
        } else {
            format!("unconfirmed sweep steps: {unconfirmed:?}")
        },
    ));

    let group = |xs: &[&StepDetail]| {
        let pick = |f: &dyn Fn(&Run) -> f64, run: &dyn Fn(&StepDetail) -> &Run| mean(xs.iter().map(|s| f(run(s))));
        let first_ok = |run: &dyn Fn(&StepDetail) -> &Run| xs.iter().filter(|s| run(s).first_read_ok).count();
        json!({
            "steps": xs.len(),
            "adaptive": {
                "mean_wait_s": pick(&|r| r.t_waiting, &|s| &s.adaptive),
                "mean_latency_s": pick(&|r| r.total_latency, &|s| &s.adaptive),
                "first_read_confirmed": first_ok(&|s| &s.adaptive),
                "confirmed": xs.iter().filter(|s| s.adaptive.outcome == DutyOutcome::Confirmed).count(),
            },
            "fixed": {
                "mean_wait_s": pick(&|r| r.t_waiting, &|s| &s.fixed),
                "mean_latency_s": pick(&|r| r.total_latency, &|s| &s.fixed),
                "first_read_confirmed": first_ok(&|s| &s.fixed),
                "confirmed": xs.iter().filter(|s| s.fixed.outcome == DutyOutcome::Confirmed).count(),
            },
        })
    };
    a.summary = json!({
        "fixed_wait_s": bound,
        "reference_wait_s": reference,
        "settle_scale": config.duty.settle_scale,
        "sweep": group(&sweep),
        "random": group(&random),
    });
    a.tables.push(table);
    Ok(a)
}
