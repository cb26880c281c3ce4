//! One duty-cycle change by hand, then the full sweep comparing adaptive
//! and fixed waiting.
//!
//! `cargo run --example duty_cycle`

use picsim::control::{change_duty_cycle, compute_t_waiting, current_to_duty, DutyCycleOptions, ServerStore};
use picsim::domain::{ChargingStation, EvModel, RelayState};
use picsim::experiment::{run, CommandKind, ExperimentConfig};
use picsim::latency::{LinkKind, NetworkModels, SegmentStreams, StationLinks, TimingBudget};
use picsim::sim::RngStreams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("worst-case wait for a 6 s settle: {} s", compute_t_waiting(6.0, &TimingBudget::worst_case()));

    let mut station = ChargingStation::new(0, 4, 40.0, LinkKind::ThreeG);
    station.plug(0, EvModel::default(), 0.0)?;
    station.set_allocation(0, 8.0, 0.0)?;
    station.apply_relay(0, RelayState::On, 0.0)?;
    let models = NetworkModels::default();
    let mut links = StationLinks::new(&models, LinkKind::ThreeG, SegmentStreams::derive(&RngStreams::new(3), "duty"));
    let change = change_duty_cycle(
        &mut ServerStore::new(),
        &mut station,
        0,
        current_to_duty(16.0)?,
        &mut links,
        &DutyCycleOptions::default(),
        60.0,
    )?;
    println!(
        "8 -> 16 A: t_ev {:.3} s, wait {:.3} s, {:?} after {} read(s), {:.3} s total",
        change.t_ev,
        change.t_waiting,
        change.outcome,
        change.reads.len(),
        change.total_latency()
    );

    let out = run(CommandKind::DutyCycle, &ExperimentConfig::default())?;
    println!("sweep:  {}", out.analysis.summary["sweep"]);
    println!("random: {}", out.analysis.summary["random"]);
    Ok(())
}
