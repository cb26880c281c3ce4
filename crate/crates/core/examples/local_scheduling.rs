//! A server-scheduled station against one running round-robin locally.
//!
//! `cargo run --example local_scheduling`

use picsim::experiment::{run, CommandKind, ExperimentConfig};
use picsim::sched::{round_robin_step, RoundRobinConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rr = RoundRobinConfig::default();
    let plugged = [true, true, false, true];
    for slot in 0..4 {
        let t = slot as f64 * rr.slot_length;
        println!("slot {slot}: {:?}", round_robin_step(&rr, &plugged, t));
    }

    let out = run(CommandKind::LocalSched, &ExperimentConfig::default())?;
    println!("{}", serde_json::to_string_pretty(&out.analysis.summary["scheduling_messages"])?);
    for c in &out.analysis.checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
    Ok(())
}
