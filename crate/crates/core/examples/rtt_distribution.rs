//! A week of 5-minute round-trip probes over 3G, WiFi and Ethernet.
//!
//! `cargo run --example rtt_distribution`

use picsim::experiment::{run, CommandKind, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = run(CommandKind::RttDist, &ExperimentConfig::default())?;
    for (name, h) in &out.analysis.histograms {
        if !name.ends_with("_network") || name.contains("location") {
            continue;
        }
        let modes: Vec<String> = h.modes().iter().map(|m| format!("{m:.2}")).collect();
        println!("{name:<22} {} samples, modes at [{}] s", h.counts().iter().sum::<u64>(), modes.join(", "));
    }
    let eth = &out.analysis.summary["ethernet"];
    println!("ethernet median total (network + meter): {:.3} s", eth["total_median"].as_f64().unwrap_or(f64::NAN));
    for c in &out.analysis.checks {
        println!("  [{}] {}", if c.passed { "ok" } else { "!!" }, c.detail);
    }
    Ok(())
}
