//! How old the server's readings get under push mode, for a few periods.
//!
//! `cargo run --example push_staleness`

use picsim::experiment::{run, CommandKind, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for period in [10.0, 30.0, 120.0] {
        let mut config = ExperimentConfig::default();
        config.pic.push_period = period;
        config.compare.retrievals = 10;
        let out = run(CommandKind::CompareProtocols, &config)?;
        let s = &out.analysis.summary["staleness"];
        println!(
            "period {period:>5} s: max staleness {:.2} s, bound {:.2} s, {} violations in {} probes",
            s["max_s"].as_f64().unwrap_or(f64::NAN),
            s["bound_s"].as_f64().unwrap_or(f64::NAN),
            s["violations"],
            s["probes"]
        );
    }
    Ok(())
}
