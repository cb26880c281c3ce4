//! Legacy per-meter pull against the PIC, at the cellular worst case and
//! on the default stochastic links.
//!
//! `cargo run --example compare_protocols`

use picsim::experiment::{run, CommandKind, ExperimentConfig};
use picsim::latency::TimingBudget;
use picsim::proto::{legacy_retrieval_time, push_cycle_time, t_save};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let worst = TimingBudget::worst_case();
    println!(
        "closed form at t_3g = 5 s: legacy {} s, push cycle {} s, saving {} s",
        legacy_retrieval_time(&worst, 4),
        push_cycle_time(&worst, 4),
        t_save(&worst)
    );

    for preset in ["worst-case-3g", "default"] {
        let mut config = ExperimentConfig::preset(preset)?;
        config.compare.retrievals = 2_000;
        let out = run(CommandKind::CompareProtocols, &config)?;
        let s = &out.analysis.summary;
        println!("\n{preset}");
        println!("  mean wall time: {}", s["mean_wall_s"]);
        println!("  speedup:        {}", s["speedup"]);
        println!("  savings:        {}", s["savings_s"]);
    }
    Ok(())
}
