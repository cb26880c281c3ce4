//! Records a run, replays it from disk and shows a tampered copy failing.
//!
//! `cargo run --example replay_trace`

use picsim::experiment::{replay_file, run, CommandKind, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("picsim-replay-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trace.jsonl");
    run(CommandKind::DutyCycle, &ExperimentConfig::default())?.write_trace(&path)?;
    println!("{path:?}: {:?}", replay_file(&path)?);

    let text = std::fs::read_to_string(&path)?;
    let tampered = dir.join("tampered.jsonl");
    std::fs::write(&tampered, text.replacen("\"confirmed\"", "\"unsettled\"", 1))?;
    println!("{tampered:?}: {:?}", replay_file(&tampered)?);
    Ok(())
}
