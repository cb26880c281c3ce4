use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use picsim::experiment::{self, CommandKind, ExperimentConfig, ExperimentError, OutputFormat, Verdict};

#[derive(Parser)]
#[command(name = "picsim", version, about = "Charging-station retrieval and scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Week of round-trip probes per link; histograms and mode detection.
    RttDist(RunArgs),
    /// Legacy pull, PIC pull and PIC push on shared latency draws.
    CompareProtocols(RunArgs),
    /// Duty-cycle changes with adaptive and fixed waiting.
    DutyCycle(RunArgs),
    /// Server-driven against local scheduling, with a circuit audit.
    LocalSched(RunArgs),
    /// Re-run a recorded trace and compare digests.
    Replay {
        trace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: default, worst-case-3g, zero-latency, ethernet-colocated.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Exit with status 3 when any built-in check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

fn load(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: CommandKind, args: &RunArgs) -> ExitCode {
    let config = match load(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let format = match args.format {
        Format::Csv => OutputFormat::Csv,
        Format::Svg => OutputFormat::Svg,
    };
    let out = match experiment::run(command, &config).and_then(|o| o.write_all(&args.out, format).map(|_| o)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for c in &out.analysis.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("trace digest {}", out.trace.digest());
    println!("wrote {}", args.out.display());
    if args.check && !out.analysis.all_passed() {
        return ExitCode::from(EXIT_CHECK);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::RttDist(a) => run(CommandKind::RttDist, &a),
        Command::CompareProtocols(a) => run(CommandKind::CompareProtocols, &a),
        Command::DutyCycle(a) => run(CommandKind::DutyCycle, &a),
        Command::LocalSched(a) => run(CommandKind::LocalSched, &a),
        Command::Replay { trace } => match experiment::replay_file(&trace) {
            Ok(Verdict::Identical { digest }) => {
                println!("identical {digest}");
                ExitCode::SUCCESS
            }
            Ok(Verdict::Diverged {
                recorded,
                replayed,
                reason,
            }) => {
                println!("diverged: {reason}\n  recorded {recorded}\n  replayed {replayed}");
                ExitCode::from(EXIT_CHECK)
            }
            Err(ExperimentError::Config(e)) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
