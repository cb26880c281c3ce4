//! Experiment harness: runs a command over a configuration, records the
//! event trace and derives every table and summary from that trace.

mod compare;
mod config;
mod duty;
mod local;
mod output;
mod rtt;

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::latency::Histogram;
use crate::sim::{EventTrace, SimError, TraceError, TraceFile};

pub use config::{
    CompareConfig, ConfigError, DutyConfig, ExpectedSpeedups, ExperimentConfig, FleetConfig, RttConfig, SchedConfig,
    CONFIG_VERSION, DAY, PRESETS, WEEK,
};
pub use output::{render_svg, OutputFormat, Table};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("trace does not match its command: {0}")]
    Analysis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    RttDist,
    CompareProtocols,
    DutyCycle,
    LocalSched,
}

impl CommandKind {
    pub const ALL: [CommandKind; 4] = [
        CommandKind::RttDist,
        CommandKind::CompareProtocols,
        CommandKind::DutyCycle,
        CommandKind::LocalSched,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommandKind::RttDist => "rtt-dist",
            CommandKind::CompareProtocols => "compare-protocols",
            CommandKind::DutyCycle => "duty-cycle",
            CommandKind::LocalSched => "local-sched",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CommandKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ExperimentError::UnknownCommand(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Tables, histograms, summary and checks computed from a trace.
#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub tables: Vec<Table>,
    pub histograms: Vec<(String, Histogram)>,
    pub summary: Value,
    pub checks: Vec<Check>,
}

impl Analysis {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub command: CommandKind,
    pub config: ExperimentConfig,
    pub trace: EventTrace,
    pub analysis: Analysis,
}

impl RunOutput {
    pub fn write_trace(&self, path: &Path) -> Result<(), ExperimentError> {
        let config = serde_json::to_value(&self.config).expect("configs serialize");
        let out = BufWriter::new(File::create(path)?);
        self.trace.write_jsonl(out, self.command.name(), &config)?;
        Ok(())
    }

    /// Writes the trace, every table as CSV, the summary and, for SVG
    /// output, one chart per histogram.
    pub fn write_all(&self, dir: &Path, format: OutputFormat) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        self.write_trace(&dir.join("trace.jsonl"))?;
        for t in &self.analysis.tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
        let summary = serde_json::json!({
            "command": self.command.name(),
            "seed": self.config.seed,
            "config_digest": self.trace.config_digest,
            "trace_digest": self.trace.digest(),
            "summary": self.analysis.summary,
            "checks": self.analysis.checks,
        });
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("summaries serialize") + "\n",
        )?;
        if format == OutputFormat::Svg {
            for (name, h) in &self.analysis.histograms {
                std::fs::write(dir.join(format!("{name}.svg")), render_svg(name, h))?;
            }
        }
        Ok(())
    }
}

/// Runs `command` and analyses its trace.
pub fn run(command: CommandKind, config: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    config.validate()?;
    let trace = simulate(command, config)?;
    let analysis = analyze(command, config, &trace)?;
    Ok(RunOutput {
        command,
        config: config.clone(),
        trace,
        analysis,
    })
}

pub fn simulate(command: CommandKind, config: &ExperimentConfig) -> Result<EventTrace, ExperimentError> {
    match command {
        CommandKind::RttDist => rtt::simulate(config),
        CommandKind::CompareProtocols => compare::simulate(config),
        CommandKind::DutyCycle => duty::simulate(config),
        CommandKind::LocalSched => local::simulate(config),
    }
}

/// Post-processes a trace. Uses nothing but the trace and the config it
/// embeds.
pub fn analyze(command: CommandKind, config: &ExperimentConfig, trace: &EventTrace) -> Result<Analysis, ExperimentError> {
    match command {
        CommandKind::RttDist => rtt::analyze(config, trace),
        CommandKind::CompareProtocols => compare::analyze(config, trace),
        CommandKind::DutyCycle => duty::analyze(config, trace),
        CommandKind::LocalSched => local::analyze(config, trace),
    }
}

/// Parses each record's detail as `T`.
fn details<T: serde::de::DeserializeOwned>(trace: &EventTrace) -> Result<Vec<T>, ExperimentError> {
    trace
        .records
        .iter()
        .map(|r| serde_json::from_value(r.detail.clone()).map_err(|e| ExperimentError::Analysis(format!("seq {}: {e}", r.seq))))
        .collect()
}

fn handler_error(e: impl fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Identical { digest: String },
    Diverged { recorded: String, replayed: String, reason: String },
}

impl Verdict {
    pub fn is_identical(&self) -> bool {
        matches!(self, Verdict::Identical { .. })
    }
}

pub fn read_trace(path: &Path) -> Result<TraceFile, ExperimentError> {
    let input = BufReader::new(File::open(path)?);
    Ok(EventTrace::read_jsonl(input)?)
}

/// Re-runs the trace's command with its embedded seed and config and
/// compares digests.
pub fn replay(file: &TraceFile) -> Result<Verdict, ExperimentError> {
    let command: CommandKind = file.command.parse()?;
    let config: ExperimentConfig = serde_path_to_error::deserialize(&file.config).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    config.validate()?;
    let replayed = simulate(command, &config)?.digest();
    let in_file = file.trace.digest();
    let reason = if file.trace.seed != config.seed {
        Some("header seed differs from the embedded config")
    } else if in_file != file.recorded_digest {
        Some("trace contents do not match the recorded digest")
    } else if replayed != file.recorded_digest {
        Some("re-run produced a different trace")
    } else {
        None
    };
    Ok(match reason {
        None => Verdict::Identical { digest: replayed },
        Some(reason) => Verdict::Diverged {
            recorded: file.recorded_digest.clone(),
            replayed,
            reason: reason.to_string(),
        },
    })
}

pub fn replay_file(path: &Path) -> Result<Verdict, ExperimentError> {
    replay(&read_trace(path)?)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}
