//! Experiment configuration: a versioned TOML file, or a named preset.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{current_to_duty, DutyCycleOptions};
use crate::domain::{
    AlgorithmMode, Amps, ChargingStation, DomainError, EvModel, RelayState, Seconds, DEFAULT_CIRCUIT_LIMIT,
    DEFAULT_LINE_VOLTAGE, DEFAULT_METERS_PER_STATION,
};
use crate::latency::{LatencyModel, LinkKind, NetworkModels};
use crate::pic_fw::PicConfig;
use crate::proto::{Protocol, PullOptions};
use crate::sched::{validate_config, RoundRobinConfig, ScheduleTimeConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const WEEK: Seconds = 7.0 * 86_400.0;
pub const DAY: Seconds = 86_400.0;

pub const PRESETS: &[&str] = &["default", "worst-case-3g", "zero-latency", "ethernet-colocated"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}` (known: default, worst-case-3g, zero-latency, ethernet-colocated)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub stations: usize,
    pub meters_per_station: usize,
    pub circuit_limit: Amps,
    pub volts: f64,
    pub link: LinkKind,
    pub protocol: Protocol,
    /// Outlets (from 0) with a vehicle plugged in at the start.
    pub plugged: usize,
    /// Allocation of each plugged outlet at the start.
    pub initial_current: Amps,
    pub ev: EvModel,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            stations: 1,
            meters_per_station: DEFAULT_METERS_PER_STATION,
            circuit_limit: DEFAULT_CIRCUIT_LIMIT,
            volts: DEFAULT_LINE_VOLTAGE,
            link: LinkKind::ThreeG,
            protocol: Protocol::PicPush,
            plugged: DEFAULT_METERS_PER_STATION,
            initial_current: 8.0,
            ev: EvModel::default(),
        }
    }
}

impl FleetConfig {
    pub fn build_station(&self, id: usize) -> Result<ChargingStation, DomainError> {
        let mut s = ChargingStation::new(id, self.meters_per_station, self.circuit_limit, self.link);
        s.volts = self.volts;
        for outlet in 0..self.plugged.min(self.meters_per_station) {
            s.plug(outlet, self.ev, 0.0)?;
            s.set_allocation(outlet, self.initial_current, 0.0)?;
            s.apply_relay(outlet, RelayState::On, 0.0)?;
        }
        Ok(s)
    }
}

/// Expected speedups to check the comparison against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedSpeedups {
    pub power_only: f64,
    pub with_status: f64,
    /// Relative tolerance.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub retrievals: usize,
    pub pull: PullOptions,
    /// Length of the push-mode run.
    pub push_duration: Seconds,
    /// Relative tolerance for empirical vs. analytic savings.
    pub savings_tolerance: f64,
    pub expect_speedups: Option<ExpectedSpeedups>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            retrievals: 10_000,
            pull: PullOptions::default(),
            push_duration: DAY,
            savings_tolerance: 0.02,
            expect_speedups: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutyConfig {
    /// Current flowing before each swept step.
    pub base_current: Amps,
    pub max_step: Amps,
    pub step: Amps,
    /// Extra steps with random start and end currents.
    pub random_steps: usize,
    pub options: DutyCycleOptions,
    /// Fixed wait to compare against; by default the worst case for the
    /// configured EV and budget.
    pub fixed_wait: Option<Seconds>,
    /// How much slower than modelled the vehicles settle.
    pub settle_scale: f64,
}

impl Default for DutyConfig {
    fn default() -> Self {
        Self {
            base_current: 6.0,
            max_step: 32.0,
            step: 1.0,
            random_steps: 200,
            options: DutyCycleOptions::default(),
            fixed_wait: None,
            settle_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedConfig {
    pub round_robin: RoundRobinConfig,
    pub schedule_time: ScheduleTimeConfig,
    /// Algorithm the server selects for the locally scheduled station.
    pub local_mode: AlgorithmMode,
    /// Vehicles plugged in all day.
    pub evs: usize,
    pub duration: Seconds,
    pub mode_select_at: Seconds,
    /// Extra randomized plug/unplug days audited for circuit safety.
    pub random_scenarios: usize,
}

impl Default for SchedConfig {
    fn default() -> Self {
        Self {
            round_robin: RoundRobinConfig::default(),
            schedule_time: ScheduleTimeConfig::default(),
            local_mode: AlgorithmMode::RoundRobin,
            evs: 3,
            duration: DAY,
            mode_select_at: 0.0,
            random_scenarios: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RttConfig {
    pub links: Vec<LinkKind>,
    pub bins: usize,
    /// Identically configured 3G links probed on separate streams.
    pub location_replicas: usize,
    pub alpha: f64,
}

impl Default for RttConfig {
    fn default() -> Self {
        Self {
            links: vec![LinkKind::Ethernet, LinkKind::WiFi, LinkKind::ThreeG],
            bins: 60,
            location_replicas: 3,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    /// Simulated span of the probe run.
    pub duration: Seconds,
    pub probe_interval: Seconds,
    pub fleet: FleetConfig,
    pub links: NetworkModels,
    pub pic: PicConfig,
    pub compare: CompareConfig,
    pub duty: DutyConfig,
    pub sched: SchedConfig,
    pub rtt: RttConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            duration: WEEK,
            probe_interval: 300.0,
            fleet: FleetConfig::default(),
            links: NetworkModels::default(),
            pic: PicConfig::default(),
            compare: CompareConfig::default(),
            duty: DutyConfig::default(),
            sched: SchedConfig::default(),
            rtt: RttConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        match name {
            "default" => {}
            "worst-case-3g" => {
                c.links = NetworkModels::fixed(4.5, 0.5);
                c.pic.serve_cache = true;
                c.compare.expect_speedups = Some(ExpectedSpeedups {
                    power_only: 4.4,
                    with_status: 8.4,
                    tolerance: 0.05,
                });
            }
            "zero-latency" => {
                c.links = NetworkModels::fixed(0.0, 0.0);
                c.pic.serve_cache = true;
            }
            "ethernet-colocated" => {
                c.fleet.link = LinkKind::Ethernet;
                c.links.metering = LatencyModel::deterministic(LinkKind::LocalBus, 0.2);
                c.pic.serve_cache = true;
            }
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(c)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(s).map_err(|e| ConfigError::Parse {
            path: String::new(),
            message: e.to_string(),
        })?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("configs serialize");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("version {} not supported (expected {CONFIG_VERSION})", self.version));
        }
        if !(self.duration > 0.0) || !(self.probe_interval > 0.0) {
            return bad("duration and probe_interval must be positive".into());
        }
        let f = &self.fleet;
        if f.stations == 0 || f.meters_per_station == 0 {
            return bad("fleet needs at least one station with one meter".into());
        }
        if f.plugged > f.meters_per_station {
            return bad(format!("fleet.plugged {} exceeds meters_per_station {}", f.plugged, f.meters_per_station));
        }
        if f.plugged as f64 * f.initial_current > f.circuit_limit {
            return bad("fleet.initial_current on every plugged outlet exceeds circuit_limit".into());
        }
        if !(self.pic.push_period > 0.0) {
            return bad("pic.push_period must be positive".into());
        }
        if self.compare.retrievals == 0 || !(self.compare.push_duration > 0.0) {
            return bad("compare.retrievals and compare.push_duration must be positive".into());
        }
        let d = &self.duty;
        if !(d.step > 0.0) || d.max_step < 0.0 || !(d.settle_scale > 0.0) {
            return bad("duty.step and duty.settle_scale must be positive, duty.max_step non-negative".into());
        }
        for amps in [d.base_current, d.base_current + d.max_step] {
            if current_to_duty(amps).is_err() || amps > f.ev.max_current || amps > f.circuit_limit {
                return bad(format!("duty sweep current {amps} A cannot be set on the configured EV"));
            }
        }
        if !d.options.budget.is_valid() {
            return bad("duty.options.budget values must be non-negative".into());
        }
        let s = &self.sched;
        s.round_robin
            .validate(f.circuit_limit)
            .map_err(|e| ConfigError::Invalid(format!("sched.round_robin: {e}")))?;
        if let Err(issues) = validate_config(&s.schedule_time, f.circuit_limit, f.meters_per_station) {
            return bad(format!("sched.schedule_time: {issues:?}"));
        }
        if s.evs > f.meters_per_station || !(s.duration > 0.0) {
            return bad("sched.evs must fit the station and sched.duration be positive".into());
        }
        if self.rtt.bins == 0 {
            return bad("rtt.bins must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn toml_round_trip() {
        for p in PRESETS {
            let c = ExperimentConfig::preset(p).unwrap();
            let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.digest(), c.digest());
        }
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = ExperimentConfig::from_toml_str("[fleet]\ncircuit_limt = 30\n").unwrap_err();
        match err {
            ConfigError::Parse { path, .. } => assert!(path.starts_with("fleet"), "{path}"),
            other => panic!("{other}"),
        }
        let err = ExperimentConfig::from_toml_str("[links.three_g]\nkind = \"3g\"\nhard_max = -1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn over_limit_schedule_rejected_at_load() {
        let text = r#"
[[sched.schedule_time.windows]]
outlet = 0
start = 3600.0
end = 18000.0
current = 16.0
[[sched.schedule_time.windows]]
outlet = 1
start = 7200.0
end = 21600.0
current = 16.0
[[sched.schedule_time.windows]]
outlet = 2
start = 14400.0
end = 32400.0
current = 16.0
"#;
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn digest_changes_with_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.digest(), b.digest());
    }
}
