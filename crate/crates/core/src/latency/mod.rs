//! Delay models for every network segment between the server and a meter.
//!
//! A round trip is `t_server_cloud + t_cloud + uplink + metering`, where the
//! uplink is the station's Ethernet, WiFi or 3G segment and metering is the
//! time a meter (including its local bus hop) needs to produce a reading.
//! Each segment is a mixture of truncated normals; the 3G default has four
//! modes. Locations are scaled by an hour-of-week multiplier while the upper
//! bound stays fixed, so busy and quiet hours share one support.

mod histogram;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Seconds;
use crate::sim::RngStreams;

pub use histogram::{chi_square_homogeneity, empirical_histogram, ChiSquare, Histogram, ModeDetector};

pub const HOURS_PER_WEEK: usize = 168;
pub const SECONDS_PER_WEEK: Seconds = 604_800.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error("mixture needs at least one component")]
    NoComponents,
    #[error("component {index}: weight {weight} must be positive")]
    BadWeight { index: usize, weight: f64 },
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("component {index}: location {location} and spread {spread} must be finite and non-negative")]
    BadComponent { index: usize, location: f64, spread: f64 },
    #[error("component {index}: location {location} exceeds hard_max {hard_max}")]
    LocationAboveMax { index: usize, location: f64, hard_max: f64 },
    #[error("hard_max {0} must be positive for a stochastic model")]
    BadHardMax(f64),
    #[error("diurnal profile needs {HOURS_PER_WEEK} multipliers, got {0}")]
    DiurnalLength(usize),
    #[error("diurnal multiplier {value} at hour {hour} outside (0, 1]")]
    DiurnalRange { hour: usize, value: f64 },
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("histogram needs at least one sample")]
    NoSamples,
    #[error("histograms have different binning")]
    BinningMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Ethernet,
    #[serde(rename = "wifi")]
    WiFi,
    #[serde(rename = "3g")]
    ThreeG,
    /// PIC-to-meter segment inside a station.
    LocalBus,
}

impl LinkKind {
    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Ethernet => "ethernet",
            LinkKind::WiFi => "wifi",
            LinkKind::ThreeG => "3g",
            LinkKind::LocalBus => "local_bus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub location: Seconds,
    pub spread: Seconds,
}

impl MixtureComponent {
    pub fn new(weight: f64, location: Seconds, spread: Seconds) -> Self {
        Self {
            weight,
            location,
            spread,
        }
    }
}

/// Hour-of-week multipliers on component locations. Hour 0 is Sunday 00:00.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiurnalRepr", into = "DiurnalRepr")]
pub struct DiurnalProfile {
    scale: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiurnalRepr {
    /// Empty means flat.
    #[serde(default)]
    scale: Vec<f64>,
}

impl TryFrom<DiurnalRepr> for DiurnalProfile {
    type Error = LatencyError;
    fn try_from(r: DiurnalRepr) -> Result<Self, Self::Error> {
        if r.scale.is_empty() {
            return Ok(Self::flat());
        }
        Self::new(r.scale)
    }
}

impl From<DiurnalProfile> for DiurnalRepr {
    fn from(p: DiurnalProfile) -> Self {
        let scale = if p.is_flat() { Vec::new() } else { p.scale };
        Self { scale }
    }
}

impl Default for DiurnalProfile {
    fn default() -> Self {
        Self::flat()
    }
}

impl DiurnalProfile {
    pub fn new(scale: Vec<f64>) -> Result<Self, LatencyError> {
        if scale.len() != HOURS_PER_WEEK {
            return Err(LatencyError::DiurnalLength(scale.len()));
        }
        for (hour, &value) in scale.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(LatencyError::DiurnalRange { hour, value });
            }
        }
        Ok(Self { scale })
    }

    pub fn flat() -> Self {
        Self {
            scale: vec![1.0; HOURS_PER_WEEK],
        }
    }

    /// Quieter network in the small hours of Sunday and Monday.
    pub fn weekend_lull() -> Self {
        let mut scale = vec![1.0; HOURS_PER_WEEK];
        for day in [0usize, 1] {
            for hour in 2..8 {
                scale[day * 24 + hour] = 0.85;
            }
        }
        Self { scale }
    }

    pub fn is_flat(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn hour_of_week(at: Seconds) -> usize {
        let hours = (at.max(0.0) / 3600.0).floor() as u64;
        (hours % HOURS_PER_WEEK as u64) as usize
    }

    pub fn multiplier(&self, at: Seconds) -> f64 {
        self.scale[Self::hour_of_week(at)]
    }

    pub fn scales(&self) -> &[f64] {
        &self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatencyModelRepr", into = "LatencyModelRepr")]
pub struct LatencyModel {
    kind: LinkKind,
    components: Vec<MixtureComponent>,
    hard_max: Seconds,
    diurnal: DiurnalProfile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatencyModelRepr {
    kind: LinkKind,
    components: Vec<MixtureComponent>,
    hard_max: Seconds,
    #[serde(default)]
    diurnal: DiurnalProfile,
}

impl TryFrom<LatencyModelRepr> for LatencyModel {
    type Error = LatencyError;
    fn try_from(r: LatencyModelRepr) -> Result<Self, Self::Error> {
        Self::new(r.kind, r.components, r.hard_max, r.diurnal)
    }
}

impl From<LatencyModel> for LatencyModelRepr {
    fn from(m: LatencyModel) -> Self {
        Self {
            kind: m.kind,
            components: m.components,
            hard_max: m.hard_max,
            diurnal: m.diurnal,
        }
    }
}

const MAX_REJECTIONS: usize = 1000;

impl LatencyModel {
    pub fn new(
        kind: LinkKind,
        components: Vec<MixtureComponent>,
        hard_max: Seconds,
        diurnal: DiurnalProfile,
    ) -> Result<Self, LatencyError> {
        if components.is_empty() {
            return Err(LatencyError::NoComponents);
        }
        let mut sum = 0.0;
        for (index, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(LatencyError::BadWeight {
                    index,
                    weight: c.weight,
                });
            }
            if !(c.location >= 0.0 && c.spread >= 0.0 && c.location.is_finite() && c.spread.is_finite()) {
                return Err(LatencyError::BadComponent {
                    index,
                    location: c.location,
                    spread: c.spread,
                });
            }
            if c.location > hard_max {
                return Err(LatencyError::LocationAboveMax {
                    index,
                    location: c.location,
                    hard_max,
                });
            }
            sum += c.weight;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LatencyError::WeightSum(sum));
        }
        let stochastic = components.iter().any(|c| c.spread > 0.0);
        if !(hard_max >= 0.0) || (stochastic && hard_max <= 0.0) || !hard_max.is_finite() {
            return Err(LatencyError::BadHardMax(hard_max));
        }
        Ok(Self {
            kind,
            components,
            hard_max,
            diurnal,
        })
    }

    /// Always returns `value`.
    pub fn deterministic(kind: LinkKind, value: Seconds) -> Self {
        Self::new(
            kind,
            vec![MixtureComponent::new(1.0, value, 0.0)],
            value,
            DiurnalProfile::flat(),
        )
        .expect("a single non-negative point mass is valid")
    }

    /// Switched Ethernet under one default gateway: tens of microseconds.
    pub fn default_ethernet() -> Self {
        Self::new(
            LinkKind::Ethernet,
            vec![MixtureComponent::new(1.0, 60e-6, 20e-6)],
            1e-3,
            DiurnalProfile::flat(),
        )
        .expect("valid default")
    }

    /// Ethernet shifted by 20 ms. Placeholder: only "slightly slower than
    /// Ethernet" is known about the measured WiFi segment.
    pub fn default_wifi() -> Self {
        let shift = 0.020;
        Self::new(
            LinkKind::WiFi,
            vec![MixtureComponent::new(1.0, 60e-6 + shift, 20e-6)],
            1e-3 + shift,
            DiurnalProfile::flat(),
        )
        .expect("valid default")
    }

    /// Four-mode cellular round trip. Synthetic fit to the reported shape
    /// (four peaks, 4.5 s worst case), not measured parameters.
    pub fn default_three_g() -> Self {
        Self::new(
            LinkKind::ThreeG,
            vec![
                MixtureComponent::new(0.4, 0.8, 0.15),
                MixtureComponent::new(0.3, 1.5, 0.15),
                MixtureComponent::new(0.2, 2.5, 0.15),
                MixtureComponent::new(0.1, 4.0, 0.15),
            ],
            4.5,
            DiurnalProfile::weekend_lull(),
        )
        .expect("valid default")
    }

    pub fn default_local_bus() -> Self {
        Self::new(
            LinkKind::LocalBus,
            vec![MixtureComponent::new(1.0, 60e-6, 20e-6)],
            1e-3,
            DiurnalProfile::flat(),
        )
        .expect("valid default")
    }

    /// Meter read time: a dominant mode just above 0.2 s and a slower tail,
    /// bounded by 0.5 s.
    pub fn default_metering() -> Self {
        Self::new(
            LinkKind::LocalBus,
            vec![
                MixtureComponent::new(0.85, 0.21, 0.015),
                MixtureComponent::new(0.15, 0.30, 0.04),
            ],
            0.5,
            DiurnalProfile::flat(),
        )
        .expect("valid default")
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn hard_max(&self) -> Seconds {
        self.hard_max
    }

    pub fn diurnal(&self) -> &DiurnalProfile {
        &self.diurnal
    }

    pub fn with_diurnal(mut self, diurnal: DiurnalProfile) -> Self {
        self.diurnal = diurnal;
        self
    }

    pub fn is_deterministic(&self) -> bool {
        self.components.iter().all(|c| c.spread == 0.0) && self.components.len() == 1
    }

    /// `Σ wᵢ·locationᵢ` scaled by the multiplier in force at `at`.
    /// Ignores the (small) truncation shift.
    pub fn mean_at(&self, at: Seconds) -> Seconds {
        self.mean_unscaled() * self.diurnal.multiplier(at)
    }

    pub fn mean_unscaled(&self) -> Seconds {
        self.components.iter().map(|c| c.weight * c.location).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, at: Seconds) -> Seconds {
        let component = self.pick(rng);
        let location = component.location * self.diurnal.multiplier(at);
        if component.spread == 0.0 {
            return location.min(self.hard_max);
        }
        let normal = Normal::new(location, component.spread).expect("spread checked positive");
        for _ in 0..MAX_REJECTIONS {
            let x = normal.sample(rng);
            if x > 0.0 && x <= self.hard_max {
                return x;
            }
        }
        // only reachable for a component far outside its support
        location.clamp(f64::MIN_POSITIVE, self.hard_max)
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &MixtureComponent {
        if self.components.len() == 1 {
            return &self.components[0];
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("non-empty")
    }
}

/// Delay models for every segment, plus the fixed server-side terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModels {
    pub t_server_cloud: Seconds,
    pub t_cloud: Seconds,
    pub ethernet: LatencyModel,
    pub wifi: LatencyModel,
    pub three_g: LatencyModel,
    pub local_bus: LatencyModel,
    pub metering: LatencyModel,
    /// Relay-state read at a meter; no power measurement involved.
    pub status_read: LatencyModel,
}

impl Default for NetworkModels {
    fn default() -> Self {
        Self {
            t_server_cloud: 0.0,
            t_cloud: 0.0,
            ethernet: LatencyModel::default_ethernet(),
            wifi: LatencyModel::default_wifi(),
            three_g: LatencyModel::default_three_g(),
            local_bus: LatencyModel::default_local_bus(),
            metering: LatencyModel::default_metering(),
            status_read: LatencyModel::default_local_bus(),
        }
    }
}

impl NetworkModels {
    /// Every segment a fixed delay; 3G and metering as given, everything
    /// else zero.
    pub fn fixed(t_3g: Seconds, t_metering: Seconds) -> Self {
        Self {
            t_server_cloud: 0.0,
            t_cloud: 0.0,
            ethernet: LatencyModel::deterministic(LinkKind::Ethernet, 0.0),
            wifi: LatencyModel::deterministic(LinkKind::WiFi, 0.0),
            three_g: LatencyModel::deterministic(LinkKind::ThreeG, t_3g),
            local_bus: LatencyModel::deterministic(LinkKind::LocalBus, 0.0),
            metering: LatencyModel::deterministic(LinkKind::LocalBus, t_metering),
            status_read: LatencyModel::deterministic(LinkKind::LocalBus, 0.0),
        }
    }

    pub fn uplink(&self, kind: LinkKind) -> &LatencyModel {
        match kind {
            LinkKind::Ethernet => &self.ethernet,
            LinkKind::WiFi => &self.wifi,
            LinkKind::ThreeG => &self.three_g,
            LinkKind::LocalBus => &self.local_bus,
        }
    }
}

/// Scalar timing symbols used by the closed-form retrieval and waiting-time
/// expressions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingBudget {
    pub t_server_cloud: Seconds,
    pub t_cloud: Seconds,
    pub t_ethernet: Seconds,
    pub t_wifi: Seconds,
    pub t_3g: Seconds,
    pub t_metering: Seconds,
}

impl TimingBudget {
    /// Cellular worst case: 5 s round trip, 0.5 s metering, negligible LAN.
    pub fn worst_case() -> Self {
        Self {
            t_3g: 5.0,
            t_metering: 0.5,
            ..Self::default()
        }
    }

    /// One-way station-to-cloud time, taken as half the 3G round trip.
    pub fn t_3g_uplink(&self) -> Seconds {
        0.5 * self.t_3g
    }

    pub fn is_valid(&self) -> bool {
        [
            self.t_server_cloud,
            self.t_cloud,
            self.t_ethernet,
            self.t_wifi,
            self.t_3g,
            self.t_metering,
        ]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite())
    }

    /// Analytic means of the models at time `at`.
    pub fn from_means(models: &NetworkModels, at: Seconds) -> Self {
        Self {
            t_server_cloud: models.t_server_cloud,
            t_cloud: models.t_cloud,
            t_ethernet: models.local_bus.mean_at(at),
            t_wifi: models.wifi.mean_at(at),
            t_3g: models.three_g.mean_at(at),
            t_metering: models.metering.mean_at(at),
        }
    }

    /// Hard maxima of the models: no draw exceeds these.
    pub fn upper_bounds(models: &NetworkModels) -> Self {
        Self {
            t_server_cloud: models.t_server_cloud,
            t_cloud: models.t_cloud,
            t_ethernet: models.local_bus.hard_max(),
            t_wifi: models.wifi.hard_max(),
            t_3g: models.three_g.hard_max(),
            t_metering: models.metering.hard_max(),
        }
    }

    /// Full round trip over 3G including the meter read.
    pub fn round_trip_3g(&self) -> Seconds {
        self.t_server_cloud + self.t_cloud + self.t_3g + self.t_metering
    }
}

/// Independent random streams for each segment of one station's path.
#[derive(Debug, Clone)]
pub struct SegmentStreams {
    pub uplink: ChaCha8Rng,
    pub metering: ChaCha8Rng,
    pub local_bus: ChaCha8Rng,
    pub status: ChaCha8Rng,
}

impl SegmentStreams {
    pub fn derive(streams: &RngStreams, prefix: &str) -> Self {
        Self {
            uplink: streams.stream(&format!("{prefix}/uplink")),
            metering: streams.stream(&format!("{prefix}/metering")),
            local_bus: streams.stream(&format!("{prefix}/local_bus")),
            status: streams.stream(&format!("{prefix}/status")),
        }
    }
}

/// One station's view of the network: its uplink kind, the models and the
/// random streams its draws come from.
#[derive(Debug, Clone)]
pub struct StationLinks<'m> {
    pub models: &'m NetworkModels,
    pub uplink: LinkKind,
    pub rng: SegmentStreams,
}

impl<'m> StationLinks<'m> {
    pub fn new(models: &'m NetworkModels, uplink: LinkKind, rng: SegmentStreams) -> Self {
        Self { models, uplink, rng }
    }

    /// Server to station and back, without any meter work.
    pub fn network_rtt(&mut self, at: Seconds) -> Seconds {
        self.models.t_server_cloud + self.models.t_cloud + self.models.uplink(self.uplink).sample(&mut self.rng.uplink, at)
    }

    pub fn metering(&mut self, at: Seconds) -> Seconds {
        self.models.metering.sample(&mut self.rng.metering, at)
    }

    pub fn local_bus(&mut self, at: Seconds) -> Seconds {
        self.models.local_bus.sample(&mut self.rng.local_bus, at)
    }

    pub fn status_read(&mut self, at: Seconds) -> Seconds {
        self.models.status_read.sample(&mut self.rng.status, at)
    }

    pub fn round_trip(&mut self, at: Seconds) -> Seconds {
        self.network_rtt(at) + self.metering(at)
    }
}

/// `t_server_cloud + t_cloud + sample(link) + sample(metering)`.
pub fn round_trip_time(models: &NetworkModels, link: LinkKind, rng: &mut SegmentStreams, at: Seconds) -> Seconds {
    models.t_server_cloud
        + models.t_cloud
        + models.uplink(link).sample(&mut rng.uplink, at)
        + models.metering.sample(&mut rng.metering, at)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(label: &str) -> ChaCha8Rng {
        RngStreams::new(5).stream(label)
    }

    #[test]
    fn deterministic_model_always_returns_location() {
        let m = LatencyModel::deterministic(LinkKind::LocalBus, 0.2);
        let mut r = rng("det");
        for i in 0..100 {
            assert_eq!(m.sample(&mut r, i as f64 * 997.0), 0.2);
        }
    }

    #[test]
    fn three_g_default_bounded_by_worst_case() {
        let m = LatencyModel::default_three_g();
        assert_eq!(m.components().len(), 4);
        let mut r = rng("3g");
        for i in 0..100_000 {
            let x = m.sample(&mut r, i as f64 * 6.048);
            assert!(x > 0.0 && x <= 4.5, "{x}");
        }
    }

    #[test]
    fn ethernet_default_in_microsecond_band() {
        let m = LatencyModel::default_ethernet();
        let mut r = rng("eth");
        for i in 0..10_000 {
            let x = m.sample(&mut r, i as f64);
            assert!(x > 0.0 && x <= 1e-3);
        }
    }

    #[test]
    fn wifi_slightly_slower_than_ethernet() {
        let eth = LatencyModel::default_ethernet();
        let wifi = LatencyModel::default_wifi();
        assert!(wifi.mean_unscaled() > eth.mean_unscaled());
        assert!(wifi.mean_unscaled() - eth.mean_unscaled() < 0.05);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = LatencyModel::new(
            LinkKind::ThreeG,
            vec![MixtureComponent::new(0.5, 1.0, 0.1), MixtureComponent::new(0.4, 2.0, 0.1)],
            4.5,
            DiurnalProfile::flat(),
        )
        .unwrap_err();
        assert!(matches!(err, LatencyError::WeightSum(_)));
        assert!(LatencyModel::new(LinkKind::ThreeG, vec![], 1.0, DiurnalProfile::flat()).is_err());
        assert!(LatencyModel::new(
            LinkKind::ThreeG,
            vec![MixtureComponent::new(1.0, 5.0, 0.1)],
            4.5,
            DiurnalProfile::flat()
        )
        .is_err());
    }

    #[test]
    fn diurnal_rejects_bad_profiles() {
        assert!(DiurnalProfile::new(vec![1.0; 24]).is_err());
        let mut v = vec![1.0; HOURS_PER_WEEK];
        v[5] = 1.2;
        assert!(matches!(
            DiurnalProfile::new(v),
            Err(LatencyError::DiurnalRange { hour: 5, .. })
        ));
    }

    #[test]
    fn hour_of_week_wraps() {
        assert_eq!(DiurnalProfile::hour_of_week(0.0), 0);
        assert_eq!(DiurnalProfile::hour_of_week(3599.9), 0);
        assert_eq!(DiurnalProfile::hour_of_week(3600.0), 1);
        assert_eq!(DiurnalProfile::hour_of_week(SECONDS_PER_WEEK + 7200.0), 2);
    }

    #[test]
    fn diurnal_scaling_keeps_support() {
        let m = LatencyModel::default_three_g();
        let quiet = 2.5 * 3600.0; // Sunday 02:30
        let busy = 12.0 * 3600.0;
        assert!(m.diurnal().multiplier(quiet) < 1.0);
        let mut r = rng("support");
        let mut max_quiet: f64 = 0.0;
        let mut max_busy: f64 = 0.0;
        for _ in 0..100_000 {
            max_quiet = max_quiet.max(m.sample(&mut r, quiet));
            max_busy = max_busy.max(m.sample(&mut r, busy));
        }
        assert!(max_quiet <= m.hard_max());
        assert!(max_busy <= m.hard_max());
        assert!(m.mean_at(quiet) < m.mean_at(busy));
    }

    #[test]
    fn ethernet_round_trip_is_metering() {
        let models = NetworkModels {
            metering: LatencyModel::deterministic(LinkKind::LocalBus, 0.2),
            ..NetworkModels::default()
        };
        let mut s = SegmentStreams::derive(&RngStreams::new(1), "rt");
        let rtt = round_trip_time(&models, LinkKind::Ethernet, &mut s, 0.0);
        assert!((rtt - 0.2).abs() < 1e-3);
    }

    #[test]
    fn round_trip_all_zero() {
        let models = NetworkModels::fixed(0.0, 0.0);
        let mut s = SegmentStreams::derive(&RngStreams::new(1), "rt");
        assert_eq!(round_trip_time(&models, LinkKind::ThreeG, &mut s, 0.0), 0.0);
    }

    #[test]
    fn round_trip_worst_case_three_g() {
        let models = NetworkModels::fixed(4.5, 0.5);
        let mut s = SegmentStreams::derive(&RngStreams::new(1), "rt");
        assert_eq!(round_trip_time(&models, LinkKind::ThreeG, &mut s, 0.0), 5.0);
        // 20 s over four round trips, less the 4.5 s cellular leg
        assert_eq!(20.0 / 4.0 - 4.5, 0.5);
    }

    #[test]
    fn budget_uplink_is_half_round_trip() {
        let b = TimingBudget::worst_case();
        assert_eq!(b.t_3g_uplink(), 2.5);
        assert!(b.is_valid());
        let bad = TimingBudget {
            t_3g: -1.0,
            ..TimingBudget::default()
        };
        assert!(!bad.is_valid());
    }

    #[test]
    fn model_serde_validates() {
        let m = LatencyModel::default_three_g();
        let json = serde_json::to_string(&m).unwrap();
        let back: LatencyModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"kind":"3g","components":[{"weight":0.7,"location":1.0,"spread":0.1}],"hard_max":4.5}"#;
        assert!(serde_json::from_str::<LatencyModel>(bad).is_err());
    }
}
