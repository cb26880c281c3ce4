//! Local charging algorithms run by a station's controller: round-robin
//! time slots and fixed daily windows. Allocations are pure functions of
//! configuration, plug state and time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AlgorithmMode, Amps, ChargingStation, DomainError, RelayState, Seconds};

pub const DEFAULT_SLOT_LENGTH: Seconds = 900.0;
pub const SECONDS_PER_DAY: Seconds = 86_400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("slot length must be positive, got {0}")]
    SlotLength(Seconds),
    #[error("{max_concurrent} outlets at {per_active} A exceed the {limit} A circuit")]
    RoundRobinOverLimit { max_concurrent: usize, per_active: Amps, limit: Amps },
    #[error("schedule windows rejected: {0:?}")]
    Windows(Vec<ConfigIssue>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundRobinConfig {
    pub slot_length: Seconds,
    pub max_concurrent: usize,
    pub per_active_current: Amps,
}

impl Default for RoundRobinConfig {
    fn default() -> Self {
        Self {
            slot_length: DEFAULT_SLOT_LENGTH,
            max_concurrent: 2,
            per_active_current: 16.0,
        }
    }
}

impl RoundRobinConfig {
    pub fn validate(&self, circuit_limit: Amps) -> Result<(), SchedError> {
        if !(self.slot_length > 0.0) {
            return Err(SchedError::SlotLength(self.slot_length));
        }
        if self.max_concurrent as f64 * self.per_active_current > circuit_limit {
            return Err(SchedError::RoundRobinOverLimit {
                max_concurrent: self.max_concurrent,
                per_active: self.per_active_current,
                limit: circuit_limit,
            });
        }
        Ok(())
    }
}

pub fn slot_index(slot_length: Seconds, now: Seconds) -> u64 {
    (now / slot_length).floor().max(0.0) as u64
}

/// Start of the first slot at or after `t`.
pub fn next_slot_boundary(slot_length: Seconds, t: Seconds) -> Seconds {
    (t / slot_length).ceil() * slot_length
}

/// Activates `min(max_concurrent, n)` of the `n` plugged outlets, taking
/// them in cyclic order. The starting point advances by that count every
/// slot, keyed on absolute time.
pub fn round_robin_step(config: &RoundRobinConfig, plugged: &[bool], now: Seconds) -> Vec<Amps> {
    let mut alloc = vec![0.0; plugged.len()];
    let order: Vec<usize> = (0..plugged.len()).filter(|&i| plugged[i]).collect();
    let n = order.len();
    if n == 0 {
        return alloc;
    }
    let k = config.max_concurrent.min(n);
    let slot = slot_index(config.slot_length, now);
    let start = ((slot % n as u64) as usize * k) % n;
    for j in 0..k {
        alloc[order[(start + j) % n]] = config.per_active_current;
    }
    alloc
}

/// A daily charging window for one outlet. `start > end` wraps past
/// midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub outlet: usize,
    pub start: Seconds,
    pub end: Seconds,
    pub current: Amps,
}

impl Window {
    pub fn contains(&self, now: Seconds) -> bool {
        let tod = now.rem_euclid(SECONDS_PER_DAY);
        if self.start < self.end {
            self.start <= tod && tod < self.end
        } else {
            tod >= self.start || tod < self.end
        }
    }

    /// The window as one or two non-wrapping `[start, end)` pieces.
    fn pieces(&self) -> Vec<(Seconds, Seconds)> {
        if self.start < self.end {
            vec![(self.start, self.end)]
        } else {
            vec![(self.start, SECONDS_PER_DAY), (0.0, self.end)]
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleTimeConfig {
    pub windows: Vec<Window>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ConfigIssue {
    /// Overlapping windows draw `total` at time of day `at`.
    OverLimit { at: Seconds, total: Amps, limit: Amps },
    OutletOverlap { outlet: usize, at: Seconds },
    BadWindow { index: usize, reason: String },
}

/// Maximum of the summed window currents over the day and the first time
/// of day it occurs. Windows are half-open, so one ending exactly when
/// another starts does not overlap it.
fn peak(pieces: &[(Seconds, Seconds, Amps)]) -> (Seconds, Amps) {
    let mut edges: Vec<(Seconds, Amps)> = Vec::with_capacity(pieces.len() * 2);
    for &(s, e, amps) in pieces {
        edges.push((s, amps));
        edges.push((e, -amps));
    }
    // ends before starts at the same instant
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (mut best_at, mut best) = (0.0, 0.0);
    let mut total = 0.0;
    for (t, delta) in edges {
        total += delta;
        if total > best + 1e-9 {
            best = total;
            best_at = t;
        }
    }
    (best_at, best)
}

/// Checks window shapes, per-outlet overlap and the circuit limit at the
/// worst instant of the day.
pub fn validate_config(config: &ScheduleTimeConfig, circuit_limit: Amps, outlets: usize) -> Result<(), Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    for (index, w) in config.windows.iter().enumerate() {
        let in_day = |t: Seconds| (0.0..SECONDS_PER_DAY).contains(&t);
        let reason = if w.outlet >= outlets {
            Some(format!("outlet {} does not exist", w.outlet))
        } else if !in_day(w.start) || !in_day(w.end) {
            Some("start and end must be seconds of day in [0, 86400)".into())
        } else if w.start == w.end {
            Some("empty window".into())
        } else if !(w.current >= 0.0) {
            Some("negative current".into())
        } else {
            None
        };
        if let Some(reason) = reason {
            issues.push(ConfigIssue::BadWindow { index, reason });
        }
    }
    if !issues.is_empty() {
        return Err(issues);
    }
    for outlet in 0..outlets {
        let pieces: Vec<_> = config
            .windows
            .iter()
            .filter(|w| w.outlet == outlet)
            .flat_map(|w| w.pieces())
            .map(|(s, e)| (s, e, 1.0))
            .collect();
        let (at, count) = peak(&pieces);
        if count > 1.0 {
            issues.push(ConfigIssue::OutletOverlap { outlet, at });
        }
    }
    let pieces: Vec<_> = config
        .windows
        .iter()
        .flat_map(|w| w.pieces().into_iter().map(move |(s, e)| (s, e, w.current)))
        .collect();
    let (at, total) = peak(&pieces);
    if total > circuit_limit + 1e-9 {
        issues.push(ConfigIssue::OverLimit {
            at,
            total,
            limit: circuit_limit,
        });
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

pub fn schedule_time_step(config: &ScheduleTimeConfig, plugged: &[bool], now: Seconds) -> Vec<Amps> {
    let mut alloc = vec![0.0; plugged.len()];
    for w in &config.windows {
        if plugged.get(w.outlet).copied().unwrap_or(false) && w.contains(now) {
            alloc[w.outlet] = w.current;
        }
    }
    alloc
}

/// Applies an allocation to a station, lowering outlets before raising
/// others so the total never passes through an over-limit state.
pub fn apply_allocation(station: &mut ChargingStation, alloc: &[Amps], now: Seconds) -> Result<(), DomainError> {
    for (outlet, &target) in alloc.iter().enumerate() {
        let o = station.outlet(outlet)?;
        if target < o.allocated_current() || (target == 0.0 && o.relay() == RelayState::On) {
            if target == 0.0 {
                station.apply_relay(outlet, RelayState::Off, now)?;
            }
            station.set_allocation(outlet, target, now)?;
        }
    }
    for (outlet, &target) in alloc.iter().enumerate() {
        let o = station.outlet(outlet)?;
        if target > 0.0 && (target != o.allocation() || o.relay() == RelayState::Off) {
            station.set_allocation(outlet, target, now)?;
            station.apply_relay(outlet, RelayState::On, now)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingMode {
    pub mode: AlgorithmMode,
    pub effective_at: Seconds,
}

/// The station's own control unit. A newly delivered mode takes effect at
/// the next slot boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalController {
    mode: AlgorithmMode,
    pending: Option<PendingMode>,
    pub round_robin: RoundRobinConfig,
    pub schedule_time: ScheduleTimeConfig,
}

impl LocalController {
    pub fn new(round_robin: RoundRobinConfig, schedule_time: ScheduleTimeConfig) -> Self {
        Self {
            mode: AlgorithmMode::None,
            pending: None,
            round_robin,
            schedule_time,
        }
    }

    pub fn slot_length(&self) -> Seconds {
        self.round_robin.slot_length
    }

    pub fn pending(&self) -> Option<PendingMode> {
        self.pending
    }

    pub fn deliver(&mut self, mode: AlgorithmMode, at: Seconds) -> Seconds {
        self.mode = self.mode_at(at);
        let effective_at = next_slot_boundary(self.slot_length(), at);
        self.pending = Some(PendingMode { mode, effective_at });
        effective_at
    }

    pub fn mode_at(&self, now: Seconds) -> AlgorithmMode {
        match self.pending {
            Some(p) if p.effective_at <= now => p.mode,
            _ => self.mode,
        }
    }

    /// Local allocation at `now`, or `None` when the station waits for
    /// server commands.
    pub fn allocate(&self, plugged: &[bool], now: Seconds) -> Option<Vec<Amps>> {
        match self.mode_at(now) {
            AlgorithmMode::None => None,
            AlgorithmMode::RoundRobin => Some(round_robin_step(&self.round_robin, plugged, now)),
            AlgorithmMode::ScheduleTime => Some(schedule_time_step(&self.schedule_time, plugged, now)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::EvModel;
    use crate::latency::LinkKind;
    use proptest::prelude::*;

    const HOUR: Seconds = 3600.0;

    fn rr(k: usize) -> RoundRobinConfig {
        RoundRobinConfig {
            slot_length: 900.0,
            max_concurrent: k,
            per_active_current: 16.0,
        }
    }

    fn active_counts(config: &RoundRobinConfig, plugged: &[bool], slots: u64) -> Vec<usize> {
        let mut counts = vec![0; plugged.len()];
        for s in 0..slots {
            let a = round_robin_step(config, plugged, s as f64 * config.slot_length + 1.0);
            for (c, amps) in counts.iter_mut().zip(a) {
                *c += usize::from(amps > 0.0);
            }
        }
        counts
    }

    #[test]
    fn three_evs_one_at_a_time() {
        let plugged = [true, true, true, false];
        assert_eq!(active_counts(&rr(1), &plugged, 3), vec![1, 1, 1, 0]);
        assert_eq!(active_counts(&rr(1), &plugged, 30), vec![10, 10, 10, 0]);
    }

    #[test]
    fn single_ev_always_active() {
        let plugged = [false, false, true, false];
        assert_eq!(active_counts(&rr(2), &plugged, 17), vec![0, 0, 17, 0]);
    }

    #[test]
    fn five_plugged_two_at_a_time_is_fair() {
        let plugged = [true; 5];
        let counts = active_counts(&rr(2), &plugged, 50);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(counts.iter().sum::<usize>(), 100);
    }

    #[test]
    fn nobody_plugged() {
        assert_eq!(round_robin_step(&rr(2), &[false; 4], 0.0), vec![0.0; 4]);
    }

    #[test]
    fn round_robin_limit_checked() {
        assert!(rr(2).validate(40.0).is_ok());
        assert!(rr(3).validate(40.0).is_err());
    }

    fn w(outlet: usize, start_h: f64, end_h: f64, current: Amps) -> Window {
        Window {
            outlet,
            start: start_h * HOUR,
            end: end_h * HOUR,
            current,
        }
    }

    #[test]
    fn empty_windows_allocate_nothing() {
        let c = ScheduleTimeConfig::default();
        assert_eq!(schedule_time_step(&c, &[true; 4], 5.0), vec![0.0; 4]);
        assert!(validate_config(&c, 40.0, 4).is_ok());
    }

    #[test]
    fn overnight_window_wraps() {
        let c = ScheduleTimeConfig {
            windows: vec![w(1, 22.0, 6.0, 16.0)],
        };
        let plugged = [true; 4];
        assert_eq!(schedule_time_step(&c, &plugged, 23.0 * HOUR)[1], 16.0);
        assert_eq!(schedule_time_step(&c, &plugged, 2.0 * HOUR)[1], 16.0);
        assert_eq!(schedule_time_step(&c, &plugged, 6.0 * HOUR)[1], 0.0);
        assert_eq!(schedule_time_step(&c, &plugged, 12.0 * HOUR)[1], 0.0);
        assert_eq!(schedule_time_step(&c, &plugged, 22.0 * HOUR + 3.0 * SECONDS_PER_DAY)[1], 16.0);
        assert_eq!(schedule_time_step(&c, &[true, false, true, true], 23.0 * HOUR)[1], 0.0);
    }

    #[test]
    fn disjoint_windows_never_overlap() {
        let c = ScheduleTimeConfig {
            windows: vec![w(0, 0.0, 8.0, 32.0), w(1, 8.0, 16.0, 32.0)],
        };
        assert!(validate_config(&c, 40.0, 4).is_ok());
        for m in 0..(24 * 60) {
            let a = schedule_time_step(&c, &[true; 4], m as f64 * 60.0);
            assert!(!(a[0] > 0.0 && a[1] > 0.0));
        }
    }

    #[test]
    fn two_windows_fit_forty_amps() {
        let c = ScheduleTimeConfig {
            windows: vec![w(0, 1.0, 5.0, 16.0), w(1, 2.0, 6.0, 16.0)],
        };
        assert!(validate_config(&c, 40.0, 4).is_ok());
    }

    #[test]
    fn three_overlapping_windows_violate() {
        let c = ScheduleTimeConfig {
            windows: vec![w(0, 1.0, 5.0, 16.0), w(1, 2.0, 6.0, 16.0), w(2, 4.0, 9.0, 16.0)],
        };
        let issues = validate_config(&c, 40.0, 4).unwrap_err();
        assert_eq!(
            issues,
            vec![ConfigIssue::OverLimit {
                at: 4.0 * HOUR,
                total: 48.0,
                limit: 40.0
            }]
        );
    }

    #[test]
    fn same_outlet_overlap_rejected() {
        let c = ScheduleTimeConfig {
            windows: vec![w(0, 1.0, 5.0, 8.0), w(0, 23.0, 2.0, 8.0)],
        };
        let issues = validate_config(&c, 40.0, 4).unwrap_err();
        assert!(matches!(issues[0], ConfigIssue::OutletOverlap { outlet: 0, .. }));
    }

    #[test]
    fn malformed_windows_rejected() {
        let c = ScheduleTimeConfig {
            windows: vec![w(7, 1.0, 2.0, 8.0), w(0, 3.0, 3.0, 8.0), w(1, 1.0, 25.0, 8.0)],
        };
        assert_eq!(validate_config(&c, 40.0, 4).unwrap_err().len(), 3);
    }

    #[test]
    fn controller_switches_at_boundary() {
        let mut ctl = LocalController::new(rr(1), ScheduleTimeConfig::default());
        assert!(ctl.allocate(&[true; 4], 10.0).is_none());
        assert_eq!(ctl.deliver(AlgorithmMode::RoundRobin, 1000.0), 1800.0);
        assert!(ctl.allocate(&[true; 4], 1799.0).is_none());
        assert!(ctl.allocate(&[true; 4], 1800.0).is_some());
        // exactly on a boundary takes effect immediately
        assert_eq!(ctl.deliver(AlgorithmMode::None, 2700.0), 2700.0);
        assert_eq!(ctl.mode_at(2700.0), AlgorithmMode::None);
        assert_eq!(ctl.mode_at(2000.0), AlgorithmMode::RoundRobin);
    }

    /// Peak total by brute force: the total only changes at window starts,
    /// so the maximum is attained at one of them.
    fn brute_peak(c: &ScheduleTimeConfig) -> Amps {
        let plugged = [true; 8];
        c.windows
            .iter()
            .map(|w| schedule_time_step(c, &plugged, w.start).iter().sum::<Amps>())
            .fold(0.0, f64::max)
    }

    fn arb_windows() -> impl Strategy<Value = ScheduleTimeConfig> {
        prop::collection::vec((0usize..8, 0u32..96, 1u32..96, 1u32..5), 0..8).prop_map(|ws| ScheduleTimeConfig {
            windows: ws
                .into_iter()
                .enumerate()
                .map(|(i, (_, s, len, amps))| Window {
                    // one window per outlet so only the circuit check applies
                    outlet: i,
                    start: s as f64 * 900.0,
                    end: ((s + len) % 96) as f64 * 900.0,
                    current: amps as f64 * 8.0,
                })
                .filter(|w| w.start != w.end)
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(c in arb_windows()) {
            let result = validate_config(&c, 40.0, 8);
            let peak = brute_peak(&c);
            match result {
                Ok(()) => prop_assert!(peak <= 40.0 + 1e-9),
                Err(issues) => {
                    prop_assert_eq!(issues.len(), 1);
                    match &issues[0] {
                        ConfigIssue::OverLimit { total, at, .. } => {
                            prop_assert!((total - peak).abs() < 1e-9);
                            let at_total: Amps = schedule_time_step(&c, &[true; 8], *at).iter().sum();
                            prop_assert!((at_total - peak).abs() < 1e-9);
                        }
                        other => prop_assert!(false, "unexpected {:?}", other),
                    }
                }
            }
        }

        #[test]
        fn round_robin_is_pure_and_safe(mask in prop::collection::vec(any::<bool>(), 1..8), k in 1usize..4, t in 0.0f64..1e6) {
            let c = RoundRobinConfig { slot_length: 900.0, max_concurrent: k, per_active_current: 40.0 / k as f64 };
            let a = round_robin_step(&c, &mask, t);
            prop_assert_eq!(&a, &round_robin_step(&c, &mask, t));
            prop_assert!(a.iter().sum::<Amps>() <= 40.0 + 1e-9);
            for (i, amps) in a.iter().enumerate() {
                if !mask[i] { prop_assert_eq!(*amps, 0.0); }
            }
        }

        #[test]
        fn allocations_applied_without_crossing_limit(steps in prop::collection::vec((prop::collection::vec(any::<bool>(), 4), 0u64..200), 1..40)) {
            let mut st = ChargingStation::new(0, 4, 40.0, LinkKind::ThreeG);
            let ctl_cfg = RoundRobinConfig { slot_length: 900.0, max_concurrent: 2, per_active_current: 20.0 };
            for (i, (mask, slot)) in steps.into_iter().enumerate() {
                let now = i as f64 * 900.0;
                for (o, &p) in mask.iter().enumerate() {
                    if p && !st.is_plugged(o) { st.plug(o, EvModel::default(), now).unwrap(); }
                    if !p && st.is_plugged(o) { st.unplug(o, now).unwrap(); }
                }
                let alloc = round_robin_step(&ctl_cfg, &st.plugged_mask(), slot as f64 * 900.0);
                apply_allocation(&mut st, &alloc, now).unwrap();
                prop_assert!(st.allocated_current_total() <= 40.0 + 1e-9);
                for (o, a) in alloc.iter().enumerate() {
                    prop_assert_eq!(st.outlet(o).unwrap().allocated_current(), *a);
                }
            }
        }
    }
}
