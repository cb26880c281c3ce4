//! Charging-infrastructure entities: stations, metered outlets, relays and
//! plugged EVs whose current follows a settle ramp after every change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::LinkKind;

pub type Seconds = f64;
pub type Amps = f64;

pub const DEFAULT_METERS_PER_STATION: usize = 4;
pub const DEFAULT_LINE_VOLTAGE: f64 = 208.0;
pub const DEFAULT_CIRCUIT_LIMIT: Amps = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("outlet {outlet} out of range for a station with {meters} meters")]
    InvalidOutlet { outlet: usize, meters: usize },
    #[error("no EV plugged at outlet {outlet}")]
    NoEv { outlet: usize },
    #[error("EV is not plugged in")]
    EvUnplugged,
    #[error("current {amps} A outside [0, {max}] A")]
    CurrentOutOfRange { amps: Amps, max: Amps },
    #[error("allocating {requested} A at outlet {outlet} would raise the station total to {total} A (limit {limit} A)")]
    CircuitLimit {
        outlet: usize,
        requested: Amps,
        total: Amps,
        limit: Amps,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeterId {
    pub station: usize,
    pub outlet: usize,
}

impl MeterId {
    pub fn new(station: usize, outlet: usize, meters_per_station: usize) -> Result<Self, DomainError> {
        if outlet >= meters_per_station {
            return Err(DomainError::InvalidOutlet {
                outlet,
                meters: meters_per_station,
            });
        }
        Ok(Self { station, outlet })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayState {
    On,
    Off,
}

/// One metered outlet's reading at `captured_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterSnapshot {
    pub meter: MeterId,
    pub volts: f64,
    pub amps: Amps,
    pub watts: f64,
    /// Cumulative, never decreases for a given meter.
    pub energy_kwh: f64,
    pub relay: RelayState,
    pub captured_at: Seconds,
}

/// Local charging algorithm running on the station's control unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmMode {
    #[default]
    None,
    RoundRobin,
    ScheduleTime,
}

/// A plugged vehicle and its current-settling behaviour.
///
/// The settle time is a capped linear function of the current step:
/// `min(cap, t0 + rate * |i_final - i_init|)`, and zero when the step is zero.
/// The defaults put the cap at 6 s, reached by a 32 A step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvModel {
    pub plugged: bool,
    pub max_current: Amps,
    pub settle_t0: Seconds,
    /// Seconds per ampere of step.
    pub settle_rate: f64,
    pub settle_cap: Seconds,
}

impl Default for EvModel {
    fn default() -> Self {
        Self {
            plugged: true,
            max_current: 40.0,
            settle_t0: 1.0,
            settle_rate: 0.15625,
            settle_cap: 6.0,
        }
    }
}

impl EvModel {
    pub fn settle_time(&self, i_init: Amps, i_final: Amps) -> Result<Seconds, DomainError> {
        if !self.plugged {
            return Err(DomainError::EvUnplugged);
        }
        for amps in [i_init, i_final] {
            if !(0.0..=self.max_current).contains(&amps) {
                return Err(DomainError::CurrentOutOfRange {
                    amps,
                    max: self.max_current,
                });
            }
        }
        Ok(self.settle_time_unchecked(i_init, i_final))
    }

    fn settle_time_unchecked(&self, i_init: Amps, i_final: Amps) -> Seconds {
        let step = (i_final - i_init).abs();
        if step == 0.0 {
            return 0.0;
        }
        (self.settle_t0 + self.settle_rate * step).min(self.settle_cap)
    }
}

/// Linear current transition from `from` to `to` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ramp {
    from: Amps,
    to: Amps,
    start: Seconds,
    duration: Seconds,
}

impl Ramp {
    fn steady(amps: Amps, at: Seconds) -> Self {
        Self {
            from: amps,
            to: amps,
            start: at,
            duration: 0.0,
        }
    }

    fn current_at(&self, t: Seconds) -> Amps {
        if t <= self.start {
            return self.from;
        }
        if self.duration <= 0.0 || t >= self.start + self.duration {
            return self.to;
        }
        let frac = (t - self.start) / self.duration;
        self.from + (self.to - self.from) * frac
    }

    /// Exact integral of the piecewise-linear current over `[a, b]`, in A·s.
    fn charge_between(&self, a: Seconds, b: Seconds) -> f64 {
        if b <= a {
            return 0.0;
        }
        let end = self.start + self.duration.max(0.0);
        let mut points = vec![a];
        for p in [self.start, end] {
            if p > a && p < b {
                points.push(p);
            }
        }
        points.push(b);
        points
            .windows(2)
            .map(|w| 0.5 * (self.current_at(w[0]) + self.current_at(w[1])) * (w[1] - w[0]))
            .sum()
    }
}

/// State of one metered outlet.
#[derive(Debug, Clone, PartialEq)]
pub struct Outlet {
    relay: RelayState,
    allocation: Amps,
    ev: Option<EvModel>,
    /// Multiplier on the EV's modelled settle time; 1.0 means the vehicle
    /// behaves exactly as modelled.
    settle_scale: f64,
    ramp: Ramp,
    energy_kwh: f64,
    last_change: Seconds,
}

impl Outlet {
    fn new() -> Self {
        Self {
            relay: RelayState::Off,
            allocation: 0.0,
            ev: None,
            settle_scale: 1.0,
            ramp: Ramp::steady(0.0, 0.0),
            energy_kwh: 0.0,
            last_change: 0.0,
        }
    }

    pub fn relay(&self) -> RelayState {
        self.relay
    }

    pub fn allocation(&self) -> Amps {
        self.allocation
    }

    pub fn ev(&self) -> Option<&EvModel> {
        self.ev.as_ref().filter(|ev| ev.plugged)
    }

    /// Current the outlet counts against the circuit: its allocation while
    /// the relay is closed, zero otherwise.
    pub fn allocated_current(&self) -> Amps {
        match self.relay {
            RelayState::On => self.allocation,
            RelayState::Off => 0.0,
        }
    }

    fn target_current(&self) -> Amps {
        match (self.relay, self.ev()) {
            (RelayState::On, Some(ev)) => self.allocation.min(ev.max_current),
            _ => 0.0,
        }
    }

    fn energy_at(&self, volts: f64, t: Seconds) -> f64 {
        let t = t.max(self.last_change);
        self.energy_kwh + volts * self.ramp.charge_between(self.last_change, t) / 3.6e6
    }

    /// Folds the energy drawn up to `now` into the counter and starts a new
    /// ramp toward the outlet's current target.
    fn retarget(&mut self, volts: f64, now: Seconds) {
        let now = now.max(self.last_change);
        let present = self.ramp.current_at(now);
        self.energy_kwh = self.energy_at(volts, now);
        self.last_change = now;
        let target = self.target_current();
        self.ramp = if self.relay == RelayState::Off || self.ev().is_none() {
            // an open relay or an empty socket drops the draw immediately
            Ramp::steady(0.0, now)
        } else {
            let ev = self.ev().copied().expect("checked above");
            let duration = ev.settle_time_unchecked(present.min(ev.max_current), target) * self.settle_scale;
            Ramp {
                from: present,
                to: target,
                start: now,
                duration,
            }
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargingStation {
    pub id: usize,
    pub volts: f64,
    pub circuit_limit: Amps,
    pub link: LinkKind,
    pub local_algorithm: AlgorithmMode,
    pub online: bool,
    outlets: Vec<Outlet>,
}

impl ChargingStation {
    pub fn new(id: usize, meters: usize, circuit_limit: Amps, link: LinkKind) -> Self {
        Self {
            id,
            volts: DEFAULT_LINE_VOLTAGE,
            circuit_limit,
            link,
            local_algorithm: AlgorithmMode::None,
            online: true,
            outlets: (0..meters).map(|_| Outlet::new()).collect(),
        }
    }

    pub fn meter_count(&self) -> usize {
        self.outlets.len()
    }

    pub fn meter_id(&self, outlet: usize) -> Result<MeterId, DomainError> {
        MeterId::new(self.id, outlet, self.outlets.len())
    }

    pub fn meter_ids(&self) -> Vec<MeterId> {
        (0..self.outlets.len())
            .map(|outlet| MeterId {
                station: self.id,
                outlet,
            })
            .collect()
    }

    pub fn outlet(&self, outlet: usize) -> Result<&Outlet, DomainError> {
        self.outlets.get(outlet).ok_or(DomainError::InvalidOutlet {
            outlet,
            meters: self.outlets.len(),
        })
    }

    fn outlet_mut(&mut self, outlet: usize) -> Result<&mut Outlet, DomainError> {
        let meters = self.outlets.len();
        self.outlets
            .get_mut(outlet)
            .ok_or(DomainError::InvalidOutlet { outlet, meters })
    }

    pub fn plug(&mut self, outlet: usize, ev: EvModel, now: Seconds) -> Result<(), DomainError> {
        let volts = self.volts;
        let o = self.outlet_mut(outlet)?;
        o.ev = Some(EvModel { plugged: true, ..ev });
        o.retarget(volts, now);
        Ok(())
    }

    pub fn unplug(&mut self, outlet: usize, now: Seconds) -> Result<(), DomainError> {
        let volts = self.volts;
        let o = self.outlet_mut(outlet)?;
        o.ev = None;
        o.retarget(volts, now);
        Ok(())
    }

    /// Makes the plugged vehicle settle `scale` times slower (or faster)
    /// than its model predicts.
    pub fn set_settle_scale(&mut self, outlet: usize, scale: f64) -> Result<(), DomainError> {
        self.outlet_mut(outlet)?.settle_scale = scale;
        Ok(())
    }

    pub fn is_plugged(&self, outlet: usize) -> bool {
        self.outlets.get(outlet).is_some_and(|o| o.ev().is_some())
    }

    pub fn plugged_mask(&self) -> Vec<bool> {
        self.outlets.iter().map(|o| o.ev().is_some()).collect()
    }

    pub fn allocated_current_total(&self) -> Amps {
        self.outlets.iter().map(Outlet::allocated_current).sum()
    }

    fn total_with(&self, outlet: usize, amps: Amps) -> Amps {
        self.outlets
            .iter()
            .enumerate()
            .map(|(i, o)| if i == outlet { amps } else { o.allocated_current() })
            .sum()
    }

    fn check_limit(&self, outlet: usize, amps: Amps) -> Result<(), DomainError> {
        let total = self.total_with(outlet, amps);
        // small slack for float sums of otherwise-exact allocations
        if total > self.circuit_limit + 1e-9 {
            return Err(DomainError::CircuitLimit {
                outlet,
                requested: amps,
                total,
                limit: self.circuit_limit,
            });
        }
        Ok(())
    }

    /// Sets the pilot allocation of an outlet. Rejected if the new total
    /// would exceed the circuit limit.
    pub fn set_allocation(&mut self, outlet: usize, amps: Amps, now: Seconds) -> Result<(), DomainError> {
        if !(amps >= 0.0) {
            return Err(DomainError::CurrentOutOfRange {
                amps,
                max: self.circuit_limit,
            });
        }
        self.outlet(outlet)?;
        if self.outlets[outlet].relay == RelayState::On {
            self.check_limit(outlet, amps)?;
        }
        let volts = self.volts;
        let o = self.outlet_mut(outlet)?;
        o.allocation = amps;
        o.retarget(volts, now);
        Ok(())
    }

    pub fn apply_relay(&mut self, outlet: usize, state: RelayState, now: Seconds) -> Result<MeterSnapshot, DomainError> {
        let current = self.outlet(outlet)?;
        if state == RelayState::On && current.relay == RelayState::Off {
            self.check_limit(outlet, current.allocation)?;
        }
        let volts = self.volts;
        let o = self.outlet_mut(outlet)?;
        if o.relay != state {
            o.relay = state;
            o.retarget(volts, now);
        }
        self.snapshot(outlet, now)
    }

    /// Reading of `outlet` at time `at`. Pure: the station is not modified,
    /// so readings may be taken at any instant after the last state change.
    pub fn snapshot(&self, outlet: usize, at: Seconds) -> Result<MeterSnapshot, DomainError> {
        let o = self.outlet(outlet)?;
        let amps = match o.relay {
            RelayState::On => o.ramp.current_at(at.max(o.last_change)),
            RelayState::Off => 0.0,
        };
        Ok(MeterSnapshot {
            meter: MeterId {
                station: self.id,
                outlet,
            },
            volts: self.volts,
            amps,
            watts: self.volts * amps,
            energy_kwh: o.energy_at(self.volts, at),
            relay: o.relay,
            captured_at: at,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station() -> ChargingStation {
        ChargingStation::new(0, DEFAULT_METERS_PER_STATION, DEFAULT_CIRCUIT_LIMIT, LinkKind::ThreeG)
    }

    #[test]
    fn settle_time_zero_step() {
        let ev = EvModel::default();
        assert_eq!(ev.settle_time(16.0, 16.0).unwrap(), 0.0);
    }

    #[test]
    fn settle_time_max_step_hits_cap() {
        let ev = EvModel::default();
        assert_eq!(ev.settle_time(0.0, 32.0).unwrap(), 6.0);
        assert_eq!(ev.settle_time(0.0, ev.max_current).unwrap(), 6.0);
    }

    #[test]
    fn settle_time_linear_region() {
        let ev = EvModel {
            settle_t0: 1.0,
            settle_rate: 0.15625,
            settle_cap: 6.0,
            ..EvModel::default()
        };
        // 1 + 8 * 0.15625
        let expected = 1.0 + 8.0 * (5.0 / 32.0);
        assert!((ev.settle_time(8.0, 16.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.25).abs() < 1e-12);
    }

    #[test]
    fn settle_time_errors() {
        let ev = EvModel {
            plugged: false,
            ..EvModel::default()
        };
        assert!(matches!(ev.settle_time(0.0, 8.0), Err(DomainError::EvUnplugged)));
        let ev = EvModel::default();
        assert!(matches!(
            ev.settle_time(0.0, 41.0),
            Err(DomainError::CurrentOutOfRange { .. })
        ));
    }

    #[test]
    fn meter_id_rejects_out_of_range_outlet() {
        assert!(MeterId::new(0, 3, 4).is_ok());
        assert!(MeterId::new(0, 4, 4).is_err());
    }

    #[test]
    fn relay_off_forces_zero_draw() {
        let mut s = station();
        s.plug(0, EvModel::default(), 0.0).unwrap();
        s.set_allocation(0, 16.0, 0.0).unwrap();
        s.apply_relay(0, RelayState::On, 0.0).unwrap();
        let snap = s.apply_relay(0, RelayState::Off, 100.0).unwrap();
        assert_eq!(snap.amps, 0.0);
        assert_eq!(snap.watts, 0.0);
        assert_eq!(snap.relay, RelayState::Off);
        assert_eq!(s.snapshot(0, 200.0).unwrap().amps, 0.0);
    }

    #[test]
    fn relay_on_ramps_to_allocation() {
        let mut s = station();
        s.plug(1, EvModel::default(), 0.0).unwrap();
        s.set_allocation(1, 16.0, 0.0).unwrap();
        let first = s.apply_relay(1, RelayState::On, 10.0).unwrap();
        assert_eq!(first.amps, 0.0);
        let settle = EvModel::default().settle_time(0.0, 16.0).unwrap();
        let settled = s.snapshot(1, 10.0 + settle).unwrap();
        assert!((settled.amps - 16.0).abs() < 1e-12);
        assert!((settled.watts - 208.0 * 16.0).abs() < 1e-9);
        assert!((settled.watts - 3328.0).abs() < 1e-9);
    }

    #[test]
    fn relay_off_to_off_only_changes_timestamp() {
        let mut s = station();
        let a = s.apply_relay(2, RelayState::Off, 5.0).unwrap();
        let b = s.apply_relay(2, RelayState::Off, 9.0).unwrap();
        assert_eq!(a.captured_at, 5.0);
        assert_eq!(b.captured_at, 9.0);
        assert_eq!(MeterSnapshot { captured_at: 5.0, ..b }, a);
    }

    #[test]
    fn invalid_outlet_is_an_index_error() {
        let mut s = station();
        assert!(matches!(
            s.apply_relay(4, RelayState::On, 0.0),
            Err(DomainError::InvalidOutlet { outlet: 4, meters: 4 })
        ));
    }

    #[test]
    fn allocated_total_counts_closed_relays() {
        let mut s = station();
        assert_eq!(s.allocated_current_total(), 0.0);
        for outlet in [0, 1] {
            s.set_allocation(outlet, 16.0, 0.0).unwrap();
            s.apply_relay(outlet, RelayState::On, 0.0).unwrap();
        }
        assert_eq!(s.allocated_current_total(), 32.0);
    }

    #[test]
    fn circuit_limit_rejects_overdraw() {
        let mut s = station();
        for outlet in [0, 1] {
            s.set_allocation(outlet, 16.0, 0.0).unwrap();
            s.apply_relay(outlet, RelayState::On, 0.0).unwrap();
        }
        s.set_allocation(2, 16.0, 0.0).unwrap();
        assert!(matches!(
            s.apply_relay(2, RelayState::On, 0.0),
            Err(DomainError::CircuitLimit { .. })
        ));
        assert!(s.set_allocation(1, 30.0, 0.0).is_err());
        assert_eq!(s.allocated_current_total(), 32.0);
    }

    #[test]
    fn energy_integrates_ramp_exactly() {
        let mut s = station();
        s.plug(0, EvModel::default(), 0.0).unwrap();
        s.set_allocation(0, 16.0, 0.0).unwrap();
        s.apply_relay(0, RelayState::On, 0.0).unwrap();
        let settle = EvModel::default().settle_time(0.0, 16.0).unwrap();
        // triangle during the ramp, rectangle afterwards
        let amp_seconds = 0.5 * 16.0 * settle + 16.0 * (3600.0 - settle);
        let expected = 208.0 * amp_seconds / 3.6e6;
        let snap = s.snapshot(0, 3600.0).unwrap();
        assert!((snap.energy_kwh - expected).abs() < 1e-12);
    }

    #[test]
    fn unplug_drops_current() {
        let mut s = station();
        s.plug(0, EvModel::default(), 0.0).unwrap();
        s.set_allocation(0, 16.0, 0.0).unwrap();
        s.apply_relay(0, RelayState::On, 0.0).unwrap();
        s.unplug(0, 50.0).unwrap();
        assert_eq!(s.snapshot(0, 51.0).unwrap().amps, 0.0);
        assert!(!s.is_plugged(0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn settle_symmetric_and_capped(a in 0.0f64..40.0, b in 0.0f64..40.0) {
                let ev = EvModel::default();
                let ab = ev.settle_time(a, b).unwrap();
                let ba = ev.settle_time(b, a).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ab <= ev.settle_cap);
            }

            #[test]
            fn total_matches_per_outlet_sum(allocs in proptest::collection::vec((0.0f64..12.0, any::<bool>()), 4)) {
                let mut s = ChargingStation::new(0, 4, 48.0, LinkKind::Ethernet);
                let mut expected = 0.0;
                for (i, (amps, on)) in allocs.iter().enumerate() {
                    s.set_allocation(i, *amps, 0.0).unwrap();
                    if *on {
                        s.apply_relay(i, RelayState::On, 0.0).unwrap();
                        expected += amps;
                    }
                }
                prop_assert!((s.allocated_current_total() - expected).abs() < 1e-9);
            }

            #[test]
            fn energy_monotone_and_power_consistent(
                steps in proptest::collection::vec((0.0f64..40.0, 0.1f64..600.0, any::<bool>()), 1..20)
            ) {
                let mut s = ChargingStation::new(0, 1, 40.0, LinkKind::Ethernet);
                s.plug(0, EvModel::default(), 0.0).unwrap();
                let mut now = 0.0;
                let mut last_energy = 0.0;
                for (amps, dt, on) in steps {
                    s.set_allocation(0, amps, now).unwrap();
                    let relay = if on { RelayState::On } else { RelayState::Off };
                    s.apply_relay(0, relay, now).unwrap();
                    now += dt;
                    let snap = s.snapshot(0, now).unwrap();
                    prop_assert!(snap.energy_kwh >= last_energy);
                    last_energy = snap.energy_kwh;
                    if snap.relay == RelayState::On {
                        prop_assert!((snap.watts - snap.volts * snap.amps).abs() <= 0.01 * snap.watts.abs() + 1e-12);
                    } else {
                        prop_assert_eq!(snap.amps, 0.0);
                        prop_assert_eq!(snap.watts, 0.0);
                    }
                }
            }
        }
    }
}
