//! Server-side station control: the reading store, duty-cycle changes with
//! a computed verification delay, and algorithm-mode selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AlgorithmMode, Amps, ChargingStation, DomainError, MeterId, MeterSnapshot, Seconds};
use crate::latency::{StationLinks, TimingBudget};
use crate::proto::{Message, MessageKind, PacketEntry, Payload, ProtoError, Protocol, ReadStatus, RetrievalResult};
use crate::sched::LocalController;

/// Amperes per percent of pilot duty cycle.
pub const AMPS_PER_DUTY_PERCENT: f64 = 0.6;
pub const MIN_DUTY_PERCENT: f64 = 10.0;
pub const MAX_DUTY_PERCENT: f64 = 85.0;
pub const DEFAULT_CONFIRM_TOLERANCE: Amps = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("duty cycle {duty}% outside [{MIN_DUTY_PERCENT}, {MAX_DUTY_PERCENT}]")]
    DutyOutOfRange { duty: f64 },
    #[error("current {amps} A has no pilot encoding")]
    CurrentOutOfRange { amps: Amps },
    #[error("station {station} is offline")]
    Offline { station: usize },
    #[error("outlet {outlet} has no EV plugged in")]
    NoEv { outlet: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
}

pub fn duty_to_current(duty_percent: f64) -> Result<Amps, ControlError> {
    if !(MIN_DUTY_PERCENT..=MAX_DUTY_PERCENT).contains(&duty_percent) {
        return Err(ControlError::DutyOutOfRange { duty: duty_percent });
    }
    Ok(AMPS_PER_DUTY_PERCENT * duty_percent)
}

pub fn current_to_duty(amps: Amps) -> Result<f64, ControlError> {
    let duty = amps / AMPS_PER_DUTY_PERCENT;
    if !(MIN_DUTY_PERCENT - 1e-9..=MAX_DUTY_PERCENT + 1e-9).contains(&duty) {
        return Err(ControlError::CurrentOutOfRange { amps });
    }
    Ok(duty.clamp(MIN_DUTY_PERCENT, MAX_DUTY_PERCENT))
}

/// Server delay between the duty-cycle ack and the verification read:
/// `max(0, t_ev − t_3g / 2)`. The uplink half of the round trip already
/// covers part of the settle time.
pub fn compute_t_waiting(t_ev: Seconds, budget: &TimingBudget) -> Seconds {
    (t_ev - budget.t_3g_uplink()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReading {
    pub meter: MeterId,
    pub snapshot: Option<MeterSnapshot>,
    pub status: ReadStatus,
    pub stored_at: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub protocol: Protocol,
    pub algorithm: AlgorithmMode,
    pub readings: Vec<StoredReading>,
    last_seq: Option<u64>,
    pub last_retrieval: Option<RetrievalResult>,
}

impl Default for StationRecord {
    fn default() -> Self {
        Self {
            protocol: Protocol::LegacyPull,
            algorithm: AlgorithmMode::None,
            readings: Vec::new(),
            last_seq: None,
            last_retrieval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreDiagnostic {
    pub station: usize,
    pub at: Seconds,
    pub message: String,
}

/// Latest readings per station as seen by the server. Every update to a
/// station's record is applied as a whole or not at all.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServerStore {
    stations: BTreeMap<usize, StationRecord>,
    next_seq: u64,
    diagnostics: Vec<StoreDiagnostic>,
}

impl ServerStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, station: usize) -> &mut StationRecord {
        self.stations.entry(station).or_default()
    }

    pub fn station(&self, station: usize) -> Option<&StationRecord> {
        self.stations.get(&station)
    }

    /// Sequence number for the next server-originated message.
    pub fn next_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    pub fn diagnostics(&self) -> &[StoreDiagnostic] {
        &self.diagnostics
    }

    pub fn last_seq(&self, station: usize) -> Option<u64> {
        self.stations.get(&station).and_then(|r| r.last_seq)
    }

    pub fn readings(&self, station: usize) -> &[StoredReading] {
        self.stations.get(&station).map_or(&[], |r| &r.readings)
    }

    pub fn set_protocol(&mut self, station: usize, protocol: Protocol) {
        self.register(station).protocol = protocol;
    }

    pub fn algorithm(&self, station: usize) -> AlgorithmMode {
        self.stations.get(&station).map_or(AlgorithmMode::None, |r| r.algorithm)
    }

    /// Age of each stored snapshot at `now`.
    pub fn staleness_at(&self, station: usize, now: Seconds) -> Vec<(MeterId, Option<Seconds>)> {
        self.readings(station)
            .iter()
            .map(|r| (r.meter, r.snapshot.map(|s| now - s.captured_at)))
            .collect()
    }

    fn merge(readings: &mut Vec<StoredReading>, incoming: impl Iterator<Item = StoredReading>) {
        for new in incoming {
            match readings.iter_mut().find(|r| r.meter == new.meter) {
                Some(old) if new.snapshot.is_some() || old.snapshot.is_none() => *old = new,
                Some(old) => old.status = new.status,
                None => readings.push(new),
            }
        }
        readings.sort_by_key(|r| r.meter.outlet);
    }

    pub fn record_retrieval(&mut self, result: &RetrievalResult) {
        let record = self.register(result.station);
        let incoming = result.readings.iter().map(|r| StoredReading {
            meter: r.meter,
            snapshot: r.snapshot,
            status: r.status,
            stored_at: result.completed_at,
        });
        Self::merge(&mut record.readings, incoming);
        record.last_retrieval = Some(result.clone());
    }

    /// Stores a pushed packet if its seq is newer than the last stored one.
    pub fn store_packet(&mut self, station: usize, seq: u64, entries: &[PacketEntry], now: Seconds) -> Result<(), ProtoError> {
        let record = self.stations.entry(station).or_default();
        if let Some(last) = record.last_seq.filter(|&last| seq <= last) {
            self.diagnostics.push(StoreDiagnostic {
                station,
                at: now,
                message: format!("dropped packet seq {seq}; last stored {last}"),
            });
            return Err(ProtoError::StalePacket { station, seq, last });
        }
        record.last_seq = Some(seq);
        let incoming = entries.iter().map(|e| StoredReading {
            meter: e.meter,
            snapshot: e.snapshot,
            status: e.status,
            stored_at: now,
        });
        Self::merge(&mut record.readings, incoming);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitPolicy {
    /// Wait just long enough for the modelled settle time.
    Adaptive,
    /// Always wait this long.
    Fixed(Seconds),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutyCycleOptions {
    /// The server's assumed timings.
    pub budget: TimingBudget,
    pub tolerance: Amps,
    pub timeout: Seconds,
    pub wait: WaitPolicy,
    /// Read again after a full settle time when the first read is off.
    pub retry: bool,
}

impl Default for DutyCycleOptions {
    fn default() -> Self {
        Self {
            budget: TimingBudget::worst_case(),
            tolerance: DEFAULT_CONFIRM_TOLERANCE,
            timeout: crate::proto::DEFAULT_REQUEST_TIMEOUT,
            wait: WaitPolicy::Adaptive,
            retry: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyOutcome {
    Confirmed,
    Unsettled,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyRead {
    pub requested_at: Seconds,
    pub captured_at: Seconds,
    pub received_at: Seconds,
    pub amps: Amps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleChange {
    pub meter: MeterId,
    pub duty_percent: f64,
    pub i_init: Amps,
    pub i_final: Amps,
    /// Settle time predicted by the server's EV model.
    pub t_ev: Seconds,
    pub t_waiting: Seconds,
    pub outcome: DutyOutcome,
    pub started_at: Seconds,
    pub ack_at: Option<Seconds>,
    pub reads: Vec<VerifyRead>,
    pub completed_at: Seconds,
    /// Server messages sent for this change.
    pub messages: Vec<Message>,
}

impl DutyCycleChange {
    pub fn total_latency(&self) -> Seconds {
        self.completed_at - self.started_at
    }
}

fn verify_read(
    station: &ChargingStation,
    outlet: usize,
    links: &mut StationLinks<'_>,
    at: Seconds,
) -> Result<VerifyRead, ControlError> {
    let rtt = links.network_rtt(at);
    let captured_at = at + rtt / 2.0 + links.metering(at + rtt / 2.0);
    let snap = station.snapshot(outlet, captured_at)?;
    Ok(VerifyRead {
        requested_at: at,
        captured_at,
        received_at: captured_at + rtt / 2.0,
        amps: snap.amps,
    })
}

/// Sends a duty-cycle change, waits for the ack, waits for the EV to
/// settle and reads the outlet back.
pub fn change_duty_cycle(
    store: &mut ServerStore,
    station: &mut ChargingStation,
    outlet: usize,
    duty_percent: f64,
    links: &mut StationLinks<'_>,
    opts: &DutyCycleOptions,
    now: Seconds,
) -> Result<DutyCycleChange, ControlError> {
    if !station.online {
        return Err(ControlError::Offline { station: station.id });
    }
    let i_final = duty_to_current(duty_percent)?;
    let meter = station.meter_id(outlet)?;
    let ev = *station.outlet(outlet)?.ev().ok_or(ControlError::NoEv { outlet })?;

    let set = Message::new(MessageKind::DutyCycleSet, station.id, store.next_seq(), now)
        .with_meter(meter)
        .with_payload(Payload::DutyPercent(duty_percent));
    let mut change = DutyCycleChange {
        meter,
        duty_percent,
        i_init: station.snapshot(outlet, now)?.amps,
        i_final,
        t_ev: 0.0,
        t_waiting: 0.0,
        outcome: DutyOutcome::Failed,
        started_at: now,
        ack_at: None,
        reads: Vec::new(),
        completed_at: now,
        messages: vec![set],
    };

    let rtt = links.network_rtt(now);
    if rtt > opts.timeout {
        change.completed_at = now + opts.timeout;
        return Ok(change);
    }
    let arrive = now + rtt / 2.0;
    change.i_init = station.snapshot(outlet, arrive)?.amps;
    change.t_ev = ev.settle_time(change.i_init.min(ev.max_current), i_final.min(ev.max_current))?;
    station.set_allocation(outlet, i_final, arrive)?;
    let ack_at = now + rtt;
    change.ack_at = Some(ack_at);
    change.t_waiting = match opts.wait {
        WaitPolicy::Adaptive => compute_t_waiting(change.t_ev, &opts.budget),
        WaitPolicy::Fixed(w) => w,
    };

    let within = |r: &VerifyRead| (r.amps - i_final).abs() <= opts.tolerance;
    let read_at = ack_at + change.t_waiting;
    change
        .messages
        .push(Message::new(MessageKind::MeterPowerReq, station.id, store.next_seq(), read_at).with_meter(meter));
    let first = verify_read(station, outlet, links, read_at)?;
    change.reads.push(first);
    change.completed_at = first.received_at;
    change.outcome = if within(&first) {
        DutyOutcome::Confirmed
    } else {
        DutyOutcome::Unsettled
    };
    if change.outcome == DutyOutcome::Unsettled && opts.retry {
        let again_at = first.received_at + change.t_ev;
        change
            .messages
            .push(Message::new(MessageKind::MeterPowerReq, station.id, store.next_seq(), again_at).with_meter(meter));
        let second = verify_read(station, outlet, links, again_at)?;
        change.reads.push(second);
        change.completed_at = second.received_at;
        if within(&second) {
            change.outcome = DutyOutcome::Confirmed;
        }
    }
    Ok(change)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAck {
    pub request: Message,
    pub ack: Message,
    /// Slot boundary from which the station allocates with the new mode.
    pub effective_at: Seconds,
}

/// Hands the station's local controller a new charging algorithm.
pub fn select_algorithm_mode(
    store: &mut ServerStore,
    station: &ChargingStation,
    controller: &mut LocalController,
    links: &mut StationLinks<'_>,
    mode: AlgorithmMode,
    now: Seconds,
) -> Result<ModeAck, ControlError> {
    if !station.online {
        return Err(ControlError::Offline { station: station.id });
    }
    let request = Message::new(MessageKind::ModeSelect, station.id, store.next_seq(), now).with_payload(Payload::Mode(mode));
    let rtt = links.network_rtt(now);
    let arrive = now + rtt / 2.0;
    let effective_at = controller.deliver(mode, arrive);
    let ack = Message::new(MessageKind::SetupAck, station.id, request.seq, arrive)
        .replying_to(request.seq)
        .delivered(now + rtt)?;
    store.register(station.id).algorithm = mode;
    Ok(ModeAck {
        request,
        ack,
        effective_at,
    })
}
