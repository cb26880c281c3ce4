//! Power Information Collector firmware as a host-side state machine.
//!
//! The firmware has four parts: startup (register meters, arm interrupts),
//! a serial-command interrupt, a timer interrupt and the main loop. The two
//! interrupt routines only touch [`Flags`]; all meter I/O, cache updates and
//! responses happen in [`PicState::main_loop_step`].
//!
//! In the simulator an interrupt is an event delivered between main-loop
//! steps. A step runs to completion at one logical instant and reports how
//! long its work took via `busy_until`; interrupts that fire before then
//! only set flags, which the next step picks up.

use std::collections::VecDeque;
use std::mem;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ChargingStation, MeterId, MeterSnapshot, Seconds};
use crate::latency::StationLinks;
use crate::proto::{Message, MessageKind, PacketEntry, Payload, ReadStatus};

/// Commands buffered between main-loop passes before new ones are refused.
pub const COMMAND_QUEUE_DEPTH: usize = 4;

pub const OP_POWER_INFO_REQUEST: u8 = 0x01;
pub const OP_SET_PUSH_PERIOD: u8 = 0x02;
pub const OP_SET_PUSH_ENABLED: u8 = 0x03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PicError {
    #[error("startup: meter in slot {outlet} did not answer")]
    Startup { outlet: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("meter {outlet} timed out")]
    Timeout { outlet: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Opcode {
    PowerInfoRequest,
    SetPushPeriod(Seconds),
    SetPushEnabled(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub seq: u64,
    pub opcode: Opcode,
}

/// Serial record: `{"seq":N,"op":BYTE}` plus `period_s` or `enabled` for the
/// setup opcodes.
#[derive(Serialize, Deserialize)]
struct SerialFrame {
    seq: u64,
    op: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    enabled: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialReject {
    pub seq: Option<u64>,
    pub reason: String,
}

impl Command {
    pub fn new(seq: u64, opcode: Opcode) -> Self {
        Self { seq, opcode }
    }

    pub fn encode(&self) -> String {
        let frame = match self.opcode {
            Opcode::PowerInfoRequest => SerialFrame {
                seq: self.seq,
                op: OP_POWER_INFO_REQUEST,
                period_s: None,
                enabled: None,
            },
            Opcode::SetPushPeriod(p) => SerialFrame {
                seq: self.seq,
                op: OP_SET_PUSH_PERIOD,
                period_s: Some(p),
                enabled: None,
            },
            Opcode::SetPushEnabled(e) => SerialFrame {
                seq: self.seq,
                op: OP_SET_PUSH_ENABLED,
                period_s: None,
                enabled: Some(e),
            },
        };
        serde_json::to_string(&frame).expect("frames serialize")
    }

    pub fn decode(line: &str) -> Result<Self, SerialReject> {
        let frame: SerialFrame = serde_json::from_str(line).map_err(|e| SerialReject {
            seq: serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("seq").and_then(|s| s.as_u64())),
            reason: format!("malformed frame: {e}"),
        })?;
        let reject = |reason: &str| SerialReject {
            seq: Some(frame.seq),
            reason: reason.to_string(),
        };
        let opcode = match frame.op {
            OP_POWER_INFO_REQUEST => Opcode::PowerInfoRequest,
            OP_SET_PUSH_PERIOD => match frame.period_s {
                Some(p) if p > 0.0 && p.is_finite() => Opcode::SetPushPeriod(p),
                _ => return Err(reject("push period must be a positive number of seconds")),
            },
            OP_SET_PUSH_ENABLED => match frame.enabled {
                Some(e) => Opcode::SetPushEnabled(e),
                None => return Err(reject("missing enabled flag")),
            },
            other => return Err(reject(&format!("unknown opcode 0x{other:02x}"))),
        };
        Ok(Self { seq: frame.seq, opcode })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Latched {
    Command(Command),
    Reject(SerialReject),
}

impl Latched {
    fn seq(&self) -> Option<u64> {
        match self {
            Latched::Command(c) => Some(c.seq),
            Latched::Reject(r) => r.seq,
        }
    }
}

/// The only state interrupt routines may modify.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Flags {
    /// Set by the timer; a boolean, so ticks between two steps coalesce.
    pub push_data: bool,
    pub pending: VecDeque<Latched>,
    pub last_serial_seq: Option<u64>,
    /// Arrivals refused because `pending` was full; each gets an error reply.
    pub overflowed: Vec<Latched>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicConfig {
    pub push_period: Seconds,
    pub push_enabled: bool,
    /// Answer power-information requests from the cache instead of running
    /// a fresh collection.
    pub serve_cache: bool,
}

impl Default for PicConfig {
    fn default() -> Self {
        Self {
            push_period: 30.0,
            push_enabled: true,
            serve_cache: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Idle,
    Collecting,
    Pushing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "diagnostic", rename_all = "snake_case")]
pub enum Diagnostic {
    CommandOverflow { seq: Option<u64> },
    CommandRejected { seq: Option<u64>, reason: String },
    CollectionOverrun { at: Seconds, duration: Seconds, period: Seconds },
    MeterFault { outlet: usize, at: Seconds },
}

pub struct BusRead {
    pub elapsed: Seconds,
    pub result: Result<MeterSnapshot, BusError>,
}

/// The PIC's view of the meters behind it.
pub trait MeterBus {
    fn slots(&self) -> usize;
    fn identify(&mut self, slot: usize) -> Result<MeterId, BusError>;
    /// Reads one meter starting at `start`; `elapsed` covers the bus hop
    /// and the metering time (or the timeout on failure).
    fn read(&mut self, meter: MeterId, start: Seconds) -> BusRead;
}

/// Meter bus backed by a simulated station and its local-bus and metering
/// delay models.
pub struct SimMeterBus<'a, 'm> {
    station: &'a ChargingStation,
    links: &'a mut StationLinks<'m>,
    dead: Vec<usize>,
    timeout: Seconds,
}

impl<'a, 'm> SimMeterBus<'a, 'm> {
    pub fn new(station: &'a ChargingStation, links: &'a mut StationLinks<'m>) -> Self {
        Self {
            station,
            links,
            dead: Vec::new(),
            timeout: 1.0,
        }
    }

    /// Slots that never answer.
    pub fn with_dead_slots(mut self, dead: impl IntoIterator<Item = usize>) -> Self {
        self.dead = dead.into_iter().collect();
        self
    }

    pub fn with_timeout(mut self, timeout: Seconds) -> Self {
        self.timeout = timeout;
        self
    }
}

impl MeterBus for SimMeterBus<'_, '_> {
    fn slots(&self) -> usize {
        self.station.meter_count()
    }

    fn identify(&mut self, slot: usize) -> Result<MeterId, BusError> {
        if self.dead.contains(&slot) {
            return Err(BusError::Timeout { outlet: slot });
        }
        self.station
            .meter_id(slot)
            .map_err(|_| BusError::Timeout { outlet: slot })
    }

    fn read(&mut self, meter: MeterId, start: Seconds) -> BusRead {
        if self.dead.contains(&meter.outlet) {
            return BusRead {
                elapsed: self.timeout,
                result: Err(BusError::Timeout { outlet: meter.outlet }),
            };
        }
        let hop = self.links.local_bus(start);
        let metering = self.links.metering(start + hop);
        let elapsed = hop + metering;
        let result = self
            .station
            .snapshot(meter.outlet, start + elapsed)
            .map_err(|_| BusError::Timeout { outlet: meter.outlet });
        BusRead { elapsed, result }
    }
}

/// What one main-loop pass did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutput {
    pub messages: Vec<Message>,
    /// When the work started by this step finishes.
    pub busy_until: Seconds,
    /// Total time spent collecting during the step.
    pub collection_time: Seconds,
    pub collections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicState {
    station: usize,
    registered: Vec<MeterId>,
    cache: Vec<PacketEntry>,
    pub flags: Flags,
    push_period: Seconds,
    push_enabled: bool,
    serve_cache: bool,
    phase: Phase,
    interrupts_armed: bool,
    busy_until: Seconds,
    next_seq: u64,
    diagnostics: Vec<Diagnostic>,
}

impl PicState {
    /// Arms interrupts, then asks every bus slot for its meter ID.
    pub fn startup_init<B: MeterBus + ?Sized>(station: usize, bus: &mut B, config: PicConfig) -> Result<Self, PicError> {
        let mut pic = Self {
            station,
            registered: Vec::new(),
            cache: Vec::new(),
            flags: Flags::default(),
            push_period: config.push_period,
            push_enabled: config.push_enabled,
            serve_cache: config.serve_cache,
            phase: Phase::Init,
            interrupts_armed: true,
            busy_until: 0.0,
            next_seq: 0,
            diagnostics: Vec::new(),
        };
        for slot in 0..bus.slots() {
            let id = bus.identify(slot).map_err(|_| PicError::Startup { outlet: slot })?;
            pic.registered.push(id);
        }
        pic.cache = pic
            .registered
            .iter()
            .map(|&meter| PacketEntry {
                meter,
                snapshot: None,
                status: ReadStatus::Missing,
            })
            .collect();
        pic.phase = Phase::Idle;
        Ok(pic)
    }

    pub fn station(&self) -> usize {
        self.station
    }

    pub fn registered_meters(&self) -> &[MeterId] {
        &self.registered
    }

    pub fn cache(&self) -> &[PacketEntry] {
        &self.cache
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn interrupts_armed(&self) -> bool {
        self.interrupts_armed
    }

    pub fn push_period(&self) -> Seconds {
        self.push_period
    }

    pub fn push_enabled(&self) -> bool {
        self.push_enabled
    }

    pub fn serve_cache(&self) -> bool {
        self.serve_cache
    }

    pub fn busy_until(&self) -> Seconds {
        self.busy_until
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn has_work(&self) -> bool {
        self.flags.push_data || !self.flags.pending.is_empty() || !self.flags.overflowed.is_empty()
    }

    /// Serial ISR: decode and check the record, then latch it.
    pub fn on_serial_interrupt(&mut self, line: &str) {
        let flags = &mut self.flags;
        let latched = match Command::decode(line) {
            Ok(cmd) if flags.last_serial_seq.is_some_and(|last| cmd.seq <= last) => Latched::Reject(SerialReject {
                seq: Some(cmd.seq),
                reason: "sequence number did not increase".into(),
            }),
            Ok(cmd) => {
                flags.last_serial_seq = Some(cmd.seq);
                Latched::Command(cmd)
            }
            Err(reject) => Latched::Reject(reject),
        };
        if flags.pending.len() >= COMMAND_QUEUE_DEPTH {
            flags.overflowed.push(latched);
        } else {
            flags.pending.push_back(latched);
        }
    }

    pub fn on_command(&mut self, cmd: &Command) {
        self.on_serial_interrupt(&cmd.encode());
    }

    /// Timer ISR.
    pub fn on_timer_interrupt(&mut self) {
        self.flags.push_data = true;
    }

    /// Reads every registered meter in turn, refreshing the cache. Returns
    /// the total time spent.
    pub fn collect_all<B: MeterBus + ?Sized>(&mut self, bus: &mut B, now: Seconds) -> Seconds {
        self.phase = Phase::Collecting;
        let mut t = now;
        for i in 0..self.registered.len() {
            let meter = self.registered[i];
            let read = bus.read(meter, t);
            t += read.elapsed;
            let entry = &mut self.cache[i];
            match read.result {
                Ok(snapshot) => {
                    entry.snapshot = Some(snapshot);
                    entry.status = ReadStatus::Fresh;
                }
                Err(_) => {
                    entry.status = if entry.snapshot.is_some() {
                        ReadStatus::Stale
                    } else {
                        ReadStatus::Missing
                    };
                    self.diagnostics.push(Diagnostic::MeterFault {
                        outlet: meter.outlet,
                        at: t,
                    });
                }
            }
        }
        let duration = t - now;
        if duration >= self.push_period {
            self.diagnostics.push(Diagnostic::CollectionOverrun {
                at: now,
                duration,
                period: self.push_period,
            });
        }
        duration
    }

    fn next_message(&mut self, kind: MessageKind, at: Seconds) -> Message {
        let seq = self.next_seq;
        self.next_seq += 1;
        Message::new(kind, self.station, seq, at)
    }

    fn packet(&mut self, at: Seconds) -> Message {
        let entries = self.cache.clone();
        self.next_message(MessageKind::AggregatePacket, at)
            .with_payload(Payload::Packet(entries))
    }

    fn cache_complete(&self) -> bool {
        self.cache.iter().all(|e| e.snapshot.is_some())
    }

    /// One pass of the main loop: serve latched commands in arrival order,
    /// then push if the timer flag is set. Does nothing if the previous
    /// pass's work is still running at `now`.
    pub fn main_loop_step<B: MeterBus + ?Sized>(&mut self, bus: &mut B, now: Seconds) -> StepOutput {
        let mut out = StepOutput {
            busy_until: self.busy_until.max(now),
            ..StepOutput::default()
        };
        if now < self.busy_until {
            return out;
        }
        self.phase = Phase::Idle;
        let mut t = now;
        while let Some(latched) = self.flags.pending.pop_front() {
            t = self.execute(latched, bus, t, &mut out);
        }
        for latched in mem::take(&mut self.flags.overflowed) {
            let seq = latched.seq();
            self.diagnostics.push(Diagnostic::CommandOverflow { seq });
            let mut msg = self
                .next_message(MessageKind::Error, t)
                .with_payload(Payload::Text("command queue full".into()));
            msg.reply_to = seq;
            out.messages.push(msg);
        }
        if mem::take(&mut self.flags.push_data) && self.push_enabled {
            let d = self.collect_all(bus, t);
            out.collection_time += d;
            out.collections += 1;
            t += d;
            self.phase = Phase::Pushing;
            let packet = self.packet(t);
            out.messages.push(packet);
        }
        self.busy_until = t;
        out.busy_until = t;
        out
    }

    fn execute<B: MeterBus + ?Sized>(&mut self, latched: Latched, bus: &mut B, t: Seconds, out: &mut StepOutput) -> Seconds {
        let cmd = match latched {
            Latched::Command(cmd) => cmd,
            Latched::Reject(reject) => {
                self.diagnostics.push(Diagnostic::CommandRejected {
                    seq: reject.seq,
                    reason: reject.reason.clone(),
                });
                let mut msg = self
                    .next_message(MessageKind::Error, t)
                    .with_payload(Payload::Text(reject.reason));
                msg.reply_to = reject.seq;
                out.messages.push(msg);
                return t;
            }
        };
        match cmd.opcode {
            Opcode::PowerInfoRequest => {
                let mut t = t;
                if !(self.serve_cache && self.cache_complete()) {
                    let d = self.collect_all(bus, t);
                    out.collection_time += d;
                    out.collections += 1;
                    t += d;
                }
                let msg = self.packet(t).replying_to(cmd.seq);
                out.messages.push(msg);
                t
            }
            Opcode::SetPushPeriod(p) => {
                self.push_period = p;
                let msg = self.next_message(MessageKind::SetupAck, t).replying_to(cmd.seq);
                out.messages.push(msg);
                t
            }
            Opcode::SetPushEnabled(e) => {
                self.push_enabled = e;
                let msg = self.next_message(MessageKind::SetupAck, t).replying_to(cmd.seq);
                out.messages.push(msg);
                t
            }
        }
    }
}
