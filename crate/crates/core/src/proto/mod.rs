//! Wire messages and the three ways the server learns meter readings:
//! per-meter legacy pull, aggregated pull through the PIC, and PIC push.

mod message;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ServerStore;
use crate::domain::{ChargingStation, DomainError, MeterId, MeterSnapshot, Seconds};
use crate::latency::{StationLinks, TimingBudget};
use crate::pic_fw::{Command, MeterBus, Opcode, PicState};

pub use message::{Message, MessageKind, PacketEntry, Payload, ReadStatus};

pub const DEFAULT_REQUEST_TIMEOUT: Seconds = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtoError {
    #[error("message received at {received_at} before it was sent at {sent_at}")]
    Causality { sent_at: Seconds, received_at: Seconds },
    #[error("wire format: {0}")]
    Wire(String),
    #[error("station {station} is offline")]
    Offline { station: usize },
    #[error("request to station {station} timed out after {waited} s")]
    Timeout { station: usize, waited: Seconds },
    #[error("station {station}: packet seq {seq} is not newer than stored seq {last}")]
    StalePacket { station: usize, seq: u64, last: u64 },
    #[error("station {station}: message is not an aggregate packet")]
    NotAPacket { station: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    LegacyPull,
    PicPull,
    PicPush,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullOptions {
    /// Follow each power request with a relay-status request.
    pub include_status: bool,
    /// Issue all legacy requests at once instead of one after another.
    pub pipelined: bool,
    pub timeout: Seconds,
}

impl Default for PullOptions {
    fn default() -> Self {
        Self {
            include_status: false,
            pipelined: false,
            timeout: DEFAULT_REQUEST_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub meter: MeterId,
    pub snapshot: Option<MeterSnapshot>,
    pub status: ReadStatus,
    /// Age of the snapshot when the server had it in hand.
    pub staleness: Option<Seconds>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Terminal {
    Response { message: Message },
    Timeout { at: Seconds },
    Reject { message: Message },
}

/// A request and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: Message,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub protocol: Protocol,
    pub station: usize,
    pub started_at: Seconds,
    pub completed_at: Seconds,
    pub wall_time: Seconds,
    pub request_count: usize,
    pub readings: Vec<MeterReading>,
    pub exchanges: Vec<Exchange>,
}

impl RetrievalResult {
    pub fn max_staleness(&self) -> Option<Seconds> {
        self.readings.iter().filter_map(|r| r.staleness).reduce(f64::max)
    }
}

/// `meter_count × (t_ethernet + t_metering) + t_3g_uplink`: one full
/// collect-and-push by the PIC.
pub fn push_cycle_time(budget: &TimingBudget, meter_count: usize) -> Seconds {
    meter_count as f64 * (budget.t_ethernet + budget.t_metering) + budget.t_3g_uplink()
}

/// Server wait saved by pushing instead of four sequential 3G pulls:
/// `3.5 × t_3g − 4 × t_ethernet`.
pub fn t_save(budget: &TimingBudget) -> Seconds {
    3.5 * budget.t_3g - 4.0 * budget.t_ethernet
}

/// Sequential legacy pull of `meter_count` power readings over 3G.
pub fn legacy_retrieval_time(budget: &TimingBudget, meter_count: usize) -> Seconds {
    meter_count as f64 * budget.round_trip_3g()
}

/// `baseline / improved`, or `None` when `improved` took no time.
pub fn speedup(baseline: Seconds, improved: Seconds) -> Option<f64> {
    (improved > 0.0).then(|| baseline / improved)
}

/// One server request answered at the station, split evenly into downlink
/// and uplink halves of a single network round trip.
struct Leg {
    arrive_at: Seconds,
    half: Seconds,
    rtt: Seconds,
}

fn leg(links: &mut StationLinks<'_>, at: Seconds) -> Leg {
    let rtt = links.network_rtt(at);
    Leg {
        arrive_at: at + rtt / 2.0,
        half: rtt / 2.0,
        rtt,
    }
}

/// Per-meter pull: a power request per meter, plus a status request each
/// when `include_status` is set.
pub fn legacy_pull(
    store: &mut ServerStore,
    station: &ChargingStation,
    links: &mut StationLinks<'_>,
    opts: &PullOptions,
    now: Seconds,
) -> Result<RetrievalResult, ProtoError> {
    if !station.online {
        return Err(ProtoError::Offline { station: station.id });
    }
    let mut t = now;
    let mut finished = now;
    let mut readings = Vec::new();
    let mut exchanges = Vec::new();
    for meter in station.meter_ids() {
        let mut reading = MeterReading {
            meter,
            snapshot: None,
            status: ReadStatus::Missing,
            staleness: None,
            timed_out: false,
        };

        let power = leg(links, t);
        let metering = links.metering(power.arrive_at);
        let req = Message::new(MessageKind::MeterPowerReq, station.id, store.next_seq(), t).with_meter(meter);
        let elapsed = power.rtt + metering;
        let done = if elapsed > opts.timeout {
            reading.timed_out = true;
            exchanges.push(Exchange {
                request: req,
                terminal: Terminal::Timeout { at: t + opts.timeout },
            });
            t + opts.timeout
        } else {
            let captured = power.arrive_at + metering;
            let snap = station.snapshot(meter.outlet, captured)?;
            let resp = Message::new(MessageKind::MeterPowerResp, station.id, req.seq, captured)
                .with_meter(meter)
                .with_payload(Payload::Snapshot(snap))
                .replying_to(req.seq)
                .delivered(captured + power.half)?;
            reading.snapshot = Some(snap);
            reading.status = ReadStatus::Fresh;
            exchanges.push(Exchange {
                request: req,
                terminal: Terminal::Response { message: resp },
            });
            captured + power.half
        };
        finished = finished.max(done);
        if !opts.pipelined {
            t = done;
        }

        if opts.include_status {
            let status = leg(links, t);
            let read = links.status_read(status.arrive_at);
            let req = Message::new(MessageKind::MeterStatusReq, station.id, store.next_seq(), t).with_meter(meter);
            let elapsed = status.rtt + read;
            let done = if elapsed > opts.timeout {
                reading.timed_out = true;
                exchanges.push(Exchange {
                    request: req,
                    terminal: Terminal::Timeout { at: t + opts.timeout },
                });
                t + opts.timeout
            } else {
                let read_at = status.arrive_at + read;
                let relay = station.snapshot(meter.outlet, read_at)?.relay;
                if let Some(snap) = reading.snapshot.as_mut() {
                    snap.relay = relay;
                }
                let resp = Message::new(MessageKind::MeterStatusResp, station.id, req.seq, read_at)
                    .with_meter(meter)
                    .with_payload(Payload::Relay(relay))
                    .replying_to(req.seq)
                    .delivered(read_at + status.half)?;
                exchanges.push(Exchange {
                    request: req,
                    terminal: Terminal::Response { message: resp },
                });
                read_at + status.half
            };
            finished = finished.max(done);
            if !opts.pipelined {
                t = done;
            }
        }
        readings.push(reading);
    }
    for r in &mut readings {
        r.staleness = r.snapshot.map(|s| finished - s.captured_at);
    }
    let result = RetrievalResult {
        protocol: Protocol::LegacyPull,
        station: station.id,
        started_at: now,
        completed_at: finished,
        wall_time: finished - now,
        request_count: exchanges.len(),
        readings,
        exchanges,
    };
    store.record_retrieval(&result);
    Ok(result)
}

/// One aggregate request served by the station's PIC. The PIC answers from
/// its cache or with a fresh collection depending on its configuration.
pub fn pic_pull<B: MeterBus + ?Sized>(
    store: &mut ServerStore,
    station: &ChargingStation,
    pic: &mut PicState,
    bus: &mut B,
    links: &mut StationLinks<'_>,
    opts: &PullOptions,
    now: Seconds,
) -> Result<RetrievalResult, ProtoError> {
    if !station.online {
        return Err(ProtoError::Offline { station: station.id });
    }
    let link = leg(links, now);
    let req = Message::new(MessageKind::AggregateReq, station.id, store.next_seq(), now);
    pic.on_command(&Command::new(req.seq, Opcode::PowerInfoRequest));
    // the PIC may still be finishing earlier work when the request lands
    let step_at = link.arrive_at.max(pic.busy_until());
    let out = pic.main_loop_step(bus, step_at);
    let reply = out.messages.into_iter().find(|m| m.reply_to == Some(req.seq));
    let Some(reply) = reply else {
        return Err(ProtoError::Timeout {
            station: station.id,
            waited: opts.timeout,
        });
    };
    let received = reply.sent_at + link.half;
    if received - now > opts.timeout {
        return Err(ProtoError::Timeout {
            station: station.id,
            waited: opts.timeout,
        });
    }
    let reply = reply.delivered(received)?;
    let terminal = if reply.kind == MessageKind::Error {
        Terminal::Reject { message: reply.clone() }
    } else {
        Terminal::Response { message: reply.clone() }
    };
    let readings = reply
        .packet()
        .unwrap_or_default()
        .iter()
        .map(|e| MeterReading {
            meter: e.meter,
            snapshot: e.snapshot,
            status: e.status,
            staleness: e.snapshot.map(|s| received - s.captured_at),
            timed_out: false,
        })
        .collect();
    let result = RetrievalResult {
        protocol: Protocol::PicPull,
        station: station.id,
        started_at: now,
        completed_at: received,
        wall_time: received - now,
        request_count: 1,
        readings,
        exchanges: vec![Exchange { request: req, terminal }],
    };
    store.record_retrieval(&result);
    Ok(result)
}

/// Per-meter staleness after the server stored a pushed packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessReport {
    pub station: usize,
    pub seq: u64,
    pub at: Seconds,
    pub staleness: Vec<(MeterId, Option<Seconds>)>,
}

impl StalenessReport {
    pub fn max(&self) -> Option<Seconds> {
        self.staleness.iter().filter_map(|(_, s)| *s).reduce(f64::max)
    }
}

/// Stores a pushed aggregate packet. Packets not newer than the last one
/// stored for the station are dropped and leave a diagnostic in the store.
pub fn push_consume(store: &mut ServerStore, packet: &Message, now: Seconds) -> Result<StalenessReport, ProtoError> {
    let entries = packet.packet().ok_or(ProtoError::NotAPacket { station: packet.station })?;
    if packet.sent_at > now {
        return Err(ProtoError::Causality {
            sent_at: packet.sent_at,
            received_at: now,
        });
    }
    store.store_packet(packet.station, packet.seq, entries, now)?;
    Ok(StalenessReport {
        station: packet.station,
        seq: packet.seq,
        at: now,
        staleness: entries
            .iter()
            .map(|e| (e.meter, e.snapshot.map(|s| now - s.captured_at)))
            .collect(),
    })
}
