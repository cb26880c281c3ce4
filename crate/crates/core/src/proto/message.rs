use serde::{Deserialize, Serialize};

use crate::domain::{AlgorithmMode, MeterId, MeterSnapshot, RelayState, Seconds};

use super::ProtoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    MeterPowerReq,
    MeterStatusReq,
    MeterPowerResp,
    MeterStatusResp,
    AggregateReq,
    AggregatePacket,
    /// Acknowledges a push-period / push-enable / mode-select command.
    SetupAck,
    DutyCycleSet,
    DutyCycleAck,
    ModeSelect,
    Error,
}

impl MessageKind {
    /// Messages the server sends to direct a station's charging schedule.
    pub fn is_scheduling(self) -> bool {
        matches!(self, MessageKind::DutyCycleSet)
    }
}

/// Freshness of one meter's entry in an aggregate packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadStatus {
    Fresh,
    /// The last read failed; the snapshot (if any) is from an earlier read.
    Stale,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketEntry {
    pub meter: MeterId,
    pub snapshot: Option<MeterSnapshot>,
    pub status: ReadStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    None,
    Snapshot(MeterSnapshot),
    Relay(RelayState),
    Packet(Vec<PacketEntry>),
    DutyPercent(f64),
    Mode(AlgorithmMode),
    Text(String),
}

/// One wire record. Serialized as a single JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub station: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meter: Option<MeterId>,
    pub payload: Payload,
    pub seq: u64,
    /// Sequence number of the request this message answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    pub sent_at: Seconds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_at: Option<Seconds>,
}

impl Message {
    pub fn new(kind: MessageKind, station: usize, seq: u64, sent_at: Seconds) -> Self {
        Self {
            kind,
            station,
            meter: None,
            payload: Payload::None,
            seq,
            reply_to: None,
            sent_at,
            received_at: None,
        }
    }

    pub fn with_meter(mut self, meter: MeterId) -> Self {
        self.meter = Some(meter);
        self
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }

    pub fn replying_to(mut self, seq: u64) -> Self {
        self.reply_to = Some(seq);
        self
    }

    pub fn delivered(mut self, at: Seconds) -> Result<Self, ProtoError> {
        if at < self.sent_at {
            return Err(ProtoError::Causality {
                sent_at: self.sent_at,
                received_at: at,
            });
        }
        self.received_at = Some(at);
        Ok(self)
    }

    pub fn packet(&self) -> Option<&[PacketEntry]> {
        match &self.payload {
            Payload::Packet(entries) => Some(entries),
            _ => None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, ProtoError> {
        serde_json::from_str(line).map_err(|e| ProtoError::Wire(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delivery_before_send_rejected() {
        let m = Message::new(MessageKind::AggregateReq, 0, 1, 10.0);
        assert!(m.clone().delivered(9.0).is_err());
        assert_eq!(m.delivered(10.5).unwrap().received_at, Some(10.5));
    }

    #[test]
    fn wire_field_names_are_stable() {
        let m = Message::new(MessageKind::DutyCycleSet, 2, 7, 1.5)
            .with_meter(MeterId { station: 2, outlet: 1 })
            .with_payload(Payload::DutyPercent(26.0));
        assert_eq!(
            m.to_line(),
            r#"{"kind":"duty_cycle_set","station":2,"meter":{"station":2,"outlet":1},"payload":{"type":"duty_percent","value":26.0},"seq":7,"sent_at":1.5}"#
        );
    }

    #[test]
    fn garbage_line_is_a_wire_error() {
        assert!(matches!(Message::from_line("{\"kind\":"), Err(ProtoError::Wire(_))));
    }

    proptest! {
        #[test]
        fn line_round_trip(station in 0usize..64, seq in any::<u64>(), sent in 0.0f64..1e6, amps in 0.0f64..80.0) {
            let snap = MeterSnapshot {
                meter: MeterId { station, outlet: 0 },
                volts: 208.0,
                amps,
                watts: 208.0 * amps,
                energy_kwh: amps / 7.0,
                relay: RelayState::On,
                captured_at: sent,
            };
            let m = Message::new(MessageKind::AggregatePacket, station, seq, sent)
                .with_payload(Payload::Packet(vec![PacketEntry { meter: snap.meter, snapshot: Some(snap), status: ReadStatus::Fresh }]))
                .replying_to(seq / 2);
            prop_assert_eq!(Message::from_line(&m.to_line()).unwrap(), m);
        }
    }
}
