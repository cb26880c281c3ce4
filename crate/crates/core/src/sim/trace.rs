//! Executed-event log and its line-delimited export format.
//!
//! A trace file is JSON lines: one `header`, one `event` line per executed
//! event, an optional `failure`, then a `footer` carrying the digest.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::Seconds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub at: Seconds,
    pub seq: u64,
    pub event: Value,
    /// Handler-reported state summary for this event.
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub at: Seconds,
    pub seq: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    pub seed: u64,
    pub config_digest: String,
    pub records: Vec<TraceRecord>,
    pub failure: Option<FailureRecord>,
    pub clock: Seconds,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header {
        version: u32,
        command: String,
        seed: u64,
        config_digest: String,
        config: Value,
    },
    Event(TraceRecord),
    Failure(FailureRecord),
    Footer {
        events: usize,
        clock: Seconds,
        digest: String,
    },
}

pub const TRACE_VERSION: u32 = 1;

/// A trace read back from disk, with the metadata needed to re-run it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub command: String,
    pub config: Value,
    pub trace: EventTrace,
    /// Digest as written in the footer.
    pub recorded_digest: String,
}

impl EventTrace {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            seed,
            config_digest: config_digest.into(),
            records: Vec::new(),
            failure: None,
            clock: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// SHA-256 over the seed, config digest, every record and the final
    /// clock, in order. Hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.config_digest.as_bytes());
        for r in &self.records {
            let line = serde_json::to_string(r).expect("trace records serialize");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        if let Some(f) = &self.failure {
            hasher.update(serde_json::to_string(f).expect("failure serializes").as_bytes());
        }
        hasher.update(self.clock.to_bits().to_le_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W, command: &str, config: &Value) -> Result<(), TraceError> {
        let header = Line::Header {
            version: TRACE_VERSION,
            command: command.to_string(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            config: config.clone(),
        };
        writeln!(out, "{}", to_line(&header))?;
        for r in &self.records {
            writeln!(out, "{}", to_line(&Line::Event(r.clone())))?;
        }
        if let Some(f) = &self.failure {
            writeln!(out, "{}", to_line(&Line::Failure(f.clone())))?;
        }
        let footer = Line::Footer {
            events: self.records.len(),
            clock: self.clock,
            digest: self.digest(),
        };
        writeln!(out, "{}", to_line(&footer))?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<TraceFile, TraceError> {
        let mut header = None;
        let mut trace = None;
        let mut footer = None;
        let mut last_line = 0;
        for (idx, line) in input.lines().enumerate() {
            let n = idx + 1;
            last_line = n;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: n,
                message: e.to_string(),
            })?;
            let parse_err = |message: &str| TraceError::Parse {
                line: n,
                message: message.to_string(),
            };
            if footer.is_some() {
                return Err(parse_err("content after footer"));
            }
            match parsed {
                Line::Header {
                    version,
                    command,
                    seed,
                    config_digest,
                    config,
                } => {
                    if header.is_some() {
                        return Err(parse_err("duplicate header"));
                    }
                    if version != TRACE_VERSION {
                        return Err(parse_err("unsupported trace version"));
                    }
                    trace = Some(EventTrace::new(seed, config_digest));
                    header = Some((command, config));
                }
                Line::Event(r) => {
                    let t = trace.as_mut().ok_or_else(|| parse_err("event before header"))?;
                    if t.failure.is_some() {
                        return Err(parse_err("event after failure record"));
                    }
                    t.records.push(r);
                }
                Line::Failure(f) => {
                    let t = trace.as_mut().ok_or_else(|| parse_err("failure before header"))?;
                    t.failure = Some(f);
                }
                Line::Footer { events, clock, digest } => {
                    let t = trace.as_mut().ok_or_else(|| parse_err("footer before header"))?;
                    if events != t.records.len() {
                        return Err(parse_err("footer event count does not match"));
                    }
                    t.clock = clock;
                    footer = Some(digest);
                }
            }
        }
        let (command, config) = header.ok_or(TraceError::Parse {
            line: last_line.max(1),
            message: "missing header".into(),
        })?;
        let recorded_digest = footer.ok_or(TraceError::Parse {
            line: last_line.max(1),
            message: "missing footer".into(),
        })?;
        Ok(TraceFile {
            command,
            config,
            trace: trace.expect("header creates the trace"),
            recorded_digest,
        })
    }
}

fn to_line(line: &Line) -> String {
    serde_json::to_string(line).expect("trace lines serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> EventTrace {
        let mut t = EventTrace::new(9, "abc");
        t.records.push(TraceRecord {
            at: 0.5,
            seq: 0,
            event: json!({"probe": 0}),
            detail: json!({"rtt": 0.2}),
        });
        t.records.push(TraceRecord {
            at: 1.0,
            seq: 1,
            event: json!({"probe": 1}),
            detail: Value::Null,
        });
        t.clock = 2.0;
        t
    }

    #[test]
    fn write_then_read_preserves_digest() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf, "rtt-dist", &json!({"seed": 9})).unwrap();
        let back = EventTrace::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.command, "rtt-dist");
        assert_eq!(back.trace, t);
        assert_eq!(back.recorded_digest, t.digest());
    }

    #[test]
    fn digest_sensitive_to_records() {
        let a = sample();
        let mut b = sample();
        b.records[0].detail = json!({"rtt": 0.21});
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf, "rtt-dist", &json!({})).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut edited: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        edited[2] = "{not json".into();
        text = edited.join("\n");
        match EventTrace::read_jsonl(text.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_footer_is_an_error() {
        let text = r#"{"type":"header","version":1,"command":"x","seed":1,"config_digest":"d","config":{}}"#;
        assert!(matches!(
            EventTrace::read_jsonl(text.as_bytes()),
            Err(TraceError::Parse { .. })
        ));
    }
}
