//! Canonical log record and its JSON Lines interchange format.
//!
//! One record per line:
//!
//! ```text
//! {"ts":1700000000000000000,"msg":"Waiting for a new waypoint...","src":"waypoint_navigation","lvl":"INFO"}
//! ```
//!
//! `ts` is integer nanoseconds since the Unix epoch, `msg` is required and
//! must not be blank, `src` defaults to `""` and `lvl` to `INFO`. Unknown
//! fields are ignored.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogFormatError {
    #[error("malformed log line: {0}")]
    MalformedLine(String),
    #[error("log message is empty")]
    EmptyMessage,
    #[error("unknown log level `{0}`")]
    UnknownLevel(String),
}

/// Error while reading a whole JSONL file; carries the 1-based line number.
#[derive(Debug, Error)]
pub enum CorpusReadError {
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: LogFormatError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum Level {
    Debug,
    #[default]
    Info,
    Warn,
    Error,
    Fatal,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Debug,
        Level::Info,
        Level::Warn,
        Level::Error,
        Level::Fatal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Debug => "DEBUG",
            Level::Info => "INFO",
            Level::Warn => "WARN",
            Level::Error => "ERROR",
            Level::Fatal => "FATAL",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = LogFormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LogFormatError::UnknownLevel(s.to_string()))
    }
}

/// One log event: a timestamp and a message, plus middleware metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(rename = "ts")]
    pub timestamp: u64,
    #[serde(rename = "msg")]
    pub message: String,
    #[serde(rename = "src", default)]
    pub source: String,
    #[serde(rename = "lvl", default)]
    pub level: Level,
    /// Arrival order within a session; 0 until ingestion assigns it.
    #[serde(default)]
    pub seq: u64,
}

impl LogRecord {
    pub fn new(timestamp: u64, message: impl Into<String>) -> Self {
        Self {
            timestamp,
            message: message.into(),
            source: String::new(),
            level: Level::Info,
            seq: 0,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn with_level(mut self, level: Level) -> Self {
        self.level = level;
        self
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = seq;
        self
    }

    /// Equality ignoring `seq`, i.e. what survives a trip through the file format.
    pub fn same_content(&self, other: &LogRecord) -> bool {
        self.timestamp == other.timestamp
            && self.message == other.message
            && self.source == other.source
            && self.level == other.level
    }
}

/// The ordered set of records for one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogCorpus {
    pub session_id: String,
    pub records: Vec<LogRecord>,
}

impl LogCorpus {
    pub fn new(session_id: impl Into<String>, records: Vec<LogRecord>) -> Self {
        Self {
            session_id: session_id.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialize all records as JSON Lines (LF-terminated).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&write_log_line(r));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()
    }
}

/// Parse one JSONL line into a record with `seq = 0`.
pub fn parse_log_line(line: &str) -> Result<LogRecord, LogFormatError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| LogFormatError::MalformedLine(format!("invalid JSON: {e}")))?;
    parse_log_value(&value)
}

/// Byte-level entry point; non-UTF-8 input is a malformed line.
pub fn parse_log_bytes(bytes: &[u8]) -> Result<LogRecord, LogFormatError> {
    let line = std::str::from_utf8(bytes)
        .map_err(|_| LogFormatError::MalformedLine("not valid UTF-8".into()))?;
    parse_log_line(line)
}

/// Parse an already-decoded JSON object (used by the HTTP batch endpoint).
pub fn parse_log_value(value: &Value) -> Result<LogRecord, LogFormatError> {
    let obj = value
        .as_object()
        .ok_or_else(|| LogFormatError::MalformedLine("expected a JSON object".into()))?;

    let timestamp = match obj.get("ts") {
        Some(v) => v.as_u64().ok_or_else(|| {
            LogFormatError::MalformedLine("`ts` must be a non-negative integer".into())
        })?,
        None => return Err(LogFormatError::MalformedLine("missing `ts`".into())),
    };
    let message = match obj.get("msg") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(LogFormatError::MalformedLine(
                "`msg` must be a string".into(),
            ))
        }
        None => return Err(LogFormatError::MalformedLine("missing `msg`".into())),
    };
    if message.trim().is_empty() {
        return Err(LogFormatError::EmptyMessage);
    }
    let source = match obj.get("src") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(LogFormatError::MalformedLine(
                "`src` must be a string".into(),
            ))
        }
    };
    let level = match obj.get("lvl") {
        None | Some(Value::Null) => Level::Info,
        Some(Value::String(s)) => s.parse()?,
        Some(other) => return Err(LogFormatError::UnknownLevel(other.to_string())),
    };

    Ok(LogRecord {
        timestamp,
        message,
        source,
        level,
        seq: 0,
    })
}

#[derive(Serialize)]
struct WireRecord<'a> {
    ts: u64,
    msg: &'a str,
    src: &'a str,
    lvl: &'a str,
}

/// Serialize a record as a single JSON line (no trailing newline). Key order
/// is fixed: `ts`, `msg`, `src`, `lvl`.
pub fn write_log_line(record: &LogRecord) -> String {
    let wire = WireRecord {
        ts: record.timestamp,
        msg: &record.message,
        src: &record.source,
        lvl: record.level.as_str(),
    };
    serde_json::to_string(&wire).expect("string-keyed struct always serializes")
}

/// Read a JSONL stream. Blank lines are skipped; the first bad line aborts.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, CorpusReadError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let record = parse_log_line(trimmed).map_err(|source| CorpusReadError::Line {
            line: idx + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_listing_message() {
        let r = parse_log_line(
            r#"{"ts":1700000000000000000,"msg":"Waiting for a new waypoint...","src":"waypoint_navigation","lvl":"INFO"}"#,
        )
        .unwrap();
        assert_eq!(r.timestamp, 1_700_000_000_000_000_000);
        assert_eq!(r.message, "Waiting for a new waypoint...");
        assert_eq!(r.source, "waypoint_navigation");
        assert_eq!(r.level, Level::Info);
        assert_eq!(r.seq, 0);
    }

    #[test]
    fn minimal_record_gets_defaults() {
        let r = parse_log_line(r#"{"ts":0,"msg":"x"}"#).unwrap();
        assert_eq!(r, LogRecord::new(0, "x"));
    }

    #[test]
    fn blank_message_rejected() {
        assert_eq!(
            parse_log_line(r#"{"ts":5,"msg":"   "}"#),
            Err(LogFormatError::EmptyMessage)
        );
    }

    #[test]
    fn malformed_inputs() {
        for line in [
            "not json",
            "[1,2]",
            r#"{"msg":"a"}"#,
            r#"{"ts":1}"#,
            r#"{"ts":1.5,"msg":"a"}"#,
            r#"{"ts":-1,"msg":"a"}"#,
            r#"{"ts":"1","msg":"a"}"#,
            r#"{"ts":1,"msg":3}"#,
            r#"{"ts":1,"msg":"a","src":4}"#,
        ] {
            assert!(
                matches!(parse_log_line(line), Err(LogFormatError::MalformedLine(_))),
                "{line}"
            );
        }
    }

    #[test]
    fn unknown_level() {
        assert_eq!(
            parse_log_line(r#"{"ts":1,"msg":"a","lvl":"VERBOSE"}"#),
            Err(LogFormatError::UnknownLevel("VERBOSE".into()))
        );
        assert_eq!(
            parse_log_line(r#"{"ts":1,"msg":"a","lvl":"warn"}"#)
                .unwrap()
                .level,
            Level::Warn
        );
    }

    #[test]
    fn unknown_fields_ignored() {
        let r = parse_log_line(r#"{"ts":1,"msg":"a","node":"x","extra":{"k":1}}"#).unwrap();
        assert_eq!(r.message, "a");
    }

    #[test]
    fn writes_fixed_key_order() {
        let r = LogRecord::new(1, "a")
            .with_source("s")
            .with_level(Level::Warn);
        assert_eq!(
            write_log_line(&r),
            r#"{"ts":1,"msg":"a","src":"s","lvl":"WARN"}"#
        );
    }

    #[test]
    fn quotes_are_escaped() {
        let r = LogRecord::new(2, r#"No goal checker was specified in parameter 'x' "y""#);
        let line = write_log_line(&r);
        assert!(line.contains(r#"\"y\""#));
        assert_eq!(parse_log_line(&line).unwrap().message, r.message);
    }

    #[test]
    fn reads_jsonl_with_blank_lines_and_reports_line_number() {
        let text = "{\"ts\":1,\"msg\":\"a\"}\n\n{\"ts\":2,\"msg\":\"b\"}\r\n";
        let recs = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);

        let bad = "{\"ts\":1,\"msg\":\"a\"}\n{\"ts\":2}\n";
        match read_jsonl(bad.as_bytes()) {
            Err(CorpusReadError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_record() -> impl Strategy<Value = LogRecord> {
        (
            any::<u64>(),
            "\\PC*[^\\s]\\PC*",
            "\\PC*",
            prop::sample::select(Level::ALL.to_vec()),
        )
            .prop_map(|(ts, msg, src, lvl)| {
                LogRecord::new(ts, msg).with_source(src).with_level(lvl)
            })
    }

    proptest! {
        #[test]
        fn round_trip(r in arb_record()) {
            let back = parse_log_line(&write_log_line(&r)).unwrap();
            prop_assert!(back.same_content(&r));
        }

        #[test]
        fn never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_log_bytes(&bytes);
        }

        #[test]
        fn never_panics_on_jsonish(s in "\\{\"ts\":[-0-9.e]{0,8},\"msg\":\"[^\"]{0,8}\"(,\"lvl\":\"[A-Za-z]{0,6}\")?\\}") {
            let _ = parse_log_line(&s);
        }
    }
}
