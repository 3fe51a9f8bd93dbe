//! Event logs: parsing, relative durations, vocabulary, time scaling and
//! train/eval splitting.

mod canonical;
mod csv_input;
mod scaler;
mod split;
mod vocab;
mod xes;

pub use canonical::{content_hash, read_canonical, write_canonical};
pub use csv_input::{parse_csv, parse_csv_reader, ColumnMap};
pub use scaler::MinMaxScaler;
pub use split::{read_manifest, split_train_eval, write_manifest, SplitSpec};
pub use vocab::{Vocabulary, EOS, MASK, NUM_SPECIAL, PAD, SOS};
pub use xes::{parse_xes, parse_xes_reader};

use chrono::{DateTime, Utc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log contains no traces")]
    Empty,
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: cannot parse timestamp `{value}`")]
    Timestamp { row: usize, value: String },
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("split: {0}")]
    Split(String),
    #[error("scaler: {0}")]
    Scaler(String),
    #[error("canonical log: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One step of a trace: vocabulary index and duration in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub activity: usize,
    pub duration: f64,
}

impl Event {
    pub fn new(activity: usize, duration: f64) -> Self {
        Self { activity, duration }
    }

    pub fn eos() -> Self {
        Self::new(EOS, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn activities(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.activity).collect()
    }
}

/// Parsed traces sharing one vocabulary. Every trace ends with `[EOS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub traces: Vec<Trace>,
    pub vocabulary: Vocabulary,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Longest trace length, `[EOS]` included.
    pub fn max_trace_len(&self) -> usize {
        self.traces.iter().map(Trace::len).max().unwrap_or(0)
    }

    /// Sub-log with the given traces in the given order.
    pub fn select(&self, indices: &[usize]) -> EventLog {
        EventLog {
            traces: indices.iter().map(|&i| self.traces[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
        }
    }

    /// Checks the structural invariants of a preprocessed log.
    pub fn validate(&self) -> Result<(), LogError> {
        let v = self.vocabulary.len();
        for t in &self.traces {
            if t.len() < 2 {
                return Err(LogError::Invariant(format!(
                    "trace {} shorter than 2 events",
                    t.case_id
                )));
            }
            let eos = t.events.iter().filter(|e| e.activity == EOS).count();
            if eos != 1 || t.events.last().map(|e| e.activity) != Some(EOS) {
                return Err(LogError::Invariant(format!(
                    "trace {} must end with exactly one [EOS]",
                    t.case_id
                )));
            }
            for e in &t.events {
                if e.activity >= v {
                    return Err(LogError::Invariant(format!(
                        "activity {} outside vocabulary of size {v}",
                        e.activity
                    )));
                }
                if e.duration < 0.0 || (Vocabulary::is_special(e.activity) && e.duration != 0.0) {
                    return Err(LogError::Invariant(format!(
                        "bad duration {} in trace {}",
                        e.duration, t.case_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Raw event as read from a file, before sorting and vocabulary mapping.
#[derive(Clone, Debug)]
pub struct RawEvent {
    pub activity: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Clone, Debug)]
pub struct RawTrace {
    pub case_id: String,
    pub events: Vec<RawEvent>,
}

/// `duration[0] = 0`, `duration[i] = ts[i] - ts[i-1]` in whole seconds.
pub fn to_relative_durations(timestamps: &[i64]) -> Result<Vec<f64>, LogError> {
    let mut out = Vec::with_capacity(timestamps.len());
    for (i, &ts) in timestamps.iter().enumerate() {
        if i == 0 {
            out.push(0.0);
            continue;
        }
        let d = ts - timestamps[i - 1];
        if d < 0 {
            return Err(LogError::Invariant(format!(
                "timestamps decrease at position {i}"
            )));
        }
        out.push(d as f64);
    }
    Ok(out)
}

/// Sorts each case by time (stable), converts to durations, builds the
/// vocabulary and appends `[EOS]`.
pub fn build_log(raw: Vec<RawTrace>) -> Result<EventLog, LogError> {
    let raw: Vec<RawTrace> = raw.into_iter().filter(|t| !t.events.is_empty()).collect();
    if raw.is_empty() {
        return Err(LogError::Empty);
    }
    let vocabulary = Vocabulary::from_names(
        raw.iter()
            .flat_map(|t| t.events.iter().map(|e| e.activity.as_str())),
    );
    let mut traces = Vec::with_capacity(raw.len());
    for mut t in raw {
        t.events.sort_by_key(|e| e.timestamp);
        let stamps: Vec<i64> = t.events.iter().map(|e| e.timestamp.timestamp()).collect();
        let durations = to_relative_durations(&stamps)?;
        let mut events: Vec<Event> = t
            .events
            .iter()
            .zip(durations)
            .map(|(e, d)| {
                let idx = vocabulary
                    .index(&e.activity)
                    .expect("vocabulary built from these names");
                Event::new(idx, d)
            })
            .collect();
        events.push(Event::eos());
        traces.push(Trace {
            case_id: t.case_id,
            events,
        });
    }
    let log = EventLog { traces, vocabulary };
    log.validate()?;
    Ok(log)
}

/// Parses ISO-8601 / RFC 3339 timestamps. Values without an offset are
/// read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}
