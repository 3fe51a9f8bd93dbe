use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::{build_log, parse_timestamp, EventLog, LogError, RawEvent, RawTrace};

/// Names of the CSV columns holding case id, activity and timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMap {
    pub case: String,
    pub activity: String,
    pub timestamp: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            case: "case_id".into(),
            activity: "activity".into(),
            timestamp: "timestamp".into(),
        }
    }
}

pub fn parse_csv(path: &Path, columns: &ColumnMap) -> Result<EventLog, LogError> {
    let file = std::fs::File::open(path)?;
    parse_csv_reader(file, columns)
}

/// Reads a headered UTF-8 CSV. Cases appear in order of first occurrence.
pub fn parse_csv_reader<R: Read>(input: R, columns: &ColumnMap) -> Result<EventLog, LogError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LogError::Schema(format!("unknown column `{name}`")))
    };
    let (ci, ai, ti) = (
        col(&columns.case)?,
        col(&columns.activity)?,
        col(&columns.timestamp)?,
    );

    let mut order: Vec<RawTrace> = Vec::new();
    let mut by_case: HashMap<String, usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let ts_raw = field(ti);
        let timestamp = parse_timestamp(ts_raw).ok_or_else(|| LogError::Timestamp {
            row,
            value: ts_raw.to_string(),
        })?;
        let case = field(ci).to_string();
        let slot = *by_case.entry(case.clone()).or_insert_with(|| {
            order.push(RawTrace {
                case_id: case,
                events: Vec::new(),
            });
            order.len() - 1
        });
        order[slot].events.push(RawEvent {
            activity: field(ai).to_string(),
            timestamp,
        });
    }
    build_log(order)
}
