use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use suffixbench_core::config::KeyValues;
use suffixbench_core::event_log::{content_hash, parse_csv, parse_xes, write_canonical, ColumnMap, EventLog};

use crate::args::{Format, IngestArgs};
use crate::CliResult;

pub const LOG_FILE: &str = "log.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const HISTOGRAM_FILE: &str = "histograms.csv";
const INGEST_CONFIG_FILE: &str = "ingest.cfg";

/// `kind,key,count` rows: trace lengths (events including `[EOS]`),
/// activity frequencies (including `[EOS]`) and the token counts of padding
/// every trace to the longest one.
fn histograms(log: &EventLog) -> String {
    let mut lengths: BTreeMap<usize, usize> = BTreeMap::new();
    let mut acts = vec![0usize; log.vocabulary.len()];
    for t in &log.traces {
        *lengths.entry(t.len()).or_default() += 1;
        for e in &t.events {
            acts[e.activity] += 1;
        }
    }
    let mut s = String::from("kind,key,count\n");
    for (len, n) in &lengths {
        let _ = writeln!(s, "trace_length,{len},{n}");
    }
    for (i, n) in acts.iter().enumerate().filter(|(_, &n)| n > 0) {
        let name = log.vocabulary.name(i).unwrap_or("?");
        let _ = writeln!(s, "activity,{},{n}", csv_field(name));
    }
    let true_tokens: usize = log.traces.iter().map(|t| t.len()).sum();
    let padded = log.len() * log.max_trace_len();
    let _ = writeln!(s, "pad_projection,true_tokens,{true_tokens}");
    let _ = writeln!(s, "pad_projection,pad_tokens,{}", padded - true_tokens);
    let _ = writeln!(s, "pad_projection,padded_tokens,{padded}");
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_ingest(a: &IngestArgs) -> CliResult<()> {
    let log = match a.format {
        Format::Csv => parse_csv(
            &a.input,
            &ColumnMap {
                case: a.case_column.clone(),
                activity: a.activity_column.clone(),
                timestamp: a.timestamp_column.clone(),
            },
        )?,
        Format::Xes => parse_xes(&a.input)?,
    };
    std::fs::create_dir_all(&a.out)?;
    let mut bytes = Vec::new();
    write_canonical(&mut bytes, &log)?;
    std::fs::write(a.out.join(LOG_FILE), &bytes)?;
    let mut vocab = String::new();
    for n in log.vocabulary.names() {
        vocab.push_str(n);
        vocab.push('\n');
    }
    std::fs::write(a.out.join(VOCAB_FILE), vocab)?;
    std::fs::write(a.out.join(HISTOGRAM_FILE), histograms(&log))?;

    let mut kv = KeyValues::new();
    kv.set("input", a.input.display());
    kv.set("format", format!("{:?}", a.format).to_lowercase());
    kv.set("log_hash", content_hash(&bytes));
    kv.set("vocabulary_fingerprint", log.vocabulary.fingerprint());
    kv.set("traces", log.len());
    kv.set("events", log.traces.iter().map(|t| t.len()).sum::<usize>());
    kv.set("activities", log.vocabulary.num_activities());
    kv.set("max_trace_len", log.max_trace_len());
    std::fs::File::create(a.out.join(INGEST_CONFIG_FILE))?.write_all(kv.to_string().as_bytes())?;
    println!(
        "ingested {} traces, {} activities, longest trace {} -> {}",
        log.len(),
        log.vocabulary.num_activities(),
        log.max_trace_len(),
        a.out.display()
    );
    Ok(())
}
