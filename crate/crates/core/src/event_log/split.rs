use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EventLog, LogError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            seed,
        }
    }
}

/// Shuffles traces with the seed and gives the first `⌊fraction·d⌋` to
/// training (at least one trace on each side).
pub fn split_train_eval(log: &EventLog, spec: SplitSpec) -> Result<(EventLog, EventLog), LogError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(LogError::Split(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let d = log.len();
    if d < 2 {
        return Err(LogError::Split(format!("need at least 2 traces, got {d}")));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((spec.train_fraction * d as f64).floor() as usize).clamp(1, d - 1);
    Ok((log.select(&order[..n_train]), log.select(&order[n_train..])))
}

/// Writes one case id per line.
pub fn write_manifest(path: &Path, log: &EventLog) -> Result<(), LogError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in &log.traces {
        writeln!(f, "{}", t.case_id)?;
    }
    f.flush()?;
    Ok(())
}

/// Selects the traces named in a manifest, in manifest order.
pub fn read_manifest(path: &Path, log: &EventLog) -> Result<EventLog, LogError> {
    let text = std::fs::read_to_string(path)?;
    let by_id: HashMap<&str, usize> = log
        .traces
        .iter()
        .enumerate()
        .map(|(i, t)| (t.case_id.as_str(), i))
        .collect();
    let mut idx = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let i = by_id.get(line).ok_or_else(|| {
            LogError::Split(format!("manifest names unknown case `{line}`"))
        })?;
        idx.push(*i);
    }
    Ok(log.select(&idx))
}
