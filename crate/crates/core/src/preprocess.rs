//! Training layouts, padding and batching.
//!
//! | layout                  | input            | decoder input        | target              |
//! |-------------------------|------------------|----------------------|---------------------|
//! | `NextEvent`             | prefix `σ≤k`     | –                    | `e_{k+1}` (last pos) |
//! | `PrefixToShiftedSuffix` | prefix `σ≤k`     | `[SOS] ++ σ>k[..-1]` | `σ>k`               |
//! | `MaskedReconstruction`  | corrupted `σ`    | –                    | `σ` at masked slots |
//! | `FullShifted`           | `σ[..n-1]`       | –                    | `σ[1..]`            |

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;

use crate::event_log::{Event, EventLog, MinMaxScaler, Vocabulary, MASK, PAD, SOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetLayout {
    NextEvent,
    PrefixToShiftedSuffix,
    MaskedReconstruction,
    FullShifted,
}

impl TargetLayout {
    pub fn tag(self) -> &'static str {
        match self {
            Self::NextEvent => "next-event",
            Self::PrefixToShiftedSuffix => "prefix-shifted-suffix",
            Self::MaskedReconstruction => "masked",
            Self::FullShifted => "full-shifted",
        }
    }
}

/// A prefix of length `k` and the rest of its trace.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixSample {
    pub trace_index: usize,
    pub k: usize,
    pub prefix: Vec<Event>,
    pub suffix: Vec<Event>,
}

#[derive(Clone, Debug, Default)]
pub struct PrefixPairs {
    pub samples: Vec<PrefixSample>,
    /// Traces too short (fewer than 3 events with `[EOS]`) to yield a sample.
    pub skipped_traces: usize,
}

/// All `(σ≤k, σ>k)` pairs with `2 ≤ k < |σ|`.
pub fn make_prefix_suffix_pairs(log: &EventLog) -> PrefixPairs {
    let mut out = PrefixPairs::default();
    for (ti, t) in log.traces.iter().enumerate() {
        let n = t.len();
        if n < 3 {
            out.skipped_traces += 1;
            continue;
        }
        for k in 2..n {
            out.samples.push(PrefixSample {
                trace_index: ti,
                k,
                prefix: t.events[..k].to_vec(),
                suffix: t.events[k..].to_vec(),
            });
        }
    }
    out
}

/// Number of prefix samples per `k`: `|{σ : |σ| > k}|`.
pub fn samples_per_k(log: &EventLog) -> Vec<(usize, usize)> {
    let max = log.max_trace_len();
    (2..max)
        .map(|k| (k, log.traces.iter().filter(|t| t.len() > k).count()))
        .collect()
}

/// One unpadded training row.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Vec<Event>,
    pub decoder_input: Option<Vec<Event>>,
    pub target: Vec<Event>,
    pub target_mask: Vec<bool>,
}

pub fn examples(log: &EventLog, layout: TargetLayout) -> Vec<Example> {
    match layout {
        TargetLayout::NextEvent => make_prefix_suffix_pairs(log)
            .samples
            .into_iter()
            .map(|s| {
                let mut target = s.prefix[1..].to_vec();
                target.push(s.suffix[0]);
                let mut target_mask = vec![false; s.k];
                target_mask[s.k - 1] = true;
                Example {
                    input: s.prefix,
                    decoder_input: None,
                    target,
                    target_mask,
                }
            })
            .collect(),
        TargetLayout::PrefixToShiftedSuffix => make_prefix_suffix_pairs(log)
            .samples
            .into_iter()
            .map(|s| {
                let mut dec = vec![Event::new(SOS, 0.0)];
                dec.extend_from_slice(&s.suffix[..s.suffix.len() - 1]);
                let n = s.suffix.len();
                Example {
                    input: s.prefix,
                    decoder_input: Some(dec),
                    target: s.suffix,
                    target_mask: vec![true; n],
                }
            })
            .collect(),
        TargetLayout::MaskedReconstruction => log
            .traces
            .iter()
            .map(|t| Example {
                input: t.events.clone(),
                decoder_input: None,
                target: t.events.clone(),
                target_mask: vec![false; t.len()],
            })
            .collect(),
        TargetLayout::FullShifted => log
            .traces
            .iter()
            .filter(|t| t.len() >= 2)
            .map(|t| Example {
                input: t.events[..t.len() - 1].to_vec(),
                decoder_input: None,
                target: t.events[1..].to_vec(),
                target_mask: vec![true; t.len() - 1],
            })
            .collect(),
    }
}

/// Right-padded sequences, `[batch × len]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    pub batch: usize,
    pub len: usize,
    pub activities: Vec<usize>,
    /// Scaled durations; zero for special symbols and padding.
    pub times: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl SeqBatch {
    pub fn from_rows(rows: &[&[Event]], scaler: &MinMaxScaler, width: usize) -> Self {
        let batch = rows.len();
        let mut activities = vec![PAD; batch * width];
        let mut times = vec![0.0; batch * width];
        for (b, row) in rows.iter().enumerate() {
            for (t, e) in row.iter().enumerate() {
                activities[b * width + t] = e.activity;
                times[b * width + t] = scaled_time(e, scaler);
            }
        }
        Self {
            batch,
            len: width,
            activities,
            times,
            lengths: rows.iter().map(|r| r.len()).collect(),
        }
    }

    /// Single-row batch holding already scaled values.
    pub fn single(activities: Vec<usize>, times: Vec<f64>) -> Self {
        let n = activities.len();
        Self {
            batch: 1,
            len: n,
            activities,
            times,
            lengths: vec![n],
        }
    }

    pub fn is_padded(&self) -> bool {
        self.lengths.iter().any(|&l| l < self.len)
    }

    fn pad_to(&mut self, width: usize) {
        let mut acts = vec![PAD; self.batch * width];
        let mut times = vec![0.0; self.batch * width];
        for b in 0..self.batch {
            let n = self.len.min(width);
            acts[b * width..b * width + n]
                .copy_from_slice(&self.activities[b * self.len..b * self.len + n]);
            times[b * width..b * width + n]
                .copy_from_slice(&self.times[b * self.len..b * self.len + n]);
        }
        self.activities = acts;
        self.times = times;
        self.len = width;
    }
}

/// Scaled duration; special symbols are defined as zero time.
pub fn scaled_time(e: &Event, scaler: &MinMaxScaler) -> f64 {
    if Vocabulary::is_special(e.activity) {
        0.0
    } else {
        scaler.apply(e.duration)
    }
}

/// A padded training batch. Targets are aligned with `decoder_inputs` for
/// the prefix-to-suffix layout and with `inputs` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub layout: TargetLayout,
    pub inputs: SeqBatch,
    pub decoder_inputs: Option<SeqBatch>,
    pub activity_targets: Vec<usize>,
    pub time_targets: Vec<f64>,
    pub loss_mask: Vec<f64>,
    pub target_len: usize,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.inputs.batch
    }

    pub fn target_positions(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m > 0.0).count()
    }

    /// Same batch with `extra` more pad columns on every padded side.
    pub fn with_extra_padding(&self, extra: usize) -> Batch {
        let mut out = self.clone();
        let aligned_with_inputs = self.decoder_inputs.is_none();
        out.inputs.pad_to(self.inputs.len + extra);
        if let Some(d) = out.decoder_inputs.as_mut() {
            d.pad_to(d.len + extra);
        }
        let old = self.target_len;
        let new = old + extra;
        let mut acts = vec![PAD; self.rows() * new];
        let mut times = vec![0.0; self.rows() * new];
        let mut mask = vec![0.0; self.rows() * new];
        for b in 0..self.rows() {
            acts[b * new..b * new + old].copy_from_slice(&self.activity_targets[b * old..(b + 1) * old]);
            times[b * new..b * new + old].copy_from_slice(&self.time_targets[b * old..(b + 1) * old]);
            mask[b * new..b * new + old].copy_from_slice(&self.loss_mask[b * old..(b + 1) * old]);
        }
        out.activity_targets = acts;
        out.time_targets = times;
        out.loss_mask = mask;
        out.target_len = new;
        debug_assert!(!aligned_with_inputs || out.inputs.len == new);
        out
    }
}

/// Sorts examples by length (stable), cuts them into batches of at most
/// `batch_size` rows and right-pads each batch with `[PAD]`.
pub fn pad_and_batch(
    examples: &[Example],
    layout: TargetLayout,
    batch_size: usize,
    scaler: &MinMaxScaler,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| {
        let e = &examples[i];
        (e.input.len(), e.decoder_input.as_ref().map_or(0, Vec::len))
    });
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let in_width = rows.iter().map(|e| e.input.len()).max().unwrap_or(0);
            let inputs = SeqBatch::from_rows(
                &rows.iter().map(|e| e.input.as_slice()).collect::<Vec<_>>(),
                scaler,
                in_width,
            );
            let decoder_inputs = if rows.iter().all(|e| e.decoder_input.is_some()) {
                let dec: Vec<&[Event]> = rows
                    .iter()
                    .map(|e| e.decoder_input.as_deref().expect("checked"))
                    .collect();
                let w = dec.iter().map(|d| d.len()).max().unwrap_or(0);
                Some(SeqBatch::from_rows(&dec, scaler, w))
            } else {
                None
            };
            let target_len = rows.iter().map(|e| e.target.len()).max().unwrap_or(0);
            let n = rows.len() * target_len;
            let mut activity_targets = vec![PAD; n];
            let mut time_targets = vec![0.0; n];
            let mut loss_mask = vec![0.0; n];
            for (b, e) in rows.iter().enumerate() {
                for (t, (ev, &m)) in e.target.iter().zip(&e.target_mask).enumerate() {
                    activity_targets[b * target_len + t] = ev.activity;
                    time_targets[b * target_len + t] = scaled_time(ev, scaler);
                    loss_mask[b * target_len + t] = if m { 1.0 } else { 0.0 };
                }
            }
            Batch {
                layout,
                inputs,
                decoder_inputs,
                activity_targets,
                time_targets,
                loss_mask,
                target_len,
            }
        })
        .collect()
}

/// Batches for layout ④ (next token at every position of the full trace).
pub fn make_full_shifted(log: &EventLog, scaler: &MinMaxScaler, batch_size: usize) -> Vec<Batch> {
    pad_and_batch(
        &examples(log, TargetLayout::FullShifted),
        TargetLayout::FullShifted,
        batch_size,
        scaler,
    )
}

/// Clean full-trace batches for layout ③; corrupt each step with [`mask_batch`].
///
/// Every trace is extended with `[EOS]` (time 0) up to `canvas` events, the
/// width of the decoding canvas, so that the sequence length carries no
/// information about the trace.
pub fn make_masked(log: &EventLog, scaler: &MinMaxScaler, batch_size: usize, canvas: usize) -> Vec<Batch> {
    let mut ex = examples(log, TargetLayout::MaskedReconstruction);
    for e in &mut ex {
        while e.input.len() < canvas {
            e.input.push(Event::eos());
            e.target.push(Event::eos());
            e.target_mask.push(false);
        }
    }
    pad_and_batch(&ex, TargetLayout::MaskedReconstruction, batch_size, scaler)
}

/// Per row: draws `c ~ U{1..n}`, replaces `c` distinct true positions by
/// `[MASK]` (time 0) and puts the loss only on those positions.
pub fn mask_batch<R: Rng + ?Sized>(clean: &Batch, rng: &mut R) -> Batch {
    let mut out = clean.clone();
    let width = clean.inputs.len;
    out.loss_mask.iter_mut().for_each(|m| *m = 0.0);
    for b in 0..clean.rows() {
        let n = clean.inputs.lengths[b];
        if n == 0 {
            continue;
        }
        let c = rng.random_range(1..=n);
        for pos in sample(rng, n, c).into_iter() {
            out.inputs.activities[b * width + pos] = MASK;
            out.inputs.times[b * width + pos] = 0.0;
            out.loss_mask[b * clean.target_len + pos] = 1.0;
        }
    }
    out
}

/// Batches for any layout. Masked batches use the log's longest trace as
/// canvas (see [`make_masked`]) and still need [`mask_batch`] per step.
pub fn make_batches(
    log: &EventLog,
    layout: TargetLayout,
    scaler: &MinMaxScaler,
    batch_size: usize,
) -> Vec<Batch> {
    if layout == TargetLayout::MaskedReconstruction {
        return make_masked(log, scaler, batch_size, log.max_trace_len());
    }
    pad_and_batch(&examples(log, layout), layout, batch_size, scaler)
}

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("index {index} out of range for vocabulary size {size}")]
    OutOfRange { index: usize, size: usize },
    #[error("batch cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn one_hot(index: usize, vocab_size: usize) -> Result<Vec<f64>, PreprocessError> {
    if index >= vocab_size {
        return Err(PreprocessError::OutOfRange {
            index,
            size: vocab_size,
        });
    }
    let mut v = vec![0.0; vocab_size];
    v[index] = 1.0;
    Ok(v)
}

/// Identifies a cached set of prepared batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheKey {
    pub log_hash: String,
    pub layout: TargetLayout,
    pub seed: u64,
    pub batch_size: usize,
}

impl CacheKey {
    fn encode(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.log_hash,
            self.layout.tag(),
            self.seed,
            self.batch_size
        )
    }
}

const CACHE_MAGIC: &[u8; 4] = b"SBBC";
const CACHE_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn put_seq<W: Write>(w: &mut W, s: &SeqBatch) -> std::io::Result<()> {
    put_u32(w, s.batch)?;
    put_u32(w, s.len)?;
    for &a in &s.activities {
        put_u32(w, a)?;
    }
    for &t in &s.times {
        w.write_all(&(t as f32).to_le_bytes())?;
    }
    for &l in &s.lengths {
        put_u32(w, l)?;
    }
    Ok(())
}

/// Writes prepared batches with a versioned header; floats as little-endian `f32`.
pub fn write_batch_cache<W: Write>(
    w: &mut W,
    key: &CacheKey,
    batches: &[Batch],
) -> Result<(), PreprocessError> {
    w.write_all(CACHE_MAGIC)?;
    put_u32(w, CACHE_VERSION as usize)?;
    let k = key.encode();
    put_u32(w, k.len())?;
    w.write_all(k.as_bytes())?;
    put_u32(w, batches.len())?;
    for b in batches {
        put_seq(w, &b.inputs)?;
        match &b.decoder_inputs {
            Some(d) => {
                w.write_all(&[1])?;
                put_seq(w, d)?;
            }
            None => w.write_all(&[0])?,
        }
        put_u32(w, b.target_len)?;
        for &a in &b.activity_targets {
            put_u32(w, a)?;
        }
        for &t in &b.time_targets {
            w.write_all(&(t as f32).to_le_bytes())?;
        }
        for &m in &b.loss_mask {
            w.write_all(&(m as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a, R>(&'a mut R);

impl<R: Read> Cursor<'_, R> {
    fn u32(&mut self) -> Result<usize, PreprocessError> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }
    fn f32(&mut self) -> Result<f64, PreprocessError> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b) as f64)
    }
    fn seq(&mut self) -> Result<SeqBatch, PreprocessError> {
        let batch = self.u32()?;
        let len = self.u32()?;
        let activities = (0..batch * len).map(|_| self.u32()).collect::<Result<_, _>>()?;
        let times = (0..batch * len).map(|_| self.f32()).collect::<Result<_, _>>()?;
        let lengths = (0..batch).map(|_| self.u32()).collect::<Result<_, _>>()?;
        Ok(SeqBatch {
            batch,
            len,
            activities,
            times,
            lengths,
        })
    }
}

/// Reads a cache, returning `None` when it was written under a different key.
pub fn read_batch_cache<R: Read>(
    r: &mut R,
    key: &CacheKey,
) -> Result<Option<Vec<Batch>>, PreprocessError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(PreprocessError::Cache("bad magic".into()));
    }
    let mut c = Cursor(r);
    if c.u32()? != CACHE_VERSION as usize {
        return Err(PreprocessError::Cache("unsupported version".into()));
    }
    let klen = c.u32()?;
    let mut kb = vec![0u8; klen];
    c.0.read_exact(&mut kb)?;
    if kb != key.encode().as_bytes() {
        return Ok(None);
    }
    let n = c.u32()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let inputs = c.seq()?;
        let mut flag = [0u8; 1];
        c.0.read_exact(&mut flag)?;
        let decoder_inputs = if flag[0] == 1 { Some(c.seq()?) } else { None };
        let target_len = c.u32()?;
        let m = inputs.batch * target_len;
        let activity_targets = (0..m).map(|_| c.u32()).collect::<Result<_, _>>()?;
        let time_targets = (0..m).map(|_| c.f32()).collect::<Result<_, _>>()?;
        let loss_mask = (0..m).map(|_| c.f32()).collect::<Result<_, _>>()?;
        out.push(Batch {
            layout: key.layout,
            inputs,
            decoder_inputs,
            activity_targets,
            time_targets,
            loss_mask,
            target_len,
        });
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{Trace, EOS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(id: &str, acts: &[usize]) -> Trace {
        let mut events: Vec<Event> = acts
            .iter()
            .enumerate()
            .map(|(i, &a)| Event::new(a, if i == 0 { 0.0 } else { 10.0 * a as f64 }))
            .collect();
        events.push(Event::eos());
        Trace {
            case_id: id.into(),
            events,
        }
    }

    fn log(traces: Vec<Trace>) -> EventLog {
        EventLog {
            traces,
            vocabulary: Vocabulary::from_names(["A", "B", "C", "D", "E"]),
        }
    }

    fn scaler() -> MinMaxScaler {
        MinMaxScaler::new(0.0, 100.0).unwrap()
    }

    #[test]
    fn prefix_counts() {
        let l = log(vec![trace("a", &[4, 5, 6, 7]), trace("b", &[4, 5])]);
        let p = make_prefix_suffix_pairs(&l);
        let ks: Vec<usize> = p.samples.iter().map(|s| s.k).collect();
        assert_eq!(ks, vec![2, 3, 4, 2]);
        let short = log(vec![trace("s", &[4])]);
        let p = make_prefix_suffix_pairs(&short);
        assert!(p.samples.is_empty());
        assert_eq!(p.skipped_traces, 1);
    }

    #[test]
    fn prefix_plus_suffix_reconstructs_trace() {
        let l = log(vec![trace("a", &[4, 5, 6, 7, 8, 4]), trace("b", &[8, 4, 5])]);
        for s in make_prefix_suffix_pairs(&l).samples {
            let mut joined = s.prefix.clone();
            joined.extend(s.suffix.iter().copied());
            assert_eq!(joined, l.traces[s.trace_index].events);
            assert_eq!(s.suffix.last().unwrap().activity, EOS);
        }
    }

    #[test]
    fn per_k_counts_match_recount() {
        let l = log(vec![
            trace("a", &[4, 5]),
            trace("b", &[4, 5, 6, 7]),
            trace("c", &[4, 5, 6, 7]),
        ]);
        // lengths with [EOS]: 3, 5, 5
        assert_eq!(samples_per_k(&l), vec![(2, 3), (3, 2), (4, 2)]);
        let p = make_prefix_suffix_pairs(&l);
        for (k, n) in samples_per_k(&l) {
            assert_eq!(p.samples.iter().filter(|s| s.k == k).count(), n);
        }
    }

    #[test]
    fn full_shifted_identity() {
        let l = log(vec![trace("a", &[4, 5])]);
        let b = &make_full_shifted(&l, &scaler(), 8)[0];
        assert_eq!(b.inputs.activities, vec![4, 5]);
        assert_eq!(b.activity_targets, vec![5, EOS]);

        let l = log(vec![trace("a", &[4, 5]), trace("b", &[6, 7])]);
        let b = &make_full_shifted(&l, &scaler(), 8)[0];
        assert_eq!((b.inputs.batch, b.inputs.len), (2, 2));
        for r in 0..2 {
            assert_eq!(b.activity_targets[r * 2], b.inputs.activities[r * 2 + 1]);
        }
    }

    #[test]
    fn padding_lengths_three_and_five() {
        let l = log(vec![trace("a", &[4, 5, 6]), trace("b", &[4, 5, 6, 7, 8])]);
        let b = &make_full_shifted(&l, &scaler(), 8)[0];
        // inputs are |σ|-1 long: 3 and 5
        assert_eq!(b.inputs.len, 5);
        assert_eq!(b.inputs.lengths, vec![3, 5]);
        assert_eq!(&b.loss_mask[..5], &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(&b.inputs.activities[3..5], &[PAD, PAD]);
        assert_eq!(&b.inputs.times[3..5], &[0.0, 0.0]);

        let l = log(vec![trace("a", &[4, 5, 6]), trace("b", &[7, 8, 4])]);
        let b = &make_full_shifted(&l, &scaler(), 8)[0];
        assert!(!b.inputs.is_padded());
        assert!(b.inputs.activities.iter().all(|&a| a != PAD));
    }

    #[test]
    fn mask_ones_equal_true_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traces = (0..40)
            .map(|i| {
                let n = rng.random_range(1..9);
                let acts: Vec<usize> = (0..n).map(|_| rng.random_range(4..9)).collect();
                trace(&format!("c{i}"), &acts)
            })
            .collect();
        let l = log(traces);
        for layout in [
            TargetLayout::NextEvent,
            TargetLayout::PrefixToShiftedSuffix,
            TargetLayout::FullShifted,
        ] {
            let ex = examples(&l, layout);
            let expect: usize = ex.iter().map(|e| e.target_mask.iter().filter(|&&m| m).count()).sum();
            let got: usize = make_batches(&l, layout, &scaler(), 7)
                .iter()
                .map(Batch::target_positions)
                .sum();
            assert_eq!(got, expect, "{layout:?}");
        }
    }

    #[test]
    fn suffix_layout_shapes() {
        let l = log(vec![trace("a", &[4, 5, 6])]);
        let bs = make_batches(&l, TargetLayout::PrefixToShiftedSuffix, &scaler(), 8);
        let b = &bs[0];
        // k=2 (suffix [6, EOS]) and k=3 (suffix [EOS])
        assert_eq!(b.rows(), 2);
        let dec = b.decoder_inputs.as_ref().unwrap();
        assert_eq!(dec.len, 2);
        assert_eq!(dec.activities[0], SOS);
        assert_eq!(b.target_len, 2);
        // prefix side padded independently
        assert_eq!(b.inputs.len, 3);
    }

    #[test]
    fn masking_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = log(vec![trace("a", &[])]);
        let clean = &make_masked(&l, &scaler(), 4, 0)[0];
        assert_eq!(clean.inputs.lengths, vec![1]);
        for _ in 0..10 {
            let m = mask_batch(clean, &mut rng);
            assert_eq!(m.inputs.activities, vec![MASK]);
            assert_eq!(m.loss_mask, vec![1.0]);
        }

        // full corruption shows up with c = n
        let l = log(vec![trace("a", &[4, 5, 6])]);
        let clean = &make_masked(&l, &scaler(), 4, 0)[0];
        let mut saw_full = false;
        for _ in 0..200 {
            let m = mask_batch(clean, &mut rng);
            let masked = m.inputs.activities.iter().filter(|&&a| a == MASK).count();
            assert_eq!(masked, m.target_positions());
            for (i, &a) in m.inputs.activities.iter().enumerate() {
                assert_eq!(a == MASK, m.loss_mask[i] == 1.0);
                if a == MASK {
                    assert_eq!(m.inputs.times[i], 0.0);
                }
            }
            if masked == 4 {
                saw_full = true;
                assert!(m.loss_mask.iter().all(|&x| x == 1.0));
            }
        }
        assert!(saw_full);
    }

    #[test]
    fn masked_canvas_is_filled_with_eos() {
        let l = log(vec![trace("a", &[4, 5]), trace("b", &[4, 5, 6, 7])]);
        let b = &make_masked(&l, &scaler(), 4, 6)[0];
        assert_eq!(b.inputs.lengths, vec![6, 6]);
        assert_eq!(&b.inputs.activities[..6], &[4, 5, EOS, EOS, EOS, EOS]);
        assert_eq!(&b.activity_targets[6..], &[4, 5, 6, 7, EOS, EOS]);
        assert!(b.loss_mask.iter().all(|&m| m == 0.0));
        let wide = &make_batches(&l, TargetLayout::MaskedReconstruction, &scaler(), 4)[0];
        assert_eq!(wide.inputs.lengths, vec![5, 5]);
    }

    #[test]
    fn mask_count_is_uniform() {
        // χ² goodness of fit, 4 degrees of freedom, p = 0.01 critical value 13.277
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let l = log(vec![trace("a", &[4, 5, 6, 7])]);
        let clean = &make_masked(&l, &scaler(), 1, 0)[0];
        let draws = 10_000;
        let mut hist = [0usize; 5];
        for _ in 0..draws {
            let m = mask_batch(clean, &mut rng);
            hist[m.target_positions() - 1] += 1;
        }
        let e = draws as f64 / 5.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 13.277, "chi2 = {chi2}, hist = {hist:?}");
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(2, 5).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(one_hot(0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(one_hot(3, 3).is_err());
        for i in 0..6 {
            assert_eq!(one_hot(i, 6).unwrap().iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn extra_padding_keeps_true_content() {
        let l = log(vec![trace("a", &[4, 5, 6]), trace("b", &[4])]);
        for layout in [TargetLayout::PrefixToShiftedSuffix, TargetLayout::FullShifted] {
            for b in make_batches(&l, layout, &scaler(), 4) {
                let p = b.with_extra_padding(3);
                assert_eq!(p.target_positions(), b.target_positions());
                assert_eq!(p.inputs.len, b.inputs.len + 3);
                assert_eq!(p.inputs.lengths, b.inputs.lengths);
            }
        }
    }

    #[test]
    fn cache_round_trip_and_key_check() {
        let l = log(vec![trace("a", &[4, 5, 6]), trace("b", &[4, 7])]);
        let batches = make_batches(&l, TargetLayout::PrefixToShiftedSuffix, &scaler(), 2);
        let key = CacheKey {
            log_hash: "abc".into(),
            layout: TargetLayout::PrefixToShiftedSuffix,
            seed: 1,
            batch_size: 2,
        };
        let mut bytes = Vec::new();
        write_batch_cache(&mut bytes, &key, &batches).unwrap();
        let back = read_batch_cache(&mut bytes.as_slice(), &key).unwrap().unwrap();
        assert_eq!(back.len(), batches.len());
        for (a, b) in back.iter().zip(&batches) {
            assert_eq!(a.activity_targets, b.activity_targets);
            assert_eq!(a.loss_mask, b.loss_mask);
            for (x, y) in a.inputs.times.iter().zip(&b.inputs.times) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let other = CacheKey { seed: 2, ..key };
        assert!(read_batch_cache(&mut bytes.as_slice(), &other).unwrap().is_none());
    }
}
