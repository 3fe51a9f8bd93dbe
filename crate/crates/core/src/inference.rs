//! Greedy suffix generation and remaining-time computation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use suffixbench_diffcore::{DiffError, Graph, Real};

use crate::event_log::{Event, MinMaxScaler, Vocabulary, EOS, MASK, PAD, SOS};
use crate::models::{Architecture, Model, ModelError};
use crate::preprocess::{scaled_time, SeqBatch};
use crate::training::{stream, STREAM_DECODE};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("invalid prefix: {0}")]
    Prefix(String),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type InferenceResult<T> = Result<T, InferenceError>;

/// How recurrent models are stepped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Carry `(h, c)` between steps.
    Incremental,
    /// Re-run the whole context every step.
    Recompute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    /// Cap on the emitted suffix length (longest training trace).
    pub max_len: usize,
    /// Whether the duration predicted alongside `[EOS]` counts towards remaining time.
    pub include_eos_time: bool,
    pub mode: DecodeMode,
    /// Pad columns appended to every forward batch.
    pub extra_padding: usize,
    /// Seed of the random slot order used by masked models.
    pub seed: u64,
}

impl GenerationConfig {
    pub fn new(max_len: usize, seed: u64) -> Self {
        Self {
            max_len,
            include_eos_time: false,
            mode: DecodeMode::Incremental,
            extra_padding: 0,
            seed,
        }
    }

    pub fn validate(&self) -> InferenceResult<()> {
        if self.max_len < 2 {
            return Err(InferenceError::Config("max_len must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuffixPrediction {
    /// Ends at `[EOS]` unless truncated at `max_len`.
    pub activities: Vec<usize>,
    /// Scaled, non-negative durations per step.
    pub durations: Vec<f64>,
    /// Model evaluations used.
    pub forward_passes: usize,
}

/// Greedy choice over activities and `[EOS]`; padding, start and mask
/// symbols are never emitted.
pub fn greedy_activity<T: Real>(logits: &[T]) -> usize {
    let mut best = EOS;
    let mut best_v = T::neg_infinity();
    for (i, &v) in logits.iter().enumerate() {
        if i == PAD || i == SOS || i == MASK {
            continue;
        }
        if v > best_v || (best_v == T::neg_infinity() && i == EOS) {
            best = i;
            best_v = v;
        }
    }
    best
}

fn check_prefix(prefix: &[Event], vocab_size: usize) -> InferenceResult<()> {
    if prefix.len() < 2 {
        return Err(InferenceError::Prefix(format!(
            "need at least 2 events, got {}",
            prefix.len()
        )));
    }
    if let Some(e) = prefix
        .iter()
        .find(|e| Vocabulary::is_special(e.activity) || e.activity >= vocab_size)
    {
        return Err(InferenceError::Prefix(format!(
            "activity index {} is not a regular activity",
            e.activity
        )));
    }
    Ok(())
}

fn padded(activities: &[usize], times: &[f64], extra: usize) -> SeqBatch {
    let n = activities.len();
    let mut a = activities.to_vec();
    let mut t = times.to_vec();
    a.resize(n + extra, PAD);
    t.resize(n + extra, 0.0);
    SeqBatch {
        batch: 1,
        len: n + extra,
        activities: a,
        times: t,
        lengths: vec![n],
    }
}

/// Runs the model on `(inputs, decoder)` and returns logits and time at row `pos`.
fn predict_at<T: Real>(
    model: &Model<T>,
    inputs: &SeqBatch,
    decoder: Option<&SeqBatch>,
    pos: usize,
) -> InferenceResult<(Vec<T>, T)> {
    let mut g = Graph::new(false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut g, inputs, decoder, &mut rng)?;
    let logits = g.value(out.logits).row(pos).to_vec();
    let time = g.value(out.times).get(pos, 0);
    Ok((logits, time))
}

/// Greedy autoregressive suffix for any architecture except the masked
/// one, for which it delegates to [`bert_generate_suffix`] with a slot
/// order drawn from `(config.seed, key)`.
pub fn generate_suffix<T: Real>(
    model: &Model<T>,
    prefix: &[Event],
    scaler: &MinMaxScaler,
    config: &GenerationConfig,
    key: u64,
) -> InferenceResult<SuffixPrediction> {
    config.validate()?;
    check_prefix(prefix, model.config.vocab_size)?;
    let arch = model.architecture();
    if arch == Architecture::Bert {
        let mut rng = decode_rng(config.seed, key);
        return bert_generate_suffix(model, prefix, scaler, config, &mut rng);
    }
    let acts: Vec<usize> = prefix.iter().map(|e| e.activity).collect();
    let times: Vec<f64> = prefix.iter().map(|e| scaled_time(e, scaler)).collect();
    let mut out = SuffixPrediction {
        activities: Vec::new(),
        durations: Vec::new(),
        forward_passes: 0,
    };
    let push = |out: &mut SuffixPrediction, logits: &[T], time: T| -> (usize, f64) {
        let a = greedy_activity(logits);
        let t = time.to_f64_lossy().max(0.0);
        out.activities.push(a);
        out.durations.push(t);
        out.forward_passes += 1;
        (a, t.min(1.0))
    };

    let incremental = config.mode == DecodeMode::Incremental && arch.is_recurrent();
    if incremental {
        let (mut state, first) = model.recurrent_start(&acts, &times)?;
        let mut next = match first {
            Some(s) => s,
            None => model.recurrent_step(&mut state, SOS, 0.0)?,
        };
        loop {
            let (a, t) = push(&mut out, &next.logits, next.time);
            if a == EOS || out.activities.len() >= config.max_len {
                break;
            }
            next = model.recurrent_step(&mut state, a, t)?;
        }
        return Ok(out);
    }

    let extra = config.extra_padding;
    if arch.is_encoder_decoder() {
        let enc = padded(&acts, &times, extra);
        let mut dec_a = vec![SOS];
        let mut dec_t = vec![0.0];
        loop {
            let dec = padded(&dec_a, &dec_t, extra);
            let (logits, time) = predict_at(model, &enc, Some(&dec), dec_a.len() - 1)?;
            let (a, t) = push(&mut out, &logits, time);
            if a == EOS || out.activities.len() >= config.max_len {
                break;
            }
            dec_a.push(a);
            dec_t.push(t);
        }
    } else {
        let mut run_a = acts;
        let mut run_t = times;
        loop {
            let inp = padded(&run_a, &run_t, extra);
            let (logits, time) = predict_at(model, &inp, None, run_a.len() - 1)?;
            let (a, t) = push(&mut out, &logits, time);
            if a == EOS || out.activities.len() >= config.max_len {
                break;
            }
            run_a.push(a);
            run_t.push(t);
        }
    }
    Ok(out)
}

/// Per-prefix stream for the masked model's slot order.
pub fn decode_rng(seed: u64, key: u64) -> ChaCha8Rng {
    stream(seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15), STREAM_DECODE)
}

/// Iterative unmasking: `max(max_len - k, 1)` `[MASK]` slots follow the
/// prefix and are filled one per forward pass in a random order; the
/// result is read left to right up to the first `[EOS]`.
pub fn bert_generate_suffix<T: Real, R: rand::Rng + ?Sized>(
    model: &Model<T>,
    prefix: &[Event],
    scaler: &MinMaxScaler,
    config: &GenerationConfig,
    rng: &mut R,
) -> InferenceResult<SuffixPrediction> {
    config.validate()?;
    check_prefix(prefix, model.config.vocab_size)?;
    let k = prefix.len();
    let slots = config.max_len.saturating_sub(k).max(1);
    let mut acts: Vec<usize> = prefix.iter().map(|e| e.activity).collect();
    let mut times: Vec<f64> = prefix.iter().map(|e| scaled_time(e, scaler)).collect();
    acts.extend(std::iter::repeat_n(MASK, slots));
    times.extend(std::iter::repeat_n(0.0, slots));
    let mut order: Vec<usize> = (k..k + slots).collect();
    order.shuffle(rng);
    let mut durations = vec![0.0; acts.len()];
    let mut passes = 0;
    for pos in order {
        let inp = padded(&acts, &times, config.extra_padding);
        let (logits, time) = predict_at(model, &inp, None, pos)?;
        passes += 1;
        let t = time.to_f64_lossy().max(0.0);
        acts[pos] = greedy_activity(&logits);
        times[pos] = t.min(1.0);
        durations[pos] = t;
    }
    let mut out = SuffixPrediction {
        activities: Vec::new(),
        durations: Vec::new(),
        forward_passes: passes,
    };
    for pos in k..k + slots {
        out.activities.push(acts[pos]);
        out.durations.push(durations[pos]);
        if acts[pos] == EOS {
            break;
        }
    }
    Ok(out)
}

/// Sum of inverse-scaled durations in seconds, each clamped at zero.
pub fn remaining_time(prediction: &SuffixPrediction, scaler: &MinMaxScaler, include_eos: bool) -> f64 {
    prediction
        .activities
        .iter()
        .zip(&prediction.durations)
        .filter(|(&a, _)| include_eos || a != EOS)
        .map(|(_, &d)| scaler.invert(d).max(0.0))
        .sum()
}
