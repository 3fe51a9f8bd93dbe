//! Structural probes of the architectures: finite-difference checks,
//! causality, bidirectionality, receptive field and padding neutrality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suffixbench_diffcore::gradcheck::{check_params, GradCheckReport};
use suffixbench_diffcore::{gumbel_softmax_with_noise, Graph, Real, Tensor};

use crate::event_log::{Event, EventLog, MinMaxScaler, Trace, Vocabulary, MASK, NUM_SPECIAL};
use crate::models::{Architecture, Discriminator, Model, ModelConfig, ModelResult};
use crate::preprocess::{make_batches, mask_batch, Batch, SeqBatch, TargetLayout};
use crate::training::{adversarial_loss, batch_loss, loss_from_output, TrainResult};

/// Small deterministic configuration for probes.
pub fn probe_config(arch: Architecture, vocab_size: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        layers: 2,
        d_model: 8,
        heads: 2,
        kernel_size: 2,
        dropout: 0.0,
        vocab_size,
        max_len,
    }
}

/// Random log with `activities` regular symbols and `min_len..=max_len`
/// events per trace (before `[EOS]`).
pub fn random_log(n_traces: usize, activities: usize, min_len: usize, max_len: usize, seed: u64) -> EventLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..activities).map(|i| format!("act{i:02}")).collect();
    let vocabulary = Vocabulary::from_names(names.iter().map(String::as_str));
    let traces = (0..n_traces)
        .map(|i| {
            let n = rng.random_range(min_len..=max_len);
            let mut events: Vec<Event> = (0..n)
                .map(|j| {
                    let a = rng.random_range(NUM_SPECIAL..NUM_SPECIAL + activities);
                    let d = if j == 0 { 0.0 } else { rng.random_range(0..7200) as f64 };
                    Event::new(a, d)
                })
                .collect();
            events.push(Event::eos());
            Trace {
                case_id: format!("t{i}"),
                events,
            }
        })
        .collect();
    EventLog { traces, vocabulary }
}

/// First batch of `log` in the architecture's layout (masked for BERT).
pub fn probe_batch(arch: Architecture, log: &EventLog, scaler: &MinMaxScaler, rows: usize, seed: u64) -> Batch {
    let b = make_batches(log, arch.layout(), scaler, rows).swap_remove(0);
    if arch.layout() == TargetLayout::MaskedReconstruction {
        mask_batch(&b, &mut ChaCha8Rng::seed_from_u64(seed))
    } else {
        b
    }
}

/// Finite-difference check of the full training loss of one architecture
/// with respect to every parameter (64-bit). For `ae-gan` the loss includes
/// the adversarial term through a Gumbel-Softmax sample with fixed noise,
/// and a second report covers the discriminator's parameters.
pub fn gradient_check_architecture(
    arch: Architecture,
    seed: u64,
    step: f64,
    max_per_param: Option<usize>,
) -> ModelResult<Vec<(String, GradCheckReport)>> {
    let log = random_log(6, 4, 2, 5, seed);
    let scaler = MinMaxScaler::fit_log(&log).expect("non-empty");
    let config = probe_config(arch, log.vocabulary.len(), log.max_trace_len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::<f64>::new(config, &mut rng)?;
    let batch = probe_batch(arch, &log, &scaler, 3, seed);
    let mut store = model.store.clone();
    let mut out = Vec::new();
    let train_err = |e: crate::training::TrainError| suffixbench_diffcore::DiffError::Checkpoint(e.to_string());

    if arch != Architecture::AeGan {
        let report = check_params(&mut store, step, max_per_param, |g, s| {
            let mut m = model.clone();
            m.store = s.clone();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            batch_loss(&m, g, &batch, 1.0, 1.0, &mut r).map(|l| l.total).map_err(train_err)
        })?;
        out.push((arch.tag().to_string(), report));
        return Ok(out);
    }

    let mut disc = Discriminator::<f64>::new(config_vocab(&model), model.config.d_model, &mut rng);
    let dec = batch.decoder_inputs.clone().expect("encoder-decoder batch");
    let noise = Tensor::from_fn(dec.batch * dec.len, model.config.vocab_size, |_, _| {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        -(-u.ln()).ln()
    });
    let lengths = dec.lengths.clone();
    let gen_loss = |g: &mut Graph<f64>, m: &Model<f64>, d: &Discriminator<f64>| -> TrainResult<_> {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let o = m.forward(g, &batch.inputs, Some(&dec), &mut r)?;
        let recon = loss_from_output(g, o, &batch, 1.0, 1.0)?;
        let s = gumbel_softmax_with_noise(g, o.logits, 0.7, noise.clone())?;
        let z = d.logits(g, s, o.times, dec.batch, dec.len, &lengths)?;
        let a = adversarial_loss(g, z);
        let a = g.scale(a, 0.5);
        Ok(g.add(recon.total, a)?)
    };
    let report = check_params(&mut store, step, max_per_param, |g, s| {
        let mut m = model.clone();
        m.store = s.clone();
        gen_loss(g, &m, &disc).map_err(train_err)
    })?;
    out.push(("ae-gan generator".to_string(), report));
    let mut dstore = disc.store.clone();
    let report = check_params(&mut dstore, step, max_per_param, |g, s| {
        let mut d = disc.clone();
        d.store = s.clone();
        gen_loss(g, &model, &d).map_err(train_err)
    })?;
    disc.store = dstore;
    out.push(("ae-gan discriminator".to_string(), report));
    Ok(out)
}

fn config_vocab<T>(m: &Model<T>) -> usize {
    m.config.vocab_size
}

/// Eval-mode logits and times of one forward pass, as `f64` rows.
pub fn forward_values<T: Real>(
    model: &Model<T>,
    inputs: &SeqBatch,
    decoder: Option<&SeqBatch>,
) -> ModelResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut g = Graph::new(false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut g, inputs, decoder, &mut rng)?;
    let l = g.value(out.logits);
    let t = g.value(out.times);
    let logits = (0..l.rows())
        .map(|r| l.row(r).iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    let times = t.data().iter().map(|v| v.to_f64_lossy()).collect();
    Ok((logits, times))
}

fn random_seq<R: Rng + ?Sized>(vocab: usize, len: usize, rng: &mut R) -> SeqBatch {
    SeqBatch::single(
        (0..len).map(|_| rng.random_range(NUM_SPECIAL..vocab)).collect(),
        (0..len).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
}

fn perturb_from<R: Rng + ?Sized>(s: &SeqBatch, j: usize, vocab: usize, rng: &mut R) -> SeqBatch {
    let mut p = s.clone();
    for t in j..s.len {
        let old = p.activities[t];
        let mut a = rng.random_range(NUM_SPECIAL..vocab);
        if a == old {
            a = NUM_SPECIAL + (a - NUM_SPECIAL + 1) % (vocab - NUM_SPECIAL);
        }
        p.activities[t] = a;
        p.times[t] = rng.random_range(0.0..1.0);
    }
    p
}

fn max_row_diff(a: &(Vec<Vec<f64>>, Vec<f64>), b: &(Vec<Vec<f64>>, Vec<f64>), rows: usize) -> f64 {
    let mut m: f64 = 0.0;
    for r in 0..rows {
        for (x, y) in a.0[r].iter().zip(&b.0[r]) {
            m = m.max((x - y).abs());
        }
        m = m.max((a.1[r] - b.1[r]).abs());
    }
    m
}

/// Largest change of any output at positions `< j` when every input at
/// positions `>= j` is perturbed, over `probes` random cases. For
/// encoder-decoder models the decoder input is perturbed with a fixed prefix.
pub fn causality_probe<T: Real>(model: &Model<T>, probes: usize, seed: u64) -> ModelResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = model.config.vocab_size;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let len = rng.random_range(3..=9);
        let j = rng.random_range(1..len);
        if model.architecture().is_encoder_decoder() {
            let prefix = random_seq(v, rng.random_range(2..=6), &mut rng);
            let dec = random_seq(v, len, &mut rng);
            let pert = perturb_from(&dec, j, v, &mut rng);
            let a = forward_values(model, &prefix, Some(&dec))?;
            let b = forward_values(model, &prefix, Some(&pert))?;
            worst = worst.max(max_row_diff(&a, &b, j));
        } else {
            let s = random_seq(v, len, &mut rng);
            let p = perturb_from(&s, j, v, &mut rng);
            let a = forward_values(model, &s, None)?;
            let b = forward_values(model, &p, None)?;
            worst = worst.max(max_row_diff(&a, &b, j));
        }
    }
    Ok(worst)
}

/// Per probe: sensitivity of the output at a masked position `j` to a
/// change of one unmasked activity left of `j` and one right of `j`.
pub fn bidirectional_probe<T: Real>(model: &Model<T>, probes: usize, seed: u64) -> ModelResult<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = model.config.vocab_size;
    let mut out = Vec::with_capacity(probes);
    for _ in 0..probes {
        let len = rng.random_range(3..=9);
        let j = rng.random_range(1..len - 1);
        let left = rng.random_range(0..j);
        let right = rng.random_range(j + 1..len);
        let mut s = random_seq(v, len, &mut rng);
        for t in 0..len {
            if t == j || (t != left && t != right && rng.random_bool(0.3)) {
                s.activities[t] = MASK;
                s.times[t] = 0.0;
            }
        }
        let base = forward_values(model, &s, None)?;
        let sens = |pos: usize, rng: &mut ChaCha8Rng| -> ModelResult<f64> {
            let mut p = s.clone();
            let old = p.activities[pos];
            p.activities[pos] = NUM_SPECIAL + (old - NUM_SPECIAL + 1 + rng.random_range(0..v - NUM_SPECIAL - 1)) % (v - NUM_SPECIAL);
            let o = forward_values(model, &p, None)?;
            let mut m: f64 = 0.0;
            for (x, y) in base.0[j].iter().zip(&o.0[j]) {
                m = m.max((x - y).abs());
            }
            Ok(m.max((base.1[j] - o.1[j]).abs()))
        };
        out.push((sens(left, &mut rng)?, sens(right, &mut rng)?));
    }
    Ok(out)
}

/// `|∂ output[t] / ∂ time_input[t - Δ]|` for `Δ = 0..=t`, where the output
/// is a fixed random projection of the logits plus the time head.
pub fn time_input_sensitivity<T: Real>(model: &Model<T>, len: usize, t: usize, seed: u64) -> ModelResult<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_seq(model.config.vocab_size, len, &mut rng);
    let mut g = Graph::new(false);
    let out = model.forward(&mut g, &s, None, &mut ChaCha8Rng::seed_from_u64(0))?;
    let v = model.config.vocab_size;
    let row = g.gather_rows(out.logits, &[t])?;
    let w = g.constant(Tensor::from_fn(1, v, |_, _| T::of(rng.random_range(-1.0..1.0))));
    let p = g.mul(row, w)?;
    let p = g.sum(p);
    let tr = g.gather_rows(out.times, &[t])?;
    let loss = g.add(p, tr)?;
    g.backward(loss)?;
    let grad = g.grad(out.input_times).cloned().unwrap_or_else(|| Tensor::zeros(len, 1));
    Ok((0..=t).map(|d| grad.get(t - d, 0).to_f64_lossy().abs()).collect())
}

/// Absolute change of the training loss when `extra` pad columns are
/// appended to the batch (eval mode, so dropout draws do not interfere).
pub fn padding_loss_delta<T: Real>(model: &Model<T>, batch: &Batch, extra: usize) -> TrainResult<f64> {
    let eval = |b: &Batch| -> TrainResult<f64> {
        let mut g = Graph::new(false);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let l = batch_loss(model, &mut g, b, 1.0, 1.0, &mut r)?;
        Ok(g.value(l.total).item().to_f64_lossy())
    };
    Ok((eval(batch)? - eval(&batch.with_extra_padding(extra))?).abs())
}
