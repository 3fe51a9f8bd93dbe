//! Optimisation loops: weighted multitask loss, early stopping, best-model
//! retention and the adversarial schedule.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use suffixbench_diffcore::{clip_grad_norm, Adam, AdamConfig, DiffError, Graph, ParamStore, Real, Tensor, Var};

use crate::models::{Architecture, Discriminator, Model, ModelError, Output};
use crate::preprocess::{mask_batch, Batch, TargetLayout};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no training batches")]
    NoBatches,
    #[error("batch layout {found:?} does not match {arch} ({expected:?})")]
    Layout {
        arch: Architecture,
        expected: TargetLayout,
        found: TargetLayout,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type TrainResult<T> = Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub w_act: f64,
    pub w_time: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `0` disables it.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 400,
            patience: 50,
            lr: 1e-4,
            w_act: 1.0,
            w_time: 1.0,
            batch_size: 64,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be in 1..=max_epochs");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.w_act < 0.0 || self.w_time < 0.0 || self.w_act + self.w_time == 0.0 {
            return bad("loss weights must be non-negative and not both zero");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.clip_norm < 0.0 {
            return bad("clip norm must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub lambda: f64,
    pub open_loop_prob: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Fraction of all optimisation steps over which τ is annealed.
    pub anneal_fraction: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            open_loop_prob: 0.9,
            tau_start: 1.0,
            tau_end: 0.1,
            anneal_fraction: 0.5,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> TrainResult<()> {
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return Err(TrainError::Config("temperatures must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.open_loop_prob) {
            return Err(TrainError::Config("open-loop probability outside [0, 1]".into()));
        }
        if self.lambda < 0.0 || !(0.0..=1.0).contains(&self.anneal_fraction) {
            return Err(TrainError::Config("invalid adversarial weight or anneal fraction".into()));
        }
        Ok(())
    }

    /// Linear anneal from `tau_start` to `tau_end`, then held.
    pub fn tau(&self, step: usize, total_steps: usize) -> f64 {
        let span = (self.anneal_fraction * total_steps as f64).floor();
        if span <= 0.0 || step as f64 >= span {
            return self.tau_end;
        }
        let f = step as f64 / span;
        self.tau_start + (self.tau_end - self.tau_start) * f
    }
}

/// Patience counter over epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, eval_loss: f64) -> StopDecision {
        if eval_loss < self.best {
            self.best = eval_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision {
                improved: true,
                stop: false,
            }
        } else {
            self.bad_epochs += 1;
            StopDecision {
                improved: false,
                stop: self.bad_epochs >= self.patience,
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub act_loss: f64,
    pub time_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: usize,
    pub best_eval_loss: f64,
    pub wall_seconds: f64,
    /// Share of decoder sequences trained open-loop (adversarial training only).
    pub open_loop_fraction: Option<f64>,
}

/// Graph nodes of a batch loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub act: Var,
    pub time: Var,
    pub output: Output,
}

/// `w_act · CE + w_time · MSE` over the batch's loss mask.
pub fn batch_loss<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    g: &mut Graph<T>,
    batch: &Batch,
    w_act: f64,
    w_time: f64,
    rng: &mut R,
) -> TrainResult<LossVars> {
    let out = model.forward(g, &batch.inputs, batch.decoder_inputs.as_ref(), rng)?;
    loss_from_output(g, out, batch, w_act, w_time)
}

pub fn loss_from_output<T: Real>(
    g: &mut Graph<T>,
    out: Output,
    batch: &Batch,
    w_act: f64,
    w_time: f64,
) -> TrainResult<LossVars> {
    if out.len != batch.target_len || out.batch != batch.rows() {
        return Err(TrainError::Model(ModelError::Input(format!(
            "output {}x{} does not match targets {}x{}",
            out.batch,
            out.len,
            batch.rows(),
            batch.target_len
        ))));
    }
    let mask: Vec<T> = batch.loss_mask.iter().map(|&m| T::of(m)).collect();
    let act = g.cross_entropy_masked(out.logits, &batch.activity_targets, &mask)?;
    let tt: Vec<T> = batch.time_targets.iter().map(|&t| T::of(t)).collect();
    let time = g.mse_masked(out.times, &tt, &mask)?;
    let a = g.scale(act, T::of(w_act));
    let b = g.scale(time, T::of(w_time));
    let total = g.add(a, b)?;
    Ok(LossVars {
        total,
        act,
        time,
        output: out,
    })
}

/// Token-weighted mean losses `(total, act, time)` in eval mode.
pub fn evaluate_loss<T: Real>(
    model: &Model<T>,
    batches: &[Batch],
    w_act: f64,
    w_time: f64,
) -> TrainResult<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut tot, mut act, mut time, mut n) = (0.0, 0.0, 0.0, 0.0);
    for b in batches {
        let k = b.target_positions() as f64;
        if k == 0.0 {
            continue;
        }
        let mut g = Graph::new(false);
        let l = batch_loss(model, &mut g, b, w_act, w_time, &mut rng)?;
        tot += k * g.value(l.total).item().to_f64_lossy();
        act += k * g.value(l.act).item().to_f64_lossy();
        time += k * g.value(l.time).item().to_f64_lossy();
        n += k;
    }
    if n == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    Ok((tot / n, act / n, time / n))
}

/// Independent random streams derived from one seed.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_EVAL_MASK: u64 = 3;
pub const STREAM_ADVERSARIAL: u64 = 4;
pub const STREAM_SPLIT: u64 = 5;
pub const STREAM_DECODE: u64 = 6;

fn check_layout(arch: Architecture, batches: &[Batch]) -> TrainResult<()> {
    let expected = arch.layout();
    if let Some(b) = batches.iter().find(|b| b.layout != expected) {
        return Err(TrainError::Layout {
            arch,
            expected,
            found: b.layout,
        });
    }
    Ok(())
}

/// Eval batches for the masked layout are corrupted once with a fixed stream
/// so that eval losses are comparable across epochs.
pub fn prepare_eval_batches(arch: Architecture, batches: &[Batch], seed: u64) -> Vec<Batch> {
    if arch.layout() != TargetLayout::MaskedReconstruction {
        return batches.to_vec();
    }
    let mut rng = stream(seed, STREAM_EVAL_MASK);
    batches.iter().map(|b| mask_batch(b, &mut rng)).collect()
}

fn snapshot(store: &ParamStore<f32>) -> Vec<Tensor<f32>> {
    store.iter().map(|p| p.value.clone()).collect()
}

fn restore(store: &mut ParamStore<f32>, values: Vec<Tensor<f32>>) {
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v;
    }
}

/// Called after every epoch with the new log record.
pub type EpochCallback<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Trains `model` in place and leaves it at its best-eval parameters.
pub fn train(
    model: &mut Model<f32>,
    batches: &[Batch],
    eval_batches: &[Batch],
    config: &TrainConfig,
    on_epoch: Option<EpochCallback<'_>>,
) -> TrainResult<TrainReport> {
    run(model, batches, eval_batches, config, None, on_epoch)
}

/// Adversarial variant for `ae-gan` models.
pub fn train_aegan(
    model: &mut Model<f32>,
    batches: &[Batch],
    eval_batches: &[Batch],
    config: &TrainConfig,
    adv: &AdversarialConfig,
    on_epoch: Option<EpochCallback<'_>>,
) -> TrainResult<TrainReport> {
    adv.validate()?;
    if model.architecture() != Architecture::AeGan && model.architecture() != Architecture::Ae {
        return Err(TrainError::Config(format!(
            "adversarial training needs an encoder-decoder LSTM, got {}",
            model.architecture()
        )));
    }
    run(model, batches, eval_batches, config, Some(adv), on_epoch)
}

struct AdversarialState {
    config: AdversarialConfig,
    disc: Discriminator<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    total_steps: usize,
    open: usize,
    seen: usize,
}

fn run(
    model: &mut Model<f32>,
    batches: &[Batch],
    eval_batches: &[Batch],
    config: &TrainConfig,
    adv: Option<&AdversarialConfig>,
    mut on_epoch: Option<EpochCallback<'_>>,
) -> TrainResult<TrainReport> {
    config.validate()?;
    if batches.is_empty() {
        return Err(TrainError::NoBatches);
    }
    let arch = model.architecture();
    check_layout(arch, batches)?;
    check_layout(arch, eval_batches)?;
    let eval_batches = prepare_eval_batches(arch, eval_batches, config.seed);
    let masked = arch.layout() == TargetLayout::MaskedReconstruction;

    let started = Instant::now();
    let adam_cfg = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &model.store);
    let mut rng = stream(config.seed, STREAM_TRAIN);
    let mut adversarial = adv.map(|c| {
        let mut init = stream(config.seed, STREAM_ADVERSARIAL);
        let disc = Discriminator::new(model.config.vocab_size, model.config.d_model, &mut init);
        let adam = Adam::new(adam_cfg, &disc.store);
        AdversarialState {
            config: c.clone(),
            adam,
            disc,
            rng: init,
            total_steps: config.max_epochs * batches.len(),
            open: 0,
            seen: 0,
        }
    });
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = snapshot(&model.store);
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut step = 0usize;
    model.store.zero_grads();

    for epoch in 1..=config.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut tokens) = (0.0, 0.0);
        for (bi, &i) in order.iter().enumerate() {
            let batch = if masked {
                mask_batch(&batches[i], &mut rng)
            } else {
                batches[i].clone()
            };
            let mut g = Graph::new(true);
            let loss = match adversarial.as_mut() {
                None => batch_loss(model, &mut g, &batch, config.w_act, config.w_time, &mut rng)?.total,
                Some(a) => adversarial_step(model, &mut g, &batch, config, a, step, &mut rng)?,
            };
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            let k = batch.target_positions() as f64;
            sum += value * k;
            tokens += k;
            g.backward(loss)?;
            g.accumulate_param_grads(&mut model.store);
            if config.clip_norm > 0.0 {
                clip_grad_norm(&mut model.store, config.clip_norm);
            }
            adam.step(&mut model.store)?;
            step += 1;
        }
        let (eval_loss, act_loss, time_loss) = evaluate_loss(model, &eval_batches, config.w_act, config.w_time)?;
        if !eval_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: if tokens > 0.0 { sum / tokens } else { 0.0 },
            eval_loss,
            act_loss,
            time_loss,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(&record);
        }
        records.push(record);
        let decision = stopper.update(epoch, eval_loss);
        if decision.improved {
            best = snapshot(&model.store);
        }
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    restore(&mut model.store, best);
    Ok(TrainReport {
        epochs_run: records.len(),
        epochs: records,
        stopped_early,
        best_epoch: stopper.best_epoch,
        best_eval_loss: stopper.best,
        wall_seconds: started.elapsed().as_secs_f64(),
        open_loop_fraction: adversarial
            .map(|a| if a.seen == 0 { 0.0 } else { a.open as f64 / a.seen as f64 }),
    })
}

/// Per-row open-loop decisions, each true with probability `p`.
pub fn open_loop_flags<R: Rng + ?Sized>(rows: usize, p: f64, rng: &mut R) -> Vec<bool> {
    (0..rows).map(|_| rng.random_bool(p)).collect()
}

/// Discriminator loss `-log D(real) - log(1 - D(fake))` averaged over pairs,
/// written with softplus of the logits so it stays finite.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> TrainResult<Var> {
    let neg = g.scale(real_logits, -T::one());
    let r = g.softplus(neg);
    let f = g.softplus(fake_logits);
    let s = g.add(r, f)?;
    Ok(g.mean(s))
}

/// Generator term `1 - log D(s)`, averaged over sequences.
pub fn adversarial_loss<T: Real>(g: &mut Graph<T>, fake_logits: Var) -> Var {
    let neg = g.scale(fake_logits, -T::one());
    let sp = g.softplus(neg);
    let m = g.mean(sp);
    let one = g.constant(Tensor::scalar(T::one()));
    g.add(one, m).expect("scalars")
}

fn one_hot_rows(targets: &[usize], vocab: usize) -> Tensor<f32> {
    Tensor::from_fn(targets.len(), vocab, |r, c| if targets[r] == c { 1.0 } else { 0.0 })
}

/// Builds the generator loss for one batch, taking a discriminator step on
/// the way. Returns the generator's total loss node.
fn adversarial_step<R: Rng + ?Sized>(
    model: &Model<f32>,
    g: &mut Graph<f32>,
    batch: &Batch,
    config: &TrainConfig,
    adv: &mut AdversarialState,
    step: usize,
    rng: &mut R,
) -> TrainResult<Var> {
    let dec = batch
        .decoder_inputs
        .as_ref()
        .ok_or_else(|| TrainError::Config("adversarial training needs decoder inputs".into()))?;
    let tau = adv.config.tau(step, adv.total_steps);
    let flags = open_loop_flags(dec.batch, adv.config.open_loop_prob, &mut adv.rng);
    adv.open += flags.iter().filter(|&&f| f).count();
    adv.seen += flags.len();

    let (out, samples) = if flags.iter().any(|&f| f) {
        let o = model.forward_open_loop(g, &batch.inputs, dec, &flags, tau, rng, &mut adv.rng)?;
        (o.output, o.samples)
    } else {
        let out = model.forward(g, &batch.inputs, Some(dec), rng)?;
        let s = suffixbench_diffcore::gumbel_softmax_sample(g, out.logits, tau, &mut adv.rng)?;
        (out, s)
    };
    let recon = loss_from_output(g, out, batch, config.w_act, config.w_time)?;

    let (b, n, v) = (dec.batch, batch.target_len, model.config.vocab_size);
    let lengths = &dec.lengths;
    let mut gd = Graph::new(true);
    let real_s = gd.constant(one_hot_rows(&batch.activity_targets, v));
    let real_t = gd.constant(Tensor::column(batch.time_targets.iter().map(|&t| t as f32).collect()));
    let fake_s = gd.constant(g.value(samples).clone());
    let fake_t = gd.constant(g.value(out.times).clone());
    let zr = adv.disc.logits(&mut gd, real_s, real_t, b, n, lengths)?;
    let zf = adv.disc.logits(&mut gd, fake_s, fake_t, b, n, lengths)?;
    let dl = discriminator_loss(&mut gd, zr, zf)?;
    if gd.value(dl).item().is_finite() {
        gd.backward(dl)?;
        gd.accumulate_param_grads(&mut adv.disc.store);
        if config.clip_norm > 0.0 {
            clip_grad_norm(&mut adv.disc.store, config.clip_norm);
        }
        adv.adam.step(&mut adv.disc.store)?;
    } else {
        adv.disc.store.zero_grads();
    }

    if adv.config.lambda == 0.0 {
        return Ok(recon.total);
    }
    let zf = adv.disc.logits(g, samples, out.times, b, n, lengths)?;
    let a = adversarial_loss(g, zf);
    let a = g.scale(a, adv.config.lambda as f32);
    Ok(g.add(recon.total, a)?)
}
