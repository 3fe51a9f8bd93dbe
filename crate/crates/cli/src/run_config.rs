use std::path::Path;

use suffixbench_core::config::KeyValues;
use suffixbench_core::models::{Architecture, ModelConfig};
use suffixbench_core::training::{AdversarialConfig, TrainConfig};

use crate::args::TrainArgs;
use crate::{CliError, CliResult};

pub const SEED_ENV: &str = "SUFFIXBENCH_SEED";

const KNOWN_KEYS: &[&str] = &[
    "arch",
    "seed",
    "dataset",
    "epochs",
    "patience",
    "lr",
    "w_act",
    "w_time",
    "batch_size",
    "clip_norm",
    "layers",
    "d_model",
    "heads",
    "kernel_size",
    "dropout",
    "lambda",
    "open_loop_prob",
    "tau_start",
    "tau_end",
    "anneal_fraction",
    "train_fraction",
];

/// Every knob of one training run, serialised verbatim next to its outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub log_path: String,
    pub log_hash: String,
    pub architecture: Architecture,
    pub seed: u64,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub kernel_size: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub adversarial: AdversarialConfig,
    pub train_fraction: f64,
}

/// Flag, then config file, then `SUFFIXBENCH_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &KeyValues, key: &str, default: T) -> CliResult<T> {
    Ok(match flag {
        Some(v) => v,
        None => file.parsed(key)?.unwrap_or(default),
    })
}

/// Reads the optional config file and rejects unknown keys.
pub fn read_config_file(path: Option<&Path>) -> CliResult<KeyValues> {
    let Some(path) = path else {
        return Ok(KeyValues::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let kv = KeyValues::parse(&text)?;
    if let Some((k, _)) = kv.iter().find(|(k, _)| !KNOWN_KEYS.contains(k)) {
        return Err(CliError::Usage(format!("unknown config key `{k}` in {}", path.display())));
    }
    Ok(kv)
}

/// Architectures named by `--arch` (or the `arch` key): a tag, a
/// comma-separated list or `all`.
pub fn parse_architectures(spec: &str) -> CliResult<Vec<Architecture>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Architecture::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let a: Architecture = part.parse().map_err(|e: suffixbench_core::models::ModelError| CliError::Usage(e.to_string()))?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no architecture given".into()));
    }
    Ok(out)
}

impl RunConfig {
    /// Merges flags over the config file over defaults.
    pub fn resolve(
        a: &TrainArgs,
        file: &KeyValues,
        architecture: Architecture,
        dataset: &str,
        log_path: &str,
        log_hash: &str,
    ) -> CliResult<Self> {
        let td = TrainConfig::default();
        let ad = AdversarialConfig::default();
        let md = ModelConfig::new(architecture, 5, 2);
        let seed = resolve_seed(a.seed, file.parsed("seed")?)?;
        let max_epochs = pick(a.epochs, file, "epochs", td.max_epochs)?;
        let train = TrainConfig {
            max_epochs,
            patience: pick(a.patience, file, "patience", td.patience.min(max_epochs))?,
            lr: pick(a.lr, file, "lr", td.lr)?,
            w_act: pick(a.w_act, file, "w_act", td.w_act)?,
            w_time: pick(a.w_time, file, "w_time", td.w_time)?,
            batch_size: pick(a.batch_size, file, "batch_size", td.batch_size)?,
            seed,
            clip_norm: pick(a.clip_norm, file, "clip_norm", td.clip_norm)?,
        };
        let adversarial = AdversarialConfig {
            lambda: pick(a.lambda, file, "lambda", ad.lambda)?,
            open_loop_prob: pick(a.open_loop_prob, file, "open_loop_prob", ad.open_loop_prob)?,
            tau_start: pick(None, file, "tau_start", ad.tau_start)?,
            tau_end: pick(None, file, "tau_end", ad.tau_end)?,
            anneal_fraction: pick(None, file, "anneal_fraction", ad.anneal_fraction)?,
        };
        let rc = Self {
            dataset: dataset.to_string(),
            log_path: log_path.to_string(),
            log_hash: log_hash.to_string(),
            architecture,
            seed,
            layers: pick(a.layers, file, "layers", md.layers)?,
            d_model: pick(a.d_model, file, "d_model", md.d_model)?,
            heads: pick(a.heads, file, "heads", md.heads)?,
            kernel_size: pick(a.kernel_size, file, "kernel_size", md.kernel_size)?,
            dropout: pick(a.dropout, file, "dropout", md.dropout)?,
            train,
            adversarial,
            train_fraction: pick(a.train_fraction, file, "train_fraction", 0.8)?,
        };
        rc.train.validate()?;
        rc.adversarial.validate()?;
        if !(rc.train_fraction > 0.0 && rc.train_fraction < 1.0) {
            return Err(CliError::Usage(format!("train fraction {} outside (0, 1)", rc.train_fraction)));
        }
        Ok(rc)
    }

    pub fn model_config(&self, vocab_size: usize, max_len: usize) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture,
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            kernel_size: self.kernel_size,
            dropout: self.dropout,
            vocab_size,
            max_len,
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("dataset", &self.dataset);
        kv.set("log", &self.log_path);
        kv.set("log_hash", &self.log_hash);
        kv.set("arch", self.architecture);
        kv.set("seed", self.seed);
        kv.set("layers", self.layers);
        kv.set("d_model", self.d_model);
        kv.set("heads", self.heads);
        kv.set("kernel_size", self.kernel_size);
        kv.set("dropout", self.dropout);
        kv.set("epochs", self.train.max_epochs);
        kv.set("patience", self.train.patience);
        kv.set("lr", self.train.lr);
        kv.set("w_act", self.train.w_act);
        kv.set("w_time", self.train.w_time);
        kv.set("batch_size", self.train.batch_size);
        kv.set("clip_norm", self.train.clip_norm);
        if self.architecture == Architecture::AeGan {
            kv.set("lambda", self.adversarial.lambda);
            kv.set("open_loop_prob", self.adversarial.open_loop_prob);
            kv.set("tau_start", self.adversarial.tau_start);
            kv.set("tau_end", self.adversarial.tau_end);
            kv.set("anneal_fraction", self.adversarial.anneal_fraction);
        }
        kv.set("train_fraction", self.train_fraction);
        kv
    }
}
