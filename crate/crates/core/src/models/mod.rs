//! The seven sequence architectures over a shared embedding and readout.

mod discriminator;
pub mod layers;
mod open_loop;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use suffixbench_diffcore::{read_params, write_params, DiffError, Graph, ParamStore, Real, Tensor, Var};

use crate::preprocess::{SeqBatch, TargetLayout};
pub use discriminator::Discriminator;
use layers::{cross_mask, positions, self_mask, Block, BlockContext, Embedding, LayerNorm, LstmLayer, Readout, WaveLayer};
pub use open_loop::OpenLoopOutput;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown architecture `{0}` (expected lstm, ae, ae-gan, transformer, gpt, bert, wavenet or all)")]
    UnknownArchitecture(String),
    #[error("{0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ModelResult<T> = Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "ae")]
    Ae,
    #[serde(rename = "ae-gan")]
    AeGan,
    #[serde(rename = "transformer")]
    Transformer,
    #[serde(rename = "gpt")]
    Gpt,
    #[serde(rename = "bert")]
    Bert,
    #[serde(rename = "wavenet")]
    WaveNet,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Self::Lstm,
        Self::Ae,
        Self::AeGan,
        Self::Transformer,
        Self::Gpt,
        Self::Bert,
        Self::WaveNet,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Lstm => "lstm",
            Self::Ae => "ae",
            Self::AeGan => "ae-gan",
            Self::Transformer => "transformer",
            Self::Gpt => "gpt",
            Self::Bert => "bert",
            Self::WaveNet => "wavenet",
        }
    }

    pub fn layout(self) -> TargetLayout {
        match self {
            Self::Lstm => TargetLayout::NextEvent,
            Self::Ae | Self::AeGan | Self::Transformer => TargetLayout::PrefixToShiftedSuffix,
            Self::Bert => TargetLayout::MaskedReconstruction,
            Self::Gpt | Self::WaveNet => TargetLayout::FullShifted,
        }
    }

    /// Encodes the prefix once and decodes the suffix from `[SOS]`.
    pub fn is_encoder_decoder(self) -> bool {
        matches!(self, Self::Ae | Self::AeGan | Self::Transformer)
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Self::Lstm | Self::Ae | Self::AeGan)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == lower || (lower == "aegan" && *a == Self::AeGan))
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub kernel_size: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, vocab_size: usize, max_len: usize) -> Self {
        Self {
            architecture,
            layers: 4,
            d_model: 128,
            heads: 4,
            kernel_size: 2,
            dropout: 0.3,
            vocab_size,
            max_len,
        }
    }

    pub fn validate(&self) -> ModelResult<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers < 1 {
            return bad("layers must be at least 1".into());
        }
        if self.d_model == 0 {
            return bad("latent size must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!(
                "latent size {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.kernel_size == 0 {
            return bad("filter size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size <= crate::event_log::NUM_SPECIAL {
            return bad("vocabulary has no activities".into());
        }
        if self.max_len < 2 {
            return bad("max length must be at least 2".into());
        }
        Ok(())
    }

    /// `2^{L-1}·k_f` for WaveNet.
    pub fn receptive_field(&self) -> usize {
        (1usize << (self.layers - 1)) * self.kernel_size
    }
}

#[derive(Clone, Debug)]
enum Net {
    Lstm {
        layers: Vec<LstmLayer>,
    },
    EncDecLstm {
        encoder: Vec<LstmLayer>,
        decoder: Vec<LstmLayer>,
    },
    Transformer {
        encoder: Vec<Block>,
        enc_ln: LayerNorm,
        decoder: Vec<Block>,
        dec_ln: LayerNorm,
    },
    SelfAttention {
        blocks: Vec<Block>,
        ln: LayerNorm,
        causal: bool,
    },
    WaveNet {
        layers: Vec<WaveLayer>,
    },
}

/// Readout of a forward pass, rows aligned with the target positions.
#[derive(Clone, Copy, Debug)]
pub struct Output {
    /// `[batch·len × V]`.
    pub logits: Var,
    /// `[batch·len × 1]` scaled durations.
    pub times: Var,
    pub batch: usize,
    pub len: usize,
    /// Time column of the (encoder) input, a gradient-tracking leaf.
    pub input_times: Var,
    pub decoder_times: Option<Var>,
}

/// Per-layer `(h, c)` of a recurrent model, one row.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState<T> {
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
}

/// Next-step prediction of an incremental decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<T> {
    pub logits: Vec<T>,
    pub time: T,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    embedding: Embedding,
    readout: Readout,
    net: Net,
}

impl<T: Real> Model<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> ModelResult<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (d, v, h) = (config.d_model, config.vocab_size, config.heads);
        let embedding = Embedding::new(&mut store, "embed", v, d, rng);
        let lstm_stack = |store: &mut ParamStore<T>, name: &str, rng: &mut R| {
            (0..config.layers)
                .map(|l| LstmLayer::new(store, &format!("{name}{l}"), d, d, rng))
                .collect::<Vec<_>>()
        };
        let blocks = |store: &mut ParamStore<T>, name: &str, cross: bool, rng: &mut R| {
            (0..config.layers)
                .map(|l| Block::new(store, &format!("{name}{l}"), d, h, cross, rng))
                .collect::<Vec<_>>()
        };
        let net = match config.architecture {
            Architecture::Lstm => Net::Lstm {
                layers: lstm_stack(&mut store, "lstm", rng),
            },
            Architecture::Ae | Architecture::AeGan => Net::EncDecLstm {
                encoder: lstm_stack(&mut store, "enc", rng),
                decoder: lstm_stack(&mut store, "dec", rng),
            },
            Architecture::Transformer => {
                let encoder = blocks(&mut store, "enc", false, rng);
                let enc_ln = LayerNorm::new(&mut store, "enc_ln", d, rng);
                let decoder = blocks(&mut store, "dec", true, rng);
                let dec_ln = LayerNorm::new(&mut store, "dec_ln", d, rng);
                Net::Transformer {
                    encoder,
                    enc_ln,
                    decoder,
                    dec_ln,
                }
            }
            Architecture::Gpt | Architecture::Bert => {
                let blocks = blocks(&mut store, "block", false, rng);
                Net::SelfAttention {
                    blocks,
                    ln: LayerNorm::new(&mut store, "final_ln", d, rng),
                    causal: config.architecture == Architecture::Gpt,
                }
            }
            Architecture::WaveNet => Net::WaveNet {
                layers: (0..config.layers)
                    .map(|l| {
                        WaveLayer::new(&mut store, &format!("wave{l}"), d, config.kernel_size, 1 << l, rng)
                    })
                    .collect(),
            },
        };
        let readout = Readout::new(&mut store, d, v, rng);
        Ok(Self {
            config,
            store,
            embedding,
            readout,
            net,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            embedding: self.embedding.clone(),
            readout: self.readout.clone(),
            net: self.net.clone(),
        }
    }

    fn check_indices(&self, s: &SeqBatch) -> ModelResult<()> {
        if let Some(&a) = s.activities.iter().find(|&&a| a >= self.config.vocab_size) {
            return Err(ModelError::Input(format!(
                "activity index {a} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        if s.activities.len() != s.batch * s.len || s.times.len() != s.batch * s.len {
            return Err(ModelError::Input("batch buffers do not match its shape".into()));
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph<T>, s: &SeqBatch, with_positions: bool) -> ModelResult<(Var, Var)> {
        let (z, t) = self.embedding.embed(g, &self.store, &s.activities, &s.times)?;
        if !with_positions {
            return Ok((z, t));
        }
        let p = g.constant(positions(s.batch, s.len, self.config.d_model));
        Ok((g.add(z, p)?, t))
    }

    fn lstm_stack<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        layers: &[LstmLayer],
        mut x: Var,
        s: &SeqBatch,
        init: Option<&[(Var, Var)]>,
        rng: &mut R,
    ) -> ModelResult<(Var, Vec<(Var, Var)>)> {
        let mut finals = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let bound = layer.bind(g, &self.store);
            let (out, fin) = bound.sequence(g, x, s.batch, s.len, &s.lengths, init.map(|i| i[l]))?;
            finals.push(fin);
            x = g.dropout(out, self.config.dropout, rng);
        }
        Ok((x, finals))
    }

    /// Forward pass. `decoder` is required exactly for encoder-decoder
    /// architectures; outputs align with it when present, else with `inputs`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        inputs: &SeqBatch,
        decoder: Option<&SeqBatch>,
        rng: &mut R,
    ) -> ModelResult<Output> {
        self.check_indices(inputs)?;
        if let Some(d) = decoder {
            self.check_indices(d)?;
        }
        let arch = self.architecture();
        if arch.is_encoder_decoder() != decoder.is_some() {
            return Err(ModelError::Input(format!(
                "{arch} {} a decoder input",
                if arch.is_encoder_decoder() { "needs" } else { "takes no" }
            )));
        }
        let dropout = self.config.dropout;
        let (latents, input_times, decoder_times, out_seq) = match &self.net {
            Net::Lstm { layers } => {
                let (x, t) = self.embed(g, inputs, false)?;
                let (h, _) = self.lstm_stack(g, layers, x, inputs, None, rng)?;
                (h, t, None, inputs)
            }
            Net::EncDecLstm { encoder, decoder: dec } => {
                let d = decoder.expect("checked");
                let (x, t) = self.embed(g, inputs, false)?;
                let (_, states) = self.lstm_stack(g, encoder, x, inputs, None, rng)?;
                let (y, dt) = self.embed(g, d, false)?;
                let (h, _) = self.lstm_stack(g, dec, y, d, Some(&states), rng)?;
                (h, t, Some(dt), d)
            }
            Net::Transformer {
                encoder,
                enc_ln,
                decoder: dec,
                dec_ln,
            } => {
                let d = decoder.expect("checked");
                let (mut x, t) = self.embed(g, inputs, true)?;
                x = g.dropout(x, dropout, rng);
                let enc_mask = self_mask::<T>(&inputs.lengths, inputs.len, false);
                for b in encoder {
                    let mut ctx = BlockContext {
                        batch: inputs.batch,
                        len: inputs.len,
                        self_mask: &enc_mask,
                        memory: None,
                        dropout,
                        rng: &mut *rng,
                    };
                    x = b.apply(g, &self.store, x, &mut ctx)?;
                }
                let memory = enc_ln.apply(g, &self.store, x)?;
                let (mut y, dt) = self.embed(g, d, true)?;
                y = g.dropout(y, dropout, rng);
                let dec_mask = self_mask::<T>(&d.lengths, d.len, true);
                let xmask = cross_mask::<T>(&inputs.lengths, d.len, inputs.len);
                for b in dec {
                    let mut ctx = BlockContext {
                        batch: d.batch,
                        len: d.len,
                        self_mask: &dec_mask,
                        memory: Some((memory, inputs.len, &xmask)),
                        dropout,
                        rng: &mut *rng,
                    };
                    y = b.apply(g, &self.store, y, &mut ctx)?;
                }
                (dec_ln.apply(g, &self.store, y)?, t, Some(dt), d)
            }
            Net::SelfAttention { blocks, ln, causal } => {
                let (mut x, t) = self.embed(g, inputs, true)?;
                x = g.dropout(x, dropout, rng);
                let mask = self_mask::<T>(&inputs.lengths, inputs.len, *causal);
                for b in blocks {
                    let mut ctx = BlockContext {
                        batch: inputs.batch,
                        len: inputs.len,
                        self_mask: &mask,
                        memory: None,
                        dropout,
                        rng: &mut *rng,
                    };
                    x = b.apply(g, &self.store, x, &mut ctx)?;
                }
                (ln.apply(g, &self.store, x)?, t, None, inputs)
            }
            Net::WaveNet { layers } => {
                let (mut x, t) = self.embed(g, inputs, false)?;
                for layer in layers {
                    x = layer.apply(g, &self.store, x, inputs.batch, inputs.len, dropout, rng)?;
                }
                (x, t, None, inputs)
            }
        };
        let (logits, times) = self.readout.apply(g, &self.store, latents)?;
        Ok(Output {
            logits,
            times,
            batch: out_seq.batch,
            len: out_seq.len,
            input_times,
            decoder_times,
        })
    }

    /// Encoder and decoder stacks of a recurrent model. For the plain LSTM
    /// the same stack plays both roles.
    fn recurrent_stacks(&self) -> ModelResult<(&[LstmLayer], &[LstmLayer])> {
        match &self.net {
            Net::Lstm { layers } => Ok((layers, layers)),
            Net::EncDecLstm { encoder, decoder } => Ok((encoder, decoder)),
            _ => Err(ModelError::Input(format!(
                "{} has no recurrent state",
                self.architecture()
            ))),
        }
    }

    /// Runs the prefix (one row, scaled times) through the recurrent stack
    /// in eval mode. For the LSTM this also returns the prediction for the
    /// step after the prefix; encoder-decoder models return only the context.
    pub fn recurrent_start(
        &self,
        activities: &[usize],
        times: &[f64],
    ) -> ModelResult<(RecurrentState<T>, Option<StepOutput<T>>)> {
        let (encoder, _) = self.recurrent_stacks()?;
        let s = SeqBatch::single(activities.to_vec(), times.to_vec());
        self.check_indices(&s)?;
        let mut g = Graph::new(false);
        let (x, _) = self.embed(&mut g, &s, false)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (h, finals) = self.lstm_stack(&mut g, encoder, x, &s, None, &mut rng)?;
        let state = RecurrentState {
            layers: finals
                .iter()
                .map(|&(h, c)| (g.value(h).clone(), g.value(c).clone()))
                .collect(),
        };
        if self.architecture() != Architecture::Lstm {
            return Ok((state, None));
        }
        let last = g.gather_rows(h, &[s.len - 1])?;
        let (logits, time) = self.readout.apply(&mut g, &self.store, last)?;
        Ok((
            state,
            Some(StepOutput {
                logits: g.value(logits).data().to_vec(),
                time: g.value(time).item(),
            }),
        ))
    }

    /// Feeds one event to the decoder stack and advances `state`.
    pub fn recurrent_step(
        &self,
        state: &mut RecurrentState<T>,
        activity: usize,
        time: f64,
    ) -> ModelResult<StepOutput<T>> {
        let (_, decoder) = self.recurrent_stacks()?;
        if activity >= self.config.vocab_size {
            return Err(ModelError::Input(format!("activity index {activity} outside vocabulary")));
        }
        let mut g = Graph::new(false);
        let (mut x, _) = self.embedding.embed(&mut g, &self.store, &[activity], &[time])?;
        for (layer, st) in decoder.iter().zip(state.layers.iter_mut()) {
            let bound = layer.bind(&mut g, &self.store);
            let h = g.constant(st.0.clone());
            let c = g.constant(st.1.clone());
            let xw = bound.input_projection(&mut g, x)?;
            let (h, c) = bound.cell(&mut g, xw, h, c)?;
            *st = (g.value(h).clone(), g.value(c).clone());
            x = h;
        }
        let (logits, t) = self.readout.apply(&mut g, &self.store, x)?;
        Ok(StepOutput {
            logits: g.value(logits).data().to_vec(),
            time: g.value(t).item(),
        })
    }
}

/// Metadata stored with a model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocabulary: Vec<String>,
    pub vocabulary_fingerprint: String,
    pub scaler_min_seconds: f64,
    pub scaler_max_seconds: f64,
    pub log_hash: String,
    /// Free-form run settings recorded with the checkpoint.
    pub run: Vec<(String, String)>,
}

const MODEL_MAGIC: &[u8; 4] = b"SBMD";
const MODEL_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    header: &CheckpointHeader,
    model: &Model<f32>,
) -> ModelResult<()> {
    let json = serde_json::to_vec(header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    write_params(w, &model.store)?;
    Ok(())
}

/// Reads a checkpoint and rebuilds the model from its header.
pub fn read_checkpoint<R: Read>(r: &mut R) -> ModelResult<(CheckpointHeader, Model<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != MODEL_VERSION {
        return Err(ModelError::Checkpoint("unsupported checkpoint version".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let loaded: ParamStore<f32> = read_params(r)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::<f32>::new(header.config.clone(), &mut rng)?;
    if loaded.len() != model.store.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters, found {}",
            model.store.len(),
            loaded.len()
        )));
    }
    for (dst, src) in model.store.iter_mut().zip(loaded.iter()) {
        if dst.name != src.name || dst.value.shape() != src.value.shape() {
            return Err(ModelError::Checkpoint(format!(
                "parameter {} {:?} does not match {} {:?}",
                src.name,
                src.value.shape(),
                dst.name,
                dst.value.shape()
            )));
        }
        dst.value = src.value.clone();
    }
    Ok((header, model))
}
