//! Building blocks shared by the architectures.

use rand::Rng;
use suffixbench_diffcore::{AttentionShape, Graph, Init, ParamId, ParamStore, Real, Tensor, Var};

use super::ModelResult;

/// Sum fusion of an activity projection and a time projection.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub activity: ParamId,
    pub time: ParamId,
}

impl Embedding {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            activity: store.add(format!("{name}.activity"), vocab, d, Init::FanIn(d), rng),
            time: store.add(format!("{name}.time"), 1, d, Init::FanIn(1), rng),
        }
    }

    /// Returns the fused embedding and the time column input (a leaf that
    /// tracks gradients, useful for sensitivity probes).
    pub fn embed<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        activities: &[usize],
        times: &[f64],
    ) -> ModelResult<(Var, Var)> {
        let table = g.param(store, self.activity);
        let a = g.gather_rows(table, activities)?;
        let t = g.input(Tensor::column(times.iter().map(|&x| T::of(x)).collect()));
        let w = g.param(store, self.time);
        let tw = g.matmul(t, w)?;
        Ok((g.add(a, tw)?, t))
    }

    /// Embedding of a relaxed one-hot `simplex` `[N × V]` and a time column.
    pub fn embed_soft<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        simplex: Var,
        time: Var,
    ) -> ModelResult<Var> {
        let table = g.param(store, self.activity);
        let a = g.matmul(simplex, table)?;
        let w = g.param(store, self.time);
        let tw = g.matmul(time, w)?;
        Ok(g.add(a, tw)?)
    }
}

/// Activity logits and time regression read from the same latent state.
#[derive(Clone, Debug)]
pub struct Readout {
    pub act_w: ParamId,
    pub act_b: ParamId,
    pub time_w: ParamId,
    pub time_b: ParamId,
}

impl Readout {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        d: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            act_w: store.add("readout.act_w", d, vocab, Init::FanIn(d), rng),
            act_b: store.add("readout.act_b", 1, vocab, Init::Zeros, rng),
            time_w: store.add("readout.time_w", d, 1, Init::FanIn(d), rng),
            time_b: store.add("readout.time_b", 1, 1, Init::Zeros, rng),
        }
    }

    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        latents: Var,
    ) -> ModelResult<(Var, Var)> {
        let w = g.param(store, self.act_w);
        let b = g.param(store, self.act_b);
        let logits = g.matmul(latents, w)?;
        let logits = g.add_row(logits, b)?;
        let tw = g.param(store, self.time_w);
        let tb = g.param(store, self.time_b);
        let t = g.matmul(latents, tw)?;
        let t = g.add_row(t, tb)?;
        Ok((logits, t))
    }
}

/// LSTM layer with gates ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub d: usize,
}

/// An [`LstmLayer`] whose parameters are already on the tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    wx: Var,
    wh: Var,
    b: Var,
    d: usize,
}

impl LstmLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            wx: store.add(format!("{name}.wx"), d_in, 4 * d, Init::FanIn(d), rng),
            wh: store.add(format!("{name}.wh"), d, 4 * d, Init::FanIn(d), rng),
            b: store.add(format!("{name}.b"), 1, 4 * d, Init::FanIn(d), rng),
            d,
        }
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> BoundLstm {
        BoundLstm {
            wx: g.param(store, self.wx),
            wh: g.param(store, self.wh),
            b: g.param(store, self.b),
            d: self.d,
        }
    }
}

impl BoundLstm {
    pub fn input_projection<T: Real>(&self, g: &mut Graph<T>, x: Var) -> ModelResult<Var> {
        let xw = g.matmul(x, self.wx)?;
        Ok(g.add_row(xw, self.b)?)
    }

    /// One step given the projected input `xw_t = x_t·W_x + b`.
    pub fn cell<T: Real>(
        &self,
        g: &mut Graph<T>,
        xw_t: Var,
        h: Var,
        c: Var,
    ) -> ModelResult<(Var, Var)> {
        let d = self.d;
        let hw = g.matmul(h, self.wh)?;
        let z = g.add(xw_t, hw)?;
        let i = g.slice_cols(z, 0, d)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, d, 2 * d)?;
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * d, 3 * d)?;
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * d, 4 * d)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Runs over `[batch·len × d_in]` batch-major input. Padded steps
    /// (`t >= lengths[b]`) carry the previous state through unchanged, so the
    /// returned final state belongs to each row's last true position.
    pub fn sequence<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        batch: usize,
        len: usize,
        lengths: &[usize],
        init: Option<(Var, Var)>,
    ) -> ModelResult<(Var, (Var, Var))> {
        let xw = self.input_projection(g, x)?;
        let (mut h, mut c) = match init {
            Some(s) => s,
            None => (
                g.constant(Tensor::zeros(batch, self.d)),
                g.constant(Tensor::zeros(batch, self.d)),
            ),
        };
        let mut outs = Vec::with_capacity(len);
        let mut idx = vec![0usize; batch];
        for t in 0..len {
            for (b, slot) in idx.iter_mut().enumerate() {
                *slot = b * len + t;
            }
            let xw_t = if batch * len == batch {
                xw
            } else {
                g.gather_rows(xw, &idx)?
            };
            let (h_new, c_new) = self.cell(g, xw_t, h, c)?;
            if lengths.iter().any(|&l| l <= t) {
                let m = Tensor::column(
                    lengths
                        .iter()
                        .map(|&l| if t < l { T::one() } else { T::zero() })
                        .collect(),
                );
                let inv = m.map(|v| T::one() - v);
                let m = g.constant(m);
                let inv = g.constant(inv);
                let a = g.mul_col(h_new, m)?;
                let b = g.mul_col(h, inv)?;
                h = g.add(a, b)?;
                let a = g.mul_col(c_new, m)?;
                let b = g.mul_col(c, inv)?;
                c = g.add(a, b)?;
            } else {
                h = h_new;
                c = c_new;
            }
            outs.push(h);
        }
        let time_major = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_rows(&outs)?
        };
        let out = if batch == 1 {
            time_major
        } else {
            let perm: Vec<usize> = (0..batch)
                .flat_map(|b| (0..len).map(move |t| t * batch + b))
                .collect();
            g.gather_rows(time_major, &perm)?
        };
        Ok((out, (h, c)))
    }
}

/// Multi-head attention projections.
#[derive(Clone, Debug)]
pub struct MultiHead {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
}

impl MultiHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |s: &str, rng: &mut R| store.add(format!("{name}.{s}"), d, d, Init::FanIn(d), rng);
        let wq = w("wq", rng);
        let wk = w("wk", rng);
        let wv = w("wv", rng);
        let wo = w("wo", rng);
        let mut b = |s: &str, rng: &mut R| store.add(format!("{name}.{s}"), 1, d, Init::Zeros, rng);
        Self {
            wq,
            bq: b("bq", rng),
            wk,
            bk: b("bk", rng),
            wv,
            bv: b("bv", rng),
            wo,
            bo: b("bo", rng),
            heads,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        xq: Var,
        xkv: Var,
        mask: &Tensor<T>,
        batch: usize,
        q_len: usize,
        k_len: usize,
    ) -> ModelResult<Var> {
        let q = linear(g, store, xq, self.wq, self.bq)?;
        let k = linear(g, store, xkv, self.wk, self.bk)?;
        let v = linear(g, store, xkv, self.wv, self.bv)?;
        let a = g.attention(
            q,
            k,
            v,
            mask,
            AttentionShape {
                batch,
                q_len,
                k_len,
                heads: self.heads,
            },
        )?;
        linear(g, store, a, self.wo, self.bo)
    }
}

pub fn linear<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> ModelResult<Var> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), 1, d, Init::Ones, rng),
            bias: store.add(format!("{name}.bias"), 1, d, Init::Zeros, rng),
        }
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> ModelResult<Var> {
        let gn = g.param(store, self.gain);
        let b = g.param(store, self.bias);
        Ok(g.layer_norm(x, gn, b)?)
    }
}

/// Pre-norm transformer block; `cross` is present in encoder-decoder decoders.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHead,
    pub cross: Option<(LayerNorm, MultiHead)>,
    pub ln_ff: LayerNorm,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
}

/// Everything a block needs besides its input.
pub struct BlockContext<'a, T, R: ?Sized> {
    pub batch: usize,
    pub len: usize,
    pub self_mask: &'a Tensor<T>,
    /// Encoder memory, its length and the cross mask.
    pub memory: Option<(Var, usize, &'a Tensor<T>)>,
    pub dropout: f64,
    pub rng: &'a mut R,
}

impl Block {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        with_cross: bool,
        rng: &mut R,
    ) -> Self {
        let ln_self = LayerNorm::new(store, &format!("{name}.ln_self"), d, rng);
        let self_attn = MultiHead::new(store, &format!("{name}.self"), d, heads, rng);
        let cross = with_cross.then(|| {
            (
                LayerNorm::new(store, &format!("{name}.ln_cross"), d, rng),
                MultiHead::new(store, &format!("{name}.cross"), d, heads, rng),
            )
        });
        let ln_ff = LayerNorm::new(store, &format!("{name}.ln_ff"), d, rng);
        Self {
            ln_self,
            self_attn,
            cross,
            ln_ff,
            ff1_w: store.add(format!("{name}.ff1_w"), d, 4 * d, Init::FanIn(d), rng),
            ff1_b: store.add(format!("{name}.ff1_b"), 1, 4 * d, Init::Zeros, rng),
            ff2_w: store.add(format!("{name}.ff2_w"), 4 * d, d, Init::FanIn(4 * d), rng),
            ff2_b: store.add(format!("{name}.ff2_b"), 1, d, Init::Zeros, rng),
        }
    }

    pub fn apply<T: Real, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: &mut BlockContext<'_, T, R>,
    ) -> ModelResult<Var> {
        let (b, n) = (ctx.batch, ctx.len);
        let h = self.ln_self.apply(g, store, x)?;
        let h = self.self_attn.apply(g, store, h, h, ctx.self_mask, b, n, n)?;
        let h = g.dropout(h, ctx.dropout, ctx.rng);
        let mut x = g.add(x, h)?;
        if let (Some((ln, attn)), Some((mem, mem_len, mask))) = (&self.cross, ctx.memory) {
            let h = ln.apply(g, store, x)?;
            let h = attn.apply(g, store, h, mem, mask, b, n, mem_len)?;
            let h = g.dropout(h, ctx.dropout, ctx.rng);
            x = g.add(x, h)?;
        }
        let h = self.ln_ff.apply(g, store, x)?;
        let h = linear(g, store, h, self.ff1_w, self.ff1_b)?;
        let h = g.relu(h);
        let h = linear(g, store, h, self.ff2_w, self.ff2_b)?;
        let h = g.dropout(h, ctx.dropout, ctx.rng);
        Ok(g.add(x, h)?)
    }
}

/// Additive self-attention mask `[batch·len × len]`: keys past a row's true
/// length are blocked, and with `causal` so are keys after the query.
pub fn self_mask<T: Real>(lengths: &[usize], len: usize, causal: bool) -> Tensor<T> {
    let batch = lengths.len();
    Tensor::from_fn(batch * len, len, |r, j| {
        let (b, i) = (r / len, r % len);
        if j >= lengths[b] || (causal && j > i) {
            T::neg_infinity()
        } else {
            T::zero()
        }
    })
}

/// Cross-attention mask `[batch·q_len × k_len]` blocking padded keys.
pub fn cross_mask<T: Real>(k_lengths: &[usize], q_len: usize, k_len: usize) -> Tensor<T> {
    Tensor::from_fn(k_lengths.len() * q_len, k_len, |r, j| {
        if j >= k_lengths[r / q_len] {
            T::neg_infinity()
        } else {
            T::zero()
        }
    })
}

/// Sinusoidal absolute positions for `batch` sequences of length `len`.
pub fn positions<T: Real>(batch: usize, len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(batch * len, d, |r, c| {
        let pos = (r % len) as f64;
        let i = (c / 2) as f64;
        let angle = pos / 10000f64.powf(2.0 * i / d as f64);
        T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Causal dilated convolution followed by `tanh` and a 1×1 residual map.
#[derive(Clone, Debug)]
pub struct WaveLayer {
    pub taps: Vec<ParamId>,
    pub conv_b: ParamId,
    pub res_w: ParamId,
    pub res_b: ParamId,
    pub dilation: usize,
}

impl WaveLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let taps = (0..kernel)
            .map(|j| store.add(format!("{name}.tap{j}"), d, d, Init::FanIn(d * kernel), rng))
            .collect();
        Self {
            taps,
            conv_b: store.add(format!("{name}.conv_b"), 1, d, Init::Zeros, rng),
            res_w: store.add(format!("{name}.res_w"), d, d, Init::FanIn(d), rng),
            res_b: store.add(format!("{name}.res_b"), 1, d, Init::Zeros, rng),
            dilation,
        }
    }

    pub fn apply<T: Real, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        batch: usize,
        len: usize,
        dropout: f64,
        rng: &mut R,
    ) -> ModelResult<Var> {
        let taps: Vec<Var> = self.taps.iter().map(|&t| g.param(store, t)).collect();
        let b = g.param(store, self.conv_b);
        let h = suffixbench_diffcore::causal_conv1d(g, x, &taps, b, batch, len, self.dilation)?;
        let h = g.tanh(h);
        let h = linear(g, store, h, self.res_w, self.res_b)?;
        let h = g.dropout(h, dropout, rng);
        Ok(g.add(x, h)?)
    }
}
