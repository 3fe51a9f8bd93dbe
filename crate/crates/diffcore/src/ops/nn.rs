use rand::Rng;

use super::elementwise::softmax_in_place;
use super::{slot, Op};
use crate::error::{shape_err, DiffError};
use crate::graph::Node;
use crate::{Graph, Real, Result, Tensor, Var};

/// Geometry of a batched multi-head attention call.
///
/// Queries are `[batch·q_len × d]`, keys and values `[batch·k_len × d]`;
/// each of the `heads` heads owns a contiguous block of `d / heads` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
}

impl<T: Real> Graph<T> {
    /// Inverted dropout. Identity at `p == 0` or outside training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if !self.is_training() || p <= 0.0 {
            return a;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    /// Shifts each sequence right by `shift` steps, filling with zeros:
    /// `out[b, t] = a[b, t - shift]`.
    pub fn causal_shift(&mut self, a: Var, batch: usize, len: usize, shift: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if rows != batch * len {
            return Err(shape_err(
                "causal_shift",
                format!("[{rows}, {cols}] is not {batch} sequences of length {len}"),
            ));
        }
        if shift == 0 {
            return Ok(a);
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(rows, cols);
        for b in 0..batch {
            for t in shift..len {
                out.row_mut(b * len + t)
                    .copy_from_slice(src.row(b * len + t - shift));
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            out,
            Op::CausalShift {
                x: a,
                batch,
                len,
                shift,
            },
            rg,
        ))
    }

    /// Row-wise layer normalisation with learned `[1 × d]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let [rows, d] = self.shape(x);
        if self.shape(gain) != [1, d] || self.shape(bias) != [1, d] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "input [{rows}, {d}], gain {:?}, bias {:?}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let eps = T::of(1e-5);
        let dn = T::of(d as f64);
        let xv = self.value(x);
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = Tensor::zeros(rows, d);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let o = out.row_mut(r);
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                o[c] = h * gv[c] + bv[c];
            }
        }
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Scaled dot-product attention `softmax(QKᵀ/√d_k + M)·V` per head.
    ///
    /// `mask` is an additive `[batch·q_len × k_len]` matrix with entries
    /// `0` (attend) or `-inf` (blocked).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &Tensor<T>,
        shape: AttentionShape,
    ) -> Result<Var> {
        let AttentionShape {
            batch,
            q_len,
            k_len,
            heads,
        } = shape;
        let [qr, d] = self.shape(q);
        let ok = qr == batch * q_len
            && self.shape(k) == [batch * k_len, d]
            && self.shape(v) == [batch * k_len, d]
            && mask.shape() == [batch * q_len, k_len]
            && heads > 0
            && d % heads == 0;
        if !ok {
            return Err(shape_err(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?}, mask {:?} for {shape:?}",
                    self.shape(q),
                    self.shape(k),
                    self.shape(v),
                    mask.shape()
                ),
            ));
        }
        let dk = d / heads;
        let scale = T::one() / T::of(dk as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); batch * heads * q_len * k_len];
        let mut out = Tensor::zeros(batch * q_len, d);
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                for i in 0..q_len {
                    let qrow = &qv.row(b * q_len + i)[cols.clone()];
                    let base = ((b * heads + h) * q_len + i) * k_len;
                    let p = &mut probs[base..base + k_len];
                    let mrow = mask.row(b * q_len + i);
                    for j in 0..k_len {
                        if mrow[j] == T::neg_infinity() {
                            p[j] = T::neg_infinity();
                            continue;
                        }
                        let krow = &kv.row(b * k_len + j)[cols.clone()];
                        let s: T = qrow.iter().zip(krow).map(|(&x, &y)| x * y).sum();
                        p[j] = s * scale + mrow[j];
                    }
                    softmax_in_place(p);
                    let orow = &mut out.row_mut(b * q_len + i)[cols.clone()];
                    for j in 0..k_len {
                        let w = p[j];
                        if w == T::zero() {
                            continue;
                        }
                        let vrow = &vv.row(b * k_len + j)[cols.clone()];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            rg,
        ))
    }

    /// Attention weights recorded by an [`attention`](Self::attention) node,
    /// laid out `[batch][head][query][key]`.
    pub fn attention_probs(&self, node: Var) -> Option<&[T]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    g: &Tensor<T>,
    q: Var,
    k: Var,
    v: Var,
    shape: &AttentionShape,
    probs: &[T],
) {
    let AttentionShape {
        batch,
        q_len,
        k_len,
        heads,
    } = *shape;
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let d = qv.cols();
    let dk = d / heads;
    let scale = T::one() / T::of(dk as f64).sqrt();
    let mut dq = Tensor::zeros(qv.rows(), d);
    let mut dkm = Tensor::zeros(kv.rows(), d);
    let mut dv = Tensor::zeros(vv.rows(), d);
    let mut dp = vec![T::zero(); k_len];
    for b in 0..batch {
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..q_len {
                let base = ((b * heads + h) * q_len + i) * k_len;
                let p = &probs[base..base + k_len];
                let grow = &g.row(b * q_len + i)[cols.clone()];
                let mut dot = T::zero();
                for j in 0..k_len {
                    if p[j] == T::zero() {
                        dp[j] = T::zero();
                        continue;
                    }
                    let vrow = &vv.row(b * k_len + j)[cols.clone()];
                    dp[j] = grow.iter().zip(vrow).map(|(&x, &y)| x * y).sum();
                    dot += p[j] * dp[j];
                    let dvrow = &mut dv.row_mut(b * k_len + j)[cols.clone()];
                    for (o, &x) in dvrow.iter_mut().zip(grow) {
                        *o += p[j] * x;
                    }
                }
                let qrow = &qv.row(b * q_len + i)[cols.clone()];
                for j in 0..k_len {
                    if p[j] == T::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let krow = &kv.row(b * k_len + j)[cols.clone()];
                    let dqrow = &mut dq.row_mut(b * q_len + i)[cols.clone()];
                    for (o, &x) in dqrow.iter_mut().zip(krow) {
                        *o += ds * x;
                    }
                    let dkrow = &mut dkm.row_mut(b * k_len + j)[cols.clone()];
                    for (o, &x) in dkrow.iter_mut().zip(qrow) {
                        *o += ds * x;
                    }
                }
            }
        }
    }
    for (var, local) in [(q, dq), (k, dkm), (v, dv)] {
        if let Some(buf) = slot(nodes, grads, var) {
            buf.add_assign(&local);
        }
    }
}

/// Causal dilated 1-D convolution over `[batch·len × c_in]` sequences.
///
/// `taps[j]` (`[c_in × c_out]`) multiplies the input `j·dilation` steps in
/// the past, so `out[t]` depends only on `x[t - (taps.len()-1)·dilation ..= t]`.
pub fn causal_conv1d<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    taps: &[Var],
    bias: Var,
    batch: usize,
    len: usize,
    dilation: usize,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (j, &w) in taps.iter().enumerate() {
        let shifted = g.causal_shift(x, batch, len, j * dilation)?;
        let term = g.matmul(shifted, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    let acc = acc.ok_or_else(|| shape_err("causal_conv1d", "no filter taps"))?;
    g.add_row(acc, bias)
}

/// Differentiable relaxed one-hot sample `softmax((logits + gumbel) / τ)`.
pub fn gumbel_softmax_sample<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    logits: Var,
    tau: f64,
    rng: &mut R,
) -> Result<Var> {
    let [r, c] = g.shape(logits);
    let noise = Tensor::from_fn(r, c, |_, _| {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        T::of(-(-u.ln()).ln())
    });
    gumbel_softmax_with_noise(g, logits, tau, noise)
}

/// Same as [`gumbel_softmax_sample`] with caller-supplied noise.
pub fn gumbel_softmax_with_noise<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    tau: f64,
    noise: Tensor<T>,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(DiffError::Temperature(tau));
    }
    let n = g.constant(noise);
    let perturbed = g.add(logits, n)?;
    let scaled = g.scale(perturbed, T::of(1.0 / tau));
    Ok(g.softmax(scaled))
}
