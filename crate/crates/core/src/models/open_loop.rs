use rand::Rng;
use suffixbench_diffcore::{gumbel_softmax_sample, Graph, Real, Tensor, Var};

use super::{Model, ModelError, ModelResult, Net, Output};
use crate::preprocess::SeqBatch;

/// Decoder pass with per-row feedback of its own relaxed samples.
#[derive(Clone, Copy, Debug)]
pub struct OpenLoopOutput {
    pub output: Output,
    /// Gumbel-Softmax samples `[batch·len × V]`, batch-major.
    pub samples: Var,
}

fn to_batch_major<T: Real>(g: &mut Graph<T>, parts: &[Var], batch: usize) -> ModelResult<Var> {
    let len = parts.len();
    let tm = if len == 1 { parts[0] } else { g.concat_rows(parts)? };
    if batch == 1 {
        return Ok(tm);
    }
    let perm: Vec<usize> = (0..batch)
        .flat_map(|b| (0..len).map(move |t| t * batch + b))
        .collect();
    Ok(g.gather_rows(tm, &perm)?)
}

impl<T: Real> Model<T> {
    /// Step-wise decoding for encoder-decoder LSTMs. At every step after the
    /// first, rows with `open_rows[b]` consume the previous step's
    /// Gumbel-Softmax sample and predicted time instead of the ground truth.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_open_loop<R: Rng + ?Sized, S: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        inputs: &SeqBatch,
        decoder: &SeqBatch,
        open_rows: &[bool],
        tau: f64,
        rng: &mut R,
        gumbel_rng: &mut S,
    ) -> ModelResult<OpenLoopOutput> {
        let Net::EncDecLstm {
            encoder,
            decoder: dec_layers,
        } = &self.net
        else {
            return Err(ModelError::Input(format!(
                "{} does not support open-loop decoding",
                self.architecture()
            )));
        };
        if open_rows.len() != decoder.batch {
            return Err(ModelError::Input("one open-loop flag per row required".into()));
        }
        self.check_indices(inputs)?;
        self.check_indices(decoder)?;
        let (x, input_times) = self.embed(g, inputs, false)?;
        let (_, mut states) = self.lstm_stack(g, encoder, x, inputs, None, rng)?;
        let (y, decoder_times) = self.embed(g, decoder, false)?;
        let bound: Vec<_> = dec_layers.iter().map(|l| l.bind(g, &self.store)).collect();
        let col = |f: &dyn Fn(bool) -> bool| {
            Tensor::column(
                open_rows
                    .iter()
                    .map(|&o| if f(o) { T::one() } else { T::zero() })
                    .collect(),
            )
        };
        let open_mask = g.constant(col(&|o| o));
        let teacher_mask = g.constant(col(&|o| !o));
        let any_open = open_rows.iter().any(|&o| o);
        let (batch, len) = (decoder.batch, decoder.len);
        let mut logits = Vec::with_capacity(len);
        let mut times = Vec::with_capacity(len);
        let mut samples = Vec::with_capacity(len);
        let mut prev: Option<(Var, Var)> = None;
        let mut idx = vec![0usize; batch];
        for t in 0..len {
            for (b, slot) in idx.iter_mut().enumerate() {
                *slot = b * len + t;
            }
            let mut x_t = g.gather_rows(y, &idx)?;
            if let (true, Some((s, tm))) = (any_open, prev) {
                let soft = self.embedding.embed_soft(g, &self.store, s, tm)?;
                let a = g.mul_col(x_t, teacher_mask)?;
                let b = g.mul_col(soft, open_mask)?;
                x_t = g.add(a, b)?;
            }
            for (layer, st) in bound.iter().zip(states.iter_mut()) {
                let xw = layer.input_projection(g, x_t)?;
                let (h, c) = layer.cell(g, xw, st.0, st.1)?;
                *st = (h, c);
                x_t = g.dropout(h, self.config.dropout, rng);
            }
            let (l, tm) = self.readout.apply(g, &self.store, x_t)?;
            let s = gumbel_softmax_sample(g, l, tau, gumbel_rng)?;
            logits.push(l);
            times.push(tm);
            samples.push(s);
            prev = Some((s, tm));
        }
        Ok(OpenLoopOutput {
            output: Output {
                logits: to_batch_major(g, &logits, batch)?,
                times: to_batch_major(g, &times, batch)?,
                batch,
                len,
                input_times,
                decoder_times: Some(decoder_times),
            },
            samples: to_batch_major(g, &samples, batch)?,
        })
    }
}
