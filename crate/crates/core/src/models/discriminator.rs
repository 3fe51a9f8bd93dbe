use rand::Rng;
use suffixbench_diffcore::{Graph, Init, ParamId, ParamStore, Real, Var};

use super::layers::{linear, Embedding, LstmLayer};
use super::ModelResult;

/// Recurrent critic over (relaxed one-hot activity, time) sequences,
/// returning one logit per sequence. Owns its parameters.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub store: ParamStore<T>,
    embedding: Embedding,
    lstm: LstmLayer,
    head_w: ParamId,
    head_b: ParamId,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(vocab: usize, d: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let embedding = Embedding::new(&mut store, "disc.embed", vocab, d, rng);
        let lstm = LstmLayer::new(&mut store, "disc.lstm", d, d, rng);
        let head_w = store.add("disc.head_w", d, 1, Init::FanIn(d), rng);
        let head_b = store.add("disc.head_b", 1, 1, Init::Zeros, rng);
        Self {
            store,
            embedding,
            lstm,
            head_w,
            head_b,
        }
    }

    /// `simplex` is `[batch·len × V]`, `times` `[batch·len × 1]`; returns
    /// `[batch × 1]` logits read at each row's last true position.
    pub fn logits(
        &self,
        g: &mut Graph<T>,
        simplex: Var,
        times: Var,
        batch: usize,
        len: usize,
        lengths: &[usize],
    ) -> ModelResult<Var> {
        let x = self.embedding.embed_soft(g, &self.store, simplex, times)?;
        let bound = self.lstm.bind(g, &self.store);
        let (_, (h, _)) = bound.sequence(g, x, batch, len, lengths, None)?;
        linear(g, &self.store, h, self.head_w, self.head_b)
    }

    /// Probability that each sequence is real.
    pub fn probability(
        &self,
        g: &mut Graph<T>,
        simplex: Var,
        times: Var,
        batch: usize,
        len: usize,
        lengths: &[usize],
    ) -> ModelResult<Var> {
        let z = self.logits(g, simplex, times, batch, len, lengths)?;
        Ok(g.sigmoid(z))
    }
}
