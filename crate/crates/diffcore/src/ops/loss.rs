use super::elementwise::softmax_in_place;
use super::Op;
use crate::error::{shape_err, DiffError};
use crate::{Graph, Real, Result, Tensor, Var};

impl<T: Real> Graph<T> {
    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    ///
    /// `logits` is `[N × V]`; `targets` and `mask` have one entry per row.
    /// An all-zero mask yields 0 and bumps [`Graph::empty_mask_losses`].
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[T],
    ) -> Result<Var> {
        let [n, v] = self.shape(logits);
        if targets.len() != n || mask.len() != n {
            return Err(shape_err(
                "cross_entropy_masked",
                format!(
                    "logits [{n}, {v}], {} targets, {} mask entries",
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        let mut probs = self.value(logits).clone();
        let mut total = T::zero();
        let mut count = T::zero();
        for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if m == T::zero() {
                continue;
            }
            if t >= v {
                return Err(DiffError::Index {
                    op: "cross_entropy_masked",
                    index: t,
                    bound: v,
                });
            }
            let row = self.value(logits).row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total += m * (lse - row[t]);
            count += m;
            softmax_in_place(probs.row_mut(r));
        }
        let loss = if count == T::zero() {
            self.note_empty_mask();
            T::zero()
        } else {
            total / count
        };
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs: probs.into_data(),
                count,
            },
            rg,
        ))
    }

    /// Mean of `(pred - target)^2` over unmasked entries. `pred` is `[N × 1]`.
    pub fn mse_masked(&mut self, pred: Var, target: &[T], mask: &[T]) -> Result<Var> {
        let [n, c] = self.shape(pred);
        if c != 1 || target.len() != n || mask.len() != n {
            return Err(shape_err(
                "mse_masked",
                format!(
                    "pred [{n}, {c}], {} targets, {} mask entries",
                    target.len(),
                    mask.len()
                ),
            ));
        }
        let p = self.value(pred).data();
        let mut total = T::zero();
        let mut count = T::zero();
        for ((&x, &y), &m) in p.iter().zip(target).zip(mask) {
            if m != T::zero() {
                let d = x - y;
                total += m * d * d;
                count += m;
            }
        }
        let loss = if count == T::zero() {
            self.note_empty_mask();
            T::zero()
        } else {
            total / count
        };
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }
}
