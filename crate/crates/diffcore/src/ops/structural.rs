use super::Op;
use crate::error::{shape_err, DiffError};
use crate::{Graph, Real, Result, Tensor, Var};

impl<T: Real> Graph<T> {
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs"));
        };
        let rows = self.shape(first)[0];
        let mut total = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            if r != rows {
                return Err(shape_err("concat_cols", format!("row counts {rows} vs {r}")));
            }
            total += c;
        }
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if start >= end || end > cols {
            return Err(shape_err(
                "slice_cols",
                format!("range {start}..{end} of [{rows}, {cols}]"),
            ));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(rows, end - start, |r, c| src.get(r, start + c));
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs"));
        };
        let cols = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            if c != cols {
                return Err(shape_err("concat_rows", format!("col counts {cols} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `r` of the result is row `indices[r]` of `a`. Indices may repeat.
    ///
    /// Applied to a `[V × d]` table this is the embedding projection, i.e.
    /// the product of one-hot rows with the table.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        let src = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(DiffError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(indices.len(), cols, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), rg))
    }

    /// Broadcasts a `[N × 1]` column to `[N × width]`.
    pub fn expand(&mut self, a: Var, width: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if cols != 1 {
            return Err(shape_err("expand", format!("expected [N, 1], got [{rows}, {cols}]")));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(rows, width, |r, _| src.get(r, 0));
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Expand(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }
}
