//! Operator set. Forward constructors live on [`Graph`](crate::Graph) in the
//! submodules; every backward rule is in [`backward`] below.

mod elementwise;
mod loss;
mod nn;
mod structural;

pub use nn::{causal_conv1d, gumbel_softmax_sample, gumbel_softmax_with_noise, AttentionShape};

use crate::graph::Node;
use crate::kernels::{matmul_at_into, matmul_bt_into};
use crate::{Real, Tensor, Var};

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Expand(Var),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<T>),
    CausalShift {
        x: Var,
        batch: usize,
        len: usize,
        shift: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<T>,
        probs: Vec<T>,
        count: T,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
        mask: Vec<T>,
        count: T,
    },
}

/// Zero-initialised gradient buffer for `v`, or `None` if `v` takes no gradient.
fn slot<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
) -> Option<&'a mut Tensor<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let [r, c] = node.value.shape();
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
}

fn acc_map<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    g: &Tensor<T>,
    f: impl Fn(usize, T) -> T,
) {
    if let Some(buf) = slot(nodes, grads, v) {
        for (i, (b, &gi)) in buf.data_mut().iter_mut().zip(g.data()).enumerate() {
            *b += f(i, gi);
        }
    }
}

pub(crate) fn backward<T: Real>(
    nodes: &[Node<T>],
    i: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if let Some(buf) = slot(nodes, grads, *a) {
                matmul_bt_into(m, n, k, g.data(), bv.data(), buf.data_mut(), true);
            }
            if let Some(buf) = slot(nodes, grads, *b) {
                matmul_at_into(k, m, n, av.data(), g.data(), buf.data_mut(), true);
            }
        }
        Op::Add(a, b) => {
            acc_map(nodes, grads, *a, g, |_, x| x);
            acc_map(nodes, grads, *b, g, |_, x| x);
        }
        Op::Sub(a, b) => {
            acc_map(nodes, grads, *a, g, |_, x| x);
            acc_map(nodes, grads, *b, g, |_, x| -x);
        }
        Op::AddRow(a, row) => {
            acc_map(nodes, grads, *a, g, |_, x| x);
            if let Some(buf) = slot(nodes, grads, *row) {
                let cols = g.cols();
                let bd = buf.data_mut();
                for r in 0..g.rows() {
                    for (b, &x) in bd.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                        *b += x;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            acc_map(nodes, grads, *a, g, |j, x| x * bv[j]);
            acc_map(nodes, grads, *b, g, |j, x| x * av[j]);
        }
        Op::MulCol(a, col) => {
            let av = &nodes[a.0].value;
            let cv = nodes[col.0].value.data();
            let cols = av.cols();
            acc_map(nodes, grads, *a, g, |j, x| x * cv[j / cols]);
            if let Some(buf) = slot(nodes, grads, *col) {
                let bd = buf.data_mut();
                for (j, (&x, &y)) in g.data().iter().zip(av.data()).enumerate() {
                    bd[j / cols] += x * y;
                }
            }
        }
        Op::Scale(a, c) => {
            let c = *c;
            acc_map(nodes, grads, *a, g, |_, x| x * c);
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            acc_map(nodes, grads, *a, g, |j, x| x * y[j] * (T::one() - y[j]));
        }
        Op::Tanh(a) => {
            let y = out.data();
            acc_map(nodes, grads, *a, g, |j, x| x * (T::one() - y[j] * y[j]));
        }
        Op::Relu(a) => {
            let xin = nodes[a.0].value.data();
            acc_map(nodes, grads, *a, g, |j, x| {
                if xin[j] > T::zero() {
                    x
                } else {
                    T::zero()
                }
            });
        }
        Op::Exp(a) => {
            let y = out.data();
            acc_map(nodes, grads, *a, g, |j, x| x * y[j]);
        }
        Op::Log(a) => {
            let xin = nodes[a.0].value.data();
            acc_map(nodes, grads, *a, g, |j, x| x / xin[j]);
        }
        Op::Softplus(a) => {
            let xin = nodes[a.0].value.data();
            acc_map(nodes, grads, *a, g, |j, x| {
                x / (T::one() + (-xin[j]).exp())
            });
        }
        Op::Softmax(a) => {
            if let Some(buf) = slot(nodes, grads, *a) {
                let cols = out.cols();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: T = y.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                    for (c, b) in buf.row_mut(r).iter_mut().enumerate() {
                        *b += y[c] * (gr[c] - dot);
                    }
                    debug_assert_eq!(cols, y.len());
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = g.cols();
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].value.cols();
                if let Some(buf) = slot(nodes, grads, *p) {
                    for r in 0..g.rows() {
                        let src = &g.data()[r * total + offset..r * total + offset + w];
                        for (b, &x) in buf.row_mut(r).iter_mut().zip(src) {
                            *b += x;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::SliceCols(a, start) => {
            let w = g.cols();
            if let Some(buf) = slot(nodes, grads, *a) {
                for r in 0..g.rows() {
                    let dst = &mut buf.row_mut(r)[*start..*start + w];
                    for (b, &x) in dst.iter_mut().zip(g.row(r)) {
                        *b += x;
                    }
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = nodes[p.0].value.len();
                acc_map(nodes, grads, *p, g, |j, _| g.data()[offset + j]);
                offset += n;
            }
        }
        Op::GatherRows(a, idx) => {
            if let Some(buf) = slot(nodes, grads, *a) {
                for (r, &src) in idx.iter().enumerate() {
                    for (b, &x) in buf.row_mut(src).iter_mut().zip(g.row(r)) {
                        *b += x;
                    }
                }
            }
        }
        Op::Expand(a) => {
            if let Some(buf) = slot(nodes, grads, *a) {
                for r in 0..g.rows() {
                    let s: T = g.row(r).iter().copied().sum();
                    buf.data_mut()[r] += s;
                }
            }
        }
        Op::Sum(a) => {
            let s = g.item();
            if let Some(buf) = slot(nodes, grads, *a) {
                buf.data_mut().iter_mut().for_each(|b| *b += s);
            }
        }
        Op::Mean(a) => {
            if let Some(buf) = slot(nodes, grads, *a) {
                let s = g.item() / T::of(buf.len() as f64);
                buf.data_mut().iter_mut().for_each(|b| *b += s);
            }
        }
        Op::Dropout(a, mask) => {
            acc_map(nodes, grads, *a, g, |j, x| x * mask[j]);
        }
        Op::CausalShift {
            x,
            batch,
            len,
            shift,
        } => {
            if let Some(buf) = slot(nodes, grads, *x) {
                for b in 0..*batch {
                    for t in *shift..*len {
                        let src = b * len + t;
                        let dst = b * len + t - shift;
                        for (d, &v) in buf.row_mut(dst).iter_mut().zip(g.row(src)) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = g.cols();
            let gv = nodes[gain.0].value.data();
            if let Some(buf) = slot(nodes, grads, *gain) {
                let bd = buf.data_mut();
                for (j, &gj) in g.data().iter().enumerate() {
                    bd[j % d] += gj * xhat[j];
                }
            }
            if let Some(buf) = slot(nodes, grads, *bias) {
                let bd = buf.data_mut();
                for (j, &gj) in g.data().iter().enumerate() {
                    bd[j % d] += gj;
                }
            }
            if let Some(buf) = slot(nodes, grads, *x) {
                let dn = T::of(d as f64);
                let mut dxhat = vec![T::zero(); d];
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for c in 0..d {
                        dxhat[c] = gr[c] * gv[c];
                        s1 += dxhat[c];
                        s2 += dxhat[c] * xr[c];
                    }
                    let scale = rstd[r] / dn;
                    for (c, b) in buf.row_mut(r).iter_mut().enumerate() {
                        *b += scale * (dn * dxhat[c] - s1 - xr[c] * s2);
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            shape,
            probs,
        } => nn::attention_backward(nodes, grads, g, *q, *k, *v, shape, probs),
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
            count,
        } => {
            if *count == T::zero() {
                return;
            }
            let s = g.item() / *count;
            if let Some(buf) = slot(nodes, grads, *logits) {
                let v = buf.cols();
                for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    if m == T::zero() {
                        continue;
                    }
                    let w = s * m;
                    let row = buf.row_mut(r);
                    for c in 0..v {
                        row[c] += w * probs[r * v + c];
                    }
                    row[t] -= w;
                }
            }
        }
        Op::Mse {
            pred,
            target,
            mask,
            count,
        } => {
            if *count == T::zero() {
                return;
            }
            let s = g.item() * T::of(2.0) / *count;
            let pv = nodes[pred.0].value.data();
            acc_map(nodes, grads, *pred, &nodes[pred.0].value, |j, _| {
                s * mask[j] * (pv[j] - target[j])
            });
        }
    }
}
