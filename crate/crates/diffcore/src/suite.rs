//! Finite-difference checks of every differentiable op on fixed random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{check_inputs, GradCheckReport};
use crate::{causal_conv1d, gumbel_softmax_with_noise, AttentionShape, Graph, Result, Tensor, Var};

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: String,
    pub report: std::result::Result<GradCheckReport, String>,
}

impl OpCheck {
    pub fn passed(&self, tol: f64) -> bool {
        matches!(&self.report, Ok(r) if r.checked > 0 && r.max_rel_error <= tol)
    }
}

struct Recorder {
    step: f64,
    out: Vec<OpCheck>,
}

impl Recorder {
    fn check<F>(&mut self, name: &str, inputs: &[Tensor<f64>], f: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        self.out.push(OpCheck {
            name: name.to_string(),
            report: check_inputs(inputs, self.step, f).map_err(|e| e.to_string()),
        });
    }
}

/// Runs every op check with central differences of size `step` (64-bit).
pub fn op_suite(step: f64) -> Result<Vec<OpCheck>> {
    let mut rec = Recorder {
        step,
        out: Vec::new(),
    };
    gradients_of_binary_ops(&mut rec)?;
    gradients_of_unary_ops(&mut rec)?;
    gradients_of_structural_ops(&mut rec)?;
    gradients_of_layer_ops(&mut rec)?;
    gradients_of_attention(&mut rec)?;
    gradients_of_losses(&mut rec)?;
    gradient_of_gumbel_softmax(&mut rec)?;
    random_graphs(&mut rec)?;
    Ok(rec.out)
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Reduces `v` to a scalar through a fixed random projection so that every
/// output element receives a distinct upstream gradient.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(rand_tensor(&mut rng, r, c, -1.0, 1.0));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn gradients_of_binary_ops(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 4, 2, -1.0, 1.0);
    let c = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let row = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
    let col = rand_tensor(&mut rng, 3, 1, -1.0, 1.0);
    rec.check("matmul", &[a.clone(), b], |g, x| {
        let y = g.matmul(x[0], x[1])?;
        project(g, y, 9)
    });
    rec.check("add", &[a.clone(), c.clone()], |g, x| {
        let y = g.add(x[0], x[1])?;
        project(g, y, 9)
    });
    rec.check("sub", &[a.clone(), c.clone()], |g, x| {
        let y = g.sub(x[0], x[1])?;
        project(g, y, 9)
    });
    rec.check("mul", &[a.clone(), c.clone()], |g, x| {
        let y = g.mul(x[0], x[1])?;
        project(g, y, 9)
    });
    rec.check("mul self", &[a.clone()], |g, x| {
        let y = g.mul(x[0], x[0])?;
        project(g, y, 9)
    });
    rec.check("add_row", &[a.clone(), row], |g, x| {
        let y = g.add_row(x[0], x[1])?;
        project(g, y, 9)
    });
    rec.check("mul_col", &[a, col], |g, x| {
        let y = g.mul_col(x[0], x[1])?;
        project(g, y, 9)
    });
    Ok(())
}

fn gradients_of_unary_ops(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, 3, 5, -2.0, 2.0);
    let pos = rand_tensor(&mut rng, 3, 5, 0.2, 3.0);
    // keep relu inputs away from the kink
    let kinkless = a.map(|x| if x.abs() < 0.05 { 0.3 } else { x });
    type UnaryFn = fn(&mut Graph<f64>, Var) -> Var;
    let cases: Vec<(&str, UnaryFn, &Tensor<f64>)> = vec![
        ("sigmoid", |g, x| g.sigmoid(x), &a),
        ("tanh", |g, x| g.tanh(x), &a),
        ("relu", |g, x| g.relu(x), &kinkless),
        ("exp", |g, x| g.exp(x), &a),
        ("log", |g, x| g.log(x), &pos),
        ("softplus", |g, x| g.softplus(x), &a),
        ("softmax", |g, x| g.softmax(x), &a),
        ("scale", |g, x| g.scale(x, -1.7), &a),
    ];
    for (name, op, input) in cases {
        rec.check(name, &[input.clone()], move |g, x| {
            let y = op(g, x[0]);
            project(g, y, 4)
        });
    }
    rec.check("sum", &[a.clone()], |g, x| {
        let s = g.sum(x[0]);
        let t = g.mul(s, s)?;
        Ok(t)
    });
    rec.check("mean", &[a], |g, x| {
        let s = g.mean(x[0]);
        let t = g.tanh(s);
        Ok(t)
    });
    Ok(())
}

fn gradients_of_structural_ops(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 4, 2, -1.0, 1.0);
    let c = rand_tensor(&mut rng, 2, 3, -1.0, 1.0);
    let t = rand_tensor(&mut rng, 4, 1, -1.0, 1.0);
    rec.check("concat_cols", &[a.clone(), b], |g, x| {
        let y = g.concat_cols(&[x[0], x[1], x[0]])?;
        project(g, y, 5)
    });
    rec.check("slice_cols", &[a.clone()], |g, x| {
        let y = g.slice_cols(x[0], 1, 3)?;
        project(g, y, 5)
    });
    rec.check("concat_rows", &[a.clone(), c], |g, x| {
        let y = g.concat_rows(&[x[1], x[0]])?;
        project(g, y, 5)
    });
    rec.check("gather_rows", &[a.clone()], |g, x| {
        let y = g.gather_rows(x[0], &[3, 0, 3, 1])?;
        project(g, y, 5)
    });
    rec.check("expand", &[t], |g, x| {
        let y = g.expand(x[0], 6)?;
        project(g, y, 5)
    });
    rec.check("causal_shift", &[a], |g, x| {
        let y = g.causal_shift(x[0], 2, 2, 1)?;
        project(g, y, 5)
    });
    Ok(())
}

fn gradients_of_layer_ops(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, 5, 6, -1.0, 1.0);
    let gain = rand_tensor(&mut rng, 1, 6, 0.5, 1.5);
    let bias = rand_tensor(&mut rng, 1, 6, -0.5, 0.5);
    rec.check("layer_norm", &[x.clone(), gain, bias], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2])?;
        project(g, y, 6)
    });

    rec.check("dropout", &[x.clone()], |g, v| {
        let mut r = ChaCha8Rng::seed_from_u64(77);
        let y = g.dropout(v[0], 0.3, &mut r);
        project(g, y, 6)
    });

    let seq = rand_tensor(&mut rng, 2 * 5, 3, -1.0, 1.0);
    let w0 = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let cb = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
    rec.check("causal_conv1d", &[seq, w0, w1, cb], |g, v| {
        let y = causal_conv1d(g, v[0], &[v[1], v[2]], v[3], 2, 5, 2)?;
        project(g, y, 6)
    });
    Ok(())
}

fn causal_mask(batch: usize, n: usize) -> Tensor<f64> {
    Tensor::from_fn(batch * n, n, |r, c| {
        if c > r % n {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    })
}

fn gradients_of_attention(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = AttentionShape {
        batch: 2,
        q_len: 3,
        k_len: 4,
        heads: 2,
    };
    let q = rand_tensor(&mut rng, 6, 4, -1.0, 1.0);
    let k = rand_tensor(&mut rng, 8, 4, -1.0, 1.0);
    let v = rand_tensor(&mut rng, 8, 4, -1.0, 1.0);
    // second sequence has a padded last key
    let mask = Tensor::from_fn(6, 4, |r, c| {
        if r >= 3 && c == 3 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    });
    rec.check("cross attention", &[q, k, v], |g, x| {
        let y = g.attention(x[0], x[1], x[2], &mask, shape)?;
        project(g, y, 8)
    });

    let x = rand_tensor(&mut rng, 6, 4, -1.0, 1.0);
    let shape = AttentionShape {
        batch: 2,
        q_len: 3,
        k_len: 3,
        heads: 2,
    };
    let mask = causal_mask(2, 3);
    rec.check("causal self attention", &[x], |g, x| {
        let y = g.attention(x[0], x[0], x[0], &mask, shape)?;
        project(g, y, 8)
    });
    Ok(())
}

fn gradients_of_losses(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = rand_tensor(&mut rng, 5, 4, -2.0, 2.0);
    let targets = [0usize, 3, 2, 2, 1];
    let mask = [1.0, 0.0, 1.0, 1.0, 0.0];
    rec.check("cross_entropy_masked", &[logits], |g, x| {
        g.cross_entropy_masked(x[0], &targets, &mask)
    });
    let pred = rand_tensor(&mut rng, 5, 1, -1.0, 1.0);
    let target = [0.1, 0.5, -0.2, 0.9, 0.0];
    rec.check("mse_masked", &[pred], |g, x| g.mse_masked(x[0], &target, &mask));
    Ok(())
}

fn gradient_of_gumbel_softmax(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = rand_tensor(&mut rng, 3, 5, -1.0, 1.0);
    let noise = rand_tensor(&mut rng, 3, 5, -0.5, 2.0);
    rec.check("gumbel_softmax", &[logits], |g, x| {
        let y = gumbel_softmax_with_noise(g, x[0], 1.0, noise.clone())?;
        project(g, y, 10)
    });
    Ok(())
}

fn random_graphs(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..5 {
        let a = rand_tensor(&mut rng, 3, 3, -1.0, 1.0);
        let b = rand_tensor(&mut rng, 3, 3, -1.0, 1.0);
        rec.check("random graph", &[a, b], |g, x| {
            let m = g.matmul(x[0], x[1])?;
            let t = g.tanh(m);
            let s = g.sigmoid(x[0]);
            let p = g.mul(t, s)?;
            let sm = g.softmax(p);
            project(g, sm, trial)
        });
    }
    Ok(())
}

