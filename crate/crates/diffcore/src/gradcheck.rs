//! Central finite-difference gradient checking in 64-bit precision.

use crate::{Graph, ParamStore, Result, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Which tensor / element produced the largest error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that gradients that are
/// zero up to roundoff do not divide by ~0.
pub const REL_FLOOR: f64 = 1e-6;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

impl GradCheckReport {
    fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = e;
            self.worst = Some((label.to_string(), idx));
        }
    }
}

/// Checks d(loss)/d(input) for free input tensors.
///
/// `f` must be deterministic: it is re-run for every perturbation.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(true);
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new(true);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()))
        })
        .collect();

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[t].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            report.record(&format!("input{t}"), i, grad.data()[i], numeric);
        }
    }
    Ok(report)
}

/// Checks d(loss)/d(parameter) for every parameter in `store`.
///
/// At most `max_per_param` evenly spaced elements are probed per parameter
/// (`None` probes all of them).
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    step: f64,
    max_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new(true);
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    g.accumulate_param_grads(store);
    let analytic: Vec<Tensor<f64>> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grads();

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(true);
        let loss = f(&mut g, s)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = (0..store.len()).map(crate::ParamId).collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let n = grad.len();
        let stride = match max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let name = store.get(id).name.clone();
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            report.record(&name, i, grad.data()[i], numeric);
        }
    }
    Ok(report)
}
