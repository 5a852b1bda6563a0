//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values on fresh graphs, so it stays
//! independent of the reverse pass it is checking.

use super::{Graph, Result, Tensor, Var};
use crate::params::ParamStore;

/// Denominator floor for the relative error, so near-zero gradients are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the scalar `f(inputs)` with respect to
/// every input element against central differences with the given `step`.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
        Ok(f(&g, &vars)?.value().data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            report.max_rel_err = report.max_rel_err.max(rel_err(a, numeric));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Like [`check`], additionally perturbing every element of every parameter in
/// `store`. All parameters are treated as trainable for the analytic pass.
pub fn check_with_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let mut store = store.clone();
    store.set_all_trainable(true);
    store.zero_grads();

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &store, &vars)?;
    let grads = g.backward(out)?;
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let param_grads: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            grads
                .param(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.value(id).len()])
        })
        .collect();
    drop(grads);
    drop(g);

    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
        Ok(f(&g, store, &vars)?.value().data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut record = |a: f64, numeric: f64| {
        report.max_rel_err = report.max_rel_err.max(rel_err(a, numeric));
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        report.checked += 1;
    };

    let mut work = inputs.to_vec();
    for k in 0..work.len() {
        for i in 0..work[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&store, &work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&store, &work)?;
            work[k].data_mut()[i] = orig;
            record(input_grads[k].data()[i], (plus - minus) / (2.0 * step));
        }
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&store, &work)?;
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&store, &work)?;
            store.value_mut(id).data_mut()[i] = orig;
            record(param_grads[id.index()][i], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
