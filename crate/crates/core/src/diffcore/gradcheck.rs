//! Central finite-difference gradient checks.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over entries whose analytic magnitude is at least `small`.
    pub max_rel: f64,
    /// Largest absolute error over entries whose analytic magnitude is below `small`.
    pub max_abs_small: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel <= rel_tol && self.max_abs_small <= abs_tol
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Analytic magnitude below which the absolute criterion applies.
pub const SMALL_GRAD: f64 = 1e-4;

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar output".into()));
    }
    Ok(v.item())
}

/// Compare reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `h`, for every input entry.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut report = GradCheck {
        max_rel: 0.0,
        max_abs_small: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            work[k].data_mut()[j] = x0 + h;
            let fp = eval(&f, &work)?;
            work[k].data_mut()[j] = x0 - h;
            let fm = eval(&f, &work)?;
            work[k].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs();
            if a.abs() < SMALL_GRAD {
                report.max_abs_small = report.max_abs_small.max(err);
            } else {
                report.max_rel = report.max_rel.max(err / a.abs().max(numeric.abs()));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Finite-difference check of the gradient of `f` with respect to every
/// trainable entry of `store`. `f` builds a fresh graph from the store it is
/// given and returns it with its scalar output.
pub fn check_param_gradients<F>(store: &ParamStore, f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    let (g, out) = f(store)?;
    let grads = g.backward(out)?;
    let mut report = GradCheck {
        max_rel: 0.0,
        max_abs_small: 0.0,
        checked: 0,
    };
    let mut work = store.clone();
    let scalar = |s: &ParamStore| -> Result<f64> {
        let (g, out) = f(s)?;
        Ok(g.value(out).item())
    };
    for id in store.trainable_ids() {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for j in 0..store.get(id).len() {
            let x0 = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = x0 + h;
            let fp = scalar(&work)?;
            work.get_mut(id).data_mut()[j] = x0 - h;
            let fm = scalar(&work)?;
            work.get_mut(id).data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs();
            if a.abs() < SMALL_GRAD {
                report.max_abs_small = report.max_abs_small.max(err);
            } else {
                report.max_rel = report.max_rel.max(err / a.abs().max(numeric.abs()));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
