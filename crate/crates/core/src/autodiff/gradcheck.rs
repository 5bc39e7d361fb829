//! Central finite-difference gradient checking.
//!
//! Only forward values are used to build the numeric estimate, so the check is
//! independent of the reverse sweep it validates.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Absolute floor of the relative-error denominator. Central differences at
/// step 1e-6 carry rounding noise near 1e-9 for O(1) losses, so entries below
/// the floor are effectively compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of `build` with respect to every entry of
/// `params` against central differences with step `step`.
///
/// `build` receives the graph and one leaf per parameter and must return a
/// scalar loss. It is re-run for every perturbed entry, so it must be
/// deterministic.
pub fn check_gradients<F>(params: &[Tensor], step: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = params.to_vec();
    for (p, tensor) in params.iter().enumerate() {
        for e in 0..tensor.len() {
            let orig = tensor.data()[e];
            work[p].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[p].data()[e];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
