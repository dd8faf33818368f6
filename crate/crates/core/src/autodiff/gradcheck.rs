//! Central-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// every entry of every parameter.
///
/// Relative error uses the denominator `max(|a|, |b|, 1e-8)`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::param(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut work = params.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&work, &mut tape)?;
    check_finite(tape.scalar(loss)?)?;
    tape.backward(loss, &mut work)?;
    let analytic: Vec<(String, Vec<f64>)> = work
        .iter()
        .map(|(name, p)| (name.to_string(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = loss_fn(store, &mut tape)?;
        check_finite(tape.scalar(v)?)
    };
    for (name, grad) in &analytic {
        for (k, &a) in grad.iter().enumerate() {
            let orig = work.get(name)?.data()[k];
            work.value_mut(name)?.data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.value_mut(name)?.data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.value_mut(name)?.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(a, numeric);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((name.clone(), k));
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("loss evaluated to {v}")))
    }
}
