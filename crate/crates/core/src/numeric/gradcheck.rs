//! Central finite-difference checks of analytic gradients.

use serde::Serialize;

use super::params::{GradMap, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is zero are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-6,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    /// Names of parameters exceeding the tolerance.
    pub fn failing(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| !(p.max_rel_error < self.tolerance))
            .map(|p| p.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients with central differences of `loss`.
pub fn check_against<F>(params: &ParamStore, analytic: &GradMap, opts: GradCheckOptions, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let first = loss(params)?;
    let second = loss(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Check(format!(
            "loss is not deterministic: {first:e} then {second:e}"
        )));
    }
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for (name, value) in params.iter() {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Check(format!("no analytic gradient for {name:?}")))?;
        if grad.shape() != value.shape() {
            return Err(Error::Check(format!("gradient shape mismatch for {name:?}")));
        }
        let mut pc = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            entries: value.numel(),
        };
        for i in 0..value.numel() {
            let orig = value.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig + opts.step;
            let plus = loss(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig - opts.step;
            let minus = loss(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[i];
            let err = relative_error(a, numeric, opts.floor);
            if !(err <= pc.max_rel_error) {
                pc.max_rel_error = err;
                pc.worst_index = i;
                pc.analytic = a;
                pc.numeric = numeric;
            }
        }
        out.push(pc);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params: out,
    })
}

/// `f` returns the loss and its analytic gradients at the given parameters.
pub fn finite_difference_check<F>(params: &ParamStore, opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, GradMap)>,
{
    let (_, analytic) = f(params)?;
    check_against(params, &analytic, opts, |p| f(p).map(|(l, _)| l))
}
