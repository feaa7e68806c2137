//! Time2Vec features for normalized visit times and the functional time
//! encoding that turns an edge's visit index into a scalar time factor.
//!
//! Each encoder has a plain evaluation over slices and a tape evaluation
//! used inside the model; the two agree exactly on the same parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Tensor, Var};

/// Per-patient min-max scaling to `[0, 1]`; zero-span histories map to 0.
pub fn normalize_visit_times(times: &[f64]) -> Vec<f64> {
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; times.len()];
    }
    times.iter().map(|&t| ((t - lo) / span).clamp(0.0, 1.0)).collect()
}

/// `[ω_i t + φ_i]` for the first `d_linear` entries, `sin(ω_i t + φ_i)` after.
pub fn time2vec(t: f64, omega: &[f64], phi: &[f64], d_linear: usize) -> Vec<f64> {
    omega
        .iter()
        .zip(phi)
        .enumerate()
        .map(|(i, (w, p))| {
            let z = w * t + p;
            if i < d_linear {
                z
            } else {
                z.sin()
            }
        })
        .collect()
}

/// `√(1/d) · [cos ω_1 t, sin ω_1 t, ..., cos ω_d t, sin ω_d t]`.
pub fn functional_time_encode(t: f64, omega: &[f64]) -> Vec<f64> {
    let s = (1.0 / omega.len() as f64).sqrt();
    omega.iter().flat_map(|w| [s * (w * t).cos(), s * (w * t).sin()]).collect()
}

/// Linear projection of the functional encoding to a scalar; no activation.
pub fn time_factor(t: f64, omega: &[f64], weight: &[f64], bias: f64) -> f64 {
    functional_time_encode(t, omega)
        .iter()
        .zip(weight)
        .map(|(x, w)| x * w)
        .sum::<f64>()
        + bias
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Time2VecDims {
    pub d_linear: usize,
    pub d_periodic: usize,
}

impl Time2VecDims {
    /// Even split, the linear half rounded down.
    pub fn split(total: usize) -> Result<Time2VecDims> {
        let dims = Time2VecDims {
            d_linear: total / 2,
            d_periodic: total - total / 2,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn total(&self) -> usize {
        self.d_linear + self.d_periodic
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Config("Time2Vec needs at least one output dimension".into()));
        }
        Ok(())
    }
}

/// Parameter names used by [`Time2Vec`] under a prefix.
#[derive(Debug, Clone)]
pub struct Time2Vec {
    pub dims: Time2VecDims,
    omega: String,
    phi: String,
}

impl Time2Vec {
    pub fn new(prefix: &str, dims: Time2VecDims) -> Result<Time2Vec> {
        dims.validate()?;
        Ok(Time2Vec {
            dims,
            omega: format!("{prefix}.omega"),
            phi: format!("{prefix}.phi"),
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let n = self.dims.total();
        store.insert(&self.omega, Tensor::uniform(1, n, 1.0, rng))?;
        store.insert(&self.phi, Tensor::uniform(1, n, 1.0, rng))?;
        Ok(())
    }

    pub fn eval(&self, store: &ParamStore, t: f64) -> Result<Vec<f64>> {
        let get = |n: &str| store.get(n).ok_or_else(|| Error::Argument(format!("missing parameter {n:?}")));
        Ok(time2vec(t, get(&self.omega)?.data(), get(&self.phi)?.data(), self.dims.d_linear))
    }

    /// `times` is a `T × 1` column; the result is `T × total`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, times: Var) -> Result<Var> {
        let omega = tape.param(store, &self.omega)?;
        let phi = tape.param(store, &self.phi)?;
        let z = tape.matmul(times, omega)?;
        let z = tape.add_row(z, phi)?;
        let n = self.dims.total();
        let dl = self.dims.d_linear;
        if dl == n {
            return Ok(z);
        }
        let periodic = tape.slice_cols(z, dl, n)?;
        let periodic = tape.sin(periodic)?;
        if dl == 0 {
            return Ok(periodic);
        }
        let linear = tape.slice_cols(z, 0, dl)?;
        tape.concat_cols(&[linear, periodic])
    }
}

/// Functional time encoding of dimension `2d` followed by a linear map to
/// a scalar time factor.
#[derive(Debug, Clone)]
pub struct TimeFactor {
    pub d: usize,
    omega: String,
    weight: String,
    bias: String,
}

impl TimeFactor {
    pub fn new(prefix: &str, d: usize) -> Result<TimeFactor> {
        if d == 0 {
            return Err(Error::Config("functional time encoding needs d >= 1".into()));
        }
        Ok(TimeFactor {
            d,
            omega: format!("{prefix}.omega"),
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
        })
    }

    /// Frequencies start geometric in `[1, 0.01)`, the projection small, and
    /// the bias at 1 so initial factors sit near 1.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let d = self.d;
        let omega = (0..d).map(|i| 10f64.powf(-2.0 * i as f64 / d as f64)).collect();
        store.insert(&self.omega, Tensor::row(omega))?;
        let bound = 1.0 / ((2 * d) as f64).sqrt();
        store.insert(&self.weight, Tensor::uniform(2 * d, 1, bound, rng))?;
        store.insert(&self.bias, Tensor::scalar(1.0))?;
        Ok(())
    }

    pub fn eval(&self, store: &ParamStore, t: f64) -> Result<f64> {
        let get = |n: &str| store.get(n).ok_or_else(|| Error::Argument(format!("missing parameter {n:?}")));
        Ok(time_factor(t, get(&self.omega)?.data(), get(&self.weight)?.data(), get(&self.bias)?.item()))
    }

    /// `indices` is an `n × 1` column of visit indices; the result is `n × 1`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, indices: Var) -> Result<Var> {
        let omega = tape.param(store, &self.omega)?;
        let weight = tape.param(store, &self.weight)?;
        let bias = tape.param(store, &self.bias)?;
        let even: Vec<usize> = (0..self.d).map(|i| 2 * i).collect();
        let odd: Vec<usize> = (0..self.d).map(|i| 2 * i + 1).collect();
        let w_cos = tape.gather_rows(weight, &even)?;
        let w_sin = tape.gather_rows(weight, &odd)?;
        let z = tape.matmul(indices, omega)?;
        let c = tape.cos(z)?;
        let s = tape.sin(z)?;
        let c = tape.matmul(c, w_cos)?;
        let s = tape.matmul(s, w_sin)?;
        let sum = tape.add(c, s)?;
        let sum = tape.scale(sum, (1.0 / self.d as f64).sqrt())?;
        let n = tape.shape(indices).0;
        let ones = tape.constant(Tensor::filled(n, 1, 1.0));
        let b = tape.mul_scalar(ones, bias)?;
        tape.add(sum, b)
    }
}
