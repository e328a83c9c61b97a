//! Marginals of latent cells and fixed effects.

use alloc::vec;
use alloc::vec::Vec;

use super::{ModeResult, Problem};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;

/// Per-cell `(mean, sd)` of the Gaussian approximation, latent cells only.
pub fn latent_marginals_gaussian(mode: &ModeResult) -> Vec<(f64, f64)> {
    let diag = mode.factor.selected_inverse().diagonal();
    mode.x_star
        .values
        .iter()
        .zip(&diag)
        .map(|(&m, &v)| (m, libm::sqrt(v)))
        .collect()
}

/// Refined marginal of one latent coordinate over a value grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedMarginal {
    pub values: Vec<f64>,
    /// Unnormalised log density at each value.
    pub log_density: Vec<f64>,
    /// Density normalised by the trapezoid rule over `values`.
    pub density: Vec<f64>,
}

impl NestedMarginal {
    /// Trapezoid-rule moment `∫ (x − c)^k p(x) dx`.
    pub fn moment(&self, k: i32, c: f64) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.values.len() {
            let (a, b) = (self.values[i - 1], self.values[i]);
            let fa = self.density[i - 1] * libm::pow(a - c, k as f64);
            let fb = self.density[i] * libm::pow(b - c, k as f64);
            acc += 0.5 * (b - a) * (fa + fb);
        }
        acc
    }
}

/// Laplace approximation of the marginal of coordinate `index` of the
/// augmented latent vector: for each value the remaining coordinates are
/// re-maximised and the log density is
/// `log π(Y | v) − ½ vᵀQ v − ½ log|Q*₋ᵢ|` at the conditional mode.
pub fn latent_marginal_nested(problem: &Problem, h: &HyperParams, index: usize, values: &[f64]) -> Result<NestedMarginal> {
    let n = problem.n_aug();
    if index >= n {
        return Err(Error::IndexOutOfRange { index, len: n });
    }
    if values.len() < 2 || values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig("value grid must be strictly increasing with at least two points".into()));
    }
    let base = problem.gaussian_approx(h, None)?;
    let exc = problem.excitation(h);
    let mut warm = base.v.clone();
    let mut log_density = Vec::with_capacity(values.len());
    for &a in values {
        let m = problem.mode_with_prior(h, base.q.clone(), base.log_det_q, Some(&warm), Some((index, a)))?;
        if !m.converged {
            return Err(Error::NonConvergence {
                iterations: m.iterations,
                trace: vec![vec![a]],
            });
        }
        let lp = problem.data_loglik(&m.lambda, &exc) - 0.5 * m.q.quad_form(&m.v) - 0.5 * m.log_det_q_star;
        log_density.push(lp);
        warm = m.v;
    }
    let top = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_density.iter().map(|l| libm::exp(l - top)).collect();
    let mut z = 0.0;
    for i in 1..values.len() {
        z += 0.5 * (values[i] - values[i - 1]) * (raw[i - 1] + raw[i]);
    }
    Ok(NestedMarginal {
        values: values.to_vec(),
        log_density,
        density: raw.iter().map(|r| r / z).collect(),
    })
}

/// `β̂ ± 1.96·sd` for fixed effect `index` from the augmented Gaussian
/// approximation at `h`.
pub fn fixed_effect_interval(problem: &Problem, h: &HyperParams, index: usize) -> Result<(f64, f64)> {
    if index >= problem.n_fixed() {
        return Err(Error::IndexOutOfRange {
            index,
            len: problem.n_fixed(),
        });
    }
    let mode = problem.gaussian_approx(h, None)?;
    Ok(fixed_effect_interval_at(problem, &mode, index))
}

/// As [`fixed_effect_interval`] for an existing mode.
pub fn fixed_effect_interval_at(problem: &Problem, mode: &ModeResult, index: usize) -> (f64, f64) {
    let k = problem.n_cells() + index;
    let mut e = vec![0.0; problem.n_aug()];
    e[k] = 1.0;
    let var = mode.factor.solve(&e)[k];
    let sd = libm::sqrt(var);
    let m = mode.v[k];
    (m - 1.959963984540054 * sd, m + 1.959963984540054 * sd)
}
