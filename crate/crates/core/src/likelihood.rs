//! The self-exciting Poisson data model
//! `Y(s,t) ~ Pois(exp(λ(s,t)) + η·Y(s,t−1))` with `λ = β₀ + Zᵀβ + X(s,t)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::process::LatentField;

/// Linear predictors above this value are clamped inside `exp`.
pub const EXP_CLAMP: f64 = 50.0;

static EXP_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a linear predictor has been clamped since start-up.
pub fn exp_clamp_count() -> u64 {
    EXP_CLAMPS.load(Ordering::Relaxed)
}

#[inline]
fn guarded_exp(x: f64) -> f64 {
    if x > EXP_CLAMP {
        EXP_CLAMPS.fetch_add(1, Ordering::Relaxed);
        libm::exp(EXP_CLAMP)
    } else {
        libm::exp(x)
    }
}

/// Static per-site covariates, stored row-major (`n_sites x names.len()`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Covariates {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl Covariates {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, site: usize) -> &[f64] {
        let k = self.width();
        &self.values[site * k..(site + 1) * k]
    }
}

/// Counts `Y(s, t)` stored at `t * n_sites + s`, plus site covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    pub n_sites: usize,
    pub n_time: usize,
    pub counts: Vec<u64>,
    pub covariates: Covariates,
}

impl ObservationPanel {
    pub fn new(n_sites: usize, n_time: usize, counts: Vec<u64>, covariates: Covariates) -> Result<Self> {
        if n_sites == 0 || n_time == 0 {
            return Err(Error::DimensionMismatch("panel must have sites and times".into()));
        }
        if counts.len() != n_sites * n_time {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for {n_sites} sites x {n_time} times",
                counts.len()
            )));
        }
        if covariates.values.len() != n_sites * covariates.width() {
            return Err(Error::DimensionMismatch(format!(
                "covariate table has {} values, expected {} sites x {} columns",
                covariates.values.len(),
                n_sites,
                covariates.width()
            )));
        }
        Ok(Self {
            n_sites,
            n_time,
            counts,
            covariates,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_sites * self.n_time
    }

    pub fn count(&self, site: usize, time: usize) -> u64 {
        self.counts[time * self.n_sites + site]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Convention for the count preceding the first observed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialCounts {
    /// `Y(s, 0) = 0`.
    #[default]
    Zero,
    /// Condition on the first observed column: it feeds the excitation of
    /// the second column and contributes no likelihood term itself.
    ConditionOnFirst,
}

/// Lag-one self-excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation {
    pub eta: f64,
    pub initial: InitialCounts,
}

impl Excitation {
    pub fn none() -> Self {
        Self {
            eta: 0.0,
            initial: InitialCounts::Zero,
        }
    }

    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            initial: InitialCounts::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta.is_finite() && (0.0..1.0).contains(&self.eta) {
            Ok(())
        } else {
            Err(Error::ParameterSpace {
                name: "eta",
                value: self.eta,
                lower: 0.0,
                upper: 1.0,
            })
        }
    }

    /// Whether cell `(s, t)` carries a likelihood term.
    pub fn is_active(&self, time: usize) -> bool {
        !(time == 0 && self.initial == InitialCounts::ConditionOnFirst)
    }

    /// Count feeding the excitation of `(s, t)`.
    pub fn previous(&self, panel: &ObservationPanel, site: usize, time: usize) -> u64 {
        if time == 0 {
            0
        } else {
            panel.count(site, time - 1)
        }
    }
}

/// Fixed-effect coefficients: intercept first (when present), then one per
/// covariate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixedEffects {
    pub beta: Vec<f64>,
}

impl FixedEffects {
    pub fn intercept(b0: f64) -> Self {
        Self { beta: vec![b0] }
    }

    /// Per-site offset `β₀ + Zᵀβ`. An intercept is assumed when there is one
    /// more coefficient than covariates.
    pub fn site_offsets(&self, cov: &Covariates, n_sites: usize) -> Result<Vec<f64>> {
        let k = cov.width();
        let with_intercept = match self.beta.len() {
            l if l == k + 1 => true,
            l if l == k => false,
            l => {
                return Err(Error::DimensionMismatch(format!(
                    "{l} fixed effects for {k} covariates"
                )))
            }
        };
        Ok((0..n_sites)
            .map(|s| {
                let (b0, slopes) = if with_intercept {
                    (self.beta[0], &self.beta[1..])
                } else {
                    (0.0, &self.beta[..])
                };
                b0 + slopes
                    .iter()
                    .zip(cov.row(s))
                    .map(|(b, z)| b * z)
                    .sum::<f64>()
            })
            .collect())
    }
}

/// `μ = exp(x) + η·y_prev`.
pub fn mean_function(x: f64, eta: f64, y_prev: u64) -> f64 {
    guarded_exp(x) + eta * y_prev as f64
}

/// `log Y!`.
pub fn log_factorial(y: u64) -> f64 {
    libm::lgamma(y as f64 + 1.0)
}

/// Poisson log mass `y log μ − μ − log y!`.
pub fn poisson_log_pmf(y: u64, mu: f64) -> f64 {
    let yf = y as f64;
    let head = if y == 0 { 0.0 } else { yf * libm::log(mu) };
    head - mu - log_factorial(y)
}

/// Log density of one cell as a function of its linear predictor.
pub fn cell_loglik(x: f64, y: u64, y_prev: u64, eta: f64) -> f64 {
    poisson_log_pmf(y, mean_function(x, eta, y_prev))
}

/// First and second derivatives of [`cell_loglik`] in `x`.
///
/// With `a = eˣ`, `e = η·y_prev`, `μ = a + e`:
/// `d1 = a (y/μ − 1)` and `d2 = y a e / μ² − a`.
pub fn loglik_derivs(x: f64, y: u64, y_prev: u64, eta: f64) -> (f64, f64) {
    let a = guarded_exp(x);
    let e = eta * y_prev as f64;
    let mu = a + e;
    let yf = y as f64;
    let d1 = a * (yf / mu - 1.0);
    let d2 = yf * a * e / (mu * mu) - a;
    (d1, d2)
}

fn check_field(panel: &ObservationPanel, field: &LatentField) -> Result<()> {
    if panel.n_sites != field.n_sites || panel.n_time != field.n_time {
        return Err(Error::DimensionMismatch(format!(
            "panel is {}x{}, latent field is {}x{}",
            panel.n_sites, panel.n_time, field.n_sites, field.n_time
        )));
    }
    Ok(())
}

/// Full data log likelihood `Σ_{s,t} log Pois(Y; μ)`.
pub fn loglik(
    panel: &ObservationPanel,
    field: &LatentField,
    fe: &FixedEffects,
    exc: &Excitation,
) -> Result<f64> {
    check_field(panel, field)?;
    let offsets = fe.site_offsets(&panel.covariates, panel.n_sites)?;
    Ok(loglik_with_offsets(panel, &field.values, &offsets, exc))
}

/// Log likelihood for linear predictors `x[c] + offsets[site(c)]`.
pub fn loglik_with_offsets(panel: &ObservationPanel, x: &[f64], offsets: &[f64], exc: &Excitation) -> f64 {
    let s = panel.n_sites;
    let mut acc = 0.0;
    for t in 0..panel.n_time {
        if !exc.is_active(t) {
            continue;
        }
        for site in 0..s {
            let c = t * s + site;
            acc += cell_loglik(
                x[c] + offsets[site],
                panel.counts[c],
                exc.previous(panel, site, t),
                exc.eta,
            );
        }
    }
    acc
}

/// Per-cell quadratic expansion `B·x − ½·c·x²` of the data log density
/// about an expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorExpansion {
    /// Expansion point in the coordinate being expanded.
    pub point: Vec<f64>,
    /// `B = d1 − x₀·d2`.
    pub b: Vec<f64>,
    /// `c = −d2` (may be negative).
    pub curvature: Vec<f64>,
}

impl TaylorExpansion {
    /// Raises every curvature entry to at least `floor`, adjusting `B` so that
    /// `B − c·x₀ = d1` still holds (the fixed point is unchanged).
    pub fn floored(mut self, floor: f64) -> Self {
        for ((b, c), &x0) in self.b.iter_mut().zip(&mut self.curvature).zip(&self.point) {
            if *c < floor {
                *b += (floor - *c) * x0;
                *c = floor;
            }
        }
        self
    }
}

/// Expansion of each cell's log density in `X(s,t)` about `mu0`, with the
/// fixed effects entering as a known offset. Inactive cells get zeros.
pub fn taylor_coefficients(
    panel: &ObservationPanel,
    fe: &FixedEffects,
    exc: &Excitation,
    mu0: &LatentField,
) -> Result<TaylorExpansion> {
    check_field(panel, mu0)?;
    let offsets = fe.site_offsets(&panel.covariates, panel.n_sites)?;
    Ok(taylor_with_offsets(panel, &mu0.values, &offsets, exc))
}

pub fn taylor_with_offsets(
    panel: &ObservationPanel,
    x0: &[f64],
    offsets: &[f64],
    exc: &Excitation,
) -> TaylorExpansion {
    let s = panel.n_sites;
    let n = panel.n_cells();
    let mut b = vec![0.0; n];
    let mut curvature = vec![0.0; n];
    for t in 0..panel.n_time {
        if !exc.is_active(t) {
            continue;
        }
        for site in 0..s {
            let c = t * s + site;
            let (d1, d2) = loglik_derivs(
                x0[c] + offsets[site],
                panel.counts[c],
                exc.previous(panel, site, t),
                exc.eta,
            );
            b[c] = d1 - x0[c] * d2;
            curvature[c] = -d2;
        }
    }
    TaylorExpansion {
        point: x0.to_vec(),
        b,
        curvature,
    }
}

/// Forward simulation, sequential in time so that excitation feeds on the
/// simulated history. `first`, when given, fixes the counts of the first
/// time block instead of simulating them.
pub fn simulate_with_offsets<R: Rng + ?Sized>(
    n_sites: usize,
    n_time: usize,
    x: &[f64],
    offsets: &[f64],
    eta: f64,
    first: Option<&[u64]>,
    rng: &mut R,
) -> Vec<u64> {
    let mut counts = vec![0u64; n_sites * n_time];
    for t in 0..n_time {
        for site in 0..n_sites {
            let c = t * n_sites + site;
            if t == 0 {
                if let Some(f) = first {
                    counts[c] = f[site];
                    continue;
                }
            }
            let prev = if t == 0 { 0 } else { counts[c - n_sites] };
            let mu = mean_function(x[c] + offsets[site], eta, prev);
            counts[c] = draw_poisson(mu, rng);
        }
    }
    counts
}

fn draw_poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    match Poisson::new(mu) {
        Ok(d) => {
            let v: f64 = d.sample(rng);
            v as u64
        }
        Err(_) => 0,
    }
}

/// Simulates a panel from a latent field, fixed effects and excitation, with
/// `Y(s, 0)` fed by a zero pre-sample count.
pub fn simulate_counts<R: Rng + ?Sized>(
    field: &LatentField,
    fe: &FixedEffects,
    exc: &Excitation,
    covariates: &Covariates,
    rng: &mut R,
) -> Result<ObservationPanel> {
    exc.validate()?;
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("latent field has non-finite values".into()));
    }
    let offsets = fe.site_offsets(covariates, field.n_sites)?;
    let counts = simulate_with_offsets(
        field.n_sites,
        field.n_time,
        &field.values,
        &offsets,
        exc.eta,
        None,
        rng,
    );
    ObservationPanel::new(field.n_sites, field.n_time, counts, covariates.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_function_examples() {
        assert_eq!(mean_function(0.0, 0.0, 7), 1.0);
        assert_eq!(mean_function(0.0, 0.5, 2), 2.0);
        let x: f64 = 0.3;
        assert!((mean_function(-1.0 + x, 0.2, 3) - (libm::exp(-0.7) + 0.6)).abs() < 1e-15);
    }

    #[test]
    fn exp_guard_counts_clamps() {
        let before = exp_clamp_count();
        let mu = mean_function(80.0, 0.0, 0);
        assert_eq!(mu, libm::exp(EXP_CLAMP));
        assert!(exp_clamp_count() > before);
    }

    #[test]
    fn pmf_examples() {
        let v = poisson_log_pmf(3, 2.0);
        assert!((v - (3.0 * libm::log(2.0) - 2.0 - libm::log(6.0))).abs() < 1e-12);
        assert_eq!(poisson_log_pmf(0, 1.0), -1.0);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(loglik_derivs(0.0, 1, 0, 0.0), (0.0, -1.0));
        let (d1, d2) = loglik_derivs(0.0, 3, 2, 0.5);
        assert!((d1 - 0.5).abs() < 1e-15 && (d2 + 0.25).abs() < 1e-15);
        let x = 1.7;
        let (d1, d2) = loglik_derivs(x, 0, 4, 0.3);
        assert_eq!(d1, -libm::exp(x));
        assert_eq!(d2, -libm::exp(x));
    }

    fn one_cell(y: u64) -> ObservationPanel {
        ObservationPanel::new(1, 1, vec![y], Covariates::empty()).unwrap()
    }

    #[test]
    fn taylor_examples() {
        let p = one_cell(1);
        let t = taylor_coefficients(&p, &FixedEffects::default(), &Excitation::none(), &LatentField::zeros(1, 1)).unwrap();
        assert_eq!((t.b[0], t.curvature[0]), (0.0, 1.0));

        // Second cell at t = 1 with y = 3 after y_prev = 2, eta = 0.5.
        let p = ObservationPanel::new(1, 2, vec![2, 3], Covariates::empty()).unwrap();
        let t = taylor_coefficients(&p, &FixedEffects::default(), &Excitation::new(0.5), &LatentField::zeros(1, 2)).unwrap();
        assert!((t.b[1] - 0.5).abs() < 1e-15 && (t.curvature[1] - 0.25).abs() < 1e-15);

        let p = one_cell(0);
        let x0 = LatentField::constant(1, 1, 2.0);
        let t = taylor_coefficients(&p, &FixedEffects::default(), &Excitation::none(), &x0).unwrap();
        let e2 = libm::exp(2.0);
        assert!((t.b[0] - e2).abs() < 1e-12);
        assert!((t.curvature[0] - e2).abs() < 1e-12);
    }

    #[test]
    fn taylor_reduces_to_irls_quantities_without_excitation() {
        let p = ObservationPanel::new(2, 2, vec![0, 4, 2, 1], Covariates::empty()).unwrap();
        let x0 = LatentField::from_values(2, 2, vec![0.3, -0.2, 1.1, 0.0]).unwrap();
        let t = taylor_coefficients(&p, &FixedEffects::default(), &Excitation::none(), &x0).unwrap();
        for c in 0..4 {
            let e = libm::exp(x0.values[c]);
            assert!((t.curvature[c] - e).abs() < 1e-12);
            let irls = p.counts[c] as f64 - e + x0.values[c] * e;
            assert!((t.b[c] - irls).abs() < 1e-12);
        }
    }

    #[test]
    fn flooring_preserves_gradient() {
        let te = TaylorExpansion {
            point: vec![2.0],
            b: vec![1.0 - 2.0 * 0.3],
            curvature: vec![-0.3],
        };
        let f = te.floored(1e-8);
        assert_eq!(f.curvature[0], 1e-8);
        // d1 = B - c x0 is unchanged
        assert!(((f.b[0] - f.curvature[0] * 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loglik_examples() {
        let p = ObservationPanel::new(3, 2, vec![0; 6], Covariates::empty()).unwrap();
        let ll = loglik(&p, &LatentField::zeros(3, 2), &FixedEffects::intercept(0.0), &Excitation::none()).unwrap();
        assert_eq!(ll, -6.0);
        let bad = loglik(&p, &LatentField::zeros(2, 2), &FixedEffects::intercept(0.0), &Excitation::none());
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn condition_on_first_drops_first_column() {
        let p = ObservationPanel::new(1, 2, vec![5, 0], Covariates::empty()).unwrap();
        let exc = Excitation {
            eta: 0.2,
            initial: InitialCounts::ConditionOnFirst,
        };
        let ll = loglik(&p, &LatentField::zeros(1, 2), &FixedEffects::default(), &exc).unwrap();
        assert!((ll - poisson_log_pmf(0, 2.0)).abs() < 1e-15);
    }

    #[test]
    fn simulation_is_reproducible() {
        let field = LatentField::constant(4, 5, 0.1);
        let fe = FixedEffects::intercept(0.2);
        let exc = Excitation::new(0.3);
        let a = simulate_counts(&field, &fe, &exc, &Covariates::empty(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = simulate_counts(&field, &fe, &exc, &Covariates::empty(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }
}
