//! Hyperparameters, their priors, and the bijection to an unconstrained
//! optimisation scale.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::likelihood::InitialCounts;
use crate::process::{Boundary, RdseParams, ScseParams};

/// Latent process family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Scse,
    Rdse,
}

/// Treatment of the self-excitation weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    /// No excitation term.
    Off,
    /// Estimated with the other hyperparameters.
    Free,
    /// Held at a known value.
    Fixed(f64),
}

/// Upper limit of the κ range given α. Both conventions agree numerically
/// (`(2−α)/2 = 1−α/2`); they are kept as separate names for configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KappaUpper {
    #[default]
    Stationary,
    Prior,
}

impl KappaUpper {
    pub fn bound(self, alpha: f64) -> f64 {
        match self {
            KappaUpper::Stationary => RdseParams::kappa_upper(alpha),
            KappaUpper::Prior => 1.0 - alpha / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// Scale of the half-Cauchy prior on σ.
    pub sigma_scale: f64,
    /// Uniform range for θ₁, intersected with the graph's admissible interval.
    /// `None` uses the admissible interval itself.
    pub theta1: Option<(f64, f64)>,
    pub eta: (f64, f64),
    pub alpha: (f64, f64),
    pub kappa_upper: KappaUpper,
    /// Variance of the Gaussian prior on every fixed effect.
    pub beta_variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            sigma_scale: 25.0,
            theta1: None,
            eta: (0.0, 1.0),
            alpha: (0.0, 1.0),
            kappa_upper: KappaUpper::Stationary,
            beta_variance: 1000.0,
        }
    }
}

/// Full model description shared by fitting, assessment and simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub process: ProcessKind,
    pub eta: EtaMode,
    pub initial: InitialCounts,
    pub boundary: Boundary,
    pub intercept: bool,
    pub priors: PriorSpec,
}

impl ModelSpec {
    pub fn scse(eta: EtaMode) -> Self {
        Self {
            process: ProcessKind::Scse,
            eta,
            initial: InitialCounts::Zero,
            boundary: Boundary::Printed,
            intercept: true,
            priors: PriorSpec::default(),
        }
    }

    pub fn rdse(eta: EtaMode) -> Self {
        Self {
            process: ProcessKind::Rdse,
            boundary: Boundary::Stationary,
            ..Self::scse(eta)
        }
    }

    /// Short label such as `scse+eta` or `rdse`.
    pub fn label(&self) -> &'static str {
        match (self.process, self.eta) {
            (ProcessKind::Scse, EtaMode::Off) => "scse",
            (ProcessKind::Scse, _) => "scse+eta",
            (ProcessKind::Rdse, EtaMode::Off) => "rdse",
            (ProcessKind::Rdse, _) => "rdse+eta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessParams {
    Scse(ScseParams),
    Rdse(RdseParams),
}

impl ProcessParams {
    pub fn sigma2(&self) -> f64 {
        match self {
            ProcessParams::Scse(p) => p.sigma2,
            ProcessParams::Rdse(p) => p.sigma2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub process: ProcessParams,
    /// `None` when the excitation term is disabled.
    pub eta: Option<f64>,
}

impl HyperParams {
    pub fn scse(theta1: f64, sigma2: f64, eta: Option<f64>) -> Self {
        Self {
            process: ProcessParams::Scse(ScseParams { theta1, sigma2 }),
            eta,
        }
    }

    pub fn rdse(alpha: f64, kappa: f64, sigma2: f64, eta: Option<f64>) -> Self {
        Self {
            process: ProcessParams::Rdse(RdseParams { alpha, kappa, sigma2 }),
            eta,
        }
    }

    pub fn eta_value(&self) -> f64 {
        self.eta.unwrap_or(0.0)
    }

    /// Value of a named component, if present.
    pub fn get(&self, name: &str) -> Option<f64> {
        match (name, &self.process) {
            ("sigma2", p) => Some(p.sigma2()),
            ("theta1", ProcessParams::Scse(p)) => Some(p.theta1),
            ("alpha", ProcessParams::Rdse(p)) => Some(p.alpha),
            ("kappa", ProcessParams::Rdse(p)) => Some(p.kappa),
            ("eta", _) => self.eta,
            _ => None,
        }
    }
}

#[inline]
fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -libm::log1p(libm::exp(-u))
    } else {
        u - libm::log1p(libm::exp(u))
    }
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + libm::exp(-u))
    } else {
        let e = libm::exp(u);
        e / (1.0 + e)
    }
}

/// `(lo, hi)`-scaled logistic map with its log derivative.
fn to_interval(u: f64, lo: f64, hi: f64) -> (f64, f64) {
    let v = lo + (hi - lo) * sigmoid(u);
    let log_jac = libm::log(hi - lo) + log_sigmoid(u) + log_sigmoid(-u);
    (v, log_jac)
}

fn from_interval(v: f64, lo: f64, hi: f64) -> f64 {
    let p = (v - lo) / (hi - lo);
    libm::log(p) - libm::log1p(-p)
}

/// Log density of a half-Cauchy(scale) variable at `sigma > 0`.
pub fn half_cauchy_log_density(sigma: f64, scale: f64) -> f64 {
    let r = sigma / scale;
    libm::log(2.0 / (PI * scale)) - libm::log1p(r * r)
}

/// Map between [`HyperParams`] and the unconstrained vector `u` used by the
/// optimiser and the grid, together with the prior.
///
/// Coordinates: SCSE `[log σ², logit θ₁, (logit η)]`,
/// RDSE `[logit α, logit κ|α, log σ², (logit η)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameterization {
    pub spec: ModelSpec,
    theta1_range: (f64, f64),
}

impl Parameterization {
    pub fn new(spec: &ModelSpec, g: &SpatialGraph) -> Result<Self> {
        let theta1_range = match spec.process {
            ProcessKind::Scse => {
                // Without edges θ₁ does not enter the precision.
                let (lo, hi) = if g.n_edges() == 0 {
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    g.theta1_bounds()?
                };
                let (lo, hi) = if lo.is_finite() { (lo, hi) } else { spec.priors.theta1.unwrap_or((-1.0, 1.0)) };
                match spec.priors.theta1 {
                    Some((a, b)) => {
                        let r = (lo.max(a), hi.min(b));
                        if !(r.0 < r.1) {
                            return Err(Error::InvalidConfig(
                                "theta1 prior range does not meet the admissible interval".into(),
                            ));
                        }
                        r
                    }
                    None => (lo, hi),
                }
            }
            ProcessKind::Rdse => (0.0, 0.0),
        };
        if let EtaMode::Fixed(e) = spec.eta {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::ParameterSpace {
                    name: "eta",
                    value: e,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        let p = &spec.priors;
        if !(p.sigma_scale > 0.0 && p.beta_variance > 0.0) {
            return Err(Error::InvalidConfig("prior scales must be positive".into()));
        }
        if !(p.eta.0 >= 0.0 && p.eta.0 < p.eta.1 && p.eta.1 <= 1.0) {
            return Err(Error::InvalidConfig("eta prior range must lie in [0, 1]".into()));
        }
        if !(p.alpha.0 >= 0.0 && p.alpha.0 < p.alpha.1 && p.alpha.1 <= 1.0) {
            return Err(Error::InvalidConfig("alpha prior range must lie in [0, 1]".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            theta1_range,
        })
    }

    pub fn theta1_range(&self) -> (f64, f64) {
        self.theta1_range
    }

    fn eta_free(&self) -> bool {
        self.spec.eta == EtaMode::Free
    }

    pub fn dim(&self) -> usize {
        let base = match self.spec.process {
            ProcessKind::Scse => 2,
            ProcessKind::Rdse => 3,
        };
        base + usize::from(self.eta_free())
    }

    /// Names of the unconstrained coordinates, in order.
    pub fn names(&self) -> Vec<&'static str> {
        let mut v = match self.spec.process {
            ProcessKind::Scse => vec!["sigma2", "theta1"],
            ProcessKind::Rdse => vec!["alpha", "kappa", "sigma2"],
        };
        if self.eta_free() {
            v.push("eta");
        }
        v
    }

    fn fixed_eta(&self) -> Option<f64> {
        match self.spec.eta {
            EtaMode::Off => None,
            EtaMode::Fixed(e) => Some(e),
            EtaMode::Free => unreachable!(),
        }
    }

    /// Constrained parameters and the log Jacobian `log |dθ/du|`.
    pub fn from_unconstrained(&self, u: &[f64]) -> Result<(HyperParams, f64)> {
        if u.len() != self.dim() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("unconstrained vector".into()));
        }
        let pr = &self.spec.priors;
        let mut log_jac = 0.0;
        let (process, rest) = match self.spec.process {
            ProcessKind::Scse => {
                let sigma2 = libm::exp(u[0]);
                log_jac += u[0];
                let (lo, hi) = self.theta1_range;
                let (theta1, j) = to_interval(u[1], lo, hi);
                log_jac += j;
                (ProcessParams::Scse(ScseParams { theta1, sigma2 }), &u[2..])
            }
            ProcessKind::Rdse => {
                let (alpha, ja) = to_interval(u[0], pr.alpha.0, pr.alpha.1);
                let (kappa, jk) = to_interval(u[1], -alpha / 2.0, pr.kappa_upper.bound(alpha));
                let sigma2 = libm::exp(u[2]);
                log_jac += ja + jk + u[2];
                (ProcessParams::Rdse(RdseParams { alpha, kappa, sigma2 }), &u[3..])
            }
        };
        let eta = if self.eta_free() {
            let (e, j) = to_interval(rest[0], pr.eta.0, pr.eta.1);
            log_jac += j;
            Some(e)
        } else {
            self.fixed_eta()
        };
        Ok((HyperParams { process, eta }, log_jac))
    }

    pub fn to_unconstrained(&self, h: &HyperParams) -> Result<Vec<f64>> {
        if !self.in_support(h) {
            return Err(Error::InvalidConfig("hyperparameters outside the prior support".into()));
        }
        let pr = &self.spec.priors;
        let mut u = Vec::with_capacity(self.dim());
        match h.process {
            ProcessParams::Scse(p) => {
                u.push(libm::log(p.sigma2));
                u.push(from_interval(p.theta1, self.theta1_range.0, self.theta1_range.1));
            }
            ProcessParams::Rdse(p) => {
                u.push(from_interval(p.alpha, pr.alpha.0, pr.alpha.1));
                u.push(from_interval(p.kappa, -p.alpha / 2.0, pr.kappa_upper.bound(p.alpha)));
                u.push(libm::log(p.sigma2));
            }
        }
        if self.eta_free() {
            u.push(from_interval(h.eta_value(), pr.eta.0, pr.eta.1));
        }
        Ok(u)
    }

    fn in_support(&self, h: &HyperParams) -> bool {
        let pr = &self.spec.priors;
        let open = |v: f64, lo: f64, hi: f64| v.is_finite() && lo < v && v < hi;
        let process_ok = match (self.spec.process, h.process) {
            (ProcessKind::Scse, ProcessParams::Scse(p)) => {
                open(p.theta1, self.theta1_range.0, self.theta1_range.1) && open(p.sigma2, 0.0, f64::INFINITY)
            }
            (ProcessKind::Rdse, ProcessParams::Rdse(p)) => {
                open(p.alpha, pr.alpha.0, pr.alpha.1)
                    && open(p.kappa, -p.alpha / 2.0, pr.kappa_upper.bound(p.alpha))
                    && open(p.sigma2, 0.0, f64::INFINITY)
            }
            _ => false,
        };
        let eta_ok = match (self.spec.eta, h.eta) {
            (EtaMode::Off, None) => true,
            (EtaMode::Fixed(e), Some(v)) => e == v,
            (EtaMode::Free, Some(v)) => {
                // Interval endpoints at 0 are allowed only when the prior
                // range starts above 0.
                v.is_finite() && pr.eta.0 < v && v < pr.eta.1
            }
            _ => false,
        };
        process_ok && eta_ok
    }

    /// Log prior density of `h` on the constrained scale (`−∞` outside).
    pub fn log_prior(&self, h: &HyperParams) -> f64 {
        if !self.in_support(h) {
            return f64::NEG_INFINITY;
        }
        let pr = &self.spec.priors;
        let sigma2 = h.process.sigma2();
        let sigma = libm::sqrt(sigma2);
        // density of σ² from the half-Cauchy on σ
        let mut lp = half_cauchy_log_density(sigma, pr.sigma_scale) - libm::log(2.0 * sigma);
        match h.process {
            ProcessParams::Scse(_) => {
                lp -= libm::log(self.theta1_range.1 - self.theta1_range.0);
            }
            ProcessParams::Rdse(p) => {
                lp -= libm::log(pr.alpha.1 - pr.alpha.0);
                lp -= libm::log(pr.kappa_upper.bound(p.alpha) + p.alpha / 2.0);
            }
        }
        if self.eta_free() {
            lp -= libm::log(pr.eta.1 - pr.eta.0);
        }
        lp
    }

    /// Log prior density of `u` on the unconstrained scale.
    pub fn log_prior_unconstrained(&self, u: &[f64]) -> f64 {
        match self.from_unconstrained(u) {
            Ok((h, j)) => self.log_prior(&h) + j,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Log density of the Gaussian prior on one fixed effect.
    pub fn beta_log_prior(&self, beta: f64) -> f64 {
        let v = self.spec.priors.beta_variance;
        -0.5 * (libm::log(2.0 * PI * v) + beta * beta / v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus() -> SpatialGraph {
        SpatialGraph::torus(4, 4).unwrap()
    }

    #[test]
    fn round_trip_scse() {
        let p = Parameterization::new(&ModelSpec::scse(EtaMode::Free), &torus()).unwrap();
        let h = HyperParams::scse(0.22, 0.4, Some(0.2));
        let u = p.to_unconstrained(&h).unwrap();
        let (back, _) = p.from_unconstrained(&u).unwrap();
        assert!((back.get("theta1").unwrap() - 0.22).abs() < 1e-12);
        assert!((back.get("sigma2").unwrap() - 0.4).abs() < 1e-12);
        assert!((back.eta.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn round_trip_rdse_kappa_depends_on_alpha() {
        let p = Parameterization::new(&ModelSpec::rdse(EtaMode::Off), &torus()).unwrap();
        let h = HyperParams::rdse(0.1, -0.04, 0.25, None);
        let u = p.to_unconstrained(&h).unwrap();
        assert_eq!(u.len(), 3);
        let (back, _) = p.from_unconstrained(&u).unwrap();
        assert!((back.get("kappa").unwrap() + 0.04).abs() < 1e-12);
        assert!((back.get("alpha").unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn outside_support_is_negative_infinity() {
        let p = Parameterization::new(&ModelSpec::scse(EtaMode::Free), &torus()).unwrap();
        assert_eq!(p.log_prior(&HyperParams::scse(0.3, 0.4, Some(0.2))), f64::NEG_INFINITY);
        assert_eq!(p.log_prior(&HyperParams::scse(0.1, -1.0, Some(0.2))), f64::NEG_INFINITY);
        assert_eq!(p.log_prior(&HyperParams::scse(0.1, 1.0, Some(1.0))), f64::NEG_INFINITY);
        assert!(p.log_prior(&HyperParams::scse(0.1, 1.0, Some(0.5))).is_finite());
    }

    #[test]
    fn sigma2_prior_integrates_to_one() {
        // Trapezoid over log σ² of the Jacobian-corrected density.
        let p = Parameterization::new(&ModelSpec::scse(EtaMode::Off), &torus()).unwrap();
        let mut acc = 0.0;
        let h = 0.01;
        let mut u = -40.0;
        while u < 40.0 {
            let hp = HyperParams::scse(0.0, libm::exp(u), None);
            let lp = p.log_prior(&hp) + libm::log(p.theta1_range.1 - p.theta1_range.0) + u;
            acc += libm::exp(lp) * h;
            u += h;
        }
        assert!((acc - 1.0).abs() < 1e-3, "{acc}");
    }

    #[test]
    fn kappa_upper_conventions_coincide() {
        for a in [0.05, 0.3, 0.9] {
            assert_eq!(KappaUpper::Stationary.bound(a), KappaUpper::Prior.bound(a));
        }
    }
}
