//! The full fitting pipeline: mode of `π̃(θ | Y)`, grid, marginals.

use alloc::vec::Vec;

use super::{explore_theta_grid, find_theta_mode, marginal_hyperparam, Marginal, ModeResult, Problem, ThetaGrid, ThetaMode};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::hyper::{HyperParams, ProcessKind};

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub mode: ThetaMode<Vec<f64>>,
    pub grid: ThetaGrid,
    /// One marginal per hyperparameter, in `Parameterization::names` order.
    pub marginals: Vec<Marginal>,
    /// Gaussian approximation at the mode of `θ`.
    pub center: ModeResult,
}

impl Fit {
    pub fn theta_star(&self) -> HyperParams {
        self.center.theta
    }
}

/// Starting point of the outer search: θ₁ (or κ) at the middle of its
/// range, α = 0.2, σ² = 1 and η = 0.1 where free.
pub fn default_start(problem: &Problem) -> Result<Vec<f64>> {
    let param = problem.parameterization();
    let pr = &problem.spec().priors;
    let eta = match problem.spec().eta {
        crate::hyper::EtaMode::Off => None,
        crate::hyper::EtaMode::Fixed(e) => Some(e),
        crate::hyper::EtaMode::Free => Some(pr.eta.0 + 0.1 * (pr.eta.1 - pr.eta.0)),
    };
    let h = match problem.spec().process {
        ProcessKind::Scse => {
            let (lo, hi) = param.theta1_range();
            HyperParams::scse(0.5 * (lo + hi), 1.0, eta)
        }
        ProcessKind::Rdse => {
            let alpha = (0.2f64).clamp(pr.alpha.0 + 0.1 * (pr.alpha.1 - pr.alpha.0), pr.alpha.1 - 0.1 * (pr.alpha.1 - pr.alpha.0));
            let kappa = 0.5 * (-alpha / 2.0 + pr.kappa_upper.bound(alpha));
            HyperParams::rdse(alpha, kappa, 1.0, eta)
        }
    };
    param.to_unconstrained(&h)
}

/// Finds the mode of `π̃(θ | Y)`, explores the grid around it and builds the
/// hyperparameter marginals.
pub fn fit<E: Executor>(problem: &Problem, start: Option<&[f64]>, exec: &E) -> Result<Fit> {
    let u0 = match start {
        Some(u) => u.to_vec(),
        None => default_start(problem)?,
    };
    let mode = find_theta_mode(problem, &u0, problem.settings(), exec)?;
    let grid = explore_theta_grid(problem, &mode, problem.settings(), exec)?;
    let marginals = (0..grid.dim()).map(|i| marginal_hyperparam(&grid, i)).collect::<Result<Vec<_>>>()?;
    let (h, _) = problem.parameterization().from_unconstrained(&mode.u)?;
    let center = problem.gaussian_approx(&h, Some(&mode.state))?;
    if !center.converged {
        return Err(Error::NonConvergence {
            iterations: center.iterations,
            trace: mode.trace.clone(),
        });
    }
    Ok(Fit {
        mode,
        grid,
        marginals,
        center,
    })
}
