//! Model comparison by DIC and goodness of fit by posterior predictive
//! p-values.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cholesky::{CholeskyFactor, SymbolicCholesky};
use crate::engine::{ModeResult, Problem, ThetaGrid};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::hyper::HyperParams;
use crate::likelihood::{cell_loglik, simulate_with_offsets, InitialCounts, ObservationPanel};
use crate::process::{sample_latent, standard_normal_vec, PrecisionOperator};
use crate::sparse::SymSparse;

/// `n − tr(Q Q*⁻¹)` by selected inversion of `Q*`.
///
/// When the patterns differ, `Q*` is factored on the union pattern so that
/// every entry of `Q` is covered by the selected inverse.
pub fn effective_params(q: &SymSparse, q_star: &SymSparse) -> Result<f64> {
    if q.dim() != q_star.dim() {
        return Err(Error::DimensionMismatch("Q and Q* differ in size".into()));
    }
    let n = q.dim();
    let target = if q.same_pattern(q_star) {
        q_star.clone()
    } else {
        let mut u = q.union(q_star).zeroed();
        u.add_assign_subpattern(q_star).ok_or(Error::PatternMismatch)?;
        u
    };
    let symbolic = Arc::new(SymbolicCholesky::analyze(&target, 0));
    let factor = CholeskyFactor::factor(&symbolic, &target)?;
    effective_params_factored(q, &factor, n)
}

fn effective_params_factored(q: &SymSparse, factor: &CholeskyFactor, n: usize) -> Result<f64> {
    Ok(n as f64 - factor.selected_inverse().trace_product(q)?)
}

/// Effective parameter count of a Gaussian approximation.
pub fn mode_effective_params(mode: &ModeResult) -> Result<f64> {
    effective_params_factored(&mode.q, &mode.factor, mode.v.len())
}

/// DIC ingredients at the posterior mode of `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub theta_star: HyperParams,
    /// Augmented latent mode `(x̂, β̂)` at `θ*`.
    pub v_hat: Vec<f64>,
    /// Effective parameter count averaged over the grid weights.
    pub p_eff: f64,
    pub deviance_at_mode: f64,
    pub dic: f64,
}

impl FitSummary {
    pub fn new(theta_star: HyperParams, v_hat: Vec<f64>, p_eff: f64, deviance_at_mode: f64) -> Self {
        Self {
            theta_star,
            v_hat,
            p_eff,
            deviance_at_mode,
            dic: deviance_at_mode + 2.0 * p_eff,
        }
    }
}

fn grid_hyper(problem: &Problem, grid: &ThetaGrid, i: usize) -> Result<HyperParams> {
    Ok(problem.parameterization().from_unconstrained(&grid.points[i].u)?.0)
}

fn converged_mode(problem: &Problem, h: &HyperParams, warm: Option<&[f64]>) -> Result<ModeResult> {
    let m = problem.gaussian_approx(h, warm)?;
    if !m.converged {
        return Err(Error::NonConvergence {
            iterations: m.iterations,
            trace: vec![problem.parameterization().names().iter().filter_map(|n| h.get(n)).collect()],
        });
    }
    Ok(m)
}

/// Deviance `−2 log π(Y | X̂, θ*)` at the latent mode for `θ*` (the grid
/// mode) plus twice the grid-averaged effective parameter count.
pub fn dic<E: Executor>(problem: &Problem, grid: &ThetaGrid, exec: &E) -> Result<FitSummary> {
    let h_star = grid_hyper(problem, grid, grid.mode_index)?;
    let center = converged_mode(problem, &h_star, None)?;
    let exc = problem.excitation(&h_star);
    let deviance = -2.0 * problem.data_loglik(&center.lambda, &exc);
    let warm = center.v.as_slice();
    let per_point = exec.map(grid.points.len(), |i| -> Result<f64> {
        let h = grid_hyper(problem, grid, i)?;
        mode_effective_params(&converged_mode(problem, &h, Some(warm))?)
    });
    let mut p_eff = 0.0;
    for (pt, pe) in grid.points.iter().zip(per_point) {
        p_eff += pt.weight * pe?;
    }
    Ok(FitSummary::new(h_star, center.v.clone(), p_eff, deviance))
}

/// A named scalar summary of a count panel.
#[derive(Clone)]
pub struct Statistic {
    pub name: String,
    f: Arc<dyn Fn(&ObservationPanel) -> f64 + Send + Sync>,
}

impl core::fmt::Debug for Statistic {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Statistic").field("name", &self.name).finish()
    }
}

impl Statistic {
    pub fn new(name: &str, f: impl Fn(&ObservationPanel) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, panel: &ObservationPanel) -> f64 {
        (self.f)(panel)
    }

    pub fn max_count() -> Self {
        Self::new("max_count", |p| p.counts.iter().copied().max().unwrap_or(0) as f64)
    }

    pub fn zero_count() -> Self {
        Self::new("zero_count", |p| p.counts.iter().filter(|&&c| c == 0).count() as f64)
    }

    pub fn total_count() -> Self {
        Self::new("total_count", |p| p.total() as f64)
    }
}

/// Statistics looked up by name; starts with the built-ins.
#[derive(Debug, Clone)]
pub struct StatisticRegistry {
    entries: BTreeMap<String, Statistic>,
}

impl Default for StatisticRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        for s in [Statistic::max_count(), Statistic::zero_count(), Statistic::total_count()] {
            r.register(s);
        }
        r
    }
}

impl StatisticRegistry {
    /// Adds or replaces a statistic.
    pub fn register(&mut self, s: Statistic) {
        self.entries.insert(s.name.clone(), s);
    }

    pub fn get(&self, name: &str) -> Option<&Statistic> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }
}

/// Where replicate latent fields come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Replication {
    /// `X` from the Gaussian approximation to `π(X | θ, Y)`.
    #[default]
    Posterior,
    /// `X` from the process prior `π(X | θ)`; fixed effects still come from
    /// the posterior approximation.
    PriorLatent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PppResult {
    pub statistic: String,
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
}

impl PppResult {
    fn from_parts(statistic: String, observed: f64, replicates: Vec<f64>) -> Self {
        let above = replicates.iter().filter(|&&r| r > observed).count();
        let p_value = above as f64 / replicates.len() as f64;
        Self {
            statistic,
            observed,
            replicates,
            p_value,
        }
    }
}

pub const MIN_REPLICATES: usize = 100;

fn replicate_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

fn draw_index(weights: &[f64], r: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Settings of [`posterior_predictive`].
#[derive(Debug, Clone, PartialEq)]
pub struct PppSettings {
    pub n_rep: usize,
    pub replication: Replication,
    /// Metropolis-within-Gibbs sweeps applied to each Gaussian draw, with
    /// the exact full conditional `π(v | θ, Y)` as target. Zero keeps the
    /// plain Gaussian draw.
    pub refine_sweeps: usize,
    pub seed: u64,
}

impl PppSettings {
    pub fn new(n_rep: usize, seed: u64) -> Self {
        Self {
            n_rep,
            replication: Replication::Posterior,
            refine_sweeps: 100,
            seed,
        }
    }
}

/// Moves a draw of `v` towards `π(v | θ, Y)` by single-coordinate random
/// walk Metropolis updates, with step sizes `1/√Q*ᵢᵢ`.
fn refine_draw<R: Rng + ?Sized>(problem: &Problem, mode: &ModeResult, v: &mut [f64], sweeps: usize, rng: &mut R) {
    let n_cells = problem.n_cells();
    let panel = problem.panel();
    let s = panel.n_sites;
    let exc = problem.excitation(&mode.theta);
    let q = &mode.q;
    let step: Vec<f64> = mode.q_star.diag().iter().map(|d| 1.0 / libm::sqrt(*d)).collect();
    let cell_ll = |c: usize, lam: f64| {
        let (site, t) = (c % s, c / s);
        if exc.is_active(t) {
            cell_loglik(lam, panel.counts[c], exc.previous(panel, site, t), exc.eta)
        } else {
            0.0
        }
    };
    let neighbour_sum = |v: &[f64], i: usize| {
        let (rows, vals) = q.column(i);
        let mut r = 0.0;
        let mut qii = 0.0;
        for (&j, &x) in rows.iter().zip(vals) {
            if j == i {
                qii = x;
            } else {
                r += x * v[j];
            }
        }
        (qii, r)
    };
    // Change of λ per unit change of each fixed effect.
    let directions: Vec<Vec<f64>> = (n_cells..v.len())
        .map(|i| {
            let mut e = vec![0.0; v.len()];
            e[i] = 1.0;
            problem.linear_predictor(&e)
        })
        .collect();
    let accept = |log_ratio: f64, rng: &mut R| log_ratio >= 0.0 || libm::log(rng.random::<f64>()) < log_ratio;
    for _ in 0..sweeps {
        let mut lambda = problem.linear_predictor(v);
        for c in 0..n_cells {
            let (qcc, r) = neighbour_sum(v, c);
            let off = lambda[c] - v[c];
            let x0 = v[c];
            let x1 = x0 + step[c] * rng.sample::<f64, _>(StandardNormal);
            let lp = |x: f64| cell_ll(c, x + off) - 0.5 * qcc * x * x - x * r;
            if accept(lp(x1) - lp(x0), rng) {
                v[c] = x1;
                lambda[c] = x1 + off;
            }
        }
        for (k, dir) in directions.iter().enumerate() {
            let i = n_cells + k;
            let (qii, r) = neighbour_sum(v, i);
            let b0 = v[i];
            let d = step[i] * rng.sample::<f64, _>(StandardNormal);
            let mut delta = 0.0;
            for c in 0..n_cells {
                if dir[c] != 0.0 {
                    delta += cell_ll(c, lambda[c] + d * dir[c]) - cell_ll(c, lambda[c]);
                }
            }
            let b1 = b0 + d;
            delta += -0.5 * qii * (b1 * b1 - b0 * b0) - d * r;
            if accept(delta, rng) {
                v[i] = b1;
                for (l, &f) in lambda.iter_mut().zip(dir) {
                    *l += d * f;
                }
            }
        }
    }
}

/// Simulates replicate panels and evaluates every statistic on each.
///
/// Replicate `m` uses ChaCha stream `m` of the seed: one uniform picks a
/// grid point by weight, then the latent draw and the sequential count
/// simulation follow. Replicates sharing a grid point share one Gaussian
/// approximation, so the work is split by grid point.
pub fn posterior_predictive<E: Executor>(
    problem: &Problem,
    grid: &ThetaGrid,
    statistics: &[Statistic],
    settings: &PppSettings,
    exec: &E,
) -> Result<Vec<PppResult>> {
    let (n_rep, seed) = (settings.n_rep, settings.seed);
    if n_rep < MIN_REPLICATES {
        return Err(Error::InvalidConfig(alloc::format!(
            "posterior predictive checks need at least {MIN_REPLICATES} replicates, got {n_rep}"
        )));
    }
    let weights: Vec<f64> = grid.points.iter().map(|p| p.weight).collect();
    let picks: Vec<usize> = (0..n_rep)
        .map(|m| draw_index(&weights, replicate_rng(seed, m).random::<f64>()))
        .collect();
    let mut by_point: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (m, &k) in picks.iter().enumerate() {
        by_point.entry(k).or_default().push(m);
    }
    let groups: Vec<(usize, Vec<usize>)> = by_point.into_iter().collect();

    let h_star = grid_hyper(problem, grid, grid.mode_index)?;
    let center = converged_mode(problem, &h_star, None)?;
    let warm = center.v.as_slice();
    let panel = problem.panel();
    let first = match problem.spec().initial {
        InitialCounts::ConditionOnFirst => Some(&panel.counts[..panel.n_sites]),
        InitialCounts::Zero => None,
    };
    let zeros = vec![0.0; panel.n_sites];

    let results = exec.map(groups.len(), |g| -> Result<Vec<(usize, Vec<f64>)>> {
        let (k, members) = &groups[g];
        let h = grid_hyper(problem, grid, *k)?;
        let mode = converged_mode(problem, &h, Some(warm))?;
        let prior = match settings.replication {
            Replication::Posterior => None,
            Replication::PriorLatent => Some(PrecisionOperator {
                n_sites: panel.n_sites,
                n_time: panel.n_time,
                matrix: problem.latent_precision(&h)?,
            }),
        };
        let eta = problem.excitation(&h).eta;
        let mut out = Vec::with_capacity(members.len());
        for &m in members {
            let mut rng = replicate_rng(seed, m);
            let _: f64 = rng.random();
            let z = standard_normal_vec(&mut rng, mode.v.len());
            let mut v: Vec<f64> = mode.factor.whiten_inverse(&z).iter().zip(&mode.v).map(|(d, c)| c + d).collect();
            refine_draw(problem, &mode, &mut v, settings.refine_sweeps, &mut rng);
            if let Some(op) = &prior {
                let x = sample_latent(op, &mut rng)?;
                v[..problem.n_cells()].copy_from_slice(&x.values);
            }
            let lambda = problem.linear_predictor(&v);
            let counts = simulate_with_offsets(panel.n_sites, panel.n_time, &lambda, &zeros, eta, first, &mut rng);
            let rep = ObservationPanel {
                n_sites: panel.n_sites,
                n_time: panel.n_time,
                counts,
                covariates: panel.covariates.clone(),
            };
            out.push((m, statistics.iter().map(|s| s.eval(&rep)).collect()));
        }
        Ok(out)
    });

    let mut table = vec![Vec::new(); n_rep];
    for r in results {
        for (m, vals) in r? {
            table[m] = vals;
        }
    }
    Ok(statistics
        .iter()
        .enumerate()
        .map(|(j, s)| PppResult::from_parts(s.name.clone(), s.eval(panel), table.iter().map(|row| row[j]).collect()))
        .collect())
}
