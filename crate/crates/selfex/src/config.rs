//! Run configuration: a TOML file with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use selfex_core::assess::{Replication, MIN_REPLICATES};
use selfex_core::engine::SolverSettings;
use selfex_core::hyper::{EtaMode, KappaUpper, ModelSpec, PriorSpec};
use selfex_core::likelihood::InitialCounts;
use selfex_core::process::Boundary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Scse,
    Rdse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryChoice {
    Printed,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    #[serde(rename = "scse-sec4")]
    #[value(name = "scse-sec4")]
    ScseSec4,
    #[serde(rename = "rdse-sec4")]
    #[value(name = "rdse-sec4")]
    RdseSec4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicationChoice {
    #[default]
    Posterior,
    PriorLatent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialChoice {
    #[default]
    Zero,
    ConditionOnFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma_scale: f64,
    pub theta1: Option<[f64; 2]>,
    pub eta: [f64; 2],
    pub alpha: [f64; 2],
    /// `stationary` or `prior`.
    pub kappa_upper: String,
    pub beta_variance: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let p = PriorSpec::default();
        Self {
            sigma_scale: p.sigma_scale,
            theta1: p.theta1.map(|(a, b)| [a, b]),
            eta: [p.eta.0, p.eta.1],
            alpha: [p.alpha.0, p.alpha.1],
            kappa_upper: "stationary".into(),
            beta_variance: p.beta_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub curvature_floor: f64,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub fd_step: f64,
    pub hessian_step: f64,
    pub max_step: f64,
    pub grid_dz: f64,
    pub grid_dpi: f64,
    pub grid_max_points: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            inner_tol: s.inner_tol,
            inner_max_iter: s.inner_max_iter,
            curvature_floor: s.curvature_floor,
            outer_tol: s.outer_tol,
            outer_max_iter: s.outer_max_iter,
            fd_step: s.fd_step,
            hessian_step: s.hessian_step,
            max_step: s.max_step,
            grid_dz: s.grid_dz,
            grid_dpi: s.grid_dpi,
            grid_max_points: s.grid_max_points,
        }
    }
}

/// Generating values for `simulate` without a study preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_time: usize,
    /// Torus shape used when no adjacency file is given.
    pub torus: [usize; 2],
    pub theta1: Option<f64>,
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma2: f64,
    pub eta: f64,
    /// Intercept (if enabled) then one coefficient per covariate.
    pub beta: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_time: 50,
            torus: [5, 5],
            theta1: None,
            alpha: None,
            kappa: None,
            sigma2: 0.4,
            eta: 0.2,
            beta: vec![-1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub excitation: Switch,
    /// Holds η at this value instead of estimating it (excitation on only).
    pub eta_fixed: Option<f64>,
    /// Defaults to `printed` for scse and `stationary` for rdse.
    pub boundary: Option<BoundaryChoice>,
    pub initial: InitialChoice,
    pub intercept: bool,
    pub adjacency: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub study: Option<Study>,
    pub n_rep: usize,
    pub replication: ReplicationChoice,
    pub refine_sweeps: usize,
    pub statistics: Vec<String>,
    /// Worker threads; absent means available parallelism.
    pub threads: Option<usize>,
    /// Fit directories read by `assess` and `report`.
    pub fits: Vec<PathBuf>,
    /// Directory holding `assessment.csv`, read by `report`.
    pub assess_dir: Option<PathBuf>,
    pub priors: PriorConfig,
    pub solver: SolverConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: Model::Scse,
            excitation: Switch::On,
            eta_fixed: None,
            boundary: None,
            initial: InitialChoice::Zero,
            intercept: true,
            adjacency: None,
            panel: None,
            covariates: None,
            out: None,
            seed: None,
            study: None,
            n_rep: MIN_REPLICATES,
            replication: ReplicationChoice::Posterior,
            refine_sweeps: 100,
            statistics: vec!["max_count".into(), "zero_count".into()],
            threads: None,
            fits: Vec::new(),
            assess_dir: None,
            priors: PriorConfig::default(),
            solver: SolverConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn model_spec(&self) -> anyhow::Result<ModelSpec> {
        let eta = match (self.excitation, self.eta_fixed) {
            (Switch::Off, _) => EtaMode::Off,
            (Switch::On, Some(e)) => EtaMode::Fixed(e),
            (Switch::On, None) => EtaMode::Free,
        };
        let mut spec = match self.model {
            Model::Scse => ModelSpec::scse(eta),
            Model::Rdse => ModelSpec::rdse(eta),
        };
        if let Some(b) = self.boundary {
            spec.boundary = match b {
                BoundaryChoice::Printed => Boundary::Printed,
                BoundaryChoice::Stationary => Boundary::Stationary,
            };
        }
        spec.initial = match self.initial {
            InitialChoice::Zero => InitialCounts::Zero,
            InitialChoice::ConditionOnFirst => InitialCounts::ConditionOnFirst,
        };
        spec.intercept = self.intercept;
        let p = &self.priors;
        spec.priors = PriorSpec {
            sigma_scale: p.sigma_scale,
            theta1: p.theta1.map(|[a, b]| (a, b)),
            eta: (p.eta[0], p.eta[1]),
            alpha: (p.alpha[0], p.alpha[1]),
            kappa_upper: match p.kappa_upper.as_str() {
                "stationary" => KappaUpper::Stationary,
                "prior" => KappaUpper::Prior,
                other => bail!("kappa_upper must be `stationary` or `prior`, got `{other}`"),
            },
            beta_variance: p.beta_variance,
        };
        Ok(spec)
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let s = &self.solver;
        SolverSettings {
            inner_tol: s.inner_tol,
            inner_max_iter: s.inner_max_iter,
            curvature_floor: s.curvature_floor,
            outer_tol: s.outer_tol,
            outer_max_iter: s.outer_max_iter,
            fd_step: s.fd_step,
            hessian_step: s.hessian_step,
            max_step: s.max_step,
            grid_dz: s.grid_dz,
            grid_dpi: s.grid_dpi,
            grid_max_points: s.grid_max_points,
        }
    }

    pub fn replication(&self) -> Replication {
        match self.replication {
            ReplicationChoice::Posterior => Replication::Posterior,
            ReplicationChoice::PriorLatent => Replication::PriorLatent,
        }
    }

    pub fn require_seed(&self, command: &str) -> anyhow::Result<u64> {
        self.seed.with_context(|| format!("`{command}` needs a seed (--seed N or `seed` in the config)"))
    }

    pub fn require_out(&self) -> anyhow::Result<&Path> {
        self.out.as_deref().context("no output directory (--out DIR or `out` in the config)")
    }

    pub fn validate_n_rep(&self) -> anyhow::Result<()> {
        if self.n_rep < MIN_REPLICATES {
            bail!("n_rep = {} is below the minimum of {MIN_REPLICATES}", self.n_rep);
        }
        Ok(())
    }

    /// Makes every path absolute relative to `base`, so that a copy of the
    /// config written elsewhere still resolves.
    pub fn absolutize(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.adjacency);
        fix(&mut self.panel);
        fix(&mut self.covariates);
        fix(&mut self.out);
        fix(&mut self.assess_dir);
        for f in &mut self.fits {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
    }
}
