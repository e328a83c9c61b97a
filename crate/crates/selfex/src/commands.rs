//! The `simulate`, `fit`, `assess` and `report` commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use selfex_core::assess::{dic, posterior_predictive, PppSettings, StatisticRegistry};
use selfex_core::engine::{self, fixed_effect_interval_at, latent_marginals_gaussian, marginal_hyperparam, Fit, Problem};
use selfex_core::exec::Executor;
use selfex_core::graph::SpatialGraph;
use selfex_core::hyper::{HyperParams, ModelSpec};
use selfex_core::likelihood::{Covariates, FixedEffects, ObservationPanel};
use selfex_core::simulate::{generate_custom, generate_rdse_study, generate_scse_study, LatentStart, Study as Generated};
use selfex_core::Error as CoreError;

use crate::config::{Model, RunConfig, Study};
use crate::formats::{
    format_adjacency, format_covariates, format_panel, parse_covariates, parse_panel, read_adjacency, read_text,
    write_text, fmt_full, GridDump, TruthRecord,
};

pub const CONFIG_FILE: &str = "run_config.toml";
pub const HYPER_FILE: &str = "hyperparameters.csv";
pub const LATENT_FILE: &str = "latent.csv";
pub const GRID_FILE: &str = "grid.json";
pub const ASSESS_FILE: &str = "assessment.csv";
pub const SOURCES_FILE: &str = "assessed_fits.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Rows of the hyperparameter table, in print order.
const TABLE_HYPER: [&str; 5] = ["eta", "sigma2", "theta1", "alpha", "kappa"];

fn existing_dir(p: &Path) -> Result<()> {
    if !p.is_dir() {
        bail!("output directory {} does not exist", p.display());
    }
    Ok(())
}

/// Human-readable number with 4 significant digits.
pub fn fmt_short(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..6).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

fn write_config_copy(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    Ok(())
}

fn core_context(e: CoreError) -> anyhow::Error {
    match &e {
        CoreError::NonConvergence { iterations, trace } => {
            anyhow::anyhow!("solver did not converge after {iterations} iterations; visited points: {trace:?}")
        }
        _ => anyhow::Error::new(e),
    }
}

// ---------------------------------------------------------------- simulate

/// Writes adjacency, panel, covariates and truth files (plus the resolved
/// config) into the output directory and returns their paths.
pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let seed = cfg.require_seed("simulate")?;
    let out = cfg.require_out()?;
    existing_dir(out)?;
    let generated: Generated = match cfg.study {
        Some(Study::ScseSec4) => generate_scse_study(seed)?,
        Some(Study::RdseSec4) => generate_rdse_study(seed)?,
        None => simulate_custom(cfg, seed)?,
    };
    info!(
        "simulated {} sites x {} times, {} events",
        generated.panel.n_sites,
        generated.panel.n_time,
        generated.panel.total()
    );
    let files = [
        ("adjacency.txt", format_adjacency(&generated.graph)),
        ("panel.csv", format_panel(&generated.panel)),
        ("covariates.csv", format_covariates(&generated.panel.covariates, generated.panel.n_sites)),
        ("truth.toml", TruthRecord::from_truth(&generated.truth).to_toml()),
    ];
    let mut paths = Vec::new();
    for (name, text) in files {
        let p = out.join(name);
        write_text(&p, &text)?;
        paths.push(p);
    }
    write_config_copy(cfg, out)?;
    Ok(paths)
}

fn simulate_custom(cfg: &RunConfig, seed: u64) -> Result<Generated> {
    let spec = cfg.model_spec()?;
    let s = &cfg.simulate;
    let graph = match &cfg.adjacency {
        Some(p) => read_adjacency(p)?,
        None => SpatialGraph::torus(s.torus[0], s.torus[1])?,
    };
    let covariates = match &cfg.covariates {
        Some(p) => parse_covariates(&read_text(p)?, graph.n_sites())?,
        None => Covariates::empty(),
    };
    let eta = match spec.eta {
        selfex_core::hyper::EtaMode::Off => None,
        _ => Some(s.eta),
    };
    let h = match cfg.model {
        Model::Scse => HyperParams::scse(s.theta1.context("simulate.theta1 is required for scse")?, s.sigma2, eta),
        Model::Rdse => HyperParams::rdse(
            s.alpha.context("simulate.alpha is required for rdse")?,
            s.kappa.context("simulate.kappa is required for rdse")?,
            s.sigma2,
            eta,
        ),
    };
    let expected = usize::from(spec.intercept) + covariates.width();
    if s.beta.len() != expected {
        bail!("simulate.beta needs {expected} coefficients (intercept and covariates), got {}", s.beta.len());
    }
    let fe = FixedEffects { beta: s.beta.clone() };
    Ok(generate_custom(&spec, &graph, s.n_time, &h, &fe, &covariates, &LatentStart::Process, seed)?)
}

// ---------------------------------------------------------------- fit

/// Graph, panel and model description named by a config.
pub struct Inputs {
    pub graph: SpatialGraph,
    pub panel: ObservationPanel,
    pub spec: ModelSpec,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let adj = cfg.adjacency.as_deref().context("no adjacency file (--adjacency PATH)")?;
    let panel_path = cfg.panel.as_deref().context("no panel file (--panel PATH)")?;
    let graph = read_adjacency(adj).with_context(|| format!("reading adjacency {}", adj.display()))?;
    let covariates = match &cfg.covariates {
        Some(p) => parse_covariates(&read_text(p)?, graph.n_sites()).with_context(|| format!("reading covariates {}", p.display()))?,
        None => Covariates::empty(),
    };
    let panel = parse_panel(&read_text(panel_path)?, graph.n_sites(), covariates)
        .with_context(|| format!("reading panel {}", panel_path.display()))?;
    Ok(Inputs {
        graph,
        panel,
        spec: cfg.model_spec()?,
    })
}

/// One row of the hyperparameter table; `None` prints as a dash.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub mode: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

pub fn hyper_table(problem: &Problem, fit: &Fit) -> Vec<TableRow> {
    let mut rows = Vec::new();
    let fe_names = problem.fixed_effect_names();
    if !problem.spec().intercept {
        rows.push(TableRow {
            name: "beta0".into(),
            mode: None,
            ci: None,
        });
    }
    for (j, name) in fe_names.iter().enumerate() {
        rows.push(TableRow {
            name: name.clone(),
            mode: Some(fit.center.beta[j]),
            ci: Some(fixed_effect_interval_at(problem, &fit.center, j)),
        });
    }
    let names = problem.parameterization().names();
    let h = fit.theta_star();
    for name in TABLE_HYPER {
        let row = match names.iter().position(|n| *n == name) {
            Some(i) => TableRow {
                name: name.into(),
                mode: h.get(name),
                ci: Some(fit.marginals[i].ci95),
            },
            // Fixed η: the value without an interval.
            None => TableRow {
                name: name.into(),
                mode: h.get(name),
                ci: None,
            },
        };
        rows.push(row);
    }
    rows
}

fn format_table(rows: &[TableRow]) -> String {
    let mut s = String::from("parameter,mode,ci_lower,ci_upper\n");
    let cell = |x: Option<f64>| x.map_or("-".to_string(), fmt_full);
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.name,
            cell(r.mode),
            cell(r.ci.map(|c| c.0)),
            cell(r.ci.map(|c| c.1))
        );
    }
    s
}

fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let cell = |x: &str| -> Result<Option<f64>> {
        if x == "-" {
            Ok(None)
        } else {
            Ok(Some(x.parse::<f64>().with_context(|| format!("bad number `{x}` in {HYPER_FILE}"))?))
        }
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            bail!("malformed row `{line}` in {HYPER_FILE}");
        }
        let (lo, hi) = (cell(f[2])?, cell(f[3])?);
        rows.push(TableRow {
            name: f[0].into(),
            mode: cell(f[1])?,
            ci: lo.zip(hi),
        });
    }
    Ok(rows)
}

fn format_latent(fit: &Fit) -> String {
    let x = &fit.center.x_star;
    let mut s = String::from("site,time,mean,sd\n");
    for (c, (m, sd)) in latent_marginals_gaussian(&fit.center).into_iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", c % x.n_sites, c / x.n_sites + 1, fmt_full(m), fmt_full(sd));
    }
    s
}

pub struct FitOutput {
    pub problem: Problem,
    pub fit: Fit,
    pub table: Vec<TableRow>,
}

/// Fits the configured model and writes the hyperparameter table, latent
/// summaries, grid dump and resolved config.
pub fn fit<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<FitOutput> {
    let out = cfg.require_out()?;
    existing_dir(out)?;
    let inputs = load_inputs(cfg)?;
    let problem = Problem::new(&inputs.spec, &inputs.graph, &inputs.panel, cfg.solver_settings())?;
    info!("fitting {} to {} cells", inputs.spec.label(), problem.n_cells());
    let fit = engine::fit(&problem, None, exec).map_err(core_context)?;
    info!(
        "mode {:?} after {} iterations, {} grid points",
        fit.mode.theta,
        fit.mode.iterations,
        fit.grid.points.len()
    );
    if fit.center.floored {
        log::warn!("curvature was floored at the mode; latent summaries use the floored precision");
    }
    let table = hyper_table(&problem, &fit);
    write_text(&out.join(HYPER_FILE), &format_table(&table))?;
    write_text(&out.join(LATENT_FILE), &format_latent(&fit))?;
    let names = problem.parameterization().names();
    write_text(&out.join(GRID_FILE), &GridDump::new(inputs.spec.label(), &names, &fit.grid).to_json())?;
    write_config_copy(cfg, out)?;
    Ok(FitOutput { problem, fit, table })
}

// ---------------------------------------------------------------- assess

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentRow {
    pub model: String,
    pub dic: f64,
    pub p_eff: f64,
    pub deviance: f64,
    pub ppp: BTreeMap<String, f64>,
}

/// Loads a fit directory: its config, problem and grid.
pub fn load_fit(dir: &Path) -> Result<(RunConfig, Problem, engine::ThetaGrid)> {
    let grid_path = dir.join(GRID_FILE);
    if !grid_path.is_file() {
        bail!("{} not found; run `selfex fit` with --out {} first", grid_path.display(), dir.display());
    }
    let fit_cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let inputs = load_inputs(&fit_cfg)?;
    let problem = Problem::new(&inputs.spec, &inputs.graph, &inputs.panel, fit_cfg.solver_settings())?;
    let grid = GridDump::from_json(&read_text(&grid_path)?)?.to_grid()?;
    if grid.dim() != problem.parameterization().dim() {
        bail!("{} does not match the model in {}", grid_path.display(), CONFIG_FILE);
    }
    Ok((fit_cfg, problem, grid))
}

fn fit_dirs(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if !cfg.fits.is_empty() {
        return Ok(cfg.fits.clone());
    }
    Ok(vec![cfg.require_out()?.to_path_buf()])
}

/// DIC and predictive p-values for every fit directory, written as one
/// `assessment.csv` with a row per fit.
pub fn assess<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<Vec<AssessmentRow>> {
    let seed = cfg.require_seed("assess")?;
    cfg.validate_n_rep()?;
    let out = cfg.require_out()?;
    existing_dir(out)?;
    let registry = StatisticRegistry::default();
    let mut statistics = Vec::new();
    for name in ["max_count", "zero_count"].iter().copied().chain(cfg.statistics.iter().map(String::as_str)) {
        let s = registry.get(name).with_context(|| format!("unknown statistic `{name}`"))?;
        if !statistics.iter().any(|x: &selfex_core::assess::Statistic| x.name == name) {
            statistics.push(s.clone());
        }
    }
    let mut settings = PppSettings::new(cfg.n_rep, seed);
    settings.replication = cfg.replication();
    settings.refine_sweeps = cfg.refine_sweeps;
    let dirs = fit_dirs(cfg)?;
    let mut rows = Vec::new();
    for dir in &dirs {
        let (_, problem, grid) = load_fit(dir)?;
        info!("assessing {} from {}", problem.spec().label(), dir.display());
        let summary = dic(&problem, &grid, exec).map_err(core_context)?;
        let ppp = posterior_predictive(&problem, &grid, &statistics, &settings, exec).map_err(core_context)?;
        rows.push(AssessmentRow {
            model: problem.spec().label().into(),
            dic: summary.dic,
            p_eff: summary.p_eff,
            deviance: summary.deviance_at_mode,
            ppp: ppp.into_iter().map(|r| (r.statistic, r.p_value)).collect(),
        });
    }
    write_text(&out.join(ASSESS_FILE), &format_assessment(&rows))?;
    let sources: String = dirs.iter().map(|d| format!("{}\n", d.display())).collect();
    write_text(&out.join(SOURCES_FILE), &sources)?;
    write_config_copy(cfg, out)?;
    Ok(rows)
}

pub fn format_assessment(rows: &[AssessmentRow]) -> String {
    let mut s = String::from("model,dic,p_eff,deviance,ppp_max,ppp_zeros\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.model,
            fmt_full(r.dic),
            fmt_full(r.p_eff),
            fmt_full(r.deviance),
            fmt_full(r.ppp["max_count"]),
            fmt_full(r.ppp["zero_count"])
        );
    }
    s
}

pub fn parse_assessment(text: &str) -> Result<Vec<AssessmentRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("model,dic,p_eff,deviance,ppp_max,ppp_zeros") {
        bail!("{ASSESS_FILE} has an unexpected header");
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                bail!("malformed row `{line}` in {ASSESS_FILE}");
            }
            let num = |i: usize| f[i].parse::<f64>().with_context(|| format!("bad number `{}`", f[i]));
            Ok(AssessmentRow {
                model: f[0].into(),
                dic: num(1)?,
                p_eff: num(2)?,
                deviance: num(3)?,
                ppp: [("max_count".to_string(), num(4)?), ("zero_count".to_string(), num(5)?)].into(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- report

/// Text summary of fits and assessment, plus `marginal_<model>_<param>.csv`
/// density curves. Returns the summary path.
pub fn report(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.require_out()?;
    existing_dir(out)?;
    let assess_dir = cfg.assess_dir.as_deref().unwrap_or(out);
    let assess_path = assess_dir.join(ASSESS_FILE);
    if !assess_path.is_file() {
        bail!("{} not found; run `selfex assess` first", assess_path.display());
    }
    let rows = parse_assessment(&read_text(&assess_path)?)?;
    if rows.is_empty() {
        bail!("{} has no rows", assess_path.display());
    }
    let dirs: Vec<PathBuf> = if cfg.fits.is_empty() {
        let src = assess_dir.join(SOURCES_FILE);
        read_text(&src)?.lines().filter(|l| !l.is_empty()).map(PathBuf::from).collect()
    } else {
        cfg.fits.clone()
    };

    let mut s = String::new();
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    for dir in &dirs {
        let table = parse_table(&read_text(&dir.join(HYPER_FILE))?)?;
        let dump = GridDump::from_json(&read_text(&dir.join(GRID_FILE))?)?;
        let grid = dump.to_grid()?;
        let n = used.entry(dump.model.clone()).or_insert(0);
        *n += 1;
        let tag = if *n == 1 { dump.model.clone() } else { format!("{}-{}", dump.model, n) };
        let _ = writeln!(s, "Model {tag} ({})", dir.display());
        let _ = writeln!(s, "  {:<12} {:>10} {:>22}", "parameter", "mode", "95% interval");
        for r in &table {
            let mode = r.mode.map_or("-".into(), fmt_short);
            let ci = r.ci.map_or("-".into(), |(a, b)| format!("({}, {})", fmt_short(a), fmt_short(b)));
            let _ = writeln!(s, "  {:<12} {:>10} {:>22}", r.name, mode, ci);
        }
        s.push('\n');
        for (i, name) in dump.names.iter().enumerate() {
            let m = marginal_hyperparam(&grid, i)?;
            let mut csv = String::from("value,density\n");
            for (x, d) in &m.curve {
                let _ = writeln!(csv, "{},{}", fmt_full(*x), fmt_full(*d));
            }
            let file = format!("marginal_{}_{}.csv", tag.replace('+', "-"), name);
            write_text(&out.join(file), &csv)?;
        }
    }
    let _ = writeln!(s, "Assessment");
    let _ = writeln!(
        s,
        "  {:<10} {:>10} {:>9} {:>10} {:>8} {:>9}",
        "model", "DIC", "p_eff", "deviance", "ppp_max", "ppp_zeros"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "  {:<10} {:>10} {:>9} {:>10} {:>8} {:>9}",
            r.model,
            fmt_short(r.dic),
            fmt_short(r.p_eff),
            fmt_short(r.deviance),
            fmt_short(r.ppp["max_count"]),
            fmt_short(r.ppp["zero_count"])
        );
    }
    let best = rows.iter().min_by(|a, b| a.dic.total_cmp(&b.dic)).expect("non-empty");
    let _ = writeln!(s, "\nPreferred model by DIC: {}", best.model);
    let path = out.join(SUMMARY_FILE);
    write_text(&path, &s)?;
    Ok(path)
}
