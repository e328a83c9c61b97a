use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selfex::commands;
use selfex::config::{BoundaryChoice, Model, ReplicationChoice, RunConfig, Study, Switch};
use selfex::exec::Pool;

#[derive(Parser)]
#[command(name = "selfex", version, about = "Fit and assess self-exciting spatio-temporal count models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a panel, covariates and truth record.
    Simulate(Overrides),
    /// Fit a model and write parameter tables, latent summaries and the grid.
    Fit(Overrides),
    /// DIC and posterior predictive p-values for one or more fits.
    Assess(Overrides),
    /// Merge fit and assessment outputs into a text summary.
    Report(Overrides),
}

/// Flags override the values read from `--config`.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_enum)]
    excitation: Option<Switch>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-rep")]
    n_rep: Option<usize>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryChoice>,
    #[arg(long, value_enum)]
    study: Option<Study>,
    #[arg(long, value_enum)]
    replication: Option<ReplicationChoice>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Fit directory to assess or report on; repeatable.
    #[arg(long = "fit")]
    fits: Vec<PathBuf>,
    /// Directory containing assessment.csv (report only).
    #[arg(long = "assess")]
    assess_dir: Option<PathBuf>,
}

impl Overrides {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let mut c = RunConfig::load(p)?;
                if let Some(dir) = p.parent() {
                    c.absolutize(dir);
                }
                c
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $( if self.$f.is_some() { cfg.$f = self.$f; } )* };
        }
        set!(model, excitation, n_rep, replication);
        set_opt!(adjacency, panel, covariates, out, seed, boundary, study, threads, assess_dir);
        if !self.fits.is_empty() {
            cfg.fits = self.fits;
        }
        cfg.absolutize(&std::env::current_dir()?);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(o) => {
            let cfg = o.resolve()?;
            for p in commands::simulate(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Fit(o) => {
            let cfg = o.resolve()?;
            let pool = Pool::new(cfg.threads)?;
            let out = commands::fit(&cfg, &pool)?;
            for r in &out.table {
                if let (Some(m), Some((a, b))) = (r.mode, r.ci) {
                    println!("{:<12} {:>10} ({}, {})", r.name, commands::fmt_short(m), commands::fmt_short(a), commands::fmt_short(b));
                }
            }
        }
        Command::Assess(o) => {
            let cfg = o.resolve()?;
            let pool = Pool::new(cfg.threads)?;
            print!("{}", commands::format_assessment(&commands::assess(&cfg, &pool)?));
        }
        Command::Report(o) => {
            let cfg = o.resolve()?;
            let path = commands::report(&cfg)?;
            print!("{}", std::fs::read_to_string(path)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
