//! Text file formats: adjacency lists, count panels, covariate tables,
//! truth records and grid dumps.
//!
//! Sites are numbered from 0 in every file; times in panel files run
//! from 1 to `n_time`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use selfex_core::engine::{GridPoint, ThetaGrid};
use selfex_core::graph::SpatialGraph;
use selfex_core::hyper::{HyperParams, ProcessKind, ProcessParams};
use selfex_core::likelihood::{Covariates, ObservationPanel};
use selfex_core::process::{Boundary, RdseParams, ScseParams};
use selfex_core::simulate::Truth;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] selfex_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn line_err(line: u64, message: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Machine-readable number: 17 significant digits.
pub fn fmt_full(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

// ---------------------------------------------------------------- adjacency

/// Parses `sites <n>` followed by `edge <i> <j>` lines; `#` starts a
/// comment line and blank lines are skipped.
pub fn parse_adjacency(text: &str) -> Result<SpatialGraph> {
    let mut n_sites: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let number = |s: &str| s.parse::<usize>().map_err(|_| line_err(line_no, format!("`{s}` is not a site index")));
        match (n_sites, parts.as_slice()) {
            (None, ["sites", n]) => n_sites = Some(number(n)?),
            (None, _) => return Err(line_err(line_no, "expected `sites <n>` as the first entry")),
            (Some(n), ["edge", a, b]) => {
                let (i, j) = (number(a)?, number(b)?);
                if i >= n || j >= n {
                    return Err(line_err(line_no, format!("edge ({i}, {j}) refers to a site outside 0..{n}")));
                }
                if i == j {
                    return Err(line_err(line_no, format!("self-loop at site {i}")));
                }
                edges.push((i, j));
            }
            (Some(_), _) => return Err(line_err(line_no, format!("expected `edge <i> <j>`, found `{line}`"))),
        }
    }
    let n = n_sites.ok_or_else(|| FormatError::Invalid("adjacency file has no `sites` line".into()))?;
    Ok(SpatialGraph::from_edges(n, &edges)?)
}

pub fn format_adjacency(g: &SpatialGraph) -> String {
    let mut s = format!("sites {}\n", g.n_sites());
    for (i, j) in g.edges() {
        let _ = writeln!(s, "edge {i} {j}");
    }
    s
}

pub fn read_adjacency(path: &Path) -> Result<SpatialGraph> {
    parse_adjacency(&read_text(path)?)
}

// ---------------------------------------------------------------- covariates

/// Parses a `site,<name1>,<name2>,…` table with one row per site.
pub fn parse_covariates(text: &str, n_sites: usize) -> Result<Covariates> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| line_err(1, e.to_string()))?.clone();
    if header.get(0) != Some("site") {
        return Err(line_err(1, "covariate header must start with `site`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let k = names.len();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_sites];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| line_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let site: usize = rec[0].parse().map_err(|_| line_err(line, format!("`{}` is not a site index", &rec[0])))?;
        if site >= n_sites {
            return Err(line_err(line, format!("site {site} outside 0..{n_sites}")));
        }
        if rows[site].is_some() {
            return Err(line_err(line, format!("site {site} listed twice")));
        }
        let vals = (1..=k)
            .map(|c| {
                rec[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| line_err(line, format!("`{}` is not a finite number", &rec[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows[site] = Some(vals);
    }
    let mut values = Vec::with_capacity(n_sites * k);
    for (s, r) in rows.into_iter().enumerate() {
        match r {
            Some(v) => values.extend(v),
            None if k == 0 => {}
            None => return Err(FormatError::Invalid(format!("covariates missing for site {s}"))),
        }
    }
    Ok(Covariates { names, values })
}

pub fn format_covariates(c: &Covariates, n_sites: usize) -> String {
    let mut s = String::from("site");
    for n in &c.names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    if c.width() > 0 {
        for site in 0..n_sites {
            s.push_str(&site.to_string());
            for v in c.row(site) {
                s.push(',');
                s.push_str(&fmt_full(*v));
            }
            s.push('\n');
        }
    }
    s
}

// ---------------------------------------------------------------- panel

/// Parses a `site,time,count` table. Every site in `0..n_sites` must have
/// exactly the times `1..=n_time`.
pub fn parse_panel(text: &str, n_sites: usize, covariates: Covariates) -> Result<ObservationPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| line_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["site", "time", "count"] {
        return Err(line_err(1, "panel header must be `site,time,count`"));
    }
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut max_time = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| line_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|_| line_err(line, format!("`{}` is not a valid {what}", &rec[i])))
        };
        let site = field(0, "site index")? as usize;
        let time = field(1, "time")? as usize;
        let count = field(2, "count")?;
        if site >= n_sites {
            return Err(line_err(line, format!("site {site} outside 0..{n_sites}")));
        }
        if time == 0 {
            return Err(line_err(line, "times start at 1"));
        }
        if cells.insert((site, time), count).is_some() {
            return Err(line_err(line, format!("cell (site {site}, time {time}) listed twice")));
        }
        max_time = max_time.max(time);
    }
    if max_time == 0 {
        return Err(FormatError::Invalid("panel has no rows".into()));
    }
    let mut counts = vec![0u64; n_sites * max_time];
    for site in 0..n_sites {
        for time in 1..=max_time {
            let c = cells
                .get(&(site, time))
                .ok_or_else(|| FormatError::Invalid(format!("missing cell (site {site}, time {time})")))?;
            counts[(time - 1) * n_sites + site] = *c;
        }
    }
    Ok(ObservationPanel::new(n_sites, max_time, counts, covariates)?)
}

pub fn format_panel(p: &ObservationPanel) -> String {
    let mut s = String::from("site,time,count\n");
    for site in 0..p.n_sites {
        for t in 0..p.n_time {
            let _ = writeln!(s, "{site},{},{}", t + 1, p.count(site, t));
        }
    }
    s
}

// ---------------------------------------------------------------- truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub model: String,
    pub seed: u64,
    /// Hex fingerprint of the graph.
    pub graph_hash: String,
    pub n_sites: usize,
    pub n_time: usize,
    pub boundary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<[usize; 2]>,
    pub parameters: BTreeMap<String, f64>,
    pub beta: Vec<f64>,
}

pub fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Printed => "printed",
        Boundary::Stationary => "stationary",
    }
}

impl TruthRecord {
    pub fn from_truth(t: &Truth) -> Self {
        let mut parameters = BTreeMap::new();
        match t.hyper.process {
            ProcessParams::Scse(p) => {
                parameters.insert("theta1".into(), p.theta1);
                parameters.insert("sigma2".into(), p.sigma2);
            }
            ProcessParams::Rdse(p) => {
                parameters.insert("alpha".into(), p.alpha);
                parameters.insert("kappa".into(), p.kappa);
                parameters.insert("sigma2".into(), p.sigma2);
            }
        }
        if let Some(e) = t.hyper.eta {
            parameters.insert("eta".into(), e);
        }
        let process = match t.process {
            ProcessKind::Scse => "scse",
            ProcessKind::Rdse => "rdse",
        };
        Self {
            model: process.into(),
            seed: t.seed,
            graph_hash: format!("{:016x}", t.graph_fingerprint),
            n_sites: t.n_sites,
            n_time: t.n_time,
            boundary: boundary_name(t.boundary).into(),
            lattice: t.lattice.map(|(r, c)| [r, c]),
            parameters,
            beta: t.beta.clone(),
        }
    }

    /// The generating hyperparameters.
    pub fn hyper(&self) -> Result<HyperParams> {
        let get = |k: &str| {
            self.parameters
                .get(k)
                .copied()
                .ok_or_else(|| FormatError::Invalid(format!("truth record lacks `{k}`")))
        };
        let process = match self.model.as_str() {
            "scse" => ProcessParams::Scse(ScseParams {
                theta1: get("theta1")?,
                sigma2: get("sigma2")?,
            }),
            "rdse" => ProcessParams::Rdse(RdseParams {
                alpha: get("alpha")?,
                kappa: get("kappa")?,
                sigma2: get("sigma2")?,
            }),
            other => return Err(FormatError::Invalid(format!("unknown model `{other}` in truth record"))),
        };
        Ok(HyperParams {
            process,
            eta: self.parameters.get("eta").copied(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("truth record serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FormatError::Invalid(format!("truth record: {e}")))
    }
}

// ---------------------------------------------------------------- grid dump

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointDump {
    pub k: Vec<i32>,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
    pub kernel_sd: Vec<f64>,
}

/// Everything needed to rebuild a [`ThetaGrid`], plus the model label and
/// parameter names for readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDump {
    pub model: String,
    pub names: Vec<String>,
    pub mode_index: usize,
    pub mode_u: Vec<f64>,
    /// Row-major.
    pub mode_hessian: Vec<Vec<f64>>,
    pub scaling: Vec<Vec<f64>>,
    pub diagonal_fallback: bool,
    pub dz: f64,
    pub dpi: f64,
    pub points: Vec<GridPointDump>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(FormatError::Invalid("grid dump matrix is not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl GridDump {
    pub fn new(model: &str, names: &[&str], g: &ThetaGrid) -> Self {
        Self {
            model: model.into(),
            names: names.iter().map(|s| s.to_string()).collect(),
            mode_index: g.mode_index,
            mode_u: g.mode_u.clone(),
            mode_hessian: rows_of(&g.mode_hessian),
            scaling: rows_of(&g.scaling),
            diagonal_fallback: g.diagonal_fallback,
            dz: g.dz,
            dpi: g.dpi,
            points: g
                .points
                .iter()
                .map(|p| GridPointDump {
                    k: p.k.clone(),
                    u: p.u.clone(),
                    theta: p.theta.clone(),
                    log_post: p.log_post,
                    weight: p.weight,
                    kernel_sd: p.kernel_sd.clone(),
                })
                .collect(),
        }
    }

    pub fn to_grid(&self) -> Result<ThetaGrid> {
        if self.mode_index >= self.points.len() {
            return Err(FormatError::Invalid("grid dump mode index out of range".into()));
        }
        Ok(ThetaGrid {
            points: self
                .points
                .iter()
                .map(|p| GridPoint {
                    k: p.k.clone(),
                    u: p.u.clone(),
                    theta: p.theta.clone(),
                    log_post: p.log_post,
                    weight: p.weight,
                    kernel_sd: p.kernel_sd.clone(),
                })
                .collect(),
            mode_index: self.mode_index,
            mode_u: self.mode_u.clone(),
            mode_hessian: matrix_of(&self.mode_hessian)?,
            scaling: matrix_of(&self.scaling)?,
            diagonal_fallback: self.diagonal_fallback,
            dz: self.dz,
            dpi: self.dpi,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid dump serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FormatError::Invalid(format!("grid dump: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_round_trip() {
        let g = SpatialGraph::torus(3, 4).unwrap();
        let back = parse_adjacency(&format_adjacency(&g)).unwrap();
        assert_eq!(back.fingerprint(), g.fingerprint());
    }

    #[test]
    fn adjacency_errors_name_lines() {
        let e = parse_adjacency("# c\nsites 3\nedge 0 1\nedge 0 x\n").unwrap_err();
        assert!(e.to_string().starts_with("line 4"), "{e}");
        let e = parse_adjacency("sites 2\nedge 0 5\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2"), "{e}");
        assert!(parse_adjacency("edge 0 1\n").is_err());
    }

    #[test]
    fn panel_round_trip_and_errors() {
        let p = ObservationPanel::new(2, 3, vec![1, 2, 3, 4, 5, 6], Covariates::empty()).unwrap();
        let text = format_panel(&p);
        assert_eq!(parse_panel(&text, 2, Covariates::empty()).unwrap(), p);
        let bad = "site,time,count\n0,1,3\n1,1,-2\n";
        let e = parse_panel(bad, 2, Covariates::empty()).unwrap_err();
        assert!(e.to_string().starts_with("line 3"), "{e}");
        let gap = "site,time,count\n0,1,3\n1,1,2\n0,2,1\n";
        assert!(parse_panel(gap, 2, Covariates::empty()).unwrap_err().to_string().contains("missing cell"));
    }

    #[test]
    fn covariates_round_trip() {
        let c = Covariates {
            names: vec!["pop".into(), "sunni".into()],
            values: vec![1.5, 0.0, 2.25, 1.0],
        };
        assert_eq!(parse_covariates(&format_covariates(&c, 2), 2).unwrap(), c);
        assert_eq!(parse_covariates("site\n", 4).unwrap(), Covariates::empty());
    }

    #[test]
    fn truth_round_trip() {
        let st = selfex_core::simulate::generate_rdse_study(3).unwrap();
        let rec = TruthRecord::from_truth(&st.truth);
        let back = TruthRecord::from_toml(&rec.to_toml()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.hyper().unwrap(), st.truth.hyper);
    }

    #[test]
    fn full_precision_numbers() {
        let x = 0.1f64 + 0.2;
        assert_eq!(fmt_full(x).parse::<f64>().unwrap(), x);
    }
}
