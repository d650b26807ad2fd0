//! Problem files, solution bundles and their on-disk formats.
//!
//! A problem file is JSON with the sections `network`, `hamiltonian`,
//! `coupling`, `discretization`, `solver`, `data` and `simulation`; only
//! `network` is required. A solution bundle is a directory holding
//!
//! - `solution.csv` with header `edge,node,arclength,v,dv,m,a_star`, one row
//!   per grid node of every edge, endpoints included, so a vertex appears
//!   once per incident edge and jumps of `m` stay visible. Missing
//!   quantities are empty fields.
//! - `summary.json` with the ergodic constant, residuals, iteration counts,
//!   a SHA-256 hash of the effective problem, the tool version and the
//!   problem itself.
//! - `plot.dat`, one whitespace-separated block `arclength v m a_star` per
//!   edge, blocks separated by two blank lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::CouplingSpec;
use crate::error::{Error, Result};
use crate::grid::{build_grids, Convention, DiscreteNetwork, EdgeField, GridFunction};
use crate::hamiltonian::{policy, HamiltonianSpec};
use crate::mfg::{residuals, MfgConfig, MfgSolution, ResidualReport};
use crate::network::{build_network, Network, RawNetwork};
use crate::operators::{adjoint_fp, assemble_generator, load_vector, Scheme};
use crate::simulate::{feedback_velocity, SimConfig};
use crate::solvers::{hjb_residual, ErgodicSolution, HjbConfig, StationaryDensity};

pub const TOOL_NAME: &str = "mfgnet";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_HEADER: &str = "edge,node,arclength,v,dv,m,a_star";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Discretization {
    pub h_target: f64,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization { h_target: 1.0 / 64.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    /// Fixed-point tolerance on `sup |m_hat - m|`.
    pub tol: f64,
    pub residual_tol: f64,
    pub damping: f64,
    pub max_iters: usize,
    pub hjb_tol: f64,
    pub hjb_max_iters: usize,
    pub cross_check: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let m = MfgConfig::default();
        SolverSpec {
            tol: m.tol,
            residual_tol: m.residual_tol,
            damping: m.damping,
            max_iters: m.max_iters,
            hjb_tol: m.hjb.tol,
            hjb_max_iters: m.hjb.max_iter,
            cross_check: m.hjb.cross_check,
        }
    }
}

/// Per-edge constant data of the linear, Fokker-Planck and HJB problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    /// Discount of `solve-linear`.
    pub lambda: f64,
    /// Source `f`; empty means zero.
    pub source: Vec<f64>,
    /// Drift `b` of `-mu v'' + b v'`; empty means zero.
    pub drift: Vec<f64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            lambda: 1.0,
            source: Vec::new(),
            drift: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSection {
    #[serde(flatten)]
    pub spec: CouplingSpec,
    /// Optional assertion that the coupling is nondecreasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
}

/// Fully resolved problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub network: RawNetwork,
    pub hamiltonian: HamiltonianSpec,
    pub coupling: CouplingSection,
    pub discretization: Discretization,
    pub solver: SolverSpec,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimConfig>,
}

#[derive(Deserialize)]
struct ProblemFile {
    network: RawNetwork,
    hamiltonian: Option<HamiltonianSpec>,
    coupling: Option<CouplingSection>,
    #[serde(default)]
    discretization: Discretization,
    #[serde(default)]
    solver: SolverSpec,
    #[serde(default)]
    data: DataSpec,
    simulation: Option<SimConfig>,
}

impl ProblemSpec {
    /// Problem on `net` with every other section at its default.
    pub fn new(net: &Network) -> ProblemSpec {
        ProblemSpec {
            network: net.to_raw(),
            hamiltonian: HamiltonianSpec::quadratic(net.num_edges()),
            coupling: CouplingSection {
                spec: CouplingSpec::identity(),
                monotone: None,
            },
            discretization: Discretization::default(),
            solver: SolverSpec::default(),
            data: DataSpec::default(),
            simulation: None,
        }
    }

    pub fn build_network(&self) -> Result<Network> {
        build_network(&self.network)
    }

    pub fn discretize(&self) -> Result<Arc<DiscreteNetwork>> {
        Ok(Arc::new(build_grids(&self.build_network()?, self.discretization.h_target)?))
    }

    pub fn hjb_config(&self) -> HjbConfig {
        HjbConfig {
            tol: self.solver.hjb_tol,
            max_iter: self.solver.hjb_max_iters,
            cross_check: self.solver.cross_check,
            ..HjbConfig::default()
        }
    }

    pub fn mfg_config(&self) -> MfgConfig {
        MfgConfig {
            damping: self.solver.damping,
            tol: self.solver.tol,
            residual_tol: self.solver.residual_tol,
            max_iters: self.solver.max_iters,
            hjb: self.hjb_config(),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        self.simulation.unwrap_or_default()
    }

    pub fn source_field(&self, disc: &DiscreteNetwork) -> Result<EdgeField> {
        per_edge_or_zero(disc, &self.data.source)
    }

    pub fn drift_field(&self, disc: &DiscreteNetwork) -> Result<EdgeField> {
        per_edge_or_zero(disc, &self.data.drift)
    }

    /// Semantic checks; the error names the violated invariant.
    pub fn validate(&self) -> Result<()> {
        let net = self.build_network()?;
        let ne = net.num_edges();
        self.hamiltonian.validate(ne)?;
        self.coupling.spec.validate()?;
        if self.coupling.monotone == Some(true) && !self.coupling.spec.is_monotone() {
            return Err(Error::Config("coupling is declared monotone but is not nondecreasing".into()));
        }
        let h = self.discretization.h_target;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("h_target must be positive, got {h}")));
        }
        self.mfg_config().validate()?;
        if !(self.solver.hjb_tol > 0.0) || self.solver.hjb_max_iters == 0 {
            return Err(Error::Config("hjb_tol must be positive and hjb_max_iters at least 1".into()));
        }
        if !(self.data.lambda > 0.0 && self.data.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.data.lambda)));
        }
        for (name, v) in [("source", &self.data.source), ("drift", &self.data.drift)] {
            if !v.is_empty() && v.len() != ne {
                return Err(Error::Config(format!("data: {} {name} values for {ne} edges", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("data: {name} values must be finite")));
            }
        }
        if let Some(sim) = &self.simulation {
            sim.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("problem serializes");
        Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn per_edge_or_zero(disc: &DiscreteNetwork, values: &[f64]) -> Result<EdgeField> {
    if values.is_empty() {
        Ok(EdgeField::zeros(disc))
    } else {
        EdgeField::per_edge(disc, values)
    }
}

/// Parses and validates a problem file. Syntax and type errors carry line
/// and column; semantic errors carry the line of the offending entry.
pub fn parse_problem_file(text: &str) -> Result<ProblemSpec> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let num_edges = file.network.edges.len();
    let spec = ProblemSpec {
        network: file.network,
        hamiltonian: file.hamiltonian.unwrap_or_else(|| HamiltonianSpec::quadratic(num_edges)),
        coupling: file.coupling.unwrap_or(CouplingSection {
            spec: CouplingSpec::identity(),
            monotone: None,
        }),
        discretization: file.discretization,
        solver: file.solver,
        data: file.data,
        simulation: file.simulation,
    };
    spec.validate().map_err(|e| Error::AtLine {
        line: error_line(text, &e),
        source: Box::new(e),
    })?;
    Ok(spec)
}

pub fn read_problem_file(path: &Path) -> Result<ProblemSpec> {
    parse_problem_file(&fs::read_to_string(path)?)
}

/// Pretty JSON that [`parse_problem_file`] maps back to the same spec.
pub fn write_problem(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(spec).expect("problem serializes")
}

fn line_at(text: &str, pos: usize) -> usize {
    text[..pos].matches('\n').count() + 1
}

/// Position of `"key"` at or after `from`.
fn find_key(text: &str, key: &str, from: usize) -> Option<usize> {
    text[from..].find(&format!("\"{key}\"")).map(|p| p + from)
}

/// Position of the `k`-th object of the array stored under `key`.
fn nth_object(text: &str, key: &str, k: usize) -> Option<usize> {
    let start = find_key(text, key, 0)?;
    let (mut depth, mut count, mut in_string, mut escaped) = (0i32, 0usize, false, false);
    for (i, c) in text[start + key.len() + 2..].char_indices() {
        let pos = start + key.len() + 2 + i;
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' | '{' => {
                if c == '{' && depth == 1 {
                    if count == k {
                        return Some(pos);
                    }
                    count += 1;
                }
                depth += 1;
            }
            ']' | '}' => {
                depth -= 1;
                if depth <= 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    None
}

fn error_line(text: &str, err: &Error) -> usize {
    let key_line = |path: &[&str]| {
        let mut pos = 0;
        for k in path {
            match find_key(text, k, pos) {
                Some(p) => pos = p,
                None => break,
            }
        }
        line_at(text, pos)
    };
    let edge_line = |id: usize| nth_object(text, "edges", id).map_or_else(|| key_line(&["edges"]), |p| line_at(text, p));
    let msg = err.to_string();
    match err {
        Error::NonPositive { what: "edge", id, .. } | Error::SelfLoop(id) | Error::UnknownVertex { edge: id, .. } => edge_line(*id),
        Error::ParallelEdges(_, id) => edge_line(*id),
        Error::RoutingSum { .. } | Error::RoutingIncomplete { .. } | Error::RoutingNotIncident { .. } => key_line(&["network", "routing"]),
        Error::Disconnected(_) | Error::IsolatedVertex(_) => key_line(&["network", "num_vertices"]),
        _ if msg.contains("routing") => key_line(&["network", "routing"]),
        _ if msg.contains("q must") => key_line(&["hamiltonian", "q"]),
        _ if msg.contains("hamiltonian") => key_line(&["hamiltonian"]),
        _ if msg.contains("coupling") => key_line(&["coupling"]),
        _ if msg.contains("h_target") => key_line(&["discretization"]),
        _ if msg.contains("data:") || msg.contains("lambda") => key_line(&["data"]),
        _ if msg.contains("dt ") || msg.contains("burn-in") || msg.contains("sample") => key_line(&["simulation"]),
        _ if msg.contains("network") => key_line(&["network"]),
        _ => key_line(&["solver"]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Linear,
    Fp,
    Hjb,
    Mfg,
}

/// A solver result together with the problem that produced it.
#[derive(Debug, Clone)]
pub struct SolutionBundle {
    pub kind: SolutionKind,
    pub problem: ProblemSpec,
    pub v: Option<GridFunction>,
    pub m: Option<GridFunction>,
    /// Feedback `a* = -dH/dp(x, v')`.
    pub feedback: Option<EdgeField>,
    pub rho: Option<f64>,
    pub residuals: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn report_map(r: &ResidualReport) -> BTreeMap<String, f64> {
    match serde_json::to_value(r).expect("report serializes") {
        serde_json::Value::Object(o) => o.into_iter().map(|(k, v)| (k, v.as_f64().unwrap_or(f64::NAN))).collect(),
        _ => unreachable!("report is a struct"),
    }
}

impl SolutionBundle {
    pub fn linear(problem: &ProblemSpec, v: GridFunction) -> Result<SolutionBundle> {
        let mut b = SolutionBundle::empty(SolutionKind::Linear, problem);
        b.v = Some(v);
        b.residuals = recompute(&b)?;
        b.converged = true;
        Ok(b)
    }

    pub fn fp(problem: &ProblemSpec, density: &StationaryDensity) -> Result<SolutionBundle> {
        let mut b = SolutionBundle::empty(SolutionKind::Fp, problem);
        b.m = Some(density.m.clone());
        b.residuals = recompute(&b)?;
        b.converged = true;
        Ok(b)
    }

    pub fn hjb(problem: &ProblemSpec, sol: &ErgodicSolution) -> Result<SolutionBundle> {
        let mut b = SolutionBundle::empty(SolutionKind::Hjb, problem);
        b.v = Some(sol.v.clone());
        b.rho = Some(sol.rho);
        b.feedback = Some(feedback_velocity(&policy(sol.v.disc(), &problem.hamiltonian, sol.v.values(), None)));
        b.iterations = sol.iterations;
        b.residuals = recompute(&b)?;
        b.converged = true;
        Ok(b)
    }

    pub fn mfg(problem: &ProblemSpec, sol: &MfgSolution) -> Result<SolutionBundle> {
        let mut b = SolutionBundle::empty(SolutionKind::Mfg, problem);
        b.v = Some(sol.v.clone());
        b.m = Some(sol.m.clone());
        b.rho = Some(sol.rho);
        b.feedback = Some(feedback_velocity(&policy(sol.v.disc(), &problem.hamiltonian, sol.v.values(), None)));
        b.iterations = sol.iterations();
        b.residuals = report_map(&sol.residuals);
        b.converged = sol.converged;
        Ok(b)
    }

    fn empty(kind: SolutionKind, problem: &ProblemSpec) -> SolutionBundle {
        SolutionBundle {
            kind,
            problem: problem.clone(),
            v: None,
            m: None,
            feedback: None,
            rho: None,
            residuals: BTreeMap::new(),
            iterations: 0,
            converged: false,
        }
    }

    fn disc(&self) -> Option<&Arc<DiscreteNetwork>> {
        self.v.as_ref().or(self.m.as_ref()).map(|g| g.disc())
    }
}

/// Residuals of a bundle recomputed from its fields and problem.
pub fn recompute(b: &SolutionBundle) -> Result<BTreeMap<String, f64>> {
    let disc = b.disc().ok_or_else(|| Error::Mismatch("bundle holds neither v nor m".into()))?;
    let p = &b.problem;
    let need = |x: Option<&GridFunction>, what: &str| x.cloned().ok_or_else(|| Error::Mismatch(format!("bundle has no {what}")));
    let sup = |x: &[f64]| x.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let mut out = BTreeMap::new();
    match b.kind {
        SolutionKind::Linear => {
            let v = need(b.v.as_ref(), "v")?;
            let a = assemble_generator(disc, &p.drift_field(disc)?, p.data.lambda, Scheme::Centered)?;
            let rhs = load_vector(disc, &p.source_field(disc)?)?;
            let r: Vec<f64> = a.matrix.matvec(v.values()).iter().zip(&rhs).map(|(x, y)| x - y).collect();
            out.insert("equation".into(), sup(&r));
        }
        SolutionKind::Fp => {
            let m = need(b.m.as_ref(), "m")?;
            let a = assemble_generator(disc, &p.drift_field(disc)?, 0.0, Scheme::Upwind)?;
            let r = adjoint_fp(disc, &a)?.matrix.matvec(m.values());
            out.insert("fp".into(), sup(&r));
            out.insert("mass_defect".into(), (m.integrate() - 1.0).abs());
            out.insert(
                "min_m".into(),
                m.to_edge_field().values.iter().flatten().cloned().fold(f64::INFINITY, f64::min),
            );
        }
        SolutionKind::Hjb => {
            let v = need(b.v.as_ref(), "v")?;
            let rho = b.rho.ok_or_else(|| Error::Mismatch("bundle has no rho".into()))?;
            out.insert("hjb".into(), hjb_residual(disc, &p.hamiltonian, &p.source_field(disc)?, &v, rho)?);
            out.insert("v_integral".into(), v.integrate().abs());
        }
        SolutionKind::Mfg => {
            let v = need(b.v.as_ref(), "v")?;
            let m = need(b.m.as_ref(), "m")?;
            let rho = b.rho.ok_or_else(|| Error::Mismatch("bundle has no rho".into()))?;
            out = report_map(&residuals(disc, &p.hamiltonian, &p.coupling.spec, &v, &m, rho)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub kind: SolutionKind,
    pub config_hash: String,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub residuals: BTreeMap<String, f64>,
    pub columns: Vec<String>,
    pub problem: ProblemSpec,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |x| format!("{x:?}"))
}

/// Oriented derivative of the V-type `v` at node `j` of `edge`: centered
/// inside, one-sided at the endpoints.
fn derivative(v: &GridFunction, edge: usize, j: usize) -> f64 {
    let g = v.disc().grid(edge);
    let val = |k: usize| v.node_value(edge, k);
    if j == 0 {
        (val(1) - val(0)) / g.h
    } else if j == g.n {
        (val(g.n) - val(g.n - 1)) / g.h
    } else {
        (val(j + 1) - val(j - 1)) / (2.0 * g.h)
    }
}

pub fn solution_csv(b: &SolutionBundle) -> Result<String> {
    let disc = b.disc().ok_or_else(|| Error::Mismatch("bundle holds neither v nor m".into()))?;
    let mut s = format!("{CSV_HEADER}\n");
    for e in 0..disc.network().num_edges() {
        for j in 0..=disc.grid(e).n {
            let v = b.v.as_ref().map(|v| v.node_value(e, j));
            let dv = b.v.as_ref().map(|v| derivative(v, e, j));
            let m = b.m.as_ref().map(|m| m.node_value(e, j));
            let a = b.feedback.as_ref().map(|a| a.values[e][j]);
            let _ = writeln!(
                s,
                "{e},{j},{:?},{},{},{},{}",
                disc.node_position(e, j),
                fmt_opt(v),
                fmt_opt(dv),
                fmt_opt(m),
                fmt_opt(a)
            );
        }
    }
    Ok(s)
}

pub fn plot_data(b: &SolutionBundle) -> Result<String> {
    let disc = b.disc().ok_or_else(|| Error::Mismatch("bundle holds neither v nor m".into()))?;
    let net = disc.network();
    let mut s = String::new();
    for e in net.edges() {
        if e.id > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# edge {} ({} -> {}), columns: arclength v m a_star", e.id, e.tail, e.head);
        for j in 0..=disc.grid(e.id).n {
            let col = |x: Option<f64>| x.map_or_else(|| "NaN".to_string(), |x| format!("{x:?}"));
            let _ = writeln!(
                s,
                "{:?} {} {} {}",
                disc.node_position(e.id, j),
                col(b.v.as_ref().map(|v| v.node_value(e.id, j))),
                col(b.m.as_ref().map(|m| m.node_value(e.id, j))),
                col(b.feedback.as_ref().map(|a| a.values[e.id][j]))
            );
        }
    }
    Ok(s)
}

pub fn summary(b: &SolutionBundle) -> Summary {
    Summary {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        kind: b.kind,
        config_hash: b.problem.config_hash(),
        converged: b.converged,
        iterations: b.iterations,
        rho: b.rho,
        residuals: b.residuals.clone(),
        columns: CSV_HEADER.split(',').map(String::from).collect(),
        problem: b.problem.clone(),
    }
}

/// Writes `solution.csv`, `summary.json` and `plot.dat` into `dir`,
/// creating it if needed.
pub fn write_solution(b: &SolutionBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("solution.csv"), solution_csv(b)?)?;
    let json = serde_json::to_string_pretty(&summary(b)).expect("summary serializes");
    fs::write(dir.join("summary.json"), json + "\n")?;
    fs::write(dir.join("plot.dat"), plot_data(b)?)?;
    Ok(())
}

/// Directory of a bundle given either the directory or one of its files.
pub fn bundle_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}

struct CsvColumns {
    v: Vec<Vec<Option<f64>>>,
    m: Vec<Vec<Option<f64>>>,
    a: Vec<Vec<Option<f64>>>,
}

fn parse_csv(text: &str, disc: &DiscreteNetwork) -> Result<CsvColumns> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Syntax {
                line: 1,
                column: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let shape: Vec<Vec<Option<f64>>> = disc.grids().iter().map(|g| vec![None; g.n + 1]).collect();
    let mut cols = CsvColumns {
        v: shape.clone(),
        m: shape.clone(),
        a: shape,
    };
    let mut seen = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |column: usize, msg: String| Error::Syntax { line: i + 1, column, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(1, format!("expected 7 fields, found {}", fields.len())));
        }
        let int = |k: usize| fields[k].trim().parse::<usize>().map_err(|e| bad(k + 1, e.to_string()));
        let float = |k: usize| -> Result<Option<f64>> {
            let f = fields[k].trim();
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse::<f64>().map(Some).map_err(|e| bad(k + 1, e.to_string()))
            }
        };
        let (e, j) = (int(0)?, int(1)?);
        if e >= disc.grids().len() || j > disc.grid(e).n {
            return Err(bad(1, format!("node ({e}, {j}) is not on the grid of the embedded problem")));
        }
        cols.v[e][j] = float(3)?;
        cols.m[e][j] = float(5)?;
        cols.a[e][j] = float(6)?;
        seen += 1;
    }
    let expected: usize = disc.grids().iter().map(|g| g.n + 1).sum();
    if seen != expected {
        return Err(Error::Mismatch(format!(
            "solution.csv has {seen} rows, the grid has {expected} nodes"
        )));
    }
    Ok(cols)
}

/// Rebuilds a grid function from per-node values, reading each vertex from
/// the first incident side listed.
fn grid_function(disc: &Arc<DiscreteNetwork>, conv: Convention, nodes: &[Vec<Option<f64>>]) -> Result<Option<GridFunction>> {
    if nodes.iter().flatten().all(Option::is_none) {
        return Ok(None);
    }
    let mut values = vec![f64::NAN; disc.num_dofs()];
    for (e, col) in nodes.iter().enumerate() {
        for (j, x) in col.iter().enumerate() {
            let x = x.ok_or_else(|| Error::Mismatch(format!("missing value at node ({e}, {j})")))?;
            let dof = disc.node_dof(e, j);
            if dof < disc.num_vertices() {
                if values[dof].is_nan() {
                    values[dof] = x / disc.side_factor(conv, dof, e);
                }
            } else {
                values[dof] = x;
            }
        }
    }
    Ok(Some(GridFunction::new(disc.clone(), conv, values)?))
}

/// Reads a bundle written by [`write_solution`]. `path` is the bundle
/// directory or a file inside it.
pub fn load_solution(path: &Path) -> Result<SolutionBundle> {
    let dir = bundle_dir(path);
    let text = fs::read_to_string(dir.join("summary.json"))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    summary.problem.validate()?;
    let disc = summary.problem.discretize()?;
    let cols = parse_csv(&fs::read_to_string(dir.join("solution.csv"))?, &disc)?;
    let feedback = if cols.a.iter().flatten().all(Option::is_none) {
        None
    } else {
        let values = cols.a.iter().map(|c| c.iter().map(|x| x.unwrap_or(f64::NAN)).collect()).collect();
        Some(EdgeField { values })
    };
    Ok(SolutionBundle {
        kind: summary.kind,
        problem: summary.problem,
        v: grid_function(&disc, Convention::V, &cols.v)?,
        m: grid_function(&disc, Convention::W, &cols.m)?,
        feedback,
        rho: summary.rho,
        residuals: summary.residuals,
        iterations: summary.iterations,
        converged: summary.converged,
    })
}
