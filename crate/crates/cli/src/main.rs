use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfgnet::error::{Error, Result};
use mfgnet::io::{load_solution, read_problem_file, write_solution, ProblemSpec, SolutionBundle};
use mfgnet::mfg::solve_mfg;
use mfgnet::operators::Scheme;
use mfgnet::simulate::{compare_density, simulate_paths, SimulationResult};
use mfgnet::solvers::{solve_hjb_ergodic, solve_linear, solve_stationary_fp};
use mfgnet::validate::{format_table, run_suite};

#[derive(Parser)]
#[command(name = "mfgnet", version, about = "Stationary mean field games on metric networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve -mu v'' + b v' + lambda v = f with the problem's data section.
    SolveLinear(SolveArgs),
    /// Invariant density of the diffusion with the problem's drift.
    SolveFp(SolveArgs),
    /// Ergodic HJB equation with the problem's Hamiltonian and source.
    SolveHjb(SolveArgs),
    /// Coupled stationary MFG system.
    SolveMfg(SolveArgs),
    /// Monte Carlo occupation histogram compared against a density.
    Simulate(SimulateArgs),
    /// Property suite on the problem's network.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    /// Directory for solution.csv, summary.json and plot.dat.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    h_target: Option<f64>,
    /// Fixed-point tolerance (solve-mfg) or policy-iteration tolerance (solve-hjb).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    problem: PathBuf,
    /// Directory for histogram.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    h_target: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Recorded samples after burn-in, e.g. 1e7.
    #[arg(long)]
    samples: Option<f64>,
    /// Solution bundle (directory or its solution.csv) providing m and the feedback.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Largest accepted total-variation distance.
    #[arg(long, default_value_t = 0.02)]
    tv_max: f64,
}

#[derive(Args)]
struct ValidateArgs {
    problem: PathBuf,
    #[arg(long)]
    h_target: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn load(path: &Path, h_target: Option<f64>) -> Result<ProblemSpec> {
    let mut p = read_problem_file(path)?;
    if let Some(h) = h_target {
        p.discretization.h_target = h;
    }
    p.validate()?;
    Ok(p)
}

fn finish(bundle: &SolutionBundle, out: Option<&Path>) -> Result<()> {
    if let Some(rho) = bundle.rho {
        println!("rho = {rho:.12e}");
    }
    println!("iterations = {}", bundle.iterations);
    for (k, v) in &bundle.residuals {
        println!("residual {k} = {v:.3e}");
    }
    if let Some(dir) = out {
        write_solution(bundle, dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn solve(kind: &str, a: &SolveArgs) -> Result<bool> {
    let mut p = load(&a.problem, a.h_target)?;
    match kind {
        "mfg" => {
            if let Some(t) = a.tol {
                p.solver.tol = t;
            }
            if let Some(n) = a.max_iters {
                p.solver.max_iters = n;
            }
        }
        _ => {
            if let Some(t) = a.tol {
                p.solver.hjb_tol = t;
            }
            if let Some(n) = a.max_iters {
                p.solver.hjb_max_iters = n;
            }
        }
    }
    if let Some(d) = a.damping {
        p.solver.damping = d;
    }
    p.validate()?;
    let disc = p.discretize()?;
    let bundle = match kind {
        "linear" => {
            let v = solve_linear(
                &disc,
                &p.drift_field(&disc)?,
                p.data.lambda,
                &p.source_field(&disc)?,
                Scheme::Centered,
            )?;
            SolutionBundle::linear(&p, v)?
        }
        "fp" => SolutionBundle::fp(&p, &solve_stationary_fp(&disc, &p.drift_field(&disc)?)?)?,
        "hjb" => SolutionBundle::hjb(
            &p,
            &solve_hjb_ergodic(&disc, &p.hamiltonian, &p.source_field(&disc)?, &p.hjb_config())?,
        )?,
        _ => {
            let sol = solve_mfg(&disc, &p.hamiltonian, &p.coupling.spec, &p.mfg_config())?;
            if !sol.converged {
                let last = sol.history.last().map_or(f64::NAN, |r| r.m_change);
                eprintln!(
                    "error: fixed point did not converge after {} iterations (last change {last:.3e}, largest residual {:.3e})",
                    sol.iterations(),
                    sol.residuals.max_equation()
                );
            }
            SolutionBundle::mfg(&p, &sol)?
        }
    };
    finish(&bundle, a.out.as_deref())?;
    Ok(bundle.converged)
}

fn max_routing_deviation(r: &SimulationResult) -> f64 {
    let net = &r.split.network;
    (0..net.num_vertices())
        .filter(|&i| net.sides(i).len() > 1)
        .flat_map(|i| {
            let freq = r.routing.frequencies(i);
            net.sides(i)
                .iter()
                .zip(freq)
                .map(|(s, f)| (f - s.p).abs() / s.p)
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

fn simulate(a: &SimulateArgs) -> Result<bool> {
    let mut p = load(&a.problem, a.h_target)?;
    let mut cfg = p.sim_config();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.samples {
        if !(n >= 1.0 && n.is_finite()) {
            return Err(Error::Config(format!("--samples must be at least 1, got {n}")));
        }
        cfg.samples = n.round() as u64;
    }
    p.simulation = Some(cfg);
    p.validate()?;
    let (disc, m, velocity) = match &a.against {
        Some(path) => {
            let b = load_solution(path)?;
            if b.problem.network != p.network {
                return Err(Error::Mismatch("the --against solution was computed on a different network".into()));
            }
            let m =
                b.m.ok_or_else(|| Error::Mismatch("the --against solution holds no density".into()))?;
            let disc = m.disc().clone();
            let velocity = match b.feedback {
                Some(a) => a,
                None => b.problem.drift_field(&disc)?.map(|x| -x),
            };
            (disc, m, velocity)
        }
        None => {
            let disc = p.discretize()?;
            let b = p.drift_field(&disc)?;
            let m = solve_stationary_fp(&disc, &b)?.m;
            (disc, m, b.map(|x| -x))
        }
    };
    let result = simulate_paths(&disc, Some(&velocity), &cfg)?;
    let tv = compare_density(&result.histogram, &m)?;
    println!("samples = {}", result.histogram.total);
    println!("steps = {}", result.steps);
    println!("config hash = {}", p.config_hash());
    println!("routing max relative deviation = {:.3e}", max_routing_deviation(&result));
    println!("TV = {tv:.5}");
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("histogram.csv"), result.histogram.to_csv())?;
        println!("wrote {}", dir.display());
    }
    if tv >= a.tv_max {
        eprintln!("error: TV distance {tv:.5} is not below {}", a.tv_max);
        return Ok(false);
    }
    Ok(true)
}

fn validate(a: &ValidateArgs) -> Result<bool> {
    let p = load(&a.problem, a.h_target)?;
    let checks = run_suite(&p, a.seed)?;
    print!("{}", format_table(&checks));
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::SolveLinear(a) => solve("linear", a),
        Command::SolveFp(a) => solve("fp", a),
        Command::SolveHjb(a) => solve("hjb", a),
        Command::SolveMfg(a) => solve("mfg", a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
