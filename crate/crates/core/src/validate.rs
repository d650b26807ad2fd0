//! Property checks run on a user network: generator kernel, discrete
//! duality, stationary densities, the analytic linear oracle, the ergodic
//! bound and the two ergodic solution paths.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{build_grids, Convention, EdgeField, GridFunction};
use crate::hamiltonian::HamiltonianSpec;
use crate::io::ProblemSpec;
use crate::operators::{adjoint_fp, assemble_generator, pair_rows, Scheme};
use crate::oracle::analytic_linear_oracle;
use crate::solvers::{rho_bound, solve_hjb_ergodic, solve_linear_kirchhoff, solve_stationary_fp, vanishing_discount, VANISHING_LAMBDAS};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Measured quantity; `passed` compares it with `threshold`.
    pub value: f64,
    pub threshold: f64,
    /// True when `value` must stay below `threshold`, false when above.
    pub upper: bool,
    pub passed: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64) -> Check {
        Check {
            name,
            value,
            threshold,
            upper: true,
            passed: value <= threshold,
        }
    }

    fn above(name: &'static str, value: f64, threshold: f64) -> Check {
        Check {
            name,
            value,
            threshold,
            upper: false,
            passed: value >= threshold,
        }
    }
}

/// Pass/fail table with one row per check.
pub fn format_table(checks: &[Check]) -> String {
    let mut s = format!("{:<28} {:>12} {:>14}  result\n", "check", "value", "threshold");
    for c in checks {
        let op = if c.upper { "<=" } else { ">=" };
        s.push_str(&format!(
            "{:<28} {:>12.3e} {} {:>11.3e}  {}\n",
            c.name,
            c.value,
            op,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}

/// Runs every check on the network and Hamiltonian of `problem` at its
/// target step.
pub fn run_suite(problem: &ProblemSpec, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = problem.build_network()?;
    let ne = net.num_edges();
    let disc = problem.discretize()?;
    let mut checks = Vec::new();

    let random_drift = |rng: &mut ChaCha8Rng| {
        let amp: Vec<(f64, f64, f64)> = (0..ne)
            .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(0.5..4.0), rng.random_range(0.0..6.0)))
            .collect();
        EdgeField::from_fn(&disc, |e, y| amp[e].0 * (amp[e].1 * y + amp[e].2).cos())
    };

    let mut kernel: f64 = 0.0;
    for _ in 0..5 {
        let b = random_drift(&mut rng);
        for scheme in [Scheme::Centered, Scheme::Upwind] {
            let a = assemble_generator(&disc, &b, 0.0, scheme)?;
            kernel = kernel.max(a.matrix.matvec(&vec![1.0; disc.num_dofs()]).iter().fold(0.0, |m, x| m.max(x.abs())));
        }
    }
    checks.push(Check::below("generator kernel", kernel, 1e-13));

    let mut duality: f64 = 0.0;
    for _ in 0..10 {
        let b = random_drift(&mut rng);
        let a = assemble_generator(&disc, &b, 0.0, Scheme::Upwind)?;
        let astar = adjoint_fp(&disc, &a)?;
        let v: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = GridFunction::new(disc.clone(), Convention::V, v)?;
        let m = GridFunction::new(disc.clone(), Convention::W, m)?;
        let lhs = pair_rows(&disc, &a.apply(&v)?, m.values());
        let am = GridFunction::new(disc.clone(), Convention::W, astar.apply(&m)?)?;
        let rhs = v.pair(&am)?;
        let norm = |x: &[f64]| x.iter().map(|y| y * y).sum::<f64>().sqrt();
        let scale = norm(v.values()) * norm(m.values());
        duality = duality.max((lhs - rhs).abs() / scale);
    }
    checks.push(Check::below("discrete duality (relative)", duality, 1e-12));

    let (mut min_m, mut mass): (f64, f64) = (f64::INFINITY, 0.0);
    for _ in 0..5 {
        let d = solve_stationary_fp(&disc, &random_drift(&mut rng))?;
        min_m = min_m.min(d.min);
        mass = mass.max((d.m.integrate() - 1.0).abs());
    }
    checks.push(Check::above("stationary density min", min_m, f64::MIN_POSITIVE));
    checks.push(Check::below("stationary density mass", mass, 1e-12));

    let loads: Vec<f64> = (0..ne).map(|_| rng.random_range(-1.0..1.0)).collect();
    let oracle = analytic_linear_oracle(&net, 1.0, &loads)?;
    let h0 = net.min_length() / 16.0;
    let mut errors = Vec::new();
    for k in 0..3 {
        let d = Arc::new(build_grids(&net, h0 / f64::from(1 << k))?);
        let v = solve_linear_kirchhoff(&d, 1.0, &EdgeField::per_edge(&d, &loads)?)?;
        let mut err: f64 = 0.0;
        for e in 0..ne {
            for j in 0..=d.grid(e).n {
                err = err.max((v.node_value(e, j) - oracle.eval(e, d.node_position(e, j))).abs());
            }
        }
        errors.push(err);
    }
    let order = (errors[1] / errors[2]).log2().min((errors[0] / errors[1]).log2());
    checks.push(Check::above("linear oracle order", order, 1.9));

    let ham: &HamiltonianSpec = &problem.hamiltonian;
    let f = EdgeField::per_edge(&disc, &(0..ne).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())?;
    let cfg = problem.hjb_config();
    let erg = solve_hjb_ergodic(&disc, ham, &f, &cfg)?;
    checks.push(Check::below("ergodic bound excess", erg.rho.abs() - rho_bound(ham, &f), 1e-8));
    checks.push(Check::below("ergodic residual", erg.residual, 1e-8));
    let vd = vanishing_discount(&disc, ham, &f, &VANISHING_LAMBDAS, &cfg)?;
    checks.push(Check::below("vanishing discount gap", (vd.rho - erg.rho).abs(), 1e-3));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::star;

    #[test]
    fn star_passes_every_check() {
        let net = star(&[1.0, 0.8, 1.3], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap();
        let mut p = ProblemSpec::new(&net);
        p.discretization.h_target = 1.0 / 32.0;
        let checks = run_suite(&p, 7).unwrap();
        let table = format_table(&checks);
        assert!(checks.iter().all(|c| c.passed), "{table}");
        assert_eq!(table.lines().count(), checks.len() + 1);
    }
}
