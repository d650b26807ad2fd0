//! Linear Kirchhoff problems, stationary Fokker-Planck densities, and
//! discounted / ergodic HJB equations by policy iteration.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Convention, DiscreteNetwork, EdgeField, GridFunction};
use crate::hamiltonian::{policy, HamiltonianSpec, Policy};
use crate::linalg::Border;
use crate::operators::{adjoint_fp, assemble_generator, load_vector, DriftField, Scheme, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbConfig {
    /// Stop when the sup-norm change of `v` (and `rho`) is at most this,
    /// relative to `max(1, |v|, |rho|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// How many times the Hamiltonian truncation may double.
    pub max_doublings: usize,
    /// Also run the vanishing-discount path and require agreement.
    pub cross_check: bool,
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig {
            tol: 1e-9,
            max_iter: 200,
            max_doublings: 30,
            cross_check: false,
        }
    }
}

/// Discount factors of the vanishing-discount path.
pub const VANISHING_LAMBDAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Largest allowed disagreement between the two ergodic paths.
pub const CROSS_CHECK_TOL: f64 = 1e-3;

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn l2(disc: &DiscreteNetwork, x: &[f64]) -> f64 {
    disc.row_weights().iter().zip(x).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
}

/// Solves `-mu v'' + b v' + lambda v = f` with Kirchhoff vertex rows.
pub fn solve_linear(disc: &Arc<DiscreteNetwork>, b: &DriftField, lambda: f64, f: &EdgeField, scheme: Scheme) -> Result<GridFunction> {
    let a = assemble_generator(disc, b, lambda, scheme)?;
    let rhs = load_vector(disc, f)?;
    let v = a.matrix.solve(&rhs)?;
    let r: Vec<f64> = a.matrix.matvec(&v).iter().zip(&rhs).map(|(x, y)| x - y).collect();
    let (res, scale) = (l2(disc, &r), l2(disc, &rhs));
    if res > 1e-10 * scale.max(f64::MIN_POSITIVE) && res > 1e-13 {
        return Err(Error::Check(format!("linear solve residual {res:e} for load norm {scale:e}")));
    }
    GridFunction::new(disc.clone(), Convention::V, v)
}

/// `-mu v'' + lambda v = f`, `lambda > 0`.
pub fn solve_linear_kirchhoff(disc: &Arc<DiscreteNetwork>, lambda: f64, f: &EdgeField) -> Result<GridFunction> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    solve_linear(disc, &EdgeField::zeros(disc), lambda, f, Scheme::Centered)
}

#[derive(Debug, Clone)]
pub struct StationaryDensity {
    /// W-type density with unit mass.
    pub m: GridFunction,
    /// Smallest reconstructed value.
    pub min: f64,
    /// Multiplier of the bordering column; zero up to rounding.
    pub multiplier: f64,
}

/// Normalized kernel of a W-type operator whose left kernel is one
/// dimensional and not orthogonal to constants.
pub fn invariant_density(disc: &Arc<DiscreteNetwork>, op: &SparseOperator) -> Result<StationaryDensity> {
    if op.convention != Convention::W {
        return Err(Error::Mismatch("invariant density needs an operator on W-type functions".into()));
    }
    let dim = disc.num_dofs();
    let border = Border {
        column: vec![1.0; dim],
        row: disc.quadrature(Convention::W).to_vec(),
        corner: 0.0,
        rhs: 1.0,
    };
    let (mut m, sigma) = op
        .matrix
        .solve_bordered(&vec![0.0; dim], Some(&border))
        .map_err(|_| Error::Singular("stationary operator: kernel dimension is not one".into()))?;
    let scale = op.matrix.triplets().iter().fold(0.0f64, |a, t| a.max(t.2.abs()));
    if sigma.abs() > 1e-8 * scale.max(1.0) {
        return Err(Error::Singular(format!(
            "stationary operator: kernel dimension is not one (border multiplier {sigma:e})"
        )));
    }
    let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-12 {
        return Err(Error::Check(format!("stationary density has negative value {min:e}")));
    }
    for x in &mut m {
        *x = x.max(0.0);
    }
    let mut m = GridFunction::new(disc.clone(), Convention::W, m)?;
    let mass = m.integrate();
    for x in m.values_mut() {
        *x /= mass;
    }
    let min = m.to_edge_field().values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    Ok(StationaryDensity { m, min, multiplier: sigma })
}

/// Invariant density of the generator with drift `b`, via its weighted
/// adjoint.
pub fn solve_stationary_fp(disc: &Arc<DiscreteNetwork>, b: &DriftField) -> Result<StationaryDensity> {
    let a = assemble_generator(disc, b, 0.0, Scheme::Upwind)?;
    invariant_density(disc, &adjoint_fp(disc, &a)?)
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Discounted(f64),
    Ergodic,
}

struct Howard {
    v: Vec<f64>,
    rho: f64,
    iterations: usize,
    residual: f64,
    truncation: f64,
    policy: Policy,
}

/// Linear solve for one policy, with the system it solved.
struct PolicyStep {
    v: Vec<f64>,
    rho: f64,
    a: SparseOperator,
    rhs: Vec<f64>,
    /// Load vector of the constant 1, the column multiplying `rho`.
    column: Vec<f64>,
}

fn policy_step(disc: &DiscreteNetwork, pol: &Policy, f: &EdgeField, mode: Mode) -> Result<PolicyStep> {
    let lambda = match mode {
        Mode::Discounted(l) => l,
        Mode::Ergodic => 0.0,
    };
    let a = assemble_generator(disc, &pol.drift, lambda, Scheme::Upwind)?;
    let load = EdgeField {
        values: f
            .values
            .iter()
            .zip(&pol.source.values)
            .map(|(x, y)| x.iter().zip(y).map(|(a, b)| a + b).collect())
            .collect(),
    };
    let rhs = load_vector(disc, &load)?;
    let column = load_vector(disc, &EdgeField::constant(disc, 1.0))?;
    let (v, rho) = match mode {
        Mode::Discounted(_) => (a.matrix.solve(&rhs)?, 0.0),
        Mode::Ergodic => {
            let border = Border {
                column: column.clone(),
                row: disc.quadrature(Convention::V).to_vec(),
                corner: 0.0,
                rhs: 0.0,
            };
            a.matrix.solve_bordered(&rhs, Some(&border))?
        }
    };
    Ok(PolicyStep { v, rho, a, rhs, column })
}

/// Tolerances are absolute for `O(1)` solutions and relative beyond, since
/// discounted values grow like `1 / lambda`.
fn scale(v: &[f64], rho: f64) -> f64 {
    v.iter().fold(rho.abs().max(1.0), |a, x| a.max(x.abs()))
}

fn howard(
    disc: &DiscreteNetwork,
    ham: &HamiltonianSpec,
    f: &EdgeField,
    mode: Mode,
    initial: Option<&[f64]>,
    cfg: &HjbConfig,
) -> Result<Howard> {
    ham.validate(disc.network().num_edges())?;
    f.check(disc)?;
    let mut v = match initial {
        Some(v0) if v0.len() == disc.num_dofs() => v0.to_vec(),
        Some(_) => return Err(Error::Mismatch("initial guess does not match the grid".into())),
        None => vec![0.0; disc.num_dofs()],
    };
    let slope0 = policy(disc, ham, &v, None).max_slope;
    let mut n = (10.0 * (1.0 + slope0)).max(2.0 * ham.max_argmin() + 1.0);
    let mut rho = 0.0;
    let mut iterations = 0;
    for _ in 0..=cfg.max_doublings {
        let mut change = f64::INFINITY;
        for _ in 0..cfg.max_iter {
            iterations += 1;
            let pol = policy(disc, ham, &v, Some(n));
            let PolicyStep { v: vn, rho: rn, .. } = policy_step(disc, &pol, f, mode)?;
            change = v.iter().zip(&vn).fold((rn - rho).abs(), |a, (x, y)| a.max((x - y).abs()));
            v = vn;
            rho = rn;
            if change <= cfg.tol * scale(&v, rho) {
                break;
            }
        }
        if change > cfg.tol * scale(&v, rho) {
            return Err(Error::NoConvergence {
                what: "policy iteration",
                iterations,
                residual: change,
            });
        }
        let pol = policy(disc, ham, &v, Some(n));
        if pol.max_slope <= n {
            // residual of the discrete equation at the final policy
            let PolicyStep { a, rhs, column, .. } = policy_step(disc, &pol, f, mode)?;
            let av = a.matrix.matvec(&v);
            let residual = sup(&av
                .iter()
                .zip(&rhs)
                .zip(&column)
                .map(|((x, y), c)| x + rho * c - y)
                .collect::<Vec<_>>());
            return Ok(Howard {
                v,
                rho,
                iterations,
                residual,
                truncation: n,
                policy: pol,
            });
        }
        n *= 2.0;
    }
    Err(Error::NoConvergence {
        what: "hamiltonian truncation",
        iterations,
        residual: n,
    })
}

#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub v: GridFunction,
    pub iterations: usize,
    /// Sup norm of the discrete equation residual.
    pub residual: f64,
    /// Final Hamiltonian truncation level (inactive at the solution).
    pub truncation: f64,
    pub policy: Policy,
}

/// `-mu v'' + H(x, v') + lambda v = f` with Kirchhoff vertex rows.
pub fn solve_discounted_hjb(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    f: &EdgeField,
    lambda: f64,
    cfg: &HjbConfig,
) -> Result<DiscountedSolution> {
    solve_discounted_hjb_from(disc, ham, f, lambda, None, cfg)
}

/// [`solve_discounted_hjb`] started from a given V-type vector.
pub fn solve_discounted_hjb_from(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    f: &EdgeField,
    lambda: f64,
    initial: Option<&[f64]>,
    cfg: &HjbConfig,
) -> Result<DiscountedSolution> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let h = howard(disc, ham, f, Mode::Discounted(lambda), initial, cfg)?;
    Ok(DiscountedSolution {
        v: GridFunction::new(disc.clone(), Convention::V, h.v)?,
        iterations: h.iterations,
        residual: h.residual,
        truncation: h.truncation,
        policy: h.policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErgodicMethod {
    PolicyIteration,
    VanishingDiscount,
}

#[derive(Debug, Clone)]
pub struct ErgodicSolution {
    /// V-type, `int v = 0`.
    pub v: GridFunction,
    pub rho: f64,
    pub iterations: usize,
    pub residual: f64,
    pub truncation: f64,
    pub policy: Policy,
    pub method: ErgodicMethod,
    /// `rho` of the vanishing-discount path when it was also run.
    pub cross_check_rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct VanishingDiscount {
    pub lambdas: Vec<f64>,
    /// `lambda * mean(v_lambda)` per discount.
    pub estimates: Vec<f64>,
    /// Extrapolation of the last two estimates to `lambda = 0`.
    pub rho: f64,
    /// `v_lambda - mean(v_lambda)` at the smallest discount.
    pub v: Vec<f64>,
    pub iterations: usize,
}

/// Discounted solves along decreasing `lambdas`, each warm-started from the
/// previous one shifted by the current estimate of `rho / lambda`.
pub fn vanishing_discount(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    f: &EdgeField,
    lambdas: &[f64],
    cfg: &HjbConfig,
) -> Result<VanishingDiscount> {
    if lambdas.len() < 2 || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Config("vanishing discount needs at least two positive discounts".into()));
    }
    let wv = disc.quadrature(Convention::V);
    let length = disc.network().total_length();
    let mean = |v: &[f64]| wv.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() / length;
    let mut estimates = Vec::with_capacity(lambdas.len());
    let mut v: Option<Vec<f64>> = None;
    let mut iterations = 0;
    for &lambda in lambdas {
        let start = v.as_ref().map(|prev| {
            let mu = mean(prev);
            let est = *estimates.last().unwrap();
            prev.iter().map(|x| x - mu + est / lambda).collect::<Vec<_>>()
        });
        let h = howard(disc, ham, f, Mode::Discounted(lambda), start.as_deref(), cfg)?;
        iterations += h.iterations;
        estimates.push(lambda * mean(&h.v));
        v = Some(h.v);
    }
    let k = lambdas.len();
    let (l1, l2) = (lambdas[k - 2], lambdas[k - 1]);
    let (r1, r2) = (estimates[k - 2], estimates[k - 1]);
    let rho = (l2 * r1 - l1 * r2) / (l2 - l1);
    let v = v.unwrap();
    let mu = mean(&v);
    Ok(VanishingDiscount {
        lambdas: lambdas.to_vec(),
        estimates,
        rho,
        v: v.iter().map(|x| x - mu).collect(),
        iterations,
    })
}

/// `-mu v'' + H(x, v') + rho = f`, Kirchhoff vertex rows, `int v = 0`.
pub fn solve_hjb_ergodic(disc: &Arc<DiscreteNetwork>, ham: &HamiltonianSpec, f: &EdgeField, cfg: &HjbConfig) -> Result<ErgodicSolution> {
    solve_hjb_ergodic_from(disc, ham, f, None, cfg)
}

/// [`solve_hjb_ergodic`] started from a given V-type vector.
pub fn solve_hjb_ergodic_from(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    f: &EdgeField,
    initial: Option<&[f64]>,
    cfg: &HjbConfig,
) -> Result<ErgodicSolution> {
    let primary = howard(disc, ham, f, Mode::Ergodic, initial, cfg);
    let mut sol = match primary {
        Ok(h) => ErgodicSolution {
            v: GridFunction::new(disc.clone(), Convention::V, h.v)?,
            rho: h.rho,
            iterations: h.iterations,
            residual: h.residual,
            truncation: h.truncation,
            policy: h.policy,
            method: ErgodicMethod::PolicyIteration,
            cross_check_rho: None,
        },
        Err(Error::NoConvergence { .. }) => {
            let vd = vanishing_discount(disc, ham, f, &VANISHING_LAMBDAS, cfg)?;
            let pol = policy(disc, ham, &vd.v, None);
            let truncation = pol.max_slope;
            ErgodicSolution {
                v: GridFunction::new(disc.clone(), Convention::V, vd.v)?,
                rho: vd.rho,
                iterations: vd.iterations,
                residual: f64::NAN,
                truncation,
                policy: pol,
                method: ErgodicMethod::VanishingDiscount,
                cross_check_rho: Some(vd.rho),
            }
        }
        Err(e) => return Err(e),
    };
    let integral = sol.v.integrate();
    let vmax = sol.v.values().iter().fold(1.0f64, |a, x| a.max(x.abs()));
    if integral.abs() > 1e-10 * vmax {
        return Err(Error::Check(format!("ergodic solution has int v = {integral:e}")));
    }
    if cfg.cross_check && sol.method == ErgodicMethod::PolicyIteration {
        let vd = vanishing_discount(disc, ham, f, &VANISHING_LAMBDAS, cfg)?;
        if (vd.rho - sol.rho).abs() > CROSS_CHECK_TOL {
            return Err(Error::Check(format!(
                "ergodic constant {} disagrees with the vanishing-discount value {}",
                sol.rho, vd.rho
            )));
        }
        sol.cross_check_rho = Some(vd.rho);
    }
    Ok(sol)
}

/// Sup norm of the ergodic HJB equation at `(v, rho)`, with the policy
/// recomputed from `v`.
pub fn hjb_residual(disc: &Arc<DiscreteNetwork>, ham: &HamiltonianSpec, f: &EdgeField, v: &GridFunction, rho: f64) -> Result<f64> {
    ham.validate(disc.network().num_edges())?;
    f.check(disc)?;
    if v.convention() != Convention::V || **v.disc() != **disc {
        return Err(Error::Mismatch("hjb residual needs a V-type v on the same grid".into()));
    }
    let pol = policy(disc, ham, v.values(), None);
    let PolicyStep { a, rhs, column, .. } = policy_step(disc, &pol, f, Mode::Ergodic)?;
    let av = a.matrix.matvec(v.values());
    Ok(av
        .iter()
        .zip(&rhs)
        .zip(&column)
        .fold(0.0, |acc, ((x, y), c)| acc.max((x + rho * c - y).abs())))
}

/// `max |H(x, 0) - f(x)|` over grid nodes, which bounds `|rho|` and
/// `|lambda v_lambda|`.
pub fn rho_bound(ham: &HamiltonianSpec, f: &EdgeField) -> f64 {
    f.values
        .iter()
        .enumerate()
        .flat_map(|(e, fe)| fe.iter().map(move |x| (ham.value(e, 0.0) - x).abs()))
        .fold(0.0, f64::max)
}
