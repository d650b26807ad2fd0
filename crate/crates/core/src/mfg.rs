//! Damped fixed-point iteration for the stationary MFG system
//!
//! ```text
//! -mu v'' + H(x, v') + rho = F(m),   -mu m'' - (m dH/dp(x, v'))' = 0,
//! int v = 0,   int m = 1,   m >= 0,
//! ```
//!
//! with Kirchhoff conditions on `v` and the dual flux and jump conditions on
//! `m`. Each outer step solves the ergodic HJB equation for the current
//! coupling, takes the invariant density of the resulting feedback, and
//! mixes it into the current density.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{truncate_coupling, CouplingSpec};
use crate::error::{Error, Result};
use crate::grid::{Convention, DiscreteNetwork, EdgeField, GridFunction};
use crate::hamiltonian::{policy, HamiltonianSpec};
use crate::operators::{adjoint_fp, assemble_generator, load_vector, Scheme};
use crate::solvers::{solve_hjb_ergodic_from, solve_stationary_fp, HjbConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfgConfig {
    /// Weight of the new density in `m <- (1 - tau) m + tau m_hat`.
    pub damping: f64,
    /// Stop when `sup |m_hat - m| <= tol` ...
    pub tol: f64,
    /// ... and every residual of [`ResidualReport::max_equation`] is below this.
    pub residual_tol: f64,
    pub max_iters: usize,
    pub hjb: HjbConfig,
}

impl Default for MfgConfig {
    fn default() -> Self {
        MfgConfig {
            damping: 0.5,
            tol: 1e-10,
            residual_tol: 1e-7,
            max_iters: 2000,
            hjb: HjbConfig::default(),
        }
    }
}

impl MfgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0,1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) || !(self.residual_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sup norms of the discrete equations, each over its own rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub hjb_interior: f64,
    pub fp_interior: f64,
    /// Vertex rows of the HJB equation (discrete Kirchhoff condition).
    pub kirchhoff: f64,
    /// Vertex rows of the Fokker-Planck equation (discrete flux condition).
    pub fp_flux: f64,
    /// Structural in the V-type numbering.
    pub v_continuity: f64,
    /// Structural in the W-type numbering.
    pub jump_ratio: f64,
    pub v_integral: f64,
    pub mass_defect: f64,
    pub min_m: f64,
}

impl ResidualReport {
    /// Largest equation residual (HJB, FP, both vertex conditions).
    pub fn max_equation(&self) -> f64 {
        self.hjb_interior.max(self.fp_interior).max(self.kirchhoff).max(self.fp_flux)
    }

    /// Largest residual of any kind, `min_m` excluded.
    pub fn max(&self) -> f64 {
        self.max_equation()
            .max(self.v_continuity)
            .max(self.jump_ratio)
            .max(self.v_integral)
            .max(self.mass_defect)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup |m_hat - m|` before mixing.
    pub m_change: f64,
    pub rho: f64,
    pub damping: f64,
    pub coupling_truncation: f64,
    pub hamiltonian_truncation: f64,
    pub hjb_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub v: GridFunction,
    pub m: GridFunction,
    pub rho: f64,
    pub residuals: ResidualReport,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl MfgSolution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// `m = 1 / L` in the interior; vertex unknowns chosen so the mean side
/// value is `1 / L`, then normalized to unit mass.
pub fn uniform_density(disc: &Arc<DiscreteNetwork>) -> GridFunction {
    let net = disc.network();
    let length = net.total_length();
    let mut m = GridFunction::zeros(disc.clone(), Convention::W);
    for (k, x) in m.values_mut().iter_mut().enumerate() {
        *x = if k < net.num_vertices() {
            let sides = net.sides(k);
            let mean_gamma = sides.iter().map(|s| s.gamma).sum::<f64>() / sides.len() as f64;
            1.0 / (length * mean_gamma)
        } else {
            1.0 / length
        };
    }
    let mass = m.integrate();
    for x in m.values_mut() {
        *x /= mass;
    }
    m
}

fn coupling_field(coupling: &CouplingSpec, m: &GridFunction) -> EdgeField {
    m.to_edge_field().map(|r| coupling.eval(r))
}

fn field_sup_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    let (fa, fb) = (a.to_edge_field(), b.to_edge_field());
    fa.values
        .iter()
        .flatten()
        .zip(fb.values.iter().flatten())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

fn field_max(m: &GridFunction) -> f64 {
    m.to_edge_field().values.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn check_inputs(disc: &DiscreteNetwork, ham: &HamiltonianSpec, coupling: &CouplingSpec) -> Result<()> {
    ham.validate(disc.network().num_edges())?;
    coupling.validate()
}

pub fn solve_mfg(disc: &Arc<DiscreteNetwork>, ham: &HamiltonianSpec, coupling: &CouplingSpec, cfg: &MfgConfig) -> Result<MfgSolution> {
    solve_mfg_from(disc, ham, coupling, &uniform_density(disc), cfg)
}

/// [`solve_mfg`] started from a given W-type density (normalized first).
pub fn solve_mfg_from(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    coupling: &CouplingSpec,
    initial: &GridFunction,
    cfg: &MfgConfig,
) -> Result<MfgSolution> {
    check_inputs(disc, ham, coupling)?;
    cfg.validate()?;
    if initial.convention() != Convention::W || **initial.disc() != **disc {
        return Err(Error::Mismatch("initial density must be W-type on the same grid".into()));
    }
    if initial.values().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Config("initial density must be nonnegative".into()));
    }
    let mut m = GridFunction::new(disc.clone(), Convention::W, initial.values().to_vec())?;
    let mass = m.integrate();
    if !(mass > 0.0) {
        return Err(Error::Config("initial density has no mass".into()));
    }
    for x in m.values_mut() {
        *x /= mass;
    }

    let mut n_f = 10.0 * field_max(&m).max(1.0);
    let mut v_prev: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    let mut best: Option<(f64, GridFunction, GridFunction, f64)> = None;
    for iteration in 1..=cfg.max_iters {
        while field_max(&m) > 0.5 * n_f {
            n_f *= 2.0;
        }
        let f_n = truncate_coupling(coupling, n_f)?;
        let f = coupling_field(&f_n, &m);
        let erg = solve_hjb_ergodic_from(disc, ham, &f, v_prev.as_deref(), &cfg.hjb)?;
        let m_hat = solve_stationary_fp(disc, &erg.policy.drift)?.m;
        let change = field_sup_diff(&m_hat, &m);
        history.push(IterationRecord {
            iteration,
            m_change: change,
            rho: erg.rho,
            damping: cfg.damping,
            coupling_truncation: n_f,
            hamiltonian_truncation: erg.truncation,
            hjb_iterations: erg.iterations,
        });
        if best.as_ref().is_none_or(|b| change < b.0) {
            best = Some((change, erg.v.clone(), m_hat.clone(), erg.rho));
        }
        if change <= cfg.tol && field_max(&m_hat) < n_f {
            let residuals = residuals(disc, ham, coupling, &erg.v, &m_hat, erg.rho)?;
            if residuals.max_equation() <= cfg.residual_tol {
                return Ok(MfgSolution {
                    v: erg.v,
                    m: m_hat,
                    rho: erg.rho,
                    residuals,
                    history,
                    converged: true,
                });
            }
        }
        let tau = cfg.damping;
        let mut next = m.clone();
        for (x, y) in next.values_mut().iter_mut().zip(m_hat.values()) {
            *x = (1.0 - tau) * *x + tau * y;
        }
        let mass = next.integrate();
        for x in next.values_mut() {
            *x /= mass;
        }
        m = next;
        v_prev = Some(erg.v.into_values());
    }
    let (_, v, m, rho) = best.expect("at least one iteration");
    let residuals = residuals(disc, ham, coupling, &v, &m, rho)?;
    Ok(MfgSolution {
        v,
        m,
        rho,
        residuals,
        history,
        converged: false,
    })
}

/// Residuals of `(v, m, rho)`; the feedback is recomputed from `v`.
pub fn residuals(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    coupling: &CouplingSpec,
    v: &GridFunction,
    m: &GridFunction,
    rho: f64,
) -> Result<ResidualReport> {
    check_inputs(disc, ham, coupling)?;
    if v.convention() != Convention::V || m.convention() != Convention::W {
        return Err(Error::Mismatch("residuals need a V-type v and a W-type m".into()));
    }
    if **v.disc() != **disc || **m.disc() != **disc {
        return Err(Error::Mismatch("solution lives on a different grid".into()));
    }
    let nv = disc.num_vertices();
    let pol = policy(disc, ham, v.values(), None);
    let a = assemble_generator(disc, &pol.drift, 0.0, Scheme::Upwind)?;
    let f = coupling_field(coupling, m);
    let mut load = f.clone();
    for (l, s) in load.values.iter_mut().zip(&pol.source.values) {
        for (x, y) in l.iter_mut().zip(s) {
            *x += y;
        }
    }
    let rhs = load_vector(disc, &load)?;
    let column = load_vector(disc, &EdgeField::constant(disc, 1.0))?;
    let hjb: Vec<f64> = a
        .matrix
        .matvec(v.values())
        .iter()
        .zip(rhs.iter().zip(&column))
        .map(|(x, (r, c))| x + rho * c - r)
        .collect();
    let fp = adjoint_fp(disc, &a)?.matrix.matvec(m.values());
    let sup = |x: &[f64]| x.iter().fold(0.0f64, |acc, y| acc.max(y.abs()));
    let min_m = m.to_edge_field().values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    Ok(ResidualReport {
        hjb_interior: sup(&hjb[nv..]),
        fp_interior: sup(&fp[nv..]),
        kirchhoff: sup(&hjb[..nv]),
        fp_flux: sup(&fp[..nv]),
        v_continuity: 0.0,
        jump_ratio: 0.0,
        v_integral: v.integrate().abs(),
        mass_defect: (m.integrate() - 1.0).abs(),
        min_m,
    })
}

/// `rho - int F(m) m - int (b g - H(g)) m` with `b = dH/dp(g)` the feedback
/// of `v` at its selected gradients `g`.
pub fn duality_defect(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    coupling: &CouplingSpec,
    v: &GridFunction,
    m: &GridFunction,
    rho: f64,
) -> Result<f64> {
    check_inputs(disc, ham, coupling)?;
    let pol = policy(disc, ham, v.values(), None);
    let mf = m.to_edge_field();
    let integrand = EdgeField {
        values: mf
            .values
            .iter()
            .zip(&pol.source.values)
            .map(|(me, se)| me.iter().zip(se).map(|(&x, s)| (coupling.eval(x) + s) * x).collect())
            .collect(),
    };
    Ok(rho - integrand.integrate(disc))
}

/// Discrete form of
///
/// ```text
/// int (m1 - m2)(F(m1) - F(m2))
///   + int m1 [H(g2) - H(g1) - b1 (g2 - g1)] + int m2 [H(g1) - H(g2) - b2 (g1 - g2)]
/// ```
///
/// with `g_k`, `b_k = dH/dp(g_k)` the selected gradients and feedbacks of
/// `v_k`. Nonnegative for monotone `F`, zero when the pair coincides.
pub fn monotonicity_gap(
    disc: &Arc<DiscreteNetwork>,
    ham: &HamiltonianSpec,
    coupling: &CouplingSpec,
    a: (&GridFunction, &GridFunction),
    b: (&GridFunction, &GridFunction),
) -> Result<f64> {
    check_inputs(disc, ham, coupling)?;
    for g in [a.0, a.1, b.0, b.1] {
        if **g.disc() != **disc {
            return Err(Error::Mismatch("solutions live on different grids".into()));
        }
    }
    let (pa, pb) = (policy(disc, ham, a.0.values(), None), policy(disc, ham, b.0.values(), None));
    let (ma, mb) = (a.1.to_edge_field(), b.1.to_edge_field());
    let mut integrand = EdgeField::zeros(disc);
    for e in 0..integrand.values.len() {
        for j in 0..integrand.values[e].len() {
            let (m1, m2) = (ma.values[e][j], mb.values[e][j]);
            let (g1, g2) = (pa.gradient.values[e][j], pb.gradient.values[e][j]);
            let (b1, b2) = (pa.drift.values[e][j], pb.drift.values[e][j]);
            let (h1, h2) = (ham.value(e, g1), ham.value(e, g2));
            integrand.values[e][j] =
                (m1 - m2) * (coupling.eval(m1) - coupling.eval(m2)) + m1 * (h2 - h1 - b1 * (g2 - g1)) + m2 * (h1 - h2 - b2 * (g1 - g2));
        }
    }
    Ok(integrand.integrate(disc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grids;
    use crate::network::{single_edge, star};

    #[test]
    fn trivial_fixed_points() {
        let d = Arc::new(build_grids(&single_edge(1.0, 1.0), 1.0 / 16.0).unwrap());
        let ham = HamiltonianSpec::quadratic(1);
        for (offset, rho) in [(0.0, 1.0), (-1.0, 0.0)] {
            let f = CouplingSpec::identity().with_offset(offset);
            let s = solve_mfg(&d, &ham, &f, &MfgConfig::default()).unwrap();
            assert!(s.converged);
            assert!(s.iterations() <= 5);
            assert!((s.rho - rho).abs() < 1e-12);
            assert!(s.v.values().iter().all(|x| x.abs() < 1e-12));
            assert!(s.m.values().iter().all(|x| (x - 1.0).abs() < 1e-12));
            assert!(s.residuals.max() < 1e-10);
        }
    }

    #[test]
    fn perturbed_solution_has_residual() {
        let d = Arc::new(build_grids(&single_edge(1.0, 1.0), 0.1).unwrap());
        let ham = HamiltonianSpec::quadratic(1);
        let f = CouplingSpec::identity();
        let s = solve_mfg(&d, &ham, &f, &MfgConfig::default()).unwrap();
        let mut v = s.v.clone();
        v.values_mut()[5] += 0.1;
        let r = residuals(&d, &ham, &f, &v, &s.m, s.rho).unwrap();
        assert!(r.hjb_interior > 1.0);
    }

    #[test]
    fn star_coupled_problem() {
        let net = star(&[1.0; 3], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap();
        let d = Arc::new(build_grids(&net, 1.0 / 32.0).unwrap());
        let ham = HamiltonianSpec::quadratic(3);
        let f = CouplingSpec::identity();
        let s = solve_mfg(&d, &ham, &f, &MfgConfig::default()).unwrap();
        assert!(s.converged);
        assert!(s.residuals.max_equation() < 1e-6);
        assert!(duality_defect(&d, &ham, &f, &s.v, &s.m, s.rho).unwrap().abs() < 1e-8);
        let field = s.m.to_edge_field();
        let ratios: Vec<f64> = net.sides(0).iter().map(|sd| field.values[sd.edge][0] / sd.gamma).collect();
        assert!(ratios.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        assert!((field.values[0][0] - field.values[2][0]).abs() > 0.1);
        let gap = monotonicity_gap(&d, &ham, &f, (&s.v, &s.m), (&s.v, &s.m)).unwrap();
        assert_eq!(gap, 0.0);
    }
}
