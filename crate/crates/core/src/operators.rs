//! Assembly of the generator (acting on V-type unknowns) and of the
//! Fokker-Planck operator (acting on W-type unknowns).
//!
//! Interior rows are three-point stencils. A vertex row is the balance over
//! the half cells `[0, h/2]` adjacent to the vertex on each incident edge,
//! weighted by `gamma` and divided by the mean incident step:
//!
//! ```text
//! kappa_i * sum_a gamma_ia [ mu_a (v_i - v_a1) / h_a + h_a / 2 (b_a dv_a + lambda v_i) ]
//! ```
//!
//! Summing the exact outward fluxes with weights `gamma_ia` cancels them by
//! the Kirchhoff condition, so what remains is a second-order consistent
//! vertex equation; for `lambda = 0` and `b = 0` it reduces to the one-sided
//! transmission condition itself.
//!
//! The adjoint `A* = Wq^{-1} A^T D`, with `Wq` the W-type quadrature and `D`
//! the row weights of [`DiscreteNetwork::row_weights`], satisfies
//! `<A v, m>_D = <v, A* m>_W` exactly.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::grid::{Convention, DiscreteNetwork, EdgeField, GridFunction};
use crate::linalg::NetMatrix;

/// Drift values at every node of every edge; endpoint entries are the
/// one-sided values at the adjacent vertex, so the drift may jump there.
pub type DriftField = EdgeField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Centered,
    Upwind,
}

#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub matrix: NetMatrix,
    /// Numbering of the unknowns the operator acts on.
    pub convention: Convention,
    pub lambda: f64,
    /// Hash of the drift the operator was assembled with.
    pub drift_fingerprint: u64,
}

impl SparseOperator {
    pub fn apply(&self, x: &GridFunction) -> Result<Vec<f64>> {
        if x.convention() != self.convention {
            return Err(Error::Mismatch(format!(
                "operator acts on {:?}-type functions, got {:?}",
                self.convention,
                x.convention()
            )));
        }
        if x.values().len() != self.matrix.dim() {
            return Err(Error::Mismatch("function and operator sizes differ".into()));
        }
        Ok(self.matrix.matvec(x.values()))
    }

    pub fn to_triplet_text(&self) -> String {
        self.matrix.to_triplet_text()
    }
}

fn fingerprint(b: &DriftField) -> u64 {
    let mut h = DefaultHasher::new();
    for e in &b.values {
        for x in e {
            x.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn check_drift(disc: &DiscreteNetwork, b: &DriftField) -> Result<()> {
    b.check(disc)?;
    if b.values.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Config("drift contains non-finite values".into()));
    }
    Ok(())
}

/// Smallest value of `b * n` a vertex side can carry while keeping the
/// off-diagonal entry of its vertex row nonpositive.
pub fn vertex_drift_floor(mu: f64, h: f64) -> f64 {
    -2.0 * mu / h
}

/// Clamps a side drift `b` (edge orientation) at a vertex with sign `n` into
/// the admissible range `b * n >= -2 mu / h`.
pub fn admissible_side_drift(b: f64, n: f64, mu: f64, h: f64) -> f64 {
    let floor = vertex_drift_floor(mu, h);
    if b * n < floor {
        floor * n
    } else {
        b
    }
}

/// Discretizes `-mu v'' + b v' + lambda v` with the vertex rows described in
/// the module docs.
pub fn assemble_generator(disc: &DiscreteNetwork, b: &DriftField, lambda: f64, scheme: Scheme) -> Result<SparseOperator> {
    check_drift(disc, b)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let net = disc.network();
    let mut a = NetMatrix::zeros(disc);
    for edge in net.edges() {
        let e = edge.id;
        let g = disc.grid(e);
        let (n, h, mu) = (g.n, g.h, edge.mu);
        let bv = &b.values[e];
        let diff = mu / (h * h);
        for j in 1..n {
            let (lower, upper) = match scheme {
                Scheme::Centered => (-diff - bv[j] / (2.0 * h), -diff + bv[j] / (2.0 * h)),
                Scheme::Upwind => (-diff - bv[j].max(0.0) / h, -diff + bv[j].min(0.0) / h),
            };
            // the diagonal cancels the off-diagonals exactly, so constants
            // stay in the kernel in floating point (see NetMatrix::matvec)
            a.add_edge_entry(e, j, j - 1, lower);
            a.add_edge_entry(e, j, j + 1, upper);
            a.add_edge_entry(e, j, j, -(lower + upper) + lambda);
        }
        for (vertex, end, near) in [(edge.tail, 0, 1), (edge.head, n, n - 1)] {
            let side = net.side(vertex, e).expect("incident side");
            let kappa = 1.0 / disc.vertex_h(vertex);
            let mut bs = bv[end];
            if scheme == Scheme::Upwind {
                bs = admissible_side_drift(bs, side.sign, mu, h);
            }
            // half-cell drift: (h/2) * b * n (v_i - v_near) / h
            let couple = mu / h + 0.5 * bs * side.sign;
            let w = kappa * side.gamma;
            a.add_edge_entry(e, end, end, w * (couple + 0.5 * h * lambda));
            a.add_edge_entry(e, end, near, -w * couple);
        }
    }
    Ok(SparseOperator {
        matrix: a,
        convention: Convention::V,
        lambda,
        drift_fingerprint: fingerprint(b),
    })
}

/// Right-hand side matching [`assemble_generator`]: `f` at interior nodes,
/// `kappa_i sum_a gamma_ia h_a / 2 f_a(vertex)` in vertex rows.
pub fn load_vector(disc: &DiscreteNetwork, f: &EdgeField) -> Result<Vec<f64>> {
    f.check(disc)?;
    let net = disc.network();
    let mut r = vec![0.0; disc.num_dofs()];
    for edge in net.edges() {
        let e = edge.id;
        let g = disc.grid(e);
        for j in 1..g.n {
            r[disc.node_dof(e, j)] = f.values[e][j];
        }
        for (vertex, end) in [(edge.tail, 0), (edge.head, g.n)] {
            let gamma = net.gamma(vertex, e).expect("incident side");
            r[vertex] += gamma * 0.5 * g.h * f.values[e][end] / disc.vertex_h(vertex);
        }
    }
    Ok(r)
}

/// `D`-weighted pairing of an assembled residual (generator rows) with a
/// W-type vector.
pub fn pair_rows(disc: &DiscreteNetwork, rows: &[f64], m: &[f64]) -> f64 {
    disc.row_weights().iter().zip(rows.iter().zip(m)).map(|(d, (r, x))| d * r * x).sum()
}

/// Weighted transpose of a generator, acting on W-type unknowns.
pub fn adjoint_fp(disc: &DiscreteNetwork, generator: &SparseOperator) -> Result<SparseOperator> {
    if generator.convention != Convention::V {
        return Err(Error::Mismatch("adjoint_fp expects an operator on V-type functions".into()));
    }
    if generator.matrix.dim() != disc.num_dofs() {
        return Err(Error::Mismatch("operator does not match the grid".into()));
    }
    let inv_w: Vec<f64> = disc.quadrature(Convention::W).iter().map(|w| 1.0 / w).collect();
    let d = disc.row_weights();
    Ok(SparseOperator {
        matrix: generator.matrix.transpose().scaled(&inv_w, &d),
        convention: Convention::W,
        lambda: generator.lambda,
        drift_fingerprint: generator.drift_fingerprint,
    })
}

/// Conservative discretization of `lambda0 m - mu m'' - (b m)'` on W-type
/// unknowns. The face flux `J = -mu m' - b m` uses the mean drift of the two
/// nodes and the upwind value of `m`; each vertex row is the net outflow of
/// its half cells plus the `lambda0` mass term, divided by the mean step.
pub fn assemble_fp_direct(disc: &DiscreteNetwork, b: &DriftField, lambda0: f64) -> Result<SparseOperator> {
    check_drift(disc, b)?;
    if !(lambda0 >= 0.0) || !lambda0.is_finite() {
        return Err(Error::Config(format!("lambda0 must be nonnegative, got {lambda0}")));
    }
    let net = disc.network();
    let mut a = NetMatrix::zeros(disc);
    for edge in net.edges() {
        let e = edge.id;
        let g = disc.grid(e);
        let (n, h, mu) = (g.n, g.h, edge.mu);
        let bv = &b.values[e];
        let tail_gamma = net.gamma(edge.tail, e).expect("incident side");
        let head_gamma = net.gamma(edge.head, e).expect("incident side");
        // row scale and column factor of node j
        let row_scale = |j: usize| {
            if j == 0 {
                1.0 / disc.vertex_h(edge.tail)
            } else if j == n {
                1.0 / disc.vertex_h(edge.head)
            } else {
                1.0 / h
            }
        };
        let col_factor = |j: usize| {
            if j == 0 {
                tail_gamma
            } else if j == n {
                head_gamma
            } else {
                1.0
            }
        };
        for j in 0..n {
            let bf = 0.5 * (bv[j] + bv[j + 1]);
            let cl = (mu / h - bf.min(0.0)) * col_factor(j);
            let cr = (-mu / h - bf.max(0.0)) * col_factor(j + 1);
            let (sl, sr) = (row_scale(j), row_scale(j + 1));
            a.add_edge_entry(e, j, j, sl * cl);
            a.add_edge_entry(e, j, j + 1, sl * cr);
            a.add_edge_entry(e, j + 1, j, -sr * cl);
            a.add_edge_entry(e, j + 1, j + 1, -sr * cr);
        }
        for j in 1..n {
            a.add_edge_entry(e, j, j, lambda0);
        }
        if lambda0 > 0.0 {
            a.add_edge_entry(e, 0, 0, lambda0 * tail_gamma * 0.5 * h * row_scale(0));
            a.add_edge_entry(e, n, n, lambda0 * head_gamma * 0.5 * h * row_scale(n));
        }
    }
    Ok(SparseOperator {
        matrix: a,
        convention: Convention::W,
        lambda: lambda0,
        drift_fingerprint: fingerprint(b),
    })
}

/// Discrete face fluxes `-mu m' - b m` on every edge (length `n`), with the
/// discretization of [`assemble_fp_direct`] (upwind) or a centered mean.
pub fn face_fluxes(disc: &DiscreteNetwork, b: &DriftField, m: &GridFunction) -> Vec<Vec<f64>> {
    let net = disc.network();
    let field = m.to_edge_field();
    net.edges()
        .iter()
        .map(|edge| {
            let e = edge.id;
            let g = disc.grid(e);
            let (mv, bv) = (&field.values[e], &b.values[e]);
            (0..g.n)
                .map(|j| {
                    let bf = 0.5 * (bv[j] + bv[j + 1]);
                    let up = if bf > 0.0 { mv[j + 1] } else { mv[j] };
                    -edge.mu * (mv[j + 1] - mv[j]) / g.h - bf * up
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::build_grids;
    use crate::network::{single_edge, star};

    fn star3() -> crate::network::Network {
        star(&[1.0; 3], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap()
    }

    fn wavy_drift(disc: &DiscreteNetwork) -> DriftField {
        EdgeField::from_fn(disc, |e, y| (1.0 + e as f64) * (3.0 * y + e as f64).sin())
    }

    #[test]
    fn constants_in_kernel() {
        for scheme in [Scheme::Centered, Scheme::Upwind] {
            let d = build_grids(&star3(), 0.1).unwrap();
            let a = assemble_generator(&d, &wavy_drift(&d), 0.0, scheme).unwrap();
            assert!(a.matrix.row_sums().iter().all(|r| r.abs() < 1e-12));
        }
    }

    #[test]
    fn constant_solution_of_reaction_problem() {
        let d = build_grids(&single_edge(1.0, 1.0), 0.1).unwrap();
        let a = assemble_generator(&d, &EdgeField::zeros(&d), 1.0, Scheme::Centered).unwrap();
        let rhs = load_vector(&d, &EdgeField::constant(&d, 1.0)).unwrap();
        let v = a.matrix.solve(&rhs).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn star_vertex_row_pattern() {
        let net = star3();
        let d = build_grids(&net, 0.25).unwrap();
        let a = assemble_generator(&d, &EdgeField::zeros(&d), 0.0, Scheme::Upwind).unwrap();
        let row: Vec<_> = a.matrix.triplets().into_iter().filter(|t| t.0 == 0).collect();
        let kappa = 1.0 / d.vertex_h(0);
        let mut diag = 0.0;
        for s in net.sides(0) {
            let coef = kappa * s.gamma * net.edge(s.edge).mu / d.grid(s.edge).h;
            diag += coef;
            let col = d.node_dof(s.edge, 1);
            let entry = row.iter().find(|t| t.1 == col).unwrap().2;
            assert!((entry + coef).abs() < 1e-14);
        }
        let center = row.iter().find(|t| t.1 == 0).unwrap().2;
        assert!((center - diag).abs() < 1e-14);
    }

    #[test]
    fn upwind_signs() {
        let d = build_grids(&star3(), 0.05).unwrap();
        let b = EdgeField::from_fn(&d, |e, y| 40.0 * (5.0 * y + e as f64).cos());
        let a = assemble_generator(&d, &b, 0.5, Scheme::Upwind).unwrap();
        let (max_off, min_diag) = a.matrix.sign_extremes();
        assert!(max_off <= 0.0);
        assert!(min_diag > 0.0);
        assert!(a.matrix.row_sums().iter().all(|&r| r >= -1e-12));
    }

    #[test]
    fn duality_is_exact() {
        let net = star3();
        let d = Arc::new(build_grids(&net, 0.1).unwrap());
        let a = assemble_generator(&d, &wavy_drift(&d), 0.0, Scheme::Upwind).unwrap();
        let astar = adjoint_fp(&d, &a).unwrap();
        let v = GridFunction::from_fn(d.clone(), Convention::V, |e, y| (y + e as f64).cos());
        let mut m = GridFunction::zeros(d.clone(), Convention::W);
        for (k, x) in m.values_mut().iter_mut().enumerate() {
            *x = 1.0 + 0.3 * (k as f64).sin();
        }
        let lhs = pair_rows(&d, &a.apply(&v).unwrap(), m.values());
        let am = GridFunction::new(d.clone(), Convention::W, astar.apply(&m).unwrap()).unwrap();
        let rhs = v.pair(&am).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        assert!(adjoint_fp(&d, &astar).is_err());
    }

    #[test]
    fn direct_fp_conserves_mass_and_has_gamma_kernel() {
        let net = star3();
        let d = Arc::new(build_grids(&net, 0.1).unwrap());
        let fp = assemble_fp_direct(&d, &EdgeField::zeros(&d), 0.0).unwrap();
        // piecewise constant proportional to gamma: s_hat = 1 at the center
        let m = GridFunction::from_fn(d.clone(), Convention::W, |e, _| net.gamma(0, e).unwrap());
        let r = fp.apply(&m).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        // left null vector is the row weights
        let fpb = assemble_fp_direct(&d, &wavy_drift(&d), 0.0).unwrap();
        let y = fpb.matrix.transpose().matvec(&d.row_weights());
        assert!(y.iter().all(|x| x.abs() < 1e-11));
    }

    #[test]
    fn vertex_row_is_consistent() {
        // smooth v with Kirchhoff-compatible derivatives on the 3-star
        let net = star3();
        let sides = net.sides(0).to_vec();
        let slopes = [1.0, -1.0, -1.0];
        // gamma mu slope must sum to zero
        let flux: f64 = sides.iter().zip(&slopes).map(|(s, k)| s.gamma * net.edge(s.edge).mu * k).sum();
        assert!(flux.abs() < 1e-15);
        let mut errs = Vec::new();
        for h in [0.1, 0.05, 0.025] {
            let d = Arc::new(build_grids(&net, h).unwrap());
            let v = GridFunction::from_fn(d.clone(), Convention::V, |e, y| slopes[e] * y + y * y);
            let a = assemble_generator(&d, &EdgeField::zeros(&d), 0.0, Scheme::Centered).unwrap();
            let f = EdgeField::from_fn(&d, |e, _| -2.0 * net.edge(e).mu);
            let rhs = load_vector(&d, &f).unwrap();
            let r = a.apply(&v).unwrap();
            errs.push((r[0] - rhs[0]).abs());
        }
        assert!(errs.iter().all(|&e| e < 1e-10), "{errs:?}");
    }
}
