//! Closed-form solution of `-mu v'' + lambda v = f_a` with per-edge constant
//! loads and Kirchhoff vertex conditions.
//!
//! On edge `a` with rate `k = sqrt(lambda / mu_a)`, `c = f_a / lambda` and
//! vertex values `w_t`, `w_h`:
//!
//! ```text
//! v(y) = c + (w_t - c) sinh(k (l - y)) / sinh(k l) + (w_h - c) sinh(k y) / sinh(k l)
//! ```
//!
//! Inserting the inward derivatives into the Kirchhoff sums gives a
//! strictly diagonally dominant system for the vertex values.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone)]
pub struct LinearOracle {
    net: Network,
    lambda: f64,
    loads: Vec<f64>,
    pub vertex_matrix: DMatrix<f64>,
    pub vertex_values: Vec<f64>,
}

impl LinearOracle {
    pub fn eval(&self, edge: usize, y: f64) -> f64 {
        let e = self.net.edge(edge);
        let k = (self.lambda / e.mu).sqrt();
        let c = self.loads[edge] / self.lambda;
        let (wt, wh) = (self.vertex_values[e.tail], self.vertex_values[e.head]);
        let s = (k * e.length).sinh();
        c + (wt - c) * (k * (e.length - y)).sinh() / s + (wh - c) * (k * y).sinh() / s
    }

    /// Smallest `|M_ii| - sum_{j != i} |M_ij|` over rows.
    pub fn dominance_margin(&self) -> f64 {
        let m = &self.vertex_matrix;
        (0..m.nrows())
            .map(|i| m[(i, i)].abs() - (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn analytic_linear_oracle(net: &Network, lambda: f64, loads: &[f64]) -> Result<LinearOracle> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    if loads.len() != net.num_edges() {
        return Err(Error::Mismatch(format!("{} loads for {} edges", loads.len(), net.num_edges())));
    }
    let nv = net.num_vertices();
    let mut m = DMatrix::<f64>::zeros(nv, nv);
    let mut r = DVector::<f64>::zeros(nv);
    for e in net.edges() {
        let k = (lambda / e.mu).sqrt();
        let c = loads[e.id] / lambda;
        let (sh, ch) = ((k * e.length).sinh(), (k * e.length).cosh());
        for (i, j) in [(e.tail, e.head), (e.head, e.tail)] {
            // gamma mu times the inward derivative k [(w_j - c) - (w_i - c) cosh] / sinh
            let w = net.gamma(i, e.id).expect("incident side") * e.mu * k / sh;
            m[(i, i)] += w * ch;
            m[(i, j)] -= w;
            r[i] += w * c * (ch - 1.0);
        }
    }
    let oracle_matrix = m.clone();
    let w = m.lu().solve(&r).ok_or_else(|| Error::Singular("oracle vertex system".into()))?;
    let oracle = LinearOracle {
        net: net.clone(),
        lambda,
        loads: loads.to_vec(),
        vertex_matrix: oracle_matrix,
        vertex_values: w.iter().copied().collect(),
    };
    if !(oracle.dominance_margin() > 0.0) {
        return Err(Error::Check("oracle vertex matrix is not strictly diagonally dominant".into()));
    }
    Ok(oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{single_edge, star};

    #[test]
    fn constant_load() {
        let net = star(&[1.0, 2.0, 0.5], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap();
        let o = analytic_linear_oracle(&net, 2.0, &[3.0; 3]).unwrap();
        for e in 0..3 {
            for y in [0.0, 0.2, 0.5] {
                assert!((o.eval(e, y) - 1.5).abs() < 1e-12);
            }
        }
        assert!(o.dominance_margin() > 0.0);
    }

    #[test]
    fn homogeneous_problem() {
        let o = analytic_linear_oracle(&single_edge(1.0, 1.0), 1.0, &[0.0]).unwrap();
        assert!(o.vertex_values.iter().all(|x| x.abs() < 1e-15));
        assert!(analytic_linear_oracle(&single_edge(1.0, 1.0), 0.0, &[0.0]).is_err());
    }

    #[test]
    fn kirchhoff_and_ode_hold() {
        let net = star(&[1.0; 3], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap();
        let o = analytic_linear_oracle(&net, 2.0, &[1.0, 0.0, 0.0]).unwrap();
        let eps = 1e-5;
        let mut flux = 0.0;
        for s in net.sides(0) {
            let d = (o.eval(s.edge, eps) - o.eval(s.edge, 0.0)) / eps;
            flux += s.gamma * net.edge(s.edge).mu * d;
        }
        assert!(flux.abs() < 1e-4);
        let (e, y, h) = (0, 0.4, 1e-4);
        let v2 = (o.eval(e, y + h) - 2.0 * o.eval(e, y) + o.eval(e, y - h)) / (h * h);
        assert!((-v2 + 2.0 * o.eval(e, y) - 1.0).abs() < 1e-5);
    }
}
