//! Hamiltonians `H_a(p) = kappa_a |p|^q + c_a p` and the monotone numerical
//! Hamiltonian used by policy iteration.
//!
//! For convex `H` with minimizer `p*`,
//!
//! ```text
//! G(p-, p+) = max( H(max(p-, p*)), H(min(p+, p*)) )
//!           = sup_b [ max(b,0) p- + min(b,0) p+ - H*(b) ]
//! ```
//!
//! so freezing the maximizing `b` turns the scheme into an upwind linear
//! problem with source `H*(b)`. At a vertex side the same sup runs over drifts
//! that keep the vertex row monotone (see
//! [`crate::operators::admissible_side_drift`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiscreteNetwork, EdgeField};
use crate::operators::{admissible_side_drift, DriftField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    /// Per-edge coefficient of `|p|^q`.
    pub kappa: Vec<f64>,
    pub q: f64,
    /// Per-edge coefficient of the linear term (edge orientation).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linear: Vec<f64>,
}

impl HamiltonianSpec {
    /// `kappa |p|^q` with the same `kappa` on every edge.
    pub fn uniform(num_edges: usize, kappa: f64, q: f64) -> HamiltonianSpec {
        HamiltonianSpec {
            kappa: vec![kappa; num_edges],
            q,
            linear: Vec::new(),
        }
    }

    /// `p^2 / 2` on every edge.
    pub fn quadratic(num_edges: usize) -> HamiltonianSpec {
        HamiltonianSpec::uniform(num_edges, 0.5, 2.0)
    }

    pub fn validate(&self, num_edges: usize) -> Result<()> {
        if !(self.q > 1.0 && self.q <= 2.0) {
            return Err(Error::Config(format!("q must lie in (1,2], got {}", self.q)));
        }
        if self.kappa.len() != num_edges {
            return Err(Error::Config(format!(
                "hamiltonian: {} kappa values for {} edges",
                self.kappa.len(),
                num_edges
            )));
        }
        if let Some((e, k)) = self.kappa.iter().enumerate().find(|(_, k)| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::Config(format!("hamiltonian: kappa on edge {e} must be positive, got {k}")));
        }
        if !self.linear.is_empty() && self.linear.len() != num_edges {
            return Err(Error::Config(format!(
                "hamiltonian: {} linear coefficients for {} edges",
                self.linear.len(),
                num_edges
            )));
        }
        if self.linear.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("hamiltonian: linear coefficients must be finite".into()));
        }
        Ok(())
    }

    fn c(&self, e: usize) -> f64 {
        self.linear.get(e).copied().unwrap_or(0.0)
    }

    pub fn value(&self, e: usize, p: f64) -> f64 {
        self.kappa[e] * p.abs().powf(self.q) + self.c(e) * p
    }

    /// `dH/dp`.
    pub fn dp(&self, e: usize, p: f64) -> f64 {
        self.kappa[e] * self.q * p.abs().powf(self.q - 1.0) * p.signum() + self.c(e)
    }

    /// Inverse of [`Self::dp`].
    pub fn dp_inverse(&self, e: usize, b: f64) -> f64 {
        let r = (b - self.c(e)) / (self.kappa[e] * self.q);
        r.abs().powf(1.0 / (self.q - 1.0)) * r.signum()
    }

    /// Minimizer of `H_e`.
    pub fn argmin(&self, e: usize) -> f64 {
        self.dp_inverse(e, 0.0)
    }

    /// Legendre transform `H*(b) = sup_p (b p - H(p))`.
    pub fn conjugate(&self, e: usize, b: f64) -> f64 {
        let p = self.dp_inverse(e, b);
        b * p - self.value(e, p)
    }

    /// Largest `|p*|` over edges.
    pub fn max_argmin(&self) -> f64 {
        (0..self.kappa.len()).map(|e| self.argmin(e).abs()).fold(0.0, f64::max)
    }
}

/// Frozen control of one policy-iteration step.
#[derive(Debug, Clone)]
pub struct Policy {
    /// `dH/dp` at the selected gradient; endpoint entries are vertex sides.
    pub drift: DriftField,
    /// Gradient `g` with `dH/dp(g) = drift`, clipped to the truncation range.
    pub gradient: EdgeField,
    /// `H*(drift)`.
    pub source: EdgeField,
    /// Numerical Hamiltonian `G`, or the vertex-side sup.
    pub value: EdgeField,
    /// Largest `|p|` among the selected one-sided differences.
    pub max_slope: f64,
}

/// Evaluates the numerical Hamiltonian of the V-type vector `v` and its
/// maximizing drift. With `truncation = Some(n)` the Hamiltonian is extended
/// linearly beyond `|p| = n`, which restricts drifts to `dH/dp([-n, n])`.
pub fn policy(disc: &DiscreteNetwork, ham: &HamiltonianSpec, v: &[f64], truncation: Option<f64>) -> Policy {
    let net = disc.network();
    let mut drift = EdgeField::zeros(disc);
    let mut gradient = EdgeField::zeros(disc);
    let mut source = EdgeField::zeros(disc);
    let mut value = EdgeField::zeros(disc);
    let mut max_slope: f64 = 0.0;
    let clamp = |p: f64| match truncation {
        Some(n) => p.clamp(-n, n),
        None => p,
    };
    for edge in net.edges() {
        let e = edge.id;
        let g = disc.grid(e);
        let (n, h) = (g.n, g.h);
        let node = |j: usize| v[disc.node_dof(e, j)];
        let pstar = ham.argmin(e);
        for j in 1..n {
            let pm = (node(j) - node(j - 1)) / h;
            let pp = (node(j + 1) - node(j)) / h;
            // branch value of the linear extension at raw gradient p
            let branch = |p: f64| {
                let pc = clamp(p);
                let b = ham.dp(e, pc);
                (b, pc, ham.value(e, pc) + b * (p - pc))
            };
            let up = branch(pm.max(pstar));
            let down = branch(pp.min(pstar));
            let (sel, raw) = if up.2 >= down.2 {
                (up, pm.max(pstar))
            } else {
                (down, pp.min(pstar))
            };
            max_slope = max_slope.max(raw.abs());
            drift.values[e][j] = sel.0;
            gradient.values[e][j] = sel.1;
            source.values[e][j] = sel.0 * sel.1 - ham.value(e, sel.1);
            value.values[e][j] = sel.2;
        }
        for (vertex, end, near) in [(edge.tail, 0, 1), (edge.head, n, n - 1)] {
            let sign = net.sign(vertex, e).expect("incident side");
            let p = sign * (node(end) - node(near)) / h;
            max_slope = max_slope.max(p.abs());
            let b = admissible_side_drift(ham.dp(e, clamp(p)), sign, edge.mu, h);
            let pb = ham.dp_inverse(e, b);
            let conj = b * pb - ham.value(e, pb);
            drift.values[e][end] = b;
            gradient.values[e][end] = pb;
            source.values[e][end] = conj;
            value.values[e][end] = b * p - conj;
        }
    }
    Policy {
        drift,
        gradient,
        source,
        value,
        max_slope,
    }
}
