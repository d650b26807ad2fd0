//! Uniform per-edge grids and the two global numberings of unknowns.
//!
//! Both numberings share one index layout: unknown `i < num_vertices` belongs
//! to vertex `i`, the interior nodes of each edge follow contiguously. They
//! differ in how a vertex unknown is read on the incident edges:
//!
//! * [`Convention::V`]: the vertex unknown is the common value of all sides
//!   (functions continuous at vertices).
//! * [`Convention::W`]: the vertex unknown `s` gives side value `gamma * s` on
//!   each incident edge, so `m_a / gamma_a = m_b / gamma_b` holds identically.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    V,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGrid {
    /// Number of intervals (at least 2).
    pub n: usize,
    pub h: f64,
    /// Global index of the first interior node.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteNetwork {
    network: Network,
    grids: Vec<EdgeGrid>,
    num_dofs: usize,
    vertex_h: Vec<f64>,
    weights_v: Vec<f64>,
    weights_w: Vec<f64>,
}

/// `n = max(2, ceil(length / h_target))` intervals on every edge.
pub fn build_grids(net: &Network, h_target: f64) -> Result<DiscreteNetwork> {
    if !(h_target > 0.0) || !h_target.is_finite() {
        return Err(Error::Config(format!("h_target must be positive, got {h_target}")));
    }
    let counts = net
        .edges()
        .iter()
        .map(|e| {
            // guard against ceil(1.0000000000000002) = 2 style rounding
            let r = e.length / h_target;
            let n = if (r - r.round()).abs() < 1e-9 { r.round() } else { r.ceil() };
            (n as usize).max(2)
        })
        .collect();
    DiscreteNetwork::with_intervals(net.clone(), counts)
}

impl DiscreteNetwork {
    pub fn with_intervals(network: Network, counts: Vec<usize>) -> Result<DiscreteNetwork> {
        if counts.len() != network.num_edges() {
            return Err(Error::Mismatch(format!(
                "{} interval counts for {} edges",
                counts.len(),
                network.num_edges()
            )));
        }
        let nv = network.num_vertices();
        let mut offset = nv;
        let mut grids = Vec::with_capacity(counts.len());
        for (e, &n) in network.edges().iter().zip(&counts) {
            if n < 2 {
                return Err(Error::Config(format!("edge {} needs at least 2 intervals", e.id)));
            }
            grids.push(EdgeGrid {
                n,
                h: e.length / n as f64,
                offset,
            });
            offset += n - 1;
        }
        let num_dofs = offset;

        let mut weights_v = vec![0.0; num_dofs];
        let mut weights_w = vec![0.0; num_dofs];
        let mut vertex_h = vec![0.0; nv];
        for v in network.vertices() {
            for s in network.sides(v.id) {
                let h = grids[s.edge].h;
                weights_v[v.id] += 0.5 * h;
                weights_w[v.id] += 0.5 * h * s.gamma;
                vertex_h[v.id] += h;
            }
            vertex_h[v.id] /= v.incident_edges.len() as f64;
        }
        for g in &grids {
            for k in 0..g.n - 1 {
                weights_v[g.offset + k] = g.h;
                weights_w[g.offset + k] = g.h;
            }
        }
        Ok(DiscreteNetwork {
            network,
            grids,
            num_dofs,
            vertex_h,
            weights_v,
            weights_w,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn grid(&self, edge: usize) -> &EdgeGrid {
        &self.grids[edge]
    }

    pub fn grids(&self) -> &[EdgeGrid] {
        &self.grids
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn num_vertices(&self) -> usize {
        self.network.num_vertices()
    }

    /// Global unknown of node `j in 0..=n` of `edge` (endpoints map to vertices).
    pub fn node_dof(&self, edge: usize, j: usize) -> usize {
        let g = &self.grids[edge];
        if j == 0 {
            self.network.edge(edge).tail
        } else if j == g.n {
            self.network.edge(edge).head
        } else {
            g.offset + j - 1
        }
    }

    pub fn node_position(&self, edge: usize, j: usize) -> f64 {
        if j == self.grids[edge].n {
            self.network.edge(edge).length
        } else {
            j as f64 * self.grids[edge].h
        }
    }

    /// Mean step of the edges incident to vertex `i`. Vertex equations are
    /// divided by this length so that their scale matches the interior rows.
    pub fn vertex_h(&self, i: usize) -> f64 {
        self.vertex_h[i]
    }

    /// Trapezoid weights for the given numbering. For `W` the vertex weight is
    /// `sum_a gamma_a h_a / 2`.
    pub fn quadrature(&self, convention: Convention) -> &[f64] {
        match convention {
            Convention::V => &self.weights_v,
            Convention::W => &self.weights_w,
        }
    }

    /// Weights turning assembled equations into integrals: `h` for an
    /// interior row, the mean incident step for a vertex row.
    pub fn row_weights(&self) -> Vec<f64> {
        let mut w = self.weights_v.clone();
        w[..self.num_vertices()].copy_from_slice(&self.vertex_h);
        w
    }

    /// Interior node `(edge, j)` of a global index, `None` for vertices.
    pub fn locate(&self, dof: usize) -> Option<(usize, usize)> {
        if dof < self.num_vertices() {
            return None;
        }
        let e = self.grids.partition_point(|g| g.offset <= dof) - 1;
        Some((e, dof - self.grids[e].offset + 1))
    }

    /// Multiplier turning a vertex unknown into the side value on `edge`.
    pub fn side_factor(&self, convention: Convention, vertex: usize, edge: usize) -> f64 {
        match convention {
            Convention::V => 1.0,
            Convention::W => self.network.gamma(vertex, edge).expect("incident side"),
        }
    }
}

/// Values at every node of every edge, endpoints included. Functions that
/// may jump at vertices (drifts, sources, couplings) live here.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    pub values: Vec<Vec<f64>>,
}

impl EdgeField {
    pub fn zeros(disc: &DiscreteNetwork) -> EdgeField {
        EdgeField {
            values: disc.grids.iter().map(|g| vec![0.0; g.n + 1]).collect(),
        }
    }

    pub fn from_fn(disc: &DiscreteNetwork, f: impl Fn(usize, f64) -> f64) -> EdgeField {
        EdgeField {
            values: (0..disc.grids.len())
                .map(|e| (0..=disc.grids[e].n).map(|j| f(e, disc.node_position(e, j))).collect())
                .collect(),
        }
    }

    pub fn per_edge(disc: &DiscreteNetwork, constants: &[f64]) -> Result<EdgeField> {
        if constants.len() != disc.grids.len() {
            return Err(Error::Mismatch(format!(
                "{} edge constants for {} edges",
                constants.len(),
                disc.grids.len()
            )));
        }
        Ok(EdgeField::from_fn(disc, |e, _| constants[e]))
    }

    pub fn constant(disc: &DiscreteNetwork, c: f64) -> EdgeField {
        EdgeField::from_fn(disc, |_, _| c)
    }

    pub fn check(&self, disc: &DiscreteNetwork) -> Result<()> {
        let ok = self.values.len() == disc.grids.len() && self.values.iter().zip(&disc.grids).all(|(v, g)| v.len() == g.n + 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Mismatch("edge field does not match the grid".into()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> EdgeField {
        EdgeField {
            values: self.values.iter().map(|v| v.iter().map(|&x| f(x)).collect()).collect(),
        }
    }

    /// Edge-wise trapezoid rule.
    pub fn integrate(&self, disc: &DiscreteNetwork) -> f64 {
        self.values.iter().zip(&disc.grids).map(|(v, g)| trapezoid(v, g.h)).sum()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter()).fold(0.0, |a, &x| a.max(x.abs()))
    }

    /// Linear interpolation at arclength `y` on `edge`.
    pub fn eval(&self, disc: &DiscreteNetwork, edge: usize, y: f64) -> f64 {
        let g = &disc.grids[edge];
        let v = &self.values[edge];
        let t = (y / g.h).clamp(0.0, g.n as f64);
        let j = (t.floor() as usize).min(g.n - 1);
        let w = t - j as f64;
        (1.0 - w) * v[j] + w * v[j + 1]
    }
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    let n = v.len() - 1;
    h * (0.5 * v[0] + v[1..n].iter().sum::<f64>() + 0.5 * v[n])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    Sup,
    L2,
    Lq(f64),
}

/// Real values on a [`DiscreteNetwork`] under one of the two numberings.
#[derive(Debug, Clone)]
pub struct GridFunction {
    disc: Arc<DiscreteNetwork>,
    convention: Convention,
    values: Vec<f64>,
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        self.convention == other.convention && self.values == other.values && *self.disc == *other.disc
    }
}

impl GridFunction {
    pub fn new(disc: Arc<DiscreteNetwork>, convention: Convention, values: Vec<f64>) -> Result<Self> {
        if values.len() != disc.num_dofs() {
            return Err(Error::Mismatch(format!("{} values for {} unknowns", values.len(), disc.num_dofs())));
        }
        Ok(GridFunction { disc, convention, values })
    }

    pub fn zeros(disc: Arc<DiscreteNetwork>, convention: Convention) -> Self {
        let n = disc.num_dofs();
        GridFunction {
            disc,
            convention,
            values: vec![0.0; n],
        }
    }

    /// Samples `f(edge, y)`. Vertex unknowns take the mean over incident
    /// sides of `f / side_factor`.
    pub fn from_fn(disc: Arc<DiscreteNetwork>, convention: Convention, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut values = vec![0.0; disc.num_dofs()];
        for e in 0..disc.grids.len() {
            for j in 1..disc.grids[e].n {
                values[disc.node_dof(e, j)] = f(e, disc.node_position(e, j));
            }
        }
        for v in disc.network().vertices() {
            let mut acc = 0.0;
            for &e in &v.incident_edges {
                let edge = disc.network().edge(e);
                let y = if edge.tail == v.id { 0.0 } else { edge.length };
                acc += f(e, y) / disc.side_factor(convention, v.id, e);
            }
            values[v.id] = acc / v.incident_edges.len() as f64;
        }
        GridFunction { disc, convention, values }
    }

    pub fn disc(&self) -> &Arc<DiscreteNetwork> {
        &self.disc
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at node `j` of `edge`, reconstructing the side value at endpoints.
    pub fn node_value(&self, edge: usize, j: usize) -> f64 {
        let d = &self.disc;
        let dof = d.node_dof(edge, j);
        if dof < d.num_vertices() {
            self.values[dof] * d.side_factor(self.convention, dof, edge)
        } else {
            self.values[dof]
        }
    }

    pub fn to_edge_field(&self) -> EdgeField {
        EdgeField {
            values: (0..self.disc.grids.len())
                .map(|e| (0..=self.disc.grids[e].n).map(|j| self.node_value(e, j)).collect())
                .collect(),
        }
    }

    pub fn integrate(&self) -> f64 {
        self.disc
            .quadrature(self.convention)
            .iter()
            .zip(&self.values)
            .map(|(w, x)| w * x)
            .sum()
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        let field = self.to_edge_field();
        match kind {
            NormKind::Sup => Ok(field.sup()),
            NormKind::L2 => Ok(field.map(|x| x * x).integrate(&self.disc).sqrt()),
            NormKind::Lq(q) => {
                if !(q >= 1.0) {
                    return Err(Error::Config(format!("Lq norm needs q >= 1, got {q}")));
                }
                Ok(field.map(|x| x.abs().powf(q)).integrate(&self.disc).powf(1.0 / q))
            }
        }
    }

    /// Weighted pairing `int u w` of a V-type function with a W-type one.
    pub fn pair(&self, other: &GridFunction) -> Result<f64> {
        if !Arc::ptr_eq(&self.disc, &other.disc) && *self.disc != *other.disc {
            return Err(Error::Mismatch("functions live on different grids".into()));
        }
        let (v, w) = match (self.convention, other.convention) {
            (Convention::V, Convention::W) => (self, other),
            (Convention::W, Convention::V) => (other, self),
            _ => return Err(Error::Mismatch("pairing needs one V-type and one W-type function".into())),
        };
        Ok(self
            .disc
            .quadrature(Convention::W)
            .iter()
            .zip(v.values.iter().zip(&w.values))
            .map(|(q, (a, b))| q * a * b)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{single_edge, star};

    fn star3() -> Network {
        star(&[1.0; 3], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap()
    }

    #[test]
    fn counts() {
        let d = build_grids(&single_edge(1.0, 1.0), 0.25).unwrap();
        assert_eq!(d.grid(0).n, 4);
        assert_eq!(d.num_dofs(), 5);
        let d = build_grids(&star3(), 0.5).unwrap();
        assert!(d.grids().iter().all(|g| g.n == 2));
        assert_eq!(d.num_dofs(), 7);
        let d = build_grids(&single_edge(1.0, 1.0), 10.0).unwrap();
        assert_eq!(d.grid(0).n, 2);
        assert!(build_grids(&single_edge(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn quadrature_weights() {
        let net = star3();
        let d = build_grids(&net, 0.1).unwrap();
        let sv: f64 = d.quadrature(Convention::V).iter().sum();
        assert!((sv - 3.0).abs() < 1e-14);
        let w = d.quadrature(Convention::W);
        let expect: f64 = net.sides(0).iter().map(|s| s.gamma * d.grid(s.edge).h / 2.0).sum();
        assert!((w[0] - expect).abs() < 1e-16);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn integrals() {
        let d = Arc::new(build_grids(&single_edge(1.0, 1.0), 0.25).unwrap());
        let one = GridFunction::from_fn(d.clone(), Convention::V, |_, _| 1.0);
        assert!((one.integrate() - 1.0).abs() < 1e-15);
        let x = GridFunction::from_fn(d.clone(), Convention::V, |_, y| y);
        assert_eq!(x.integrate(), 0.5);
        let s = Arc::new(build_grids(&star3(), 0.1).unwrap());
        assert!((EdgeField::constant(&s, 1.0).integrate(&s) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn norms() {
        let d = Arc::new(build_grids(&star3(), 0.1).unwrap());
        let c = GridFunction::from_fn(d.clone(), Convention::V, |_, _| -2.5);
        assert_eq!(c.norm(NormKind::Sup).unwrap(), 2.5);
        let one = GridFunction::from_fn(d.clone(), Convention::V, |_, _| 1.0);
        assert!((one.norm(NormKind::L2).unwrap() - 3f64.sqrt()).abs() < 1e-14);
        assert!((one.norm(NormKind::Lq(3.0)).unwrap() - 3f64.powf(1.0 / 3.0)).abs() < 1e-14);
        assert!(one.norm(NormKind::Lq(0.5)).is_err());
        let mut spike = GridFunction::zeros(d.clone(), Convention::V);
        spike.values_mut()[7] = 5.0;
        assert_eq!(spike.norm(NormKind::Sup).unwrap(), 5.0);
    }

    #[test]
    fn w_type_jump_law_is_structural() {
        let net = star3();
        let d = Arc::new(build_grids(&net, 0.2).unwrap());
        let mut m = GridFunction::zeros(d.clone(), Convention::W);
        for (k, x) in m.values_mut().iter_mut().enumerate() {
            *x = 0.3 + 0.17 * k as f64;
        }
        let f = m.to_edge_field();
        let sides = net.sides(0);
        for a in sides {
            for b in sides {
                let ma = f.values[a.edge][0];
                let mb = f.values[b.edge][0];
                assert_eq!(ma * b.gamma, mb * a.gamma);
            }
        }
    }

    #[test]
    fn locate_roundtrip() {
        let d = build_grids(&star3(), 0.2).unwrap();
        for e in 0..3 {
            for j in 1..d.grid(e).n {
                assert_eq!(d.locate(d.node_dof(e, j)), Some((e, j)));
            }
        }
        assert_eq!(d.locate(0), None);
    }

    #[test]
    fn refinement_halves_steps() {
        let net = star3();
        let a = build_grids(&net, 0.1).unwrap();
        let b = build_grids(&net, 0.05).unwrap();
        for e in 0..3 {
            assert!((a.grid(e).h / b.grid(e).h - 2.0).abs() < 1e-12);
        }
        let da = Arc::new(a);
        let db = Arc::new(b);
        let ia = GridFunction::from_fn(da, Convention::V, |_, _| 1.0).integrate();
        let ib = GridFunction::from_fn(db, Convention::V, |_, _| 1.0).integrate();
        assert!((ia - ib).abs() < 1e-13);
    }

    #[test]
    fn eval_interpolates() {
        let d = build_grids(&single_edge(1.0, 1.0), 0.25).unwrap();
        let f = EdgeField::from_fn(&d, |_, y| 3.0 * y + 1.0);
        assert!((f.eval(&d, 0, 0.3) - 1.9).abs() < 1e-14);
        assert_eq!(f.eval(&d, 0, 1.0), 4.0);
    }
}
