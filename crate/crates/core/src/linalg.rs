//! Sparse matrices with the coupling pattern of a discretized network, and a
//! direct solver for them.
//!
//! Each edge contributes a tridiagonal block over its interior nodes; its end
//! nodes couple to the tail and head vertex unknowns in both directions, and
//! each vertex row has a diagonal entry. Every three-point stencil on the
//! grid, and its transpose, fits in this pattern.
//!
//! Solving eliminates the interior unknowns edge by edge (one banded LU per
//! edge) and leaves a dense system over vertex unknowns, optionally bordered
//! by one extra row and column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::DiscreteNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBlock {
    pub tail: usize,
    pub head: usize,
    pub offset: usize,
    /// `lower[k]` multiplies unknown `k - 1` in row `k` (`lower[0]` unused).
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// `upper[k]` multiplies unknown `k + 1` in row `k` (last entry unused).
    pub upper: Vec<f64>,
    /// Row of the first interior node, column of the tail vertex.
    pub first_to_tail: f64,
    /// Row of the last interior node, column of the head vertex.
    pub last_to_head: f64,
    /// Row of the tail vertex, column of the first interior node.
    pub tail_to_first: f64,
    /// Row of the head vertex, column of the last interior node.
    pub head_to_last: f64,
}

impl EdgeBlock {
    fn len(&self) -> usize {
        self.diag.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetMatrix {
    pub vertex_diag: Vec<f64>,
    pub edges: Vec<EdgeBlock>,
    dim: usize,
}

/// Extra row and column appended to a square system.
#[derive(Debug, Clone)]
pub struct Border {
    pub column: Vec<f64>,
    pub row: Vec<f64>,
    pub corner: f64,
    pub rhs: f64,
}

impl NetMatrix {
    /// All-zero matrix with the pattern of `disc`.
    pub fn zeros(disc: &DiscreteNetwork) -> NetMatrix {
        let net = disc.network();
        let edges = net
            .edges()
            .iter()
            .zip(disc.grids())
            .map(|(e, g)| EdgeBlock {
                tail: e.tail,
                head: e.head,
                offset: g.offset,
                lower: vec![0.0; g.n - 1],
                diag: vec![0.0; g.n - 1],
                upper: vec![0.0; g.n - 1],
                first_to_tail: 0.0,
                last_to_head: 0.0,
                tail_to_first: 0.0,
                head_to_last: 0.0,
            })
            .collect();
        NetMatrix {
            vertex_diag: vec![0.0; net.num_vertices()],
            edges,
            dim: disc.num_dofs(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_diag.len()
    }

    /// Adds `value` at `(row, col)` where both are node indices `0..=n` of one
    /// edge; endpoints stand for the tail/head vertex unknowns.
    /// Vertex-vertex couplings other than the diagonal are not representable.
    pub fn add_edge_entry(&mut self, edge: usize, row: usize, col: usize, value: f64) {
        let nv = self.vertex_diag.len();
        let b = &mut self.edges[edge];
        let n = b.len() + 1;
        let is_vertex = |j: usize| j == 0 || j == n;
        match (is_vertex(row), is_vertex(col)) {
            (true, true) => {
                assert_eq!(row, col, "vertex-vertex coupling across an edge");
                let v = if row == 0 { b.tail } else { b.head };
                debug_assert!(v < nv);
                self.vertex_diag[v] += value;
            }
            (false, false) => {
                let (r, c) = (row - 1, col - 1);
                if c == r {
                    b.diag[r] += value;
                } else if c + 1 == r {
                    b.lower[r] += value;
                } else if r + 1 == c {
                    b.upper[r] += value;
                } else {
                    panic!("entry ({row}, {col}) outside the tridiagonal band");
                }
            }
            (false, true) => {
                if col == 0 && row == 1 {
                    b.first_to_tail += value;
                } else if col == n && row == n - 1 {
                    b.last_to_head += value;
                } else {
                    panic!("interior row {row} cannot reach vertex column {col}");
                }
            }
            (true, false) => {
                if row == 0 && col == 1 {
                    b.tail_to_first += value;
                } else if row == n && col == n - 1 {
                    b.head_to_last += value;
                } else {
                    panic!("vertex row {row} cannot reach interior column {col}");
                }
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        // off-diagonal terms are summed before the diagonal one, in the
        // order the diagonal was accumulated, so zero row sums give exact zeros
        let mut y = vec![0.0; self.dim];
        for b in &self.edges {
            let k = b.len();
            let o = b.offset;
            for r in 0..k {
                let lo = if r > 0 {
                    b.lower[r] * x[o + r - 1]
                } else {
                    b.first_to_tail * x[b.tail]
                };
                let up = if r + 1 < k {
                    b.upper[r] * x[o + r + 1]
                } else {
                    b.last_to_head * x[b.head]
                };
                y[o + r] = (lo + up) + b.diag[r] * x[o + r];
            }
            y[b.tail] += b.tail_to_first * x[o];
            y[b.head] += b.head_to_last * x[o + k - 1];
        }
        for (v, d) in self.vertex_diag.iter().enumerate() {
            y[v] += d * x[v];
        }
        y
    }

    pub fn transpose(&self) -> NetMatrix {
        let edges = self
            .edges
            .iter()
            .map(|b| {
                let k = b.len();
                let mut lower = vec![0.0; k];
                let mut upper = vec![0.0; k];
                for r in 0..k {
                    if r > 0 {
                        lower[r] = b.upper[r - 1];
                    }
                    if r + 1 < k {
                        upper[r] = b.lower[r + 1];
                    }
                }
                EdgeBlock {
                    tail: b.tail,
                    head: b.head,
                    offset: b.offset,
                    lower,
                    diag: b.diag.clone(),
                    upper,
                    first_to_tail: b.tail_to_first,
                    last_to_head: b.head_to_last,
                    tail_to_first: b.first_to_tail,
                    head_to_last: b.last_to_head,
                }
            })
            .collect();
        NetMatrix {
            vertex_diag: self.vertex_diag.clone(),
            edges,
            dim: self.dim,
        }
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> NetMatrix {
        let mut out = self.clone();
        for (v, d) in out.vertex_diag.iter_mut().enumerate() {
            *d *= left[v] * right[v];
        }
        for b in &mut out.edges {
            let o = b.offset;
            let k = b.len();
            for r in 0..k {
                b.diag[r] *= left[o + r] * right[o + r];
                if r > 0 {
                    b.lower[r] *= left[o + r] * right[o + r - 1];
                }
                if r + 1 < k {
                    b.upper[r] *= left[o + r] * right[o + r + 1];
                }
            }
            b.first_to_tail *= left[o] * right[b.tail];
            b.last_to_head *= left[o + k - 1] * right[b.head];
            b.tail_to_first *= left[b.tail] * right[o];
            b.head_to_last *= left[b.head] * right[o + k - 1];
        }
        out
    }

    /// Nonzero-pattern entries as `(row, col, value)`, row-major within blocks.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for (v, &d) in self.vertex_diag.iter().enumerate() {
            t.push((v, v, d));
        }
        for b in &self.edges {
            let o = b.offset;
            let k = b.len();
            t.push((b.tail, o, b.tail_to_first));
            t.push((b.head, o + k - 1, b.head_to_last));
            t.push((o, b.tail, b.first_to_tail));
            t.push((o + k - 1, b.head, b.last_to_head));
            for r in 0..k {
                if r > 0 {
                    t.push((o + r, o + r - 1, b.lower[r]));
                }
                t.push((o + r, o + r, b.diag[r]));
                if r + 1 < k {
                    t.push((o + r, o + r + 1, b.upper[r]));
                }
            }
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        t
    }

    /// Plain-text dump, one `row col value` line per stored entry.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        for (r, c, v) in self.triplets() {
            s.push_str(&format!("{r} {c} {v:e}\n"));
        }
        s
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matvec(&vec![1.0; self.dim])
    }

    /// Largest off-diagonal entry and smallest diagonal entry.
    pub fn sign_extremes(&self) -> (f64, f64) {
        let mut max_off = f64::NEG_INFINITY;
        let mut min_diag = f64::INFINITY;
        for (r, c, v) in self.triplets() {
            if r == c {
                min_diag = min_diag.min(v);
            } else {
                max_off = max_off.max(v);
            }
        }
        (max_off, min_diag)
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_bordered(rhs, None).map(|(x, _)| x)
    }

    /// Solves `[A c; r^T d] [x; s] = [rhs; t]` when a border is given.
    pub fn solve_bordered(&self, rhs: &[f64], border: Option<&Border>) -> Result<(Vec<f64>, f64)> {
        if rhs.len() != self.dim {
            return Err(Error::Mismatch(format!("rhs of length {} for dimension {}", rhs.len(), self.dim)));
        }
        if let Some(b) = border {
            if b.column.len() != self.dim || b.row.len() != self.dim {
                return Err(Error::Mismatch("border length differs from the matrix dimension".into()));
            }
        }
        let nv = self.vertex_diag.len();
        let ns = nv + usize::from(border.is_some());
        let mut s = DMatrix::<f64>::zeros(ns, ns);
        let mut g = DVector::<f64>::zeros(ns);
        for v in 0..nv {
            s[(v, v)] = self.vertex_diag[v];
            g[v] = rhs[v];
            if let Some(b) = border {
                s[(v, nv)] = b.column[v];
                s[(nv, v)] = b.row[v];
            }
        }
        if let Some(b) = border {
            s[(nv, nv)] = b.corner;
            g[nv] = b.rhs;
        }

        // per-edge elimination: u = z_rhs - x_tail z_tail - x_head z_head - s z_col
        let mut eliminated = Vec::with_capacity(self.edges.len());
        for blk in &self.edges {
            let k = blk.len();
            let o = blk.offset;
            let lu = TridiagonalLu::factor(&blk.lower, &blk.diag, &blk.upper)
                .ok_or_else(|| Error::Singular(format!("interior block of edge at offset {o}")))?;
            let z_rhs = lu.solve(&rhs[o..o + k]);
            let mut e_tail = vec![0.0; k];
            e_tail[0] = blk.first_to_tail;
            let z_tail = lu.solve(&e_tail);
            let mut e_head = vec![0.0; k];
            e_head[k - 1] += blk.last_to_head;
            let z_head = lu.solve(&e_head);
            let z_col = border.map(|b| lu.solve(&b.column[o..o + k]));

            for (v, coupling, end) in [(blk.tail, blk.tail_to_first, 0), (blk.head, blk.head_to_last, k - 1)] {
                s[(v, blk.tail)] -= coupling * z_tail[end];
                s[(v, blk.head)] -= coupling * z_head[end];
                g[v] -= coupling * z_rhs[end];
                if let Some(zc) = &z_col {
                    s[(v, nv)] -= coupling * zc[end];
                }
            }
            if let Some(b) = border {
                let row = &b.row[o..o + k];
                let dot = |z: &[f64]| row.iter().zip(z).map(|(a, c)| a * c).sum::<f64>();
                s[(nv, blk.tail)] -= dot(&z_tail);
                s[(nv, blk.head)] -= dot(&z_head);
                g[nv] -= dot(&z_rhs);
                if let Some(zc) = &z_col {
                    s[(nv, nv)] -= dot(zc);
                }
            }
            eliminated.push((z_rhs, z_tail, z_head, z_col));
        }

        let lu = s.lu();
        let reduced = lu.solve(&g).ok_or_else(|| Error::Singular("reduced vertex system".into()))?;
        if reduced.iter().any(|x| !x.is_finite()) {
            return Err(Error::Singular("reduced vertex system".into()));
        }
        let extra = if border.is_some() { reduced[nv] } else { 0.0 };

        let mut x = vec![0.0; self.dim];
        x[..nv].copy_from_slice(&reduced.as_slice()[..nv]);
        for (blk, (z_rhs, z_tail, z_head, z_col)) in self.edges.iter().zip(eliminated) {
            let (xt, xh) = (x[blk.tail], x[blk.head]);
            for r in 0..blk.len() {
                let mut u = z_rhs[r] - xt * z_tail[r] - xh * z_head[r];
                if let Some(zc) = &z_col {
                    u -= extra * zc[r];
                }
                x[blk.offset + r] = u;
            }
        }
        Ok((x, extra))
    }
}

/// LU factors of a tridiagonal matrix without pivoting (Thomas algorithm).
/// Stable for matrices that are diagonally dominant by rows or by columns,
/// which covers every block assembled in this crate.
struct TridiagonalLu {
    lower: Vec<f64>,
    pivots: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Option<Self> {
        let k = diag.len();
        let mut pivots = vec![0.0; k];
        let mut mult = vec![0.0; k];
        pivots[0] = diag[0];
        for r in 1..k {
            if pivots[r - 1] == 0.0 {
                return None;
            }
            mult[r] = lower[r] / pivots[r - 1];
            pivots[r] = diag[r] - mult[r] * upper[r - 1];
        }
        if pivots.iter().any(|&p| p == 0.0 || !p.is_finite()) {
            return None;
        }
        Some(TridiagonalLu {
            lower: mult,
            pivots,
            upper: upper.to_vec(),
        })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.pivots.len();
        let mut y = b.to_vec();
        for r in 1..k {
            y[r] -= self.lower[r] * y[r - 1];
        }
        y[k - 1] /= self.pivots[k - 1];
        for r in (0..k - 1).rev() {
            y[r] = (y[r] - self.upper[r] * y[r + 1]) / self.pivots[r];
        }
        y
    }
}
