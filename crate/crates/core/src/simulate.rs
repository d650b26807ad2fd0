//! Monte Carlo simulation of the network diffusion with generator
//! `mu u'' + a u'` and vertex routing `p`, and comparison of its occupation
//! histogram with solver densities.
//!
//! Inside an edge the path follows Euler-Maruyama steps
//! `y += a dt + sqrt(2 mu dt) Z`. A step that leaves the edge through a
//! vertex is continued on an incident edge drawn with the routing weights of
//! that vertex, placing the overshoot distance on the new edge; this repeats
//! while the remaining overshoot still leaves the edge. A boundary vertex has
//! a single edge with weight one, so the rule reflects there.
//!
//! The time step on edge `a` is `dt min(mu) / mu_a`, so every edge moves by
//! increments of the same spatial scale. With a common time step the edges
//! with larger `mu` would take longer steps, and the overshoot rule would
//! then favor them regardless of `dt`. Positions are recorded at fixed
//! times, `stride * dt` apart.
//!
//! Each path owns a ChaCha8 stream selected by `(seed, path index)`, so the
//! merged histogram does not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiscreteNetwork, EdgeField, GridFunction};
use crate::hamiltonian::Policy;
use crate::network::{orientation_split, Network, SplitNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Recorded samples after burn-in, summed over paths.
    pub samples: u64,
    pub paths: usize,
    /// Fraction of each path's steps discarded before recording.
    pub burn_in: f64,
    /// Record every `stride`-th step after burn-in.
    pub stride: usize,
    pub bins_per_edge: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-4,
            samples: 10_000_000,
            paths: 64,
            burn_in: 0.2,
            stride: 10,
            bins_per_edge: 10,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!("burn-in fraction must lie in [0,1), got {}", self.burn_in)));
        }
        if self.bins_per_edge == 0 || self.paths == 0 || self.stride == 0 {
            return Err(Error::Config("bins, paths and stride must be at least 1".into()));
        }
        if self.samples < self.paths as u64 {
            return Err(Error::Config("need at least one sample per path".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeHistogram {
    pub length: f64,
    pub counts: Vec<u64>,
}

/// Occupation counts per bin of each edge of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub edges: Vec<EdgeHistogram>,
    pub total: u64,
}

impl OccupationHistogram {
    pub fn empty(net: &Network, bins: usize) -> OccupationHistogram {
        OccupationHistogram {
            edges: net
                .edges()
                .iter()
                .map(|e| EdgeHistogram {
                    length: e.length,
                    counts: vec![0; bins],
                })
                .collect(),
            total: 0,
        }
    }

    fn record(&mut self, edge: usize, y: f64) {
        let h = &mut self.edges[edge];
        let b = h.counts.len();
        let k = ((y / h.length * b as f64) as usize).min(b - 1);
        h.counts[k] += 1;
        self.total += 1;
    }

    fn merge(&mut self, other: &OccupationHistogram) {
        for (a, b) in self.edges.iter_mut().zip(&other.edges) {
            for (x, y) in a.counts.iter_mut().zip(&b.counts) {
                *x += y;
            }
        }
        self.total += other.total;
    }

    /// Probability mass per bin.
    pub fn masses(&self) -> Vec<Vec<f64>> {
        let t = self.total.max(1) as f64;
        self.edges
            .iter()
            .map(|e| e.counts.iter().map(|&c| c as f64 / t).collect())
            .collect()
    }

    /// Density per bin (mass over bin width).
    pub fn densities(&self) -> Vec<Vec<f64>> {
        self.masses()
            .into_iter()
            .zip(&self.edges)
            .map(|(m, e)| {
                let w = e.length / e.counts.len() as f64;
                m.into_iter().map(|x| x / w).collect()
            })
            .collect()
    }

    /// `edge,bin_center,density` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edge,bin_center,density\n");
        for (e, (h, d)) in self.edges.iter().zip(self.densities()).enumerate() {
            let w = h.length / h.counts.len() as f64;
            for (k, x) in d.iter().enumerate() {
                s.push_str(&format!("{e},{},{x}\n", (k as f64 + 0.5) * w));
            }
        }
        s
    }
}

/// Edge choices made at each vertex of the simulated (split) network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingStats {
    /// `hits[vertex][k]` counts choices of the `k`-th side of `vertex`.
    pub hits: Vec<Vec<u64>>,
}

impl RoutingStats {
    fn new(net: &Network) -> RoutingStats {
        RoutingStats {
            hits: (0..net.num_vertices()).map(|i| vec![0; net.sides(i).len()]).collect(),
        }
    }

    fn merge(&mut self, other: &RoutingStats) {
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Empirical routing frequencies at `vertex`, in side order.
    pub fn frequencies(&self, vertex: usize) -> Vec<f64> {
        let t: u64 = self.hits[vertex].iter().sum();
        self.hits[vertex].iter().map(|&h| h as f64 / t.max(1) as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Histogram on the edges of the input network.
    pub histogram: OccupationHistogram,
    /// Routing counts on the split network.
    pub routing: RoutingStats,
    pub split: SplitNetwork,
    pub steps: u64,
}

/// Process velocity `a = -dH/dp` of a frozen policy.
pub fn feedback_velocity(policy: &Policy) -> EdgeField {
    policy.drift.map(|b| -b)
}

struct Walker<'a> {
    split: &'a SplitNetwork,
    disc: &'a DiscreteNetwork,
    velocity: Option<&'a EdgeField>,
    /// Cumulative routing weights per vertex, paired with side edges.
    routing: Vec<Vec<(f64, usize)>>,
    /// Per-edge time step giving every edge the same spatial increment.
    step_dt: Vec<f64>,
    dt: f64,
}

impl Walker<'_> {
    fn velocity(&self, edge: usize, y: f64) -> f64 {
        match self.velocity {
            None => 0.0,
            Some(a) => {
                let o = &self.split.origins[edge];
                o.direction * a.eval(self.disc, o.original, o.to_original(y))
            }
        }
    }

    fn route(&self, vertex: usize, u: f64) -> (usize, usize) {
        let sides = &self.routing[vertex];
        let k = sides.iter().position(|&(c, _)| u < c).unwrap_or(sides.len() - 1);
        (k, sides[k].1)
    }

    /// Runs one path for `burn` reference steps, then records `recorded`
    /// positions spaced `stride` reference steps apart in time. Returns the
    /// histogram, routing counts and the number of steps taken.
    fn run(&self, path: usize, seed: u64, burn: u64, recorded: u64, stride: u64, bins: usize) -> (OccupationHistogram, RoutingStats, u64) {
        let net = &self.split.network;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let mut hist = OccupationHistogram::empty(self.disc.network(), bins);
        let mut stats = RoutingStats::new(net);
        let mut edge = path % net.num_edges();
        let mut y = 0.5 * net.edge(edge).length;
        let burn_time = burn as f64 * self.dt;
        let interval = stride as f64 * self.dt;
        let (mut t, mut k, mut steps) = (0.0, 0u64, 0u64);
        while k < recorded {
            let e = net.edge(edge);
            let dt = self.step_dt[edge];
            let z: f64 = rng.sample(StandardNormal);
            y += self.velocity(edge, y) * dt + (2.0 * e.mu * dt).sqrt() * z;
            t += dt;
            steps += 1;
            let counting = t > burn_time;
            loop {
                let cur = net.edge(edge);
                let (vertex, d) = if y < 0.0 {
                    (cur.tail, -y)
                } else if y > cur.length {
                    (cur.head, y - cur.length)
                } else {
                    break;
                };
                let (side, next) = self.route(vertex, rng.random::<f64>());
                if counting {
                    stats.hits[vertex][side] += 1;
                }
                let ne = net.edge(next);
                edge = next;
                y = if ne.tail == vertex { d } else { ne.length - d };
            }
            while k < recorded && burn_time + k as f64 * interval <= t {
                let o = &self.split.origins[edge];
                hist.record(o.original, o.to_original(y).clamp(0.0, self.disc.network().edge(o.original).length));
                k += 1;
            }
        }
        (hist, stats, steps)
    }
}

/// Simulates `cfg.paths` independent paths of the diffusion on `disc`'s
/// network with process velocity `velocity` (`None` for zero drift).
pub fn simulate_paths(disc: &DiscreteNetwork, velocity: Option<&EdgeField>, cfg: &SimConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    if let Some(a) = velocity {
        a.check(disc)?;
    }
    let split = orientation_split(disc.network());
    let net = &split.network;
    let min_len = net.edges().iter().map(|e| e.length).fold(f64::INFINITY, f64::min);
    let max_mu = net.edges().iter().map(|e| e.mu).fold(0.0, f64::max);
    let min_mu = net.edges().iter().map(|e| e.mu).fold(f64::INFINITY, f64::min);
    let step = (2.0 * max_mu * cfg.dt).sqrt();
    if step >= 0.25 * min_len {
        return Err(Error::Config(format!(
            "dt too large: step deviation {step:.3e} must stay below a quarter of the shortest (split) edge {min_len:.3e}"
        )));
    }
    let routing = (0..net.num_vertices())
        .map(|i| {
            let mut acc = 0.0;
            net.sides(i)
                .iter()
                .map(|s| {
                    acc += s.p;
                    (acc, s.edge)
                })
                .collect()
        })
        .collect();
    let walker = Walker {
        split: &split,
        disc,
        velocity,
        routing,
        step_dt: net.edges().iter().map(|e| cfg.dt * min_mu / e.mu).collect(),
        dt: cfg.dt,
    };
    let per_path = cfg.samples / cfg.paths as u64;
    let extra = cfg.samples % cfg.paths as u64;
    let stride = cfg.stride as u64;
    let results: Vec<_> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let recorded = per_path + u64::from((p as u64) < extra);
            let kept = recorded * stride;
            let burn = ((kept as f64) * cfg.burn_in / (1.0 - cfg.burn_in)).ceil() as u64;
            walker.run(p, cfg.seed, burn, recorded, stride, cfg.bins_per_edge)
        })
        .collect();
    let mut histogram = OccupationHistogram::empty(disc.network(), cfg.bins_per_edge);
    let mut routing = RoutingStats::new(net);
    let mut steps = 0;
    for (h, r, s) in &results {
        histogram.merge(h);
        routing.merge(r);
        steps += s;
    }
    Ok(SimulationResult {
        histogram,
        routing,
        split,
        steps,
    })
}

/// `int_0^y` of the piecewise linear interpolant of `values` on a grid of
/// step `h`.
fn cumulative(values: &[f64], h: f64, y: f64) -> f64 {
    let n = values.len() - 1;
    let t = (y / h).clamp(0.0, n as f64);
    let j = (t.floor() as usize).min(n - 1);
    let mut acc: f64 = (0..j).map(|k| 0.5 * h * (values[k] + values[k + 1])).sum();
    let s = (t - j as f64) * h;
    let slope = (values[j + 1] - values[j]) / h;
    acc += values[j] * s + 0.5 * slope * s * s;
    acc
}

/// Exact bin masses of the piecewise linear reconstruction of `m`.
pub fn bin_masses(m: &GridFunction, bins: usize) -> Vec<Vec<f64>> {
    let disc = m.disc();
    let field = m.to_edge_field();
    disc.network()
        .edges()
        .iter()
        .map(|e| {
            let h = disc.grid(e.id).h;
            let vals = &field.values[e.id];
            let w = e.length / bins as f64;
            (0..bins)
                .map(|k| {
                    let hi = if k + 1 == bins { e.length } else { (k + 1) as f64 * w };
                    cumulative(vals, h, hi) - cumulative(vals, h, k as f64 * w)
                })
                .collect()
        })
        .collect()
}

/// Total-variation distance `1/2 sum |hist - int_bin m|`.
pub fn compare_density(hist: &OccupationHistogram, m: &GridFunction) -> Result<f64> {
    let net = m.disc().network();
    let same = hist.edges.len() == net.num_edges()
        && hist
            .edges
            .iter()
            .zip(net.edges())
            .all(|(h, e)| (h.length - e.length).abs() <= 1e-12 * e.length);
    if !same {
        return Err(Error::Mismatch("histogram and density live on different networks".into()));
    }
    let bins = hist.edges.first().map_or(1, |e| e.counts.len());
    if hist.edges.iter().any(|e| e.counts.len() != bins) {
        return Err(Error::Mismatch("histogram edges use different bin counts".into()));
    }
    let exact = bin_masses(m, bins);
    let tv = hist
        .masses()
        .iter()
        .flatten()
        .zip(exact.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>();
    Ok(0.5 * tv)
}
