#![allow(dead_code)]

use std::sync::Arc;

use mfgnet::grid::{build_grids, DiscreteNetwork, EdgeField};
use mfgnet::network::{build_network, star, EdgeSpec, Network, RawNetwork, RoutingEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Three edges of length 1 with `mu = (1, 1, 2)` and center routing
/// `(1/2, 1/4, 1/4)`.
pub fn star3() -> Network {
    star(&[1.0; 3], &[1.0, 1.0, 2.0], &[0.5, 0.25, 0.25]).unwrap()
}

pub fn star3_grid(h: f64) -> Arc<DiscreteNetwork> {
    Arc::new(build_grids(&star3(), h).unwrap())
}

/// Connected network on 2 to 7 vertices: a random tree plus up to two
/// extra edges, random lengths, diffusions and positive routing weights.
pub fn random_network(rng: &mut ChaCha8Rng) -> Network {
    let nv = rng.random_range(2..=7);
    let mut pairs: Vec<(usize, usize)> = (1..nv).map(|k| (rng.random_range(0..k), k)).collect();
    for _ in 0..rng.random_range(0..=2) {
        let (a, b) = (rng.random_range(0..nv), rng.random_range(0..nv));
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !pairs.iter().any(|&(x, y)| (x.min(y), x.max(y)) == (a, b)) {
            pairs.push((a, b));
        }
    }
    let edges: Vec<EdgeSpec> = pairs
        .iter()
        .map(|&(a, b)| {
            let (tail, head) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            EdgeSpec {
                tail,
                head,
                length: rng.random_range(0.4..2.0),
                mu: rng.random_range(0.5..2.0),
            }
        })
        .collect();
    let mut routing = Vec::new();
    for v in 0..nv {
        let inc: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].tail == v || edges[e].head == v).collect();
        if inc.len() < 2 {
            continue;
        }
        let w: Vec<f64> = inc.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        for (k, (&e, x)) in inc.iter().zip(&w).enumerate() {
            // last weight closes the sum exactly
            let p = if k + 1 == inc.len() { 1.0 - acc } else { x / total };
            acc += p;
            routing.push(RoutingEntry { vertex: v, edge: e, p });
        }
    }
    build_network(&RawNetwork {
        num_vertices: nv,
        edges,
        routing,
    })
    .unwrap()
}

/// Smooth drift `c_e cos(k_e y + phi_e)` with `|b| <= amplitude`.
pub fn random_drift(rng: &mut ChaCha8Rng, disc: &DiscreteNetwork, amplitude: f64) -> EdgeField {
    let ne = disc.network().num_edges();
    let c: Vec<(f64, f64, f64)> = (0..ne)
        .map(|_| {
            (
                rng.random_range(-amplitude..=amplitude),
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..6.3),
            )
        })
        .collect();
    EdgeField::from_fn(disc, |e, y| c[e].0 * (c[e].1 * y + c[e].2).cos())
}

pub fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, y| a.max(y.abs()))
}
