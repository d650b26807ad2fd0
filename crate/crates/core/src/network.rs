//! Metric networks: vertices, oriented edges, routing weights and the derived
//! jump ratios `gamma = p / mu` and orientation signs.
//!
//! An edge joining vertices `i < j` is oriented from `i` to `j` and
//! parametrized by arclength `y in [0, length]`, so `y = 0` is the tail and
//! `y = length` the head. Outward derivatives at a vertex are recovered from
//! oriented ones through the sign table: `sign = +1` at the head, `-1` at the
//! tail.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(p) = 1` at every vertex.
pub const ROUTING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: usize,
    /// Incident edge ids in increasing order.
    pub incident_edges: Vec<usize>,
    pub is_boundary: bool,
    pub is_artificial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    pub length: f64,
    /// Diffusion coefficient.
    pub mu: f64,
}

impl Edge {
    /// The endpoint of the edge opposite to `vertex`.
    pub fn other(&self, vertex: usize) -> usize {
        if vertex == self.tail {
            self.head
        } else {
            self.tail
        }
    }
}

/// One edge of a raw (user supplied) network description. Orientation is
/// normalized to low index -> high index by [`build_network`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub tail: usize,
    pub head: usize,
    pub length: f64,
    pub mu: f64,
}

/// Routing probability `p` of entering `edge` from `vertex`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingEntry {
    pub vertex: usize,
    pub edge: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawNetwork {
    pub num_vertices: usize,
    pub edges: Vec<EdgeSpec>,
    /// Entries for transition vertices. Vertices without entries get equal
    /// weights; boundary vertices always get `p = 1`.
    #[serde(default)]
    pub routing: Vec<RoutingEntry>,
}

/// Per-(vertex, incident edge) coefficients, listed in `incident_edges` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Side {
    pub edge: usize,
    pub p: f64,
    pub gamma: f64,
    /// `+1` if the vertex is the head of the edge, `-1` if it is the tail.
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    sides: Vec<Vec<Side>>,
}

impl Network {
    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Sides of vertex `i`, one per incident edge.
    pub fn sides(&self, i: usize) -> &[Side] {
        &self.sides[i]
    }

    pub fn side(&self, vertex: usize, edge: usize) -> Option<&Side> {
        self.sides[vertex].iter().find(|s| s.edge == edge)
    }

    pub fn routing(&self, vertex: usize, edge: usize) -> Option<f64> {
        self.side(vertex, edge).map(|s| s.p)
    }

    pub fn gamma(&self, vertex: usize, edge: usize) -> Option<f64> {
        self.side(vertex, edge).map(|s| s.gamma)
    }

    pub fn sign(&self, vertex: usize, edge: usize) -> Option<f64> {
        self.side(vertex, edge).map(|s| s.sign)
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn min_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
    }

    /// True when every vertex is either the tail of all its edges or the head
    /// of all its edges.
    pub fn is_consistently_oriented(&self) -> bool {
        self.vertices.iter().all(|v| {
            let tails = v.incident_edges.iter().filter(|&&e| self.edges[e].tail == v.id).count();
            tails == 0 || tails == v.incident_edges.len()
        })
    }

    /// Recovers a raw description (routing listed for every side of every
    /// non-artificial transition vertex).
    pub fn to_raw(&self) -> RawNetwork {
        let mut routing = Vec::new();
        for v in &self.vertices {
            if v.is_boundary {
                continue;
            }
            for s in &self.sides[v.id] {
                routing.push(RoutingEntry {
                    vertex: v.id,
                    edge: s.edge,
                    p: s.p,
                });
            }
        }
        RawNetwork {
            num_vertices: self.vertices.len(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    tail: e.tail,
                    head: e.head,
                    length: e.length,
                    mu: e.mu,
                })
                .collect(),
            routing,
        }
    }

    fn from_parts(num_vertices: usize, edges: Vec<Edge>, artificial: Vec<bool>, weights: &HashMap<(usize, usize), f64>) -> Result<Network> {
        for e in &edges {
            for &v in &[e.tail, e.head] {
                if v >= num_vertices {
                    return Err(Error::UnknownVertex { edge: e.id, vertex: v });
                }
            }
            if e.tail == e.head {
                return Err(Error::SelfLoop(e.id));
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                return Err(Error::NonPositive {
                    what: "edge",
                    id: e.id,
                    field: "length",
                    value: e.length,
                });
            }
            if !(e.mu > 0.0) || !e.mu.is_finite() {
                return Err(Error::NonPositive {
                    what: "edge",
                    id: e.id,
                    field: "mu",
                    value: e.mu,
                });
            }
        }
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &edges {
            let key = (e.tail.min(e.head), e.tail.max(e.head));
            if let Some(&other) = seen.get(&key) {
                return Err(Error::ParallelEdges(other, e.id));
            }
            seen.insert(key, e.id);
        }

        let mut incident = vec![Vec::new(); num_vertices];
        for e in &edges {
            incident[e.tail].push(e.id);
            incident[e.head].push(e.id);
        }
        if let Some(i) = incident.iter().position(|l| l.is_empty()) {
            return Err(Error::IsolatedVertex(i));
        }

        // connectivity
        let mut visited = vec![false; num_vertices];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(v) = queue.pop_front() {
            for &e in &incident[v] {
                let w = edges[e].other(v);
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if let Some(i) = visited.iter().position(|&b| !b) {
            return Err(Error::Disconnected(i));
        }

        for &(vertex, edge) in weights.keys() {
            if vertex >= num_vertices || !incident[vertex].contains(&edge) {
                return Err(Error::RoutingNotIncident { vertex, edge });
            }
        }

        let mut vertices = Vec::with_capacity(num_vertices);
        let mut sides = Vec::with_capacity(num_vertices);
        for i in 0..num_vertices {
            let inc = &incident[i];
            let deg = inc.len();
            let given: Vec<Option<f64>> = inc.iter().map(|&e| weights.get(&(i, e)).copied()).collect();
            let ps: Vec<f64> = if deg == 1 {
                vec![1.0]
            } else if given.iter().all(Option::is_none) {
                vec![1.0 / deg as f64; deg]
            } else {
                let mut ps = Vec::with_capacity(deg);
                for (k, g) in given.iter().enumerate() {
                    match g {
                        Some(p) => ps.push(*p),
                        None => return Err(Error::RoutingIncomplete { vertex: i, edge: inc[k] }),
                    }
                }
                ps
            };
            for (k, &p) in ps.iter().enumerate() {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::Config(format!(
                        "vertex {i}: routing weight for edge {} must be positive, got {p}",
                        inc[k]
                    )));
                }
            }
            let sum: f64 = ps.iter().sum();
            if (sum - 1.0).abs() > ROUTING_TOL {
                return Err(Error::RoutingSum { vertex: i, sum });
            }
            let s: Vec<Side> = inc
                .iter()
                .zip(&ps)
                .map(|(&e, &p)| Side {
                    edge: e,
                    p,
                    gamma: p / edges[e].mu,
                    sign: if edges[e].head == i { 1.0 } else { -1.0 },
                })
                .collect();
            if artificial[i] {
                let ok = deg == 2 && s.iter().all(|side| (side.p - 0.5).abs() <= ROUTING_TOL) && edges[inc[0]].mu == edges[inc[1]].mu;
                if !ok {
                    return Err(Error::BadArtificialVertex(i));
                }
            }
            vertices.push(Vertex {
                id: i,
                incident_edges: inc.clone(),
                is_boundary: deg == 1,
                is_artificial: artificial[i],
            });
            sides.push(s);
        }
        Ok(Network { vertices, edges, sides })
    }
}

/// Validates a raw description and derives `gamma` and the sign table.
/// Every edge is oriented from its lower-index endpoint to its higher-index one.
pub fn build_network(raw: &RawNetwork) -> Result<Network> {
    if raw.num_vertices == 0 {
        return Err(Error::Config("network has no vertices".into()));
    }
    let edges: Vec<Edge> = raw
        .edges
        .iter()
        .enumerate()
        .map(|(id, e)| Edge {
            id,
            tail: e.tail.min(e.head),
            head: e.tail.max(e.head),
            length: e.length,
            mu: e.mu,
        })
        .collect();
    let mut weights = HashMap::new();
    for r in &raw.routing {
        if weights.insert((r.vertex, r.edge), r.p).is_some() {
            return Err(Error::Config(format!(
                "vertex {}: duplicate routing entry for edge {}",
                r.vertex, r.edge
            )));
        }
    }
    Network::from_parts(raw.num_vertices, edges, vec![false; raw.num_vertices], &weights)
}

/// Where an edge of a split network lives on the original network:
/// `y_original = offset + direction * y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeOrigin {
    pub original: usize,
    pub offset: f64,
    pub direction: f64,
}

impl EdgeOrigin {
    pub fn to_original(&self, y: f64) -> f64 {
        self.offset + self.direction * y
    }
}

/// Result of [`orientation_split`].
#[derive(Debug, Clone)]
pub struct SplitNetwork {
    pub network: Network,
    /// One entry per edge of `network`.
    pub origins: Vec<EdgeOrigin>,
    /// Original edges that were cut in two, with the artificial vertex added.
    pub splits: Vec<(usize, usize)>,
}

/// Cuts edges at their midpoint so that every vertex becomes either the
/// tail of all of its edges or the head of all of them.
///
/// A vertex with at least one outgoing edge is kept as an "all tail" vertex;
/// every edge entering such a vertex is cut, both halves pointing to the new
/// artificial midpoint vertex. Artificial vertices get ids after the original
/// ones, so the low-to-high orientation is preserved.
pub fn orientation_split(net: &Network) -> SplitNetwork {
    let nv = net.num_vertices();
    let has_out: Vec<bool> = (0..nv).map(|i| net.edges().iter().any(|e| e.tail == i)).collect();

    let mut edges: Vec<Edge> = Vec::with_capacity(net.num_edges());
    let mut origins = Vec::with_capacity(net.num_edges());
    let mut extra: Vec<(Edge, EdgeOrigin)> = Vec::new();
    let mut splits = Vec::new();
    let mut weights = HashMap::new();
    let mut artificial: Vec<bool> = net.vertices().iter().map(|v| v.is_artificial).collect();

    for e in net.edges() {
        if has_out[e.head] {
            let mid = nv + splits.len();
            splits.push((e.id, mid));
            artificial.push(true);
            let half = 0.5 * e.length;
            edges.push(Edge {
                id: e.id,
                tail: e.tail,
                head: mid,
                length: half,
                mu: e.mu,
            });
            origins.push(EdgeOrigin {
                original: e.id,
                offset: 0.0,
                direction: 1.0,
            });
            extra.push((
                Edge {
                    id: 0,
                    tail: e.head,
                    head: mid,
                    length: half,
                    mu: e.mu,
                },
                EdgeOrigin {
                    original: e.id,
                    offset: e.length,
                    direction: -1.0,
                },
            ));
        } else {
            edges.push(e.clone());
            origins.push(EdgeOrigin {
                original: e.id,
                offset: 0.0,
                direction: 1.0,
            });
        }
    }
    for (mut e, o) in extra {
        e.id = edges.len();
        edges.push(e);
        origins.push(o);
    }

    // routing: original vertices keep their weights on the (possibly halved) edges
    for v in net.vertices() {
        if v.is_boundary {
            continue;
        }
        for s in net.sides(v.id) {
            let new_edge = (0..edges.len())
                .find(|&k| origins[k].original == s.edge && (edges[k].tail == v.id || edges[k].head == v.id))
                .expect("every side survives the split");
            weights.insert((v.id, new_edge), s.p);
        }
    }
    for &(_, mid) in &splits {
        for (k, e) in edges.iter().enumerate() {
            if e.head == mid {
                weights.insert((mid, k), 0.5);
            }
        }
    }

    let total = nv + splits.len();
    let network = Network::from_parts(total, edges, artificial, &weights).expect("splitting a valid network yields a valid network");
    SplitNetwork { network, origins, splits }
}

/// A point of the network given by an edge and an arclength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePoint {
    pub edge: usize,
    pub y: f64,
    /// Set when the point is an endpoint of the edge.
    pub vertex: Option<usize>,
}

pub fn edge_point(net: &Network, edge: usize, y: f64) -> Result<EdgePoint> {
    let e = net.edges().get(edge).ok_or_else(|| Error::Mismatch(format!("no edge {edge}")))?;
    if !(0.0..=e.length).contains(&y) {
        return Err(Error::OutOfEdge { edge, y, length: e.length });
    }
    let vertex = if y == 0.0 {
        Some(e.tail)
    } else if y == e.length {
        Some(e.head)
    } else {
        None
    };
    Ok(EdgePoint { edge, y, vertex })
}

/// Single edge `[0, length]` with diffusion `mu`.
pub fn single_edge(length: f64, mu: f64) -> Network {
    build_network(&RawNetwork {
        num_vertices: 2,
        edges: vec![EdgeSpec {
            tail: 0,
            head: 1,
            length,
            mu,
        }],
        routing: vec![],
    })
    .expect("single edge is valid")
}

/// Star with center 0 and leaves `1..=k`, one edge per entry of `lengths`.
pub fn star(lengths: &[f64], mus: &[f64], center_routing: &[f64]) -> Result<Network> {
    let edges = lengths
        .iter()
        .zip(mus)
        .enumerate()
        .map(|(k, (&length, &mu))| EdgeSpec {
            tail: 0,
            head: k + 1,
            length,
            mu,
        })
        .collect();
    let routing = center_routing
        .iter()
        .enumerate()
        .map(|(k, &p)| RoutingEntry { vertex: 0, edge: k, p })
        .collect();
    build_network(&RawNetwork {
        num_vertices: lengths.len() + 1,
        edges,
        routing,
    })
}
