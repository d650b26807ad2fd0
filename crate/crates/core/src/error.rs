use thiserror::Error;

/// Errors raised by network construction, discretization, the solvers and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("network is disconnected: vertex {0} is unreachable from vertex 0")]
    Disconnected(usize),
    #[error("vertex {vertex}: routing weights sum to {sum} (must sum to 1)")]
    RoutingSum { vertex: usize, sum: f64 },
    #[error("vertex {vertex}: routing weights do not cover incident edge {edge}")]
    RoutingIncomplete { vertex: usize, edge: usize },
    #[error("vertex {vertex}: routing entry for edge {edge}, which is not incident")]
    RoutingNotIncident { vertex: usize, edge: usize },
    #[error("{what} {id}: {field} must be positive, got {value}")]
    NonPositive {
        what: &'static str,
        id: usize,
        field: &'static str,
        value: f64,
    },
    #[error("edge {0} is a self-loop")]
    SelfLoop(usize),
    #[error("edges {0} and {1} join the same pair of vertices")]
    ParallelEdges(usize, usize),
    #[error("edge {edge} references unknown vertex {vertex}")]
    UnknownVertex { edge: usize, vertex: usize },
    #[error("vertex {0} has no incident edge")]
    IsolatedVertex(usize),
    #[error("artificial vertex {0} violates the splitting rules (two edges, p = 1/2, equal mu)")]
    BadArtificialVertex(usize),
    #[error("edge {edge}: arclength {y} outside [0, {length}]")]
    OutOfEdge { edge: usize, y: f64, length: f64 },
    #[error("size mismatch: {0}")]
    Mismatch(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("consistency check failed: {0}")]
    Check(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
