//! Mesh graphs and their feature encoding.
//!
//! Every undirected mesh edge `{a, b}` becomes the two directed edges
//! `a -> b` and `b -> a`, stored consecutively in the order of
//! [`Mesh::edges`]. The feature of `u -> w` is `(x_u - x_w, |x_u - x_w|)`.
//! Node features are the normalized velocity followed by a one-hot node type
//! in the order fluid, wall, inflow, outflow.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::NormStats;
use crate::mesher::{Mesh, NodeType};

pub const EDGE_FEATURES: usize = 3;
pub const NODE_FEATURES: usize = 6;
pub const OUTPUT_FEATURES: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("{what} has {got} entries, graph has {expected} nodes")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Static connectivity and raw edge features of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshGraph {
    pub n_nodes: usize,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    /// Unnormalized `(dx, dy, |d|)` per directed edge.
    pub edge_features: Vec<[f64; 3]>,
    pub node_types: Vec<NodeType>,
}

impl MeshGraph {
    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }
}

pub fn build_graph(mesh: &Mesh) -> MeshGraph {
    let edges = mesh.edges();
    let mut senders = Vec::with_capacity(2 * edges.len());
    let mut receivers = Vec::with_capacity(2 * edges.len());
    let mut edge_features = Vec::with_capacity(2 * edges.len());
    for [a, b] in edges {
        for (u, w) in [(a, b), (b, a)] {
            let (xu, xw) = (mesh.vertices[u], mesh.vertices[w]);
            let d = [xu[0] - xw[0], xu[1] - xw[1]];
            senders.push(u);
            receivers.push(w);
            edge_features.push([d[0], d[1], d[0].hypot(d[1])]);
        }
    }
    MeshGraph {
        n_nodes: mesh.num_vertices(),
        senders,
        receivers,
        edge_features,
        node_types: mesh.node_types.clone(),
    }
}

/// Network-ready features, plus optional normalized targets.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    /// `n_nodes x 6`.
    pub nodes: Array2<f64>,
    /// `n_edges x 3`.
    pub edges: Array2<f64>,
    /// `n_nodes x 3`: normalized velocity derivative and pressure.
    pub target: Option<Array2<f64>>,
}

pub fn one_hot(t: NodeType) -> [f64; 4] {
    let mut h = [0.0; 4];
    h[t.index()] = 1.0;
    h
}

/// Normalized edge features, shared by every state on the same mesh.
pub fn encode_edges(graph: &MeshGraph, stats: &NormStats) -> Array2<f64> {
    let mut edges = Array2::zeros((graph.n_edges(), EDGE_FEATURES));
    for (e, f) in graph.edge_features.iter().enumerate() {
        let mut f = *f;
        stats.edge.normalize(&mut f);
        for c in 0..EDGE_FEATURES {
            edges[[e, c]] = f[c];
        }
    }
    edges
}

pub fn encode_nodes(graph: &MeshGraph, velocity: &[[f64; 2]], stats: &NormStats) -> Result<Array2<f64>, EncodeError> {
    check_len("velocity", velocity.len(), graph.n_nodes)?;
    let mut nodes = Array2::zeros((graph.n_nodes, NODE_FEATURES));
    for (i, (v, t)) in velocity.iter().zip(&graph.node_types).enumerate() {
        let mut v = *v;
        stats.velocity.normalize(&mut v);
        nodes[[i, 0]] = v[0];
        nodes[[i, 1]] = v[1];
        for (c, h) in one_hot(*t).into_iter().enumerate() {
            nodes[[i, 2 + c]] = h;
        }
    }
    Ok(nodes)
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), EncodeError> {
    if got == expected {
        Ok(())
    } else {
        Err(EncodeError::Dimension { what, got, expected })
    }
}

/// Encodes the input state `v_k` without targets.
pub fn encode_state(graph: &MeshGraph, velocity: &[[f64; 2]], stats: &NormStats) -> Result<GraphSample, EncodeError> {
    Ok(GraphSample {
        nodes: encode_nodes(graph, velocity, stats)?,
        edges: encode_edges(graph, stats),
        target: None,
    })
}

/// Normalized targets for input velocity `velocity` and the true next state:
/// `((v_{k+1} - v_k) / dt, p_{k+1})`. With a noisy input the derivative is
/// taken from the noisy field, so the implied next state stays the truth.
pub fn encode_targets(
    velocity: &[[f64; 2]],
    next_velocity: &[[f64; 2]],
    next_pressure: &[f64],
    dt: f64,
    stats: &NormStats,
) -> Result<Array2<f64>, EncodeError> {
    let n = velocity.len();
    check_len("next velocity", next_velocity.len(), n)?;
    check_len("next pressure", next_pressure.len(), n)?;
    let mut target = Array2::zeros((n, OUTPUT_FEATURES));
    for i in 0..n {
        let (v, w) = (velocity[i], next_velocity[i]);
        let mut d = [(w[0] - v[0]) / dt, (w[1] - v[1]) / dt];
        stats.derivative.normalize(&mut d);
        let mut p = [next_pressure[i]];
        stats.pressure.normalize(&mut p);
        target[[i, 0]] = d[0];
        target[[i, 1]] = d[1];
        target[[i, 2]] = p[0];
    }
    Ok(target)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to both components at every vertex.
pub fn add_noise<R: Rng + ?Sized>(velocity: &[[f64; 2]], sigma: f64, rng: &mut R) -> Vec<[f64; 2]> {
    if sigma == 0.0 {
        return velocity.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    velocity
        .iter()
        .map(|v| [v[0] + normal.sample(rng), v[1] + normal.sample(rng)])
        .collect()
}
