//! Encode-process-decode MeshGraphNet.
//!
//! Encoders map node and edge features to latents (layer-normalized). Each
//! message-passing block updates every directed edge from its latent and the
//! latents of its sender and receiver, then every node from its latent and
//! the sum of its updated incoming edges; both updates are layer-normalized
//! and added to the block input. The decoder maps node latents to the
//! normalized velocity derivative and pressure.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NormStats;
use crate::graph::{build_graph, encode_edges, encode_nodes, MeshGraph, EDGE_FEATURES, NODE_FEATURES, OUTPUT_FEATURES};
use crate::mesher::Mesh;
use crate::nn::{scatter_add, Input, Mlp, MlpCache, MlpSpec, NnError, ParamStore};
use crate::solver::{vertex_dirichlet, Frame, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MgnConfig {
    /// Message-passing blocks.
    pub blocks: usize,
    /// Node and edge latent width.
    pub latent: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for MgnConfig {
    fn default() -> Self {
        MgnConfig {
            blocks: 15,
            latent: 128,
            hidden_layers: 2,
            hidden_width: 128,
        }
    }
}

impl MgnConfig {
    /// Latent and hidden width `width`, `blocks` message-passing blocks.
    pub fn small(width: usize, blocks: usize) -> MgnConfig {
        MgnConfig {
            blocks,
            latent: width,
            hidden_layers: 2,
            hidden_width: width,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite prediction at rollout step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Encode(#[from] crate::graph::EncodeError),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub edge: Mlp,
    pub node: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshGraphNet {
    pub config: MgnConfig,
    pub store: ParamStore,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub blocks: Vec<Block>,
    pub decoder: Mlp,
}

struct BlockCache {
    /// Block inputs.
    nodes: Array2<f64>,
    edges: Array2<f64>,
    /// Aggregated updated edges per node.
    aggregated: Array2<f64>,
    edge: MlpCache,
    node: MlpCache,
}

/// Everything recorded by a forward pass.
pub struct ForwardCache {
    node_encoder: MlpCache,
    edge_encoder: MlpCache,
    blocks: Vec<BlockCache>,
    latent_nodes: Array2<f64>,
    decoder: MlpCache,
}

impl MeshGraphNet {
    pub fn new(config: MgnConfig, seed: u64) -> MeshGraphNet {
        assert!(config.blocks >= 1 && config.latent >= 1, "degenerate model config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hidden = vec![config.hidden_width; config.hidden_layers];
        let latent = config.latent;
        let spec = |inputs: Vec<usize>, output: usize, layer_norm: bool| MlpSpec {
            inputs,
            hidden: hidden.clone(),
            output,
            layer_norm,
        };
        let node_encoder = Mlp::new(&mut store, "encoder.node", spec(vec![NODE_FEATURES], latent, true), &mut rng);
        let edge_encoder = Mlp::new(&mut store, "encoder.edge", spec(vec![EDGE_FEATURES], latent, true), &mut rng);
        let blocks = (0..config.blocks)
            .map(|b| Block {
                edge: Mlp::new(
                    &mut store,
                    &format!("block{b}.edge"),
                    spec(vec![latent, latent, latent], latent, true),
                    &mut rng,
                ),
                node: Mlp::new(&mut store, &format!("block{b}.node"), spec(vec![latent, latent], latent, true), &mut rng),
            })
            .collect();
        let decoder = Mlp::new(&mut store, "decoder", spec(vec![latent], OUTPUT_FEATURES, false), &mut rng);
        MeshGraphNet {
            config,
            store,
            node_encoder,
            edge_encoder,
            blocks,
            decoder,
        }
    }

    /// Node and edge latents after the encoders.
    pub fn encode(&self, nodes: &Array2<f64>, edges: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (h, _) = self.node_encoder.forward(&self.store, &[Input::Dense(nodes)]);
        let (e, _) = self.edge_encoder.forward(&self.store, &[Input::Dense(edges)]);
        (h, e)
    }

    fn block_forward(
        &self,
        b: usize,
        graph: &MeshGraph,
        h: &Array2<f64>,
        e: &Array2<f64>,
        record: bool,
    ) -> (Array2<f64>, Array2<f64>, Option<BlockCache>) {
        let block = &self.blocks[b];
        let edge_inputs = [
            Input::Dense(e),
            Input::Gather(h, &graph.senders),
            Input::Gather(h, &graph.receivers),
        ];
        let (de, edge_cache) = block.edge.forward(&self.store, &edge_inputs);
        let mut aggregated = Array2::zeros((h.nrows(), de.ncols()));
        scatter_add(&de.view(), &graph.receivers, &mut aggregated);
        let (dh, node_cache) = block.node.forward(&self.store, &[Input::Dense(h), Input::Dense(&aggregated)]);
        let cache = record.then(|| BlockCache {
            nodes: h.clone(),
            edges: e.clone(),
            aggregated,
            edge: edge_cache,
            node: node_cache,
        });
        (h + &dh, e + &de, cache)
    }

    /// One message-passing block on given latents.
    pub fn message_passing_block(&self, b: usize, graph: &MeshGraph, h: &Array2<f64>, e: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (h, e, _) = self.block_forward(b, graph, h, e, false);
        (h, e)
    }

    pub fn decode(&self, h: &Array2<f64>) -> Array2<f64> {
        self.decoder.forward(&self.store, &[Input::Dense(h)]).0
    }

    /// Normalized outputs `n_nodes x 3` with the recorded activations.
    pub fn forward_with_cache(&self, graph: &MeshGraph, nodes: &Array2<f64>, edges: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        self.run(graph, nodes, edges, true)
    }

    fn run(&self, graph: &MeshGraph, nodes: &Array2<f64>, edges: &Array2<f64>, record: bool) -> (Array2<f64>, ForwardCache) {
        let (mut h, node_encoder) = self.node_encoder.forward(&self.store, &[Input::Dense(nodes)]);
        let (mut e, edge_encoder) = self.edge_encoder.forward(&self.store, &[Input::Dense(edges)]);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in 0..self.blocks.len() {
            let (nh, ne, cache) = self.block_forward(b, graph, &h, &e, record);
            blocks.extend(cache);
            h = nh;
            e = ne;
        }
        let (out, decoder) = self.decoder.forward(&self.store, &[Input::Dense(&h)]);
        let cache = ForwardCache {
            node_encoder,
            edge_encoder,
            blocks,
            latent_nodes: h,
            decoder,
        };
        (out, cache)
    }

    pub fn forward(&self, graph: &MeshGraph, nodes: &Array2<f64>, edges: &Array2<f64>) -> Array2<f64> {
        self.run(graph, nodes, edges, false).0
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` and
    /// returns the gradients with respect to node and edge features.
    pub fn backward(
        &mut self,
        graph: &MeshGraph,
        nodes: &Array2<f64>,
        edges: &Array2<f64>,
        cache: ForwardCache,
        d_out: Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let store = &mut self.store;
        let latent = cache.latent_nodes;
        let mut dh = self
            .decoder
            .backward(store, &[Input::Dense(&latent)], cache.decoder, d_out)
            .remove(0);
        let mut de = Array2::zeros((graph.n_edges(), self.config.latent));
        for (block, c) in self.blocks.iter().zip(cache.blocks).rev() {
            // Node update: h_out = h + node([h, agg]).
            let mut g = block.node.backward(
                store,
                &[Input::Dense(&c.nodes), Input::Dense(&c.aggregated)],
                c.node,
                dh.clone(),
            );
            let d_agg = g.pop().unwrap();
            dh += &g.pop().unwrap();
            // Edge update: e_out = e + edge([e, h_s, h_r]); agg sums it by receiver.
            let mut d_update = de.clone();
            for (mut row, &r) in d_update.rows_mut().into_iter().zip(&graph.receivers) {
                row += &d_agg.row(r);
            }
            let g = block.edge.backward(
                store,
                &[
                    Input::Dense(&c.edges),
                    Input::Gather(&c.nodes, &graph.senders),
                    Input::Gather(&c.nodes, &graph.receivers),
                ],
                c.edge,
                d_update,
            );
            de += &g[0];
            dh += &g[1];
            dh += &g[2];
        }
        let dn = self
            .node_encoder
            .backward(store, &[Input::Dense(nodes)], cache.node_encoder, dh)
            .remove(0);
        let dx = self
            .edge_encoder
            .backward(store, &[Input::Dense(edges)], cache.edge_encoder, de)
            .remove(0);
        (dn, dx)
    }

    /// Mean over nodes of `|q - target|^2 / 3`; gradients are accumulated.
    pub fn loss_and_backward(&mut self, graph: &MeshGraph, nodes: &Array2<f64>, edges: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let (out, cache) = self.forward_with_cache(graph, nodes, edges);
        let diff = &out - target;
        let n = out.nrows() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / (3.0 * n);
        let scale = 2.0 / (3.0 * n);
        self.backward(graph, nodes, edges, cache, diff.mapv(|d| d * scale));
        loss
    }

    pub fn save(&self, path: &Path, stats: &NormStats, training: serde_json::Value) -> Result<(), ModelError> {
        let meta = CheckpointMeta {
            model: self.config,
            norm_stats: stats.clone(),
            training,
        };
        let meta = serde_json::to_value(meta).map_err(|e| ModelError::Meta(e.to_string()))?;
        crate::nn::save_checkpoint(&self.store, meta, path)?;
        Ok(())
    }

    /// Restores a model saved with [`save`](Self::save), rebuilding the
    /// architecture from the stored configuration.
    pub fn load(path: &Path) -> Result<(MeshGraphNet, CheckpointMeta), ModelError> {
        let (header, store) = crate::nn::load_checkpoint(path)?;
        let meta: CheckpointMeta = serde_json::from_value(header.meta).map_err(|e| ModelError::Meta(e.to_string()))?;
        let mut model = MeshGraphNet::new(meta.model, 0);
        crate::nn::restore_into(&mut model.store, store)?;
        Ok((model, meta))
    }
}

/// Configuration echo stored with model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: MgnConfig,
    pub norm_stats: NormStats,
    pub training: serde_json::Value,
}

/// Explicit Euler update of velocity with the denormalized derivative and
/// direct pressure: `(v + dt q1, q2)`.
pub fn predict_next_state(velocity: &[[f64; 2]], q: &Array2<f64>, dt: f64) -> (Vec<[f64; 2]>, Vec<f64>) {
    velocity
        .iter()
        .zip(q.rows())
        .map(|(v, q)| ([v[0] + dt * q[0], v[1] + dt * q[1]], q[2]))
        .unzip()
}

/// A mesh prepared for repeated model evaluation.
#[derive(Clone, Debug)]
pub struct PreparedMesh {
    pub graph: MeshGraph,
    /// Normalized edge features.
    pub edges: Array2<f64>,
    pub dirichlet: Vec<Option<[f64; 2]>>,
}

impl PreparedMesh {
    pub fn new(mesh: &Mesh, inflow_peak: f64, stats: &NormStats) -> PreparedMesh {
        let graph = build_graph(mesh);
        let edges = encode_edges(&graph, stats);
        PreparedMesh {
            graph,
            edges,
            dirichlet: vertex_dirichlet(mesh, inflow_peak),
        }
    }
}

/// One model step from `velocity`: prediction, denormalization, Euler update
/// and re-imposition of the prescribed inflow and wall velocities.
pub fn model_step(
    model: &MeshGraphNet,
    mesh: &PreparedMesh,
    velocity: &[[f64; 2]],
    stats: &NormStats,
    dt: f64,
) -> Result<Frame, ModelError> {
    let nodes = encode_nodes(&mesh.graph, velocity, stats)?;
    let mut q = model.forward(&mesh.graph, &nodes, &mesh.edges);
    for mut row in q.rows_mut() {
        let mut d = [row[0], row[1]];
        stats.derivative.denormalize(&mut d);
        let mut p = [row[2]];
        stats.pressure.denormalize(&mut p);
        row[0] = d[0];
        row[1] = d[1];
        row[2] = p[0];
    }
    let (mut v, p) = predict_next_state(velocity, &q, dt);
    for (v, bc) in v.iter_mut().zip(&mesh.dirichlet) {
        if let Some(g) = bc {
            *v = *g;
        }
    }
    Ok(Frame {
        velocity: v,
        pressure: p,
    })
}

/// Autoregressive rollout of `frames` frames: the first is the given
/// ground-truth frame, each later one is predicted from its predecessor.
pub fn rollout(
    model: &MeshGraphNet,
    truth: &Trajectory,
    frames: usize,
    stats: &NormStats,
) -> Result<Trajectory, ModelError> {
    let mesh = PreparedMesh::new(&truth.mesh, truth.spec.inflow_peak, stats);
    let mut out = Vec::with_capacity(frames);
    if frames > 0 {
        out.push(truth.frames[0].clone());
    }
    for step in 1..frames {
        let next = model_step(model, &mesh, &out[step - 1].velocity, stats, truth.frame_interval)?;
        let finite = next.velocity.iter().all(|v| v[0].is_finite() && v[1].is_finite())
            && next.pressure.iter().all(|p| p.is_finite());
        if !finite {
            return Err(ModelError::NonFinite { step });
        }
        out.push(next);
    }
    Ok(Trajectory {
        spec: truth.spec.clone(),
        mesh: truth.mesh.clone(),
        frame_interval: truth.frame_interval,
        frames: out,
        predicted: true,
    })
}
