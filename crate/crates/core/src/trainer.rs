//! Training loop: noisy one-step supervision, Adam with per-epoch
//! exponential learning-rate decay, checkpoint and exact resume.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{compute_norm_stats, DatasetError, NormStats, TrainSplit};
use crate::geometry::simulation_seed;
use crate::graph::{add_noise, build_graph, encode_edges, encode_nodes, encode_targets, MeshGraph};
use crate::model::{MeshGraphNet, MgnConfig, ModelError};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch learning-rate decay factor.
    pub decay: f64,
    /// Standard deviation of the input velocity noise.
    pub noise_std: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 1,
            learning_rate: 1e-4,
            decay: 0.82540,
            noise_std: 0.02,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch} at trajectory {trajectory}, transition {transition}")]
    NonFiniteLoss {
        epoch: usize,
        trajectory: usize,
        transition: usize,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Learning rate in 1-based epoch `epoch`: `lr * decay^(epoch - 1)`.
pub fn lr_at_epoch(epoch: usize, lr: f64, decay: f64) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    lr * decay.powi(epoch as i32 - 1)
}

/// `|prediction - truth|^2 / 3`.
pub fn loss_at_node(prediction: [f64; 3], truth: [f64; 3]) -> f64 {
    prediction.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:.6e} loss={:.6e} seconds={:.2}",
            self.epoch, self.learning_rate, self.mean_loss, self.seconds
        )
    }
}

/// `(trajectory, k)` for the transition from frame `k` to `k + 1`.
pub fn transitions(split: &TrainSplit) -> Vec<(usize, usize)> {
    split
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(t, traj)| (0..traj.frames.len().saturating_sub(1)).map(move |k| (t, k)))
        .collect()
}

/// Transition order for a 1-based epoch; depends only on the seed and epoch.
pub fn epoch_order(split: &TrainSplit, seed: u64, epoch: usize) -> (Vec<(usize, usize)>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(simulation_seed(seed, epoch as u64));
    let mut order = transitions(split);
    order.shuffle(&mut rng);
    (order, rng)
}

#[derive(Serialize, Deserialize)]
struct TrainingState {
    config: TrainConfig,
    epochs_done: usize,
    history: Vec<EpochStats>,
}

pub struct Trainer {
    pub model: MeshGraphNet,
    pub stats: NormStats,
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub history: Vec<EpochStats>,
}

struct Graphs {
    graphs: Vec<MeshGraph>,
    edges: Vec<ndarray::Array2<f64>>,
}

impl Graphs {
    fn new(split: &TrainSplit, stats: &NormStats) -> Graphs {
        let graphs: Vec<MeshGraph> = split.trajectories.iter().map(|t| build_graph(&t.mesh)).collect();
        let edges = graphs.iter().map(|g| encode_edges(g, stats)).collect();
        Graphs { graphs, edges }
    }
}

impl Trainer {
    /// Fresh model initialized from the training seed, with normalization
    /// statistics computed from `split`.
    pub fn new(model: MgnConfig, config: TrainConfig, split: &TrainSplit) -> Result<Trainer, TrainError> {
        if config.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(config.decay > 0.0 && config.decay <= 1.0) {
            return Err(TrainError::Config(format!("decay {} outside (0, 1]", config.decay)));
        }
        if config.noise_std < 0.0 {
            return Err(TrainError::Config("negative noise".into()));
        }
        let stats = compute_norm_stats(split)?;
        Ok(Trainer {
            model: MeshGraphNet::new(model, config.seed),
            stats,
            config,
            epochs_done: 0,
            history: Vec::new(),
        })
    }

    /// Runs the next epoch over every transition once, in shuffled order.
    pub fn train_epoch(&mut self, split: &TrainSplit) -> Result<EpochStats, TrainError> {
        let start = Instant::now();
        let epoch = self.epochs_done + 1;
        let lr = lr_at_epoch(epoch, self.config.learning_rate, self.config.decay);
        let graphs = Graphs::new(split, &self.stats);
        let (order, mut rng) = epoch_order(split, self.config.seed, epoch);
        let batch = self.config.batch_size;
        let mut total = 0.0;
        for (n, &(t, k)) in order.iter().enumerate() {
            let traj = &split.trajectories[t];
            let (cur, next) = (&traj.frames[k], &traj.frames[k + 1]);
            let noisy = add_noise(&cur.velocity, self.config.noise_std, &mut rng);
            let graph = &graphs.graphs[t];
            let nodes = encode_nodes(graph, &noisy, &self.stats).map_err(ModelError::from)?;
            let target = encode_targets(&noisy, &next.velocity, &next.pressure, traj.frame_interval, &self.stats)
                .map_err(ModelError::from)?;
            let loss = self.model.loss_and_backward(graph, &nodes, &graphs.edges[t], &target);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    trajectory: t,
                    transition: k,
                });
            }
            total += loss;
            if (n + 1) % batch == 0 || n + 1 == order.len() {
                let size = (n % batch + 1) as f64;
                if size > 1.0 {
                    for p in &mut self.model.store.params {
                        p.grad.mapv_inplace(|g| g / size);
                    }
                }
                self.model
                    .store
                    .adam_step(lr, &self.config.adam)
                    .map_err(ModelError::from)?;
            }
        }
        self.epochs_done = epoch;
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: total / order.len().max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(stats);
        Ok(stats)
    }

    /// Mean one-step loss over every transition without noise or updates.
    pub fn evaluation_loss(&self, split: &TrainSplit) -> Result<f64, TrainError> {
        let graphs = Graphs::new(split, &self.stats);
        let order = transitions(split);
        let mut total = 0.0;
        for &(t, k) in &order {
            let traj = &split.trajectories[t];
            let (cur, next) = (&traj.frames[k], &traj.frames[k + 1]);
            let graph = &graphs.graphs[t];
            let nodes = encode_nodes(graph, &cur.velocity, &self.stats).map_err(ModelError::from)?;
            let target = encode_targets(&cur.velocity, &next.velocity, &next.pressure, traj.frame_interval, &self.stats)
                .map_err(ModelError::from)?;
            let out = self.model.forward(graph, &nodes, &graphs.edges[t]);
            let n = out.nrows() as f64;
            total += (&out - &target).iter().map(|d| d * d).sum::<f64>() / (3.0 * n);
        }
        Ok(total / order.len().max(1) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let state = TrainingState {
            config: self.config,
            epochs_done: self.epochs_done,
            history: self.history.clone(),
        };
        let value = serde_json::to_value(state).expect("training state serializes");
        self.model.save(path, &self.stats, value)?;
        Ok(())
    }

    /// Restores model, optimizer state, statistics and epoch counter.
    pub fn restore(path: &Path) -> Result<Trainer, TrainError> {
        let (model, meta) = MeshGraphNet::load(path)?;
        let state: TrainingState = serde_json::from_value(meta.training)
            .map_err(|e| TrainError::Model(ModelError::Meta(e.to_string())))?;
        Ok(Trainer {
            model,
            stats: meta.norm_stats,
            config: state.config,
            epochs_done: state.epochs_done,
            history: state.history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(lr_at_epoch(1, 1e-4, 0.8254), 1e-4);
        assert!((lr_at_epoch(2, 1e-4, 0.8254) - 8.254e-5).abs() < 1e-18);
        let l25 = lr_at_epoch(25, 1e-4, 0.8254);
        assert!((0.99e-6..=1.01e-6).contains(&l25));
    }

    #[test]
    fn node_loss_examples() {
        assert_eq!(loss_at_node([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        assert_eq!(loss_at_node([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]), 1.0);
        assert_eq!(loss_at_node([3.0, 0.0, 0.0], [0.0, 0.0, 0.0]), 3.0);
    }
}
