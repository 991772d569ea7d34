//! Evaluation errors over a set of simulations and seed aggregation.
//!
//! For `K` simulations with `J` frames and `I_k` nodes, a pooled error is
//!
//! ```text
//! sqrt( sum_k sum_j sum_i |truth - prediction|^2 / (c * I_k * J * K) )
//! ```
//!
//! with `c = 2` for velocity (two components) and `c = 1` for pressure. The
//! first frame of every prediction is the ground truth, so it contributes no
//! error but is counted in `J`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NormStats;
use crate::model::{model_step, rollout, MeshGraphNet, ModelError, PreparedMesh};
use crate::solver::{Frame, Trajectory};

pub const FIFTY: usize = 50;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("trajectory has {frames} frames, need {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("no values to aggregate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("benchmark setup failed: {0}")]
    Bench(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    Velocity,
    Pressure,
}

impl Field {
    fn components(self) -> f64 {
        match self {
            Field::Velocity => 2.0,
            Field::Pressure => 1.0,
        }
    }
}

/// `sum_i |truth_i - prediction_i|^2` for one frame.
pub fn frame_squared_error(truth: &Frame, prediction: &Frame, field: Field) -> f64 {
    match field {
        Field::Velocity => truth
            .velocity
            .iter()
            .zip(&prediction.velocity)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum(),
        Field::Pressure => truth
            .pressure
            .iter()
            .zip(&prediction.pressure)
            .map(|(a, b)| (a - b).powi(2))
            .sum(),
    }
}

fn check_pair(truth: &Trajectory, prediction: &Trajectory, frames: usize) -> Result<(), MetricsError> {
    for t in [truth, prediction] {
        if t.frames.len() < frames {
            return Err(MetricsError::TooShort {
                frames: t.frames.len(),
                needed: frames,
            });
        }
    }
    let n = truth.mesh.num_vertices();
    let bad = truth.frames[..frames]
        .iter()
        .chain(&prediction.frames[..frames])
        .any(|f| f.velocity.len() != n || f.pressure.len() != n);
    if bad {
        return Err(MetricsError::Shape("frame node counts differ from the mesh".into()));
    }
    Ok(())
}

/// `sum_j sum_i |.|^2 / (c I J)` over the first `frames` frames of one simulation.
fn simulation_mean(truth: &Trajectory, prediction: &Trajectory, frames: usize, field: Field) -> Result<f64, MetricsError> {
    check_pair(truth, prediction, frames)?;
    let sum: f64 = (0..frames)
        .map(|j| frame_squared_error(&truth.frames[j], &prediction.frames[j], field))
        .sum();
    Ok(sum / (field.components() * truth.mesh.num_vertices() as f64 * frames as f64))
}

/// Pooled error over the first `frames` frames of every simulation.
pub fn pooled_error(truth: &[Trajectory], predictions: &[Trajectory], frames: usize, field: Field) -> Result<f64, MetricsError> {
    if truth.len() != predictions.len() {
        return Err(MetricsError::Shape(format!(
            "{} truths, {} predictions",
            truth.len(),
            predictions.len()
        )));
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let means = truth
        .iter()
        .zip(predictions)
        .map(|(t, p)| simulation_mean(t, p, frames, field))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok((means.iter().sum::<f64>() / truth.len() as f64).sqrt())
}

fn common_length(truth: &[Trajectory]) -> Result<usize, MetricsError> {
    let j = truth.first().map(|t| t.frames.len()).ok_or(MetricsError::Empty)?;
    if truth.iter().any(|t| t.frames.len() != j) {
        return Err(MetricsError::Shape("simulations differ in frame count".into()));
    }
    Ok(j)
}

/// One-step error over all `J` frames.
pub fn eps_one(truth: &[Trajectory], one_step: &[Trajectory], field: Field) -> Result<f64, MetricsError> {
    pooled_error(truth, one_step, common_length(truth)?, field)
}

/// Rollout error over the first 50 frames.
pub fn eps_fifty(truth: &[Trajectory], rollouts: &[Trajectory], field: Field) -> Result<f64, MetricsError> {
    pooled_error(truth, rollouts, FIFTY, field)
}

/// Rollout error over all `J` frames.
pub fn eps_all(truth: &[Trajectory], rollouts: &[Trajectory], field: Field) -> Result<f64, MetricsError> {
    pooled_error(truth, rollouts, common_length(truth)?, field)
}

/// All-steps error of each simulation separately.
pub fn eps_all_per_simulation(truth: &[Trajectory], rollouts: &[Trajectory], field: Field) -> Result<Vec<f64>, MetricsError> {
    let j = common_length(truth)?;
    truth
        .iter()
        .zip(rollouts)
        .map(|(t, p)| simulation_mean(t, p, j, field).map(f64::sqrt))
        .collect()
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `(mean, max |x - mean|)`.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    Ok((mean, dev))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldErrors {
    pub one_step: f64,
    pub fifty: f64,
    pub all: f64,
    pub all_median: f64,
}

impl FieldErrors {
    pub fn as_array(&self) -> [f64; 4] {
        [self.one_step, self.fifty, self.all, self.all_median]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub velocity: FieldErrors,
    pub pressure: FieldErrors,
    pub per_simulation_velocity: Vec<f64>,
    pub per_simulation_pressure: Vec<f64>,
    pub simulations: usize,
    pub frames: usize,
    pub nodes: Vec<usize>,
}

/// Metrics from ground truth, one-step predictions and rollouts.
pub fn eval_result(truth: &[Trajectory], one_step: &[Trajectory], rollouts: &[Trajectory]) -> Result<EvalResult, MetricsError> {
    let j = common_length(truth)?;
    let field = |f: Field| -> Result<(FieldErrors, Vec<f64>), MetricsError> {
        let per = eps_all_per_simulation(truth, rollouts, f)?;
        let errors = FieldErrors {
            one_step: eps_one(truth, one_step, f)?,
            fifty: eps_fifty(truth, rollouts, f)?,
            all: eps_all(truth, rollouts, f)?,
            all_median: median(&per)?,
        };
        Ok((errors, per))
    };
    let (velocity, per_simulation_velocity) = field(Field::Velocity)?;
    let (pressure, per_simulation_pressure) = field(Field::Pressure)?;
    Ok(EvalResult {
        velocity,
        pressure,
        per_simulation_velocity,
        per_simulation_pressure,
        simulations: truth.len(),
        frames: j,
        nodes: truth.iter().map(|t| t.mesh.num_vertices()).collect(),
    })
}

/// One-step predictions: frame 0 is the truth, frame `j` is predicted from
/// true frame `j - 1` with the rollout step.
pub fn one_step_predictions(model: &MeshGraphNet, truth: &Trajectory, stats: &NormStats) -> Result<Trajectory, MetricsError> {
    let mesh = PreparedMesh::new(&truth.mesh, truth.spec.inflow_peak, stats);
    let mut frames = Vec::with_capacity(truth.frames.len());
    if let Some(first) = truth.frames.first() {
        frames.push(first.clone());
    }
    for j in 1..truth.frames.len() {
        frames.push(model_step(model, &mesh, &truth.frames[j - 1].velocity, stats, truth.frame_interval)?);
    }
    Ok(Trajectory {
        spec: truth.spec.clone(),
        mesh: truth.mesh.clone(),
        frame_interval: truth.frame_interval,
        frames,
        predicted: true,
    })
}

/// One-step predictions and full rollouts of every simulation (in parallel),
/// followed by all eight errors.
pub fn evaluate_model(model: &MeshGraphNet, stats: &NormStats, truth: &[Trajectory]) -> Result<(EvalResult, Vec<Trajectory>), MetricsError> {
    let pairs = truth
        .par_iter()
        .map(|t| -> Result<(Trajectory, Trajectory), MetricsError> {
            Ok((one_step_predictions(model, t, stats)?, rollout(model, t, t.frames.len(), stats)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (one_step, rollouts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((eval_result(truth, &one_step, &rollouts)?, rollouts))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Median wall-clock seconds per simulation.
    pub solver_seconds: f64,
    pub model_seconds: f64,
    pub speedup: f64,
    pub repetitions: usize,
    pub simulations: usize,
}

/// Times `solver(i)` and `model(i)` for every simulation `i < simulations`,
/// `repetitions` times after one untimed warm-up call each; per-simulation
/// times are the median over repetitions of the mean over simulations.
pub fn timing_bench(
    simulations: usize,
    repetitions: usize,
    mut solver: impl FnMut(usize),
    mut model: impl FnMut(usize),
) -> Result<Timing, MetricsError> {
    if simulations == 0 || repetitions == 0 {
        return Err(MetricsError::Empty);
    }
    solver(0);
    model(0);
    let time = |f: &mut dyn FnMut(usize)| -> Result<f64, MetricsError> {
        let reps: Vec<f64> = (0..repetitions)
            .map(|_| {
                let start = Instant::now();
                (0..simulations).for_each(&mut *f);
                start.elapsed().as_secs_f64() / simulations as f64
            })
            .collect();
        median(&reps)
    };
    let solver_seconds = time(&mut solver)?;
    let model_seconds = time(&mut model)?;
    Ok(Timing {
        solver_seconds,
        model_seconds,
        speedup: solver_seconds / model_seconds,
        repetitions,
        simulations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub vertices: usize,
    /// Frames actually timed per repetition.
    pub timed_frames: usize,
    /// Frames of a full simulation.
    pub simulation_frames: usize,
    /// Per-simulation seconds extrapolated linearly from the timed frames.
    pub solver_seconds: f64,
    pub model_seconds: f64,
    pub speedup: f64,
    pub repetitions: usize,
}

/// Wall-clock of the reference solver against a model rollout on the mesh
/// of `spec`, both advancing `timed_frames` frames from the same state,
/// extrapolated to `solver.frames` frames per simulation.
pub fn reference_bench(
    model: &MeshGraphNet,
    stats: &NormStats,
    spec: &crate::geometry::DomainSpec,
    mesh: &crate::mesher::MeshParams,
    solver: &crate::solver::SolverConfig,
    timed_frames: usize,
    repetitions: usize,
) -> Result<BenchReport, MetricsError> {
    if timed_frames == 0 || repetitions < 3 {
        return Err(MetricsError::Bench("need at least one frame and three repetitions".into()));
    }
    let bench_err = |e: &dyn std::fmt::Display| MetricsError::Bench(e.to_string());
    let mesh = crate::mesher::triangulate(spec, mesh).map_err(|e| bench_err(&e))?;
    let short = crate::solver::SolverConfig {
        frames: timed_frames,
        ..*solver
    };
    let seed = crate::solver::solve_trajectory(&mesh, spec, &crate::solver::SolverConfig { frames: 1, ..*solver })
        .map_err(|e| bench_err(&e))?;
    let failure = std::cell::RefCell::new(None);
    let note = |e: String| {
        failure.borrow_mut().get_or_insert(e);
    };
    let timing = timing_bench(
        1,
        repetitions,
        |_| {
            if let Err(e) = crate::solver::solve_trajectory(&mesh, spec, &short) {
                note(e.to_string());
            }
        },
        |_| {
            if let Err(e) = rollout(model, &seed, timed_frames + 1, stats) {
                note(e.to_string());
            }
        },
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(MetricsError::Bench(e));
    }
    let scale = solver.frames as f64 / timed_frames as f64;
    Ok(BenchReport {
        vertices: mesh.num_vertices(),
        timed_frames,
        simulation_frames: solver.frames,
        solver_seconds: timing.solver_seconds * scale,
        model_seconds: timing.model_seconds * scale,
        speedup: timing.speedup,
        repetitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;
    use crate::mesher::{Mesh, NodeType};

    fn traj(frames: Vec<Frame>) -> Trajectory {
        let n = frames[0].velocity.len();
        Trajectory {
            spec: DomainSpec::reference(1.0),
            mesh: Mesh {
                channel: Default::default(),
                vertices: vec![[0.0, 0.0]; n],
                triangles: vec![],
                node_types: vec![NodeType::Fluid; n],
                obstacle_boundaries: vec![],
            },
            frame_interval: 0.01,
            frames,
            predicted: false,
        }
    }

    fn frame(v: [f64; 2], p: f64) -> Frame {
        Frame {
            velocity: vec![v],
            pressure: vec![p],
        }
    }

    #[test]
    fn single_node_examples() {
        let t = [traj(vec![frame([1.0, 0.0], 1.0)])];
        let p = [traj(vec![frame([0.0, 0.0], 0.0)])];
        assert!((eps_one(&t, &p, Field::Velocity).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(eps_one(&t, &p, Field::Pressure).unwrap(), 1.0);
        assert_eq!(eps_one(&t, &t, Field::Velocity).unwrap(), 0.0);
        assert!(matches!(eps_fifty(&t, &p, Field::Velocity), Err(MetricsError::TooShort { .. })));
    }

    #[test]
    fn medians_and_aggregation() {
        assert_eq!(median(&[1.0, 100.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        assert_eq!(aggregate_seeds(&[0.0, 3.0, 12.0]).unwrap(), (5.0, 7.0));
        assert_eq!(aggregate_seeds(&[0.25, 0.25, 0.25]).unwrap(), (0.25, 0.0));
        assert_eq!(aggregate_seeds(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn single_simulation_median_equals_pooled() {
        let t = [traj((0..4).map(|k| frame([k as f64, 1.0], 0.5 * k as f64)).collect())];
        let p = [traj((0..4).map(|k| frame([0.0, 1.0 + k as f64], 0.0)).collect())];
        let per = eps_all_per_simulation(&t, &p, Field::Velocity).unwrap();
        assert_eq!(per[0], eps_all(&t, &p, Field::Velocity).unwrap());
    }

    #[test]
    fn bench_rejects_nothing_to_time() {
        assert!(timing_bench(0, 3, |_| {}, |_| {}).is_err());
        let t = timing_bench(2, 3, |_| std::hint::black_box(()), |_| ()).unwrap();
        assert_eq!(t.repetitions, 3);
    }
}
