//! Trajectory files, dataset manifests and normalization statistics.
//!
//! Trajectory file layout, all integers and floats little-endian:
//!
//! | bytes        | content                                          |
//! |--------------|--------------------------------------------------|
//! | 8            | magic `MGNTRAJ1`                                 |
//! | 8            | header length `H` as u64                         |
//! | `H`          | JSON header ([`TrajectoryHeader`])               |
//! | `24 * J * V` | frames; per frame, per vertex `vx, vy, p` as f64 |
//! | 4            | CRC-32 (IEEE) of all preceding bytes as u32      |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DatasetId, DomainSpec};
use crate::mesher::{Mesh, MeshParams};
use crate::solver::{Frame, SolverConfig, Trajectory};

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"MGNTRAJ1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Standard dataset size and its training share.
pub const STANDARD_COUNT: usize = 440;
pub const STANDARD_TRAIN: usize = 400;
/// Lower bound for standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a trajectory file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{0}: truncated file")]
    Truncated(PathBuf),
    #[error("{path}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { path: PathBuf, stored: u32, computed: u32 },
    #[error("{path}: malformed header: {detail}")]
    Header { path: PathBuf, detail: String },
    #[error("empty training split")]
    EmptySplit,
    #[error("invalid manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub spec: DomainSpec,
    pub mesh: Mesh,
    pub frames: usize,
    pub frame_interval: f64,
    pub predicted: bool,
}

pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let header = TrajectoryHeader {
        spec: traj.spec.clone(),
        mesh: traj.mesh.clone(),
        frames: traj.frames.len(),
        frame_interval: traj.frame_interval,
        predicted: traj.predicted,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let nv = traj.mesh.num_vertices();
    let mut out = Vec::with_capacity(20 + header.len() + 24 * nv * traj.frames.len());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for frame in &traj.frames {
        for (v, p) in frame.velocity.iter().zip(&frame.pressure) {
            for x in [v[0], v[1], *p] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_trajectory(bytes: &[u8], path: &Path) -> Result<Trajectory, DatasetError> {
    let truncated = || DatasetError::Truncated(path.to_path_buf());
    if bytes.len() < 8 || &bytes[..8] != TRAJECTORY_MAGIC {
        return Err(if bytes.len() < 8 {
            truncated()
        } else {
            DatasetError::BadMagic(path.to_path_buf())
        });
    }
    if bytes.len() < 20 {
        return Err(truncated());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len() - 4)
        .ok_or_else(truncated)?;
    let header: TrajectoryHeader =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| DatasetError::Header {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let nv = header.mesh.num_vertices();
    if header.mesh.node_types.len() != nv {
        return Err(DatasetError::Header {
            path: path.to_path_buf(),
            detail: "node type count differs from vertex count".into(),
        });
    }
    let body_len = header
        .frames
        .checked_mul(nv)
        .and_then(|n| n.checked_mul(24))
        .ok_or_else(truncated)?;
    let expected = header_end + body_len + 4;
    if bytes.len() < expected {
        return Err(truncated());
    }
    if bytes.len() > expected {
        return Err(DatasetError::Header {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(DatasetError::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let mut values = bytes[header_end..expected - 4]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut frames = Vec::with_capacity(header.frames);
    for _ in 0..header.frames {
        let mut velocity = Vec::with_capacity(nv);
        let mut pressure = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (vx, vy, p) = (values.next().unwrap(), values.next().unwrap(), values.next().unwrap());
            velocity.push([vx, vy]);
            pressure.push(p);
        }
        frames.push(Frame { velocity, pressure });
    }
    Ok(Trajectory {
        spec: header.spec,
        mesh: header.mesh,
        frame_interval: header.frame_interval,
        frames,
        predicted: header.predicted,
    })
}

/// Writes through a temporary sibling and renames, so a complete file name
/// never refers to a partial write.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), DatasetError> {
    write_atomic(path, &encode_trajectory(traj))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_trajectory(&bytes, path)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Number of training simulations for a dataset of `count`: the standard
/// 400 / 440 share, rounded down.
pub fn train_count(count: usize) -> usize {
    count * STANDARD_TRAIN / STANDARD_COUNT
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: DatasetId,
    pub count: usize,
    pub train_count: usize,
    pub seed: u64,
    pub mesh: MeshParams,
    pub solver: SolverConfig,
    pub files: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(dataset: DatasetId, count: usize, seed: u64, mesh: MeshParams, solver: SolverConfig) -> DatasetManifest {
        let files = (0..count)
            .map(|index| ManifestEntry {
                index,
                file: format!("sim_{index:04}.traj"),
                seed: crate::geometry::simulation_seed(seed, index as u64),
            })
            .collect();
        DatasetManifest {
            dataset,
            count,
            train_count: train_count(count),
            seed,
            mesh,
            solver,
            files,
        }
    }

    pub fn train_entries(&self) -> &[ManifestEntry] {
        &self.files[..self.train_count]
    }

    pub fn eval_entries(&self) -> &[ManifestEntry] {
        &self.files[self.train_count..]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.files.len() != self.count {
            return Err(DatasetError::Manifest(format!(
                "{} files listed for count {}",
                self.files.len(),
                self.count
            )));
        }
        if self.train_count > self.count {
            return Err(DatasetError::Manifest("train count exceeds count".into()));
        }
        if self.files.iter().enumerate().any(|(i, e)| e.index != i) {
            return Err(DatasetError::Manifest("file indices are not 0..count".into()));
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DatasetManifest, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(io_err(&path))?;
        let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| DatasetError::Header {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), &text)
    }

    /// Files listed in the manifest that are missing on disk.
    pub fn missing(&self, dir: &Path) -> Vec<usize> {
        self.files
            .iter()
            .filter(|e| !dir.join(&e.file).is_file())
            .map(|e| e.index)
            .collect()
    }
}

/// Training trajectories. Normalization statistics can only be computed from
/// this type, which is only loaded from the training share of a manifest.
#[derive(Clone, Debug)]
pub struct TrainSplit {
    pub trajectories: Vec<Trajectory>,
}

/// Held-out trajectories.
#[derive(Clone, Debug)]
pub struct EvalSplit {
    pub trajectories: Vec<Trajectory>,
}

fn load_entries(dir: &Path, entries: &[ManifestEntry]) -> Result<Vec<Trajectory>, DatasetError> {
    entries.iter().map(|e| read_trajectory(&dir.join(&e.file))).collect()
}

impl TrainSplit {
    pub fn load(dir: &Path, manifest: &DatasetManifest) -> Result<TrainSplit, DatasetError> {
        Ok(TrainSplit {
            trajectories: load_entries(dir, manifest.train_entries())?,
        })
    }
}

impl EvalSplit {
    pub fn load(dir: &Path, manifest: &DatasetManifest) -> Result<EvalSplit, DatasetError> {
        Ok(EvalSplit {
            trajectories: load_entries(dir, manifest.eval_entries())?,
        })
    }
}

/// Per-component mean and standard deviation of one feature group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> FeatureStats {
        FeatureStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &mut [f64]) {
        for ((x, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    pub fn denormalize(&self, x: &mut [f64]) {
        for ((x, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = *x * s + m;
        }
    }
}

/// Exact two-pass statistics: feed every sample to [`add_mean`](Self::add_mean),
/// call [`start_variance`](Self::start_variance), feed them again to
/// [`add_variance`](Self::add_variance), then [`finish`](Self::finish).
#[derive(Clone, Debug)]
pub struct TwoPassStats {
    sum: Vec<f64>,
    sq: Vec<f64>,
    count: usize,
    mean: Option<Vec<f64>>,
}

impl TwoPassStats {
    pub fn new(dim: usize) -> TwoPassStats {
        TwoPassStats {
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
            count: 0,
            mean: None,
        }
    }

    pub fn add_mean(&mut self, x: &[f64]) {
        for (s, x) in self.sum.iter_mut().zip(x) {
            *s += x;
        }
        self.count += 1;
    }

    pub fn start_variance(&mut self) {
        let n = self.count.max(1) as f64;
        self.mean = Some(self.sum.iter().map(|s| s / n).collect());
    }

    pub fn add_variance(&mut self, x: &[f64]) {
        let mean = self.mean.as_ref().expect("start_variance before add_variance");
        for ((q, x), m) in self.sq.iter_mut().zip(x).zip(mean) {
            *q += (x - m) * (x - m);
        }
    }

    /// Population statistics with the standard deviation clamped to [`STD_FLOOR`].
    pub fn finish(self) -> FeatureStats {
        let n = self.count.max(1) as f64;
        let mean = self.mean.expect("start_variance before finish");
        let std = self.sq.iter().map(|q| (q / n).sqrt().max(STD_FLOOR)).collect();
        FeatureStats { mean, std }
    }
}

/// Normalization statistics for every network input and target group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Directed edge features `(dx, dy, |d|)`.
    pub edge: FeatureStats,
    /// Input velocity.
    pub velocity: FeatureStats,
    /// Target velocity time derivative `(v_{k+1} - v_k) / dt`.
    pub derivative: FeatureStats,
    /// Target pressure.
    pub pressure: FeatureStats,
}

impl NormStats {
    /// Statistics that leave every feature unchanged.
    pub fn identity() -> NormStats {
        NormStats {
            edge: FeatureStats::identity(3),
            velocity: FeatureStats::identity(2),
            derivative: FeatureStats::identity(2),
            pressure: FeatureStats::identity(1),
        }
    }
}

fn visit_samples(split: &TrainSplit, stats: &mut [TwoPassStats; 4], pass: usize) {
    let feed = |s: &mut TwoPassStats, x: &[f64]| {
        if pass == 0 {
            s.add_mean(x)
        } else {
            s.add_variance(x)
        }
    };
    for traj in &split.trajectories {
        let vs = &traj.mesh.vertices;
        for [a, b] in traj.mesh.edges() {
            for (u, w) in [(a, b), (b, a)] {
                let d = [vs[u][0] - vs[w][0], vs[u][1] - vs[w][1]];
                feed(&mut stats[0], &[d[0], d[1], d[0].hypot(d[1])]);
            }
        }
        let dt = traj.frame_interval;
        for pair in traj.frames.windows(2) {
            let (cur, next) = (&pair[0], &pair[1]);
            for i in 0..cur.velocity.len() {
                let (v, w) = (cur.velocity[i], next.velocity[i]);
                feed(&mut stats[1], &v);
                feed(&mut stats[2], &[(w[0] - v[0]) / dt, (w[1] - v[1]) / dt]);
                feed(&mut stats[3], &[next.pressure[i]]);
            }
        }
    }
}

/// Exact mean and standard deviation over every directed edge instance and
/// every (vertex, transition) instance of the training split.
pub fn compute_norm_stats(split: &TrainSplit) -> Result<NormStats, DatasetError> {
    if split.trajectories.is_empty() || split.trajectories.iter().all(|t| t.frames.len() < 2) {
        return Err(DatasetError::EmptySplit);
    }
    let mut stats = [
        TwoPassStats::new(3),
        TwoPassStats::new(2),
        TwoPassStats::new(2),
        TwoPassStats::new(1),
    ];
    visit_samples(split, &mut stats, 0);
    stats.iter_mut().for_each(TwoPassStats::start_variance);
    visit_samples(split, &mut stats, 1);
    let [edge, velocity, derivative, pressure] = stats.map(TwoPassStats::finish);
    Ok(NormStats {
        edge,
        velocity,
        derivative,
        pressure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesher::NodeType;

    fn toy_trajectory(frames: usize, offset: f64) -> Trajectory {
        let mesh = Mesh {
            channel: Default::default(),
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            node_types: vec![NodeType::Inflow, NodeType::Fluid, NodeType::Wall],
            obstacle_boundaries: vec![],
        };
        let frames = (0..frames)
            .map(|k| {
                let t = k as f64 + offset;
                Frame {
                    velocity: (0..3).map(|i| [t * (i as f64 + 1.0), -0.5 * t]).collect(),
                    pressure: (0..3).map(|i| t.sin() + i as f64).collect(),
                }
            })
            .collect();
        Trajectory {
            spec: DomainSpec::reference(1.0),
            mesh,
            frame_interval: 0.01,
            frames,
            predicted: false,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.traj");
        let mut traj = toy_trajectory(4, 0.1);
        traj.frames[1].pressure[0] = f64::MIN_POSITIVE / 3.0;
        traj.frames[2].velocity[1][0] = -0.0;
        write_trajectory(&traj, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(encode_trajectory(&back), encode_trajectory(&traj));
        assert_eq!(back.frames[2].velocity[1][0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, traj);
    }

    #[test]
    fn file_size_follows_layout() {
        let traj = toy_trajectory(5, 0.0);
        let bytes = encode_trajectory(&traj);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + 8 + h + 5 * 3 * 3 * 8 + 4);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("x");
        let bytes = encode_trajectory(&toy_trajectory(2, 0.0));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_trajectory(&bad, p), Err(DatasetError::BadMagic(_))));
        let n = bytes.len();
        assert!(matches!(decode_trajectory(&bytes[..n - 9], p), Err(DatasetError::Truncated(_))));
        assert!(matches!(decode_trajectory(&bytes[..5], p), Err(DatasetError::Truncated(_))));
        let mut flipped = bytes.clone();
        flipped[n - 12] ^= 1;
        assert!(matches!(decode_trajectory(&flipped, p), Err(DatasetError::Checksum { .. })));
    }

    #[test]
    fn split_rule() {
        assert_eq!(train_count(440), 400);
        assert_eq!(train_count(2), 1);
        assert_eq!(train_count(10), 9);
        let m = DatasetManifest::new(DatasetId::StandardCylinder, 2, 3, Default::default(), Default::default());
        assert_eq!((m.train_entries().len(), m.eval_entries().len()), (1, 1));
        m.validate().unwrap();
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(DatasetId::CylinderStretch, 11, 9, MeshParams::coarsened(2.0), Default::default());
        m.save(dir.path()).unwrap();
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        assert_eq!(m.missing(dir.path()).len(), 11);
    }

    #[test]
    fn two_valued_feature() {
        let mut s = TwoPassStats::new(1);
        let xs = [0.0, 2.0, 0.0, 2.0];
        xs.iter().for_each(|x| s.add_mean(&[*x]));
        s.start_variance();
        xs.iter().for_each(|x| s.add_variance(&[*x]));
        let f = s.finish();
        assert_eq!((f.mean[0], f.std[0]), (1.0, 1.0));
    }

    #[test]
    fn constant_feature_hits_floor() {
        let mut s = TwoPassStats::new(1);
        (0..5).for_each(|_| s.add_mean(&[3.0]));
        s.start_variance();
        (0..5).for_each(|_| s.add_variance(&[3.0]));
        assert_eq!(s.finish().std[0], STD_FLOOR);
    }

    #[test]
    fn normalized_training_features_are_standard() {
        let split = TrainSplit {
            trajectories: vec![toy_trajectory(6, 0.0), toy_trajectory(4, 0.7)],
        };
        let stats = compute_norm_stats(&split).unwrap();
        // Velocity inputs over all (vertex, transition) pairs.
        let mut xs = Vec::new();
        for t in &split.trajectories {
            for f in &t.frames[..t.frames.len() - 1] {
                for v in &f.velocity {
                    let mut v = *v;
                    stats.velocity.normalize(&mut v);
                    xs.push(v);
                }
            }
        }
        for c in 0..2 {
            let n = xs.len() as f64;
            let m = xs.iter().map(|v| v[c]).sum::<f64>() / n;
            let var = xs.iter().map(|v| (v[c] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-10 && (var.sqrt() - 1.0).abs() < 1e-10);
        }
        // Edge displacement means vanish by antisymmetry.
        assert!(stats.edge.mean[0].abs() < 1e-15 && stats.edge.mean[1].abs() < 1e-15);
        let mut x = [0.3, -1.7];
        stats.derivative.normalize(&mut x);
        stats.derivative.denormalize(&mut x);
        assert!((x[0] - 0.3).abs() < 1e-12 && (x[1] + 1.7).abs() < 1e-12);
        assert!(compute_norm_stats(&TrainSplit { trajectories: vec![] }).is_err());
    }
}
