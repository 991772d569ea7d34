//! Dataset generation: sample a domain, mesh it, solve it, store it.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{write_trajectory, DatasetError, DatasetManifest};
use crate::geometry::{sample_geometry, DatasetId, DomainSpec, GeometryError};
use crate::mesher::{triangulate, MeshError, MeshParams};
use crate::solver::{solve_trajectory, SolverConfig, SolverError, Trajectory};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub fn simulate(spec: &DomainSpec, mesh: &MeshParams, solver: &SolverConfig) -> Result<Trajectory, GenerateError> {
    let mesh = triangulate(spec, mesh)?;
    Ok(solve_trajectory(&mesh, spec, solver)?)
}

/// Samples simulation `index` of a dataset and solves it.
pub fn simulate_member(
    dataset: DatasetId,
    simulation_seed: u64,
    mesh: &MeshParams,
    solver: &SolverConfig,
) -> Result<Trajectory, GenerateError> {
    let spec = sample_geometry(dataset, simulation_seed)?;
    simulate(&spec, mesh, solver)
}

#[derive(Debug, Default)]
pub struct GenerateReport {
    pub written: Vec<usize>,
    /// Already present from an earlier run.
    pub skipped: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

/// Generates every simulation listed in `manifest` that is not yet on disk,
/// on `workers` threads. Failures are collected per simulation and do not
/// stop the run. The manifest is written first so an interrupted run can be
/// resumed with the same arguments.
pub fn generate_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    mesh: &MeshParams,
    solver: &SolverConfig,
    workers: usize,
    progress: impl Fn(usize, &Result<(), GenerateError>) + Sync,
) -> Result<GenerateReport, GenerateError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    if let Ok(existing) = DatasetManifest::load(dir) {
        if &existing != manifest {
            return Err(DatasetError::Manifest(format!(
                "{} holds a different dataset; use a fresh directory",
                dir.display()
            ))
            .into());
        }
    }
    manifest.save(dir)?;
    let missing = manifest.missing(dir);
    let mut report = GenerateReport {
        skipped: (0..manifest.count).filter(|i| !missing.contains(i)).collect(),
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<(usize, Result<(), GenerateError>)> = pool.install(|| {
        missing
            .par_iter()
            .map(|&i| {
                let entry = &manifest.files[i];
                let result = simulate_member(manifest.dataset, entry.seed, mesh, solver)
                    .and_then(|t| Ok(write_trajectory(&t, &dir.join(&entry.file))?));
                progress(i, &result);
                (i, result)
            })
            .collect()
    });
    for (i, r) in outcomes {
        match r {
            Ok(()) => report.written.push(i),
            Err(e) => report.failed.push((i, e.to_string())),
        }
    }
    Ok(report)
}
