//! TOML run configuration. Every key is optional; command-line flags
//! override file values, which override the built-in defaults.

use std::path::Path;

use cylflow::mesher::MeshParams;
use cylflow::model::MgnConfig;
use cylflow::solver::SolverConfig;
use cylflow::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: MgnConfig,
    pub solver: SolverConfig,
    pub mesh: MeshParams,
    /// Seeds for repeated experiments.
    pub seeds: Vec<u64>,
    /// Simulations per generated dataset.
    pub count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: MgnConfig::default(),
            solver: SolverConfig::default(),
            mesh: MeshParams::default(),
            seeds: vec![0, 1, 2],
            count: cylflow::dataset::STANDARD_COUNT,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, String> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
