pub mod dataset;
pub mod fem;
pub mod generate;
pub mod geometry;
pub mod graph;
pub mod mesher;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod solver;
pub mod sparse;
pub mod trainer;
