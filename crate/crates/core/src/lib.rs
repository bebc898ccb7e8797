//! Simulation and verification laboratory for the loop-erased random walk in
//! high dimensions and the continuous-time random walk on its trace.

pub mod bounds;
pub mod classical;
pub mod config;
pub mod desk;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod hop;
pub mod kernel;
pub mod lattice;
pub mod lerw;
pub mod loop_erasure;
pub mod numeric;
pub mod oracle;
pub mod parallel;
pub mod records;
pub mod rng;
pub mod site_index;
pub mod stats;
pub mod verify;
pub mod walk;

pub use config::SimConfig;
pub use error::{LabError, Result};
pub use lattice::{neighbors, LatticePath, LatticePoint, SimplePath};
