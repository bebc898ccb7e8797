use serde::{Deserialize, Serialize};

use crate::error::{precondition, LabError, Result};

/// Seed used whenever none is given. Never derived from the clock.
pub const DEFAULT_SEED: u64 = 0x4C45_5257_4C41_4231;
pub const DEFAULT_RHO: f64 = 8.0;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000_000;
/// Prefactor of the truncation certificate `C_bias * rho^(2-d)`.
pub const C_BIAS: f64 = 2.0;

/// Parameters shared by every Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    pub seed: u64,
    pub replica_count: u64,
    /// Stabilisation radius `R_in` (lattice units).
    pub r_in: f64,
    /// `R_out = rho * R_in`.
    pub rho: f64,
    pub max_steps: u64,
}

impl SimConfig {
    pub fn new(d: usize, replica_count: u64, r_in: f64) -> Self {
        Self { d, seed: DEFAULT_SEED, replica_count, r_in, rho: DEFAULT_RHO, max_steps: DEFAULT_MAX_STEPS }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn r_out(&self) -> f64 {
        self.rho * self.r_in
    }

    /// Total-variation certificate for the stabilised prefix.
    pub fn bias_bound(&self) -> f64 {
        bias_bound(self.d, self.rho)
    }

    /// Checks that hold for every use (tests and oracles included).
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.d > 16 {
            return precondition(format!("dimension {} outside 1..=16", self.d));
        }
        if self.replica_count < 1 {
            return precondition("replica_count must be at least 1");
        }
        if !(self.r_in.is_finite() && self.r_in > 0.0) {
            return precondition(format!("r_in must be positive, got {}", self.r_in));
        }
        if !(self.rho.is_finite() && self.rho >= 2.0) {
            return precondition(format!("rho must be >= 2, got {}", self.rho));
        }
        if self.r_out() > 1.0e6 {
            return precondition("r_out above 1e6 lattice units");
        }
        if self.max_steps == 0 {
            return precondition("max_steps must be positive");
        }
        Ok(())
    }

    /// Additional checks for the LERW experiments (transient regime only).
    pub fn validate_experiment(&self) -> Result<()> {
        self.validate()?;
        if self.d < 5 {
            return precondition(format!("LERW experiments need d >= 5, got d = {}", self.d));
        }
        Ok(())
    }
}

pub fn bias_bound(d: usize, rho: f64) -> f64 {
    (C_BIAS * rho.powf(2.0 - d as f64)).min(1.0)
}

/// Worker count from `LERWLAB_WORKERS`, else the machine's parallelism.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var("LERWLAB_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&w| w >= 1)
            .ok_or_else(|| LabError::Parse(format!("LERWLAB_WORKERS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
