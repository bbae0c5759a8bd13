//! Nested simulation/pricing time grids.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform simulation grid of `2^theta` steps over `[0, horizon]`, with a
/// pricing (regression) grid obtained by keeping every `coarsening`-th
/// simulation node. The expected-shortfall window spans one year, clamped at
/// the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub theta: u32,
    pub coarsening: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, theta: u32, coarsening: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if !(3..=12).contains(&theta) {
            return Err(Error::InvalidConfig(format!(
                "theta must be in [3, 12], got {theta}"
            )));
        }
        let n_sim = 1usize << theta;
        if coarsening == 0 || n_sim % coarsening != 0 {
            return Err(Error::InvalidConfig(format!(
                "coarsening must divide 2^theta = {n_sim}, got {coarsening}"
            )));
        }
        Ok(Self {
            horizon,
            theta,
            coarsening,
        })
    }

    /// Number of simulation steps (grid has `n_sim() + 1` nodes).
    pub fn n_sim(&self) -> usize {
        1usize << self.theta
    }

    /// Number of pricing steps.
    pub fn n_pricing(&self) -> usize {
        self.n_sim() / self.coarsening
    }

    /// Simulation step size in years.
    pub fn dt_sim(&self) -> f64 {
        self.horizon / self.n_sim() as f64
    }

    /// Pricing step size in years.
    pub fn dt_pricing(&self) -> f64 {
        self.horizon / self.n_pricing() as f64
    }

    /// Simulation node index of pricing node `i`.
    pub fn sim_index(&self, i: usize) -> usize {
        i * self.coarsening
    }

    /// Time of pricing node `i`.
    pub fn t_pricing(&self, i: usize) -> f64 {
        self.sim_index(i) as f64 * self.dt_sim()
    }

    /// Time of simulation node `s`.
    pub fn t_sim(&self, s: usize) -> f64 {
        s as f64 * self.dt_sim()
    }

    /// Expected-shortfall window length in pricing steps: one year, at least
    /// one step. The window end is clamped at the horizon by callers.
    pub fn es_window(&self) -> usize {
        ((1.0 / self.dt_pricing()).round() as usize).max(1)
    }

    /// End-of-window pricing index for pricing node `i`.
    pub fn window_end(&self, i: usize) -> usize {
        (i + self.es_window()).min(self.n_pricing())
    }
}
