//! Pathwise XVA metrics on the pricing grid.
//!
//! The contra-asset system (CVA, FVA) and the capital block (economic
//! capital, KVA) are coupled: the funding gap nets expected capital against
//! the contra-assets, while economic capital is an expected shortfall of
//! forward-looking loss increments that themselves contain CVA and FVA
//! fluctuations. Two solvers are provided: an explicit backward scheme that
//! resolves the coupling within a single sweep by substituting next-step
//! estimates, and a Picard iteration that repeats full sweeps against the
//! previous iterate (useful as a cross-check; its first iterate has no
//! capital netting and overshoots FVA).

mod picard;
mod solve;
mod twin;

pub use picard::solve_picard;
pub use solve::{compute_cva, solve_explicit, CvaEstimates, ProfilePoint, XvaSolution};
pub use twin::{twin_errors, TwinErrors};

use crate::nn::TrainConfig;
use serde::{Deserialize, Serialize};

/// CVA label estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvaMode {
    /// Realized default indicators: exposure is collected only on branches
    /// where the client actually defaults.
    Indicator,
    /// Intensity weighting: each surviving fine step contributes the
    /// conditional default probability times the exposure. Same conditional
    /// expectation, lower label variance.
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XvaConfig {
    /// Base least-squares training configuration; the value-at-risk head
    /// reuses it with the pinball loss at `alpha`.
    pub train: TrainConfig,
    /// Expected-shortfall confidence level for economic capital.
    pub alpha: f64,
    /// Hurdle rate `r_h` at which shareholder capital is remunerated.
    pub hurdle: f64,
    pub cva_mode: CvaMode,
}

impl Default for XvaConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            alpha: 0.85,
            hurdle: 0.1,
            cva_mode: CvaMode::Indicator,
        }
    }
}
