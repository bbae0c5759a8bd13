//! Hybrid market/default scenario generation.
//!
//! The scenario cube carries, per (path, grid time): 28 diffusive risk
//! factors (10 Vasicek short rates, 9 log-normal FX spots, 8 client CIR
//! default intensities, 1 bank funding-spread CIR factor), client default
//! indicators simulated hierarchically (many default branches per market
//! path), the per-counterparty aggregated swap mark-to-market in domestic
//! units, and the domestic pathwise discount factor.

mod cube;
mod defaults;
mod params;
mod simulate;
mod swap;

pub use cube::{CubeMeta, ScenarioCube};
pub use defaults::{simulate_defaults, DefaultLayer, NO_DEFAULT};
pub use params::{CirParams, Correlation, FxParams, ModelParams, VasicekParams};
pub use simulate::{simulate_diffusions, Stepper};
pub use swap::{build_portfolio, mtm_at_state, price_mtm, zcb_price, PortfolioSpec, Swap};

/// Number of diffusive channels for the standard 10-economy / 8-client setup
/// is `n_econ + n_fx + n_clients + 1`; the layout helpers below keep channel
/// indexing in one place.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    pub n_econ: usize,
    pub n_fx: usize,
    pub n_clients: usize,
}

impl ChannelLayout {
    pub fn total(&self) -> usize {
        self.n_econ + self.n_fx + self.n_clients + 1
    }
    pub fn rate(&self, e: usize) -> usize {
        e
    }
    pub fn fx(&self, x: usize) -> usize {
        debug_assert!(x >= 1);
        self.n_econ + (x - 1)
    }
    pub fn intensity(&self, c: usize) -> usize {
        self.n_econ + self.n_fx + c
    }
    pub fn bank_spread(&self) -> usize {
        self.n_econ + self.n_fx + self.n_clients
    }
}
