//! Pathwise XVA computation engine.
//!
//! The crate is organised around five subsystems:
//!
//! * [`market`] — hybrid Markov scenario generation: correlated Vasicek short
//!   rates, log-normal FX, CIR default intensities, hierarchical client
//!   defaults and analytic swap mark-to-market.
//! * [`nn`] — from-scratch feed-forward networks with least-squares and
//!   quantile (pinball) regression training, used for every regression head.
//! * [`absde`] — the generic explicit backward simulation/regression scheme
//!   for anticipated BSDEs whose driver consumes a conditional expected
//!   shortfall of a window sum of martingale increments.
//! * [`xva`] — the CVA/FVA/KVA/EC system instantiated on simulated scenarios,
//!   with both the explicit one-pass scheme and the implicit/Picard scheme.
//! * [`validation`] — a-posteriori error control: twin Monte Carlo local
//!   regression-error estimation and global error-bound tables.

pub mod absde;
pub mod error;
pub mod grid;
pub mod market;
pub mod nn;
pub mod rng;
pub mod validation;
pub mod xva;

pub use error::{Error, Result};
