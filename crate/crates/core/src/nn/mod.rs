//! Single-hidden-layer regression networks used for all conditional
//! expectation, value-at-risk and expected-shortfall estimators.

mod mlp;
mod train;

pub use mlp::{Grad, Mlp};
pub use train::{
    es_labels, mean_loss, nn_regress, LossKind, Optimizer, Standardizer, TrainConfig, TrainedHead,
};
