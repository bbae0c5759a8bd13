//! Twin Monte Carlo estimation of local squared regression errors.
//!
//! For a regression estimate `phi(X)` of `E[xi | X]` and two copies of the
//! label that are independent conditionally on `X`,
//! `E[(phi(X) - E[xi|X])^2] = E[phi^2 - phi (xi1 + xi2) + xi1 xi2]`,
//! so the unobservable squared bias becomes a plain sample mean.

use crate::{Error, Result};

/// Sample-mean estimate of a local squared error together with its Monte
/// Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

impl TwinEstimate {
    /// Upper edge of the `k`-sigma confidence interval.
    pub fn upper(&self, k: f64) -> f64 {
        self.value + k * self.std_error
    }
}

/// Estimates `E[(phi - E[xi|X])^2]` from predictions `phi` and the twin
/// label pair `(xi1, xi2)` drawn conditionally independently given `X`.
pub fn twin_local_error(phi: &[f64], xi1: &[f64], xi2: &[f64]) -> Result<TwinEstimate> {
    let n = phi.len();
    if xi1.len() != n || xi2.len() != n || n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "twin samples: {} / {} / {}",
            n,
            xi1.len(),
            xi2.len()
        )));
    }
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for i in 0..n {
        let z = phi[i] * phi[i] - phi[i] * (xi1[i] + xi2[i]) + xi1[i] * xi2[i];
        sum += z;
        sum2 += z * z;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0);
    Ok(TwinEstimate {
        value: mean,
        std_error: (var / nf).sqrt(),
        n,
    })
}
