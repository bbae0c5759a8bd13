//! Deterministic, partition-independent random number streams.
//!
//! Every logical consumer (a path, an inner default branch, a twin branch, a
//! training run) gets its own ChaCha8 stream keyed by a label sequence mixed
//! through SplitMix64. Identical `(seed, labels)` always yields the same
//! stream, regardless of how work is partitioned across threads.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 stream keyed by `seed` and a sequence of stream labels.
pub fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    let _ = splitmix64(&mut state);
    for &l in labels {
        state ^= l.wrapping_mul(0x2545_f491_4f6c_dd1d);
        let _ = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw on (0, 1), open at both ends.
pub fn uniform_open01(rng: &mut impl RngCore) -> f64 {
    // 53 random bits, shifted into (0,1).
    let u = rng.next_u64() >> 11;
    (u as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw via inverse-CDF (Acklam's rational approximation
/// plus one Halley refinement against the CDF below).
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    inverse_normal_cdf(uniform_open01(rng))
}

/// Unit-rate exponential draw.
pub fn exponential(rng: &mut impl RngCore) -> f64 {
    -uniform_open01(rng).ln()
}

/// Inverse of the standard normal CDF.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must be in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Halley step against the exact CDF.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Standard normal CDF (Hart/West rational approximation, near machine
/// precision over the whole real line).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs();
    let cum = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.071_067_811_865_475 {
            let mut b = 3.526_249_659_989_11e-2 * z + 0.700_383_064_443_688;
            b = b * z + 6.373_962_203_531_65;
            b = b * z + 33.912_866_078_383;
            b = b * z + 112.079_291_497_871;
            b = b * z + 221.213_596_169_931;
            b = b * z + 220.206_867_912_376;
            let mut c = 8.838_834_764_831_84e-2 * z + 1.755_667_163_182_64;
            c = c * z + 16.064_177_579_207;
            c = c * z + 86.780_732_202_946_1;
            c = c * z + 296.564_248_779_674;
            c = c * z + 637.333_633_378_831;
            c = c * z + 793.826_512_519_948;
            c = c * z + 440.413_735_824_752;
            e * b / c
        } else {
            let mut b = z + 0.65;
            b = z + 4.0 / b;
            b = z + 3.0 / b;
            b = z + 2.0 / b;
            b = z + 1.0 / b;
            e / (b * 2.506_628_274_631_000_5)
        }
    };
    if x > 0.0 {
        1.0 - cum
    } else {
        cum
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
