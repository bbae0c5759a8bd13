//! One-hidden-layer perceptron with softplus activation.

use crate::rng;
use serde::{Deserialize, Serialize};

/// Numerically stable softplus `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Softplus and its derivative (the logistic sigmoid) from a single shared
/// exponential; the transcendental calls dominate the per-sample cost of
/// training.
#[inline]
fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let sp = x.max(0.0) + e.ln_1p();
    let sg = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, sg)
}

/// Dot product with four independent accumulators so the loop pipelines.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// `n_in -> n_hidden -> 1` network. Weights are stored row-major:
/// `w1[h * n_in + i]` connects input `i` to hidden unit `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradient (or moment) buffer with the same shape as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Grad {
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        Grad {
            w1: vec![0.0; n_in * n_hidden],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_hidden],
            b2: 0.0,
        }
    }

    pub fn add(&mut self, other: &Grad) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        self.b2 += other.b2;
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.w1 {
            *a *= s;
        }
        for a in &mut self.b1 {
            *a *= s;
        }
        for a in &mut self.w2 {
            *a *= s;
        }
        self.b2 *= s;
    }
}

impl Mlp {
    /// He fan-in initialization (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(n_in: usize, n_hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[11]);
        let s1 = (2.0 / n_in as f64).sqrt();
        let s2 = (2.0 / n_hidden as f64).sqrt();
        let w1 = (0..n_in * n_hidden)
            .map(|_| s1 * rng::standard_normal(&mut r))
            .collect();
        let w2 = (0..n_hidden)
            .map(|_| s2 * rng::standard_normal(&mut r))
            .collect();
        Mlp {
            n_in,
            n_hidden,
            w1,
            b1: vec![0.0; n_hidden],
            w2,
            b2: 0.0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_in * self.n_hidden + 2 * self.n_hidden + 1
    }

    /// Forward pass on one (already standardized) sample.
    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_in);
        let mut out = self.b2;
        for h in 0..self.n_hidden {
            let row = &self.w1[h * self.n_in..(h + 1) * self.n_in];
            out += self.w2[h] * softplus(self.b1[h] + dot(row, x));
        }
        out
    }

    /// Forward pass storing pre-activations, then backprop of `d_out`
    /// (the loss derivative with respect to the network output) into `grad`.
    /// Returns the network output.
    pub fn accumulate_grad(&self, x: &[f64], d_out_of: impl Fn(f64) -> f64, grad: &mut Grad) -> f64 {
        let nh = self.n_hidden;
        // Activation values and derivatives; stack-allocated for the sizes
        // training actually uses.
        let mut small = [0.0f64; 128];
        let mut heap: Vec<f64>;
        let buf: &mut [f64] = if 2 * nh <= small.len() {
            &mut small[..2 * nh]
        } else {
            heap = vec![0.0; 2 * nh];
            &mut heap
        };
        let (sp, sg) = buf.split_at_mut(nh);
        let mut out = self.b2;
        for h in 0..nh {
            let row = &self.w1[h * self.n_in..(h + 1) * self.n_in];
            let (s, g) = softplus_sigmoid(self.b1[h] + dot(row, x));
            sp[h] = s;
            sg[h] = g;
            out += self.w2[h] * s;
        }
        let d = d_out_of(out);
        grad.b2 += d;
        for h in 0..nh {
            grad.w2[h] += d * sp[h];
            let dh = d * self.w2[h] * sg[h];
            grad.b1[h] += dh;
            let row = &mut grad.w1[h * self.n_in..(h + 1) * self.n_in];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dh * xi;
            }
        }
        out
    }
}
