//! Mini-batch training of [`Mlp`] heads for least-squares and quantile
//! regression, with deterministic gradient accumulation.

use crate::nn::mlp::{Grad, Mlp};
use crate::rng;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Regression objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    /// Mean squared error; the minimizer is the conditional expectation.
    Ls,
    /// Quantile ("pinball") loss `(xi - z)^+ + (1 - alpha) z`, minimized by
    /// the conditional `alpha`-quantile.
    Qle { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 38,
            epochs: 16,
            batch_size: 256,
            learning_rate: 1e-2,
            optimizer: Optimizer::default(),
            loss: LossKind::Ls,
            seed: 0,
        }
    }
}

/// Per-feature affine normalization fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[f64], n_in: usize) -> Self {
        let n = features.len() / n_in;
        let mut mean = vec![0.0; n_in];
        let mut m2 = vec![0.0; n_in];
        for row in features.chunks_exact(n_in) {
            for (j, &x) in row.iter().enumerate() {
                mean[j] += x;
                m2[j] += x * x;
            }
        }
        let nf = n as f64;
        let mut std = vec![1.0; n_in];
        for j in 0..n_in {
            mean[j] /= nf;
            let v = (m2[j] / nf - mean[j] * mean[j]).max(0.0);
            // Constant features (e.g. dead default indicators) pass through.
            std[j] = if v.sqrt() > 1e-10 { v.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.std[j];
        }
    }
}

/// A trained regression head: network, input normalization, the affine
/// label transform the network was trained under, and the final full-sample
/// training loss (in original label units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedHead {
    pub mlp: Mlp,
    pub norm: Standardizer,
    pub out_mean: f64,
    pub out_std: f64,
    pub train_loss: f64,
}

impl TrainedHead {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; x.len()];
        self.norm.apply(x, &mut z);
        self.out_mean + self.out_std * self.mlp.forward(&z)
    }

    /// Batch prediction over row-major features.
    pub fn predict_all(&self, features: &[f64]) -> Vec<f64> {
        let n_in = self.mlp.n_in;
        features
            .par_chunks_exact(n_in)
            .map(|row| self.predict(row))
            .collect()
    }
}

#[inline]
fn loss_value(loss: LossKind, out: f64, xi: f64) -> f64 {
    match loss {
        LossKind::Ls => (out - xi) * (out - xi),
        LossKind::Qle { alpha } => (xi - out).max(0.0) + (1.0 - alpha) * out,
    }
}

#[inline]
fn loss_dout(loss: LossKind, out: f64, xi: f64) -> f64 {
    match loss {
        LossKind::Ls => 2.0 * (out - xi),
        LossKind::Qle { alpha } => {
            if xi > out {
                -alpha
            } else {
                1.0 - alpha
            }
        }
    }
}

const GRAD_CHUNK: usize = 256;

/// Mean gradient over one contiguous (already shuffled) batch, accumulated
/// chunkwise and reduced in sample order so the result does not depend on
/// the thread partition.
fn batch_grad(mlp: &Mlp, features: &[f64], labels: &[f64], loss: LossKind) -> Grad {
    let n_in = mlp.n_in;
    let parts: Vec<Grad> = features
        .par_chunks(GRAD_CHUNK * n_in)
        .zip(labels.par_chunks(GRAD_CHUNK))
        .map(|(fc, lc)| {
            let mut g = Grad::zeros(mlp.n_in, mlp.n_hidden);
            for (row, &xi) in fc.chunks_exact(n_in).zip(lc) {
                mlp.accumulate_grad(row, |out| loss_dout(loss, out, xi), &mut g);
            }
            g
        })
        .collect();
    let mut total = Grad::zeros(mlp.n_in, mlp.n_hidden);
    for p in &parts {
        total.add(p);
    }
    total.scale(1.0 / labels.len() as f64);
    total
}

/// Full-sample mean loss.
pub fn mean_loss(head: &TrainedHead, features: &[f64], labels: &[f64], loss: LossKind) -> f64 {
    let preds = head.predict_all(features);
    preds
        .iter()
        .zip(labels)
        .map(|(&p, &xi)| loss_value(loss, p, xi))
        .sum::<f64>()
        / labels.len() as f64
}

struct AdamState {
    m: Grad,
    v: Grad,
    t: usize,
}

fn apply_update(mlp: &mut Mlp, g: &Grad, lr: f64, opt: Optimizer, adam: &mut Option<AdamState>) {
    match opt {
        Optimizer::Sgd => {
            for (w, gw) in mlp.w1.iter_mut().zip(&g.w1) {
                *w -= lr * gw;
            }
            for (w, gw) in mlp.b1.iter_mut().zip(&g.b1) {
                *w -= lr * gw;
            }
            for (w, gw) in mlp.w2.iter_mut().zip(&g.w2) {
                *w -= lr * gw;
            }
            mlp.b2 -= lr * g.b2;
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let st = adam.get_or_insert_with(|| AdamState {
                m: Grad::zeros(mlp.n_in, mlp.n_hidden),
                v: Grad::zeros(mlp.n_in, mlp.n_hidden),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            let step = |w: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            };
            for i in 0..g.w1.len() {
                step(&mut mlp.w1[i], &mut st.m.w1[i], &mut st.v.w1[i], g.w1[i]);
            }
            for i in 0..g.b1.len() {
                step(&mut mlp.b1[i], &mut st.m.b1[i], &mut st.v.b1[i], g.b1[i]);
            }
            for i in 0..g.w2.len() {
                step(&mut mlp.w2[i], &mut st.m.w2[i], &mut st.v.w2[i], g.w2[i]);
            }
            step(&mut mlp.b2, &mut st.m.b2, &mut st.v.b2, g.b2);
        }
    }
}

/// Fits a regression head on row-major `features` (`labels.len()` rows of
/// `n_in` columns). `warm` seeds the weights from a previously trained head
/// (typically the same estimator at the next time step); input normalization
/// is always refitted to the current sample.
pub fn nn_regress(
    features: &[f64],
    labels: &[f64],
    n_in: usize,
    cfg: &TrainConfig,
    warm: Option<&TrainedHead>,
) -> Result<TrainedHead> {
    let n = labels.len();
    if n == 0 || features.len() != n * n_in {
        return Err(Error::DimensionMismatch(format!(
            "features {} vs {} labels of width {}",
            features.len(),
            n,
            n_in
        )));
    }
    if let LossKind::Qle { alpha } = cfg.loss {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::InvalidParams(format!("alpha {alpha} not in (0,1)")));
        }
    }
    let norm = Standardizer::fit(features, n_in);
    let mut std_features = vec![0.0; features.len()];
    std_features
        .par_chunks_mut(n_in)
        .zip(features.par_chunks_exact(n_in))
        .for_each(|(out, row)| norm.apply(row, out));
    // Labels are trained in standardized units as well; the affine transform
    // commutes with both the conditional mean and (since out_std > 0) the
    // conditional quantile, and is undone in `predict`.
    let out_mean = labels.iter().sum::<f64>() / n as f64;
    let out_var = labels.iter().map(|l| (l - out_mean) * (l - out_mean)).sum::<f64>() / n as f64;
    if out_var.sqrt() <= 1e-12 * out_mean.abs().max(1.0) {
        // Degenerate sample: every label equals out_mean. Short-circuit to
        // an exact constant predictor (zero network plus the affine shift);
        // this keeps identically-zero value processes exactly zero.
        let mut mlp = Mlp::init(n_in, cfg.hidden, cfg.seed);
        mlp.w2.iter_mut().for_each(|w| *w = 0.0);
        mlp.b2 = 0.0;
        return Ok(TrainedHead {
            mlp,
            norm,
            out_mean,
            out_std: 1.0,
            train_loss: if let LossKind::Qle { alpha } = cfg.loss {
                (1.0 - alpha) * out_mean
            } else {
                0.0
            },
        });
    }
    let out_std = out_var.sqrt();
    let labels_n: Vec<f64> = labels.iter().map(|l| (l - out_mean) / out_std).collect();

    let mut mlp = match warm {
        Some(h) if h.mlp.n_in == n_in && h.mlp.n_hidden == cfg.hidden => h.mlp.clone(),
        Some(_) => {
            return Err(Error::DimensionMismatch(
                "warm-start head has a different architecture".into(),
            ))
        }
        None => Mlp::init(n_in, cfg.hidden, cfg.seed),
    };
    let mut adam = None;
    let mut perm: Vec<usize> = (0..n).collect();
    // Batches train on rows copied into shuffled order once per epoch, so
    // the gradient passes stream through memory instead of hopping.
    let mut shuf_f = vec![0.0; std_features.len()];
    let mut shuf_l = vec![0.0; n];
    for epoch in 0..cfg.epochs {
        // Cosine decay from the configured rate down to 1% of it; the tail
        // of the schedule damps Adam's oscillation around the optimum.
        let frac = if cfg.epochs > 1 {
            epoch as f64 / (cfg.epochs - 1) as f64
        } else {
            0.0
        };
        let lr = cfg.learning_rate
            * (0.001 + 0.999 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        let mut r = rng::stream(cfg.seed, &[21, epoch as u64]);
        // Fisher-Yates reshuffle each epoch.
        for i in (1..n).rev() {
            let j = (rng::uniform_open01(&mut r) * (i + 1) as f64) as usize;
            perm.swap(i, j.min(i));
        }
        for (k, &i) in perm.iter().enumerate() {
            shuf_f[k * n_in..(k + 1) * n_in]
                .copy_from_slice(&std_features[i * n_in..(i + 1) * n_in]);
            shuf_l[k] = labels_n[i];
        }
        for (fb, lb) in shuf_f
            .chunks(cfg.batch_size * n_in)
            .zip(shuf_l.chunks(cfg.batch_size))
        {
            let g = batch_grad(&mlp, fb, lb, cfg.loss);
            if !g.b2.is_finite() {
                return Err(Error::TrainingDiverged {
                    step: epoch,
                    head: format!("{:?}", cfg.loss),
                    detail: "non-finite gradient".into(),
                });
            }
            apply_update(&mut mlp, &g, lr, cfg.optimizer, &mut adam);
        }
    }
    let mut head = TrainedHead {
        mlp,
        norm,
        out_mean,
        out_std,
        train_loss: 0.0,
    };
    // Final loss (original label units) is computed on the standardized copy
    // with an identity input normalizer to avoid re-standardizing every row.
    let eval = TrainedHead {
        mlp: head.mlp.clone(),
        norm: Standardizer {
            mean: vec![0.0; n_in],
            std: vec![1.0; n_in],
        },
        out_mean,
        out_std,
        train_loss: 0.0,
    };
    head.train_loss = mean_loss(&eval, &std_features, labels, cfg.loss);
    if !head.train_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            step: cfg.epochs,
            head: format!("{:?}", cfg.loss),
            detail: format!("final loss {}", head.train_loss),
        });
    }
    Ok(head)
}

/// Expected-shortfall exceedance labels `(1 - alpha)^{-1} (xi - VaR(x))^+`
/// built from a fitted value-at-risk head's predictions. Their conditional
/// mean is `ES - VaR` (nonnegative), so the shortfall estimate is the sum
/// of the value-at-risk head and a head fitted on these labels (clamped at
/// zero, since the gap's conditional mean is nonnegative); fitting the gap
/// instead of the shortfall itself keeps the estimated tail ordering
/// `ES >= VaR` exact pathwise.
pub fn es_labels(xi: &[f64], var_pred: &[f64], alpha: f64) -> Vec<f64> {
    let w = 1.0 / (1.0 - alpha);
    xi.iter()
        .zip(var_pred)
        .map(|(&x, &v)| w * (x - v).max(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        // Feature x ~ N(0,1); label xi = x + eps with eps ~ N(0,1).
        let mut r = rng::stream(seed, &[99]);
        let mut xs = Vec::with_capacity(n);
        let mut xi = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng::standard_normal(&mut r);
            let e = rng::standard_normal(&mut r);
            xs.push(x);
            xi.push(x + e);
            eps.push(e);
        }
        (xs, xi, eps)
    }

    #[test]
    fn fits_constant_target() {
        let (xs, _, _) = gaussian_data(4000, 1);
        let labels = vec![3.7; 4000];
        let cfg = TrainConfig {
            hidden: 8,
            epochs: 60,
            ..TrainConfig::default()
        };
        let head = nn_regress(&xs, &labels, 1, &cfg, None).unwrap();
        for x in [-1.5, 0.0, 1.5] {
            let got = head.predict(&[x]);
            assert!((got - 3.7).abs() < 0.03, "at {x}: {got}");
        }
        assert!(head.train_loss < 1e-3);
    }

    #[test]
    fn ls_recovers_conditional_mean() {
        let (xs, xi, _) = gaussian_data(20_000, 2);
        let cfg = TrainConfig {
            hidden: 16,
            epochs: 30,
            ..TrainConfig::default()
        };
        let head = nn_regress(&xs, &xi, 1, &cfg, None).unwrap();
        // E[xi | x] = x.
        for x in [-1.5, -0.5, 0.0, 0.5, 1.5] {
            assert!((head.predict(&[x]) - x).abs() < 0.06, "at {x}");
        }
        // Training loss approaches Var(eps) = 1.
        assert!((head.train_loss - 1.0).abs() < 0.05);
    }

    #[test]
    fn qle_recovers_conditional_quantile() {
        let (xs, xi, _) = gaussian_data(30_000, 3);
        let alpha = 0.85;
        let z = rng::inverse_normal_cdf(alpha);
        let cfg = TrainConfig {
            hidden: 16,
            epochs: 30,
            loss: LossKind::Qle { alpha },
            ..TrainConfig::default()
        };
        let head = nn_regress(&xs, &xi, 1, &cfg, None).unwrap();
        for x in [-1.0, 0.0, 1.0] {
            let got = head.predict(&[x]);
            assert!((got - (x + z)).abs() < 0.08, "at {x}: {got} vs {}", x + z);
        }
    }

    #[test]
    fn es_pipeline_recovers_conditional_expected_shortfall() {
        let (xs, xi, _) = gaussian_data(30_000, 4);
        let alpha = 0.85;
        let var_cfg = TrainConfig {
            hidden: 16,
            epochs: 30,
            loss: LossKind::Qle { alpha },
            ..TrainConfig::default()
        };
        let var_head = nn_regress(&xs, &xi, 1, &var_cfg, None).unwrap();
        let var_pred = var_head.predict_all(&xs);
        let labels = es_labels(&xi, &var_pred, alpha);
        let es_cfg = TrainConfig {
            hidden: 16,
            epochs: 30,
            ..TrainConfig::default()
        };
        let es_head = nn_regress(&xs, &labels, 1, &es_cfg, None).unwrap();
        let z = rng::inverse_normal_cdf(alpha);
        let es_true = rng::normal_pdf(z) / (1.0 - alpha);
        for x in [-1.0, 0.0, 1.0] {
            let got = var_head.predict(&[x]) + es_head.predict(&[x]);
            let want = x + es_true;
            assert!(
                (got - want).abs() / want.abs().max(1.0) < 0.05,
                "at {x}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, xi, _) = gaussian_data(5_000, 5);
        let cfg = TrainConfig {
            hidden: 8,
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = nn_regress(&xs, &xi, 1, &cfg, None).unwrap();
        let b = nn_regress(&xs, &xi, 1, &cfg, None).unwrap();
        assert_eq!(a.mlp, b.mlp);
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        // Warm-started reruns are bit-identical too.
        let w1 = nn_regress(&xs, &xi, 1, &cfg, Some(&a)).unwrap();
        let w2 = nn_regress(&xs, &xi, 1, &cfg, Some(&a)).unwrap();
        assert_eq!(w1.mlp, w2.mlp);
    }

    #[test]
    fn diverging_run_is_reported() {
        let (xs, xi, _) = gaussian_data(2_000, 6);
        let cfg = TrainConfig {
            hidden: 8,
            epochs: 10,
            learning_rate: 1e18,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        assert!(matches!(
            nn_regress(&xs, &xi, 1, &cfg, None),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn sgd_reduces_loss() {
        let (xs, xi, _) = gaussian_data(5_000, 7);
        let base = TrainConfig {
            hidden: 8,
            epochs: 0,
            ..TrainConfig::default()
        };
        let init = nn_regress(&xs, &xi, 1, &base, None).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 1e-2,
            optimizer: Optimizer::Sgd,
            ..base
        };
        let head = nn_regress(&xs, &xi, 1, &cfg, None).unwrap();
        assert!(head.train_loss < init.train_loss);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // The pinball loss of a constant predictor over a sample is
        // minimized (over a grid) at the empirical alpha-quantile.
        #[test]
        fn pinball_grid_minimum_is_empirical_quantile(
            seed in 0u64..1000,
            alpha in 0.05f64..0.95,
        ) {
            let mut r = rng::stream(seed, &[123]);
            let n = 400;
            let xi: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
            let mut sorted = xi.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
            let q = sorted[k];
            let pin = |z: f64| -> f64 {
                xi.iter().map(|&x| (x - z).max(0.0) + (1.0 - alpha) * z).sum()
            };
            let at_q = pin(q);
            for step in [-0.5f64, -0.1, 0.1, 0.5] {
                prop_assert!(at_q <= pin(q + step) + 1e-9);
            }
        }

        // ES labels average to the empirical tail mean scaling.
        #[test]
        fn es_labels_mean_matches_tail_average(seed in 0u64..1000) {
            let mut r = rng::stream(seed, &[124]);
            let n = 500;
            let alpha = 0.8;
            let xi: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
            let v = 0.3; // arbitrary constant threshold
            let labels = es_labels(&xi, &vec![v; n], alpha);
            let direct: f64 = xi.iter().map(|&x| (x - v).max(0.0)).sum::<f64>()
                / ((1.0 - alpha) * n as f64);
            let mean = labels.iter().sum::<f64>() / n as f64;
            prop_assert!((mean - direct).abs() < 1e-10);
        }
    }
}
