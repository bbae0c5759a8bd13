//! Explicit backward simulation/regression solver for anticipated BSDEs
//! whose anticipating term is an expected shortfall of the solution's
//! martingale increments over a forward-looking time window.

use crate::nn::{es_labels, nn_regress, LossKind, TrainConfig, TrainedHead};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Problem data on a fixed time grid `t_i = i * dt`, `i = 0..=n_steps`.
///
/// `features` is row-major `[path][step][feature]` over all `n_steps + 1`
/// grid nodes; `phi_increments` is `[path][step]` with entry `i` carrying the
/// risk-factor increment over `(t_i, t_{i+1}]`.
pub struct AbsdeProblem<'p> {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub n_features: usize,
    pub features: &'p [f64],
    pub terminal: &'p [f64],
    pub phi_increments: &'p [f64],
    /// Driver `f(i, path, y_next, rho_next)` evaluated at `t_i` on the
    /// path's state, with the step-`i+1` estimates of `Y` and `rho`.
    pub driver: &'p (dyn Fn(usize, usize, f64, f64) -> f64 + Sync),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsdeConfig {
    /// Base least-squares training configuration; the value-at-risk head
    /// reuses it with the pinball loss at `alpha`.
    pub train: TrainConfig,
    /// Confidence level of the expected-shortfall coefficient.
    pub alpha: f64,
    /// Forward window length in grid steps.
    pub window: usize,
}

/// Backward-solve output. Per-step vectors are indexed `[step][path]` for
/// steps `1..=n_steps`; index 0 holds the scalar time-0 statistics repeated
/// conventions (`y[0]` is empty, use `y0`).
pub struct SolveOutput {
    pub y0: f64,
    pub var0: f64,
    pub rho0: f64,
    pub y: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub martingale: Vec<Vec<f64>>,
    /// Full-sample least-squares training loss of each `Y` head.
    pub y_losses: Vec<f64>,
    pub y_heads: Vec<Option<TrainedHead>>,
    pub var_heads: Vec<Option<TrainedHead>>,
    pub es_heads: Vec<Option<TrainedHead>>,
}

/// Sum of `phi_increments` over the window `{i, ..., min(i + m, n) - 1}`.
pub fn window_labels(p: &AbsdeProblem, window: usize, step: usize) -> Vec<f64> {
    let n = p.n_steps;
    let end = (step + window).min(n);
    (0..p.n_paths)
        .map(|path| {
            let row = &p.phi_increments[path * n..(path + 1) * n];
            row[step..end].iter().sum()
        })
        .collect()
}

/// Empirical `alpha`-quantile and tail mean of a sample (unconditional
/// VaR / ES, used at time 0 where the state is deterministic).
pub fn unconditional_var_es(sample: &[f64], alpha: f64) -> (f64, f64) {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
    let var = sorted[k];
    let tail = &sorted[k..];
    let es = tail.iter().sum::<f64>() / tail.len() as f64;
    (var, es)
}

fn gather_features(p: &AbsdeProblem, step: usize, out: &mut Vec<f64>) {
    let w = p.n_features;
    let stride = (p.n_steps + 1) * w;
    out.clear();
    for path in 0..p.n_paths {
        let base = path * stride + step * w;
        out.extend_from_slice(&p.features[base..base + w]);
    }
}

/// One backward sweep of the explicit scheme. Per step, the conditional
/// expectation head is fitted first, then the martingale is updated, then
/// the value-at-risk and expected-shortfall heads are fitted on the window
/// labels; all heads are warm-started from the previous (later) step.
pub fn solve_explicit(p: &AbsdeProblem, cfg: &AbsdeConfig) -> Result<SolveOutput> {
    let n = p.n_steps;
    if n < 1 || p.n_paths < 2 {
        return Err(Error::InvalidConfig("need n_steps >= 1, n_paths >= 2".into()));
    }
    if p.terminal.len() != p.n_paths
        || p.phi_increments.len() != p.n_paths * n
        || p.features.len() != p.n_paths * (n + 1) * p.n_features
    {
        return Err(Error::DimensionMismatch("problem arrays".into()));
    }
    if !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha {}", cfg.alpha)));
    }

    let mut y = vec![Vec::new(); n + 1];
    let mut var = vec![Vec::new(); n + 1];
    let mut rho = vec![Vec::new(); n + 1];
    let mut mart = vec![Vec::new(); n + 1];
    let mut y_losses = vec![f64::NAN; n + 1];
    let mut y_heads: Vec<Option<TrainedHead>> = (0..=n).map(|_| None).collect();
    let mut var_heads: Vec<Option<TrainedHead>> = (0..=n).map(|_| None).collect();
    let mut es_heads: Vec<Option<TrainedHead>> = (0..=n).map(|_| None).collect();

    y[n] = p.terminal.to_vec();
    rho[n] = vec![0.0; p.n_paths];
    var[n] = vec![0.0; p.n_paths];
    mart[n] = vec![0.0; p.n_paths];

    let var_cfg = TrainConfig {
        loss: LossKind::Qle { alpha: cfg.alpha },
        ..cfg.train
    };
    let mut feat = Vec::new();
    let mut y0 = f64::NAN;
    let mut var0 = f64::NAN;
    let mut rho0 = f64::NAN;

    for i in (0..n).rev() {
        // xi = Y_{i+1} + f(t_i, X_i, Y_{i+1}, rho_{i+1}) dt
        let xi: Vec<f64> = (0..p.n_paths)
            .map(|path| {
                let yn = y[i + 1][path];
                yn + (p.driver)(i, path, yn, rho[i + 1][path]) * p.dt
            })
            .collect();
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("labels at step {i}")));
        }
        if i == 0 {
            // Deterministic initial state: plain sample means.
            y0 = xi.iter().sum::<f64>() / p.n_paths as f64;
            let phi = window_labels(p, cfg.window, 0);
            let (v, e) = unconditional_var_es(&phi, cfg.alpha);
            var0 = v;
            rho0 = e;
            break;
        }
        gather_features(p, i, &mut feat);

        let y_head = nn_regress(&feat, &xi, p.n_features, &cfg.train, y_heads[i + 1].as_ref())?;
        y[i] = y_head.predict_all(&feat);
        y_losses[i] = y_head.train_loss;
        mart[i] = (0..p.n_paths)
            .map(|path| mart[i + 1][path] + y[i][path] - xi[path])
            .collect();

        let phi = window_labels(p, cfg.window, i);
        let var_head = nn_regress(&feat, &phi, p.n_features, &var_cfg, var_heads[i + 1].as_ref())?;
        var[i] = var_head.predict_all(&feat);
        let es_lab = es_labels(&phi, &var[i], cfg.alpha);
        let es_head = nn_regress(&feat, &es_lab, p.n_features, &cfg.train, es_heads[i + 1].as_ref())?;
        // The shortfall is the quantile head plus the fitted exceedance gap,
        // clamped at zero: the gap's conditional mean is nonnegative, so the
        // projection only reduces error and keeps ES >= VaR pathwise.
        rho[i] = es_head
            .predict_all(&feat)
            .iter()
            .zip(&var[i])
            .map(|(g, v)| v + g.max(0.0))
            .collect();

        y_heads[i] = Some(y_head);
        var_heads[i] = Some(var_head);
        es_heads[i] = Some(es_head);
    }

    Ok(SolveOutput {
        y0,
        var0,
        rho0,
        y,
        var,
        rho,
        martingale: mart,
        y_losses,
        y_heads,
        var_heads,
        es_heads,
    })
}
