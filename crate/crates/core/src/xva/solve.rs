//! CVA pre-pass and the shared backward sweep for FVA / KVA / economic
//! capital.
//!
//! All labels are anchored at the left node of their step: next-step
//! estimates enter through the stepwise discount ratio `D_{i+1} / D_i`, so
//! at zero rates the scheme reduces to the undiscounted recursions. Economic
//! capital at node `i` is the conditional expected shortfall of the sum of
//! discounted loss increments over the one-year window starting at `t_i`,
//! re-expressed in `t_i` money by dividing by `D_i`.

use crate::absde::unconditional_var_es;
use crate::market::{DefaultLayer, ScenarioCube, NO_DEFAULT};
use crate::nn::{es_labels, nn_regress, LossKind, TrainConfig, TrainedHead};
use crate::xva::{CvaMode, XvaConfig};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Shared row geometry: one regression row per (outer path, inner default
/// branch); features are the diffusive channels plus the per-client survival
/// indicators at the node.
pub(crate) struct Ctx<'a> {
    pub cube: &'a ScenarioCube,
    pub defaults: &'a DefaultLayer,
    pub n_rows: usize,
    pub n_features: usize,
}

impl<'a> Ctx<'a> {
    pub fn new(cube: &'a ScenarioCube) -> Result<Self> {
        if !cube.has_mtm() {
            return Err(Error::InvalidConfig(
                "cube has no MtM layer; run price_mtm first".into(),
            ));
        }
        let defaults = cube.defaults.as_ref().ok_or_else(|| {
            Error::InvalidConfig("cube has no default layer; run simulate_defaults first".into())
        })?;
        if defaults.n_clients != cube.layout.n_clients {
            return Err(Error::DimensionMismatch("default layer clients".into()));
        }
        Ok(Self {
            cube,
            defaults,
            n_rows: cube.n_paths * defaults.n_inner,
            n_features: cube.layout.total() + cube.layout.n_clients,
        })
    }

    #[inline]
    pub fn split(&self, row: usize) -> (usize, usize) {
        (row / self.defaults.n_inner, row % self.defaults.n_inner)
    }

    /// Discount factor to time 0 at pricing node `i` (per outer path).
    #[inline]
    pub fn disc(&self, row: usize, i: usize) -> f64 {
        let (path, _) = self.split(row);
        self.cube.discount_at(path, self.cube.grid.sim_index(i))
    }

    /// Unsecured borrowing spread of the bank at pricing node `i`.
    #[inline]
    pub fn gamma(&self, row: usize, i: usize) -> f64 {
        let (path, _) = self.split(row);
        self.cube
            .factor(path, self.cube.grid.sim_index(i), self.cube.layout.bank_spread())
    }

    /// Signed MtM over surviving clients at pricing node `i`.
    pub fn alive_mtm_sum(&self, row: usize, i: usize) -> f64 {
        let (path, inner) = self.split(row);
        let s = self.cube.grid.sim_index(i);
        (0..self.cube.layout.n_clients)
            .map(|c| self.defaults.alive(path, inner, c, s) * self.cube.mtm_at(path, s, c))
            .sum()
    }

    /// Positive exposure of clients settling within pricing step `i`,
    /// valued at the left node.
    pub fn settlement(&self, row: usize, i: usize) -> f64 {
        let (path, inner) = self.split(row);
        let s0 = self.cube.grid.sim_index(i);
        let s1 = self.cube.grid.sim_index(i + 1);
        (0..self.cube.layout.n_clients)
            .filter(|&c| {
                let st = self.defaults.settle(path, inner, c);
                st != NO_DEFAULT && (st as usize) > s0 && (st as usize) <= s1
            })
            .map(|c| self.cube.mtm_at(path, s0, c).max(0.0))
            .sum()
    }

    /// Regression features at pricing node `i`, row-major over all rows.
    pub fn gather_features(&self, i: usize, out: &mut Vec<f64>) {
        let s = self.cube.grid.sim_index(i);
        let nc = self.cube.layout.n_clients;
        out.clear();
        out.reserve(self.n_rows * self.n_features);
        for row in 0..self.n_rows {
            let (path, inner) = self.split(row);
            out.extend_from_slice(self.cube.factors_at(path, s));
            for c in 0..nc {
                out.push(self.defaults.alive(path, inner, c, s));
            }
        }
    }
}

/// CVA pre-pass output: time-0 value, per-row conditional estimates at every
/// pricing node (node 0 carries the time-0 value on every row), and the
/// fitted heads for out-of-sample evaluation.
pub struct CvaEstimates {
    pub cva0: f64,
    /// `[pricing node][row]`.
    pub values: Vec<Vec<f64>>,
    pub heads: Vec<Option<TrainedHead>>,
}

/// Pathwise discounted CVA labels per (pricing node, row): the suffix sum of
/// default settlements over fine steps, divided by the node's discount.
pub(crate) fn cva_labels(ctx: &Ctx, mode: CvaMode) -> Vec<Vec<f64>> {
    let grid = &ctx.cube.grid;
    let (n_sim, n_p, c) = (grid.n_sim(), grid.n_pricing(), grid.coarsening);
    let nc = ctx.cube.layout.n_clients;
    let dt = grid.dt_sim();
    let layout = ctx.cube.layout;

    let mut flat = vec![0.0; ctx.n_rows * (n_p + 1)];
    flat.par_chunks_mut(n_p + 1).enumerate().for_each(|(row, out)| {
        let (path, inner) = ctx.split(row);
        let mut acc = 0.0;
        out[n_p] = 0.0;
        for s in (0..n_sim).rev() {
            let d_next = ctx.cube.discount_at(path, s + 1);
            match mode {
                CvaMode::Indicator => {
                    for cc in 0..nc {
                        if ctx.defaults.settle(path, inner, cc) == (s + 1) as u32 {
                            acc += d_next * ctx.cube.mtm_at(path, s + 1, cc).max(0.0);
                        }
                    }
                }
                CvaMode::Intensity => {
                    let prev = ctx.cube.factors_at(path, s);
                    let next = ctx.cube.factors_at(path, s + 1);
                    for cc in 0..nc {
                        let j = ctx.defaults.alive(path, inner, cc, s);
                        if j > 0.0 {
                            let dh = 0.5 * (prev[layout.intensity(cc)] + next[layout.intensity(cc)]) * dt;
                            acc += j
                                * (-(-dh).exp_m1())
                                * d_next
                                * ctx.cube.mtm_at(path, s + 1, cc).max(0.0);
                        }
                    }
                }
            }
            if s % c == 0 {
                out[s / c] = acc / ctx.cube.discount_at(path, s);
            }
        }
    });

    // Transpose to [node][row] for per-node regression.
    (0..=n_p)
        .map(|i| (0..ctx.n_rows).map(|row| flat[row * (n_p + 1) + i]).collect())
        .collect()
}

pub(crate) fn compute_cva_ctx(ctx: &Ctx, cfg: &XvaConfig) -> Result<CvaEstimates> {
    let n_p = ctx.cube.grid.n_pricing();
    let labels = cva_labels(ctx, cfg.cva_mode);
    let mut values = vec![Vec::new(); n_p + 1];
    let mut heads: Vec<Option<TrainedHead>> = (0..=n_p).map(|_| None).collect();
    values[n_p] = vec![0.0; ctx.n_rows];

    let mut feat = Vec::new();
    for i in (1..n_p).rev() {
        ctx.gather_features(i, &mut feat);
        let head = nn_regress(&feat, &labels[i], ctx.n_features, &cfg.train, heads[i + 1].as_ref())?;
        values[i] = head.predict_all(&feat);
        heads[i] = Some(head);
    }
    let cva0 = labels[0].iter().sum::<f64>() / ctx.n_rows as f64;
    values[0] = vec![cva0; ctx.n_rows];
    Ok(CvaEstimates { cva0, values, heads })
}

/// Stand-alone CVA estimation (the pre-pass of the full solver).
pub fn compute_cva(cube: &ScenarioCube, cfg: &XvaConfig) -> Result<CvaEstimates> {
    compute_cva_ctx(&Ctx::new(cube)?, cfg)
}

/// Which estimates feed the nonlinear funding gap and the capital-cost
/// accrual at `t_i`.
pub(crate) enum GapSource<'a> {
    /// Explicit scheme: discounted next-step estimates from this sweep.
    Current,
    /// First Picard iterate: next-step FVA / KVA as proxies, capital zero.
    Bootstrap,
    /// Later Picard iterates: previous iterate's estimates at `t_i`.
    Previous(&'a XvaSolution),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    pub cva: f64,
    pub fva: f64,
    pub kva: f64,
    pub ec: f64,
}

/// One backward sweep's output. Per-node vectors are `[pricing node][row]`;
/// node 0 repeats the time-0 scalar on every row.
pub struct XvaSolution {
    pub fva0: f64,
    pub kva0: f64,
    /// Economic capital at time 0 (unconditional expected shortfall).
    pub ec0: f64,
    /// Value-at-risk of the time-0 loss window, for diagnostics.
    pub var0: f64,
    pub fva: Vec<Vec<f64>>,
    pub kva: Vec<Vec<f64>>,
    pub ec: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub fva_heads: Vec<Option<TrainedHead>>,
    pub kva_heads: Vec<Option<TrainedHead>>,
    pub var_heads: Vec<Option<TrainedHead>>,
    pub es_heads: Vec<Option<TrainedHead>>,
    /// Cross-sectional means per pricing node.
    pub profile: Vec<ProfilePoint>,
}

pub(crate) fn backward_pass(
    ctx: &Ctx,
    cfg: &XvaConfig,
    cva: &CvaEstimates,
    source: GapSource,
) -> Result<XvaSolution> {
    let grid = &ctx.cube.grid;
    let n_p = grid.n_pricing();
    let n_rows = ctx.n_rows;
    let dt = grid.dt_pricing();
    if !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha {}", cfg.alpha)));
    }
    if cfg.hurdle < 0.0 {
        return Err(Error::InvalidParams(format!("hurdle {}", cfg.hurdle)));
    }
    let hurdle_decay = (-cfg.hurdle * dt).exp();
    let var_cfg = TrainConfig {
        loss: LossKind::Qle { alpha: cfg.alpha },
        ..cfg.train
    };

    let mut fva = vec![Vec::new(); n_p + 1];
    let mut kva = vec![Vec::new(); n_p + 1];
    let mut ec = vec![Vec::new(); n_p + 1];
    let mut var = vec![Vec::new(); n_p + 1];
    let mut dl = vec![Vec::new(); n_p];
    fva[n_p] = vec![0.0; n_rows];
    kva[n_p] = vec![0.0; n_rows];
    ec[n_p] = vec![0.0; n_rows];
    var[n_p] = vec![0.0; n_rows];

    let mut fva_heads: Vec<Option<TrainedHead>> = (0..=n_p).map(|_| None).collect();
    let mut kva_heads: Vec<Option<TrainedHead>> = (0..=n_p).map(|_| None).collect();
    let mut var_heads: Vec<Option<TrainedHead>> = (0..=n_p).map(|_| None).collect();
    let mut es_heads: Vec<Option<TrainedHead>> = (0..=n_p).map(|_| None).collect();

    let (mut fva0, mut kva0, mut ec0, mut var0) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    let mut feat = Vec::new();

    for i in (0..n_p).rev() {
        let mut xi_fva = vec![0.0; n_rows];
        let mut xi_kva = vec![0.0; n_rows];
        // Funding-cost accrual over the step, kept for the loss increment.
        let mut fund = vec![0.0; n_rows];
        for row in 0..n_rows {
            let ratio = ctx.disc(row, i + 1) / ctx.disc(row, i);
            let fva_next = ratio * fva[i + 1][row];
            let kva_next = ratio * kva[i + 1][row];
            let ec_next = ratio * ec[i + 1][row];
            let (f_ref, ke_ref) = match source {
                GapSource::Current => (fva_next, kva_next.max(ec_next)),
                GapSource::Bootstrap => (fva_next, kva_next.max(0.0)),
                GapSource::Previous(prev) => (
                    prev.fva[i][row],
                    prev.kva[i][row].max(prev.ec[i][row]),
                ),
            };
            let gap = ctx.alive_mtm_sum(row, i) - cva.values[i][row] - f_ref - ke_ref;
            fund[row] = dt * ctx.gamma(row, i) * gap.max(0.0);
            xi_fva[row] = fva_next + fund[row];
            xi_kva[row] = hurdle_decay * (ratio * kva[i + 1][row] + cfg.hurdle * dt * ke_ref);
        }
        if xi_fva.iter().chain(xi_kva.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("labels at pricing node {i}")));
        }

        if i == 0 {
            fva0 = xi_fva.iter().sum::<f64>() / n_rows as f64;
            kva0 = xi_kva.iter().sum::<f64>() / n_rows as f64;
            fva[0] = vec![fva0; n_rows];
            kva[0] = vec![kva0; n_rows];
        } else {
            ctx.gather_features(i, &mut feat);
            let fh = nn_regress(&feat, &xi_fva, ctx.n_features, &cfg.train, fva_heads[i + 1].as_ref())?;
            fva[i] = fh.predict_all(&feat);
            fva_heads[i] = Some(fh);
            let kh = nn_regress(&feat, &xi_kva, ctx.n_features, &cfg.train, kva_heads[i + 1].as_ref())?;
            kva[i] = kh.predict_all(&feat);
            kva_heads[i] = Some(kh);
        }

        // Discounted loss increment over (t_i, t_{i+1}]: contra-asset
        // fluctuations, settled exposures, and the funding cost accrual.
        dl[i] = (0..n_rows)
            .map(|row| {
                let d_i = ctx.disc(row, i);
                let d_n = ctx.disc(row, i + 1);
                d_n * cva.values[i + 1][row] - d_i * cva.values[i][row]
                    + d_n * ctx.settlement(row, i)
                    + d_n * fva[i + 1][row]
                    - d_i * fva[i][row]
                    + d_i * fund[row]
            })
            .collect();

        let end = grid.window_end(i);
        let lab: Vec<f64> = (0..n_rows)
            .map(|row| {
                let s: f64 = (i..end).map(|j| dl[j][row]).sum();
                s / ctx.disc(row, i)
            })
            .collect();
        if i == 0 {
            let (v, e) = unconditional_var_es(&lab, cfg.alpha);
            var0 = v;
            ec0 = e;
            var[0] = vec![v; n_rows];
            ec[0] = vec![e; n_rows];
        } else {
            let vh = nn_regress(&feat, &lab, ctx.n_features, &var_cfg, var_heads[i + 1].as_ref())?;
            var[i] = vh.predict_all(&feat);
            let esl = es_labels(&lab, &var[i], cfg.alpha);
            let eh = nn_regress(&feat, &esl, ctx.n_features, &cfg.train, es_heads[i + 1].as_ref())?;
            // Shortfall = quantile head + fitted exceedance gap, clamped at
            // zero so the estimated tail ordering ES >= VaR holds pathwise.
            ec[i] = eh
                .predict_all(&feat)
                .iter()
                .zip(&var[i])
                .map(|(g, v)| v + g.max(0.0))
                .collect();
            var_heads[i] = Some(vh);
            es_heads[i] = Some(eh);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let profile = (0..=n_p)
        .map(|i| ProfilePoint {
            t: grid.t_pricing(i),
            cva: mean(&cva.values[i]),
            fva: mean(&fva[i]),
            kva: mean(&kva[i]),
            ec: mean(&ec[i]),
        })
        .collect();

    Ok(XvaSolution {
        fva0,
        kva0,
        ec0,
        var0,
        fva,
        kva,
        ec,
        var,
        fva_heads,
        kva_heads,
        var_heads,
        es_heads,
        profile,
    })
}

/// Full explicit solve: CVA pre-pass, then one backward sweep in which the
/// funding gap and capital cost use the (discounted) next-node estimates.
pub fn solve_explicit(
    cube: &ScenarioCube,
    cfg: &XvaConfig,
) -> Result<(CvaEstimates, XvaSolution)> {
    let ctx = Ctx::new(cube)?;
    let cva = compute_cva_ctx(&ctx, cfg)?;
    let sol = backward_pass(&ctx, cfg, &cva, GapSource::Current)?;
    Ok((cva, sol))
}
