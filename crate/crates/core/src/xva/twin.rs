//! A-posteriori local error control for the FVA and KVA heads.
//!
//! At each pricing node the path is re-branched into two conditionally
//! independent one-step successors (fresh Brownian increments over the
//! coarse step, defaults redrawn from the branched hazard), the one-step
//! labels are rebuilt from the fitted next-node heads on each branch, and
//! the twin identity turns the unobservable squared regression bias into a
//! sample mean with a Monte Carlo confidence band.

use crate::market::{ModelParams, ScenarioCube, Stepper};
use crate::rng;
use crate::validation::{twin_local_error, TwinEstimate};
use crate::xva::solve::Ctx;
use crate::xva::{CvaEstimates, XvaConfig, XvaSolution};
use crate::Result;
use rayon::prelude::*;

const STREAM_TWINS: u64 = 4;

/// Per-node squared-error estimates, indexed by pricing node; `None` at the
/// endpoints where no head is fitted.
pub struct TwinErrors {
    pub t: Vec<f64>,
    pub fva: Vec<Option<TwinEstimate>>,
    pub kva: Vec<Option<TwinEstimate>>,
}

pub fn twin_errors(
    model: &ModelParams,
    cube: &ScenarioCube,
    cfg: &XvaConfig,
    cva: &CvaEstimates,
    sol: &XvaSolution,
    seed: u64,
) -> Result<TwinErrors> {
    let ctx = Ctx::new(cube)?;
    let grid = &cube.grid;
    let stepper = Stepper::new(model, grid)?;
    let n_p = grid.n_pricing();
    let dt = grid.dt_pricing();
    let dt_sim = grid.dt_sim();
    let hurdle_decay = (-cfg.hurdle * dt).exp();
    let layout = cube.layout;
    let n_ch = layout.total();
    let nc = layout.n_clients;

    let mut out = TwinErrors {
        t: (0..=n_p).map(|i| grid.t_pricing(i)).collect(),
        fva: vec![None; n_p + 1],
        kva: vec![None; n_p + 1],
    };

    for i in 1..n_p {
        let s0 = grid.sim_index(i);
        // (fva twin 1, fva twin 2, kva twin 1, kva twin 2) per row.
        let labels: Vec<[f64; 4]> = (0..ctx.n_rows)
            .into_par_iter()
            .map(|row| {
                let (path, inner) = ctx.split(row);
                let mtm_sum = ctx.alive_mtm_sum(row, i);
                let gamma = ctx.gamma(row, i);
                let cva_i = cva.values[i][row];
                let mut z_raw = vec![0.0; n_ch];
                let mut z = vec![0.0; n_ch];
                let mut prev = vec![0.0; n_ch];
                let mut next = vec![0.0; n_ch];
                let mut feat = vec![0.0; ctx.n_features];
                let mut lab = [0.0; 4];
                for k in 0..2 {
                    let mut r =
                        rng::stream(seed, &[STREAM_TWINS, i as u64, row as u64, k as u64]);
                    prev.copy_from_slice(cube.factors_at(path, s0));
                    let mut ratio = 1.0;
                    let mut hazard = vec![0.0; nc];
                    for _ in 0..grid.coarsening {
                        ratio *= stepper.advance(&prev, &mut next, &mut z_raw, &mut z, &mut r);
                        for (c, h) in hazard.iter_mut().enumerate() {
                            let ch = layout.intensity(c);
                            *h += 0.5 * (prev[ch] + next[ch]) * dt_sim;
                        }
                        std::mem::swap(&mut prev, &mut next);
                    }
                    feat[..n_ch].copy_from_slice(&prev);
                    for (c, h) in hazard.iter().enumerate() {
                        let alive = ctx.defaults.alive(path, inner, c, s0) > 0.0
                            && rng::uniform_open01(&mut r) >= 1.0 - (-h).exp();
                        feat[n_ch + c] = if alive { 1.0 } else { 0.0 };
                    }
                    let fva_n = sol.fva_heads[i + 1].as_ref().map_or(0.0, |h| h.predict(&feat));
                    let kva_n = sol.kva_heads[i + 1].as_ref().map_or(0.0, |h| h.predict(&feat));
                    let ec_n = sol.var_heads[i + 1].as_ref().map_or(0.0, |h| h.predict(&feat))
                        + sol.es_heads[i + 1].as_ref().map_or(0.0, |h| h.predict(&feat).max(0.0));
                    let ke = ratio * kva_n.max(ec_n);
                    let gap = mtm_sum - cva_i - ratio * fva_n - ke;
                    lab[k] = ratio * fva_n + dt * gamma * gap.max(0.0);
                    lab[2 + k] = hurdle_decay * (ratio * kva_n + cfg.hurdle * dt * ke);
                }
                lab
            })
            .collect();

        let col = |j: usize| labels.iter().map(|l| l[j]).collect::<Vec<f64>>();
        out.fva[i] = Some(twin_local_error(&sol.fva[i], &col(0), &col(1))?);
        out.kva[i] = Some(twin_local_error(&sol.kva[i], &col(2), &col(3))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xva::solve::tests::{quick_cfg, small_cube};
    use crate::xva::solve_explicit;

    #[test]
    fn riskless_setup_has_zero_error_exactly() {
        let mut m = ModelParams::default_benchmark();
        for c in &mut m.clients {
            c.lambda0 = 0.0;
            c.theta = 0.0;
            c.xi = 0.0;
        }
        m.bank.lambda0 = 0.0;
        m.bank.theta = 0.0;
        m.bank.xi = 0.0;
        let (cube, _) = small_cube(&m, 4, 2, 32, 2);
        let mut cfg = quick_cfg(8);
        cfg.hurdle = 0.0;
        let (cva, sol) = solve_explicit(&cube, &cfg).unwrap();
        let tw = twin_errors(&m, &cube, &cfg, &cva, &sol, 17).unwrap();
        for i in 1..cube.grid.n_pricing() {
            let f = tw.fva[i].unwrap();
            let k = tw.kva[i].unwrap();
            assert_eq!(f.value, 0.0);
            assert_eq!(k.value, 0.0);
        }
    }

    #[test]
    fn estimates_are_plausible_and_deterministic() {
        let m = ModelParams::default_benchmark();
        let (cube, _) = small_cube(&m, 4, 2, 128, 2);
        let cfg = quick_cfg(9);
        let (cva, sol) = solve_explicit(&cube, &cfg).unwrap();
        let a = twin_errors(&m, &cube, &cfg, &cva, &sol, 23).unwrap();
        let b = twin_errors(&m, &cube, &cfg, &cva, &sol, 23).unwrap();
        for i in 1..cube.grid.n_pricing() {
            let ea = a.fva[i].unwrap();
            let eb = b.fva[i].unwrap();
            assert_eq!(ea.value.to_bits(), eb.value.to_bits());
            // A squared error: nonnegative up to Monte Carlo noise. An exact
            // zero is legitimate when the funding gap never goes positive.
            assert!(ea.value >= -4.0 * ea.std_error, "node {i}: {ea:?}");
            assert!(ea.std_error.is_finite() && ea.std_error >= 0.0);
            let ka = a.kva[i].unwrap();
            assert!(ka.value >= -4.0 * ka.std_error, "node {i}: {ka:?}");
        }
        // Different branching seeds move any nonzero estimate.
        let c = twin_errors(&m, &cube, &cfg, &cva, &sol, 24).unwrap();
        let moved = (1..cube.grid.n_pricing()).any(|i| {
            let (x, y) = (a.kva[i].unwrap().value, c.kva[i].unwrap().value);
            x != y || x == 0.0
        });
        assert!(moved);
    }
}
