//! Diffusive layer simulation.
//!
//! Vasicek rates and log-volatility of FX are stepped by their exact
//! transitions on the fine grid; CIR intensity factors use full-truncation
//! Euler, which keeps the stored intensities nonnegative. The 28 Gaussian
//! increments per step are correlated through a factorization of the
//! configured correlation matrix. Each path consumes its own counter-based
//! RNG stream, so results are bit-identical for a given `(seed, n_paths,
//! grid)` regardless of how paths are partitioned across threads.

use crate::grid::TimeGrid;
use crate::market::{ModelParams, ScenarioCube};
use crate::rng;
use crate::Result;
use rayon::prelude::*;

const STREAM_DIFFUSION: u64 = 1;

/// Precomputed one-fine-step transition of all diffusive channels, reusable
/// for whole-path simulation and for re-branching a path from a given state.
pub struct Stepper<'m> {
    model: &'m ModelParams,
    factor: nalgebra::DMatrix<f64>,
    vas: Vec<(f64, f64, f64)>,
    dt: f64,
    sqrt_dt: f64,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m ModelParams, grid: &TimeGrid) -> Result<Self> {
        model.validate()?;
        let dt = grid.dt_sim();
        // Exact-transition coefficients per economy.
        let vas = model
            .economies
            .iter()
            .map(|v| {
                let decay = (-v.a * dt).exp();
                let std = v.sigma * ((1.0 - decay * decay) / (2.0 * v.a)).sqrt();
                (decay, v.b * (1.0 - decay), std)
            })
            .collect();
        Ok(Stepper {
            model,
            factor: model.correlation_factor()?,
            vas,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    /// Time-0 state shared by all paths.
    pub fn init_state(&self, out: &mut [f64]) {
        let layout = self.model.layout();
        for (e, v) in self.model.economies.iter().enumerate() {
            out[layout.rate(e)] = v.r0;
        }
        for (x, fxp) in self.model.fx.iter().enumerate() {
            out[layout.fx(x + 1)] = fxp.spot;
        }
        for (c, p) in self.model.clients.iter().enumerate() {
            out[layout.intensity(c)] = p.lambda0;
        }
        out[layout.bank_spread()] = self.model.bank.lambda0;
    }

    /// Advances `prev` into `next` with fresh normals from `rng`; `z_raw`
    /// and `z` are caller-provided scratch of channel width. Returns the
    /// one-step discount factor (trapezoidal domestic short rate).
    pub fn advance(
        &self,
        prev: &[f64],
        next: &mut [f64],
        z_raw: &mut [f64],
        z: &mut [f64],
        rng: &mut impl rand_core::RngCore,
    ) -> f64 {
        let layout = self.model.layout();
        let n_ch = layout.total();
        let dt = self.dt;
        for zi in z_raw.iter_mut() {
            *zi = rng::standard_normal(rng);
        }
        // z = F * z_raw
        for i in 0..n_ch {
            let mut acc = 0.0;
            for j in 0..n_ch {
                acc += self.factor[(i, j)] * z_raw[j];
            }
            z[i] = acc;
        }
        let r_dom = prev[layout.rate(0)];
        for (e, &(decay, drift, std)) in self.vas.iter().enumerate() {
            let ch = layout.rate(e);
            next[ch] = prev[ch] * decay + drift + std * z[ch];
        }
        for (x, fxp) in self.model.fx.iter().enumerate() {
            let ch = layout.fx(x + 1);
            let r_for = prev[layout.rate(x + 1)];
            let drift = (r_dom - r_for - 0.5 * fxp.sigma * fxp.sigma) * dt;
            next[ch] = prev[ch] * (drift + fxp.sigma * self.sqrt_dt * z[ch]).exp();
        }
        for (c, p) in self
            .model
            .clients
            .iter()
            .enumerate()
            .map(|(c, p)| (layout.intensity(c), p))
            .chain(std::iter::once((layout.bank_spread(), &self.model.bank)))
        {
            let lam = prev[c].max(0.0);
            let stepped =
                prev[c] + p.kappa * (p.theta - lam) * dt + p.xi * (lam * dt).sqrt() * z[c];
            // Full truncation: the stored intensity is the positive part.
            next[c] = stepped.max(0.0);
        }
        let r_next = next[layout.rate(0)];
        (-(0.5 * (r_dom + r_next)) * dt).exp()
    }
}

pub fn simulate_diffusions(
    model: &ModelParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<ScenarioCube> {
    if n_paths == 0 {
        return Err(crate::Error::InvalidConfig("n_paths must be >= 1".into()));
    }
    let stepper = Stepper::new(model, grid)?;
    let layout = model.layout();
    let n_ch = layout.total();
    let n_nodes = grid.n_sim() + 1;

    let mut factors = vec![0.0; n_paths * n_nodes * n_ch];
    let mut discount = vec![0.0; n_paths * n_nodes];

    factors
        .par_chunks_mut(n_nodes * n_ch)
        .zip(discount.par_chunks_mut(n_nodes))
        .enumerate()
        .for_each(|(path, (pf, pd))| {
            let mut rng_path = rng::stream(seed, &[STREAM_DIFFUSION, path as u64]);
            let mut z_raw = vec![0.0; n_ch];
            let mut z = vec![0.0; n_ch];

            stepper.init_state(&mut pf[..n_ch]);
            pd[0] = 1.0;

            for s in 0..grid.n_sim() {
                let (prev, next) = pf[s * n_ch..(s + 2) * n_ch].split_at_mut(n_ch);
                let ratio = stepper.advance(prev, next, &mut z_raw, &mut z, &mut rng_path);
                pd[s + 1] = pd[s] * ratio;
            }
        });

    Ok(ScenarioCube {
        grid: grid.clone(),
        layout,
        n_paths,
        seed,
        factors,
        discount,
        mtm: Vec::new(),
        defaults: None,
    })
}
