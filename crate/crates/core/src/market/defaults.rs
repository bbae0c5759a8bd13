//! Hierarchical client-default simulation on top of a diffusion cube.
//!
//! Each outer diffusion path carries `n_inner` independent default branches.
//! Client `c` defaults on a branch when the integrated CIR intensity crosses
//! an Exp(1) threshold; the default settles at the right endpoint of the fine
//! step in which the crossing occurs.

use crate::market::ScenarioCube;
use crate::rng;
use crate::{Error, Result};
use rayon::prelude::*;

/// Sentinel for "no default before the horizon".
pub const NO_DEFAULT: u32 = u32::MAX;

/// Default times per (outer path, inner branch, client), stored as the fine
/// simulation node at which the default settles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefaultLayer {
    pub n_inner: usize,
    pub n_clients: usize,
    /// Flat `[path][inner][client]`; `NO_DEFAULT` when the client survives.
    pub settle_node: Vec<u32>,
}

impl DefaultLayer {
    #[inline]
    fn idx(&self, path: usize, inner: usize, client: usize) -> usize {
        (path * self.n_inner + inner) * self.n_clients + client
    }

    /// Settle node of client `c` on the given branch, or `NO_DEFAULT`.
    #[inline]
    pub fn settle(&self, path: usize, inner: usize, client: usize) -> u32 {
        self.settle_node[self.idx(path, inner, client)]
    }

    /// Survival indicator `J^c` at fine node `node` (1.0 while alive, i.e.
    /// strictly before the settle node; absorbing at 0 afterwards).
    #[inline]
    pub fn alive(&self, path: usize, inner: usize, client: usize, node: usize) -> f64 {
        if (node as u32) < self.settle(path, inner, client) {
            1.0
        } else {
            0.0
        }
    }
}

const STREAM_DEFAULTS: u64 = 3;

/// Draws Exp(1) thresholds per (path, branch, client) and locates the fine
/// step on which the trapezoid-integrated intensity first crosses them.
pub fn simulate_defaults(cube: &ScenarioCube, n_inner: usize, seed: u64) -> Result<DefaultLayer> {
    if n_inner == 0 {
        return Err(Error::InvalidConfig("n_inner must be >= 1".into()));
    }
    let layout = cube.layout;
    let n_clients = layout.n_clients;
    let n_nodes = cube.n_nodes();
    let mut settle_node = vec![NO_DEFAULT; cube.n_paths * n_inner * n_clients];

    settle_node
        .par_chunks_mut(n_inner * n_clients)
        .enumerate()
        .for_each(|(path, out)| {
            // Cumulative trapezoid integral of each client's intensity.
            let mut cum = vec![0.0f64; n_nodes * n_clients];
            for node in 1..n_nodes {
                let prev = cube.factors_at(path, node - 1);
                let next = cube.factors_at(path, node);
                for c in 0..n_clients {
                    let lam = layout.intensity(c);
                    cum[node * n_clients + c] = cum[(node - 1) * n_clients + c]
                        + 0.5 * (prev[lam] + next[lam]) * cube.grid.dt_sim();
                }
            }
            for inner in 0..n_inner {
                let mut r = rng::stream(seed, &[STREAM_DEFAULTS, path as u64, inner as u64]);
                for c in 0..n_clients {
                    let threshold = rng::exponential(&mut r);
                    let slot = inner * n_clients + c;
                    for node in 1..n_nodes {
                        if cum[node * n_clients + c] >= threshold {
                            out[slot] = node as u32;
                            break;
                        }
                    }
                }
            }
        });

    Ok(DefaultLayer {
        n_inner,
        n_clients,
        settle_node,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::market::{simulate_diffusions, ModelParams};

    #[test]
    fn zero_intensity_never_defaults() {
        let mut m = ModelParams::default_benchmark();
        for c in &mut m.clients {
            c.lambda0 = 0.0;
            c.theta = 0.0;
            c.xi = 0.0;
        }
        let grid = TimeGrid::new(10.0, 4, 1).unwrap();
        let cube = simulate_diffusions(&m, &grid, 8, 1).unwrap();
        let d = simulate_defaults(&cube, 4, 9).unwrap();
        assert!(d.settle_node.iter().all(|&s| s == NO_DEFAULT));
    }

    #[test]
    fn constant_intensity_matches_exponential_law() {
        // Freeze every client's intensity at lambda0 = 0.2 by zeroing the
        // CIR vol and mean reversion pull (theta = lambda0).
        let lam = 0.2;
        let mut m = ModelParams::default_benchmark();
        for c in &mut m.clients {
            c.lambda0 = lam;
            c.theta = lam;
            c.xi = 0.0;
        }
        let grid = TimeGrid::new(10.0, 5, 1).unwrap();
        let n_paths = 512;
        let n_inner = 8;
        let cube = simulate_diffusions(&m, &grid, n_paths, 2).unwrap();
        let d = simulate_defaults(&cube, n_inner, 3).unwrap();
        let p_true = 1.0 - (-lam * grid.horizon).exp();
        for c in 0..2 {
            let mut hits = 0usize;
            for path in 0..n_paths {
                for inner in 0..n_inner {
                    if d.settle(path, inner, c) != NO_DEFAULT {
                        hits += 1;
                    }
                }
            }
            let n = (n_paths * n_inner) as f64;
            let p_hat = hits as f64 / n;
            let se = (p_true * (1.0 - p_true) / n).sqrt();
            assert!(
                (p_hat - p_true).abs() < 3.0 * se + 1e-3,
                "client {c}: p_hat {p_hat} vs {p_true}"
            );
        }
    }

    #[test]
    fn alive_indicator_is_absorbing() {
        let m = ModelParams::default_benchmark();
        let grid = TimeGrid::new(10.0, 5, 1).unwrap();
        let cube = simulate_diffusions(&m, &grid, 32, 4).unwrap();
        let d = simulate_defaults(&cube, 2, 5).unwrap();
        for path in 0..32 {
            for inner in 0..2 {
                for c in 0..8 {
                    let mut prev = 1.0;
                    for node in 0..cube.n_nodes() {
                        let j = d.alive(path, inner, c, node);
                        assert!(j <= prev, "J must be non-increasing");
                        prev = j;
                    }
                    let s = d.settle(path, inner, c);
                    if s != NO_DEFAULT {
                        assert!(s >= 1);
                        assert_eq!(d.alive(path, inner, c, s as usize), 0.0);
                        assert_eq!(d.alive(path, inner, c, s as usize - 1), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_in_seed_and_sensitive_to_it() {
        let m = ModelParams::default_benchmark();
        let grid = TimeGrid::new(10.0, 4, 1).unwrap();
        let cube = simulate_diffusions(&m, &grid, 16, 7).unwrap();
        let a = simulate_defaults(&cube, 3, 11).unwrap();
        let b = simulate_defaults(&cube, 3, 11).unwrap();
        let c = simulate_defaults(&cube, 3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
