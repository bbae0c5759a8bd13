//! The simulated scenario cube and its flat-binary persistence.

use crate::grid::TimeGrid;
use crate::market::{ChannelLayout, DefaultLayer};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Simulated risk factors, discounting, mark-to-market and default layers,
/// per (path, simulation node). Immutable once built; safe to share
/// read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCube {
    pub grid: TimeGrid,
    pub layout: ChannelLayout,
    pub n_paths: usize,
    pub seed: u64,
    /// `[path][node][channel]`, nodes `0..=n_sim`.
    pub factors: Vec<f64>,
    /// Domestic discount factor to time 0, `[path][node]`.
    pub discount: Vec<f64>,
    /// Aggregated per-counterparty MtM in domestic units, `[path][node][cpty]`.
    /// Empty until `price_mtm` fills it.
    pub mtm: Vec<f64>,
    /// Hierarchical default layer; `None` until `simulate_defaults` runs.
    pub defaults: Option<DefaultLayer>,
}

impl ScenarioCube {
    pub fn n_nodes(&self) -> usize {
        self.grid.n_sim() + 1
    }

    #[inline]
    pub fn factor(&self, path: usize, node: usize, channel: usize) -> f64 {
        let c = self.layout.total();
        self.factors[(path * self.n_nodes() + node) * c + channel]
    }

    #[inline]
    pub fn factors_at(&self, path: usize, node: usize) -> &[f64] {
        let c = self.layout.total();
        let base = (path * self.n_nodes() + node) * c;
        &self.factors[base..base + c]
    }

    #[inline]
    pub fn discount_at(&self, path: usize, node: usize) -> f64 {
        self.discount[path * self.n_nodes() + node]
    }

    #[inline]
    pub fn mtm_at(&self, path: usize, node: usize, cpty: usize) -> f64 {
        let nc = self.layout.n_clients;
        self.mtm[(path * self.n_nodes() + node) * nc + cpty]
    }

    pub fn has_mtm(&self) -> bool {
        !self.mtm.is_empty()
    }

    /// Persist to a little-endian flat binary plus a JSON sidecar describing
    /// the shape. `base` is the path without extension; writes `base.bin`
    /// and `base.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let meta = CubeMeta {
            grid: self.grid.clone(),
            n_econ: self.layout.n_econ,
            n_fx: self.layout.n_fx,
            n_clients: self.layout.n_clients,
            n_paths: self.n_paths,
            n_nodes: self.n_nodes(),
            channels: self.layout.total(),
            seed: self.seed,
            has_mtm: self.has_mtm(),
            n_inner: self.defaults.as_ref().map(|d| d.n_inner),
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(base.with_extension("bin"))?);
        write_f64s(&mut f, &self.factors)?;
        write_f64s(&mut f, &self.discount)?;
        write_f64s(&mut f, &self.mtm)?;
        if let Some(d) = &self.defaults {
            for &t in &d.settle_node {
                f.write_all(&t.to_le_bytes())?;
            }
        }
        f.flush()?;
        let json = serde_json::to_string_pretty(&meta)?;
        std::fs::write(base.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let meta: CubeMeta =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
        let layout = ChannelLayout {
            n_econ: meta.n_econ,
            n_fx: meta.n_fx,
            n_clients: meta.n_clients,
        };
        if layout.total() != meta.channels {
            return Err(Error::DimensionMismatch("sidecar channel count".into()));
        }
        let mut f = std::io::BufReader::new(std::fs::File::open(base.with_extension("bin"))?);
        let factors = read_f64s(&mut f, meta.n_paths * meta.n_nodes * meta.channels)?;
        let discount = read_f64s(&mut f, meta.n_paths * meta.n_nodes)?;
        let mtm = if meta.has_mtm {
            read_f64s(&mut f, meta.n_paths * meta.n_nodes * meta.n_clients)?
        } else {
            Vec::new()
        };
        let defaults = match meta.n_inner {
            Some(n_inner) => {
                let count = meta.n_paths * n_inner * meta.n_clients;
                let mut buf = vec![0u8; count * 4];
                f.read_exact(&mut buf)?;
                let settle_node = buf
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                Some(DefaultLayer {
                    n_inner,
                    n_clients: meta.n_clients,
                    settle_node,
                })
            }
            None => None,
        };
        Ok(ScenarioCube {
            grid: meta.grid,
            layout,
            n_paths: meta.n_paths,
            seed: meta.seed,
            factors,
            discount,
            mtm,
            defaults,
        })
    }
}

/// JSON sidecar describing the binary layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeMeta {
    pub grid: TimeGrid,
    pub n_econ: usize,
    pub n_fx: usize,
    pub n_clients: usize,
    pub n_paths: usize,
    pub n_nodes: usize,
    pub channels: usize,
    pub seed: u64,
    pub has_mtm: bool,
    pub n_inner: Option<usize>,
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}
