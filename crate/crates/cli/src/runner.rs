//! Orchestration of the simulate → CVA → solve → validate → export pipeline
//! plus the artifact formats (summary JSON, profile/twin/bounds CSV).

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use xva_core::market::{
    build_portfolio, price_mtm, simulate_defaults, simulate_diffusions, ModelParams, ScenarioCube,
};
use xva_core::validation::global_bounds;
use xva_core::xva::{
    solve_explicit, solve_picard, twin_errors, CvaEstimates, TwinErrors, XvaSolution,
};
use xva_core::{Error, Result};

use crate::config::{RunConfig, Scheme};

/// Tracks every file written during a run so that a failure can remove the
/// partial outputs.
pub struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Sink { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn track(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn discard(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn phase<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    eprintln!("[{name}] {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

/// Deterministically regenerates the full scenario cube (diffusions, swap
/// portfolio MtM, hierarchical defaults) from the run configuration.
pub fn build_scenarios(cfg: &RunConfig) -> Result<(ModelParams, ScenarioCube)> {
    let grid = cfg.grid()?;
    let model = cfg.model.clone();
    let mut cube = phase("diffusions", || {
        simulate_diffusions(&model, &grid, cfg.run.n_paths, cfg.run.seed)
    })?;
    phase("pricing", || {
        let portfolio = build_portfolio(cfg.run.seed, cfg.run.n_swaps, &model, &grid)?;
        price_mtm(&portfolio, &model, &mut cube)
    })?;
    phase("defaults", || {
        cube.defaults = Some(simulate_defaults(&cube, cfg.run.n_inner, cfg.run.seed)?);
        Ok(())
    })?;
    Ok((model, cube))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Time0 {
    pub cva: f64,
    pub fva: f64,
    pub kva: f64,
    pub ec: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardRow {
    pub iteration: usize,
    pub fva: f64,
    pub kva: f64,
    pub ec: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub theta: u32,
    pub coarsening: usize,
    pub horizon: f64,
    pub n_pricing_steps: usize,
    pub n_paths: usize,
    pub n_inner: usize,
    pub n_swaps: usize,
    pub alpha: f64,
    pub hurdle: f64,
    pub time0: Time0,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard: Option<Vec<PicardRow>>,
}

pub struct SolveOutput {
    pub cva: CvaEstimates,
    /// All Picard iterates, or the single explicit solution.
    pub iterates: Vec<XvaSolution>,
    pub summary: Summary,
}

impl SolveOutput {
    pub fn solution(&self) -> &XvaSolution {
        self.iterates.last().expect("at least one solve pass")
    }
}

pub fn solve(cfg: &RunConfig, cube: &ScenarioCube) -> Result<SolveOutput> {
    let xcfg = cfg.xva_config();
    let (cva, iterates, picard) = match cfg.run.scheme {
        Scheme::Explicit => {
            let (cva, sol) = phase("solve/explicit", || solve_explicit(cube, &xcfg))?;
            (cva, vec![sol], None)
        }
        Scheme::Picard => {
            let (cva, its) = phase("solve/picard", || {
                solve_picard(cube, &xcfg, cfg.run.picard_iterations)
            })?;
            let rows = its
                .iter()
                .enumerate()
                .map(|(j, s)| PicardRow { iteration: j + 1, fva: s.fva0, kva: s.kva0, ec: s.ec0 })
                .collect();
            (cva, its, Some(rows))
        }
    };
    let last = iterates.last().expect("at least one iterate");
    let summary = Summary {
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        scheme: cfg.run.scheme,
        theta: cfg.grid.theta,
        coarsening: cfg.grid.coarsening,
        horizon: cfg.grid.horizon,
        n_pricing_steps: cube.grid.n_pricing(),
        n_paths: cfg.run.n_paths,
        n_inner: cfg.run.n_inner,
        n_swaps: cfg.run.n_swaps,
        alpha: cfg.xva.alpha,
        hurdle: cfg.xva.hurdle,
        time0: Time0 {
            cva: cva.cva0,
            fva: last.fva0,
            kva: last.kva0,
            ec: last.ec0,
            var: last.var0,
        },
        picard,
    };
    Ok(SolveOutput { cva, iterates, summary })
}

pub fn summary_json(summary: &Summary) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(summary)?;
    out.push(b'\n');
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn stat_row(out: &mut String, prefix: &str, values: &[f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let _ = write!(out, "{prefix},{mean:.10e},{:.10e}", var.sqrt());
    for q in [0.05, 0.25, 0.50, 0.75, 0.95] {
        let _ = write!(out, ",{:.10e}", quantile(&sorted, q));
    }
    out.push('\n');
}

/// Long-format per-step profile: one row per (iteration, metric, pricing
/// node) with cross-sectional mean, std and quantile bands.
pub fn profile_csv(cfg: &RunConfig, out: &SolveOutput, grid_t: &dyn Fn(usize) -> f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={} seed={}", cfg.hash(), cfg.run.seed);
    let _ = writeln!(
        s,
        "scheme,theta,iteration,metric,step,time,mean,std,q05,q25,q50,q75,q95"
    );
    let scheme = match cfg.run.scheme {
        Scheme::Explicit => "explicit",
        Scheme::Picard => "picard",
    };
    let theta = cfg.grid.theta;
    let last_j = out.iterates.len();
    for (idx, sol) in out.iterates.iter().enumerate() {
        let j = if cfg.run.scheme == Scheme::Picard { idx + 1 } else { 0 };
        for i in 0..out.cva.values.len() {
            let t = grid_t(i);
            // The CVA pre-pass is shared by every iterate; emit it once.
            if idx + 1 == last_j {
                stat_row(
                    &mut s,
                    &format!("{scheme},{theta},{j},cva,{i},{t}"),
                    &out.cva.values[i],
                );
            }
            stat_row(&mut s, &format!("{scheme},{theta},{j},fva,{i},{t}"), &sol.fva[i]);
            stat_row(&mut s, &format!("{scheme},{theta},{j},kva,{i},{t}"), &sol.kva[i]);
            stat_row(&mut s, &format!("{scheme},{theta},{j},ec,{i},{t}"), &sol.ec[i]);
        }
    }
    s
}

pub fn run_twin(
    cfg: &RunConfig,
    model: &ModelParams,
    cube: &ScenarioCube,
    out: &SolveOutput,
) -> Result<TwinErrors> {
    phase("twin", || {
        twin_errors(model, cube, &cfg.xva_config(), &out.cva, out.solution(), cfg.run.seed)
    })
}

/// Per-step twin local-error CSV. `value` estimates the squared local
/// regression error; `normalized` is its square root over the RMS of the
/// regressed values at that step; `train_loss` is the head's final
/// full-sample L2 training loss for side-by-side comparison.
pub fn twin_csv(cfg: &RunConfig, out: &SolveOutput, twin: &TwinErrors) -> String {
    let sol = out.solution();
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={} seed={}", cfg.hash(), cfg.run.seed);
    let _ = writeln!(s, "metric,step,time,value,std_error,normalized,train_loss");
    let mut emit = |metric: &str,
                    est: &[Option<xva_core::validation::TwinEstimate>],
                    values: &[Vec<f64>],
                    heads: &[Option<xva_core::nn::TrainedHead>]| {
        for (i, e) in est.iter().enumerate() {
            let Some(e) = e else { continue };
            let rms = (values[i].iter().map(|v| v * v).sum::<f64>()
                / values[i].len() as f64)
                .sqrt();
            let normalized = if rms > 1e-12 { e.value.max(0.0).sqrt() / rms } else { 0.0 };
            let loss = heads[i].as_ref().map_or(0.0, |h| h.train_loss);
            let _ = writeln!(
                s,
                "{metric},{i},{},{:.10e},{:.10e},{:.10e},{:.10e}",
                twin.t[i], e.value, e.std_error, normalized, loss
            );
        }
    };
    emit("fva", &twin.fva, &sol.fva, &sol.fva_heads);
    emit("kva", &twin.kva, &sol.kva, &sol.kva_heads);
    s
}

/// One parsed twin-error CSV row.
#[derive(Debug, Clone)]
pub struct TwinRow {
    pub metric: String,
    pub step: usize,
    pub time: f64,
    pub value: f64,
    pub std_error: f64,
}

pub fn read_twin_csv(path: &Path) -> Result<Vec<TwinRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("metric,") || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 5 {
            return Err(Error::InvalidConfig(format!(
                "malformed twin CSV line: {line}"
            )));
        }
        let bad = |f: &str| Error::InvalidConfig(format!("bad {f} in twin CSV: {line}"));
        rows.push(TwinRow {
            metric: parts[0].to_string(),
            step: parts[1].parse().map_err(|_| bad("step"))?,
            time: parts[2].parse().map_err(|_| bad("time"))?,
            value: parts[3].parse().map_err(|_| bad("value"))?,
            std_error: parts[4].parse().map_err(|_| bad("std_error"))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig("twin CSV contains no data rows".into()));
    }
    Ok(rows)
}

/// Propagates per-step local errors from a twin CSV into global `B0`/`B1`
/// bound tables, one block per metric. Only the Y-error table is observable
/// here; the ES-error table `e` is taken as zero, so the bounds are the
/// Y-part contribution.
pub fn bounds_csv(rows: &[TwinRow], lambda_f: f64, lambda_phi: f64, alpha: f64) -> Result<String> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} not in [0, 1)")));
    }
    let r = lambda_phi / (1.0 - alpha);
    let mut metrics: Vec<String> = Vec::new();
    for row in rows {
        if !metrics.contains(&row.metric) {
            metrics.push(row.metric.clone());
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "metric,step,time,eps,b0,b1,b0_hi,b1_hi");
    for metric in &metrics {
        let mut block: Vec<&TwinRow> = rows.iter().filter(|r| r.metric == *metric).collect();
        block.sort_by_key(|r| r.step);
        if block.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "metric {metric}: need at least two steps for a bound table"
            )));
        }
        let dt = block[1].time - block[0].time;
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "metric {metric}: non-increasing time column"
            )));
        }
        let x = lambda_f * dt;
        let eps: Vec<f64> = block.iter().map(|r| r.value.max(0.0).sqrt()).collect();
        // Upper edges of the 3-sigma confidence interval on the squared
        // local errors, propagated the same way.
        let eps_hi: Vec<f64> = block
            .iter()
            .map(|r| (r.value + 3.0 * r.std_error).max(0.0).sqrt())
            .collect();
        let e = vec![0.0; eps.len()];
        let (b0, b1) = global_bounds(&eps, &e, x, r)?;
        let (b0_hi, b1_hi) = global_bounds(&eps_hi, &e, x, r)?;
        for (k, row) in block.iter().enumerate() {
            let _ = writeln!(
                s,
                "{metric},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                row.step, row.time, eps[k], b0[k], b1[k], b0_hi[k], b1_hi[k]
            );
        }
    }
    Ok(s)
}

/// Per-metric diff of two run summaries, plus the max per-step profile
/// deviation when both profile CSVs are present next to the summaries.
pub fn compare(a_path: &Path, b_path: &Path, force: bool) -> Result<String> {
    let read = |p: &Path| -> Result<Summary> {
        let text = std::fs::read_to_string(p)?;
        Ok(serde_json::from_str(&text)?)
    };
    let a = read(a_path)?;
    let b = read(b_path)?;
    if a.horizon != b.horizon || a.n_pricing_steps != b.n_pricing_steps {
        return Err(Error::InvalidConfig(format!(
            "grid mismatch: {} steps over {}y vs {} steps over {}y",
            a.n_pricing_steps, a.horizon, b.n_pricing_steps, b.horizon
        )));
    }
    if a.config_hash != b.config_hash && !force {
        return Err(Error::InvalidConfig(format!(
            "config hash mismatch ({} vs {}); pass --force to compare anyway",
            a.config_hash, b.config_hash
        )));
    }
    let mut s = String::new();
    let _ = writeln!(s, "metric,a,b,abs_diff,rel_diff");
    let pairs = [
        ("cva", a.time0.cva, b.time0.cva),
        ("fva", a.time0.fva, b.time0.fva),
        ("kva", a.time0.kva, b.time0.kva),
        ("ec", a.time0.ec, b.time0.ec),
        ("var", a.time0.var, b.time0.var),
    ];
    for (name, va, vb) in pairs {
        let abs = (va - vb).abs();
        let denom = va.abs().max(vb.abs());
        let rel = if denom > 0.0 { abs / denom } else { 0.0 };
        let _ = writeln!(s, "{name},{va:.10e},{vb:.10e},{abs:.10e},{rel:.10e}");
    }
    if let (Some(pa), Some(pb)) = (profile_means(a_path)?, profile_means(b_path)?) {
        let mut max_dev: Option<(String, f64)> = None;
        for (key, va) in &pa {
            if let Some(vb) = pb.get(key) {
                let d = (va - vb).abs();
                if max_dev.as_ref().map_or(true, |(_, m)| d > *m) {
                    max_dev = Some((key.clone(), d));
                }
            }
        }
        if let Some((key, dev)) = max_dev {
            let _ = writeln!(s, "# max profile mean deviation {dev:.10e} at {key}");
        }
    }
    Ok(s)
}

/// Final-iteration per-step means from the profile CSV sitting next to a
/// summary, keyed `metric/step`. `None` when no profile was written.
fn profile_means(summary_path: &Path) -> Result<Option<std::collections::BTreeMap<String, f64>>> {
    let path = match summary_path.parent() {
        Some(dir) => dir.join("profile.csv"),
        None => return Ok(None),
    };
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let data: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !(l.starts_with('#') || l.starts_with("scheme,") || l.is_empty()))
        .map(|l| l.split(',').map(str::to_string).collect())
        .filter(|p: &Vec<String>| p.len() >= 7)
        .collect();
    let last_iter = data
        .iter()
        .filter_map(|p| p[2].parse::<usize>().ok())
        .max()
        .unwrap_or(0);
    let mut map = std::collections::BTreeMap::new();
    for p in &data {
        let j: usize = p[2].parse().unwrap_or(0);
        if j == last_iter {
            if let Ok(mean) = p[6].parse::<f64>() {
                map.insert(format!("{}/{}", p[3], p[4]), mean);
            }
        }
    }
    Ok(Some(map))
}
