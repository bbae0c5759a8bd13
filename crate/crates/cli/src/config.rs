//! Run configuration: TOML schema, CLI/env overrides and the config hash
//! that stamps every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use xva_core::market::ModelParams;
use xva_core::nn::{LossKind, Optimizer, TrainConfig};
use xva_core::xva::{CvaMode, XvaConfig};
use xva_core::{Error, Result};

pub const OUT_DIR_ENV: &str = "XVA_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Explicit,
    Picard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub n_paths: usize,
    pub n_inner: usize,
    pub n_swaps: usize,
    pub scheme: Scheme,
    pub picard_iterations: usize,
    pub out_dir: PathBuf,
    pub twin: bool,
    pub bounds: bool,
    pub profiles: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            n_paths: 1 << 10,
            n_inner: 8,
            n_swaps: 100,
            scheme: Scheme::Explicit,
            picard_iterations: 4,
            out_dir: PathBuf::from("out"),
            twin: false,
            bounds: false,
            profiles: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub horizon: f64,
    pub theta: u32,
    pub coarsening: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { horizon: 10.0, theta: 5, coarsening: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XvaSection {
    pub alpha: f64,
    pub hurdle: f64,
    pub cva_mode: CvaMode,
}

impl Default for XvaSection {
    fn default() -> Self {
        let d = XvaConfig::default();
        XvaSection { alpha: d.alpha, hurdle: d.hurdle, cva_mode: d.cva_mode }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            hidden: d.hidden,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

/// The whole run configuration. Serialized form (canonical JSON) is hashed
/// into the config id embedded in every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub grid: GridSection,
    pub xva: XvaSection,
    pub train: TrainSection,
    pub model: ModelParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection::default(),
            grid: GridSection::default(),
            xva: XvaSection::default(),
            train: TrainSection::default(),
            model: ModelParams::default_benchmark(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.run.n_paths == 0 || self.run.n_inner == 0 || self.run.n_swaps == 0 {
            return Err(Error::InvalidConfig(
                "n_paths, n_inner and n_swaps must all be >= 1".into(),
            ));
        }
        if !(0.5..1.0).contains(&self.xva.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in [0.5, 1), got {}",
                self.xva.alpha
            )));
        }
        if !(self.xva.hurdle >= 0.0 && self.xva.hurdle.is_finite()) {
            return Err(Error::InvalidConfig("hurdle must be finite and >= 0".into()));
        }
        if self.run.scheme == Scheme::Picard && self.run.picard_iterations == 0 {
            return Err(Error::InvalidConfig("picard_iterations must be >= 1".into()));
        }
        if self.train.hidden == 0 || self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::InvalidConfig("train sizes must all be >= 1".into()));
        }
        // This also range-checks theta (memory guard) and the coarsening.
        xva_core::grid::TimeGrid::new(self.grid.horizon, self.grid.theta, self.grid.coarsening)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<xva_core::grid::TimeGrid> {
        xva_core::grid::TimeGrid::new(self.grid.horizon, self.grid.theta, self.grid.coarsening)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.train.hidden,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: Optimizer::default(),
            loss: LossKind::Ls,
            seed: self.run.seed,
        }
    }

    pub fn xva_config(&self) -> XvaConfig {
        XvaConfig {
            train: self.train_config(),
            alpha: self.xva.alpha,
            hurdle: self.xva.hurdle,
            cva_mode: self.xva.cva_mode,
        }
    }

    /// Short hex digest over the canonical JSON form. The output directory is
    /// deployment plumbing, not part of the experiment, so it is excluded.
    pub fn hash(&self) -> String {
        let mut hashable = self.clone();
        hashable.run.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&hashable).expect("config is serializable");
        let digest = Sha256::digest(&json);
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

/// Flags shared by the run-style subcommands. Precedence: config file <
/// `XVA_OUT_DIR` env var < explicit flag.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Path to a TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Time-grid refinement exponent (2^theta fine steps).
    #[arg(long)]
    pub theta: Option<u32>,
    /// Pricing-grid coarsening factor (must divide 2^theta).
    #[arg(long)]
    pub coarsening: Option<usize>,
    /// Number of outer diffusion paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Number of inner default branches per outer path.
    #[arg(long)]
    pub inner: Option<usize>,
    /// Master seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solve scheme.
    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,
    /// Number of Picard iterations (picard scheme only).
    #[arg(long)]
    pub picard_iters: Option<usize>,
    /// Expected-shortfall confidence level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Capital hurdle rate.
    #[arg(long)]
    pub hurdle: Option<f64>,
    /// Output directory for artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run the twin Monte-Carlo local-error estimator after solving.
    #[arg(long)]
    pub validate: bool,
    /// Derive global error-bound tables from the twin errors.
    #[arg(long)]
    pub bounds: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            cfg.run.out_dir = PathBuf::from(dir);
        }
        if let Some(v) = self.theta {
            cfg.grid.theta = v;
        }
        if let Some(v) = self.coarsening {
            cfg.grid.coarsening = v;
        }
        if let Some(v) = self.paths {
            cfg.run.n_paths = v;
        }
        if let Some(v) = self.inner {
            cfg.run.n_inner = v;
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = self.scheme {
            cfg.run.scheme = v;
        }
        if let Some(v) = self.picard_iters {
            cfg.run.picard_iterations = v;
        }
        if let Some(v) = self.alpha {
            cfg.xva.alpha = v;
        }
        if let Some(v) = self.hurdle {
            cfg.xva.hurdle = v;
        }
        if let Some(v) = &self.out {
            cfg.run.out_dir = v.clone();
        }
        if self.validate {
            cfg.run.twin = true;
        }
        if self.bounds {
            cfg.run.bounds = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
