mod config;
mod runner;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use xva_core::Error;

use config::{Overrides, RunConfig};
use runner::Sink;

/// Pathwise XVA engine: scenario simulation, explicit and Picard
/// regression schemes, twin Monte-Carlo error control.
#[derive(Parser)]
#[command(name = "xva", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the scenario cube and persist it for inspection.
    Simulate(Overrides),
    /// Run the CVA pre-pass and the configured solve scheme.
    Solve(Overrides),
    /// Solve, then estimate per-step twin Monte-Carlo local errors.
    Validate(Overrides),
    /// Everything: solve, twin errors and global bound tables.
    Full(Overrides),
    /// Turn a twin-error CSV into global B0/B1 bound tables.
    Bounds {
        /// Twin-error CSV produced by `validate` or `full`.
        twin: PathBuf,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Driver Lipschitz constant in the Y argument.
        #[arg(long, default_value_t = 1.0)]
        lambda_f: f64,
        /// Driver Lipschitz constant in the shortfall argument.
        #[arg(long, default_value_t = 1.0)]
        lambda_phi: f64,
        /// Expected-shortfall confidence level.
        #[arg(long, default_value_t = 0.85)]
        alpha: f64,
    },
    /// Diff two run summaries (and their profiles when present).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Compare runs whose config hashes disagree.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::TrainingDiverged { .. }
                | Error::NonFinite(_)
                | Error::DimensionMismatch(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> xva_core::Result<()> {
    match cli.cmd {
        Cmd::Simulate(ov) => {
            let cfg = ov.resolve()?;
            with_sink(&cfg, |cfg, sink| {
                let (_, cube) = runner::build_scenarios(cfg)?;
                let base = sink.dir().join("cube");
                cube.save(&base)?;
                sink.track(base.with_extension("bin"));
                sink.track(base.with_extension("json"));
                let meta = serde_json::json!({
                    "config_hash": cfg.hash(),
                    "seed": cfg.run.seed,
                    "artifact": "cube",
                });
                sink.write("simulate.json", format!("{meta:#}\n").as_bytes())?;
                Ok(())
            })
        }
        Cmd::Solve(ov) => pipeline(ov.resolve()?),
        Cmd::Validate(ov) => {
            let mut cfg = ov.resolve()?;
            cfg.run.twin = true;
            pipeline(cfg)
        }
        Cmd::Full(ov) => {
            let mut cfg = ov.resolve()?;
            cfg.run.twin = true;
            cfg.run.bounds = true;
            cfg.run.profiles = true;
            pipeline(cfg)
        }
        Cmd::Bounds { twin, out, lambda_f, lambda_phi, alpha } => {
            let rows = runner::read_twin_csv(&twin)?;
            let csv = runner::bounds_csv(&rows, lambda_f, lambda_phi, alpha)?;
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Cmd::Compare { a, b, force } => {
            let report = runner::compare(&a, &b, force)?;
            print!("{report}");
            Ok(())
        }
    }
}

/// Runs `f` against a tracked artifact directory and removes any partial
/// outputs if it fails.
fn with_sink(
    cfg: &RunConfig,
    f: impl FnOnce(&RunConfig, &mut Sink) -> xva_core::Result<()>,
) -> xva_core::Result<()> {
    let mut sink = Sink::new(&cfg.run.out_dir)?;
    match f(cfg, &mut sink) {
        Ok(()) => Ok(()),
        Err(e) => {
            sink.discard();
            Err(e)
        }
    }
}

fn pipeline(cfg: RunConfig) -> xva_core::Result<()> {
    with_sink(&cfg, |cfg, sink| {
        let (model, cube) = runner::build_scenarios(cfg)?;
        let out = runner::solve(cfg, &cube)?;
        sink.write("summary.json", &runner::summary_json(&out.summary)?)?;
        if cfg.run.profiles {
            let grid = cube.grid.clone();
            let csv = runner::profile_csv(cfg, &out, &|i| grid.t_pricing(i));
            sink.write("profile.csv", csv.as_bytes())?;
        }
        if cfg.run.twin {
            let twin = runner::run_twin(cfg, &model, &cube, &out)?;
            let csv = runner::twin_csv(cfg, &out, &twin);
            let path = sink.write("twin.csv", csv.as_bytes())?;
            if cfg.run.bounds {
                let rows = runner::read_twin_csv(&path)?;
                // Unit Lipschitz constants; `bounds` as a subcommand exposes
                // them as flags for problem-specific tables.
                let bounds = runner::bounds_csv(&rows, 1.0, 1.0, cfg.xva.alpha)?;
                sink.write("bounds.csv", bounds.as_bytes())?;
            }
        }
        let t0 = &out.summary.time0;
        println!(
            "cva0={:.6} fva0={:.6} kva0={:.6} ec0={:.6}",
            t0.cva, t0.fva, t0.kva, t0.ec
        );
        Ok(())
    })
}
