//! Acceptance suite. Each test prints one `criterion N: pass|fail` line.
//!
//! Criteria 1, 2, 6 (tail ordering) and 8 share one desk-scale benchmark run
//! (theta = 5, 2^14 outer paths, 8 inner default branches) computed once.

use once_cell::sync::Lazy;
use std::time::{Duration, Instant};
use xva_core::grid::TimeGrid;
use xva_core::market::{
    build_portfolio, price_mtm, simulate_defaults, simulate_diffusions, ModelParams, ScenarioCube,
};
use xva_core::nn::{es_labels, nn_regress, Grad, LossKind, Mlp, TrainConfig};
use xva_core::validation::{
    lemma_inequalities, poly_closed_form, poly_tables, twin_local_error,
};
use xva_core::xva::{
    solve_explicit, solve_picard, twin_errors, TwinErrors, XvaConfig, XvaSolution,
};
use xva_core::{absde, rng};

fn report(criterion: usize, ok: bool, detail: &str) {
    println!("criterion {criterion}: {}", if ok { "pass" } else { "fail" });
    assert!(ok, "criterion {criterion}: {detail}");
}

// ---------------------------------------------------------------------------
// Shared desk-scale benchmark

const BENCH_SEED: u64 = 1;
const BENCH_PATHS: usize = 1 << 14;
const BENCH_INNER: usize = 8;
const BENCH_SWAPS: usize = 100;
// Trimmed for a single-core box: the full scheme comparison (explicit plus
// four Picard sweeps over 2^17 regression rows) has to fit the runtime
// budget of criterion 1.
const BENCH_EPOCHS: usize = 5;
const BENCH_HIDDEN: usize = 20;

fn bench_cfg() -> XvaConfig {
    XvaConfig {
        train: TrainConfig {
            hidden: BENCH_HIDDEN,
            epochs: BENCH_EPOCHS,
            seed: BENCH_SEED,
            ..TrainConfig::default()
        },
        ..XvaConfig::default()
    }
}

fn bench_cube(theta: u32, coarsening: usize) -> ScenarioCube {
    let model = ModelParams::default_benchmark();
    let grid = TimeGrid::new(10.0, theta, coarsening).unwrap();
    let portfolio = build_portfolio(BENCH_SEED, BENCH_SWAPS, &model, &grid).unwrap();
    let mut cube = simulate_diffusions(&model, &grid, BENCH_PATHS, BENCH_SEED).unwrap();
    price_mtm(&portfolio, &model, &mut cube).unwrap();
    cube.defaults = Some(simulate_defaults(&cube, BENCH_INNER, BENCH_SEED).unwrap());
    cube
}

struct Bench {
    cva0: f64,
    sol: XvaSolution,
    twin: TwinErrors,
    /// FVA at time 0 per Picard iterate, j = 1..=4.
    picard_fva0: Vec<f64>,
    /// Wall clock of the explicit + Picard solves (the scheme comparison).
    schemes_elapsed: Duration,
}

static BENCH: Lazy<Bench> = Lazy::new(|| {
    let model = ModelParams::default_benchmark();
    let cfg = bench_cfg();
    let cube = bench_cube(5, 1);
    let start = Instant::now();
    let (cva, sol) = solve_explicit(&cube, &cfg).unwrap();
    let (_, iterates) = solve_picard(&cube, &cfg, 4).unwrap();
    let schemes_elapsed = start.elapsed();
    let picard_fva0 = iterates.iter().map(|s| s.fva0).collect();
    drop(iterates);
    let twin = twin_errors(&model, &cube, &cfg, &cva, &sol, BENCH_SEED).unwrap();
    Bench { cva0: cva.cva0, sol, twin, picard_fva0, schemes_elapsed }
});

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_scheme_cross_validation() {
    let b = &*BENCH;
    let e = b.sol.fva0;
    let p = &b.picard_fva0;
    let rel = (p[3] - e).abs() / e.abs();
    let overshoot = (p[0] - e).abs() > (p[1] - e).abs();
    let in_time = b.schemes_elapsed < Duration::from_secs(30 * 60);
    report(
        1,
        rel < 0.02 && overshoot && in_time,
        &format!(
            "explicit fva0 {e}, picard {p:?}, rel {rel:.4}, elapsed {:?}",
            b.schemes_elapsed
        ),
    );
}

#[test]
fn criterion_2_grid_stability() {
    let b = &*BENCH;
    // theta = 6 with coarsening 2 halves the fine step while keeping the
    // same pricing grid; matched seeds everywhere else.
    let cube = bench_cube(6, 2);
    let (_, sol) = solve_explicit(&cube, &bench_cfg()).unwrap();
    let rel = (sol.fva0 - b.sol.fva0).abs() / b.sol.fva0.abs();
    report(
        2,
        rel < 0.02,
        &format!("fva0 theta5 {} vs theta6 {} (rel {rel:.4})", b.sol.fva0, sol.fva0),
    );
}

#[test]
fn criterion_3_twin_estimator_oracle() {
    // Two-state toy: X uniform on {0, 1}; given X = x the label is
    // a[x] +/- b[x] with equal probability, twins drawn independently.
    // E[(phi(X) - xi)(phi(X) - xi')] = E[(phi(X) - a[X])^2] exactly.
    let a = [0.4, 1.1];
    let bb = [0.9, 0.3];
    let phi_of = |x: usize| if x == 0 { 0.3 } else { 0.8 };
    let truth = 0.5 * ((phi_of(0) - a[0]) * (phi_of(0) - a[0]))
        + 0.5 * ((phi_of(1) - a[1]) * (phi_of(1) - a[1]));

    // Exact enumeration: all 8 equally likely (x, s, s') outcomes once.
    let mut phi = Vec::new();
    let mut xi1 = Vec::new();
    let mut xi2 = Vec::new();
    for x in 0..2usize {
        for s1 in [-1.0, 1.0] {
            for s2 in [-1.0, 1.0] {
                phi.push(phi_of(x));
                xi1.push(a[x] + s1 * bb[x]);
                xi2.push(a[x] + s2 * bb[x]);
            }
        }
    }
    let exact = twin_local_error(&phi, &xi1, &xi2).unwrap();
    let enum_ok = (exact.value - truth).abs() < 1e-14;

    // Sampled estimator at 1e5 draws.
    let n = 100_000;
    let mut r = rng::stream(7, &[99]);
    let (mut phi, mut xi1, mut xi2) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let x = usize::from(rng::uniform_open01(&mut r) < 0.5);
        let s = |u: f64| if u < 0.5 { -1.0 } else { 1.0 };
        phi.push(phi_of(x));
        xi1.push(a[x] + s(rng::uniform_open01(&mut r)) * bb[x]);
        xi2.push(a[x] + s(rng::uniform_open01(&mut r)) * bb[x]);
    }
    let est = twin_local_error(&phi, &xi1, &xi2).unwrap();
    let mc_ok = (est.value - truth).abs() <= 3.0 * est.std_error;
    report(
        3,
        enum_ok && mc_ok,
        &format!(
            "truth {truth}, enumerated {}, sampled {} +- {}",
            exact.value, est.value, est.std_error
        ),
    );
}

#[test]
fn criterion_4_polynomial_suite() {
    let mut ok = true;
    let mut detail = String::new();

    // Recursions vs closed forms, 100 random (x, r) draws, i <= 64.
    let mut r = rng::stream(11, &[0]);
    for _ in 0..100 {
        let x = 0.5 * rng::uniform_open01(&mut r);
        let rr = 5.0 * rng::uniform_open01(&mut r);
        let t = poly_tables(x, rr, 64);
        for i in 2..=64 {
            let (p0, p1, q0, q1) = poly_closed_form(x, rr, i);
            for (have, want) in [(t.p0[i], p0), (t.p1[i], p1), (t.q0[i], q0), (t.q1[i], q1)] {
                if (have - want).abs() > 1e-12 * want.abs().max(1e-300) {
                    ok = false;
                    detail = format!("closed form mismatch at i={i}: {have} vs {want}");
                }
            }
        }
    }

    // All six inequalities over 1e4 random draws; sharp items to 1e-10.
    for _ in 0..10_000 {
        let x = 0.5 * rng::uniform_open01(&mut r);
        let rr = 5.0 * rng::uniform_open01(&mut r);
        let n = 2 + (rng::uniform_open01(&mut r) * 40.0) as usize;
        let m = 1 + (rng::uniform_open01(&mut r) * n as f64) as usize;
        let i = 1 + (rng::uniform_open01(&mut r) * n as f64) as usize;
        let t = poly_tables(x, rr, n + m);
        for c in lemma_inequalities(&t, m, i).unwrap() {
            let scale = c.rhs.abs().max(1.0);
            if c.lhs > c.rhs + 1e-10 * scale {
                ok = false;
                detail = format!("{} violated: {} > {}", c.label, c.lhs, c.rhs);
            }
            if c.sharp && (c.lhs - c.rhs).abs() > 1e-10 * scale {
                ok = false;
                detail = format!("{} not sharp: {} vs {}", c.label, c.lhs, c.rhs);
            }
        }
    }
    report(4, ok, &detail);
}

#[test]
fn criterion_5_es_regression_oracle() {
    // Conditional Gaussian: Y | x ~ N(mu(x), sigma(x)^2) with x ~ U(-1, 1).
    // VaR_a(Y|x) = mu + sigma z_a, ES_a(Y|x) = mu + sigma pdf(z_a)/(1 - a).
    let alpha = 0.85;
    let z: f64 = 1.036_433_389_493_789_8; // 85% standard normal quantile
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let es_mult = pdf / (1.0 - alpha);
    let mu = |x: f64| 3.0 + x;
    let sigma = |x: f64| 0.5 + 0.2 * x;

    let n = 1 << 16;
    let mut r = rng::stream(13, &[0]);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = 2.0 * rng::uniform_open01(&mut r) - 1.0;
        features.push(x);
        labels.push(mu(x) + sigma(x) * rng::standard_normal(&mut r));
    }
    let cfg = TrainConfig {
        epochs: 30,
        seed: 5,
        loss: LossKind::Qle { alpha },
        ..TrainConfig::default()
    };
    let var_head = nn_regress(&features, &labels, 1, &cfg, None).unwrap();
    let var_pred = var_head.predict_all(&features);
    let es = es_labels(&labels, &var_pred, alpha);
    let ls_cfg = TrainConfig { loss: LossKind::Ls, ..cfg };
    let es_head = nn_regress(&features, &es, 1, &ls_cfg, None).unwrap();

    let mut worst = 0.0f64;
    for k in 0..37 {
        let x = -0.9 + 0.05 * k as f64;
        let var_true = mu(x) + sigma(x) * z;
        let es_true = mu(x) + sigma(x) * es_mult;
        let rv = (var_head.predict(&[x]) - var_true).abs() / var_true;
        let es_pred = var_head.predict(&[x]) + es_head.predict(&[x]);
        let re = (es_pred - es_true).abs() / es_true;
        worst = worst.max(rv).max(re);
    }
    let cond_ok = worst < 0.02;

    // Unconditional head vs the sorted-tail-mean oracle on an independent
    // sample of the same law.
    let draw = |seed: u64, n: usize| -> Vec<f64> {
        let mut r = rng::stream(seed, &[1]);
        (0..n)
            .map(|_| {
                let x = 2.0 * rng::uniform_open01(&mut r) - 1.0;
                mu(x) + sigma(x) * rng::standard_normal(&mut r)
            })
            .collect()
    };
    let (_, es_a) = absde::unconditional_var_es(&draw(21, n), alpha);
    let mut b = draw(22, n);
    b.sort_by(|p, q| p.total_cmp(q));
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
    let oracle = b[k..].iter().sum::<f64>() / (n - k) as f64;
    let uncond_ok = (es_a - oracle).abs() <= 5.0 / (n as f64).sqrt();
    report(
        5,
        cond_ok && uncond_ok,
        &format!("worst conditional rel err {worst:.4}, uncond diff {}", (es_a - oracle).abs()),
    );
}

#[test]
fn criterion_6_degenerate_inputs() {
    let degenerate_cube = |edit: &dyn Fn(&mut ModelParams)| -> (ScenarioCube, ModelParams) {
        let mut m = ModelParams::default_benchmark();
        edit(&mut m);
        let grid = TimeGrid::new(10.0, 4, 2).unwrap();
        let portfolio = build_portfolio(BENCH_SEED, 20, &m, &grid).unwrap();
        let mut cube = simulate_diffusions(&m, &grid, 256, BENCH_SEED).unwrap();
        price_mtm(&portfolio, &m, &mut cube).unwrap();
        cube.defaults = Some(simulate_defaults(&cube, 2, BENCH_SEED).unwrap());
        (cube, m)
    };
    let cfg = XvaConfig {
        train: TrainConfig { hidden: 8, epochs: 8, seed: 3, ..TrainConfig::default() },
        ..XvaConfig::default()
    };

    // gamma := 0 (bank spread identically zero) => FVA = 0.
    let (cube, _) = degenerate_cube(&|m| {
        m.bank.lambda0 = 0.0;
        m.bank.theta = 0.0;
        m.bank.xi = 0.0;
    });
    let (_, sol) = solve_explicit(&cube, &cfg).unwrap();
    let fva_ok = sol.fva0.abs() < 1e-6
        && sol.fva.iter().all(|row| row.iter().all(|v| v.abs() < 1e-6));

    // r_h = 0 => KVA = 0.
    let (cube, _) = degenerate_cube(&|_| {});
    let mut cfg0 = cfg.clone();
    cfg0.hurdle = 0.0;
    let (_, sol) = solve_explicit(&cube, &cfg0).unwrap();
    let kva_ok = sol.kva0.abs() < 1e-6
        && sol.kva.iter().all(|row| row.iter().all(|v| v.abs() < 1e-6));

    // lambda := 0 (no client defaults) => CVA = 0.
    let (cube, _) = degenerate_cube(&|m| {
        for c in &mut m.clients {
            c.lambda0 = 0.0;
            c.theta = 0.0;
            c.xi = 0.0;
        }
    });
    let (cva, _) = solve_explicit(&cube, &cfg).unwrap();
    let cva_ok =
        cva.cva0.abs() < 1e-6 && cva.values.iter().all(|row| row.iter().all(|v| v.abs() < 1e-6));

    // Tail ordering at benchmark scale: ES >= VaR on at least 95% of states
    // at every pricing step.
    let b = &*BENCH;
    let mut order_ok = true;
    let mut worst = 1.0f64;
    for i in 1..b.sol.ec.len() {
        let n = b.sol.ec[i].len();
        let cnt = b.sol.ec[i].iter().zip(&b.sol.var[i]).filter(|(e, v)| e >= v).count();
        let frac = cnt as f64 / n as f64;
        worst = worst.min(frac);
        if frac < 0.95 {
            order_ok = false;
        }
    }
    report(
        6,
        fva_ok && kva_ok && cva_ok && order_ok,
        &format!("fva {fva_ok} kva {kva_ok} cva {cva_ok} worst tail-order fraction {worst:.3}"),
    );
}

#[test]
fn criterion_7_linear_driver_absde() {
    // f(y) = -c y with terminal phi = 1 + W_T^2: the solver must reproduce
    // e^{-cT} E[phi] = e^{-cT} (1 + T) through the generic pipeline.
    let (n_paths, n, dt, c) = (4_000usize, 64usize, 1.0f64 / 64.0, 0.5);
    let mut feats = vec![0.0; n_paths * (n + 1)];
    for path in 0..n_paths {
        let mut r = rng::stream(17, &[path as u64]);
        for i in 0..n {
            feats[path * (n + 1) + i + 1] =
                feats[path * (n + 1) + i] + dt.sqrt() * rng::standard_normal(&mut r);
        }
    }
    let terminal: Vec<f64> = (0..n_paths)
        .map(|p| {
            let w = feats[p * (n + 1) + n];
            1.0 + w * w
        })
        .collect();
    let dphi = vec![0.0; n_paths * n];
    let driver = move |_: usize, _: usize, y: f64, _: f64| -c * y;
    let p = absde::AbsdeProblem {
        n_paths,
        n_steps: n,
        dt,
        n_features: 1,
        features: &feats,
        terminal: &terminal,
        phi_increments: &dphi,
        driver: &driver,
    };
    let cfg = absde::AbsdeConfig {
        train: TrainConfig { hidden: 8, epochs: 30, seed: 19, ..TrainConfig::default() },
        alpha: 0.85,
        window: 4,
    };
    let out = absde::solve_explicit(&p, &cfg).unwrap();
    let mean_phi = terminal.iter().sum::<f64>() / n_paths as f64;
    let target = (-c * n as f64 * dt).exp() * mean_phi;
    let rel = (out.y0 - target).abs() / target;
    report(7, rel < 0.01, &format!("y0 {} vs {target} (rel {rel:.4})", out.y0));
}

#[test]
fn criterion_8_twin_error_below_training_loss() {
    let b = &*BENCH;
    let mut ok = true;
    let mut detail = String::new();
    let mut check = |name: &str,
                     est: &[Option<xva_core::validation::TwinEstimate>],
                     heads: &[Option<xva_core::nn::TrainedHead>]| {
        for (i, e) in est.iter().enumerate() {
            let Some(e) = e else { continue };
            let loss = heads[i].as_ref().map_or(0.0, |h| h.train_loss);
            if e.value - 3.0 * e.std_error > loss {
                ok = false;
                detail = format!(
                    "{name} step {i}: twin {} +- {} vs loss {loss}",
                    e.value, e.std_error
                );
            }
        }
    };
    check("fva", &b.twin.fva, &b.sol.fva_heads);
    check("kva", &b.twin.kva, &b.sol.kva_heads);
    // The benchmark itself must be a real run for the comparison to mean
    // anything.
    assert!(b.cva0 > 0.0 && b.sol.fva0 > 0.0);
    report(8, ok, &detail);
}

#[test]
fn criterion_9_loss_gradient_checks() {
    let mut ok = true;
    let mut detail = String::new();
    let mut r = rng::stream(23, &[0]);
    for trial in 0..20 {
        let mlp = Mlp::init(3, 4, 100 + trial);
        let x: Vec<f64> = (0..3).map(|_| 2.0 * rng::uniform_open01(&mut r) - 1.0).collect();
        let base = mlp.forward(&x);
        // Keep the label away from the pinball kink.
        let xi = base + if trial % 2 == 0 { 0.7 } else { -0.7 };
        let alpha = 0.85;
        let ls_loss = |o: f64| (o - xi) * (o - xi);
        let ls_d = |o: f64| 2.0 * (o - xi);
        let qle_loss = |o: f64| (xi - o).max(0.0) + (1.0 - alpha) * o;
        let qle_d = |o: f64| (1.0 - alpha) - if o < xi { 1.0 } else { 0.0 };
        let pairs: [(&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64); 2] =
            [(&ls_loss, &ls_d), (&qle_loss, &qle_d)];
        for (loss, d_out) in pairs {
            let mut grad = Grad::zeros(3, 4);
            mlp.accumulate_grad(&x, d_out, &mut grad);
            let h = 1e-6;
            let mut check = |get: &dyn Fn(&Mlp) -> f64,
                             set: &dyn Fn(&mut Mlp, f64),
                             g: f64,
                             what: &str| {
                let v = get(&mlp);
                let mut up = mlp.clone();
                set(&mut up, v + h);
                let mut dn = mlp.clone();
                set(&mut dn, v - h);
                let fd = (loss(up.forward(&x)) - loss(dn.forward(&x))) / (2.0 * h);
                let scale = g.abs().max(fd.abs()).max(1e-8);
                if (g - fd).abs() / scale > 1e-5 {
                    ok = false;
                    detail = format!("{what}: analytic {g} vs fd {fd}");
                }
            };
            for k in 0..mlp.w1.len() {
                check(&|m| m.w1[k], &|m, v| m.w1[k] = v, grad.w1[k], "w1");
            }
            for k in 0..mlp.b1.len() {
                check(&|m| m.b1[k], &|m, v| m.b1[k] = v, grad.b1[k], "b1");
            }
            for k in 0..mlp.w2.len() {
                check(&|m| m.w2[k], &|m, v| m.w2[k] = v, grad.w2[k], "w2");
            }
            check(&|m| m.b2, &|m, v| m.b2 = v, grad.b2, "b2");
        }
    }
    report(9, ok, &detail);
}

#[test]
fn criterion_10_full_run_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_xva"))
            .args([
                "full",
                "--theta",
                "4",
                "--coarsening",
                "2",
                "--paths",
                "128",
                "--inner",
                "2",
                "--seed",
                "9",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("summary.json")).unwrap()
    };
    let a = run(dir_a.path());
    let b = run(dir_b.path());
    report(10, a == b, "summary JSON differs between identical runs");
}
