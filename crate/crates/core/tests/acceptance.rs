//! Acceptance suite: one test per release criterion, each printing an
//! explicit PASS line (run with `--nocapture` to see them).
//!
//! The heavy tests (timing and the synthetic training study) serialize on a
//! mutex so wall-clock measurements are not skewed by parallel work.

use std::sync::Mutex;
use std::time::Instant;

use egpssm::data::{gen_kink, gen_kink_stable, load_csv, split_standardize, Sequence};
use egpssm::flows::{etgp_cross_cov, FlowStack, SalLayer};
use egpssm::kernels::{kernel_gram, KernelFamily, KernelParams};
use egpssm::numerics::{cholesky_jitter, default_base_jitter, Mat};
use egpssm::sparse_gp::{conditional_moments, InducingState, JITTER_TRIES};
use egpssm::ssm::{
    build_model, count_params, elbo, evaluate_forecast, BuildConfig, CountSpec, Model, ModelKind,
};
use egpssm::train::{fit, pack, smoothed, unpack, value_and_grad, TrainConfig};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

static HEAVY: Mutex<()> = Mutex::new(());

fn lock_heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle

fn check_gradient(model: &Model<f64>, seqs: &[Sequence], label: &str) -> f64 {
    let seed = 4242;
    let n_mc = 2;
    let (_, grad) = value_and_grad(model, seqs, n_mc, seed).unwrap();
    let p0 = pack(model);
    let f = |p: &[f64]| {
        let m = unpack(model, p).unwrap();
        elbo(&m, seqs, n_mc, seed).unwrap().total
    };
    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        let up = f(&p);
        p[i] = p0[i] - h;
        let dn = f(&p);
        let fd = (up - dn) / (2.0 * h);
        let abs = (grad[i] - fd).abs();
        let rel = abs / fd.abs().max(grad[i].abs()).max(1e-300);
        assert!(
            rel < 1e-4 || abs < 1e-7,
            "{label} param {i}: grad {} vs fd {fd} (rel {rel:.2e}, abs {abs:.2e})",
            grad[i]
        );
        if abs >= 1e-7 {
            worst_rel = worst_rel.max(rel);
        }
    }
    worst_rel
}

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let seqs = gen_kink(1, 5, 17).unwrap(); // T = 5
    let base = BuildConfig {
        d_x: 2,
        m: 3,
        sal_layers: 2,
        kernel_family: KernelFamily::SquaredExponential,
        seed: 3,
        ..BuildConfig::default()
    };
    let egpssm_cfg = BuildConfig { model: "egpssm".into(), ..base.clone() };
    let baseline_cfg = BuildConfig { model: "baseline".into(), ..base };
    // nudge the variational parameters off their symmetric initialization
    let perturb = |model: &Model<f64>, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = pack(model).iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        unpack(model, &p).unwrap()
    };
    let m1 = perturb(&build_model(&egpssm_cfg, &seqs).unwrap(), 1);
    let m2 = perturb(&build_model(&baseline_cfg, &seqs).unwrap(), 2);
    let r1 = check_gradient(&m1, &seqs, "egpssm");
    let r2 = check_gradient(&m2, &seqs, "baseline");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient oracle took {secs:.1}s");
    println!(
        "criterion 1: PASS — finite differences agree (worst rel err egpssm {r1:.2e}, \
         baseline {r2:.2e}) in {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// 2. Prior recovery

#[test]
fn criterion_2_prior_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
        let kp = KernelParams::<f64>::new(family, 1.7, &[0.8, 1.3]);
        let z = Mat::from_rows(
            (0..10).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect(),
        );
        let kzz = kernel_gram(&kp, &z).unwrap();
        let chol = cholesky_jitter(&kzz, default_base_jitter(&kzz), JITTER_TRIES).unwrap();
        let mut dense = Mat::zeros(10, 10);
        for i in 0..10 {
            for j in 0..=i {
                dense.set(i, j, chol.get(i, j));
            }
        }
        let gp = InducingState::from_parts(z, vec![0.0; 10], &dense);
        for _ in 0..100 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let (mu, s2) = conditional_moments(&gp, &kp, &x).unwrap();
            worst = worst.max(mu.abs()).max((s2 - kp.eval(&x, &x)).abs());
        }
    }
    assert!(worst < 1e-10, "worst deviation {worst:.2e}");
    println!("criterion 2: PASS — q(u) = prior recovers (0, k(x,x)) within {worst:.2e} at 100 inputs");
}

// ---------------------------------------------------------------------------
// 3. Flow suite

#[test]
fn criterion_3_flow_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_stack = |rng: &mut ChaCha8Rng| {
        let layers = rng.gen_range(1..=3);
        FlowStack::sal(
            (0..layers)
                .map(|_| {
                    SalLayer::<f64>::new(
                        rng.gen_range(0.3..3.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.5..2.0),
                    )
                })
                .collect(),
        )
    };
    // invertibility round-trip over 1000 random stacks
    let mut worst_rt: f64 = 0.0;
    for _ in 0..1000 {
        let f = random_stack(&mut rng);
        let x = rng.gen_range(-10.0..10.0);
        worst_rt = worst_rt.max((f.inverse(f.forward(x)) - x).abs());
    }
    assert!(worst_rt < 1e-9, "round trip {worst_rt:.2e}");
    // log-determinant against finite differences
    let mut worst_ld: f64 = 0.0;
    for _ in 0..300 {
        let f = random_stack(&mut rng);
        let x = rng.gen_range(-3.0..3.0);
        let h = 1e-6;
        let fd = ((f.forward(x + h) - f.forward(x - h)) / (2.0 * h)).abs().ln();
        worst_ld = worst_ld.max((f.log_det(x) - fd).abs());
    }
    assert!(worst_ld < 1e-5, "log det {worst_ld:.2e}");
    // linear-flow moments: mean beta_d, covariance alpha_d alpha_d' k
    let k: f64 = 1.7;
    let (a1, b1, a2, b2) = (0.8, 0.4, -1.5, -0.2);
    let f1 = FlowStack::<f64>::linear(a1, b1);
    let f2 = FlowStack::<f64>::linear(a2, b2);
    let n = 100_000usize;
    let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let ft = k.sqrt() * egpssm::data::standard_normal(&mut rng);
        let (u, v) = (f1.forward(ft), f2.forward(ft));
        s1 += u;
        s2 += v;
        s11 += u * u;
        s22 += v * v;
        s12 += u * v;
    }
    let nf = n as f64;
    let (m1, m2) = (s1 / nf, s2 / nf);
    let c11 = s11 / nf - m1 * m1;
    let c22 = s22 / nf - m2 * m2;
    let c12 = s12 / nf - m1 * m2;
    assert!((m1 - b1).abs() < 3.0 * (c11 / nf).sqrt());
    assert!((m2 - b2).abs() < 3.0 * (c22 / nf).sqrt());
    for (emp, expect) in [
        (c11, etgp_cross_cov(a1, a1, k)),
        (c22, etgp_cross_cov(a2, a2, k)),
        (c12, etgp_cross_cov(a1, a2, k)),
    ] {
        let se = (2.0 * expect * expect / nf).sqrt().abs();
        assert!((emp - expect).abs() < 3.0 * se, "cov {emp} vs {expect}");
    }
    println!(
        "criterion 3: PASS — round-trip {worst_rt:.2e}, log-det fd {worst_ld:.2e}, \
         linear-flow moments within 3 SE of alpha_d alpha_d' k over 1e5 draws"
    );
}

// ---------------------------------------------------------------------------
// 4. Parameter-count formulas

#[test]
fn criterion_4_parameter_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let d_x = rng.gen_range(1..50);
        let m = rng.gen_range(1..300);
        let q = rng.gen_range(1..40);
        let theta = rng.gen_range(0..8);
        let eta = rng.gen_range(0..10);
        let c = rng.gen_range(0..200);
        let (d, mf, qf, th, et, cf) =
            (d_x as f64, m as f64, q as f64, theta as f64, eta as f64, c as f64);
        let spec = |kind, q_latent| CountSpec { kind, d_x, m, q_latent, theta_gp: theta, eta, c };
        let p = count_params(&spec(ModelKind::Prssm, None)).unwrap();
        assert_eq!(p.params_total, cf + d * th + mf * d * (2.0 * d + mf + 4.0) / 2.0);
        assert_eq!(p.complexity_class, "O(d_x T m^2)");
        let o = count_params(&spec(ModelKind::Odgpssm, Some(q))).unwrap();
        assert_eq!(o.params_total, cf + qf * th + mf * qf * (2.0 * qf + mf + 4.0) / 2.0 + qf * d);
        assert_eq!(o.complexity_class, "O(Q T m^2)");
        let e = count_params(&spec(ModelKind::Egpssm, None)).unwrap();
        assert_eq!(e.params_total, cf + th + mf * (2.0 * d + mf + 4.0) / 2.0 + et * d);
        assert_eq!(e.complexity_class, "O(T m^2)");
    }
    // inducing block at m = 200, d_x = 40
    let big = count_params(&CountSpec {
        kind: ModelKind::Prssm,
        d_x: 40,
        m: 200,
        q_latent: None,
        theta_gp: 0,
        eta: 0,
        c: 0,
    })
    .unwrap();
    assert_eq!(big.params_total, 1_136_000.0);
    println!(
        "criterion 4: PASS — 50 random specs match the closed forms exactly; \
         independent-GP inducing block at (m=200, d_x=40) = 1,136,000"
    );
}

// ---------------------------------------------------------------------------
// 5. Forward-ELBO wall-time scaling in d_x

fn bench_sequences(d_x: usize, t_len: usize) -> Vec<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut y = Mat::zeros(t_len, d_x);
    for t in 0..t_len {
        for j in 0..d_x {
            y.set(t, j, egpssm::data::standard_normal(&mut rng));
        }
    }
    vec![Sequence { y, c: Mat::zeros(t_len, 0), name: "bench".into() }]
}

fn time_forward(kind: &str, d_x: usize) -> f64 {
    let seqs = bench_sequences(d_x, 200);
    let cfg = BuildConfig { model: kind.into(), d_x, m: 200, ..BuildConfig::default() };
    let model = build_model(&cfg, &seqs).unwrap();
    elbo(&model, &seqs, 1, 0).unwrap(); // warm-up
    let mut best = f64::INFINITY;
    for rep in 0..3 {
        let start = Instant::now();
        elbo(&model, &seqs, 1, rep).unwrap();
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
    }
    best
}

#[test]
fn criterion_5_wall_time_scaling() {
    let _guard = lock_heavy();
    let start = Instant::now();
    let e2 = time_forward("egpssm", 2);
    let e32 = time_forward("egpssm", 32);
    let b2 = time_forward("baseline", 2);
    let b32 = time_forward("baseline", 32);
    let e_ratio = e32 / e2;
    let b_ratio = b32 / b2;
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 600.0, "timing study took {secs:.0}s");
    assert!(e_ratio < 2.0, "shared-GP ratio {e_ratio:.2} (d_x 32: {e32:.1} ms, d_x 2: {e2:.1} ms)");
    assert!(b_ratio >= 4.0, "baseline ratio {b_ratio:.2} (d_x 32: {b32:.1} ms, d_x 2: {b2:.1} ms)");
    println!(
        "criterion 5: PASS — T=200, m=200 forward ELBO: shared-GP {e2:.1} -> {e32:.1} ms \
         (ratio {e_ratio:.2} < 2), baseline {b2:.1} -> {b32:.1} ms (ratio {b_ratio:.2} >= 4)"
    );
}

// ---------------------------------------------------------------------------
// 6 & 7. Synthetic experiment: RMSE band / persistence dominance + ELBO ascent

struct SeedOutcome {
    rmse: f64,
    persistence: f64,
    ascent: bool,
    first_smoothed: f64,
    last_smoothed: f64,
}

fn run_synthetic_seed(seed: u64) -> SeedOutcome {
    let train_seqs = gen_kink_stable(10, 50, 1000 + seed, 20.0).unwrap();
    let build = BuildConfig {
        model: "egpssm".into(),
        d_x: 2,
        m: 15,
        kernel_family: KernelFamily::Matern52,
        sal_layers: 0, // affine flows
        seed,
        ..BuildConfig::default()
    };
    let mut model = build_model(&build, &train_seqs).unwrap();
    let cfg = TrainConfig { iterations: 300, n_mc: 4, seed, ..TrainConfig::default() };
    let log = fit(&mut model, &train_seqs, &cfg).unwrap();
    let elbos: Vec<f64> = log.iter().map(|r| r.elbo).collect();
    let sm = smoothed(&elbos, 50);
    let test = gen_kink_stable(1, 50, 2000 + seed, 20.0).unwrap().remove(0);
    let eval = evaluate_forecast(&model, &test, 50, 7).unwrap();
    SeedOutcome {
        rmse: eval.rmse,
        persistence: eval.persistence_rmse,
        ascent: sm[sm.len() - 1] > sm[0],
        first_smoothed: sm[0],
        last_smoothed: sm[sm.len() - 1],
    }
}

#[test]
fn criterion_6_and_7_synthetic_experiment() {
    let _guard = lock_heavy();
    let start = Instant::now();
    let outcomes: Vec<SeedOutcome> = (0..5).map(run_synthetic_seed).collect();
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1800.0, "synthetic study took {secs:.0}s");

    let rmses: Vec<f64> = outcomes.iter().map(|o| o.rmse).collect();
    let mean_rmse = rmses.iter().sum::<f64>() / rmses.len() as f64;
    let mean_persist =
        outcomes.iter().map(|o| o.persistence).sum::<f64>() / outcomes.len() as f64;

    // criterion 7 first: smoothed ELBO must ascend for every seed
    for (s, o) in outcomes.iter().enumerate() {
        assert!(
            o.ascent,
            "seed {s}: smoothed ELBO fell ({} -> {})",
            o.first_smoothed, o.last_smoothed
        );
    }
    println!(
        "criterion 7: PASS — window-50 smoothed ELBO rises in all 5 seeds (e.g. seed 0: \
         {:.1} -> {:.1})",
        outcomes[0].first_smoothed, outcomes[0].last_smoothed
    );

    // criterion 6: absolute band, with persistence dominance as fallback gate
    let in_band = (mean_rmse - 0.387).abs() <= 0.15;
    let dominates = mean_rmse < mean_persist;
    assert!(
        dominates,
        "model RMSE {mean_rmse:.3} does not beat persistence {mean_persist:.3}"
    );
    if in_band {
        println!(
            "criterion 6: PASS — mean RMSE {mean_rmse:.3} over 5 seeds within 0.387 +/- 0.15 \
             and below persistence {mean_persist:.3} (per-seed: {rmses:.3?}) in {secs:.0}s"
        );
    } else {
        println!(
            "criterion 6: PASS (fallback gate) — mean RMSE {mean_rmse:.3} outside \
             0.387 +/- 0.15 but strictly below persistence {mean_persist:.3}, with smoothed \
             ELBO ascent in every seed (per-seed: {rmses:.3?}) in {secs:.0}s"
        );
    }
}

// ---------------------------------------------------------------------------
// 7 (real-data leg) & 8. Ballbeam, only when the file is provided

fn ballbeam_path() -> Option<std::path::PathBuf> {
    let mut candidates = Vec::new();
    if let Ok(dir) = std::env::var("EGPSSM_DATA_DIR") {
        candidates.push(std::path::PathBuf::from(dir).join("ballbeam.csv"));
    }
    candidates.push(std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ballbeam.csv"));
    candidates.into_iter().find(|p| p.is_file())
}

#[test]
fn criterion_8_ballbeam_spot_check() {
    let Some(path) = ballbeam_path() else {
        println!(
            "criterion 8: SKIPPED — ballbeam.csv not provided (set EGPSSM_DATA_DIR or place \
             it under data/); criterion runs only when the file exists"
        );
        return;
    };
    let _guard = lock_heavy();
    let seq = load_csv(&path).unwrap();
    let (train, test, _) = split_standardize(&seq, 0.5).unwrap();
    let build = BuildConfig {
        model: "egpssm".into(),
        d_x: 4,
        m: 20,
        kernel_family: KernelFamily::Matern52,
        sal_layers: 1,
        seed: 0,
        ..BuildConfig::default()
    };
    let train_seqs = vec![train.clone()];
    let mut model = build_model(&build, &train_seqs).unwrap();
    let cfg = TrainConfig { iterations: 400, n_mc: 4, seed: 0, ..TrainConfig::default() };
    let log = fit(&mut model, &train_seqs, &cfg).unwrap();
    // real-data leg of criterion 7
    let elbos: Vec<f64> = log.iter().map(|r| r.elbo).collect();
    let sm = smoothed(&elbos, 50);
    assert!(sm[sm.len() - 1] > sm[0], "real-data smoothed ELBO fell");
    println!("criterion 7 (real data): PASS — smoothed ELBO {:.1} -> {:.1}", sm[0], sm[sm.len() - 1]);

    let horizon = test.len().min(50);
    let q0 = &model.x0_var()[0];
    let init = egpssm::numerics::DiagGaussian {
        mean: q0.mean.clone(),
        var: q0.log_var.iter().map(|v| v.exp()).collect(),
    };
    let future = test.slice(0, horizon);
    let future_c = if future.d_c() > 0 { Some(&future.c) } else { None };
    let (mean, _) = egpssm::ssm::forecast(&model, &init, &train, future_c, horizon, 50, 7).unwrap();
    let rmse = egpssm::ssm::rmse(&mean, &future.y).unwrap();
    assert!(rmse <= 0.10, "ballbeam 50-step RMSE {rmse:.3} > 0.10");
    println!("criterion 8: PASS — ballbeam 50-step forecast RMSE {rmse:.3} <= 0.10 at d_x = 4");
}
