//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single pass line; tolerances are pinned inline.

mod common;

use std::process::Command;

use monodecomp::basis::{self, build_knots, design_matrix, naive_basis, penalty_matrix};
use monodecomp::cone::{solve_cone_qp, solve_ls, ConeQpProblem};
use monodecomp::decomposition::{
    closed_form_cs, closed_form_ss, detect_ties, fit_mdcs, FitContext, FitMethod,
};
use monodecomp::sim::{run_fit_experiment, run_size_power_experiment, Baseline, FitExperimentConfig, Strategy, Truth};
use monodecomp::testing::{
    bh_adjust, hypergeom_enrich, wild_bootstrap_test, EnrichInput, Hypothesis, Multiplier, TestConfig,
    Tuner,
};
use monodecomp::tuning::{CvGrid, MdcsStrategy, MdssStrategy};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn pass(id: u32, name: &str) {
    println!("acceptance criterion {id:02} ({name}): PASS");
}

/// Criterion 1: on 50 random small instances the active-set solver's
/// objective is no worse than a multi-start projected-gradient oracle
/// (1e-5 relative) and the solution is feasible to 1e-9.
#[test]
fn criterion_01_solver_matches_multi_start_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mus = [0.1, 1.0, 10.0];
    let lambdas = [0.0, 0.1];
    for trial in 0..50u64 {
        let n = rng.random_range(7..=10usize);
        let j = rng.random_range(4..=6usize);
        let (_, _, b, omega) = common::random_design(&mut rng, n, j);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mu = mus[(trial % 3) as usize];
        let lambda = lambdas[(trial % 2) as usize];
        let prob = ConeQpProblem { b, omega, y, mu, lambda };
        let pair = solve_cone_qp(&prob).expect("solver failed");
        for w in pair.gamma_u.as_slice().windows(2) {
            assert!(w[1] - w[0] >= -1e-9, "gamma_u infeasible on trial {trial}");
        }
        for w in pair.gamma_d.as_slice().windows(2) {
            assert!(w[0] - w[1] >= -1e-9, "gamma_d infeasible on trial {trial}");
        }
        let oracle = common::multi_start_oracle(&prob, 9000 + trial);
        let scale = oracle.abs().max(1.0);
        assert!(
            pair.objective <= oracle + 1e-5 * scale,
            "trial {trial}: solver objective {} exceeds oracle {}",
            pair.objective,
            oracle
        );
    }
    pass(1, "solver vs multi-start oracle, 50 instances");
}

/// Criterion 2: mu = 0 MDCS reproduces the unconstrained LS spline fit
/// within 1e-6 on 20 random datasets.
#[test]
fn criterion_02_mu_zero_reduces_to_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for trial in 0..20 {
        let x = common::random_x(&mut rng, 40);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (3.0 * v).sin() + rng.random_range(-0.5..0.5))
            .collect();
        let fit = fit_mdcs(&x, &y, 8, 0.0).expect("fit failed");
        let kv = build_knots(&x, 8).unwrap();
        let b = design_matrix(&kv, &x).unwrap();
        let ls = solve_ls(&b, &DVector::from_column_slice(&y)).unwrap();
        let ls_fit = &b * &ls;
        let dev = (&fit.fitted - &ls_fit).amax();
        assert!(dev < 1e-6, "trial {trial}: deviation {dev}");
    }
    pass(2, "mu = 0 equals least squares, 20 datasets");
}

/// Criterion 3: solver vs closed forms on 20 strictly increasing noiseless
/// targets, 1e-5 sup-norm.
#[test]
fn criterion_03_closed_form_agreement() {
    let n = 36;
    let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let targets: Vec<Vec<f64>> = (0..20)
        .map(|t| {
            let a = 0.5 + 0.25 * t as f64;
            x.iter()
                .map(|&v| match t % 4 {
                    0 => a * v + 0.3 * v.powi(3),
                    1 => (a * v).tanh(),
                    2 => (0.8 * a * v).exp(),
                    _ => v + (a * v).sin() / (a + 1.5),
                })
                .collect()
        })
        .collect();
    let mus = [0.3, 1.0, 2.5];
    for (t, y) in targets.iter().enumerate() {
        let mu = mus[t % 3];
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if t % 4 != 2 {
            let fit = fit_mdcs(&x, y, 6, mu).expect("mdcs fit failed");
            let ties = detect_ties(&fit.gamma_u, 1e-6 * scale).expect("not monotone");
            let kv = build_knots(&x, 6).unwrap();
            let b = design_matrix(&kv, &x).unwrap();
            let (gu, gd) = closed_form_cs(&b, &DVector::from_column_slice(y), mu, &ties).unwrap();
            let dev = (&fit.gamma_u - &gu).amax().max((&fit.gamma_d - &gd).amax());
            assert!(dev < 1e-5 * scale, "cs target {t}: dev {dev}");
        } else {
            let kv = build_knots(&x, 6).unwrap();
            let ctx = FitContext::with_knots(&x, kv, FitMethod::Mdss, mu, 0.1, false).unwrap();
            let fit = ctx.fit(&DVector::from_column_slice(y)).expect("mdss fit failed");
            let ties = detect_ties(&fit.gamma_u, 1e-6 * scale).expect("not monotone");
            let (gu, gd) =
                closed_form_ss(&ctx.b, &ctx.omega, &DVector::from_column_slice(y), 0.1, mu, &ties).unwrap();
            let dev = (&fit.gamma_u - &gu).amax().max((&fit.gamma_d - &gd).amax());
            assert!(dev < 1e-5 * scale, "ss target {t}: dev {dev}");
        }
    }
    pass(3, "closed-form agreement, 20 targets");
}

/// Criterion 4: every mu > 0 fit preserves the response mean (1e-6) and has
/// at least one coefficient tie (1e-6); checked across >= 200 fits.
#[test]
fn criterion_04_mean_equality_and_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mus = [0.1, 1.0, 10.0, 100.0];
    let mut fits = 0usize;
    for trial in 0..50 {
        let x = common::random_x(&mut rng, 35);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| match trial % 3 {
                0 => (6.0 * v).sin() + rng.random_range(-0.3..0.3),
                1 => 4.0 * (v - 0.5).powi(2) + rng.random_range(-0.3..0.3),
                _ => v + rng.random_range(-0.3..0.3),
            })
            .collect();
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        for &mu in &mus {
            let fit = fit_mdcs(&x, &y, 7, mu).expect("fit failed");
            let fbar = fit.fitted.sum() / fit.fitted.len() as f64;
            assert!((fbar - ybar).abs() < 1e-6, "trial {trial} mu {mu}: mean gap {}", fbar - ybar);
            let tie_u = fit.gamma_u.as_slice().windows(2).any(|w| (w[1] - w[0]).abs() <= 1e-6);
            let tie_d = fit.gamma_d.as_slice().windows(2).any(|w| (w[1] - w[0]).abs() <= 1e-6);
            assert!(tie_u || tie_d, "trial {trial} mu {mu}: no coefficient tie");
            fits += 1;
        }
    }
    assert!(fits >= 200);
    pass(4, "mean equality and ties across 200 fits");
}

/// Criterion 5: partition of unity (1e-12), penalty annihilates constants
/// (1e-9 relative), penalty PSD, design matrix matches the naive recursion
/// (1e-10).
#[test]
fn criterion_05_basis_and_penalty_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x = common::random_x(&mut rng, 50);
    for &j in &[4usize, 7, 10, 14] {
        let kv = build_knots(&x, j).unwrap();
        let pts: Vec<f64> = (0..200)
            .map(|_| rng.random_range(kv.lo()..kv.hi()))
            .collect();
        let b = design_matrix(&kv, &pts).unwrap();
        for i in 0..b.nrows() {
            let s: f64 = b.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "partition of unity fails at row {i}: {s}");
        }
        let full = kv.full();
        for (r, &t) in pts.iter().enumerate() {
            for c in 0..j {
                let naive = naive_basis(&full, c, basis::ORDER, t);
                assert!((b[(r, c)] - naive).abs() < 1e-10, "design oracle mismatch at ({r},{c})");
            }
        }
        let omega = penalty_matrix(&kv);
        let scale = omega.amax().max(1.0);
        let ones = DVector::from_element(j, 1.0);
        assert!((&omega * &ones).amax() < 1e-9 * scale, "penalty does not annihilate constants");
        let sym = (&omega - omega.transpose()).amax();
        assert!(sym < 1e-10 * scale);
        let eig = omega.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        assert!(min_eig > -1e-9 * scale, "penalty not PSD: min eigenvalue {min_eig}");
    }
    pass(5, "basis and penalty properties");
}

fn comparison_grid() -> CvGrid {
    CvGrid {
        mu_values: vec![0.01, 0.1, 1.0, 10.0],
        j_values: vec![4, 6, 8, 10, 12],
        lambda_values: vec![1e-6, 1e-4, 1e-2, 1.0],
        k_values: (1..=10).map(|i| i as f64 * 0.1).collect(),
        folds: 10,
    }
}

/// Criterion 6: on the parabola with sigma = 1, n = 100, 30 replications,
/// jointly tuned MDCS beats the cubic spline in mean MSPE with prop >= 0.5.
#[test]
fn criterion_06_fitting_comparison_trend_cubic() {
    let cfg = FitExperimentConfig {
        truth: Truth::parse("x2").unwrap(),
        sigma: 1.0,
        n: 100,
        reps: 30,
        n_grid: 100,
        baseline: Baseline::CubicSpline,
        strategy: Strategy::Mdcs(MdcsStrategy::JointJMu),
        grid: comparison_grid(),
        master_seed: 606,
    };
    let (row, _) = run_fit_experiment(&cfg).expect("experiment failed");
    assert!(row.failures == 0, "{} replications failed", row.failures);
    assert!(
        row.mspe_md < row.mspe_base,
        "mean MSPE: md {} vs baseline {}",
        row.mspe_md,
        row.mspe_base
    );
    assert!(row.prop >= 0.5, "prop {}", row.prop);
    pass(6, "MDCS beats cubic spline on the parabola");
}

/// Criterion 7: on the sigmoid with sigma = 1, n = 100, 30 replications,
/// jointly tuned MDSS has lower MSPE than the smoothing spline in at least
/// half the replications.
#[test]
fn criterion_07_fitting_comparison_trend_smoothing() {
    let cfg = FitExperimentConfig {
        truth: Truth::parse("sigmoid").unwrap(),
        sigma: 1.0,
        n: 100,
        reps: 30,
        n_grid: 100,
        baseline: Baseline::SmoothingSpline,
        strategy: Strategy::Mdss(MdssStrategy::JointLambdaMu),
        // leave-one-out: with sigma = 1 a 10-fold CV surface is too noisy to
        // tune (lambda, mu) reliably
        grid: CvGrid {
            mu_values: vec![0.01, 0.1, 0.5, 1.0, 5.0, 20.0],
            j_values: vec![6],
            lambda_values: vec![1e-3, 1e-2, 0.1, 1.0, 10.0],
            k_values: vec![0.5],
            folds: 100,
        },
        master_seed: 707,
    };
    let (row, _) = run_fit_experiment(&cfg).expect("experiment failed");
    assert!(row.failures == 0, "{} replications failed", row.failures);
    assert!(row.prop >= 0.5, "prop {}", row.prop);
    pass(7, "MDSS beats smoothing spline on the sigmoid");
}

fn test_tuner() -> Tuner {
    Tuner::CvMdss {
        grid: CvGrid {
            mu_values: vec![0.01, 1.0, 100.0],
            j_values: vec![6],
            lambda_values: vec![1e-4, 1e-2, 1.0],
            k_values: vec![0.5],
            folds: 5,
        },
        strategy: MdssStrategy::JointLambdaMu,
    }
}

/// Criterion 8: size of the MDSS bootstrap test on the increasing cubic,
/// sigma = 0.1, n = 200, 30 simulations of R = 100: rejection rate <= 0.10.
#[test]
fn criterion_08_test_size() {
    let rows = run_size_power_experiment(
        &[Truth::parse("x3").unwrap()],
        &[0.1],
        &[200],
        30,
        100,
        0.05,
        Hypothesis::IncreasingNull,
        &test_tuner(),
        808,
    )
    .expect("size experiment failed");
    let rate = rows[0].rejection_rate;
    assert!(rows[0].failures == 0, "{} simulations failed", rows[0].failures);
    assert!(rate <= 0.10, "size {rate} exceeds 0.10");
    pass(8, "test size on increasing cubic");
}

/// Criterion 9: power of the MDSS bootstrap test on the non-monotone Ghosal
/// m2 curve, sigma = 0.01, n = 100, 20 simulations of R = 100: rate >= 0.9.
#[test]
fn criterion_09_test_power() {
    let rows = run_size_power_experiment(
        &[Truth::parse("m2").unwrap()],
        &[0.01],
        &[100],
        20,
        100,
        0.05,
        Hypothesis::IncreasingNull,
        &test_tuner(),
        909,
    )
    .expect("power experiment failed");
    let rate = rows[0].rejection_rate;
    assert!(rows[0].failures == 0, "{} simulations failed", rows[0].failures);
    assert!(rate >= 0.9, "power {rate} below 0.9");
    pass(9, "test power on Ghosal m2");
}

/// Criterion 10 (slow suite): 200 null p-values on the identity curve with
/// sigma = 0.1, n = 100, MDSS, have KS distance to Uniform[0,1] at most 0.15.
#[test]
#[ignore = "slow suite: roughly 200 bootstrap tests"]
fn criterion_10_p_value_calibration() {
    use rand_distr::StandardNormal;
    use rayon::prelude::*;
    // Fixed light smoothing keeps the down-component variance noise-driven;
    // heavier smoothing collapses both the observed and bootstrap statistics
    // to numerical zero and the p-values degenerate.
    let tuner = Tuner::FixedMdss { lambda: 1e-4, mu: 1e-4 };
    let mut pvals: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|sim| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + sim);
            let mut x: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
            x.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let y: Vec<f64> = x
                .iter()
                .map(|&v| {
                    let e: f64 = rng.sample(StandardNormal);
                    v + 0.1 * e
                })
                .collect();
            let cfg = TestConfig {
                tuner: tuner.clone(),
                r: 100,
                alpha: 0.05,
                hypothesis: Hypothesis::IncreasingNull,
                multiplier: Multiplier::Normal,
            };
            wild_bootstrap_test(&x, &y, &cfg, 5000 + sim).expect("test failed").p_value
        })
        .collect();
    pvals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = pvals.len() as f64;
    let mut ks = 0.0f64;
    for (i, &p) in pvals.iter().enumerate() {
        ks = ks.max(((i + 1) as f64 / m - p).abs());
        ks = ks.max((p - i as f64 / m).abs());
    }
    assert!(ks <= 0.15, "KS distance {ks} exceeds 0.15");
    pass(10, "null p-value calibration, KS <= 0.15");
}

fn bh_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let mut kmax = 0usize;
    for (rank, &i) in idx.iter().enumerate() {
        if p[i] <= (rank + 1) as f64 * alpha / m as f64 {
            kmax = rank + 1;
        }
    }
    let mut reject = vec![false; m];
    if kmax > 0 {
        let cutoff = p[idx[kmax - 1]];
        for i in 0..m {
            reject[i] = p[i] <= cutoff;
        }
    }
    reject
}

fn choose_table(n: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = 1.0;
        for k in 1..=i {
            c[i][k] = c[i - 1][k - 1] + if k <= i - 1 { c[i - 1][k] } else { 0.0 };
        }
    }
    c
}

/// Criterion 11: BH matches a brute-force step-up oracle on 1000 random
/// p-vectors (m <= 12); the enrichment p-value matches direct combinatorial
/// enumeration for every feasible input with N <= 12.
#[test]
fn criterion_11_bh_and_hypergeometric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    for trial in 0..1000 {
        let m = rng.random_range(1..=12usize);
        let p: Vec<f64> = (0..m)
            .map(|_| match rng.random_range(0..10u32) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..1.0),
            })
            .collect();
        let alpha = [0.01, 0.05, 0.1, 0.2][trial % 4];
        let (got, _) = bh_adjust(&p, alpha).expect("bh failed");
        let want = bh_oracle(&p, alpha);
        assert_eq!(got, want, "BH mismatch on trial {trial}: p = {p:?}, alpha = {alpha}");
    }

    let c = choose_table(12);
    for total in 1..=12usize {
        for analyzed in 0..=total {
            for annotated in 0..=total {
                let k_lo = analyzed.saturating_sub(total - annotated);
                let k_hi = analyzed.min(annotated);
                for hits in k_lo..=k_hi {
                    let e = EnrichInput { reference: total, analyzed, annotated, hits };
                    let got = hypergeom_enrich(&e).expect("enrich failed");
                    let denom = c[total][analyzed];
                    let mut tail = 0.0;
                    for i in 0..hits {
                        if i <= annotated && analyzed - i <= total - annotated {
                            tail += c[annotated][i] * c[total - annotated][analyzed - i] / denom;
                        }
                    }
                    let want = (1.0 - tail).clamp(0.0, 1.0);
                    assert!(
                        (got - want).abs() < 1e-10,
                        "enrichment mismatch at N={total} n={analyzed} M={annotated} k={hits}: {got} vs {want}"
                    );
                }
            }
        }
    }
    pass(11, "BH and hypergeometric oracles");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_monodecomp")
}

fn run_ok(args: &[&str]) {
    let out = Command::new(bin()).args(args).output().expect("spawn failed");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort();
    entries
}

fn assert_identical_runs(args: &[&str], work: &std::path::Path, name: &str) {
    let a = work.join(format!("{name}_a"));
    let b = work.join(format!("{name}_b"));
    for dir in [&a, &b] {
        std::fs::create_dir_all(dir).unwrap();
        let mut full: Vec<&str> = args.to_vec();
        let d = dir.to_str().unwrap().to_string();
        let leaked: &'static str = Box::leak(d.into_boxed_str());
        full.extend_from_slice(&["--out-dir", leaked]);
        run_ok(&full);
    }
    let fa = dir_bytes(&a);
    let fb = dir_bytes(&b);
    assert_eq!(
        fa.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        fb.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "{name}: file sets differ"
    );
    for ((na, ba), (_, bb)) in fa.iter().zip(&fb) {
        assert_eq!(ba, bb, "{name}: {na} differs between identical runs");
    }
}

/// Criterion 12: rerunning every CLI command with the same seed produces
/// byte-identical outputs; usage and data errors exit with codes 2 and 3.
#[test]
fn criterion_12_cli_determinism() {
    let work = std::env::temp_dir().join("monodecomp_acceptance_cli");
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&work).unwrap();

    let gen_dir = work.join("gen_a");
    assert_identical_runs(
        &["gen", "--curve", "x3", "--n", "60", "--sigma", "0.2", "--seed", "11"],
        &work,
        "gen",
    );
    let data = gen_dir.join("data.csv");
    let data_s = data.to_str().unwrap().to_string();
    let data_arg: &'static str = Box::leak(data_s.into_boxed_str());

    assert_identical_runs(
        &[
            "fit", data_arg, "--method", "mdcs", "--mu-grid", "0.01,1", "--j-grid", "4,6",
            "--folds", "5", "--seed", "3",
        ],
        &work,
        "fit",
    );
    assert_identical_runs(
        &["test", data_arg, "--r", "25", "--seed", "5"],
        &work,
        "test",
    );

    let spec = work.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"mode":"fit","curves":["x2"],"sigmas":[0.5],"n":40,"reps":3,"n_grid":50,
            "baseline":"cubic","strategy":"joint","grid":{"mu":[0.01,1.0],"j":[4,6],"folds":5}}"#,
    )
    .unwrap();
    let spec_arg: &'static str = Box::leak(spec.to_str().unwrap().to_string().into_boxed_str());
    assert_identical_runs(&["simulate", spec_arg, "--seed", "7"], &work, "simulate");

    let matrix = work.join("matrix.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut text = String::from("t,s1,s2\n");
    let mut ts: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for t in ts {
        let s1 = t + rng.random_range(-0.05..0.05);
        let s2 = 4.0 * (t - 0.5) * (t - 0.5) + rng.random_range(-0.05..0.05);
        text.push_str(&format!("{t},{s1},{s2}\n"));
    }
    std::fs::write(&matrix, text).unwrap();
    let ann = work.join("ann.csv");
    std::fs::write(&ann, "series,term\ns1,up\ns2,bend\n").unwrap();
    let matrix_arg: &'static str = Box::leak(matrix.to_str().unwrap().to_string().into_boxed_str());
    let ann_arg: &'static str = Box::leak(ann.to_str().unwrap().to_string().into_boxed_str());
    assert_identical_runs(
        &["screen", matrix_arg, "--annotations", ann_arg, "--r", "20", "--seed", "9"],
        &work,
        "screen",
    );

    let bad = work.join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = Command::new(bin())
        .args(["fit", bad.to_str().unwrap(), "--out-dir", work.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "missing column should exit 3");
    let out = Command::new(bin()).args(["gen", "--n", "50"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "missing curve/kernel should exit 2");
    let out = Command::new(bin()).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown subcommand should exit 2");

    pass(12, "CLI determinism and exit codes");
}
