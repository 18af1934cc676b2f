//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). It exits with status 0 once every check has run
//! and printed its line; set `ARFA_ACCEPTANCE_STRICT=1` to exit with status 1 when any
//! criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use arfa::arest::{biased_autocovariances, max_entropy_certificate, yule_walker};
use arfa::bench::{run_study_in_memory, StudyConfig, StudyReport, REPORT_JSON};
use arfa::pipeline::{cholesky_factor, kl_gaussian, kl_null_samples, KlDirection};
use arfa::staticfa::{static_fa, StaticFaParams};
use arfa::synth::{simulate, ArFactorModel};
use arfa::{ArPolynomial, AutocovarianceSequence, PolyLaw, RngSeed, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const STUDY_SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scratch_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name)
}

fn study(config: StudyConfig, name: &str) -> (StudyReport, f64) {
    let start = Instant::now();
    let report = run_study_in_memory(&config).expect("study runs");
    let secs = start.elapsed().as_secs_f64();
    report.write(scratch_dir(name)).expect("report written");
    (report, secs)
}

fn medians(report: &StudyReport) -> (f64, f64, f64) {
    let s = &report.summary;
    let med = |q: &Option<arfa::bench::Quartiles>| q.as_ref().map_or(f64::NAN, |q| q.median);
    (med(&s.e_a), med(&s.e_l), med(&s.e_d))
}

fn histogram(report: &StudyReport) -> String {
    let h: Vec<String> = report
        .rank_histogram
        .iter()
        .map(|(r, c)| format!("{r}:{c}"))
        .collect();
    format!("{{{}}}", h.join(" "))
}

fn study_one_n800() -> Outcome {
    let config = StudyConfig {
        n_trials: 50,
        seed: STUDY_SEED,
        ..StudyConfig::default()
    };
    let (report, secs) = study(config, "study1_n800");
    let (ea, el, ed) = medians(&report);
    let pass = report.efficiency >= 0.85 && ea <= 1e-2 && el <= 0.3 && ed <= 0.3 && secs <= 600.0;
    outcome(
        pass,
        format!(
            "efficiency {:.3} (>= 0.85), median e_a {ea:.4} (<= 1e-2), e_L {el:.3} (<= 0.3), \
             e_D {ed:.3} (<= 0.3), ranks {}, failures {}, {secs:.0} s (<= 600)",
            report.efficiency,
            histogram(&report),
            report.failures.len()
        ),
    )
}

fn study_one_n200() -> Outcome {
    let config = StudyConfig {
        n: 200,
        n_trials: 50,
        seed: STUDY_SEED,
        ..StudyConfig::default()
    };
    let (report, _) = study(config, "study1_n200");
    let mut wrong: BTreeMap<usize, usize> = BTreeMap::new();
    for t in report.trials.iter().filter(|t| t.r_est != 10) {
        *wrong.entry(t.r_est).or_insert(0) += 1;
    }
    let mode = wrong
        .iter()
        .max_by_key(|(r, c)| (**c, std::cmp::Reverse(**r)))
        .map(|(r, _)| *r);
    let pass = report.efficiency <= 0.75 && mode == Some(9);
    outcome(
        pass,
        format!(
            "efficiency {:.3} (<= 0.75), dominant wrong rank {:?} (expected 9), ranks {}",
            report.efficiency,
            mode,
            histogram(&report)
        ),
    )
}

fn study_two() -> Outcome {
    let config = StudyConfig {
        n_trials: 10,
        seed: STUDY_SEED,
        ..StudyConfig::second_study()
    };
    let (report, secs) = study(config, "study2");
    let hits = report.rank_histogram.get(&15).copied().unwrap_or(0);
    let pass = 2 * hits > 10 && secs <= 1200.0;
    outcome(
        pass,
        format!(
            "{hits}/10 trials at rank 15 (majority needed), ranks {}, {secs:.0} s (<= 1200)",
            histogram(&report)
        ),
    )
}

/// One random dataset of the stability check; some channels are made nearly constant,
/// integrated or sinusoidal.
fn awkward_dataset(seed: RngSeed) -> (Trajectory, usize) {
    let mut rng = seed.rng();
    let m = rng.random_range(1..=20);
    let p = rng.random_range(1..=8);
    let n = rng.random_range((p + 2).max(10)..=500);
    let mut y = DMatrix::<f64>::zeros(n, m);
    for k in 0..m {
        let kind = rng.random_range(0..5);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut state = 0.0;
        let freq = rng.random_range(0.0..std::f64::consts::PI);
        let level = rng.random_range(-5.0..5.0);
        for t in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            y[(t, k)] = scale
                * match kind {
                    0 => e,
                    1 => {
                        state += e;
                        state
                    }
                    2 => level + 1e-6 * e,
                    3 => (freq * t as f64).sin() + 1e-3 * e,
                    _ => {
                        state = 0.95 * state + e;
                        state
                    }
                };
        }
    }
    (Trajectory::new(y).unwrap(), p)
}

fn yule_walker_stability() -> Outcome {
    let root = RngSeed::new(4);
    let mut stable = 0;
    let mut unstable = 0;
    let mut refused_pd = 0;
    for i in 0..1000 {
        let (y, p) = awkward_dataset(root.split(i));
        let acov = biased_autocovariances(&y, p).unwrap();
        match yule_walker(&acov) {
            Ok(a) if a.is_stable() => stable += 1,
            Ok(_) => unstable += 1,
            Err(_) => {
                if acov.toeplitz().cholesky().is_some() {
                    refused_pd += 1;
                }
            }
        }
    }
    outcome(
        unstable == 0 && refused_pd == 0,
        format!(
            "{stable} stable, {unstable} unstable, {refused_pd} refused with positive definite T_b"
        ),
    )
}

fn certificate() -> Outcome {
    let root = RngSeed::new(5);
    let mut held = 0;
    let mut worst_sigma = 0.0f64;
    let mut checked = 0;
    for i in 0..200u64 {
        let mut rng = root.split(i).rng();
        let p = rng.random_range(1..=10);
        let m = rng.random_range(1..=5);
        let n = rng.random_range(50..=1000);
        let model = ArFactorModel::random(m + 1, 1, p, PolyLaw::Reflection, root.split(i).split(1))
            .unwrap();
        let y = simulate(&model, n, 200, root.split(i).split(2)).unwrap();
        let acov = if i % 2 == 0 {
            biased_autocovariances(&y, p).unwrap()
        } else {
            // Random sequence from a random PD Toeplitz matrix: autocovariances of a random
            // moving average.
            let b: Vec<f64> = (0..=p + 2).map(|_| rng.sample(StandardNormal)).collect();
            let taus = (0..=p)
                .map(|l| (l..b.len()).map(|j| b[j] * b[j - l]).sum::<f64>())
                .collect();
            AutocovarianceSequence::from_taus(taus).unwrap()
        };
        if acov.toeplitz().cholesky().is_none() {
            continue;
        }
        checked += 1;
        let a = yule_walker(&acov).unwrap();
        let cert = max_entropy_certificate(&a, &acov, 1e-8).unwrap();
        worst_sigma = worst_sigma.max((cert.sigma2 - 1.0).abs());
        if cert.holds && (cert.sigma2 - 1.0).abs() <= 1e-8 {
            held += 1;
        }
    }
    outcome(
        held == checked && checked == 200,
        format!("{held}/{checked} certificates hold, max |sigma^2 - 1| = {worst_sigma:.1e}"),
    )
}

/// Draws of `D(Sigma || Sigma_hat)` where `Sigma_hat` is the sample covariance of `n` draws
/// from `N(0, Sigma)`.
fn kl_draws(sigma: &DMatrix<f64>, n: usize, count: usize, seed: RngSeed) -> Vec<f64> {
    let m = sigma.nrows();
    let chol = cholesky_factor(sigma).unwrap();
    (0..count as u64)
        .map(|i| {
            let mut rng = seed.split(i).rng();
            let z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = z * chol.transpose();
            let s = x.tr_mul(&x) / n as f64;
            kl_gaussian(sigma, &s).unwrap()
        })
        .collect()
}

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn scale_invariance() -> Outcome {
    let (m, n) = (5, 50);
    let identity = kl_draws(&DMatrix::identity(m, m), n, 2000, RngSeed::new(61));
    let mut rng = RngSeed::new(62).rng();
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = &g * g.transpose() + DMatrix::identity(m, m) * 0.5;
    let general = kl_draws(&sigma, n, 2000, RngSeed::new(63));
    let ks = ks_statistic(&identity, &general);
    let calibrated =
        kl_null_samples(m, n, 2000, KlDirection::ModelFirst, RngSeed::new(64)).unwrap();
    let ks_cal = ks_statistic(&calibrated, &general);
    outcome(
        ks < 0.05 && ks_cal < 0.05,
        format!("KS(identity, random PD) = {ks:.4}, KS(calibration sampler, random PD) = {ks_cal:.4} (< 0.05)"),
    )
}

fn static_fa_exactness() -> Outcome {
    let (m, r) = (10, 2);
    let params = StaticFaParams {
        eps_s: 1e-6,
        i_max: 200,
    };
    let mut reached = 0;
    let mut monotone = 0;
    for i in 0..100u64 {
        let mut rng = RngSeed::new(7).split(i).rng();
        // Two factors with strengths around 9 and 4 per channel over a unit-scale diagonal.
        let mut w = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        w.column_mut(0).scale_mut(3.0);
        w.column_mut(1).scale_mut(2.0);
        let d = DVector::from_fn(m, |_, _| rng.random_range(0.5..1.5));
        let sigma = &w * w.transpose() + DMatrix::from_diagonal(&d);
        let rep = static_fa(&sigma, r, &params, RngSeed::new(8).split(i)).unwrap();
        if rep.relative_residual <= 1e-6 {
            reached += 1;
        }
        let mut prev = f64::INFINITY;
        if rep.objective_history.iter().all(|&x| {
            let ok = x <= prev;
            prev = x;
            ok
        }) {
            monotone += 1;
        }
    }
    outcome(
        reached >= 95 && monotone == 100,
        format!(
            "{reached}/100 reach residual 1e-6 (>= 95), {monotone}/100 non-increasing objective"
        ),
    )
}

fn closed_forms() -> Outcome {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let kl = kl_gaussian(&(&i2 * 2.0), &i2).unwrap();
    let kl_err = (kl - (1.0 - 2f64.ln())).abs();
    let yw =
        yule_walker(&AutocovarianceSequence::from_taus(vec![1.0, 0.5, 0.25]).unwrap()).unwrap();
    let yw_err = yw
        .coeffs()
        .iter()
        .zip([-0.5, 0.0])
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    let l = cholesky_factor(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0])).unwrap();
    let chol_err = (l - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0])).amax();
    let _: &ArPolynomial = &yw;
    outcome(
        kl_err <= 1e-12 && yw_err <= 1e-12 && chol_err <= 1e-12,
        format!(
            "errors: kl {kl_err:.1e}, yule-walker {yw_err:.1e}, cholesky {chol_err:.1e} (<= 1e-12)"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = scratch_dir("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{"m": 8, "r_true": 2, "p": 2, "n": 1500, "n_trials": 4, "n_mc": 300, "seed": 11}"#,
    )
    .unwrap();
    let mut reports = Vec::new();
    let out = dir.join("out");
    for workers in ["1", "1", "3"] {
        let run = Command::new(env!("CARGO_BIN_EXE_arfa"))
            .args(["study", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--workers", workers])
            .output()
            .expect("binary runs");
        assert!(run.status.success(), "study exited with {}", run.status);
        reports.push(std::fs::read(out.join(REPORT_JSON)).unwrap());
    }
    let same = reports.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!(
            "3 study runs (1, 1 and 3 workers), {} bytes each, identical: {same}",
            reports[0].len()
        ),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 9] = [
        ("1 first study, N=800", study_one_n800),
        ("2 first study, N=200", study_one_n200),
        ("3 second study smoke run", study_two),
        ("4 Yule-Walker stability", yule_walker_stability),
        ("5 maximum-entropy certificate", certificate),
        ("6 KL scale invariance", scale_invariance),
        ("7 static FA exactness", static_fa_exactness),
        ("8 closed-form oracles", closed_forms),
        ("9 report determinism", determinism),
    ];
    let mut passed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        passed += usize::from(result.pass);
        println!(
            "{} criterion {name}: {} [{:.1} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria met", criteria.len());
    let strict = std::env::var("ARFA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < criteria.len() {
        std::process::exit(1);
    }
}
