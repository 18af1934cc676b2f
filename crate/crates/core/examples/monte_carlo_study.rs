//! Seeded simulation study with rank histogram and error quartiles.
//!
//! cargo run --release --example monte_carlo_study -- [first|second] [n_trials] [n_samples]

use std::time::Instant;

use arfa::bench::{run_study_in_memory, StudyConfig};

fn main() -> arfa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = match args.first().map(String::as_str) {
        Some("second") => StudyConfig::second_study(),
        _ => StudyConfig::default(),
    };
    config.n_trials = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    if let Some(n) = args.get(2).and_then(|s| s.parse().ok()) {
        config.n = n;
    }
    config.seed = 2024;

    let start = Instant::now();
    let report = run_study_in_memory(&config)?;
    println!(
        "m={} r={} p={} N={} trials={}  delta_alpha={:.4}  ({:.1} s)",
        config.m,
        config.r_true,
        config.p,
        config.n,
        config.n_trials,
        report.delta_alpha,
        start.elapsed().as_secs_f64()
    );
    println!("estimated rank histogram: {:?}", report.rank_histogram);
    println!("efficiency: {:.3}", report.efficiency);
    for (name, q) in [
        ("e_a", &report.summary.e_a),
        ("e_L", &report.summary.e_l),
        ("e_D", &report.summary.e_d),
    ] {
        if let Some(q) = q {
            println!(
                "{name}: median {:.4}  IQR [{:.4}, {:.4}]",
                q.median, q.q25, q.q75
            );
        }
    }
    for t in &report.trials {
        println!(
            "trial {:>3}: r_est={:>2} e_a={:.4} e_L={:.3} e_D={:.3} iters={} {:.0} ms",
            t.trial, t.r_est, t.e_a, t.e_l, t.e_d, t.iterations, t.wall_time_ms
        );
    }
    for f in &report.failures {
        println!("trial {:>3} failed ({}): {}", f.trial, f.kind, f.message);
    }
    Ok(())
}
