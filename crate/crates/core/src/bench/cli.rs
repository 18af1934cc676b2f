//! Command-line front end. Exit codes: 0 success, 1 usage error (bad arguments, malformed
//! config or CSV), 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{resolve_workers, run_study_in_memory, StudyConfig};
use crate::arpoly::ArPolynomial;
use crate::error::{Error, Result};
use crate::pipeline::{fit, fit_fixed_rank, FitOptions};
use crate::rng::RngSeed;
use crate::staticfa::{static_fa, StaticFaParams};
use crate::trajectory::Trajectory;

#[derive(Parser, Debug)]
#[command(
    name = "arfa",
    version,
    about = "Identification of auto-regressive factor models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (falls back to ARFA_WORKERS, then all cores).
    #[arg(long, global = true, env = "ARFA_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trajectory from a random model described by a study config.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate an AR factor model from a trajectory CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        p: usize,
        /// Fit this number of factors instead of selecting it.
        #[arg(long)]
        r: Option<usize>,
        #[command(flatten)]
        common: CommonFit,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a covariance matrix (CSV, one row per line) into low-rank plus diagonal.
    StaticFa {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo threshold for rank selection.
    Calibrate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, default_value_t = 2000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the full calibration record as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study and write report.json and trials.csv.
    Study {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct CommonFit {
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n_mc: usize,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(context: &str) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{context}: {e}"))
}

#[derive(Serialize)]
struct RankKl {
    rank: usize,
    kl: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    m: usize,
    p: usize,
    selected_rank: usize,
    delta_alpha: Option<f64>,
    selection_exhausted: bool,
    per_rank: Vec<RankKl>,
    a: ArPolynomial,
    l: Vec<Vec<f64>>,
    d: Vec<f64>,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct ModelJson {
    a: ArPolynomial,
    w_l: Vec<Vec<f64>>,
    w_d: Vec<f64>,
}

#[derive(Serialize)]
struct StaticFaJson {
    l: Vec<Vec<f64>>,
    d: Vec<f64>,
    rank: usize,
    iterations: usize,
    relative_residual: f64,
    converged: bool,
    objective_history: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn entries(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Runs the CLI on `argv` (program name first) and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = resolve_workers(cli.workers) {
        builder = builder.num_threads(w);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<StudyConfig, Failure> {
    match path {
        Some(p) => StudyConfig::load(p).map_err(usage(&p.display().to_string())),
        None => Ok(StudyConfig::default()),
    }
}

fn load_csv(path: &Path) -> Result<Trajectory, Failure> {
    Trajectory::load(path).map_err(usage(&path.display().to_string()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Runtime(e.into())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Runtime(e.into()))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (model, y) = cfg.generate(0)?;
            y.save(&out)?;
            let json = ModelJson {
                w_l: rows(&model.w_l),
                w_d: entries(&model.w_d),
                a: model.a,
            };
            emit(&to_json(&json)?, None)
        }
        Command::Fit {
            data,
            p,
            r,
            common,
            out,
        } => {
            let y = load_csv(&data)?;
            let report = match r {
                Some(r) => {
                    let opts = FitOptions::default();
                    let f = fit_fixed_rank(&y, p, r, &opts.fixed, RngSeed::new(common.seed))?;
                    FitReport {
                        n: y.n_samples(),
                        m: y.n_channels(),
                        p,
                        selected_rank: r,
                        delta_alpha: None,
                        selection_exhausted: false,
                        per_rank: Vec::new(),
                        a: f.a,
                        l: rows(&f.decomposition.l),
                        d: entries(&f.decomposition.d),
                        iterations: f.iterations,
                        converged: f.converged,
                    }
                }
                None => {
                    let opts = FitOptions {
                        alpha: common.alpha,
                        n_mc: common.n_mc,
                        calibration_seed: RngSeed::new(common.seed).split(0),
                        seed: RngSeed::new(common.seed).split(1),
                        ..Default::default()
                    };
                    let f = fit(&y, p, &opts)?;
                    let per_rank = f
                        .per_rank
                        .iter()
                        .map(|rr| RankKl {
                            rank: rr.rank,
                            kl: rr.kl,
                            iterations: rr.fit.iterations,
                            converged: rr.fit.converged,
                        })
                        .collect();
                    let sel = f.selected().fit.clone();
                    FitReport {
                        n: y.n_samples(),
                        m: y.n_channels(),
                        p,
                        selected_rank: f.selected_rank,
                        delta_alpha: Some(f.delta),
                        selection_exhausted: f.selection_exhausted,
                        per_rank,
                        a: sel.a,
                        l: rows(&sel.decomposition.l),
                        d: entries(&sel.decomposition.d),
                        iterations: sel.iterations,
                        converged: sel.converged,
                    }
                }
            };
            emit(&to_json(&report)?, out.as_deref())
        }
        Command::StaticFa { data, r, seed, out } => {
            let sigma = load_csv(&data)?.into_matrix();
            let rep = static_fa(&sigma, r, &StaticFaParams::default(), RngSeed::new(seed))?;
            let json = StaticFaJson {
                l: rows(&rep.decomposition.l),
                d: entries(&rep.decomposition.d),
                rank: rep.decomposition.rank,
                iterations: rep.iterations,
                relative_residual: rep.relative_residual,
                converged: rep.converged,
                objective_history: rep.objective_history,
            };
            emit(&to_json(&json)?, out.as_deref())
        }
        Command::Calibrate {
            m,
            n,
            alpha,
            n_mc,
            seed,
            out,
        } => {
            let cal = crate::pipeline::calibrate_delta(
                m,
                n,
                alpha,
                n_mc,
                Default::default(),
                RngSeed::new(seed),
            )
            .map_err(usage("calibrate"))?;
            if let Some(p) = out {
                emit(&to_json(&cal)?, Some(&p))?;
            }
            emit(&format!("{}\n", cal.delta_alpha), None)
        }
        Command::Study { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_study_in_memory(&cfg)?;
            report.write(&cfg.output_dir)?;
            eprintln!(
                "{} trials, {} failed, efficiency {:.3}, report in {}",
                cfg.n_trials,
                report.failures.len(),
                report.efficiency,
                cfg.output_dir.display()
            );
            Ok(())
        }
    }
}
