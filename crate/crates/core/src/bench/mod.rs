//! Seeded Monte Carlo studies: random ground truth, simulated data, estimation, error metrics.
//!
//! Trial `i` of a study with root seed `s` draws everything from `RngSeed::new(s).split(1).split(i)`
//! (model from `.split(0)`, trajectory from `.split(1)`, estimator from `.split(2)`), and the
//! rank-selection threshold is calibrated once from `RngSeed::new(s).split(0)`. Reports are
//! therefore identical for any worker count.

pub mod cli;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arpoly::ArPolynomial;
use crate::error::{Error, Result};
use crate::pipeline::{fit_with_cache, DeltaCache, Fit, FitOptions, FixedRankParams, KlDirection};
use crate::rng::RngSeed;
use crate::staticfa::{FactorDecomposition, StaticFaParams};
use crate::synth::{default_burn_in, simulate, ArFactorModel, NoiseLaw, PolyLaw};
use crate::trajectory::Trajectory;

pub const REPORT_JSON: &str = "report.json";
pub const TRIALS_CSV: &str = "trials.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub m: usize,
    pub r_true: usize,
    pub p: usize,
    #[serde(alias = "N")]
    pub n: usize,
    pub n_trials: usize,
    pub alpha: f64,
    pub eps: f64,
    pub eps_s: f64,
    pub l_max: usize,
    pub i_max: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Samples discarded before recording; `None` means `10 p + 100`.
    pub burn_in: Option<usize>,
    pub poly_law: PolyLaw,
    pub noise_law: NoiseLaw,
    /// Largest rank tried; `None` means `min(m - 1, m / 2 + 10)`.
    pub r_max: Option<usize>,
    pub direction: KlDirection,
}

impl Default for StudyConfig {
    /// The first study: 40 channels, 10 factors, order 5, 800 samples.
    fn default() -> Self {
        StudyConfig {
            m: 40,
            r_true: 10,
            p: 5,
            n: 800,
            n_trials: 200,
            alpha: 0.99,
            eps: 0.03,
            eps_s: 1e-6,
            l_max: 200,
            i_max: 200,
            n_mc: 2000,
            seed: 0,
            output_dir: PathBuf::from("study_out"),
            burn_in: None,
            poly_law: PolyLaw::default(),
            noise_law: NoiseLaw::default(),
            r_max: None,
            direction: KlDirection::default(),
        }
    }
}

impl StudyConfig {
    /// The second study: 100 channels, 15 factors, order 4, 500 samples.
    pub fn second_study() -> Self {
        StudyConfig {
            m: 100,
            r_true: 15,
            p: 4,
            n: 500,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("r_true", self.r_true),
            ("p", self.p),
            ("n", self.n),
            ("n_trials", self.n_trials),
            ("l_max", self.l_max),
            ("i_max", self.i_max),
            ("n_mc", self.n_mc),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if self.r_true >= self.m {
            return Err(Error::InvalidInput(format!(
                "r_true = {} must be below m = {}",
                self.r_true, self.m
            )));
        }
        if self.n <= self.p {
            return Err(Error::InvalidInput(format!(
                "n = {} must exceed p = {}",
                self.n, self.p
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha = {} outside (0, 1)",
                self.alpha
            )));
        }
        if [self.eps, self.eps_s]
            .iter()
            .any(|x| x.is_nan() || *x <= 0.0)
        {
            return Err(Error::InvalidInput("eps and eps_s must be positive".into()));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| default_burn_in(self.p))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            alpha: self.alpha,
            n_mc: self.n_mc,
            r_max: self.r_max,
            direction: self.direction,
            fixed: FixedRankParams {
                eps: self.eps,
                l_max: self.l_max,
                static_fa: StaticFaParams {
                    eps_s: self.eps_s,
                    i_max: self.i_max,
                },
            },
            calibration_seed: self.root_seed().split(0),
            seed: RngSeed::new(0),
        }
    }

    pub fn root_seed(&self) -> RngSeed {
        RngSeed::new(self.seed)
    }

    pub fn trial_seed(&self, trial: usize) -> RngSeed {
        self.root_seed().split(1).split(trial as u64)
    }

    /// Ground truth and data of one trial.
    pub fn generate(&self, trial: usize) -> Result<(ArFactorModel, Trajectory)> {
        let seed = self.trial_seed(trial);
        let model = ArFactorModel::random_with(
            self.m,
            self.r_true,
            self.p,
            self.poly_law,
            self.noise_law,
            seed.split(0),
        )?;
        let y = simulate(&model, self.n, self.burn_in(), seed.split(1))?;
        Ok((model, y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub e_a: f64,
    pub e_l: f64,
    pub e_d: f64,
    pub r_est: usize,
    /// Iterations of the identification loop at the selected rank.
    pub iterations: usize,
    pub converged: bool,
    pub selection_exhausted: bool,
    /// Informational; left out of the JSON report so repeated runs stay byte-identical.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub kind: String,
    pub message: String,
}

/// Relative errors `||a - a_hat|| / ||a||`, `||L - L_hat||_F / ||L||_F`, `||D - D_hat||_F / ||D||_F`.
pub fn relative_errors(
    truth: &ArFactorModel,
    a: &ArPolynomial,
    decomposition: &FactorDecomposition,
) -> Result<(f64, f64, f64)> {
    let m = truth.dim();
    if a.order() != truth.a.order() || decomposition.dim() != m {
        return Err(Error::InvalidInput(format!(
            "estimate has order {} and dimension {}, truth has {} and {m}",
            a.order(),
            decomposition.dim(),
            truth.a.order()
        )));
    }
    let rel = |diff: f64, norm: f64| if norm > 0.0 { diff / norm } else { diff };
    let da = truth
        .a
        .coeffs()
        .iter()
        .zip(a.coeffs())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let l = truth.l();
    let d = truth.d();
    Ok((
        rel(da, truth.a.norm()),
        rel((&l - &decomposition.l).norm(), l.norm()),
        rel((&d - &decomposition.d).norm(), d.norm()),
    ))
}

/// Error metrics of the estimate at the selected rank.
pub fn metrics(truth: &ArFactorModel, fit: &Fit) -> Result<TrialResult> {
    let sel = fit.selected();
    let (e_a, e_l, e_d) = relative_errors(truth, &sel.fit.a, &sel.fit.decomposition)?;
    Ok(TrialResult {
        trial: 0,
        e_a,
        e_l,
        e_d,
        r_est: fit.selected_rank,
        iterations: sel.fit.iterations,
        converged: sel.fit.converged,
        selection_exhausted: fit.selection_exhausted,
        wall_time_ms: 0.0,
    })
}

/// Quartiles with linear interpolation between order statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            q25: interpolated_quantile(&v, 0.25),
            median: interpolated_quantile(&v, 0.5),
            q75: interpolated_quantile(&v, 0.75),
        })
    }
}

fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub e_a: Option<Quartiles>,
    pub e_l: Option<Quartiles>,
    pub e_d: Option<Quartiles>,
    pub iterations: Option<Quartiles>,
}

impl Summary {
    pub fn of(trials: &[TrialResult]) -> Self {
        let col =
            |f: fn(&TrialResult) -> f64| Quartiles::of(&trials.iter().map(f).collect::<Vec<_>>());
        Summary {
            e_a: col(|t| t.e_a),
            e_l: col(|t| t.e_l),
            e_d: col(|t| t.e_d),
            iterations: col(|t| t.iterations as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub delta_alpha: f64,
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub summary: Summary,
    /// Estimated rank to count, over completed trials.
    pub rank_histogram: BTreeMap<usize, usize>,
    /// Fraction of all trials (failed ones included) whose estimated rank is `r_true`.
    pub efficiency: f64,
}

impl StudyReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `report.json` and `trials.csv` into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_JSON), self.to_json()?)?;
        let mut w = csv::Writer::from_path(dir.join(TRIALS_CSV))?;
        w.write_record([
            "trial",
            "e_a",
            "e_l",
            "e_d",
            "r_est",
            "iterations",
            "converged",
            "selection_exhausted",
            "wall_time_ms",
        ])?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.e_a.to_string(),
                t.e_l.to_string(),
                t.e_d.to_string(),
                t.r_est.to_string(),
                t.iterations.to_string(),
                t.converged.to_string(),
                t.selection_exhausted.to_string(),
                t.wall_time_ms.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back the per-trial CSV written by [`StudyReport::write`].
    pub fn read_trials_csv(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let parse_err =
                |i: usize| Error::InvalidInput(format!("bad value {:?} in trials CSV", field(i)));
            let f = |i: usize| field(i).parse::<f64>().map_err(|_| parse_err(i));
            let u = |i: usize| field(i).parse::<usize>().map_err(|_| parse_err(i));
            let b = |i: usize| field(i).parse::<bool>().map_err(|_| parse_err(i));
            out.push(TrialResult {
                trial: u(0)?,
                e_a: f(1)?,
                e_l: f(2)?,
                e_d: f(3)?,
                r_est: u(4)?,
                iterations: u(5)?,
                converged: b(6)?,
                selection_exhausted: b(7)?,
                wall_time_ms: f(8)?,
            });
        }
        Ok(out)
    }
}

fn run_trial(config: &StudyConfig, trial: usize, cache: &DeltaCache) -> Result<TrialResult> {
    let start = Instant::now();
    let (model, y) = config.generate(trial)?;
    let opts = FitOptions {
        seed: config.trial_seed(trial).split(2),
        ..config.fit_options()
    };
    let fit = fit_with_cache(&y, config.p, &opts, cache)?;
    let mut result = metrics(&model, &fit)?;
    result.trial = trial;
    result.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

/// Runs all trials on the current rayon pool and assembles the report in trial order. Failed
/// trials are listed with their error kind and excluded from the summaries.
pub fn run_study_in_memory(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let cache = DeltaCache::new();
    let opts = config.fit_options();
    let calibration = cache.get_or_calibrate(
        config.m,
        config.n,
        opts.alpha,
        opts.n_mc,
        opts.direction,
        opts.calibration_seed,
    )?;

    let outcomes: Vec<_> = (0..config.n_trials)
        .into_par_iter()
        .map(|i| (i, run_trial(config, i, &cache)))
        .collect();

    Ok(assemble(config, calibration.delta_alpha, outcomes))
}

fn assemble(
    config: &StudyConfig,
    delta_alpha: f64,
    outcomes: Vec<(usize, Result<TrialResult>)>,
) -> StudyReport {
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        match outcome {
            Ok(t) => trials.push(t),
            Err(e) => failures.push(TrialFailure {
                trial: i,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    let mut rank_histogram = BTreeMap::new();
    for t in &trials {
        *rank_histogram.entry(t.r_est).or_insert(0) += 1;
    }
    let hits = trials.iter().filter(|t| t.r_est == config.r_true).count();
    StudyReport {
        config: config.clone(),
        delta_alpha,
        summary: Summary::of(&trials),
        efficiency: hits as f64 / config.n_trials as f64,
        trials,
        failures,
        rank_histogram,
    }
}

/// Resolves the worker count: explicit value, then `ARFA_WORKERS`, then all cores.
pub fn resolve_workers(workers: Option<usize>) -> Option<usize> {
    workers
        .or_else(|| std::env::var("ARFA_WORKERS").ok()?.trim().parse().ok())
        .filter(|&w| w > 0)
}

/// Runs the study with up to `workers` threads and writes the report files to
/// `config.output_dir`.
pub fn run_study(config: &StudyConfig, workers: Option<usize>) -> Result<StudyReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = resolve_workers(workers) {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| run_study_in_memory(config))?;
    report.write(&config.output_dir)?;
    Ok(report)
}
