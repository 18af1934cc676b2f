//! The identification loop and rank selection.
//!
//! For a fixed number of factors `r`, [`fit_fixed_rank`] alternates:
//!
//! 1. filter the data through the current `a(z)` (zero initial conditions),
//! 2. take the sample covariance of the filtered data,
//! 3. split it into `L + D` by static factor analysis,
//! 4. whiten the raw data with the Cholesky factor of `L + D`,
//! 5. re-estimate `a` by Yule-Walker on the whitened data,
//!
//! until the parameter change [`convergence_error`] drops below `eps`. The loop starts from
//! `a = 0`, `L = 0`, `D = I`, so the first pass is a static factor analysis of the raw data.
//!
//! [`fit`] runs this for `r = 1, 2, ...` and stops at the first rank whose fitted covariance is
//! within `delta_alpha` of the sample covariance in Kullback-Leibler divergence. The threshold is
//! the `alpha`-quantile of the divergence between a covariance and its own `N`-sample estimate.
//! That distribution depends only on `(m, N)`, so it is sampled once with identity covariance
//! ([`calibrate_delta`]) and cached.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arest::{biased_autocovariances, yule_walker};
use crate::arpoly::ArPolynomial;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det, min_eigenvalue, symmetrized};
use crate::rng::RngSeed;
use crate::staticfa::{static_fa, FactorDecomposition, StaticFaParams};
use crate::trajectory::Trajectory;

/// Relative eigenvalue floor (against `trace / m`) below which `L + D` is jittered before the
/// Cholesky factorization.
pub const JITTER_FLOOR: f64 = 1e-10;

/// `1/N sum_t u(t) u(t)'`, without mean removal.
pub fn sample_covariance(u: &Trajectory) -> DMatrix<f64> {
    let um = u.as_matrix();
    let s = um.tr_mul(um) / u.n_samples() as f64;
    (&s + s.transpose()) * 0.5
}

/// Lower-triangular Cholesky factor with positive diagonal.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrized(sigma).map_err(|e| Error::Decomposition(e.to_string()))?;
    cholesky(&sym)
        .map(|c| c.l())
        .ok_or_else(|| Error::Decomposition("matrix is not positive definite".into()))
}

/// Cholesky factor of `sigma`, adding `JITTER_FLOOR * trace / m` to the diagonal first when the
/// smallest eigenvalue falls below that level. Returns whether jitter was applied.
fn cholesky_with_jitter(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let m = sigma.nrows();
    let floor = JITTER_FLOOR * sigma.trace() / m as f64;
    if min_eigenvalue(sigma) < floor {
        let jittered = sigma + DMatrix::identity(m, m) * floor;
        Ok((cholesky_factor(&jittered)?, true))
    } else {
        Ok((cholesky_factor(sigma)?, false))
    }
}

/// Maps every sample through `L_Sigma^{-1}` by forward substitution.
pub fn disentangle(l_sigma: &DMatrix<f64>, y: &Trajectory) -> Result<Trajectory> {
    let m = y.n_channels();
    if l_sigma.nrows() != m || l_sigma.ncols() != m {
        return Err(Error::InvalidInput(format!(
            "factor is {}x{} but the trajectory has {m} channels",
            l_sigma.nrows(),
            l_sigma.ncols()
        )));
    }
    if l_sigma
        .diagonal()
        .iter()
        .any(|&x| x == 0.0 || !x.is_finite())
    {
        return Err(Error::Decomposition("singular triangular factor".into()));
    }
    let solved = l_sigma
        .solve_lower_triangular(&y.as_matrix().transpose())
        .ok_or_else(|| Error::Decomposition("singular triangular factor".into()))?;
    Trajectory::new(solved.transpose())
}

/// `||L - L_old||_F^2 / m^2 + ||D - D_old||_F^2 / m + ||a - a_old|| / p`.
pub fn convergence_error(
    l: &DMatrix<f64>,
    l_old: &DMatrix<f64>,
    d: &DVector<f64>,
    d_old: &DVector<f64>,
    a: &ArPolynomial,
    a_old: &ArPolynomial,
) -> f64 {
    let m = d.len() as f64;
    let p = a.order() as f64;
    let dl = (l - l_old).norm_squared() / (m * m);
    let dd = (d - d_old).norm_squared() / m;
    let da = a
        .coeffs()
        .iter()
        .zip(a_old.coeffs())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let da = if p > 0.0 { da / p } else { 0.0 };
    dl + dd + da
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRankParams {
    pub eps: f64,
    pub l_max: usize,
    pub static_fa: StaticFaParams,
}

impl Default for FixedRankParams {
    fn default() -> Self {
        FixedRankParams {
            eps: 0.03,
            l_max: 200,
            static_fa: StaticFaParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRankFit {
    pub a: ArPolynomial,
    pub decomposition: FactorDecomposition,
    /// Sample covariance of the data filtered in the last iteration.
    pub sigma_hat: DMatrix<f64>,
    pub iterations: usize,
    pub final_e: f64,
    pub converged: bool,
    /// Iterations in which `L + D` needed diagonal jitter before factoring.
    pub jitter_events: usize,
}

/// The alternating identification loop for a fixed number of factors.
pub fn fit_fixed_rank(
    y: &Trajectory,
    p: usize,
    r: usize,
    params: &FixedRankParams,
    seed: RngSeed,
) -> Result<FixedRankFit> {
    let m = y.n_channels();
    let n = y.n_samples();
    if p < 1 {
        return Err(Error::InvalidInput("AR order must be at least 1".into()));
    }
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support order {p}"
        )));
    }
    if r < 1 || r >= m {
        return Err(Error::InvalidInput(format!(
            "need 1 <= r < m, got r={r}, m={m}"
        )));
    }
    if params.l_max < 1 || params.eps.is_nan() {
        return Err(Error::InvalidInput(
            "need l_max >= 1 and a non-NaN eps".into(),
        ));
    }

    let mut a = ArPolynomial::zero(p);
    let mut l = DMatrix::zeros(m, m);
    let mut d = DVector::from_element(m, 1.0);
    let mut sigma_hat = DMatrix::zeros(m, m);
    let mut final_e = f64::INFINITY;
    let mut converged = false;
    let mut jitter_events = 0;
    let mut iterations = 0;

    while iterations < params.l_max {
        iterations += 1;
        let it = iterations;
        let step = || -> Result<(DMatrix<f64>, FactorDecomposition, bool, ArPolynomial)> {
            let u = a.filter(y)?;
            let s = sample_covariance(&u);
            let fa = static_fa(&s, r, &params.static_fa, seed.split(it as u64))?;
            let (l_sigma, jittered) = cholesky_with_jitter(&fa.decomposition.covariance())?;
            let ybar = disentangle(&l_sigma, y)?;
            let a_new = yule_walker(&biased_autocovariances(&ybar, p)?)?;
            Ok((s, fa.decomposition, jittered, a_new))
        };
        let (s, dec, jittered, a_new) = step().map_err(|e| e.at_iteration(it))?;
        jitter_events += usize::from(jittered);

        final_e = convergence_error(&dec.l, &l, &dec.d, &d, &a_new, &a);
        sigma_hat = s;
        l = dec.l;
        d = dec.d;
        a = a_new;
        if final_e <= params.eps {
            converged = true;
            break;
        }
    }

    Ok(FixedRankFit {
        a,
        decomposition: FactorDecomposition { l, d, rank: r },
        sigma_hat,
        iterations,
        final_e,
        converged,
        jitter_events,
    })
}

/// `1/2 (-log|A| + log|B| + tr(A B^{-1}) - m)` for zero-mean Gaussians with covariances
/// `A = sigma_model` and `B = sigma_hat`.
pub fn kl_gaussian(sigma_model: &DMatrix<f64>, sigma_hat: &DMatrix<f64>) -> Result<f64> {
    let a = symmetrized(sigma_model).map_err(|e| Error::Domain(e.to_string()))?;
    let b = symmetrized(sigma_hat).map_err(|e| Error::Domain(e.to_string()))?;
    if a.nrows() != b.nrows() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let ca = cholesky(&a).ok_or_else(|| Error::Domain("first argument is not PD".into()))?;
    let cb = cholesky(&b).ok_or_else(|| Error::Domain("second argument is not PD".into()))?;
    let trace = cb.solve(&a).trace();
    let m = a.nrows() as f64;
    Ok((0.5 * (-log_det(&ca) + log_det(&cb) + trace - m)).max(0.0))
}

/// Which covariance takes the first slot of the divergence used for rank selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `D(L + D || Sigma_hat)`; calibrated with `1/2 (log|Q| + tr Q^{-1} - m)`.
    #[default]
    ModelFirst,
    /// `D(Sigma_hat || L + D)`; calibrated with `1/2 (-log|Q| + tr Q - m)`.
    SampleFirst,
}

impl KlDirection {
    pub fn divergence(self, model: &DMatrix<f64>, sample: &DMatrix<f64>) -> Result<f64> {
        match self {
            KlDirection::ModelFirst => kl_gaussian(model, sample),
            KlDirection::SampleFirst => kl_gaussian(sample, model),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub mean: f64,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub q99: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlCalibration {
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    pub n_mc: usize,
    pub direction: KlDirection,
    pub delta_alpha: f64,
    pub empirical_quantiles: QuantileSummary,
}

/// Empirical quantile of sorted data: the smallest sample `x` with `#{x_i <= x} >= q n`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// `n_mc` draws of the divergence between `I_m` and the sample covariance of `n` standard
/// normal vectors. Draw `i` uses the stream `seed.split(i)`, so the output does not depend on
/// the number of worker threads.
pub fn kl_null_samples(
    m: usize,
    n: usize,
    n_mc: usize,
    direction: KlDirection,
    seed: RngSeed,
) -> Result<Vec<f64>> {
    if m < 1 || n < m {
        return Err(Error::Domain(format!(
            "need n >= m >= 1 for an invertible sample covariance, got m={m}, n={n}"
        )));
    }
    (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.split(i).rng();
            let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = x.tr_mul(&x) / n as f64;
            let chol = cholesky(&q)
                .ok_or_else(|| Error::Domain("singular sample covariance in calibration".into()))?;
            let log_det_q = log_det(&chol);
            let mf = m as f64;
            let d = match direction {
                KlDirection::ModelFirst => {
                    let inv_trace = chol.inverse().trace();
                    0.5 * (log_det_q + inv_trace - mf)
                }
                KlDirection::SampleFirst => 0.5 * (-log_det_q + q.trace() - mf),
            };
            Ok(d)
        })
        .collect()
}

/// Monte Carlo estimate of `delta_alpha` with `P(d <= delta_alpha) = alpha`.
pub fn calibrate_delta(
    m: usize,
    n: usize,
    alpha: f64,
    n_mc: usize,
    direction: KlDirection,
    seed: RngSeed,
) -> Result<KlCalibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n_mc < 100 {
        return Err(Error::Domain(format!(
            "need at least 100 Monte Carlo draws, got {n_mc}"
        )));
    }
    let mut draws = kl_null_samples(m, n, n_mc, direction, seed)?;
    draws.sort_by(f64::total_cmp);
    let q = |p| empirical_quantile(&draws, p);
    Ok(KlCalibration {
        m,
        n,
        alpha,
        n_mc,
        direction,
        delta_alpha: q(alpha),
        empirical_quantiles: QuantileSummary {
            mean: draws.iter().sum::<f64>() / n_mc as f64,
            min: draws[0],
            q05: q(0.05),
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            q99: q(0.99),
            max: draws[n_mc - 1],
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct CalibrationKey {
    m: usize,
    n: usize,
    alpha_bits: u64,
    n_mc: usize,
    direction: KlDirection,
    seed: RngSeed,
}

/// Thread-safe memo of [`calibrate_delta`] results.
#[derive(Debug, Default)]
pub struct DeltaCache {
    entries: Mutex<HashMap<CalibrationKey, KlCalibration>>,
}

impl DeltaCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_calibrate(
        &self,
        m: usize,
        n: usize,
        alpha: f64,
        n_mc: usize,
        direction: KlDirection,
        seed: RngSeed,
    ) -> Result<KlCalibration> {
        let key = CalibrationKey {
            m,
            n,
            alpha_bits: alpha.to_bits(),
            n_mc,
            direction,
            seed,
        };
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let cal = calibrate_delta(m, n, alpha, n_mc, direction, seed)?;
        self.entries.lock().unwrap().insert(key, cal.clone());
        Ok(cal)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn default_r_max(m: usize) -> usize {
    (m - 1).min(m / 2 + 10)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub alpha: f64,
    pub n_mc: usize,
    /// Largest rank tried; `None` means [`default_r_max`].
    pub r_max: Option<usize>,
    pub direction: KlDirection,
    pub fixed: FixedRankParams,
    /// Seed of the threshold calibration; shared across fits so the cache can be reused.
    pub calibration_seed: RngSeed,
    /// Seed of the static factor analysis initializations.
    pub seed: RngSeed,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha: 0.99,
            n_mc: 2000,
            r_max: None,
            direction: KlDirection::default(),
            fixed: FixedRankParams::default(),
            calibration_seed: RngSeed::new(0),
            seed: RngSeed::new(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    pub fit: FixedRankFit,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub selected_rank: usize,
    /// Ordered by increasing rank, ending at the selected rank unless selection was exhausted.
    pub per_rank: Vec<RankResult>,
    pub delta: f64,
    pub alpha: f64,
    /// True when no rank up to `r_max` met the threshold; the minimum-divergence rank is used.
    pub selection_exhausted: bool,
    pub calibration: KlCalibration,
}

impl Fit {
    pub fn selected(&self) -> &RankResult {
        self.per_rank
            .iter()
            .find(|rr| rr.rank == self.selected_rank)
            .expect("selected rank is always in per_rank")
    }
}

pub fn fit(y: &Trajectory, p: usize, opts: &FitOptions) -> Result<Fit> {
    fit_with_cache(y, p, opts, &DeltaCache::new())
}

/// Rank selection: increases `r` from 1 until the divergence falls below `delta_alpha`.
pub fn fit_with_cache(
    y: &Trajectory,
    p: usize,
    opts: &FitOptions,
    cache: &DeltaCache,
) -> Result<Fit> {
    let m = y.n_channels();
    let n = y.n_samples();
    if m < 2 {
        return Err(Error::InvalidInput(
            "rank selection needs at least two channels".into(),
        ));
    }
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support order {p}"
        )));
    }
    let calibration = cache.get_or_calibrate(
        m,
        n,
        opts.alpha,
        opts.n_mc,
        opts.direction,
        opts.calibration_seed,
    )?;
    let delta = calibration.delta_alpha;
    let r_max = opts
        .r_max
        .unwrap_or_else(|| default_r_max(m))
        .clamp(1, m - 1);

    let mut per_rank = Vec::new();
    let mut selected = None;
    for r in 1..=r_max {
        let fr = fit_fixed_rank(y, p, r, &opts.fixed, opts.seed.split(r as u64))
            .map_err(|e| e.at_rank(r))?;
        let kl = opts
            .direction
            .divergence(&fr.decomposition.covariance(), &fr.sigma_hat)
            .map_err(|e| e.at_rank(r))?;
        per_rank.push(RankResult {
            rank: r,
            fit: fr,
            kl,
        });
        if kl <= delta {
            selected = Some(r);
            break;
        }
    }

    let (selected_rank, selection_exhausted) = match selected {
        Some(r) => (r, false),
        None => {
            let best = per_rank
                .iter()
                .min_by(|a, b| a.kl.total_cmp(&b.kl))
                .expect("r_max >= 1");
            (best.rank, true)
        }
    };
    Ok(Fit {
        selected_rank,
        per_rank,
        delta,
        alpha: opts.alpha,
        selection_exhausted,
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate, ArFactorModel, PolyLaw};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest};

    fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn sample_covariance_examples() {
        let u = Trajectory::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(sample_covariance(&u), mat(2, &[1., 0., 0., 0.]));
        let u = Trajectory::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(sample_covariance(&u), mat(1, &[4.0]));

        let mut rng = RngSeed::new(3).rng();
        let x = DMatrix::from_fn(100_000, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = sample_covariance(&Trajectory::new(x).unwrap());
        assert!((s - DMatrix::identity(3, 3)).amax() < 0.02);
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(
            cholesky_factor(&DMatrix::identity(3, 3)).unwrap(),
            DMatrix::identity(3, 3)
        );
        let l = cholesky_factor(&mat(2, &[4., 2., 2., 2.])).unwrap();
        assert!((l - mat(2, &[2., 0., 1., 1.])).amax() < 1e-12);
        assert!(matches!(
            cholesky_factor(&mat(2, &[1., 2., 2., 1.])),
            Err(Error::Decomposition(_))
        ));
    }

    #[test]
    fn jitter_only_when_needed() {
        let (_, jittered) = cholesky_with_jitter(&DMatrix::identity(2, 2)).unwrap();
        assert!(!jittered);
        let singular = mat(2, &[1., 1., 1., 1.]);
        let (l, jittered) = cholesky_with_jitter(&singular).unwrap();
        assert!(jittered);
        assert!(l.diagonal().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn disentangle_examples() {
        let y = Trajectory::from_rows(&[vec![2.0, 4.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(disentangle(&DMatrix::identity(2, 2), &y).unwrap(), y);
        let out = disentangle(&(DMatrix::identity(2, 2) * 2.0), &y).unwrap();
        assert_eq!(
            out.as_matrix().row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0]
        );
        let out = disentangle(&mat(2, &[2., 0., 1., 1.]), &y).unwrap();
        assert_eq!(
            out.as_matrix().row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
        assert!(disentangle(&mat(2, &[0., 0., 1., 1.]), &y).is_err());
        assert!(disentangle(&DMatrix::identity(3, 3), &y).is_err());
    }

    #[test]
    fn convergence_error_examples() {
        let z = DMatrix::zeros(2, 2);
        let dv = DVector::from_element(2, 1.0);
        let a = ArPolynomial::new(vec![0.3]);
        assert_eq!(convergence_error(&z, &z, &dv, &dv, &a, &a), 0.0);

        let e = convergence_error(
            &DMatrix::identity(2, 2),
            &z,
            &dv,
            &dv,
            &ArPolynomial::new(vec![0.1]),
            &ArPolynomial::new(vec![0.0]),
        );
        assert_abs_diff_eq!(e, 0.6, epsilon = 1e-15);

        let e = convergence_error(&z, &z, &(&dv * 2.0), &dv, &a, &a);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(kl_gaussian(&i2, &i2).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_gaussian(&(&i2 * 2.0), &i2).unwrap(),
            1.0 - 2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            kl_gaussian(&i2, &(&i2 * 2.0)).unwrap(),
            2f64.ln() - 0.5,
            epsilon = 1e-12
        );
        assert!(matches!(
            kl_gaussian(&mat(2, &[1., 2., 2., 1.]), &i2),
            Err(Error::Domain(_))
        ));
        assert!(kl_gaussian(&i2, &DMatrix::identity(3, 3)).is_err());
    }

    fn random_pd(m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngSeed::new(seed).rng();
        let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() + DMatrix::identity(m, m) * 0.1
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_the_diagonal(seed in 0u64..100_000, m in 1usize..7) {
            let a = random_pd(m, seed);
            let b = random_pd(m, seed + 1);
            prop_assert!(kl_gaussian(&a, &b).unwrap() >= 0.0);
            prop_assert!(kl_gaussian(&a, &a).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn calibration_examples() {
        let seed = RngSeed::new(21);
        let lo = calibrate_delta(5, 60, 0.5, 400, KlDirection::ModelFirst, seed).unwrap();
        let hi = calibrate_delta(5, 60, 0.99, 400, KlDirection::ModelFirst, seed).unwrap();
        assert!(hi.delta_alpha > lo.delta_alpha);
        assert!(lo.delta_alpha > 0.0);

        let long = calibrate_delta(5, 800, 0.9, 400, KlDirection::ModelFirst, seed).unwrap();
        let short = calibrate_delta(5, 200, 0.9, 400, KlDirection::ModelFirst, seed).unwrap();
        assert!(long.delta_alpha < short.delta_alpha);

        assert!(calibrate_delta(5, 4, 0.5, 400, KlDirection::ModelFirst, seed).is_err());
        assert!(calibrate_delta(5, 40, 1.0, 400, KlDirection::ModelFirst, seed).is_err());
        assert!(calibrate_delta(5, 40, 0.5, 99, KlDirection::ModelFirst, seed).is_err());
    }

    #[test]
    fn scalar_calibration_matches_chi_square_oracle() {
        // Independent oracle: for m = N = 1, Q is a chi-square(1) variable and
        // d = (ln q + 1/q - 1) / 2. Its median, from 4e6 numpy chi-square draws, is 0.3402.
        let cal =
            calibrate_delta(1, 1, 0.5, 20_000, KlDirection::ModelFirst, RngSeed::new(5)).unwrap();
        assert!(
            (cal.delta_alpha - 0.340).abs() <= 0.02,
            "{}",
            cal.delta_alpha
        );
    }

    #[test]
    fn calibration_independent_of_thread_count() {
        let seed = RngSeed::new(4);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| kl_null_samples(3, 20, 200, KlDirection::ModelFirst, seed).unwrap());
        let b =
            three.install(|| kl_null_samples(3, 20, 200, KlDirection::ModelFirst, seed).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn cache_reuses_calibrations() {
        let cache = DeltaCache::new();
        let seed = RngSeed::new(1);
        let a = cache
            .get_or_calibrate(3, 30, 0.9, 100, KlDirection::ModelFirst, seed)
            .unwrap();
        let b = cache
            .get_or_calibrate(3, 30, 0.9, 100, KlDirection::ModelFirst, seed)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
        cache
            .get_or_calibrate(3, 31, 0.9, 100, KlDirection::ModelFirst, seed)
            .unwrap();
        assert_eq!(cache.len(), 2);
    }

    fn small_problem(seed: u64) -> (ArFactorModel, Trajectory) {
        let model =
            ArFactorModel::random(10, 2, 2, PolyLaw::Reflection, RngSeed::new(seed)).unwrap();
        let y = simulate(&model, 5000, 120, RngSeed::new(seed + 1000)).unwrap();
        (model, y)
    }

    #[test]
    fn fixed_rank_iteration_limits() {
        let (_, y) = small_problem(1);
        let inf = FixedRankParams {
            eps: f64::INFINITY,
            ..Default::default()
        };
        let f = fit_fixed_rank(&y, 2, 2, &inf, RngSeed::new(0)).unwrap();
        assert_eq!(f.iterations, 1);
        assert!(f.converged);

        let capped = FixedRankParams {
            eps: 0.0,
            l_max: 1,
            ..Default::default()
        };
        let f = fit_fixed_rank(&y, 2, 2, &capped, RngSeed::new(0)).unwrap();
        assert_eq!(f.iterations, 1);
        assert!(!f.converged);
    }

    #[test]
    fn fixed_rank_recovers_ar_coefficients_and_is_deterministic() {
        let (model, y) = small_problem(2);
        let params = FixedRankParams::default();
        let f = fit_fixed_rank(&y, 2, 2, &params, RngSeed::new(3)).unwrap();
        let err: f64 =
            f.a.coeffs()
                .iter()
                .zip(model.a.coeffs())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
                / model.a.norm();
        assert!(err <= 0.05, "relative AR error {err}");
        assert!(f.converged);
        let again = fit_fixed_rank(&y, 2, 2, &params, RngSeed::new(3)).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn fixed_rank_input_checks() {
        let (_, y) = small_problem(3);
        let p = FixedRankParams::default();
        assert!(fit_fixed_rank(&y, 0, 2, &p, RngSeed::new(0)).is_err());
        assert!(fit_fixed_rank(&y, 2, 10, &p, RngSeed::new(0)).is_err());
        let short = Trajectory::new(y.as_matrix().rows(0, 2).into_owned()).unwrap();
        assert!(matches!(
            fit_fixed_rank(&short, 2, 1, &p, RngSeed::new(0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn inner_failures_carry_iteration_and_rank() {
        // Fewer samples than channels: the sample covariance is singular.
        let (_, y) = small_problem(4);
        let short = Trajectory::new(y.as_matrix().rows(0, 5).into_owned()).unwrap();
        let err =
            fit_fixed_rank(&short, 2, 1, &FixedRankParams::default(), RngSeed::new(0)).unwrap_err();
        assert!(
            matches!(err, Error::AtIteration { iteration: 1, .. }),
            "{err}"
        );
        assert_eq!(err.kind(), "invalid_input");
        let opts = FitOptions {
            n_mc: 100,
            ..Default::default()
        };
        let longer = Trajectory::new(y.as_matrix().rows(0, 9).into_owned()).unwrap();
        assert!(fit(&longer, 2, &opts).is_err());
    }

    #[test]
    fn rank_selection_on_small_synthetic_model() {
        let (_, y) = small_problem(5);
        let opts = FitOptions {
            n_mc: 500,
            ..Default::default()
        };
        let f = fit(&y, 2, &opts).unwrap();
        assert_eq!(
            f.selected_rank,
            2,
            "kl per rank: {:?}",
            f.per_rank.iter().map(|r| r.kl).collect::<Vec<_>>()
        );
        assert!(!f.selection_exhausted);
        assert!(f.per_rank.windows(2).all(|w| w[0].rank < w[1].rank));
        assert!(f.per_rank.iter().all(|r| r.kl.is_finite()));
        assert!(f.selected().kl <= f.delta);

        // The selected model approximately matches the zeroth moment of the data
        // filtered by its own AR estimate.
        let sel = &f.selected().fit;
        let s = sample_covariance(&sel.a.filter(&y).unwrap());
        let kl = kl_gaussian(&sel.decomposition.covariance(), &s).unwrap();
        assert!(kl <= f.delta * 1.05, "{kl} vs {}", f.delta);
    }

    #[test]
    fn exhausted_selection_picks_minimum_divergence() {
        let (_, y) = small_problem(6);
        let opts = FitOptions {
            n_mc: 200,
            r_max: Some(1),
            ..Default::default()
        };
        let f = fit(&y, 2, &opts).unwrap();
        assert_eq!(f.per_rank.len(), 1);
        assert!(f.selection_exhausted);
        assert_eq!(f.selected_rank, 1);
    }
}
