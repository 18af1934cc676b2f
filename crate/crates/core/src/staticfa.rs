//! Static factor analysis: nearest low-rank-plus-diagonal decomposition in Frobenius norm.
//!
//! Given a covariance `S` and a rank `r`, [`static_fa`] looks for `L` PSD with `rank(L) <= r`
//! and `D` nonnegative diagonal minimizing `||S - L - D||_F^2`. It alternates the two exact
//! projections [`project_low_rank`] and [`project_diag_nonneg`], so the objective never
//! increases from one sweep to the next.
//!
//! When `S` admits several exact decompositions the returned pair depends on the random
//! starting point; only the residual is guaranteed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, frobenius_sq, sorted_eigen, symmetrized};
use crate::rng::RngSeed;

/// Consecutive sweeps without relative progress before the solver gives up.
const STALL_SWEEPS: usize = 10;
const STALL_REL_DECREASE: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorDecomposition {
    /// Low-rank PSD part.
    pub l: DMatrix<f64>,
    /// Diagonal of the idiosyncratic part.
    pub d: DVector<f64>,
    pub rank: usize,
}

impl FactorDecomposition {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d)
    }

    /// `L + D`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = self.l.clone();
        for i in 0..self.dim() {
            s[(i, i)] += self.d[i];
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticFaParams {
    /// Stop once `||S - L - D||_F^2 / ||S||_F^2 <= eps_s`.
    pub eps_s: f64,
    pub i_max: usize,
}

impl Default for StaticFaParams {
    fn default() -> Self {
        StaticFaParams {
            eps_s: 1e-6,
            i_max: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticFaReport {
    pub decomposition: FactorDecomposition,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// `||S - L - D||_F^2` after each sweep.
    pub objective_history: Vec<f64>,
}

/// Frobenius-nearest PSD matrix of rank at most `r`: keeps the `r` largest eigenvalues,
/// clamped at zero. With tied eigenvalues at position `r` the solver's order decides.
pub fn project_low_rank(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let sym = symmetrized(m)?;
    let n = sym.nrows();
    if r == 0 || r > n {
        return Err(Error::InvalidInput(format!("rank {r} outside 1..={n}")));
    }
    Ok(low_rank_part(sym, r))
}

fn low_rank_part(sym: DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let n = sym.nrows();
    let (values, vectors) = sorted_eigen(sym);
    let kept = (0..r).take_while(|&i| values[i] > 0.0).count();
    if kept == 0 {
        return DMatrix::zeros(n, n);
    }
    let q = vectors.columns(0, kept);
    let mut scaled = q.clone_owned();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    let out = &scaled * q.transpose();
    (&out + out.transpose()) * 0.5
}

/// Diagonal of `m` with negative entries clamped to zero.
pub fn project_diag_nonneg(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrized(m)?;
    Ok(DMatrix::from_diagonal(&diag_part(&sym)))
}

fn diag_part(m: &DMatrix<f64>) -> DVector<f64> {
    m.diagonal().map(|x| x.max(0.0))
}

/// Alternating projections for the static factor analysis problem.
///
/// `D` starts from i.i.d. `U(0, 1)` entries scaled by the mean of `diag(S)`. The loop stops when
/// the relative residual reaches `eps_s` (`converged = true`), after `i_max` sweeps, or when the
/// objective has stalled for 10 sweeps.
pub fn static_fa(
    sigma: &DMatrix<f64>,
    r: usize,
    params: &StaticFaParams,
    seed: RngSeed,
) -> Result<StaticFaReport> {
    let sigma = symmetrized(sigma)?;
    let m = sigma.nrows();
    if r == 0 || r >= m {
        return Err(Error::InvalidInput(format!("rank {r} outside 1..{m}")));
    }
    if params.eps_s.is_nan() || params.eps_s <= 0.0 || params.i_max == 0 {
        return Err(Error::InvalidInput(format!(
            "need eps_s > 0 and i_max >= 1, got {} and {}",
            params.eps_s, params.i_max
        )));
    }
    if cholesky(&sigma).is_none() {
        return Err(Error::InvalidInput(
            "covariance is not positive definite".into(),
        ));
    }

    let sigma_norm_sq = frobenius_sq(&sigma);
    let mean_diag = sigma.diagonal().mean();
    let mut rng = seed.rng();
    let mut d = DVector::from_fn(m, |_, _| rng.random::<f64>() * mean_diag);
    let mut l = DMatrix::zeros(m, m);

    let objective = |l: &DMatrix<f64>, d: &DVector<f64>| {
        let mut res = &sigma - l;
        for i in 0..m {
            res[(i, i)] -= d[i];
        }
        frobenius_sq(&res)
    };

    let mut history = Vec::new();
    let mut current = objective(&l, &d);
    let mut stalled = 0;
    let mut converged = current / sigma_norm_sq <= params.eps_s;
    let mut iterations = 0;
    while !converged && iterations < params.i_max {
        let mut target = sigma.clone();
        for i in 0..m {
            target[(i, i)] -= d[i];
        }
        l = low_rank_part(target, r);
        d = diag_part(&(&sigma - &l));
        iterations += 1;

        let next = objective(&l, &d);
        history.push(next);
        converged = next / sigma_norm_sq <= params.eps_s;
        if current - next < STALL_REL_DECREASE * current {
            stalled += 1;
            if stalled >= STALL_SWEEPS {
                current = next;
                break;
            }
        } else {
            stalled = 0;
        }
        current = next;
    }

    Ok(StaticFaReport {
        decomposition: FactorDecomposition { l, d, rank: r },
        iterations,
        relative_residual: current / sigma_norm_sq,
        converged,
        objective_history: history,
    })
}
