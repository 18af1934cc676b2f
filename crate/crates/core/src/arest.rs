//! AR dynamics estimation from a whitened multichannel trajectory.
//!
//! After whitening, every channel is an independent copy of the same scalar AR process, so the
//! channels are pooled as one scalar process with `m` times as much data. Two estimators are
//! provided:
//!
//! * [`yule_walker`] solves the Toeplitz system built from biased autocovariances (normalized by
//!   `m * N`). The biased Toeplitz matrix is positive semidefinite, which makes the result a
//!   stable polynomial. This is the estimator used by the identification loop.
//! * [`ml_estimate`] is the exact conditional maximum-likelihood solution. It uses a
//!   non-Toeplitz moment matrix and is not guaranteed to be stable; it is kept as a diagnostic.
//!
//! [`max_entropy_certificate`] checks numerically that a polynomial is the maximum-entropy
//! solution for the given autocovariances, i.e. that the rescaled Yule-Walker system holds with
//! unit innovation variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arpoly::ArPolynomial;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, toeplitz};
use crate::trajectory::Trajectory;

/// Largest accepted condition number of the Toeplitz block solved by [`yule_walker`].
pub const MAX_CONDITION: f64 = 1e12;

/// Biased pooled autocovariances `tau_0..=tau_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocovarianceSequence {
    pub taus: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

impl AutocovarianceSequence {
    /// Wraps a given sequence (e.g. theoretical autocovariances); `m` and `n` are set to 1.
    pub fn from_taus(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || taus.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput(
                "autocovariance sequence must be non-empty and finite".into(),
            ));
        }
        let p = taus.len() - 1;
        Ok(AutocovarianceSequence {
            taus,
            m: 1,
            n: 1,
            p,
        })
    }

    /// The `(p+1) x (p+1)` Toeplitz matrix `T_b`.
    pub fn toeplitz(&self) -> DMatrix<f64> {
        toeplitz(&self.taus)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub holds: bool,
    /// Innovation variance implied by the rescaled system; 1 for the exact solution.
    pub sigma2: f64,
    /// Largest absolute deviation among the last `p` equations.
    pub max_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArFitDiagnostics {
    pub a_me: ArPolynomial,
    pub a_ml: Option<ArPolynomial>,
    pub sigma2_certificate: f64,
    pub certificate_holds: bool,
    pub stable_me: bool,
}

/// `tau_l = 1/(m N) sum_k sum_{t > l} ybar_k(t) ybar_k(t-l)` for `l = 0..=p`.
///
/// The per-lag sums run over channels in order and over time in order, so results are
/// reproducible bit for bit.
pub fn biased_autocovariances(ybar: &Trajectory, p: usize) -> Result<AutocovarianceSequence> {
    let n = ybar.n_samples();
    let m = ybar.n_channels();
    if p < 1 {
        return Err(Error::InvalidInput("AR order must be at least 1".into()));
    }
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support order {p}"
        )));
    }
    let mut taus = vec![0.0; p + 1];
    for k in 0..m {
        let x = ybar.channel(k);
        let x = x.as_slice();
        for (lag, tau) in taus.iter_mut().enumerate() {
            *tau += x[lag..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let norm = (m * n) as f64;
    for tau in &mut taus {
        *tau /= norm;
    }
    Ok(AutocovarianceSequence { taus, m, n, p })
}

fn solve_guarded(t22: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = t22.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo.is_nan() || lo <= 0.0 || hi / lo > MAX_CONDITION {
        return Err(Error::DegenerateData(format!(
            "Toeplitz block is singular or ill-conditioned (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    let chol = cholesky(&t22)
        .ok_or_else(|| Error::DegenerateData("Toeplitz block is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// `a_ME = -T_{b,22}^{-1} z_b`.
pub fn yule_walker(acov: &AutocovarianceSequence) -> Result<ArPolynomial> {
    let p = acov.taus.len() - 1;
    if p == 0 {
        return Ok(ArPolynomial::zero(0));
    }
    let t22 = toeplitz(&acov.taus[..p]);
    let z = DVector::from_column_slice(&acov.taus[1..]);
    let a = -solve_guarded(t22, &z)?;
    Ok(ArPolynomial::new(a.iter().copied().collect()))
}

/// Pooled conditional maximum-likelihood estimate `a_ML = -T_22^{-1} z` from the
/// `(p+1) x (p+1)` moment matrix `1/(m (N-p)) sum_k sum_{t > p} Y_k(t) Y_k(t)'`.
pub fn ml_estimate(ybar: &Trajectory, p: usize) -> Result<ArPolynomial> {
    let n = ybar.n_samples();
    let m = ybar.n_channels();
    if p < 1 {
        return Err(Error::InvalidInput("AR order must be at least 1".into()));
    }
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support order {p}"
        )));
    }
    let mut t = DMatrix::<f64>::zeros(p + 1, p + 1);
    for k in 0..m {
        let x = ybar.channel(k);
        let x = x.as_slice();
        for i in 0..=p {
            for j in i..=p {
                // sum over t = p..n-1 of x[t-i] x[t-j]
                let s: f64 = (p..n).map(|t| x[t - i] * x[t - j]).sum();
                t[(i, j)] += s;
            }
        }
    }
    t /= (m * (n - p)) as f64;
    for i in 0..=p {
        for j in 0..i {
            t[(i, j)] = t[(j, i)];
        }
    }
    let t22 = t.view((1, 1), (p, p)).into_owned();
    let z = t.view((1, 0), (p, 1)).column(0).into_owned();
    let a = -solve_guarded(t22, &z)?;
    Ok(ArPolynomial::new(a.iter().copied().collect()))
}

/// Checks that `[1; a]` solves `c * T_b [1; a] = [sigma2; 0]` with `c = (T_b^{-1})_{00}`,
/// to within `tol`, and that `sigma2` is within `tol` of 1.
pub fn max_entropy_certificate(
    a: &ArPolynomial,
    acov: &AutocovarianceSequence,
    tol: f64,
) -> Result<Certificate> {
    let p = acov.taus.len() - 1;
    if a.order() != p {
        return Err(Error::InvalidInput(format!(
            "polynomial order {} does not match autocovariance order {p}",
            a.order()
        )));
    }
    let tb = acov.toeplitz();
    let chol = cholesky(&tb)
        .ok_or_else(|| Error::DegenerateData("T_b is not positive definite".into()))?;
    let mut e0 = DVector::zeros(p + 1);
    e0[0] = 1.0;
    let scale = chol.solve(&e0)[0];
    let w = (&tb * DVector::from_vec(a.monic())) * scale;
    let sigma2 = w[0];
    let max_residual = w.iter().skip(1).fold(0.0f64, |acc, x| acc.max(x.abs()));
    Ok(Certificate {
        holds: (sigma2 - 1.0).abs() <= tol && max_residual <= tol,
        sigma2,
        max_residual,
    })
}

/// Runs both estimators and the certificate on a whitened trajectory.
pub fn diagnose(ybar: &Trajectory, p: usize) -> Result<ArFitDiagnostics> {
    let acov = biased_autocovariances(ybar, p)?;
    let a_me = yule_walker(&acov)?;
    let cert = max_entropy_certificate(&a_me, &acov, 1e-8)?;
    Ok(ArFitDiagnostics {
        stable_me: a_me.is_stable(),
        a_ml: ml_estimate(ybar, p).ok(),
        sigma2_certificate: cert.sigma2,
        certificate_holds: cert.holds,
        a_me,
    })
}
