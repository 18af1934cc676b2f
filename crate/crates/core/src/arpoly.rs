//! Monic AR polynomials `a(z) = 1 + a_1 z^-1 + ... + a_p z^-p`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Roots with modulus at or above this are treated as outside the open unit disc.
pub const STABILITY_MARGIN: f64 = 1.0 - 1e-10;

/// Coefficients `[a_1, ..., a_p]`; the leading `a_0 = 1` is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArPolynomial {
    coeffs: Vec<f64>,
}

impl ArPolynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        ArPolynomial { coeffs }
    }

    /// `a(z) = 1` padded with `p` zero coefficients.
    pub fn zero(p: usize) -> Self {
        ArPolynomial {
            coeffs: vec![0.0; p],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `[1, a_1, ..., a_p]`.
    pub fn monic(&self) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.coeffs.iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Moving-average filtering `u(t) = y(t) + sum_k a_k y(t-k)` with zero initial conditions.
    /// All `N` samples are kept, including the first `p` transient ones.
    pub fn filter(&self, y: &Trajectory) -> Result<Trajectory> {
        if let Some(bad) = self.coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite AR coefficient {bad}"
            )));
        }
        let ym = y.as_matrix();
        let n = ym.nrows();
        let mut u = ym.clone();
        for ch in 0..ym.ncols() {
            let src = ym.column(ch);
            let mut dst = u.column_mut(ch);
            for (k, &ak) in self.coeffs.iter().enumerate() {
                let lag = k + 1;
                if ak == 0.0 || lag >= n {
                    continue;
                }
                for t in lag..n {
                    dst[t] += ak * src[t - lag];
                }
            }
        }
        Trajectory::new(u)
    }

    /// Roots of `z^p + a_1 z^(p-1) + ... + a_p` as eigenvalues of the companion matrix.
    pub fn roots(&self) -> Vec<(f64, f64)> {
        let p = self.order();
        if p == 0 {
            return Vec::new();
        }
        let mut companion = DMatrix::zeros(p, p);
        for (j, &c) in self.coeffs.iter().enumerate() {
            companion[(0, j)] = -c;
        }
        for i in 1..p {
            companion[(i, i - 1)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect()
    }

    /// True iff every root lies strictly inside the unit circle (modulus below
    /// [`STABILITY_MARGIN`]). The empty polynomial is stable.
    pub fn is_stable(&self) -> bool {
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return false;
        }
        self.roots()
            .iter()
            .all(|&(re, im)| re.hypot(im) < STABILITY_MARGIN)
    }

    /// `|a(e^{j theta})|^2`.
    fn power_response(&self, theta: f64) -> f64 {
        let (mut re, mut im) = (1.0, 0.0);
        for (k, &ak) in self.coeffs.iter().enumerate() {
            let w = (k + 1) as f64 * theta;
            re += ak * w.cos();
            im -= ak * w.sin();
        }
        re * re + im * im
    }

    /// Spectral density `1 / |a(e^{j theta})|^2` of the AR process driven by unit white noise.
    pub fn spectrum(&self, thetas: &[f64]) -> Result<Vec<f64>> {
        if !self.is_stable() {
            return Err(Error::Domain(
                "spectrum of an unstable AR polynomial".into(),
            ));
        }
        Ok(thetas
            .iter()
            .map(|&t| 1.0 / self.power_response(t))
            .collect())
    }

    /// Step-up (Levinson) recursion from reflection coefficients. Every `|k_i| < 1` yields a
    /// stable polynomial of order `k.len()`.
    pub fn from_reflection(k: &[f64]) -> Result<Self> {
        if let Some(bad) = k.iter().find(|x| x.is_nan() || x.abs() >= 1.0) {
            return Err(Error::Domain(format!(
                "reflection coefficient {bad} outside (-1, 1)"
            )));
        }
        let mut a: Vec<f64> = Vec::with_capacity(k.len());
        for &ki in k {
            let prev = a.clone();
            for (j, aj) in a.iter_mut().enumerate() {
                *aj += ki * prev[prev.len() - 1 - j];
            }
            a.push(ki);
        }
        Ok(ArPolynomial { coeffs: a })
    }

    /// Polynomial with the given poles; complex poles are passed once as `(modulus, angle)` and
    /// contribute their conjugate as well.
    pub(crate) fn from_poles(real: &[f64], complex: &[(f64, f64)]) -> Self {
        let mut poly = vec![1.0];
        let mul = |poly: &[f64], factor: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; poly.len() + factor.len() - 1];
            for (i, &p) in poly.iter().enumerate() {
                for (j, &f) in factor.iter().enumerate() {
                    out[i + j] += p * f;
                }
            }
            out
        };
        for &(rho, angle) in complex {
            poly = mul(&poly, &[1.0, -2.0 * rho * angle.cos(), rho * rho]);
        }
        for &r in real {
            poly = mul(&poly, &[1.0, -r]);
        }
        ArPolynomial {
            coeffs: poly[1..].to_vec(),
        }
    }
}

/// Evenly spaced frequency grid on `[0, pi]`.
pub fn frequency_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect(),
    }
}
