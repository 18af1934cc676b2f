//! Random ground-truth AR factor models and trajectory simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arpoly::ArPolynomial;
use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::trajectory::Trajectory;

/// Largest reflection-coefficient magnitude used by [`PolyLaw::Reflection`].
pub const REFLECTION_CAP: f64 = 0.9;
/// Pole modulus range used by [`PolyLaw::Poles`].
pub const POLE_MODULUS: (f64, f64) = (0.3, 0.9);

/// Sampling law for random stable AR polynomials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyLaw {
    /// Reflection coefficients i.i.d. `U(-0.9, 0.9)`, converted by the step-up recursion.
    #[default]
    Reflection,
    /// Complex-conjugate pole pairs with modulus `U(0.3, 0.9)` and angle `U(0, pi)`, plus one
    /// real pole `U(-0.9, 0.9)` when the order is odd.
    Poles,
}

/// Sampling law for the diagonal idiosyncratic loadings `W_D`, before rescaling to
/// `||D||_F = ||L||_F`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// `W_D` diagonal i.i.d. `U(0.5, 1.5)`.
    #[default]
    Uniform,
    /// `W_D` diagonal i.i.d. standard normal (so `D` is chi-square distributed).
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArFactorModel {
    pub a: ArPolynomial,
    /// `m x r` factor loadings.
    pub w_l: DMatrix<f64>,
    /// Diagonal of the idiosyncratic loadings.
    pub w_d: DVector<f64>,
}

impl ArFactorModel {
    pub fn new(a: ArPolynomial, w_l: DMatrix<f64>, w_d: DVector<f64>) -> Result<Self> {
        if w_l.nrows() != w_d.len() {
            return Err(Error::InvalidInput(format!(
                "W_L has {} rows but W_D has {} entries",
                w_l.nrows(),
                w_d.len()
            )));
        }
        Ok(ArFactorModel { a, w_l, w_d })
    }

    /// Draws `a` with `law`, and `(W_L, W_D)` with [`random_decomposition`].
    pub fn random(m: usize, r: usize, p: usize, law: PolyLaw, seed: RngSeed) -> Result<Self> {
        Self::random_with(m, r, p, law, NoiseLaw::default(), seed)
    }

    pub fn random_with(
        m: usize,
        r: usize,
        p: usize,
        poly_law: PolyLaw,
        noise_law: NoiseLaw,
        seed: RngSeed,
    ) -> Result<Self> {
        let a = random_stable_poly_with(p, poly_law, seed.split(0))?;
        let (w_l, w_d) = random_decomposition_with(m, r, noise_law, seed.split(1))?;
        Ok(ArFactorModel { a, w_l, w_d })
    }

    pub fn dim(&self) -> usize {
        self.w_d.len()
    }

    pub fn rank(&self) -> usize {
        self.w_l.ncols()
    }

    pub fn l(&self) -> DMatrix<f64> {
        &self.w_l * self.w_l.transpose()
    }

    pub fn d(&self) -> DVector<f64> {
        self.w_d.map(|w| w * w)
    }

    /// Innovation covariance `L + D`.
    pub fn sigma(&self) -> DMatrix<f64> {
        self.l() + DMatrix::from_diagonal(&self.d())
    }
}

pub fn random_stable_poly(p: usize, seed: RngSeed) -> Result<ArPolynomial> {
    random_stable_poly_with(p, PolyLaw::Reflection, seed)
}

pub fn random_stable_poly_with(p: usize, law: PolyLaw, seed: RngSeed) -> Result<ArPolynomial> {
    if p < 1 {
        return Err(Error::Domain("AR order must be at least 1".into()));
    }
    let mut rng = seed.rng();
    match law {
        PolyLaw::Reflection => {
            let k: Vec<f64> = (0..p)
                .map(|_| rng.random_range(-REFLECTION_CAP..REFLECTION_CAP))
                .collect();
            ArPolynomial::from_reflection(&k)
        }
        PolyLaw::Poles => {
            let pairs: Vec<(f64, f64)> = (0..p / 2)
                .map(|_| {
                    (
                        rng.random_range(POLE_MODULUS.0..POLE_MODULUS.1),
                        rng.random_range(0.0..std::f64::consts::PI),
                    )
                })
                .collect();
            let real: Vec<f64> = (0..p % 2)
                .map(|_| rng.random_range(-POLE_MODULUS.1..POLE_MODULUS.1))
                .collect();
            Ok(ArPolynomial::from_poles(&real, &pairs))
        }
    }
}

/// Random loadings `(W_L, diag W_D)` with `W_L` i.i.d. standard normal and `W_D` rescaled so
/// that `||D||_F = ||L||_F` exactly.
pub fn random_decomposition(
    m: usize,
    r: usize,
    seed: RngSeed,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    random_decomposition_with(m, r, NoiseLaw::default(), seed)
}

pub fn random_decomposition_with(
    m: usize,
    r: usize,
    law: NoiseLaw,
    seed: RngSeed,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if r < 1 || r >= m {
        return Err(Error::Domain(format!("need 1 <= r < m, got r={r}, m={m}")));
    }
    let mut rng = seed.rng();
    let w_l = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut w_d = match law {
        NoiseLaw::Uniform => DVector::from_fn(m, |_, _| rng.random_range(0.5..1.5)),
        NoiseLaw::Gaussian => DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    let l_norm = (&w_l * w_l.transpose()).norm();
    let d_norm = w_d.map(|w| w * w).norm();
    w_d *= (l_norm / d_norm).sqrt();
    Ok((w_l, w_d))
}

pub fn default_burn_in(p: usize) -> usize {
    10 * p + 100
}

/// Runs `y(t) = -sum_k a_k y(t-k) + W_L v(t) + W_D w(t)` from zero state for `burn_in + n`
/// steps and keeps the last `n` samples.
pub fn simulate(
    model: &ArFactorModel,
    n: usize,
    burn_in: usize,
    seed: RngSeed,
) -> Result<Trajectory> {
    if n < 1 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if !model.a.is_stable() {
        return Err(Error::Domain("cannot simulate an unstable AR model".into()));
    }
    let m = model.dim();
    let r = model.rank();
    let total = burn_in + n;
    let mut rng = seed.rng();
    let mut y = DMatrix::<f64>::zeros(total, m);
    let coeffs = model.a.coeffs();
    let mut v = DVector::<f64>::zeros(r);
    for t in 0..total {
        for x in v.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let common = &model.w_l * &v;
        for k in 0..m {
            let w: f64 = rng.sample(StandardNormal);
            let mut val = common[k] + model.w_d[k] * w;
            for (lag, &ak) in coeffs.iter().enumerate() {
                if let Some(prev) = t.checked_sub(lag + 1) {
                    val -= ak * y[(prev, k)];
                }
            }
            y[(t, k)] = val;
        }
    }
    Trajectory::new(y.rows(burn_in, n).into_owned())
}
