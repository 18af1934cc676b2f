//! Identification of auto-regressive factor models.
//!
//! An AR factor model describes an `m`-channel process
//!
//! ```text
//! a(z) y(t) = W_L v(t) + W_D w(t)
//! ```
//!
//! where `a(z) = 1 + a_1 z^-1 + ... + a_p z^-p` is a scalar, monic AR polynomial shared by all
//! channels, `v` is an `r`-dimensional white factor process and `w` is channel-wise white noise.
//! The innovation covariance splits into a low-rank part `L = W_L W_L'` and a diagonal part
//! `D = W_D W_D'`.
//!
//! The crate estimates `a`, `L`, `D` and the number of factors `r` from a finite trajectory by
//! alternating a static factor analysis step ([`staticfa`]) with a Yule-Walker step on the
//! whitened data ([`arest`]), and selects `r` with a Kullback-Leibler test whose threshold is
//! calibrated by Monte Carlo ([`pipeline`]). The [`synth`] and [`bench`] modules generate
//! ground-truth models and run seeded simulation studies.
//!
//! Trajectories are stored as `N x m` matrices; row `t` (0-based) holds the sample that is
//! usually written `y(t + 1)` in 1-based notation.

pub mod arest;
pub mod arpoly;
pub mod bench;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod staticfa;
pub mod synth;
pub mod trajectory;

mod linalg;

pub use arest::{ArFitDiagnostics, AutocovarianceSequence, Certificate};
pub use arpoly::ArPolynomial;
pub use error::{Error, Result};
pub use pipeline::{Fit, FitOptions, FixedRankFit, FixedRankParams, KlCalibration, KlDirection};
pub use rng::RngSeed;
pub use staticfa::{FactorDecomposition, StaticFaParams, StaticFaReport};
pub use synth::{ArFactorModel, PolyLaw};
pub use trajectory::Trajectory;
