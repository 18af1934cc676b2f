//! Yule-Walker estimation on pooled channels, stability and the maximum-entropy certificate.

use arfa::arest::{biased_autocovariances, max_entropy_certificate, ml_estimate, yule_walker};
use arfa::synth::{simulate, ArFactorModel};
use arfa::{ArPolynomial, RngSeed, Trajectory};
use nalgebra::{DMatrix, DVector};

fn main() -> arfa::Result<()> {
    // Independent unit-variance channels sharing a(z): already whitened data.
    let a = ArPolynomial::from_reflection(&[0.7, -0.5, 0.3])?;
    let m = 8;
    let model = ArFactorModel::new(
        a.clone(),
        DMatrix::zeros(m, 1),
        DVector::from_element(m, 1.0),
    )?;
    let y = simulate(&model, 4000, 200, RngSeed::new(3))?;

    let acov = biased_autocovariances(&y, 3)?;
    let a_me = yule_walker(&acov)?;
    let a_ml = ml_estimate(&y, 3)?;
    println!("true a:        {:?}", a.coeffs());
    println!(
        "Yule-Walker a: {:?} (stable: {})",
        a_me.coeffs(),
        a_me.is_stable()
    );
    println!("ML a:          {:?}", a_ml.coeffs());

    let cert = max_entropy_certificate(&a_me, &acov, 1e-8)?;
    println!(
        "certificate holds: {}, sigma^2 = {:.12}, residual {:.1e}",
        cert.holds, cert.sigma2, cert.max_residual
    );

    // Integrating the same data makes it non-stationary; the biased estimate stays stable.
    let mut walk = y.into_matrix();
    for t in 1..walk.nrows() {
        let prev = walk.row(t - 1).into_owned();
        walk.row_mut(t).zip_apply(&prev, |x, p| *x += p);
    }
    let a_walk = yule_walker(&biased_autocovariances(&Trajectory::new(walk)?, 4)?)?;
    println!(
        "integrated data: a = {:?}, stable: {}",
        a_walk.coeffs(),
        a_walk.is_stable()
    );
    Ok(())
}
