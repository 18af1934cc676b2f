//! Splits an exactly low-rank-plus-diagonal covariance back into its parts.

use arfa::staticfa::{static_fa, StaticFaParams};
use arfa::synth::random_decomposition;
use arfa::RngSeed;
use nalgebra::DMatrix;

fn main() -> arfa::Result<()> {
    let (m, r) = (12, 3);
    let (w_l, w_d) = random_decomposition(m, r, RngSeed::new(1))?;
    let l = &w_l * w_l.transpose();
    let d = w_d.map(|x| x * x);
    let sigma = &l + DMatrix::from_diagonal(&d);

    let report = static_fa(&sigma, r, &StaticFaParams::default(), RngSeed::new(2))?;
    let dec = &report.decomposition;
    println!(
        "{} sweeps, relative residual {:.2e}, converged: {}",
        report.iterations, report.relative_residual, report.converged
    );
    println!(
        "||L - L_hat||_F / ||L||_F = {:.2e}",
        (&l - &dec.l).norm() / l.norm()
    );
    println!(
        "||D - D_hat||   / ||D||   = {:.2e}",
        (&d - &dec.d).norm() / d.norm()
    );

    // With one factor too few the residual cannot vanish.
    let short = static_fa(&sigma, r - 1, &StaticFaParams::default(), RngSeed::new(2))?;
    println!(
        "rank {}: relative residual {:.2e}",
        r - 1,
        short.relative_residual
    );
    Ok(())
}
