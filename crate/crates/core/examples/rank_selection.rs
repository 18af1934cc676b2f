//! Full identification: AR polynomial, factor covariance and number of factors.

use arfa::pipeline::{fit, FitOptions};
use arfa::synth::{simulate, ArFactorModel};
use arfa::{PolyLaw, RngSeed};

fn main() -> arfa::Result<()> {
    let model = ArFactorModel::random(12, 3, 2, PolyLaw::Reflection, RngSeed::new(11))?;
    let y = simulate(&model, 4000, 120, RngSeed::new(12))?;

    let f = fit(&y, 2, &FitOptions::default())?;
    println!("threshold delta = {:.4}", f.delta);
    for rr in &f.per_rank {
        println!(
            "r = {}: KL = {:.4}, {} iterations, converged: {}",
            rr.rank, rr.kl, rr.fit.iterations, rr.fit.converged
        );
    }
    let sel = &f.selected().fit;
    println!("selected r = {} (true {})", f.selected_rank, model.rank());
    println!("true a      = {:?}", model.a.coeffs());
    println!("estimated a = {:?}", sel.a.coeffs());
    println!(
        "relative errors: L {:.3}, D {:.3}",
        (model.l() - &sel.decomposition.l).norm() / model.l().norm(),
        (model.d() - &sel.decomposition.d).norm() / model.d().norm()
    );
    Ok(())
}
