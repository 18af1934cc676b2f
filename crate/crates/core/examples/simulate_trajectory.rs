//! Draws a random stable AR factor model, simulates it and writes the trajectory as CSV.
//!
//! cargo run --example simulate_trajectory -- [out.csv]

use arfa::synth::{default_burn_in, simulate, ArFactorModel};
use arfa::{PolyLaw, RngSeed, Trajectory};

fn main() -> arfa::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "trajectory.csv".into());
    let (m, r, p, n) = (20, 4, 3, 1000);
    let model = ArFactorModel::random(m, r, p, PolyLaw::Reflection, RngSeed::new(7))?;
    println!("a = {:?}", model.a.coeffs());
    println!(
        "roots inside the unit circle: {}, ||L||_F = {:.3}, ||D||_F = {:.3}",
        model.a.is_stable(),
        model.l().norm(),
        model.d().norm()
    );

    let y = simulate(&model, n, default_burn_in(p), RngSeed::new(8))?;
    y.save(&out)?;
    let back = Trajectory::load(&out)?;
    println!(
        "wrote {} samples x {} channels to {out}; reloaded identical: {}",
        y.n_samples(),
        y.n_channels(),
        back == y
    );
    Ok(())
}
