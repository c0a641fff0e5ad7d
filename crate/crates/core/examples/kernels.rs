//! Damping and noise kernels of the Lorentz-cutoff bath, and the classical
//! fluctuation-dissipation limit at high temperature.

use qbm::bath::{damping_kernel, noise_kernel, noise_kernel_matsubara, Family, SpectralModel};

fn main() -> qbm::Result<()> {
    let model = SpectralModel {
        family: Family::OhmicLorentzCutoff,
        gamma0: 0.2,
        cutoff: 10.0,
        temperature: 0.5,
        mass: 1.0,
        omega: 2.0,
    };
    model.validate()?;
    println!("{:>6} {:>14} {:>14} {:>14}", "t", "gamma(t)", "nu(t)", "nu matsubara");
    for t in [0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0] {
        println!(
            "{t:>6.2} {:>14.6e} {:>14.6e} {:>14.6e}",
            damping_kernel(&model, t)?,
            noise_kernel(&model, t)?,
            noise_kernel_matsubara(&model, t)?
        );
    }

    let hot = SpectralModel { temperature: 500.0, ..model };
    let scale = 2.0 * hot.mass * hot.temperature * damping_kernel(&hot, 0.0)?;
    let mut worst = 0.0f64;
    for k in 1..=100 {
        let t = k as f64 * 0.05;
        let classical = 2.0 * hot.mass * hot.temperature * damping_kernel(&hot, t)?;
        worst = worst.max((noise_kernel(&hot, t)? - classical).abs() / scale);
    }
    println!("T = 500: max |nu - 2mT gamma| / 2mT gamma(0) = {worst:.3e}");
    Ok(())
}
