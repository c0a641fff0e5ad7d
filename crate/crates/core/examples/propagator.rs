//! Green's function from the memory-kernel Volterra equation, checked against
//! numerical Laplace inversion, and the phase-space propagator it generates.

use num_complex::Complex64;
use qbm::bath::{Family, SpectralModel};
use qbm::grid::TimeGrid;
use qbm::laplace::talbot;
use qbm::propagator::{phi_rel, PropagatorTable};

fn main() -> qbm::Result<()> {
    let model = SpectralModel {
        family: Family::OhmicLorentzCutoff,
        gamma0: 2.0,
        cutoff: 10.0,
        temperature: 0.5,
        mass: 1.0,
        omega: 2.0,
    };
    let grid = TimeGrid::new(5.0, 0.005)?;
    let prop = PropagatorTable::new(&model, grid)?;
    let ghat = |s: Complex64| {
        let gamma_hat = model.damping_laplace(s).expect("rational transform");
        1.0 / (model.mass * (s * s + 2.0 * s * gamma_hat + model.omega * model.omega))
    };
    println!("{:>5} {:>15} {:>15} {:>10}", "t", "g (Volterra)", "g (Talbot)", "diff");
    for t in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let i = grid.index(t)?;
        let oracle = talbot(ghat, t, 32);
        println!("{t:>5.1} {:>15.10} {oracle:>15.10} {:>10.2e}", prop.g[i], prop.g[i] - oracle);
    }
    let i = grid.index(1.0)?;
    println!("Phi(1) =\n{}", prop.phi[i]);
    let rel = phi_rel(&prop, 0.5, 1.0)?;
    println!("Phi(0.5, 1) = Phi(0.5) Phi(1)^-1 =\n{}", rel.matrix);
    Ok(())
}
