//! Langevin ensemble with colored noise as an independent check of the
//! bath-induced covariance.

use qbm::bath::{Family, KernelTable, SpectralModel};
use qbm::covariance::CovarianceTable;
use qbm::grid::TimeGrid;
use qbm::oracle::{run_ensemble, InitialState, Potential};
use qbm::propagator::{PropagatorTable, Vec2};

fn main() -> qbm::Result<()> {
    let model = SpectralModel {
        family: Family::OhmicLorentzCutoff,
        gamma0: 0.2,
        cutoff: 10.0,
        temperature: 0.5,
        mass: 1.0,
        omega: 2.0,
    };
    let grid = TimeGrid::new(2.0, 0.01)?;
    let kernels = KernelTable::build(&model, grid)?;
    let prop = PropagatorTable::new(&model, grid)?;
    let cov = CovarianceTable::build(&prop, &kernels)?;
    let n = 20_000;
    let stats = run_ensemble(&kernels, &Potential::harmonic(&model), &InitialState::point(Vec2::zeros()), n, 1, None, &[])?;
    println!("{n} trajectories");
    println!("{:>4} {:>8} {:>11} {:>11} {:>7}", "t", "entry", "ensemble", "sigma_T", "z");
    for t in [0.5, 1.0, 2.0] {
        let i = grid.index(t)?;
        for (name, a, b) in [("xx", 0, 0), ("xp", 0, 1), ("pp", 1, 1)] {
            let (mc, se, exact) = (stats.cov[i][(a, b)], stats.cov_err[i][(a, b)], cov.equal_time(i)[(a, b)]);
            println!("{t:>4.1} {name:>8} {mc:>11.6} {exact:>11.6} {:>7.2}", (mc - exact) / se);
        }
    }
    Ok(())
}
