//! Bath-induced phase-space covariance and its two-time structure.

use qbm::bath::{Family, KernelTable, SpectralModel};
use qbm::covariance::CovarianceTable;
use qbm::grid::TimeGrid;
use qbm::propagator::PropagatorTable;

fn main() -> qbm::Result<()> {
    let model = SpectralModel {
        family: Family::OhmicLorentzCutoff,
        gamma0: 0.2,
        cutoff: 10.0,
        temperature: 0.5,
        mass: 1.0,
        omega: 2.0,
    };
    let grid = TimeGrid::new(3.0, 0.01)?;
    let kernels = KernelTable::build(&model, grid)?;
    let prop = PropagatorTable::new(&model, grid)?;
    let cov = CovarianceTable::build(&prop, &kernels)?;
    println!("{:>5} {:>12} {:>12} {:>12}", "t", "s_xx", "s_xp", "s_pp");
    for t in [0.5, 1.0, 2.0, 3.0] {
        let s = cov.equal_time(grid.index(t)?);
        println!("{t:>5.1} {:>12.6} {:>12.6} {:>12.6}", s[(0, 0)], s[(0, 1)], s[(1, 1)]);
    }
    let (tau, t) = (grid.index(1.0)?, grid.index(2.0)?);
    println!("sigma_T(1, 2) =\n{}", cov.sigma(tau, t));
    println!("Delta1 coefficient at (1, 2): {}", cov.delta1_idx(&prop, tau, t)?.transpose());
    println!("s(1, 2) = {:.6}", cov.s_idx(&prop, tau, t)?);
    Ok(())
}
