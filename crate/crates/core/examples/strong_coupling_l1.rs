//! First-order correction to the master equation for a cubic force at strong
//! coupling, and the two-time operator it integrates.

use qbm::bath::{Family, KernelTable, SpectralModel};
use qbm::covariance::CovarianceTable;
use qbm::grid::TimeGrid;
use qbm::master::{build_l1_series, two_time_operator_idx, ForcingSpec, MasterTable};
use qbm::propagator::PropagatorTable;

fn main() -> qbm::Result<()> {
    let model = SpectralModel {
        family: Family::OhmicLorentzCutoff,
        gamma0: 2.0,
        cutoff: 10.0,
        temperature: 0.5,
        mass: 1.0,
        omega: 2.0,
    };
    let grid = TimeGrid::new(1.0, 0.01)?;
    let prop = PropagatorTable::new(&model, grid)?;
    let cov = CovarianceTable::build(&prop, &KernelTable::build(&model, grid)?)?;
    let master = MasterTable::build(&prop, &cov)?;
    let spec = ForcingSpec::cubic(grid, |_| 0.05);

    let (tau, t) = (grid.index(0.5)?, grid.index(1.0)?);
    println!("two-time operator at (0.5, 1):\n{}", two_time_operator_idx(&spec, &prop, &cov, tau, t)?.dump());
    let at: Vec<usize> = [0.25, 0.5, 1.0].iter().map(|&s| grid.index(s)).collect::<qbm::Result<_>>()?;
    for (op, &k) in build_l1_series(&spec, &prop, &cov, &master, &at)?.iter().zip(&at) {
        println!("L1({}) with {} monomials:\n{}", grid.time(k), op.len(), op.dump());
    }
    Ok(())
}
