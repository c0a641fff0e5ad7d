//! Time-local drift and diffusion of the zeroth-order master equation.

use qbm::bath::{Family, KernelTable, SpectralModel};
use qbm::covariance::CovarianceTable;
use qbm::grid::TimeGrid;
use qbm::master::MasterTable;
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
    let prop = PropagatorTable::new(&model, grid)?;
    let cov = CovarianceTable::build(&prop, &KernelTable::build(&model, grid)?)?;
    let master = MasterTable::build(&prop, &cov)?;
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "t", "H_px", "H_pp", "D_xp", "D_pp");
    for t in [0.0, 0.1, 0.5, 1.0, 2.0, 3.0] {
        let i = grid.index(t)?;
        let (h, d) = (master.h[i], master.d[i]);
        println!("{t:>5.1} {:>10.5} {:>10.5} {:>10.5} {:>10.5}", h[(1, 0)], h[(1, 1)], d[(0, 1)], d[(1, 1)]);
    }
    let mut loop_residual = 0.0f64;
    for i in 1..grid.len() {
        let r = (prop.phidot[i] + master.h[i] * prop.phi[i]).norm() / prop.phidot[i].norm();
        loop_residual = loop_residual.max(r);
    }
    println!("max |dPhi/dt + H Phi| / |dPhi/dt| = {loop_residual:.2e}");
    println!("L0(1) = {}", master.l0(grid.index(1.0)?).dump().trim().replace('\n', " "));
    Ok(())
}
