//! Wigner-function evolution under the zeroth-order generator, compared with
//! the Gaussian moment equations.

use qbm::bath::{Family, KernelTable, SpectralModel};
use qbm::covariance::CovarianceTable;
use qbm::evolve::{cfl_bound, evolve, gaussian_moments, gaussian_window, init_gaussian};
use qbm::grid::TimeGrid;
use qbm::master::MasterTable;
use qbm::propagator::{Mat2, PropagatorTable, Vec2};

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
    let prop = PropagatorTable::new(&model, grid)?;
    let cov = CovarianceTable::build(&prop, &KernelTable::build(&model, grid)?)?;
    let master = MasterTable::build(&prop, &cov)?;

    let (mean, cov0) = (Vec2::new(1.0, 0.0), Mat2::new(0.25, 0.0, 0.0, 1.0));
    let report_dt = 0.1;
    let oracle = gaussian_moments(mean, cov0, 0.0, 0.001, 2000, |t| master.coefficients_at(t));
    let ((xl, xh), (pl, ph)) = gaussian_window(Vec2::zeros(), Mat2::new(1.0, 0.0, 0.0, 4.0), 8.0);
    let w = init_gaussian(mean, cov0, (xl, xh), (pl, ph), 101, 101)?;
    let bound = cfl_bound(&w, &master.l0_at(0.0)).min(cfl_bound(&w, &master.l0_at(2.0)));
    let substeps = (report_dt / (0.5 * bound)).ceil() as usize;
    println!("{:>4} {:>12} {:>10} {:>10} {:>10}", "t", "norm", "<x>", "cov_xx", "ode cov_xx");
    let (w, _) = evolve(w, 2.0, report_dt, substeps, 4, |t| Ok(master.l0_at(t)), |k, w| {
        let (m, c) = w.moments();
        let (_, _, oc) = oracle[k * 100];
        println!("{:>4.1} {:>12.9} {:>10.5} {:>10.5} {:>10.5}", w.time, w.integral(), m[0], c[(0, 0)], oc[(0, 0)]);
        Ok(())
    })?;
    if let Some(msg) = w.window_warning() {
        println!("{msg}");
    }
    Ok(())
}
