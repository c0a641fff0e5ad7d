//! Normal-ordered phase-space differential operators: products,
//! commutators and application to a sampled Wigner function.

use qbm::evolve::init_gaussian;
use qbm::opalg::PhaseOp;
use qbm::propagator::{Mat2, Vec2};

fn main() -> qbm::Result<()> {
    let (x, p, dx, dp) = (PhaseOp::x(), PhaseOp::p(), PhaseOp::dx(), PhaseOp::dp());
    println!("[dx, x] = {}", dx.commutator(&x)?.dump().trim());
    println!("p dp =\n{}", p.product(&dp)?.dump());
    let drift = dx.product(&p)? - dp.product(&x)?.scale(4.0);
    println!("L = dx p - 4 dp x; L^2 =\n{}", drift.pow(2)?.dump());

    let w = init_gaussian(Vec2::zeros(), Mat2::new(0.25, 0.0, 0.0, 1.0), (-4.0, 4.0), (-8.0, 8.0), 121, 121)?;
    let lw = drift.apply(&w, 4)?;
    println!("integral of L W = {:.2e} (generator conserves norm)", lw.integral());
    let round = PhaseOp::parse_dump(&drift.dump())?;
    println!("dump round trip gap = {:.1e}", round.max_difference(&drift));
    Ok(())
}
