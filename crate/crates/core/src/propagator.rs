//! Green's function of the linear Langevin equation with memory and the
//! phase-space propagators built from it.
//!
//! The Green's function solves
//! `m g̈ + mω² g + 2m ∫₀ᵗ γ(t−u) ġ(u) du = 0`, `g(0) = 0`, `ġ(0) = 1/m`,
//! i.e. `ĝ(s) = (1/m) / (s² + ω² + 2sγ̂(s))`. It is integrated with the
//! implicit trapezoid rule (trapezoidal convolution on the memory term) on
//! three nested grids and Richardson-extrapolated, which leaves an `O(dt⁶)`
//! error. The local family is solved in closed form.

use nalgebra::{Matrix2, Vector2};

use crate::bath::{damping_kernel, damping_kernel_derivative, SpectralModel};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Condition number above which `Φ(t)` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct PropagatorTable {
    pub model: SpectralModel,
    pub grid: TimeGrid,
    pub g: Vec<f64>,
    pub gdot: Vec<f64>,
    pub gddot: Vec<f64>,
    /// Third derivative, from the differentiated integral equation.
    pub gdddot: Vec<f64>,
    pub phi: Vec<Mat2>,
    pub phidot: Vec<Mat2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePropagator {
    pub source: f64,
    pub target: f64,
    /// `Φ(target) Φ(source)⁻¹`.
    pub matrix: Mat2,
}

/// Green's function and its derivatives on `grid` (`phi` left empty).
pub fn greens_function(model: &SpectralModel, grid: TimeGrid) -> Result<PropagatorTable> {
    model.validate()?;
    let rate = if model.is_local() {
        model.omega.max(model.gamma0)
    } else {
        model.omega.max(model.gamma0).max(model.cutoff)
    };
    let product = grid.dt * rate;
    if product > 0.1 {
        return Err(Error::StepSize {
            dt: grid.dt,
            rate,
            product,
            limit: 0.1,
        });
    }
    let (g, gdot, gddot, gdddot) = if model.is_local() {
        local_closed_form(model, grid)
    } else {
        volterra_extrapolated(model, grid)?
    };
    Ok(PropagatorTable {
        model: *model,
        grid,
        g,
        gdot,
        gddot,
        gdddot,
        phi: vec![],
        phidot: vec![],
    })
}

/// Fills `Φ = [[mġ, g], [m²g̈, mġ]]` and `Φ̇` and checks `det Φ > 0`.
///
/// For the local family the initial slip is dropped: `Φ(t) = exp(−𝓗t)` with
/// constant `𝓗`, which shifts the first column by `2γ₀` times the second.
pub fn build_phi(mut table: PropagatorTable) -> Result<PropagatorTable> {
    let m = table.model.mass;
    let c = if table.model.is_local() { 2.0 * table.model.gamma0 } else { 0.0 };
    let n = table.g.len();
    table.phi = (0..n)
        .map(|i| {
            let (g, gd, gdd) = (table.g[i], table.gdot[i], table.gddot[i]);
            Mat2::new(m * (gd + c * g), g, m * m * (gdd + c * gd), m * gd)
        })
        .collect();
    table.phidot = (0..n)
        .map(|i| {
            let (gd, gdd, gddd) = (table.gdot[i], table.gddot[i], table.gdddot[i]);
            Mat2::new(m * (gdd + c * gd), gd, m * m * (gddd + c * gdd), m * gdd)
        })
        .collect();
    for (i, p) in table.phi.iter().enumerate() {
        if !(p.determinant() > 0.0) {
            return Err(Error::SingularPropagator {
                time: table.grid.time(i),
                condition: condition_number(p),
            });
        }
    }
    Ok(table)
}

impl PropagatorTable {
    pub fn new(model: &SpectralModel, grid: TimeGrid) -> Result<Self> {
        build_phi(greens_function(model, grid)?)
    }

    pub fn phi_at(&self, i: usize) -> Mat2 {
        self.phi[i]
    }

    /// `Φ(τ_i) Φ(t_j)⁻¹` by grid index.
    pub fn phi_rel_idx(&self, target: usize, source: usize) -> Result<Mat2> {
        if target == source {
            return Ok(Mat2::identity());
        }
        Ok(self.phi[target] * self.inverse_idx(source)?)
    }

    pub fn inverse_idx(&self, i: usize) -> Result<Mat2> {
        let p = self.phi[i];
        let cond = condition_number(&p);
        if !(cond <= SINGULAR_CONDITION) {
            return Err(Error::SingularPropagator {
                time: self.grid.time(i),
                condition: cond,
            });
        }
        p.try_inverse().ok_or(Error::SingularPropagator {
            time: self.grid.time(i),
            condition: cond,
        })
    }

    /// Final-value propagator `θ(τ−τ′)Φ(τ−τ′) − Φ(τ,t)Φ(t−τ′)` by grid index,
    /// with `θ(0) = 1`.
    pub fn phi_final_idx(&self, tau: usize, tau_p: usize, t: usize) -> Result<Mat2> {
        let retarded = if tau >= tau_p { self.phi[tau - tau_p] } else { Mat2::zeros() };
        Ok(retarded - self.phi_rel_idx(tau, t)? * self.phi[t - tau_p])
    }

    /// `u(t_i) = Φ(t_i) p̂`, the response to a unit momentum kick.
    pub fn kick_response(&self, i: usize) -> Vec2 {
        self.phi[i].column(1).into()
    }

    pub fn kick_response_rate(&self, i: usize) -> Vec2 {
        self.phidot[i].column(1).into()
    }
}

/// `Φ(τ,t) = Φ(τ)Φ(t)⁻¹`.
pub fn phi_rel(table: &PropagatorTable, tau: f64, t: f64) -> Result<RelativePropagator> {
    let i = table.grid.index(tau)?;
    let j = table.grid.index(t)?;
    Ok(RelativePropagator {
        source: t,
        target: tau,
        matrix: table.phi_rel_idx(i, j)?,
    })
}

/// Final-value propagator `Φ_f(τ, τ′)` for final time `t`.
pub fn phi_final(table: &PropagatorTable, tau: f64, tau_p: f64, t: f64) -> Result<Mat2> {
    let (i, k, j) = (table.grid.index(tau)?, table.grid.index(tau_p)?, table.grid.index(t)?);
    if i > j || k > j {
        return Err(Error::param("phi_final", "requires 0 <= tau, tau' <= t"));
    }
    table.phi_final_idx(i, k, j)
}

pub fn condition_number(a: &Mat2) -> f64 {
    let fro2 = a.norm_squared();
    let det = a.determinant().abs();
    if det == 0.0 {
        return f64::INFINITY;
    }
    // σ₁σ₂ = |det|, σ₁² + σ₂² = ‖A‖_F²
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    let s1 = ((fro2 + disc) / 2.0).sqrt();
    let s2 = det / s1;
    s1 / s2
}

fn local_closed_form(model: &SpectralModel, grid: TimeGrid) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, w, g0) = (model.mass, model.omega, model.gamma0);
    let disc = w * w - g0 * g0;
    let sc = |t: f64| -> (f64, f64) {
        if disc.abs() < 1e-12 * (w * w).max(1e-300) {
            (t, 1.0)
        } else if disc > 0.0 {
            let o = disc.sqrt();
            ((o * t).sin() / o, (o * t).cos())
        } else {
            let k = (-disc).sqrt();
            ((k * t).sinh() / k, (k * t).cosh())
        }
    };
    let n = grid.len();
    let (mut g, mut gd, mut gdd, mut gddd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let t = grid.time(i);
        let (s, c) = sc(t);
        let e = (-g0 * t).exp();
        g[i] = e * s / m;
        gd[i] = e * (c - g0 * s) / m;
        gdd[i] = -2.0 * g0 * gd[i] - w * w * g[i];
        gddd[i] = -2.0 * g0 * gdd[i] - w * w * gd[i];
    }
    (g, gd, gdd, gddd)
}

/// One trapezoid solve; returns `(g, h, I, J)` with `h = mġ`,
/// `I = ∫γ(t−u)h(u)du`, `J = ∫γ′(t−u)h(u)du`.
fn volterra_trapezoid(model: &SpectralModel, dt: f64, steps: usize) -> Result<[Vec<f64>; 4]> {
    let m = model.mass;
    let w2 = model.omega * model.omega;
    let n = steps + 1;
    let kernel: Vec<f64> = (0..n)
        .map(|j| damping_kernel(model, j as f64 * dt))
        .collect::<Result<_>>()?;
    let dkernel: Vec<f64> = (0..n)
        .map(|j| damping_kernel_derivative(model, j as f64 * dt))
        .collect::<Result<_>>()?;
    let (mut g, mut h, mut mem, mut dmem) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    h[0] = 1.0;
    let a = dt / (2.0 * m);
    let b = 0.5 * dt * m * w2;
    let c = 1.0 + 0.5 * dt * dt * kernel[0];
    for k in 1..n {
        let mut hist = 0.5 * kernel[k] * h[0];
        let mut dhist = 0.5 * dkernel[k] * h[0];
        for j in 1..k {
            hist += kernel[k - j] * h[j];
            dhist += dkernel[k - j] * h[j];
        }
        hist *= dt;
        dhist *= dt;
        let f_prev = m * w2 * g[k - 1] + 2.0 * mem[k - 1];
        let r1 = g[k - 1] + a * h[k - 1];
        let r2 = h[k - 1] - 0.5 * dt * f_prev - dt * hist;
        let hk = (r2 - b * r1) / (c + a * b);
        if !hk.is_finite() {
            return Err(Error::Volterra { step: k });
        }
        h[k] = hk;
        g[k] = r1 + a * hk;
        mem[k] = hist + 0.5 * dt * kernel[0] * hk;
        dmem[k] = dhist + 0.5 * dt * dkernel[0] * hk;
    }
    Ok([g, h, mem, dmem])
}

type Derivs = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn volterra_extrapolated(model: &SpectralModel, grid: TimeGrid) -> Result<Derivs> {
    let levels: Vec<[Vec<f64>; 4]> = (0..3)
        .map(|r| volterra_trapezoid(model, grid.dt / (1 << r) as f64, grid.steps << r))
        .collect::<Result<_>>()?;
    let n = grid.len();
    let mut out: [Vec<f64>; 4] = Default::default();
    for (q, slot) in out.iter_mut().enumerate() {
        *slot = (0..n)
            .map(|i| {
                let a0 = levels[0][q][i];
                let a1 = levels[1][q][2 * i];
                let a2 = levels[2][q][4 * i];
                let r0 = (4.0 * a1 - a0) / 3.0;
                let r1 = (4.0 * a2 - a1) / 3.0;
                (16.0 * r1 - r0) / 15.0
            })
            .collect();
    }
    let [g, h, mem, dmem] = out;
    let m = model.mass;
    let w2 = model.omega * model.omega;
    let g0 = damping_kernel(model, 0.0)?;
    let gdot: Vec<f64> = h.iter().map(|h| h / m).collect();
    let gddot: Vec<f64> = (0..n).map(|i| (-m * w2 * g[i] - 2.0 * mem[i]) / m).collect();
    // ḧ = −ω²h − 2(γ(0)h + J)
    let gdddot: Vec<f64> = (0..n)
        .map(|i| (-w2 * h[i] - 2.0 * (g0 * h[i] + dmem[i])) / m)
        .collect();
    Ok((g, gdot, gddot, gdddot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::Family;
    use crate::laplace::talbot;
    use num_complex::Complex64;

    fn model(family: Family, gamma0: f64) -> SpectralModel {
        SpectralModel {
            family,
            gamma0,
            cutoff: 10.0,
            temperature: 1.0,
            mass: 1.0,
            omega: 2.0,
        }
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(5.0, 0.005).unwrap()
    }

    #[test]
    fn undamped_oscillator() {
        let p = PropagatorTable::new(&model(Family::OhmicLorentzCutoff, 0.0), grid()).unwrap();
        let err = grid()
            .times()
            .zip(&p.g)
            .map(|(t, g)| (g - (2.0 * t).sin() / 2.0).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        for (i, t) in grid().times().enumerate().step_by(97) {
            let w = 2.0;
            let expect = Mat2::new((w * t).cos(), (w * t).sin() / w, -w * (w * t).sin(), (w * t).cos());
            assert!((p.phi[i] - expect).abs().max() < 1e-8);
        }
    }

    #[test]
    fn initial_conditions() {
        let p = PropagatorTable::new(&model(Family::OhmicLorentzCutoff, 2.0), grid()).unwrap();
        assert_eq!(p.g[0], 0.0);
        assert!((p.gdot[0] - 1.0).abs() < 1e-14);
        assert!((p.phi[0] - Mat2::identity()).abs().max() < 1e-14);
    }

    #[test]
    fn local_family_closed_form_and_liouville() {
        let m = SpectralModel { family: Family::Local, gamma0: 0.5, ..model(Family::Local, 0.5) };
        let p = PropagatorTable::new(&m, grid()).unwrap();
        let om = (4.0f64 - 0.25).sqrt();
        for (i, t) in grid().times().enumerate().step_by(50) {
            let g = (-0.5 * t).exp() * (om * t).sin() / om;
            assert!((p.g[i] - g).abs() < 1e-13);
            let det = p.phi[i].determinant();
            assert!((det - (-2.0 * 0.5 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_laplace_inversion() {
        let m = model(Family::OhmicLorentzCutoff, 2.0);
        let p = PropagatorTable::new(&m, grid()).unwrap();
        let ghat = |s: Complex64| {
            let gh = m.damping_laplace(s).unwrap();
            (1.0 / m.mass) / (s * s + m.omega * m.omega + 2.0 * s * gh)
        };
        for k in 1..=10 {
            let i = k * 100;
            let t = grid().time(i);
            let oracle = talbot(ghat, t, 32);
            let scale = p.g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!((p.g[i] - oracle).abs() < 1e-6 * scale, "t={t}: {} vs {oracle}", p.g[i]);
        }
    }

    #[test]
    fn self_convergent_under_refinement() {
        let m = model(Family::OhmicExpCutoff, 0.7);
        let g = grid();
        let coarse = greens_function(&m, g).unwrap();
        let fine = greens_function(&m, g.refined()).unwrap();
        let err = (0..g.len())
            .map(|i| (coarse.g[i] - fine.g[2 * i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn third_derivative_consistent_with_finite_differences() {
        let m = model(Family::OhmicLorentzCutoff, 2.0);
        let p = PropagatorTable::new(&m, grid()).unwrap();
        let dt = grid().dt;
        for i in (5..900).step_by(111) {
            let fd = (p.gddot[i + 1] - p.gddot[i - 1]) / (2.0 * dt);
            assert!((fd - p.gdddot[i]).abs() < 1e-3 * p.gdddot[i].abs().max(1.0));
        }
    }

    #[test]
    fn step_size_guard() {
        let m = model(Family::OhmicLorentzCutoff, 2.0);
        let g = TimeGrid::new(1.0, 0.02).unwrap();
        assert!(matches!(greens_function(&m, g), Err(Error::StepSize { .. })));
    }

    #[test]
    fn relative_and_final_value_propagators() {
        let m = model(Family::OhmicLorentzCutoff, 2.0);
        let p = PropagatorTable::new(&m, grid()).unwrap();
        let id = Mat2::identity();
        assert!((phi_rel(&p, 1.0, 1.0).unwrap().matrix - id).abs().max() < 1e-12);
        let inv0 = phi_rel(&p, 0.0, 1.3).unwrap().matrix;
        assert!((inv0 * p.phi[260] - id).abs().max() < 1e-10);
        let (a, b, c) = (p.phi_rel_idx(300, 100).unwrap(), p.phi_rel_idx(300, 700).unwrap(), p.phi_rel_idx(700, 100).unwrap());
        assert!((a - b * c).abs().max() < 1e-8);
        // τ = t → 0 ; τ′ = t → −Φ(τ,t)
        assert!(phi_final(&p, 2.0, 0.5, 2.0).unwrap().abs().max() < 1e-12);
        let f = phi_final(&p, 0.5, 2.0, 2.0).unwrap();
        assert!((f + phi_rel(&p, 0.5, 2.0).unwrap().matrix).abs().max() < 1e-12);
    }

    #[test]
    fn local_propagator_is_a_semigroup() {
        let m = model(Family::Local, 0.5);
        let p = PropagatorTable::new(&m, grid()).unwrap();
        assert!((p.phi[0] - Mat2::identity()).abs().max() < 1e-14);
        let h = -p.phidot[0];
        for i in (0..grid().len()).step_by(77) {
            assert!((p.phidot[i] + h * p.phi[i]).abs().max() < 1e-12);
        }
        let a = p.phi[300] * p.phi[200];
        assert!((a - p.phi[500]).abs().max() < 1e-12);
    }

    #[test]
    fn local_final_value_is_advanced() {
        final_value_advanced(model(Family::Local, 0.5));
    }

    #[test]
    fn frictionless_final_value_is_advanced() {
        final_value_advanced(model(Family::OhmicLorentzCutoff, 0.0));
    }

    fn final_value_advanced(m: SpectralModel) {
        let p = PropagatorTable::new(&m, grid()).unwrap();
        let t = 800;
        for &(tau, taup) in &[(100, 300), (300, 100), (500, 500), (0, 799), (700, 20)] {
            let f = p.phi_final_idx(tau, taup, t).unwrap();
            let adv = if taup > tau {
                // Φ(τ−τ′) for τ < τ′ is Φ(τ′−τ)⁻¹
                -p.inverse_idx(taup - tau).unwrap()
            } else {
                Mat2::zeros()
            };
            assert!((f - adv).abs().max() < 1e-9, "({tau},{taup})");
        }
    }
}
