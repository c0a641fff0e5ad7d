//! Bath spectral models, the damping kernel and the thermal noise kernel.
//!
//! Conventions: ħ = k_B = 1, `γ̃(ε) = ∫ dt e^{-iεt} γ(t)` and the noise
//! spectrum is `ν̃(ε) = m γ̃(ε) ε coth(ε / 2T)`.
//!
//! | family               | `γ̃(ε)`                 | `γ(t)`                      |
//! |----------------------|-------------------------|-----------------------------|
//! | `Local`              | `2γ₀`                   | `2γ₀ δ(t)` (symbolic)       |
//! | `OhmicLorentzCutoff` | `γ₀Λ²/(Λ²+ε²)`          | `(γ₀Λ/2) e^{-Λ|t|}`         |
//! | `OhmicExpCutoff`     | `γ₀ e^{-|ε|/Λ}`         | `γ₀Λ / (π(1 + Λ²t²))`       |
//!
//! The local kernel is normalised so that the Langevin friction is `2mγ₀ẋ`,
//! i.e. `γ̂(s) = γ₀`. Its noise is taken in the white (classical) form
//! `ν(t) = 2mTγ̃(0) δ(t)`; the quantum vacuum part of a cutoff-free bath is
//! UV divergent.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::quad::{integrate, integrate_panels, integrate_partition, Tolerance};
use crate::special::cosine_lorentz_first_moment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Local,
    OhmicLorentzCutoff,
    OhmicExpCutoff,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Local => "local",
            Family::OhmicLorentzCutoff => "ohmic-lorentz",
            Family::OhmicExpCutoff => "ohmic-exp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub family: Family,
    pub gamma0: f64,
    pub cutoff: f64,
    pub temperature: f64,
    pub mass: f64,
    /// Renormalised system frequency.
    pub omega: f64,
}

impl SpectralModel {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::param(field, why))
            }
        };
        check(self.gamma0 >= 0.0 && self.gamma0.is_finite(), "model.gamma0", "must be >= 0")?;
        check(
            self.family == Family::Local || (self.cutoff > 0.0 && self.cutoff.is_finite()),
            "model.cutoff",
            "must be > 0",
        )?;
        check(
            self.temperature >= 0.0 && self.temperature.is_finite(),
            "model.temperature",
            "must be >= 0",
        )?;
        check(self.mass > 0.0 && self.mass.is_finite(), "model.mass", "must be > 0")?;
        check(self.omega >= 0.0 && self.omega.is_finite(), "model.omega", "must be >= 0")?;
        Ok(())
    }

    pub fn is_local(&self) -> bool {
        self.family == Family::Local
    }

    /// Fourier transform `γ̃(ε)` of the damping kernel.
    pub fn damping_spectrum(&self, eps: f64) -> f64 {
        let (g, l) = (self.gamma0, self.cutoff);
        match self.family {
            Family::Local => 2.0 * g,
            Family::OhmicLorentzCutoff => g * l * l / (l * l + eps * eps),
            Family::OhmicExpCutoff => g * (-eps.abs() / l).exp(),
        }
    }

    /// Laplace transform `γ̂(s)`, where it has a closed form.
    pub fn damping_laplace(&self, s: Complex64) -> Option<Complex64> {
        let (g, l) = (self.gamma0, self.cutoff);
        match self.family {
            Family::Local => Some(Complex64::new(g, 0.0)),
            Family::OhmicLorentzCutoff => Some(g * l / (2.0 * (s + l))),
            Family::OhmicExpCutoff => None,
        }
    }

    /// Noise spectrum `ν̃(ε) = m γ̃(ε) ε coth(ε/2T)`.
    pub fn noise_spectrum(&self, eps: f64) -> f64 {
        self.mass * self.damping_spectrum(eps) * self.coth_factor(eps)
    }

    /// `ε coth(ε/2T)`, with the `ε → 0` limit `2T` and `|ε|` at `T = 0`.
    pub fn coth_factor(&self, eps: f64) -> f64 {
        let t = self.temperature;
        let e = eps.abs();
        if t == 0.0 {
            return e;
        }
        if e < 1e-8 * t.max(self.cutoff) {
            return 2.0 * t;
        }
        e / (e / (2.0 * t)).tanh()
    }

    /// `ε coth(ε/2T) − |ε| = 2ε n_B(ε)`.
    fn thermal_factor(&self, eps: f64) -> f64 {
        let t = self.temperature;
        if t == 0.0 {
            return 0.0;
        }
        let e = eps.abs();
        if e < 1e-8 * t.max(self.cutoff) {
            return 2.0 * t;
        }
        2.0 * e / (e / t).exp_m1()
    }

    /// Upper frequency beyond which the thermal integrand is below e^{-40}.
    fn thermal_range(&self) -> f64 {
        let t = self.temperature;
        match self.family {
            Family::OhmicExpCutoff => 40.0 / (1.0 / self.cutoff + 1.0 / t),
            _ => 40.0 * t,
        }
    }
}

/// Damping kernel `γ(t)` for `t ≥ 0`.
pub fn damping_kernel(model: &SpectralModel, t: f64) -> Result<f64> {
    let (g, l) = (model.gamma0, model.cutoff);
    let t = t.abs();
    match model.family {
        Family::Local => Err(Error::DeltaKernel),
        Family::OhmicLorentzCutoff => Ok(0.5 * g * l * (-l * t).exp()),
        Family::OhmicExpCutoff => Ok(g * l / (PI * (1.0 + l * l * t * t))),
    }
}

/// `dγ/dt` for `t ≥ 0` (right derivative at 0).
pub fn damping_kernel_derivative(model: &SpectralModel, t: f64) -> Result<f64> {
    let (g, l) = (model.gamma0, model.cutoff);
    match model.family {
        Family::Local => Err(Error::DeltaKernel),
        Family::OhmicLorentzCutoff => Ok(-0.5 * g * l * l * (-l * t).exp()),
        Family::OhmicExpCutoff => {
            let u = l * t;
            Ok(-2.0 * g * l * l * u / (PI * (1.0 + u * u).powi(2)))
        }
    }
}

/// `d²γ/dt²` and `d⁴γ/dt⁴` for `t > 0`.
fn damping_kernel_even_derivatives(model: &SpectralModel, t: f64) -> (f64, f64) {
    let (g, l) = (model.gamma0, model.cutoff);
    match model.family {
        Family::Local => (0.0, 0.0),
        Family::OhmicLorentzCutoff => {
            let k = 0.5 * g * l * (-l * t).exp();
            (l * l * k, l.powi(4) * k)
        }
        Family::OhmicExpCutoff => {
            let u = l * t;
            let q = 1.0 + u * u;
            let a = g * l / PI;
            let d2 = a * l * l * (6.0 * u * u - 2.0) / q.powi(3);
            let d4 = a * l.powi(4) * 24.0 * (5.0 * u.powi(4) - 10.0 * u * u + 1.0) / q.powi(5);
            (d2, d4)
        }
    }
}

/// Vacuum (`T = 0`) part `(m/π)∫₀^∞ γ̃(ε) ε cos(εt) dε`, closed form.
fn vacuum_noise(model: &SpectralModel, t: f64) -> f64 {
    let (m, g, l) = (model.mass, model.gamma0, model.cutoff);
    let t = t.abs();
    match model.family {
        Family::Local => f64::NAN,
        Family::OhmicLorentzCutoff => {
            if t == 0.0 {
                f64::INFINITY
            } else {
                m * g * l * l / PI * cosine_lorentz_first_moment(l * t)
            }
        }
        Family::OhmicExpCutoff => {
            let a = 1.0 / l;
            m * g / PI * (a * a - t * t) / (a * a + t * t).powi(2)
        }
    }
}

/// Thermal part `(m/π)∫₀^∞ γ̃(ε) 2ε n_B(ε) w(ε) cos(εt) dε` with window `w`.
fn thermal_noise(model: &SpectralModel, t: f64, window: impl Fn(f64) -> f64) -> Result<f64> {
    thermal_transform(model, t, |e| window(e) * (e * t).cos())
}

/// Thermal part with a general oscillatory factor `osc(ε)` in place of `cos(εt)`.
fn thermal_transform(model: &SpectralModel, t: f64, osc: impl Fn(f64) -> f64) -> Result<f64> {
    if model.temperature == 0.0 || model.gamma0 == 0.0 {
        return Ok(0.0);
    }
    let top = model.thermal_range();
    let panels = ((top * t.abs() / PI).ceil() as usize).max(8);
    let f = |e: f64| model.damping_spectrum(e) * model.thermal_factor(e) * osc(e);
    let q = integrate_panels(f, 0.0, top, panels, Tolerance::default())?;
    Ok(model.mass / PI * q.value)
}

/// Noise kernel `ν(t)` by the direct spectral route: closed-form vacuum part
/// plus oscillatory quadrature of the thermal part.
///
/// For the Lorentzian cutoff `ν` has an integrable logarithmic singularity at
/// `t = 0`, where `+∞` is returned.
pub fn noise_kernel(model: &SpectralModel, t: f64) -> Result<f64> {
    model.validate()?;
    if model.is_local() {
        return if model.temperature == 0.0 {
            Err(Error::UvDivergent)
        } else {
            Err(Error::DeltaKernel)
        };
    }
    Ok(vacuum_noise(model, t) + thermal_noise(model, t, |_| 1.0)?)
}

/// Noise kernel through the Matsubara expansion
/// `ε coth(ε/2T) = 2T + Σₙ 4Tε²/(ε² + νₙ²)`, `νₙ = 2πnT`, summed to
/// convergence with an asymptotic tail for the algebraic remainder.
/// Requires `T > 0` and `t > 0`.
pub fn noise_kernel_matsubara(model: &SpectralModel, t: f64) -> Result<f64> {
    model.validate()?;
    if model.is_local() {
        return Err(Error::DeltaKernel);
    }
    let temp = model.temperature;
    if temp <= 0.0 {
        return Err(Error::param("model.temperature", "Matsubara route needs T > 0"));
    }
    let t = t.abs();
    if t <= 0.0 {
        return Err(Error::param("t", "Matsubara route needs t > 0"));
    }
    let (g, l) = (model.gamma0, model.cutoff);
    let step = 2.0 * PI * temp;
    let term = |n: usize| -> Result<f64> {
        let vn = step * n as f64;
        Ok(match model.family {
            Family::OhmicLorentzCutoff => {
                let diff = l * l - vn * vn;
                let shape = if diff.abs() < 1e-9 * l * l {
                    // removable singularity at νₙ = Λ
                    (1.0 - l * t) * (-l * t).exp() / (2.0 * l) * l
                } else {
                    (l * (-l * t).exp() - vn * (-vn * t).exp()) / diff * l
                };
                0.5 * g * l * shape
            }
            Family::OhmicExpCutoff => {
                let f = |e: f64| g * (-e / l).exp() * e * e / (e * e + vn * vn) * (e * t).cos();
                let top = 40.0 * l;
                let panels = ((top * t / PI).ceil() as usize).max(4);
                integrate_panels(f, 0.0, top, panels, Tolerance { abs: 1e-14, rel: 1e-11, ..Default::default() })?
                    .value
                    / PI
            }
            Family::Local => unreachable!(),
        })
    };
    let scale = l.max(1.0 / t);
    let mut terms = ((60.0 * scale / step).ceil() as usize).max(50);
    if model.family == Family::OhmicExpCutoff {
        terms = terms.min(4000);
    }
    let mut sum = 0.0;
    for n in 1..=terms {
        sum += term(n)?;
    }
    // Σ_{n>N} 1/n² and Σ_{n>N} 1/n⁴
    let nf = terms as f64;
    let tail2 = 1.0 / nf - 0.5 / (nf * nf) + 1.0 / (6.0 * nf.powi(3)) - 1.0 / (30.0 * nf.powi(5));
    let tail4 = 1.0 / (3.0 * nf.powi(3)) - 0.5 / nf.powi(4) + 1.0 / (3.0 * nf.powi(5));
    let (d2, d4) = damping_kernel_even_derivatives(model, t);
    sum += -d2 * tail2 / step.powi(2) - d4 * tail4 / step.powi(4);
    let m = model.mass;
    Ok(2.0 * m * temp * damping_kernel(model, t)? + 4.0 * m * temp * sum)
}

/// Noise kernel averaged against the hat function of half-width `dt` about
/// `t`: the covariance of box-averaged noise on cells of width `dt` whose
/// centres are `t` apart. Finite even where `ν` is logarithmically singular.
pub fn averaged_noise_kernel(model: &SpectralModel, t: f64, dt: f64) -> Result<f64> {
    model.validate()?;
    if model.is_local() {
        if model.temperature == 0.0 {
            return Err(Error::UvDivergent);
        }
        let white = 2.0 * model.mass * model.temperature * model.damping_spectrum(0.0);
        return Ok(if t.abs() < 0.5 * dt { white / dt } else { 0.0 });
    }
    let t = t.abs();
    let hat = |s: f64| (1.0 - (s - t).abs() / dt).max(0.0) / dt;
    let tol = Tolerance { abs: 1e-12, rel: 1e-11, ..Default::default() };
    let vac = if t < 0.5 * dt {
        // symmetric about 0: fold onto [0, dt]
        2.0 * integrate(|s| hat(s) * vacuum_noise(model, s), 0.0, dt, tol)?.value
    } else {
        let lo = t - dt;
        let parts: Vec<f64> = if lo.abs() < 1e-12 * dt {
            vec![0.0, t, t + dt]
        } else {
            vec![lo, t, t + dt]
        };
        integrate_partition(|s| hat(s) * vacuum_noise(model, s), &parts, tol)?.value
    };
    // hat average ↔ sinc² window in frequency
    let window = |e: f64| {
        let x = 0.5 * e * dt;
        if x.abs() < 1e-6 {
            1.0 - x * x / 3.0
        } else {
            (x.sin() / x).powi(2)
        }
    };
    Ok(vac + thermal_noise(model, t, window)?)
}

/// `∫₀¹ e^{ixy} yⁿ dy` for `n = 0..3`.
fn power_phase_moments(x: f64) -> [Complex64; 4] {
    let mut out = [Complex64::new(0.0, 0.0); 4];
    if x.abs() < 1.0 {
        // Σ_p (ix)^p / (p! (p+n+1))
        let mut term = Complex64::new(1.0, 0.0);
        for p in 0..30 {
            for (n, o) in out.iter_mut().enumerate() {
                *o += term / (p + n + 1) as f64;
            }
            term *= Complex64::new(0.0, x) / (p + 1) as f64;
        }
    } else {
        let ix = Complex64::new(0.0, x);
        let e = ix.exp();
        out[0] = (e - 1.0) / ix;
        for n in 1..4 {
            out[n] = (e - n as f64 * out[n - 1]) / ix;
        }
    }
    out
}

/// Cell moments `∫ ν(s) ((s − t)/dt)ⁿ ds` over `[t, t + dt]`, `t ≥ 0`, `n = 0..3`.
pub fn noise_cell_moments(model: &SpectralModel, t: f64, dt: f64) -> Result<[f64; 4]> {
    model.validate()?;
    if model.is_local() {
        return Err(Error::DeltaKernel);
    }
    let tol = Tolerance { abs: 1e-13, rel: 1e-12, ..Default::default() };
    let mut out = [0.0; 4];
    for (n, o) in out.iter_mut().enumerate() {
        let vac = integrate(|r| (r / dt).powi(n as i32) * vacuum_noise(model, t + r), 0.0, dt, tol)?.value;
        let osc = |e: f64| {
            let m = power_phase_moments(e * dt)[n];
            dt * ((e * t).cos() * m.re - (e * t).sin() * m.im)
        };
        *o = vac + thermal_transform(model, t, osc)?;
    }
    Ok(out)
}

/// Damping and noise kernels tabulated on a uniform grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTable {
    pub model: SpectralModel,
    pub grid: TimeGrid,
    /// `γ(t_i)`; empty for the local family.
    pub gamma: Vec<f64>,
    /// Weight of the symbolic delta for the local family (`γ̂(s) = weight`).
    pub local_weight: Option<f64>,
    /// `ν(t_i)`; empty for the local family. May hold `+∞` at `t = 0`.
    pub nu: Vec<f64>,
    /// Hat-averaged noise covariance at lag `i` (always finite).
    pub nu_avg: Vec<f64>,
    /// Moments of `ν` over the cell `[t_i, t_{i+1}]`; empty for the local family.
    pub moments: Vec<[f64; 4]>,
    /// White-noise intensity for the local family.
    pub white: Option<f64>,
}

impl KernelTable {
    pub fn build(model: &SpectralModel, grid: TimeGrid) -> Result<Self> {
        model.validate()?;
        if model.is_local() {
            if model.temperature == 0.0 {
                return Err(Error::UvDivergent);
            }
            let white = 2.0 * model.mass * model.temperature * model.damping_spectrum(0.0);
            let mut nu_avg = vec![0.0; grid.len()];
            nu_avg[0] = white / grid.dt;
            return Ok(Self {
                model: *model,
                grid,
                gamma: vec![],
                local_weight: Some(model.gamma0),
                nu: vec![],
                nu_avg,
                moments: vec![],
                white: Some(white),
            });
        }
        let times: Vec<f64> = grid.times().collect();
        let gamma = times
            .iter()
            .map(|&t| damping_kernel(model, t))
            .collect::<Result<Vec<_>>>()?;
        let nu = times
            .par_iter()
            .map(|&t| noise_kernel(model, t))
            .collect::<Result<Vec<_>>>()?;
        // one spare cell past t_max for the widest half-hat correlation
        let moments = (0..=grid.len())
            .into_par_iter()
            .map(|i| noise_cell_moments(model, i as f64 * grid.dt, grid.dt))
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self {
            model: *model,
            grid,
            gamma,
            local_weight: None,
            nu,
            nu_avg: vec![],
            moments,
            white: None,
        };
        table.nu_avg = (0..grid.len() as isize)
            .map(|m| (table.single_weight(1, m) + table.single_weight(-1, m)) / grid.dt)
            .collect();
        Ok(table)
    }

    /// The same kernel on the grid of step `2·dt`, with cell moments merged
    /// pairwise from the fine cells. `None` for the local family or a grid
    /// with fewer than two steps.
    pub fn coarsened(&self) -> Result<Option<Self>> {
        if self.moments.is_empty() || self.grid.steps < 2 {
            return Ok(None);
        }
        let dt = self.grid.dt;
        let grid = TimeGrid {
            dt: 2.0 * dt,
            steps: self.grid.steps / 2,
        };
        let fine = |k: usize| -> Result<[f64; 4]> {
            match self.moments.get(k) {
                Some(m) => Ok(*m),
                None => noise_cell_moments(&self.model, k as f64 * dt, dt),
            }
        };
        let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
        let mut moments = Vec::with_capacity(grid.len() + 1);
        for k in 0..=grid.len() {
            // coarse y = y₁/2 on cell 2k and (y₂ + 1)/2 on cell 2k + 1
            let (a, b) = (fine(2 * k)?, fine(2 * k + 1)?);
            let mut m = [0.0; 4];
            for n in 0..4 {
                let shifted: f64 = (0..=n).map(|j| binom[n][j] * b[j]).sum();
                m[n] = (a[n] + shifted) / f64::powi(2.0, n as i32);
            }
            moments.push(m);
        }
        let mut table = Self {
            model: self.model,
            grid,
            gamma: self.gamma.iter().step_by(2).copied().collect(),
            local_weight: None,
            nu: self.nu.iter().step_by(2).copied().collect(),
            nu_avg: vec![],
            moments,
            white: None,
        };
        table.nu_avg = (0..grid.len() as isize)
            .map(|m| (table.single_weight(1, m) + table.single_weight(-1, m)) / grid.dt)
            .collect();
        Ok(Some(table))
    }

    /// Moments of `ν` over cell `k` (any sign, by evenness of `ν`).
    fn cell(&self, k: isize) -> [f64; 4] {
        if k >= 0 {
            return self.moments[k as usize];
        }
        // s ↦ −s maps cell k onto cell −k−1 with y ↦ 1 − y
        let m = self.moments[(-k - 1) as usize];
        [m[0], m[0] - m[1], m[0] - 2.0 * m[1] + m[2], m[0] - 3.0 * m[1] + 3.0 * m[2] - m[3]]
    }

    /// `∫ ν(m dt − r) h(r) dr` for the right (`side = 1`, support `[0, dt]`)
    /// or left (`side = −1`, support `[−dt, 0]`) half of the unit hat.
    pub fn single_weight(&self, side: i8, m: isize) -> f64 {
        if side > 0 {
            self.cell(m - 1)[1]
        } else {
            let c = self.cell(m);
            c[0] - c[1]
        }
    }

    /// `∫∫ h_σ(τ₁ − a dt) ν(τ₁ − τ₂) h_ρ(τ₂ − b dt) dτ₁ dτ₂` with `m = a − b`
    /// for half hats `σ, ρ ∈ {1, −1}` as in [`Self::single_weight`].
    pub fn pair_weight(&self, sigma: i8, rho: i8, m: isize) -> f64 {
        // correlation of the half hats: cubic in y on the cells [m−2, m+2]
        const S: f64 = 1.0 / 6.0;
        const T: f64 = 1.0 / 3.0;
        const Z: [f64; 4] = [0.0; 4];
        const K: [[[f64; 4]; 4]; 4] = [
            [Z, [0.0, 0.0, 0.5, -S], [T, -0.5, 0.0, S], Z],
            [Z, Z, [0.0, 1.0, -1.0, S], [S, -0.5, 0.5, -S]],
            [[0.0, 0.0, 0.0, S], [S, 0.5, -0.5, -S], Z, Z],
            [Z, [0.0, 0.0, 0.5, -S], [T, -0.5, 0.0, S], Z],
        ];
        let idx = match (sigma > 0, rho > 0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        let mut acc = 0.0;
        for (c, poly) in K[idx].iter().enumerate() {
            if poly.iter().all(|&q| q == 0.0) {
                continue;
            }
            let cell = self.cell(m + c as isize - 2);
            acc += poly.iter().zip(&cell).map(|(p, q)| p * q).sum::<f64>();
        }
        acc * self.grid.dt
    }

    /// Header line naming the model parameters, for text exports.
    pub fn describe(&self) -> String {
        describe_model(&self.model)
    }
}

pub fn describe_model(m: &SpectralModel) -> String {
    format!(
        "family={} gamma0={} cutoff={} temperature={} mass={} omega={}",
        m.family, m.gamma0, m.cutoff, m.temperature, m.mass, m.omega
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorentz(t: f64) -> SpectralModel {
        SpectralModel {
            family: Family::OhmicLorentzCutoff,
            gamma0: 1.0,
            cutoff: 5.0,
            temperature: t,
            mass: 1.0,
            omega: 2.0,
        }
    }

    fn expcut(t: f64) -> SpectralModel {
        SpectralModel {
            family: Family::OhmicExpCutoff,
            ..lorentz(t)
        }
    }

    /// Inverse Fourier transform by brute quadrature: (1/π)∫₀^∞ γ̃(ε) cos(εt) dε.
    fn inverse_fourier(model: &SpectralModel, t: f64) -> f64 {
        let top = 60.0 * model.cutoff;
        integrate_panels(
            |e| model.damping_spectrum(e) * (e * t).cos(),
            0.0,
            top,
            2000,
            Tolerance { abs: 1e-13, rel: 1e-12, ..Default::default() },
        )
        .unwrap()
        .value
            / PI
    }

    #[test]
    fn lorentz_kernel_decays_and_normalises() {
        let m = lorentz(1.0);
        assert!(damping_kernel(&m, 50.0).unwrap() < 1e-100);
        let q = integrate(|t| damping_kernel(&m, t).unwrap(), 0.0, 40.0, Tolerance::default()).unwrap();
        assert!((2.0 * q.value - m.gamma0).abs() < 1e-9);
    }

    #[test]
    fn exp_cutoff_kernel_matches_fourier_oracle() {
        let m = expcut(1.0);
        let oracle = inverse_fourier(&m, 0.3);
        let got = damping_kernel(&m, 0.3).unwrap();
        assert!((got - oracle).abs() < 1e-9 * got.abs(), "{got} vs {oracle}");
    }

    #[test]
    fn local_kernel_is_symbolic() {
        let m = SpectralModel { family: Family::Local, ..lorentz(1.0) };
        assert!(matches!(damping_kernel(&m, 0.1), Err(Error::DeltaKernel)));
        let m0 = SpectralModel { temperature: 0.0, ..m };
        assert!(matches!(noise_kernel(&m0, 0.1), Err(Error::UvDivergent)));
    }

    #[test]
    fn noise_kernel_is_even() {
        let m = lorentz(1.0);
        for &t in &[0.1, 0.7, 2.0] {
            let a = noise_kernel(&m, t).unwrap();
            let b = noise_kernel(&m, -t).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn matsubara_oracle_at_reference_point() {
        let m = lorentz(1.0);
        let direct = noise_kernel(&m, 0.2).unwrap();
        let series = noise_kernel_matsubara(&m, 0.2).unwrap();
        assert!((direct - series).abs() < 1e-7 * direct.abs(), "{direct} vs {series}");
    }

    #[test]
    fn exp_cutoff_routes_agree() {
        let m = expcut(1.0);
        for &t in &[0.05, 0.3, 1.0] {
            let direct = noise_kernel(&m, t).unwrap();
            let series = noise_kernel_matsubara(&m, t).unwrap();
            let scale = noise_kernel(&m, 0.0).unwrap().abs();
            assert!((direct - series).abs() < 1e-6 * scale, "t={t}: {direct} vs {series}");
        }
    }

    #[test]
    fn high_temperature_approaches_classical_fdr() {
        let m = lorentz(500.0);
        for &t in &[0.05, 0.2, 1.0] {
            let nu = noise_kernel(&m, t).unwrap();
            let classical = 2.0 * m.mass * m.temperature * damping_kernel(&m, t).unwrap();
            let norm = 2.0 * m.mass * m.temperature * damping_kernel(&m, 0.0).unwrap();
            assert!((nu - classical).abs() / norm < 1e-3);
        }
    }

    #[test]
    fn noise_spectrum_positive() {
        for m in [lorentz(0.5), lorentz(0.0), expcut(3.0)] {
            for k in -200..=200 {
                let e = k as f64 * 0.37;
                assert!(m.noise_spectrum(e) >= 0.0);
            }
        }
    }

    #[test]
    fn averaged_kernel_matches_point_values_away_from_origin() {
        let m = expcut(1.0);
        let dt = 0.01;
        let t = 0.5;
        let avg = averaged_noise_kernel(&m, t, dt).unwrap();
        let point = noise_kernel(&m, t).unwrap();
        // hat average = ν + dt²ν''/12 + ...
        let h = 1e-3;
        let curv = (noise_kernel(&m, t + h).unwrap() - 2.0 * point + noise_kernel(&m, t - h).unwrap()) / (h * h);
        assert!((avg - point - dt * dt * curv / 12.0).abs() < 1e-7 * point.abs().max(1.0));
    }

    #[test]
    fn averaged_kernel_finite_at_log_singularity() {
        let m = lorentz(0.5);
        let v = averaged_noise_kernel(&m, 0.0, 0.005).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!(noise_kernel(&m, 0.0).unwrap().is_infinite());
    }

    #[test]
    fn coarsened_moments_match_direct_build() {
        let m = lorentz(0.5);
        let fine = KernelTable::build(&m, TimeGrid::new(1.0, 0.01).unwrap()).unwrap();
        let coarse = fine.coarsened().unwrap().unwrap();
        let direct = KernelTable::build(&m, TimeGrid::new(1.0, 0.02).unwrap()).unwrap();
        assert_eq!(coarse.grid.len(), direct.grid.len());
        for (a, b) in coarse.moments.iter().zip(&direct.moments) {
            for n in 0..4 {
                assert!((a[n] - b[n]).abs() < 1e-10 * (1.0 + b[n].abs()), "{a:?} vs {b:?}");
            }
        }
        for (a, b) in coarse.nu_avg.iter().zip(&direct.nu_avg) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn local_kernel_has_no_coarse_companion() {
        let m = SpectralModel { family: Family::Local, ..lorentz(1.0) };
        let k = KernelTable::build(&m, TimeGrid::new(1.0, 0.01).unwrap()).unwrap();
        assert!(k.coarsened().unwrap().is_none());
    }
}
