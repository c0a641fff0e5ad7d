use serde::Serialize;

use crate::bath::{Family, KernelTable, SpectralModel};
use crate::covariance::CovarianceTable;
use crate::error::Result;
use crate::grid::TimeGrid;
use crate::master::{
    build_l1_series, diffusion_matrix, drift_matrix, drift_vector, external_force_correction, linear_d1, linear_h1,
    local_operator, two_time_operator_idx, ForcingSpec, MasterTable,
};
use crate::propagator::{Mat2, PropagatorTable, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value < tolerance,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (tolerance {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail
        )
    }
}

/// Tables for one model on one grid.
pub struct Tables {
    pub kernels: KernelTable,
    pub prop: PropagatorTable,
    pub cov: CovarianceTable,
    pub master: MasterTable,
}

impl Tables {
    pub fn build(model: &SpectralModel, grid: TimeGrid) -> Result<Self> {
        let kernels = KernelTable::build(model, grid)?;
        let prop = PropagatorTable::new(model, grid)?;
        let cov = CovarianceTable::build(&prop, &kernels)?;
        let master = MasterTable::build(&prop, &cov)?;
        Ok(Self {
            kernels,
            prop,
            cov,
            master,
        })
    }
}

/// `max_t ‖Φ̇ + 𝓗Φ‖ / ‖Φ̇‖` over grid times where `Φ̇ ≠ 0`.
pub fn hpz_loop_residual(prop: &PropagatorTable, master: &MasterTable) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..prop.grid.len() {
        let n = prop.phidot[i].norm();
        if n > 1e-300 {
            worst = worst.max((prop.phidot[i] + master.h[i] * prop.phi[i]).norm() / n);
        }
    }
    worst
}

/// `count` grid indices spread evenly, endpoints included.
pub fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..count).map(|j| (j * (len - 1)) / (count - 1).max(1)).collect();
    v.dedup();
    v
}

/// The five forcing kinds with smooth unit-scale profiles.
pub fn forcing_suite(grid: TimeGrid) -> Vec<ForcingSpec> {
    use crate::master::PolyTerm;
    vec![
        ForcingSpec::external(grid, |t| (3.0 * t).cos()),
        ForcingSpec::linear(grid, |t| Mat2::new(0.1, 0.0, 0.5 + 0.2 * t, -0.1)),
        ForcingSpec::quadratic(grid, |t| 0.3 + 0.1 * t),
        ForcingSpec::cubic(grid, |t| 1.0 + t),
        ForcingSpec::general(vec![
            PolyTerm { d: 1, b: 2, coeff: grid.times().map(|t| 0.2 * t.cos()).collect() },
            PolyTerm { d: 2, b: 1, coeff: grid.times().map(|t| 0.1 + t).collect() },
            PolyTerm { d: 1, b: 4, coeff: vec![0.05; grid.len()] },
        ])
        .expect("valid terms"),
    ]
}

/// Largest coefficient gap of `δ𝓛̄(t,t)` against `δ𝓛(t)`, or infinity on a
/// monomial-set mismatch.
pub fn endpoint_identity(prop: &PropagatorTable, cov: &CovarianceTable, spec: &ForcingSpec, at: &[usize]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &k in at {
        let a = two_time_operator_idx(spec, prop, cov, k, k)?;
        let b = local_operator(spec, k)?;
        if !a.terms().map(|(m, _)| m).eq(b.terms().map(|(m, _)| m)) {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(a.max_difference(&b));
    }
    Ok(worst)
}

/// Indices for the forcing checks: early steps plus a spread over the grid.
fn forcing_indices(len: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [1, 2, 7, len / 4, len / 2, len - 1].into_iter().filter(|&k| k < len).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Largest `|𝓛₁ drift − (−F)|` against `|F|` for an external force.
pub fn external_local_residual(t: &Tables, at: &[usize]) -> Result<f64> {
    let f = |s: f64| (3.0 * s).cos();
    let spec = ForcingSpec::external(t.prop.grid, f);
    let mut worst = 0.0f64;
    for (op, &k) in build_l1_series(&spec, &t.prop, &t.cov, &t.master, at)?.iter().zip(at) {
        let fk = f(t.prop.grid.time(k));
        let corr = drift_vector(op) - Vec2::new(0.0, -fk);
        worst = worst.max(corr.abs().max());
    }
    Ok(worst)
}

/// Sup-norm relative gap between the `𝓛₁` drift correction and its closed form.
pub fn external_nonlocal_error(t: &Tables, at: &[usize]) -> Result<f64> {
    let f = |s: f64| (3.0 * s).cos();
    let spec = ForcingSpec::external(t.prop.grid, f);
    let force: Vec<f64> = t.prop.grid.times().map(f).collect();
    let (mut err, mut mag) = (0.0f64, 0.0f64);
    for (op, &k) in build_l1_series(&spec, &t.prop, &t.cov, &t.master, at)?.iter().zip(at) {
        let corr = drift_vector(op) - Vec2::new(0.0, -force[k]);
        let expect = external_force_correction(&t.prop, &t.master, &force, k);
        err = err.max((corr - expect).abs().max());
        mag = mag.max(expect.abs().max());
    }
    Ok(if mag > 0.0 { err / mag } else { err })
}

/// Relative gaps of `𝓗₁` and `𝐃₁` between the operator and `Φ₁` routes.
pub fn linear_route_errors(t: &Tables, at: &[usize]) -> Result<(f64, f64)> {
    let kf = |s: f64| Mat2::new(0.0, 0.0, 0.5 + 0.2 * s, 0.0);
    let spec = ForcingSpec::linear(t.prop.grid, kf);
    let ks: Vec<Mat2> = t.prop.grid.times().map(kf).collect();
    let ops = build_l1_series(&spec, &t.prop, &t.cov, &t.master, at)?;
    let (mut eh, mut mh, mut ed, mut md) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (op, &k) in ops.iter().zip(at) {
        let h1 = linear_h1(&t.prop, &t.master, &ks, k)?;
        eh = eh.max((drift_matrix(op) - h1).abs().max());
        mh = mh.max(h1.abs().max());
        let d1 = linear_d1(&t.prop, &t.cov, &t.kernels, &t.master, &ks, k)?;
        ed = ed.max((diffusion_matrix(op) - d1).abs().max());
        md = md.max(d1.abs().max());
    }
    let rel = |e: f64, m: f64| if m > 0.0 { e / m } else { e };
    Ok((rel(eh, mh), rel(ed, md)))
}

/// The consistency suite for one model and grid.
pub fn run_suite(model: &SpectralModel, grid: TimeGrid) -> Result<Vec<CheckResult>> {
    let t = Tables::build(model, grid)?;
    let len = grid.len();
    let mut out = vec![
        CheckResult::new("hpz-loop", hpz_loop_residual(&t.prop, &t.master), 1e-6, "max |dPhi/dt + H Phi| / |dPhi/dt|"),
        CheckResult::new("diffusion-at-origin", t.master.d[0].abs().max(), 1e-8, "|D(0)|"),
    ];
    let times = sample_indices(len, 10);
    let mut worst = 0.0f64;
    for spec in forcing_suite(grid) {
        worst = worst.max(endpoint_identity(&t.prop, &t.cov, &spec, &times)?);
    }
    out.push(CheckResult::new(
        "endpoint-identity",
        worst,
        1e-12,
        format!("five forcing kinds at {} times", times.len()),
    ));
    let at = forcing_indices(len);
    // the external-force correction does not involve the noise, so any T > 0 will do
    let local_model = SpectralModel {
        family: Family::Local,
        temperature: if model.temperature > 0.0 { model.temperature } else { 1.0 },
        ..*model
    };
    let local = if model.is_local() { None } else { Some(Tables::build(&local_model, grid)?) };
    out.push(CheckResult::new(
        "external-force-local",
        external_local_residual(local.as_ref().unwrap_or(&t), &at)?,
        1e-6,
        "local damping: L1 drift correction / |F|",
    ));
    if !model.is_local() {
        out.push(CheckResult::new(
            "external-force-nonlocal",
            external_nonlocal_error(&t, &at)?,
            1e-4,
            "relative to the closed-form effective force",
        ));
    }
    let (eh, ed) = linear_route_errors(&t, &at)?;
    out.push(CheckResult::new("linear-force-drift", eh, 1e-4, "H1 operator route vs Phi1 route"));
    out.push(CheckResult::new("linear-force-diffusion", ed, 1e-3, "D1 operator route vs Phi1 route"));
    Ok(out)
}
