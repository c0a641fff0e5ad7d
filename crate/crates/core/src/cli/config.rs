use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::{Family, SpectralModel};
use crate::evolve::{cfl_bound, gaussian_window, WignerGrid};
use crate::grid::TimeGrid;
use crate::master::{drift_operator, ForcingKind, ForcingSpec, PolyTerm};
use crate::propagator::{Mat2, Vec2};

/// Largest `dt × rate` the Volterra solver accepts.
const VOLTERRA_LIMIT: f64 = 0.1;

/// Full run configuration, read from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<ForcingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wigner: Option<WignerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Sampling interval of `𝓛₁` and of evolution reports; defaults to `dt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForcingName {
    None,
    External,
    Linear,
    Quadratic,
    Cubic,
    Polynomial,
}

/// Perturbation with time dependence `amplitude · cos(frequency · t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingBlock {
    pub kind: ForcingName,
    /// `F₀`, `k₁` or `k₂`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub frequency: f64,
    /// Row-major `K` for the linear kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermBlock>,
    #[serde(default)]
    pub classical_characteristics_only: bool,
}

/// `coeff · ∂ₚ^d x^b` term of a general polynomial perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    pub d: u32,
    pub b: u32,
    pub coeff: f64,
}

/// Phase-space grid and Gaussian initial state. Unset ranges cover the ±8σ
/// envelope of the predicted Gaussian over the run (the initial state when
/// validating); the default covariance is the oscillator ground state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub np: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<[[f64; 2]; 2]>,
    /// Largest evolution step; unset means the CFL-limited step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl_safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_l1: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableName {
    Kernels,
    Propagator,
    Covariance,
    Coeffs,
    L1,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Tables written by prerequisite stages; the requested stage always writes its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<Vec<TableName>>,
    /// Evolution snapshots every this many report intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: `{}`: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    fn error(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn warning(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            path: path.to_string(),
            message: message.into(),
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter().filter(|d| d.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    (r - r.round()).abs() < 1e-6 && r.round() >= 1.0
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, Diagnostics> {
        toml::from_str(text).map_err(|e| {
            let mut d = Diagnostics::default();
            d.error("config", e.to_string().trim_end());
            d
        })
    }

    /// Canonical TOML echo; parses back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical echo, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.oracle.as_ref().and_then(|o| o.seed).unwrap_or(0)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.oracle.get_or_insert_with(OracleBlock::default).seed = Some(seed);
    }

    /// Static checks: reports every problem found, never touches the filesystem.
    pub fn validate(&self) -> Diagnostics {
        let mut d = Diagnostics::default();
        let model = self.check_model(&mut d);
        let grid = self.check_grid(&mut d, model.as_ref());
        self.check_forcing(&mut d);
        self.check_wigner(&mut d, model.as_ref(), grid.as_ref());
        self.check_oracle(&mut d);
        if let Some(dir) = &self.outputs.directory {
            if dir.as_os_str().is_empty() {
                d.error("outputs.directory", "must not be empty");
            }
        }
        if self.outputs.snapshot_stride == Some(0) {
            d.error("outputs.snapshot_stride", "must be at least 1");
        }
        d
    }

    fn check_model(&self, d: &mut Diagnostics) -> Option<SpectralModel> {
        let m = &self.model;
        let before = d.0.len();
        let mut need = |v: Option<f64>, path: &str, ok: fn(f64) -> bool, rule: &str| -> f64 {
            match v {
                None => {
                    d.error(path, "missing");
                    f64::NAN
                }
                Some(x) if !x.is_finite() || !ok(x) => {
                    d.error(path, format!("{x} {rule}"));
                    f64::NAN
                }
                Some(x) => x,
            }
        };
        let gamma0 = need(m.gamma0, "model.gamma0", |x| x >= 0.0, "must be >= 0");
        let temperature = need(m.temperature, "model.temperature", |x| x >= 0.0, "must be >= 0");
        let mass = need(m.mass, "model.mass", |x| x > 0.0, "must be > 0");
        let omega = need(m.omega, "model.omega", |x| x >= 0.0, "must be >= 0");
        let family = m.family;
        let cutoff = if family == Some(Family::Local) {
            m.cutoff.unwrap_or(0.0)
        } else {
            need(m.cutoff, "model.cutoff", |x| x > 0.0, "must be > 0")
        };
        if family.is_none() {
            d.error("model.family", "missing (Local, OhmicLorentzCutoff or OhmicExpCutoff)");
        }
        if family == Some(Family::Local) && temperature == 0.0 {
            d.error("model.temperature", "local damping at zero temperature has a UV-divergent noise kernel");
        }
        if d.0.len() > before {
            return None;
        }
        Some(SpectralModel {
            family: family?,
            gamma0,
            cutoff,
            temperature,
            mass,
            omega,
        })
    }

    fn check_grid(&self, d: &mut Diagnostics, model: Option<&SpectralModel>) -> Option<TimeGrid> {
        let g = &self.grid;
        let t_max = match g.t_max {
            None => {
                d.error("grid.t_max", "missing");
                None
            }
            Some(t) if !(t > 0.0 && t.is_finite()) => {
                d.error("grid.t_max", format!("{t} must be > 0"));
                None
            }
            Some(t) => Some(t),
        };
        let dt = match g.dt {
            None => {
                d.error("grid.dt", "missing");
                None
            }
            Some(t) if !(t > 0.0 && t.is_finite()) => {
                d.error("grid.dt", format!("{t} must be > 0"));
                None
            }
            Some(t) => Some(t),
        };
        let (t_max, dt) = (t_max?, dt?);
        if !is_multiple(t_max, dt) {
            d.error("grid.t_max", format!("{t_max} is not a multiple of dt = {dt}"));
            return None;
        }
        if let Some(md) = g.master_dt {
            if !(md > 0.0) || !is_multiple(md, dt) {
                d.error("grid.master_dt", format!("{md} is not a positive multiple of dt = {dt}"));
            } else if md > t_max + 0.5 * dt {
                d.error("grid.master_dt", format!("{md} exceeds t_max = {t_max}"));
            } else if !is_multiple(t_max, md) {
                d.error("grid.master_dt", format!("t_max = {t_max} is not a multiple of {md}"));
            }
        }
        if let Some(m) = model {
            let rate = if m.is_local() {
                m.omega.max(m.gamma0)
            } else {
                m.omega.max(m.gamma0).max(m.cutoff)
            };
            if dt * rate > VOLTERRA_LIMIT {
                d.error(
                    "grid.dt",
                    format!(
                        "{dt} too large for the fastest model rate {rate}: Volterra solver needs dt <= {:.4e}",
                        VOLTERRA_LIMIT / rate
                    ),
                );
            }
        }
        TimeGrid::new(t_max, dt).ok()
    }

    fn check_forcing(&self, d: &mut Diagnostics) {
        let Some(f) = &self.forcing else { return };
        if !f.frequency.is_finite() {
            d.error("forcing.frequency", "must be finite");
        }
        let needs_amplitude = matches!(f.kind, ForcingName::External | ForcingName::Quadratic | ForcingName::Cubic);
        match f.amplitude {
            None if needs_amplitude => d.error("forcing.amplitude", format!("required for the {:?} kind", f.kind)),
            Some(a) if !a.is_finite() => d.error("forcing.amplitude", "must be finite"),
            _ => {}
        }
        match f.kind {
            ForcingName::Linear => match f.matrix {
                None => d.error("forcing.matrix", "required for the linear kind"),
                Some(m) if m.iter().flatten().any(|v| !v.is_finite()) => d.error("forcing.matrix", "must be finite"),
                _ => {}
            },
            ForcingName::Polynomial => {
                if f.terms.is_empty() {
                    d.error("forcing.terms", "the polynomial kind needs at least one term");
                }
                for (i, t) in f.terms.iter().enumerate() {
                    if t.d == 0 && t.b == 0 {
                        d.error(&format!("forcing.terms[{i}]"), "d = b = 0 would be a constant shift, not a generator");
                    }
                    if !t.coeff.is_finite() {
                        d.error(&format!("forcing.terms[{i}].coeff"), "must be finite");
                    }
                }
            }
            _ => {}
        }
    }

    fn check_wigner(&self, d: &mut Diagnostics, model: Option<&SpectralModel>, grid: Option<&TimeGrid>) {
        let Some(w) = &self.wigner else { return };
        let (nx, np) = (w.nx.unwrap_or(101), w.np.unwrap_or(101));
        if nx < 3 {
            d.error("wigner.nx", format!("{nx} must be at least 3"));
        }
        if np < 3 {
            d.error("wigner.np", format!("{np} must be at least 3"));
        }
        if let Some(a) = w.accuracy {
            if !matches!(a, 2 | 4 | 6) {
                d.error("wigner.accuracy", format!("{a} must be 2, 4 or 6"));
            }
        }
        if let Some(s) = w.cfl_safety {
            if !(s > 0.0 && s <= 1.0) {
                d.error("wigner.cfl_safety", format!("{s} must lie in (0, 1]"));
            }
        }
        if let Some(dt) = w.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                d.error("wigner.dt", format!("{dt} must be > 0"));
            }
        }
        let Some(model) = model else { return };
        let (mean, cov) = self.initial_state(model);
        if !(cov[(0, 0)] > 0.0 && cov.determinant() > 0.0) || (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
            d.error("wigner.covariance", "must be symmetric positive definite");
            return;
        }
        let (xr, pr) = self.window(model);
        for (path, r) in [("wigner.x_range", xr), ("wigner.p_range", pr)] {
            if !(r.0 < r.1) {
                d.error(path, format!("[{}, {}] is empty", r.0, r.1));
                return;
            }
        }
        let ((xl, xh), (pl, ph)) = gaussian_window(mean, cov, 6.0);
        if xr.0 > xl || xr.1 < xh {
            d.error("wigner.x_range", format!("does not cover mean ± 6σ = [{xl:.4}, {xh:.4}]"));
        }
        if pr.0 > pl || pr.1 < ph {
            d.error("wigner.p_range", format!("does not cover mean ± 6σ = [{pl:.4}, {ph:.4}]"));
        }
        let Some(grid) = grid else { return };
        if let Some(t) = w.t_end {
            if !(t > 0.0) || t > grid.t_max() + 0.5 * grid.dt || !is_multiple(t, self.master_dt(grid)) {
                d.error("wigner.t_end", format!("{t} must be a positive multiple of master_dt no larger than t_max"));
            }
        }
        // an unset step is chosen from the bound at run time
        if let (Some(step), true) = (w.dt, nx >= 3 && np >= 3) {
            let shell = WignerGrid::from_fn(xr, pr, nx, np, |_, _| 0.0);
            let bound = undamped_cfl_bound(&shell, model);
            let safety = w.cfl_safety.unwrap_or(0.5);
            if step > safety * bound {
                let sub = (self.master_dt(grid) / (safety * bound)).ceil();
                d.warning(
                    "wigner.dt",
                    format!(
                        "{step} exceeds the CFL bound {bound:.4e} (safety {safety}) for omega = {}; \
                         evolve will take {sub} substeps per report interval",
                        model.omega
                    ),
                );
            }
        }
    }

    fn check_oracle(&self, d: &mut Diagnostics) {
        let Some(o) = &self.oracle else { return };
        if let Some(n) = o.n {
            if n < 2 {
                d.error("oracle.n", format!("{n} must be at least 2"));
            }
        }
    }

    /// Model after validation.
    pub fn spectral_model(&self) -> SpectralModel {
        let m = &self.model;
        SpectralModel {
            family: m.family.expect("validated"),
            gamma0: m.gamma0.expect("validated"),
            cutoff: m.cutoff.unwrap_or(0.0),
            temperature: m.temperature.expect("validated"),
            mass: m.mass.expect("validated"),
            omega: m.omega.expect("validated"),
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.grid.t_max.expect("validated"), self.grid.dt.expect("validated")).expect("validated")
    }

    pub fn master_dt(&self, grid: &TimeGrid) -> f64 {
        self.grid.master_dt.unwrap_or(grid.dt)
    }

    /// Grid stride between `master_dt` samples.
    pub fn master_stride(&self, grid: &TimeGrid) -> usize {
        (self.master_dt(grid) / grid.dt).round().max(1.0) as usize
    }

    /// `None` for no forcing block or `kind = "none"`.
    pub fn forcing_spec(&self, grid: TimeGrid) -> Option<ForcingSpec> {
        let f = self.forcing.as_ref()?;
        let (a, w) = (f.amplitude.unwrap_or(1.0), f.frequency);
        let profile = move |t: f64| a * (w * t).cos();
        let kind = match f.kind {
            ForcingName::None => return None,
            ForcingName::External => ForcingSpec::external(grid, profile).kind,
            ForcingName::Quadratic => ForcingSpec::quadratic(grid, profile).kind,
            ForcingName::Cubic => ForcingSpec::cubic(grid, profile).kind,
            ForcingName::Linear => {
                let m = f.matrix.expect("validated");
                let k = Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
                ForcingKind::Linear(grid.times().map(|t| k * profile(t)).collect())
            }
            ForcingName::Polynomial => ForcingKind::GeneralPolynomial(
                f.terms
                    .iter()
                    .map(|t| PolyTerm {
                        d: t.d,
                        b: t.b,
                        coeff: grid.times().map(|s| t.coeff * profile(s)).collect(),
                    })
                    .collect(),
            ),
        };
        Some(ForcingSpec {
            kind,
            classical_characteristics_only: f.classical_characteristics_only,
        })
    }

    /// Initial Wigner mean and covariance; ground state of the bare oscillator by default.
    pub fn initial_state(&self, model: &SpectralModel) -> (Vec2, Mat2) {
        let w = self.wigner.clone().unwrap_or_default();
        let mean = w.mean.map_or(Vec2::zeros(), |m| Vec2::new(m[0], m[1]));
        let cov = w.covariance.map_or_else(
            || {
                let mw = model.mass * model.omega.max(1e-3);
                Mat2::new(0.5 / mw, 0.0, 0.0, 0.5 * mw)
            },
            |c| Mat2::new(c[0][0], c[0][1], c[1][0], c[1][1]),
        );
        (mean, cov)
    }

    pub fn window(&self, model: &SpectralModel) -> ((f64, f64), (f64, f64)) {
        let (mean, cov) = self.initial_state(model);
        let (xr, pr) = gaussian_window(mean, cov, 8.0);
        let w = self.wigner.clone().unwrap_or_default();
        (w.x_range.map_or(xr, |r| (r[0], r[1])), w.p_range.map_or(pr, |r| (r[0], r[1])))
    }
}

/// CFL bound of the undamped drift `ẋ = p/m`, `ṗ = −mω²x` on the Wigner grid.
pub fn undamped_cfl_bound(w: &WignerGrid, model: &SpectralModel) -> f64 {
    let h = Mat2::new(0.0, -1.0 / model.mass, model.mass * model.omega * model.omega, 0.0);
    cfl_bound(w, &drift_operator(h))
}

/// Benchmark configuration: Lorentz cutoff, `m = 1`, `ω = 2`, `Λ = 10`, `t_max = 5`, `dt = 0.005`.
pub fn benchmark(gamma0: f64, temperature: f64) -> RunConfig {
    RunConfig {
        model: ModelBlock {
            family: Some(Family::OhmicLorentzCutoff),
            gamma0: Some(gamma0),
            cutoff: Some(10.0),
            temperature: Some(temperature),
            mass: Some(1.0),
            omega: Some(2.0),
        },
        grid: GridBlock {
            t_max: Some(5.0),
            dt: Some(0.005),
            master_dt: Some(0.05),
        },
        ..Default::default()
    }
}
