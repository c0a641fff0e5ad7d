//! Configuration, stage orchestration and artifact files.

pub mod check;
pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::bath::{describe_model, KernelTable, SpectralModel};
use crate::covariance::CovarianceTable;
use crate::evolve::{cfl_bound, evolve, gaussian_moments, gaussian_window, init_gaussian};
use crate::grid::TimeGrid;
use crate::master::{build_l1_series, ForcingKind, ForcingSpec, MasterTable};
use crate::opalg::PhaseOp;
use crate::oracle::{run_ensemble, InitialState, Potential};
use crate::propagator::{Mat2, PropagatorTable, Vec2};

pub use check::CheckResult;
pub use config::{Diagnostic, Diagnostics, RunConfig, Severity, TableName};

const DEFAULT_OUT: &str = "qbm-out";
const DEFAULT_TRAJECTORIES: usize = 10_000;
const DEFAULT_SNAPSHOT_STRIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Kernels,
    Propagator,
    Covariance,
    Coeffs,
    L1,
    Evolve,
    Oracle,
    Check,
    Validate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Kernels => "kernels",
            Stage::Propagator => "propagator",
            Stage::Covariance => "covariance",
            Stage::Coeffs => "coeffs",
            Stage::L1 => "l1",
            Stage::Evolve => "evolve",
            Stage::Oracle => "oracle",
            Stage::Check => "check",
            Stage::Validate => "validate",
        }
    }

    fn table(self) -> Option<TableName> {
        match self {
            Stage::Kernels => Some(TableName::Kernels),
            Stage::Propagator => Some(TableName::Propagator),
            Stage::Covariance => Some(TableName::Covariance),
            Stage::Coeffs => Some(TableName::Coeffs),
            Stage::L1 => Some(TableName::L1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `outputs.directory`.
    pub out: Option<PathBuf>,
    /// Overrides `oracle.seed`.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Also write `tolerances.json`.
    pub tolerance_report: bool,
}

/// Files and achieved tolerances of one executed stage.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub files: Vec<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl StageRecord {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub stage: Stage,
    pub out_dir: Option<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub diagnostics: Diagnostics,
    pub stages: Vec<StageRecord>,
    pub checks: Vec<CheckResult>,
}

impl RunReport {
    /// Human-readable summary; `tolerances` adds the achieved tolerances.
    pub fn render(&self, tolerances: bool) -> String {
        let mut s = String::new();
        for d in &self.diagnostics.0 {
            let _ = writeln!(s, "{d}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        for r in &self.stages {
            let _ = writeln!(s, "{}: {} file(s)", r.name, r.files.len());
            for n in &r.notes {
                let _ = writeln!(s, "  note: {n}");
            }
            if tolerances {
                for (k, v) in &r.tolerances {
                    let _ = writeln!(s, "  {k} = {v:.3e}");
                }
            }
        }
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "outputs in {}", dir.display());
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration\n{0}")]
    Config(Diagnostics),
    #[error("numerical failure: {0}")]
    Numerical(#[from] crate::Error),
    #[error("{failed} of {total} consistency checks failed")]
    Consistency {
        failed: usize,
        total: usize,
        report: Box<RunReport>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Consistency { .. } => 4,
        }
    }

    fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config(Diagnostics(vec![Diagnostic {
            severity: Severity::Error,
            path: path.to_string(),
            message: message.into(),
        }]))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Validates `config`, then runs `stage` and its prerequisites, writing every
/// artifact and `manifest.json` under the output directory.
pub fn run(config: &RunConfig, stage: Stage, opts: &RunOptions) -> CliResult<RunReport> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.set_seed(seed);
    }
    let diagnostics = config.validate();
    if diagnostics.has_errors() {
        return Err(CliError::Config(diagnostics));
    }
    if stage == Stage::Validate {
        return Ok(RunReport {
            stage,
            out_dir: None,
            config_hash: config.hash(),
            seed: config.seed(),
            diagnostics,
            stages: Vec::new(),
            checks: Vec::new(),
        });
    }
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config("--threads", e.to_string()))?;
            pool.install(|| run_stages(&config, stage, opts, diagnostics))
        }
        None => run_stages(&config, stage, opts, diagnostics),
    }
}

fn run_stages(config: &RunConfig, stage: Stage, opts: &RunOptions, diagnostics: Diagnostics) -> CliResult<RunReport> {
    let dir = opts
        .out
        .clone()
        .or_else(|| config.outputs.directory.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).map_err(|e| CliError::config("outputs.directory", format!("{}: {e}", dir.display())))?;
    let mut p = Pipeline::new(config, stage, dir.clone());
    let outcome = p.execute();
    let report = RunReport {
        stage,
        out_dir: Some(dir.clone()),
        config_hash: p.hash.clone(),
        seed: config.seed(),
        diagnostics,
        stages: p.records,
        checks: p.checks,
    };
    write_manifest(&dir, config, &report, opts.tolerance_report)?;
    outcome?;
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Consistency {
            failed,
            total: report.checks.len(),
            report: Box::new(report),
        });
    }
    Ok(report)
}

fn write_manifest(dir: &Path, config: &RunConfig, report: &RunReport, tolerance_report: bool) -> CliResult<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        tool: &'static str,
        version: &'static str,
        stage: &'static str,
        config_hash: &'a str,
        seed: u64,
        threads: usize,
        config: String,
        warnings: Vec<&'a Diagnostic>,
        stages: &'a [StageRecord],
        checks: &'a [CheckResult],
    }
    let m = Manifest {
        tool: "qbm",
        version: env!("CARGO_PKG_VERSION"),
        stage: report.stage.name(),
        config_hash: &report.config_hash,
        seed: report.seed,
        threads: rayon::current_num_threads(),
        config: config.to_toml(),
        warnings: report.diagnostics.warnings().collect(),
        stages: &report.stages,
        checks: &report.checks,
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json + "\n").map_err(crate::Error::from)?;
    if tolerance_report {
        let t: BTreeMap<&str, &BTreeMap<String, f64>> =
            report.stages.iter().map(|r| (r.name.as_str(), &r.tolerances)).collect();
        let json = serde_json::to_string_pretty(&t).expect("tolerances serialize");
        fs::write(dir.join("tolerances.json"), json + "\n").map_err(crate::Error::from)?;
    }
    Ok(())
}

/// Reads the configuration echo back out of a manifest.
pub fn config_from_manifest(text: &str) -> CliResult<RunConfig> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::config("manifest", e.to_string()))?;
    let echo = v["config"].as_str().ok_or_else(|| CliError::config("manifest.config", "missing"))?;
    RunConfig::from_toml(echo).map_err(CliError::Config)
}

/// Stage state; each table is built at most once.
struct Pipeline<'a> {
    config: &'a RunConfig,
    stage: Stage,
    dir: PathBuf,
    hash: String,
    header: String,
    model: SpectralModel,
    grid: TimeGrid,
    kernels: Option<KernelTable>,
    prop: Option<PropagatorTable>,
    cov: Option<CovarianceTable>,
    master: Option<MasterTable>,
    l1: Option<Vec<PhaseOp>>,
    records: Vec<StageRecord>,
    checks: Vec<CheckResult>,
}

fn fmt_row(t: f64, values: &[f64]) -> String {
    let mut s = format!("{t:.6}");
    for v in values {
        let _ = write!(s, " {v:.16e}");
    }
    s.push('\n');
    s
}

impl<'a> Pipeline<'a> {
    fn new(config: &'a RunConfig, stage: Stage, dir: PathBuf) -> Self {
        let model = config.spectral_model();
        let hash = config.hash();
        let header = format!(
            "# qbm {} config-hash {hash}\n# {}\n",
            env!("CARGO_PKG_VERSION"),
            describe_model(&model)
        );
        Self {
            config,
            stage,
            dir,
            hash,
            header,
            model,
            grid: config.time_grid(),
            kernels: None,
            prop: None,
            cov: None,
            master: None,
            l1: None,
            records: Vec::new(),
            checks: Vec::new(),
        }
    }

    fn execute(&mut self) -> CliResult<()> {
        match self.stage {
            Stage::Kernels => self.kernels(),
            Stage::Propagator => self.propagator(),
            Stage::Covariance => self.covariance(),
            Stage::Coeffs => self.coeffs(),
            Stage::L1 => self.l1(),
            Stage::Evolve => self.evolve(),
            Stage::Oracle => self.oracle(),
            Stage::Check => self.check(),
            Stage::Validate => Ok(()),
        }
    }

    fn writes(&self, table: TableName) -> bool {
        self.stage.table() == Some(table) || self.config.outputs.tables.as_ref().is_none_or(|t| t.contains(&table))
    }

    fn write(&self, rec: &mut StageRecord, name: &str, body: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(crate::Error::from)?;
        }
        fs::write(&path, format!("{}{body}", self.header)).map_err(crate::Error::from)?;
        rec.files.push(name.to_string());
        Ok(())
    }

    fn forcing(&self) -> Option<ForcingSpec> {
        self.config.forcing_spec(self.grid)
    }

    fn kernels(&mut self) -> CliResult<()> {
        if self.kernels.is_some() {
            return Ok(());
        }
        let k = KernelTable::build(&self.model, self.grid)?;
        let mut rec = StageRecord::new("kernels");
        if self.writes(TableName::Kernels) {
            let (mut gamma, mut nu, mut avg) = (
                String::from("# t gamma\n"),
                String::from("# t nu\n"),
                String::from("# t nu_cell_average\n"),
            );
            match (k.local_weight, k.white) {
                (Some(w), Some(white)) => {
                    let _ = writeln!(gamma, "# delta kernel: gamma(t) = {w:e} delta(t)");
                    let _ = writeln!(nu, "# white noise: nu(t) = {white:e} delta(t)");
                }
                _ => {
                    for (i, t) in self.grid.times().enumerate() {
                        gamma.push_str(&fmt_row(t, &[k.gamma[i]]));
                        nu.push_str(&fmt_row(t, &[k.nu[i]]));
                    }
                }
            }
            for (i, v) in k.nu_avg.iter().enumerate() {
                avg.push_str(&fmt_row(self.grid.time(i), &[*v]));
            }
            self.write(&mut rec, "gamma.txt", &gamma)?;
            self.write(&mut rec, "nu.txt", &nu)?;
            self.write(&mut rec, "nu_avg.txt", &avg)?;
        }
        self.records.push(rec);
        self.kernels = Some(k);
        Ok(())
    }

    fn propagator(&mut self) -> CliResult<()> {
        if self.prop.is_some() {
            return Ok(());
        }
        let p = PropagatorTable::new(&self.model, self.grid)?;
        let mut rec = StageRecord::new("propagator");
        rec.tolerances
            .insert("phi0_identity_error".into(), (p.phi[0] - Mat2::identity()).abs().max());
        if self.writes(TableName::Propagator) {
            let mut body = String::from("# t g gdot gddot phi11 phi12 phi21 phi22\n");
            for (i, t) in self.grid.times().enumerate() {
                let f = p.phi[i];
                body.push_str(&fmt_row(t, &[p.g[i], p.gdot[i], p.gddot[i], f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]]));
            }
            self.write(&mut rec, "propagator.txt", &body)?;
        }
        self.records.push(rec);
        self.prop = Some(p);
        Ok(())
    }

    fn covariance(&mut self) -> CliResult<()> {
        if self.cov.is_some() {
            return Ok(());
        }
        self.kernels()?;
        self.propagator()?;
        let c = CovarianceTable::build(self.prop.as_ref().expect("built"), self.kernels.as_ref().expect("built"))?;
        let mut rec = StageRecord::new("covariance");
        rec.tolerances.insert("sigma0_abs".into(), c.equal_time(0).abs().max());
        if self.writes(TableName::Covariance) {
            self.write(&mut rec, "covariance.txt", &c.export_diagonal())?;
        }
        self.records.push(rec);
        self.cov = Some(c);
        Ok(())
    }

    fn coeffs(&mut self) -> CliResult<()> {
        if self.master.is_some() {
            return Ok(());
        }
        self.covariance()?;
        let prop = self.prop.as_ref().expect("built");
        let m = MasterTable::build(prop, self.cov.as_ref().expect("built"))?;
        let mut rec = StageRecord::new("coeffs");
        rec.tolerances.insert("hpz_loop_residual".into(), check::hpz_loop_residual(prop, &m));
        rec.tolerances.insert("diffusion_at_origin".into(), m.d[0].abs().max());
        if self.writes(TableName::Coeffs) {
            self.write(&mut rec, "coeffs.txt", &m.export())?;
        }
        self.records.push(rec);
        self.master = Some(m);
        Ok(())
    }

    fn l1(&mut self) -> CliResult<()> {
        if self.l1.is_some() {
            return Ok(());
        }
        let Some(spec) = self.forcing() else {
            return Err(CliError::config("forcing.kind", "the l1 stage needs a forcing block with a kind other than none"));
        };
        self.coeffs()?;
        let (prop, cov, master) = (
            self.prop.as_ref().expect("built"),
            self.cov.as_ref().expect("built"),
            self.master.as_ref().expect("built"),
        );
        let stride = self.config.master_stride(&self.grid);
        let at: Vec<usize> = (0..self.grid.len()).step_by(stride).collect();
        let ops = build_l1_series(&spec, prop, cov, master, &at)?;
        let mut rec = StageRecord::new("l1");
        rec.tolerances.insert(
            "endpoint_identity".into(),
            check::endpoint_identity(prop, cov, &spec, &check::sample_indices(self.grid.len(), 10))?,
        );
        rec.notes.push(format!("forcing kind {}, sampled every {} grid steps", spec.name(), stride));
        if self.writes(TableName::L1) {
            let mut body = String::from("# one block per sample time: a time line, then `coeff dx^i dp^j x^k p^l` lines\n");
            for (op, &k) in ops.iter().zip(&at) {
                let _ = writeln!(body, "# t = {:.6}", self.grid.time(k));
                body.push_str(&op.dump());
            }
            self.write(&mut rec, "l1.txt", &body)?;
        }
        self.records.push(rec);
        self.l1 = Some(ops);
        Ok(())
    }

    fn evolve(&mut self) -> CliResult<()> {
        let Some(wb) = self.config.wigner.clone() else {
            return Err(CliError::config("wigner", "the evolve stage needs a wigner block"));
        };
        self.coeffs()?;
        let with_l1 = self.forcing().is_some() && wb.include_l1.unwrap_or(true);
        if with_l1 {
            self.l1()?;
        }
        let master = self.master.as_ref().expect("built");
        let l1 = if with_l1 { self.l1.clone() } else { None };
        let master_dt = self.config.master_dt(&self.grid);
        let t_end = wb.t_end.unwrap_or(self.grid.t_max());
        let reports = (t_end / master_dt).round() as usize;
        let generator = |t: f64| -> crate::Result<PhaseOp> {
            let mut op = master.l0_at(t);
            if let Some(l1) = &l1 {
                let x = (t / master_dt).clamp(0.0, (l1.len() - 1) as f64);
                let j = (x.floor() as usize).min(l1.len().saturating_sub(2));
                let th = x - j as f64;
                op = op + l1[j].scale(1.0 - th) + l1[(j + 1).min(l1.len() - 1)].scale(th);
            }
            Ok(op.canonical())
        };
        let (mean, cov) = self.config.initial_state(&self.model);
        let steps = (t_end / self.grid.dt).round() as usize;
        let ode = gaussian_moments(mean, cov, 0.0, self.grid.dt, steps, |t| master.coefficients_at(t));
        let (xr, pr) = match (wb.x_range, wb.p_range) {
            (Some(x), Some(p)) => ((x[0], x[1]), (p[0], p[1])),
            (x, p) => {
                // unset ranges follow the predicted ±8σ envelope over the whole run
                let mut env = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
                for (_, z, s) in &ode {
                    let ((xl, xh), (pl, ph)) = gaussian_window(*z, *s, 8.0);
                    env = ((env.0 .0.min(xl), env.0 .1.max(xh)), (env.1 .0.min(pl), env.1 .1.max(ph)));
                }
                (x.map_or(env.0, |r| (r[0], r[1])), p.map_or(env.1, |r| (r[0], r[1])))
            }
        };
        let w0 = init_gaussian(mean, cov, xr, pr, wb.nx.unwrap_or(101), wb.np.unwrap_or(101))?;
        let mut bound = f64::INFINITY;
        for k in 0..=reports {
            bound = bound.min(cfl_bound(&w0, &generator(k as f64 * master_dt)?));
        }
        let safety = wb.cfl_safety.unwrap_or(0.5);
        let cap = wb.dt.unwrap_or(self.grid.dt).min(safety * bound);
        let substeps = (master_dt / cap).ceil().max(1.0) as usize;
        let stride = self.config.outputs.snapshot_stride.unwrap_or(DEFAULT_SNAPSHOT_STRIDE);
        let accuracy = wb.accuracy.unwrap_or(4);
        let mut rec = StageRecord::new("evolve");
        let mut rows: Vec<(f64, f64, Vec2, Mat2)> = Vec::new();
        let mut snaps: Vec<(usize, crate::evolve::WignerGrid)> = Vec::new();
        let (w_end, _) = evolve(w0, t_end, master_dt, substeps, accuracy, generator, |k, w| {
            let (m, c) = w.moments();
            rows.push((w.time, w.integral(), m, c));
            if k % stride == 0 || k == reports {
                snaps.push((k, w.clone()));
            }
            Ok(())
        })?;
        let snap_dir = self.dir.join("snapshots");
        fs::create_dir_all(&snap_dir).map_err(crate::Error::from)?;
        for (k, w) in &snaps {
            let stem = snap_dir.join(format!("w_{k:05}"));
            w.write_snapshot(&stem, self.header.trim_end())?;
            rec.files.push(format!("snapshots/w_{k:05}.bin"));
            rec.files.push(format!("snapshots/w_{k:05}.txt"));
        }
        let norm0 = rows[0].1;
        let mut body = String::from("# t norm norm_drift mean_x mean_p cov_xx cov_xp cov_pp\n");
        let mut drift = 0.0f64;
        for (t, n, m, c) in &rows {
            drift = drift.max((n - norm0).abs());
            body.push_str(&fmt_row(*t, &[*n, n - norm0, m[0], m[1], c[(0, 0)], c[(0, 1)], c[(1, 1)]]));
        }
        self.write(&mut rec, "evolve.txt", &body)?;
        rec.tolerances.insert("norm_drift".into(), drift);
        rec.notes.push(format!(
            "{} report intervals of {master_dt}, {substeps} Heun substeps each (CFL bound {bound:.3e})",
            reports
        ));
        if !with_l1 {
            let per = (master_dt / self.grid.dt).round() as usize;
            let mut dev = 0.0f64;
            for (k, (_, _, _, c)) in rows.iter().enumerate() {
                let s = ode[k * per].2;
                dev = dev.max((c - s).abs().max() / s.abs().max());
            }
            rec.tolerances.insert("covariance_ode_deviation".into(), dev);
        }
        if let Some(w) = w_end.window_warning() {
            rec.notes.push(w);
        }
        self.records.push(rec);
        Ok(())
    }

    /// Potential for the Langevin oracle plus scope notes.
    fn oracle_potential(&self) -> (Potential, Vec<String>) {
        let mut pot = Potential::harmonic(&self.model);
        let mut notes = Vec::new();
        let Some(spec) = self.forcing() else { return (pot, notes) };
        let f = self.config.forcing.as_ref().expect("forcing present");
        if f.frequency != 0.0 {
            notes.push("time-dependent forcing is not represented in the Langevin oracle; harmonic ensemble only".into());
            return (pot, notes);
        }
        let mut add = |power: usize, c: f64| {
            if pot.coeffs.len() <= power {
                pot.coeffs.resize(power + 1, 0.0);
            }
            pot.coeffs[power] += c;
        };
        match &spec.kind {
            ForcingKind::External(v) => add(0, -v[0]),
            ForcingKind::Quadratic(v) => add(2, v[0]),
            ForcingKind::Cubic(v) => add(3, v[0]),
            ForcingKind::Linear(_) => {
                notes.push("matrix forcing is not represented in the Langevin oracle; harmonic ensemble only".into())
            }
            ForcingKind::GeneralPolynomial(terms) => {
                for t in terms {
                    if t.d == 1 {
                        add(t.b as usize, t.coeff[0]);
                    } else {
                        notes.push(format!("term d={} b={} has no Langevin counterpart and is omitted", t.d, t.b));
                    }
                }
            }
        }
        if !pot.is_linear() {
            notes.push(
                "nonlinear force: the ensemble follows classical characteristics only and omits the \
                 quantum-deformation terms; it validates the drift sector, not the full quantum evolution"
                    .into(),
            );
        }
        (pot, notes)
    }

    fn oracle(&mut self) -> CliResult<()> {
        self.kernels()?;
        let (pot, notes) = self.oracle_potential();
        let linear = pot.is_linear();
        let unforced = pot == Potential::harmonic(&self.model);
        if linear {
            self.covariance()?;
        }
        let n = self.config.oracle.as_ref().and_then(|o| o.n).unwrap_or(DEFAULT_TRAJECTORIES);
        let seed = self.config.seed();
        let initial = match &self.config.wigner {
            Some(_) => {
                let (mean, cov) = self.config.initial_state(&self.model);
                InitialState { mean, cov }
            }
            None => InitialState::point(Vec2::zeros()),
        };
        let stats = run_ensemble(self.kernels.as_ref().expect("built"), &pot, &initial, n, seed, None, &[])?;
        let mut rec = StageRecord::new("oracle");
        rec.notes = notes;
        rec.notes.push(format!("{n} trajectories, seed {seed}"));
        self.write(&mut rec, "oracle.txt", &stats.export())?;
        if linear {
            let (prop, cov) = (self.prop.as_ref().expect("built"), self.cov.as_ref().expect("built"));
            let stride = self.config.master_stride(&self.grid);
            let mut body = String::from("# t z_mean_x z_mean_p z_xx z_xp z_pp  (ensemble minus prediction, in standard errors)\n");
            let mut worst = 0.0f64;
            for i in (0..self.grid.len()).step_by(stride) {
                let phi = prop.phi[i];
                let expect = phi * initial.cov * phi.transpose() + cov.equal_time(i);
                let mean = phi * initial.mean;
                let (c, e) = (stats.cov[i], stats.cov_err[i]);
                let z = |a: f64, b: f64, s: f64| if s > 0.0 { (a - b) / s } else { 0.0 };
                let zm = |k: usize| {
                    if unforced {
                        z(stats.mean[i][k], mean[k], (stats.cov[i][(k, k)] / n as f64).sqrt())
                    } else {
                        0.0
                    }
                };
                let row = [
                    zm(0),
                    zm(1),
                    z(c[(0, 0)], expect[(0, 0)], e[(0, 0)]),
                    z(c[(0, 1)], expect[(0, 1)], e[(0, 1)]),
                    z(c[(1, 1)], expect[(1, 1)], e[(1, 1)]),
                ];
                worst = row.iter().fold(worst, |a, v| a.max(v.abs()));
                body.push_str(&fmt_row(self.grid.time(i), &row));
            }
            rec.tolerances.insert("max_abs_z".into(), worst);
            self.write(&mut rec, "oracle_compare.txt", &body)?;
        }
        self.records.push(rec);
        Ok(())
    }

    fn check(&mut self) -> CliResult<()> {
        let results = check::run_suite(&self.model, self.grid)?;
        let mut rec = StageRecord::new("check");
        let mut body = String::new();
        for c in &results {
            body.push_str(&c.line());
            body.push('\n');
            rec.tolerances.insert(c.name.clone(), c.value);
        }
        self.write(&mut rec, "check.txt", &body)?;
        self.records.push(rec);
        self.checks = results;
        Ok(())
    }
}
