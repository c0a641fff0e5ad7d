//! Monte Carlo ground truth: Gaussian bath-force samples and classical
//! Langevin trajectories driven by them.
//!
//! The force is sampled as its averages over grid cells, whose covariance is
//! the hat-averaged kernel `ν̄`. Each trajectory integrates
//! `ẋ = p/m`, `ṗ = −V′(x) − 2∫₀ᵗγ(t−u)p(u)du − 2mγ(t)x(0) + ξ(t)`
//! with the implicit trapezoid rule and a product-trapezoid memory.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::bath::{Family, KernelTable, SpectralModel};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::propagator::{Mat2, Vec2};

const JITTER: f64 = 1e-10;
const CHUNK: usize = 512;

/// Draws of the cell-averaged force `η_n = (1/dt)∫_{t_n}^{t_{n+1}} ξ`.
#[derive(Debug, Clone)]
pub struct NoiseEnsemble {
    pub grid: TimeGrid,
    pub n_samples: usize,
    pub seed: u64,
    pub paths: Vec<Vec<f64>>,
}

enum Method {
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky(DMatrix<f64>),
}

/// Stationary Gaussian sampler for the Toeplitz covariance `ν̄_{|i−j|}`.
pub struct NoiseSampler {
    cells: usize,
    method: Method,
}

impl std::fmt::Debug for NoiseSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = match self.method {
            Method::Circulant { .. } => "circulant",
            Method::Cholesky(_) => "cholesky",
        };
        write!(f, "NoiseSampler({} cells, {m})", self.cells)
    }
}

impl NoiseSampler {
    pub fn new(kernels: &KernelTable) -> Result<Self> {
        let cells = kernels.grid.steps;
        let row: Vec<f64> = kernels.nu_avg[..cells].to_vec();
        if cells == 0 {
            return Ok(Self { cells, method: Method::Cholesky(DMatrix::zeros(0, 0)) });
        }
        Self::circulant(&row).or_else(|_| Self::cholesky(&row))
    }

    pub fn method(&self) -> &'static str {
        match self.method {
            Method::Circulant { .. } => "circulant",
            Method::Cholesky(_) => "cholesky",
        }
    }

    fn circulant(row: &[f64]) -> Result<Self> {
        let cells = row.len();
        let len = (2 * cells).next_power_of_two();
        let mut c = vec![Complex64::new(0.0, 0.0); len];
        for (k, &v) in row.iter().enumerate() {
            c[k].re = v;
            if k > 0 {
                c[len - k].re = v;
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        fft.process(&mut c);
        let trace = row[0] * len as f64;
        let min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min < -JITTER * trace {
            return Err(Error::IndefiniteCovariance { value: min, jitter: JITTER * trace });
        }
        let sqrt_eig = c.iter().map(|z| (z.re.max(0.0) / len as f64).sqrt()).collect();
        Ok(Self {
            cells,
            method: Method::Circulant { sqrt_eig, fft },
        })
    }

    fn cholesky(row: &[f64]) -> Result<Self> {
        let n = row.len();
        let mut c = DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]);
        let trace: f64 = row[0] * n as f64;
        for i in 0..n {
            c[(i, i)] += JITTER * trace / n as f64;
        }
        match c.clone().cholesky() {
            Some(ch) => Ok(Self {
                cells: n,
                method: Method::Cholesky(ch.l()),
            }),
            None => {
                let min = c.symmetric_eigenvalues().min();
                Err(Error::IndefiniteCovariance { value: min, jitter: JITTER * trace })
            }
        }
    }

    /// One path; sample `index` of the stream seeded by `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        match &self.method {
            Method::Circulant { sqrt_eig, fft } => {
                let mut z: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|s| {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        let b: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(a * s, b * s)
                    })
                    .collect();
                fft.process(&mut z);
                z[..self.cells].iter().map(|v| v.re).collect()
            }
            Method::Cholesky(l) => {
                let z = nalgebra::DVector::from_fn(self.cells, |_, _| StandardNormal.sample(&mut rng));
                (l * z).iter().copied().collect()
            }
        }
    }
}

pub fn sample_noise(kernels: &KernelTable, grid: TimeGrid, n: usize, seed: u64) -> Result<NoiseEnsemble> {
    if grid != kernels.grid {
        return Err(Error::param("grid", "noise grid differs from the kernel table grid"));
    }
    let sampler = NoiseSampler::new(kernels)?;
    let paths = (0..n as u64).into_par_iter().map(|i| sampler.draw(seed, i)).collect();
    Ok(NoiseEnsemble {
        grid,
        n_samples: n,
        seed,
        paths,
    })
}

/// `V′(x) = Σ_k c_k x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub coeffs: Vec<f64>,
}

impl Potential {
    pub fn harmonic(model: &SpectralModel) -> Self {
        Self {
            coeffs: vec![0.0, model.mass * model.omega * model.omega],
        }
    }

    pub fn is_linear(&self) -> bool {
        self.coeffs.iter().skip(2).all(|&c| c == 0.0)
    }

    pub fn force(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn stiffness(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl Trajectory {
    pub fn z(&self, i: usize) -> Vec2 {
        Vec2::new(self.x[i], self.p[i])
    }
}

enum Memory {
    /// `2γ₀ p`, no slip.
    Local(f64),
    /// `γ(t) = c e^{−Λt}`: exact recursion.
    Exponential { c: f64, decay: f64, alpha: f64, beta: f64 },
    /// Trapezoid convolution against tabulated `γ`.
    Table(Vec<f64>),
}

impl Memory {
    fn new(kernels: &KernelTable) -> Self {
        let m = &kernels.model;
        let dt = kernels.grid.dt;
        match m.family {
            Family::Local => Memory::Local(m.gamma0),
            Family::OhmicLorentzCutoff => {
                let a = m.cutoff * dt;
                let e = (-a).exp();
                // ∫₀^dt e^{−Λs}(s/dt)ds and ∫₀^dt e^{−Λs}(1 − s/dt)ds, in units of dt
                let (alpha, beta) = if a < 1e-4 {
                    (0.5 - a / 3.0, 0.5 - a / 6.0)
                } else {
                    let alpha = (1.0 - e * (1.0 + a)) / (a * a);
                    (alpha, (1.0 - e) / a - alpha)
                };
                Memory::Exponential {
                    c: 0.5 * m.gamma0 * m.cutoff,
                    decay: e,
                    alpha,
                    beta,
                }
            }
            Family::OhmicExpCutoff => Memory::Table(kernels.gamma.clone()),
        }
    }
}

/// One trajectory from `z0` under the cell-averaged force `noise`.
pub fn integrate_path(kernels: &KernelTable, potential: &Potential, z0: Vec2, noise: &[f64]) -> Result<Trajectory> {
    let grid = kernels.grid;
    let model = &kernels.model;
    let (m, dt, n) = (model.mass, grid.dt, grid.len());
    if noise.len() < grid.steps {
        return Err(Error::param("noise", "path shorter than the number of grid cells"));
    }
    let memory = Memory::new(kernels);
    let slip = |i: usize| match &memory {
        Memory::Local(_) => 0.0,
        Memory::Exponential { c, .. } => 2.0 * m * c * (-model.cutoff * grid.time(i)).exp() * z0[0],
        Memory::Table(g) => 2.0 * m * g[i] * z0[0],
    };
    let mut x = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    x.push(z0[0]);
    p.push(z0[1]);
    // 2 × memory integral at the current step
    let mut mem = match &memory {
        Memory::Local(g) => 2.0 * g * z0[1],
        _ => 0.0,
    };
    let mut force = -potential.force(z0[0]) - mem - slip(0);
    for i in 0..grid.steps {
        let (xn, pn) = (x[i], p[i]);
        // mem_{i+1} = known + 2κ p_{i+1}
        let (known, kappa) = match &memory {
            Memory::Local(g) => (0.0, *g),
            Memory::Exponential { c, decay, alpha, beta } => (decay * mem + 2.0 * c * dt * alpha * pn, c * dt * beta),
            Memory::Table(g) => {
                let mut acc = 0.5 * g[i + 1] * p[0];
                for k in 1..=i {
                    acc += g[i + 1 - k] * p[k];
                }
                (2.0 * dt * acc, 0.5 * dt * g[0])
            }
        };
        let drive = slip(i + 1);
        let eta = noise[i];
        let residual = |xn1: f64| {
            let pn1 = 2.0 * m * (xn1 - xn) / dt - pn;
            let f1 = -potential.force(xn1) - known - 2.0 * kappa * pn1 - drive;
            pn1 - pn - 0.5 * dt * (force + f1) - dt * eta
        };
        let slope = |xn1: f64| (2.0 * m / dt) * (1.0 + dt * kappa) + 0.5 * dt * potential.stiffness(xn1);
        let mut xn1 = xn + dt * pn / m;
        for _ in 0..50 {
            let step = residual(xn1) / slope(xn1);
            xn1 -= step;
            if step.abs() <= 1e-15 * (1.0 + xn1.abs()) {
                break;
            }
        }
        let pn1 = 2.0 * m * (xn1 - xn) / dt - pn;
        if !(xn1.is_finite() && pn1.is_finite()) || xn1.abs().max(pn1.abs()) > 1e12 {
            return Err(Error::Unstable { sample: 0, step: i + 1 });
        }
        mem = known + 2.0 * kappa * pn1;
        force = -potential.force(xn1) - mem - drive;
        x.push(xn1);
        p.push(pn1);
    }
    Ok(Trajectory { x, p })
}

pub fn integrate_langevin(
    kernels: &KernelTable,
    potential: &Potential,
    z0: Vec2,
    ensemble: &NoiseEnsemble,
) -> Result<Vec<Trajectory>> {
    ensemble
        .paths
        .par_iter()
        .enumerate()
        .map(|(s, path)| {
            integrate_path(kernels, potential, z0, path).map_err(|e| match e {
                Error::Unstable { step, .. } => Error::Unstable { sample: s, step },
                e => e,
            })
        })
        .collect()
}

/// Gaussian initial phase-space state; a zero covariance makes it deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl InitialState {
    pub fn point(z: Vec2) -> Self {
        Self { mean: z, cov: Mat2::zeros() }
    }

    fn draw(&self, seed: u64, index: u64) -> Vec2 {
        if self.cov == Mat2::zeros() {
            return self.mean;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(index);
        let l = self.cov.cholesky().map(|c| c.l()).unwrap_or_else(|| {
            let e = self.cov.symmetric_eigen();
            e.eigenvectors * Mat2::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()))
        });
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        self.mean + l * Vec2::new(a, b)
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    n: usize,
    sum: Vec<Vec2>,
    prod: Vec<[f64; 3]>,
    prod_sq: Vec<[f64; 3]>,
    pair: Vec<Mat2>,
    pair_sq: Vec<Mat2>,
}

impl Accumulator {
    fn new(len: usize, pairs: usize) -> Self {
        Self {
            n: 0,
            sum: vec![Vec2::zeros(); len],
            prod: vec![[0.0; 3]; len],
            prod_sq: vec![[0.0; 3]; len],
            pair: vec![Mat2::zeros(); pairs],
            pair_sq: vec![Mat2::zeros(); pairs],
        }
    }

    fn add(&mut self, dev: &[Vec2], pairs: &[(usize, usize)]) {
        self.n += 1;
        for (i, d) in dev.iter().enumerate() {
            self.sum[i] += d;
            let q = [d[0] * d[0], d[0] * d[1], d[1] * d[1]];
            for k in 0..3 {
                self.prod[i][k] += q[k];
                self.prod_sq[i][k] += q[k] * q[k];
            }
        }
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let o = dev[a] * dev[b].transpose();
            self.pair[k] += o;
            self.pair_sq[k] += o.component_mul(&o);
        }
    }

    fn merge(&mut self, other: &Self) {
        self.n += other.n;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            for k in 0..3 {
                self.prod[i][k] += other.prod[i][k];
                self.prod_sq[i][k] += other.prod_sq[i][k];
            }
        }
        for k in 0..self.pair.len() {
            self.pair[k] += other.pair[k];
            self.pair_sq[k] += other.pair_sq[k];
        }
    }
}

/// Ensemble moments of `ζ(t) = z(t) − reference(t)`.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub grid: TimeGrid,
    pub n: usize,
    pub seed: u64,
    pub mean: Vec<Vec2>,
    /// Equal-time covariance and its standard error.
    pub cov: Vec<Mat2>,
    pub cov_err: Vec<Mat2>,
    pub pairs: Vec<(usize, usize)>,
    /// `⟨ζ(t_a)ζ(t_b)ᵀ⟩ − ⟨ζ(t_a)⟩⟨ζ(t_b)⟩ᵀ` and its standard error.
    pub pair_cov: Vec<Mat2>,
    pub pair_err: Vec<Mat2>,
}

impl EnsembleStats {
    /// Columnar export `t ⟨x⟩ ⟨p⟩ σxx σxp σpp se_xx se_xp se_pp`.
    pub fn export(&self) -> String {
        let mut s = format!("# n={} seed={}\n# t mean_x mean_p cov_xx cov_xp cov_pp se_xx se_xp se_pp\n", self.n, self.seed);
        for i in 0..self.grid.len() {
            let (m, c, e) = (self.mean[i], self.cov[i], self.cov_err[i]);
            s.push_str(&format!(
                "{:.6} {:.10e} {:.10e} {:.10e} {:.10e} {:.10e} {:.4e} {:.4e} {:.4e}\n",
                self.grid.time(i),
                m[0],
                m[1],
                c[(0, 0)],
                c[(0, 1)],
                c[(1, 1)],
                e[(0, 0)],
                e[(0, 1)],
                e[(1, 1)]
            ));
        }
        s
    }
}

/// Runs `n` trajectories in fixed chunks (bit-reproducible for any thread count)
/// and accumulates moments. `reference` defaults to zero.
pub fn run_ensemble(
    kernels: &KernelTable,
    potential: &Potential,
    initial: &InitialState,
    n: usize,
    seed: u64,
    reference: Option<&[Vec2]>,
    pairs: &[(usize, usize)],
) -> Result<EnsembleStats> {
    let grid = kernels.grid;
    let len = grid.len();
    if n < 2 {
        return Err(Error::param("oracle.n", "need at least two trajectories"));
    }
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= len || *b >= len) {
        return Err(Error::OffGrid { time: grid.time(a.max(b)), dt: grid.dt });
    }
    let sampler = NoiseSampler::new(kernels)?;
    let chunks: Vec<Accumulator> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::new(len, pairs.len());
            let mut dev = vec![Vec2::zeros(); len];
            for s in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let noise = sampler.draw(seed, s as u64);
                let z0 = initial.draw(seed, s as u64);
                let tr = integrate_path(kernels, potential, z0, &noise).map_err(|e| match e {
                    Error::Unstable { step, .. } => Error::Unstable { sample: s, step },
                    e => e,
                })?;
                for (i, d) in dev.iter_mut().enumerate() {
                    *d = tr.z(i) - reference.map_or(Vec2::zeros(), |r| r[i]);
                }
                acc.add(&dev, pairs);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(len, pairs.len());
    for c in &chunks {
        total.merge(c);
    }
    let nf = n as f64;
    let mean: Vec<Vec2> = total.sum.iter().map(|s| s / nf).collect();
    let mut cov = Vec::with_capacity(len);
    let mut cov_err = Vec::with_capacity(len);
    for i in 0..len {
        let mu = mean[i];
        let mm = [mu[0] * mu[0], mu[0] * mu[1], mu[1] * mu[1]];
        let mut c = [0.0; 3];
        let mut e = [0.0; 3];
        for k in 0..3 {
            let m2 = total.prod[i][k] / nf;
            c[k] = (m2 - mm[k]) * nf / (nf - 1.0);
            e[k] = ((total.prod_sq[i][k] / nf - m2 * m2).max(0.0) / nf).sqrt();
        }
        cov.push(Mat2::new(c[0], c[1], c[1], c[2]));
        cov_err.push(Mat2::new(e[0], e[1], e[1], e[2]));
    }
    let mut pair_cov = Vec::with_capacity(pairs.len());
    let mut pair_err = Vec::with_capacity(pairs.len());
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let m2 = total.pair[k] / nf;
        pair_cov.push((m2 - mean[a] * mean[b].transpose()) * (nf / (nf - 1.0)));
        let var = total.pair_sq[k] / nf - m2.component_mul(&m2);
        pair_err.push(var.map(|v| (v.max(0.0) / nf).sqrt()));
    }
    Ok(EnsembleStats {
        grid,
        n,
        seed,
        mean,
        cov,
        cov_err,
        pairs: pairs.to_vec(),
        pair_cov,
        pair_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::PropagatorTable;

    fn model(family: Family) -> SpectralModel {
        SpectralModel {
            family,
            gamma0: 2.0,
            cutoff: 10.0,
            temperature: 0.5,
            mass: 1.0,
            omega: 2.0,
        }
    }

    #[test]
    fn potential_polynomial() {
        let v = Potential { coeffs: vec![1.0, 2.0, 0.0, 3.0] };
        assert_eq!(v.force(2.0), 1.0 + 4.0 + 24.0);
        assert_eq!(v.stiffness(2.0), 2.0 + 36.0);
        assert!(!v.is_linear());
    }

    #[test]
    fn noiseless_trajectory_follows_propagator() {
        for family in [Family::Local, Family::OhmicLorentzCutoff, Family::OhmicExpCutoff] {
            let m = model(family);
            let g = TimeGrid::new(3.0, 0.005).unwrap();
            let k = KernelTable::build(&m, g).unwrap();
            let prop = PropagatorTable::new(&m, g).unwrap();
            let z0 = Vec2::new(1.0, 0.5);
            let tr = integrate_path(&k, &Potential::harmonic(&m), z0, &vec![0.0; g.steps]).unwrap();
            let err = (0..g.len())
                .map(|i| (tr.z(i) - prop.phi[i] * z0).abs().max())
                .fold(0.0, f64::max);
            // second-order integrator: ~3e-4 at dt = 0.005, quartering per halving
            assert!(err < 5e-4, "{family}: {err}");
        }
    }

    #[test]
    fn sampler_shape_and_determinism() {
        let m = model(Family::OhmicLorentzCutoff);
        let g = TimeGrid::new(1.0, 0.005).unwrap();
        let k = KernelTable::build(&m, g).unwrap();
        let e = sample_noise(&k, g, 1, 7).unwrap();
        assert_eq!(e.paths.len(), 1);
        assert_eq!(e.paths[0].len(), g.steps);
        let again = sample_noise(&k, g, 1, 7).unwrap();
        assert_eq!(e.paths, again.paths);
        assert_eq!(NoiseSampler::new(&k).unwrap().method(), "circulant");
    }

    #[test]
    fn noise_covariance_matches_kernel() {
        let m = model(Family::OhmicLorentzCutoff);
        let g = TimeGrid::new(0.5, 0.005).unwrap();
        let k = KernelTable::build(&m, g).unwrap();
        let n = 20_000;
        let e = sample_noise(&k, g, n, 11).unwrap();
        for (i, j) in [(0, 0), (3, 4), (10, 50), (40, 41), (99, 0)] {
            let xs: Vec<f64> = e.paths.iter().map(|p| p[i] * p[j]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            let target = k.nu_avg[i.abs_diff(j)];
            assert!((mean - target).abs() < 5.0 * se, "({i},{j}) {mean} vs {target} ± {se}");
        }
        let mean0 = e.paths.iter().map(|p| p[20]).sum::<f64>() / n as f64;
        assert!(mean0.abs() < 5.0 * (k.nu_avg[0] / n as f64).sqrt());
    }

    #[test]
    fn ensemble_is_reproducible() {
        let m = model(Family::OhmicLorentzCutoff);
        let g = TimeGrid::new(0.2, 0.005).unwrap();
        let k = KernelTable::build(&m, g).unwrap();
        let init = InitialState::point(Vec2::zeros());
        let a = run_ensemble(&k, &Potential::harmonic(&m), &init, 1100, 3, None, &[(10, 20)]).unwrap();
        let b = run_ensemble(&k, &Potential::harmonic(&m), &init, 1100, 3, None, &[(10, 20)]).unwrap();
        assert_eq!(a.export(), b.export());
        assert_eq!(a.pair_cov, b.pair_cov);
    }
}
