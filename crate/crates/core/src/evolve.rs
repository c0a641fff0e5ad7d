//! Wigner functions on a rectangular phase-space window and their explicit
//! time evolution under a generator `∂W/∂t = 𝓛(t) W`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::opalg::{Axis, Boundary, PhaseOp, Stencil};
use crate::propagator::{Mat2, Vec2};

/// Samples `W(x_i, p_j)` stored row-major in `x` (`values[i * np + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub x_range: (f64, f64),
    pub p_range: (f64, f64),
    pub nx: usize,
    pub np: usize,
    pub values: Vec<f64>,
    pub time: f64,
}

impl WignerGrid {
    pub fn from_fn(x_range: (f64, f64), p_range: (f64, f64), nx: usize, np: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut w = Self {
            x_range,
            p_range,
            nx,
            np,
            values: vec![0.0; nx * np],
            time: 0.0,
        };
        for i in 0..nx {
            let x = w.x(i);
            for j in 0..np {
                w.values[i * np + j] = f(x, w.p(j));
            }
        }
        w
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn hx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    pub fn hp(&self) -> f64 {
        (self.p_range.1 - self.p_range.0) / (self.np - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range.0 + i as f64 * self.hx()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_range.0 + j as f64 * self.hp()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.np + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `W ← W + a·other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
    }

    pub(crate) fn multiply_coordinates(&self, kx: u32, kp: u32) -> Self {
        if kx == 0 && kp == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        let pp: Vec<f64> = (0..self.np).map(|j| self.p(j).powi(kp as i32)).collect();
        for i in 0..self.nx {
            let xx = self.x(i).powi(kx as i32);
            for j in 0..self.np {
                out.values[i * self.np + j] *= xx * pp[j];
            }
        }
        out
    }

    pub(crate) fn differentiate(&self, axis: Axis, order: usize, accuracy: usize, boundary: Boundary) -> Result<Self> {
        let mut out = self.zeros_like();
        let (nx, np) = (self.nx, self.np);
        match axis {
            Axis::X => {
                let st = Stencil::new(nx, self.hx(), order, accuracy, boundary)?;
                for i in 0..nx {
                    let dst = &mut out.values[i * np..(i + 1) * np];
                    for (k, w) in st.weights[i].iter().enumerate() {
                        let src = &self.values[(st.start[i] + k) * np..(st.start[i] + k + 1) * np];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
            Axis::P => {
                let st = Stencil::new(np, self.hp(), order, accuracy, boundary)?;
                for i in 0..nx {
                    let row = &self.values[i * np..(i + 1) * np];
                    let dst = &mut out.values[i * np..(i + 1) * np];
                    for j in 0..np {
                        let s = st.start[j];
                        dst[j] = st.weights[j].iter().zip(&row[s..]).map(|(w, v)| w * v).sum();
                    }
                }
            }
        }
        Ok(out)
    }

    /// `∫∫ W dx dp` (Riemann sum; the window is required to hold W's support).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.hx() * self.hp()
    }

    /// First and second moments `(z̄, Cov z)` by grid quadrature.
    pub fn moments(&self) -> (Vec2, Mat2) {
        let norm = self.values.iter().sum::<f64>();
        let mut mean = Vec2::zeros();
        for i in 0..self.nx {
            for j in 0..self.np {
                mean += self.get(i, j) * Vec2::new(self.x(i), self.p(j));
            }
        }
        mean /= norm;
        let mut cov = Mat2::zeros();
        for i in 0..self.nx {
            for j in 0..self.np {
                let d = Vec2::new(self.x(i), self.p(j)) - mean;
                cov += self.get(i, j) * d * d.transpose();
            }
        }
        (mean, cov / norm)
    }

    /// Excess kurtosis of the `x` and `p` marginals.
    pub fn marginal_excess_kurtosis(&self) -> (f64, f64) {
        let (mean, cov) = self.moments();
        let norm = self.values.iter().sum::<f64>();
        let (mut kx, mut kp) = (0.0, 0.0);
        for i in 0..self.nx {
            for j in 0..self.np {
                let w = self.get(i, j);
                kx += w * (self.x(i) - mean[0]).powi(4);
                kp += w * (self.p(j) - mean[1]).powi(4);
            }
        }
        (
            kx / norm / cov[(0, 0)].powi(2) - 3.0,
            kp / norm / cov[(1, 1)].powi(2) - 3.0,
        )
    }

    /// Returns a message when `W` exceeds `1e-8·max|W|` within five cells of
    /// any edge.
    pub fn window_warning(&self) -> Option<String> {
        let limit = 1e-8 * self.max_abs();
        let band = 5.min(self.nx / 2).min(self.np / 2);
        let mut worst = 0.0f64;
        for i in 0..self.nx {
            for j in 0..self.np {
                let edge = i < band || j < band || i >= self.nx - band || j >= self.np - band;
                if edge {
                    worst = worst.max(self.get(i, j).abs());
                }
            }
        }
        (worst > limit).then(|| {
            format!(
                "Wigner function reaches {worst:.3e} (> 1e-8 of peak) near the window edge at t = {}",
                self.time
            )
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::NonFinite {
                ix: k / self.np,
                ip: k % self.np,
            }),
            None => Ok(()),
        }
    }

    /// Writes `<stem>.bin` (little-endian f64, row-major in x) and a
    /// `<stem>.txt` sidecar; returns both paths.
    pub fn write_snapshot(&self, stem: &Path, header: &str) -> Result<(PathBuf, PathBuf)> {
        let bin = stem.with_extension("bin");
        let txt = stem.with_extension("txt");
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin, bytes)?;
        let mut f = fs::File::create(&txt)?;
        writeln!(f, "{header}")?;
        writeln!(f, "nx = {}", self.nx)?;
        writeln!(f, "np = {}", self.np)?;
        writeln!(f, "x_min = {:e}", self.x_range.0)?;
        writeln!(f, "x_max = {:e}", self.x_range.1)?;
        writeln!(f, "p_min = {:e}", self.p_range.0)?;
        writeln!(f, "p_max = {:e}", self.p_range.1)?;
        writeln!(f, "time = {:e}", self.time)?;
        writeln!(f, "layout = row-major in x, f64 little-endian")?;
        Ok((bin, txt))
    }

    pub fn read_snapshot(stem: &Path) -> Result<Self> {
        let txt = fs::read_to_string(stem.with_extension("txt"))?;
        let field = |key: &str| -> Result<f64> {
            txt.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .and_then(|(_, v)| v.trim().parse().ok())
                .ok_or_else(|| Error::param("snapshot", format!("missing `{key}` in sidecar")))
        };
        let (nx, np) = (field("nx")? as usize, field("np")? as usize);
        let bytes = fs::read(stem.with_extension("bin"))?;
        if bytes.len() != nx * np * 8 {
            return Err(Error::param("snapshot", "binary size does not match sidecar dimensions"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            x_range: (field("x_min")?, field("x_max")?),
            p_range: (field("p_min")?, field("p_max")?),
            nx,
            np,
            values,
            time: field("time")?,
        })
    }

    /// Coarse text matrix (every `stride`-th sample) for quick plotting.
    pub fn coarse_text(&self, stride: usize) -> String {
        let stride = stride.max(1);
        let mut s = String::new();
        for i in (0..self.nx).step_by(stride) {
            let row: Vec<String> = (0..self.np).step_by(stride).map(|j| format!("{:.6e}", self.get(i, j))).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Window `mean ± width·σ` on each axis.
pub fn gaussian_window(mean: Vec2, cov: Mat2, width: f64) -> ((f64, f64), (f64, f64)) {
    let (sx, sp) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
    (
        (mean[0] - width * sx, mean[0] + width * sx),
        (mean[1] - width * sp, mean[1] + width * sp),
    )
}

/// Normalized Gaussian Wigner function on the given window, which must cover
/// `mean ± 6σ` on both axes.
pub fn init_gaussian(
    mean: Vec2,
    cov: Mat2,
    x_range: (f64, f64),
    p_range: (f64, f64),
    nx: usize,
    np: usize,
) -> Result<WignerGrid> {
    let det = cov.determinant();
    if !(cov[(0, 0)] > 0.0 && det > 0.0) || (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 * cov.abs().max() {
        return Err(Error::param("wigner.covariance", "must be symmetric positive definite"));
    }
    if nx < 3 || np < 3 {
        return Err(Error::Window("need at least three samples per axis".into()));
    }
    let ((xl, xh), (pl, ph)) = gaussian_window(mean, cov, 6.0);
    if x_range.0 > xl || x_range.1 < xh || p_range.0 > pl || p_range.1 < ph {
        return Err(Error::Window(format!(
            "window x∈[{}, {}], p∈[{}, {}] does not cover mean ± 6σ = x∈[{xl:.4}, {xh:.4}], p∈[{pl:.4}, {ph:.4}]",
            x_range.0, x_range.1, p_range.0, p_range.1
        )));
    }
    let inv = cov.try_inverse().expect("positive definite");
    let c = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    Ok(WignerGrid::from_fn(x_range, p_range, nx, np, |x, p| {
        let d = Vec2::new(x - mean[0], p - mean[1]);
        c * (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp()
    }))
}

/// Largest explicit step the generator allows on this grid:
/// `0.25·min(h^q / (|c|·max|x^k p^l|))` over its derivative monomials of order `q`.
pub fn cfl_bound(w: &WignerGrid, l: &PhaseOp) -> f64 {
    let xmax = w.x_range.0.abs().max(w.x_range.1.abs());
    let pmax = w.p_range.0.abs().max(w.p_range.1.abs());
    let mut bound = f64::INFINITY;
    for (m, c) in l.terms() {
        if m.derivative_order() == 0 {
            continue;
        }
        let size = c.abs() * xmax.powi(m.x as i32) * pmax.powi(m.p as i32);
        let h = w.hx().powi(m.dx as i32) * w.hp().powi(m.dp as i32);
        if size > 0.0 {
            bound = bound.min(h / size);
        }
    }
    0.25 * bound
}

/// One Heun step with the generator frozen over the step.
pub fn step(w: &WignerGrid, l: &PhaseOp, dt: f64) -> Result<WignerGrid> {
    step_between(w, l, l, dt, 4)
}

/// Heun step with `l0` at the start and `l1` at the end of the step.
pub fn step_between(w: &WignerGrid, l0: &PhaseOp, l1: &PhaseOp, dt: f64, accuracy: usize) -> Result<WignerGrid> {
    let bound = cfl_bound(w, l0).min(cfl_bound(w, l1));
    if dt > bound {
        return Err(Error::Cfl { dt, bound });
    }
    let k1 = l0.apply(w, accuracy)?;
    let mut mid = w.clone();
    mid.axpy(dt, &k1);
    let k2 = l1.apply(&mid, accuracy)?;
    let mut out = w.clone();
    out.axpy(0.5 * dt, &k1);
    out.axpy(0.5 * dt, &k2);
    out.time = w.time + dt;
    out.check_finite()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveReport {
    pub time: f64,
    pub norm: f64,
}

/// Evolves `w` from `w.time` to `w.time + duration` with `substeps` Heun
/// steps per unit of `report_dt`, querying `generator(t)` at every step.
/// `observe` sees the grid after every report interval.
pub fn evolve<G, O>(
    mut w: WignerGrid,
    duration: f64,
    report_dt: f64,
    substeps: usize,
    accuracy: usize,
    mut generator: G,
    mut observe: O,
) -> Result<(WignerGrid, Vec<EvolveReport>)>
where
    G: FnMut(f64) -> Result<PhaseOp>,
    O: FnMut(usize, &WignerGrid) -> Result<()>,
{
    let intervals = (duration / report_dt).round() as usize;
    let h = report_dt / substeps as f64;
    let t0 = w.time;
    let mut reports = vec![EvolveReport { time: t0, norm: w.integral() }];
    observe(0, &w)?;
    let mut l_now = generator(t0)?;
    for k in 0..intervals {
        for s in 0..substeps {
            let t_next = t0 + k as f64 * report_dt + (s + 1) as f64 * h;
            let l_next = generator(t_next)?;
            w = step_between(&w, &l_now, &l_next, h, accuracy)?;
            w.time = t_next;
            l_now = l_next;
        }
        reports.push(EvolveReport { time: w.time, norm: w.integral() });
        observe(k + 1, &w)?;
    }
    Ok((w, reports))
}

/// Gaussian moment equations `ż̄ = −𝓗z̄`, `σ̇ = −𝓗σ − σ𝓗ᵀ + 2𝐃`, RK4 with
/// `steps` steps of size `dt`; `coeffs(t)` returns `(𝓗, 𝐃)`.
pub fn gaussian_moments(
    mean: Vec2,
    cov: Mat2,
    t0: f64,
    dt: f64,
    steps: usize,
    coeffs: impl Fn(f64) -> (Mat2, Mat2),
) -> Vec<(f64, Vec2, Mat2)> {
    let rhs = |t: f64, z: Vec2, s: Mat2| {
        let (h, d) = coeffs(t);
        (-h * z, -h * s - s * h.transpose() + 2.0 * d)
    };
    let mut out = vec![(t0, mean, cov)];
    let (mut z, mut s) = (mean, cov);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let (a1, b1) = rhs(t, z, s);
        let (a2, b2) = rhs(t + 0.5 * dt, z + 0.5 * dt * a1, s + 0.5 * dt * b1);
        let (a3, b3) = rhs(t + 0.5 * dt, z + 0.5 * dt * a2, s + 0.5 * dt * b2);
        let (a4, b4) = rhs(t + dt, z + dt * a3, s + dt * b3);
        z += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        s += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        out.push((t + dt, z, s));
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> WignerGrid {
        init_gaussian(Vec2::zeros(), Mat2::identity(), (-8.0, 8.0), (-8.0, 8.0), 161, 161).unwrap()
    }

    #[test]
    fn gaussian_initialization() {
        let w = unit();
        assert!((w.get(80, 80) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((w.integral() - 1.0).abs() < 1e-6);
        let cov = Mat2::new(0.3, 0.1, 0.1, 0.8);
        let mean = Vec2::new(0.5, -1.0);
        let (xr, pr) = gaussian_window(mean, cov, 8.0);
        let w = init_gaussian(mean, cov, xr, pr, 121, 121).unwrap();
        let (m, c) = w.moments();
        assert!((m - mean).abs().max() < 1e-10);
        assert!((c - cov).abs().max() < 1e-4);
        assert!(w.window_warning().is_none());
    }

    #[test]
    fn initialization_errors() {
        let small = init_gaussian(Vec2::zeros(), Mat2::identity(), (-3.0, 3.0), (-8.0, 8.0), 41, 41);
        assert!(matches!(small, Err(Error::Window(_))));
        let bad = init_gaussian(Vec2::zeros(), Mat2::new(1.0, 2.0, 2.0, 1.0), (-9.0, 9.0), (-9.0, 9.0), 41, 41);
        assert!(matches!(bad, Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn zero_generator_is_stationary() {
        let w = unit();
        let next = step(&w, &PhaseOp::zero(), 0.1).unwrap();
        assert_eq!(next.values, w.values);
    }

    #[test]
    fn cfl_violation_and_nan_detection() {
        let w = unit();
        let l = PhaseOp::monomial(1.0, 0, 2, 0, 0);
        let bound = cfl_bound(&w, &l);
        assert!((bound - 0.25 * w.hp().powi(2)).abs() < 1e-15);
        assert!(matches!(step(&w, &l, 2.0 * bound), Err(Error::Cfl { .. })));
        let mut bad = w.clone();
        bad.values[3 * w.np + 7] = f64::NAN;
        assert!(matches!(bad.check_finite(), Err(Error::NonFinite { ix: 3, ip: 7 })));
    }

    #[test]
    fn undamped_rotation_and_diffusion_follow_moment_equations() {
        let h = Mat2::new(0.0, -1.0, 4.0, 0.3);
        let d = Mat2::new(0.0, 0.0, 0.0, 0.2);
        let l = crate::master::fokker_planck_operator(h, d);
        let mean = Vec2::new(1.0, 0.0);
        let cov = Mat2::new(0.25, 0.0, 0.0, 1.0);
        let w = init_gaussian(mean, cov, (-5.0, 5.0), (-8.0, 8.0), 121, 151).unwrap();
        let total = 1.0;
        let n = (total / (0.5 * cfl_bound(&w, &l))).ceil() as usize;
        let (w1, rep) = evolve(w, total, total, n, 4, |_| Ok(l.clone()), |_, _| Ok(())).unwrap();
        let oracle = gaussian_moments(mean, cov, 0.0, total / 1000.0, 1000, |_| (h, d));
        let (_, z, s) = oracle.last().unwrap();
        let (zm, sm) = w1.moments();
        assert!((zm - z).abs().max() < 1e-3, "{zm} {z}");
        assert!((sm - s).abs().max() < 1e-3 * s.abs().max(), "{sm} {s}");
        assert!((rep[1].norm - rep[0].norm).abs() < 1e-9);
        let (kx, kp) = w1.marginal_excess_kurtosis();
        assert!(kx.abs() < 1e-2 && kp.abs() < 1e-2);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = init_gaussian(Vec2::zeros(), Mat2::identity(), (-7.0, 7.0), (-7.0, 7.0), 31, 17).unwrap();
        let stem = dir.path().join("w0");
        w.write_snapshot(&stem, "# test").unwrap();
        let r = WignerGrid::read_snapshot(&stem).unwrap();
        assert_eq!(r, w);
        assert_eq!(w.coarse_text(10).lines().count(), 4);
    }
}
