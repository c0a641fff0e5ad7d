//! Two-time thermal covariance `σ_T(t₁,t₂)` and the kernels derived from it.
//!
//! With `Ξ = (0, ξ)` only the `(p,p)` block of the noise covariance is
//! nonzero, so `Φ(t₁−τ₁) 𝝂 Φᵀ(t₂−τ₂) = ν(τ₁−τ₂) u(t₁−τ₁) u(t₂−τ₂)ᵀ` with
//! `u = Φ p̂`. Both integrals use trapezoid weights and the cell-averaged
//! kernel, which makes the table the exact covariance of the discretized
//! noise that the Monte Carlo oracle samples.

use rayon::prelude::*;

use crate::bath::KernelTable;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::propagator::{Mat2, PropagatorTable, Vec2};
use crate::quad::{fd_weights, gregory_weights};

#[derive(Debug, Clone)]
pub struct CovarianceTable {
    pub grid: TimeGrid,
    /// Packed upper triangle: block `(i, j)`, `i ≤ j`, at `j(j+1)/2 + i`.
    sigma: Vec<Mat2>,
    /// `dσ_T(t,t)/dt` on the grid.
    pub sigma_dot: Vec<Mat2>,
}

/// Row vector `d(τ,t)` of `Δ^[1](τ,t) = d·∇`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delta1Coeff {
    pub tau: f64,
    pub t: f64,
    pub d: Vec2,
}

fn packed(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

/// Half-hat pair weights `P_{σρ}(m)` tabulated for `|m| < n`.
pub(crate) struct PairWeights {
    n: usize,
    table: Vec<[f64; 4]>,
}

impl PairWeights {
    pub(crate) fn new(kernels: &KernelTable) -> Self {
        let n = kernels.grid.len();
        let table = (-(n as isize) + 1..n as isize)
            .map(|m| {
                [
                    kernels.pair_weight(1, 1, m),
                    kernels.pair_weight(1, -1, m),
                    kernels.pair_weight(-1, 1, m),
                    kernels.pair_weight(-1, -1, m),
                ]
            })
            .collect();
        Self { n, table }
    }

    fn get(&self, a: usize, b: usize) -> &[f64; 4] {
        &self.table[a + self.n - 1 - b]
    }

    /// `v_σ[a] = Σ_b ∫∫ h_σ(τ₁ − τ_a) ν(τ₁ − τ₂) φ_b(τ₂) dτ₁dτ₂ · u[j − b]` for the
    /// hat basis `φ_b` of `[0, t_j]`, with `σ` the right and left half hats.
    pub(crate) fn columns(&self, u: &[Vec2], j: usize) -> (Vec<Vec2>, Vec<Vec2>) {
        let mut vp = vec![Vec2::zeros(); j + 1];
        let mut vm = vec![Vec2::zeros(); j + 1];
        for a in 0..=j {
            let (mut p, mut q) = (Vec2::zeros(), Vec2::zeros());
            for b in 0..=j {
                let w = self.get(a, b);
                let (mut wp, mut wm) = (0.0, 0.0);
                if b < j {
                    wp += w[0];
                    wm += w[2];
                }
                if b > 0 {
                    wp += w[1];
                    wm += w[3];
                }
                p += wp * u[j - b];
                q += wm * u[j - b];
            }
            vp[a] = p;
            vm[a] = q;
        }
        (vp, vm)
    }
}

/// `Σ_a f[i − a] (v₊[a]·[a < i] + v₋[a]·[a > 0])ᵀ`: the outer hat sum over `[0, t_i]`.
pub(crate) fn outer(f: &[Vec2], i: usize, vp: &[Vec2], vm: &[Vec2]) -> Mat2 {
    let mut acc = Mat2::zeros();
    for a in 0..=i {
        let mut v = Vec2::zeros();
        if a < i {
            v += vp[a];
        }
        if a > 0 {
            v += vm[a];
        }
        acc += f[i - a] * v.transpose();
    }
    acc
}

/// `σ̇_T(t_j,t_j) = B + Bᵀ` with `B = p̂[∫₀^{t_j} ν(s)u(s)ds]ᵀ + ∫∫ u̇(t_j−τ₁)ν(τ₁−τ₂)u(t_j−τ₂)ᵀ`,
/// both by hat quadrature; `vp`, `vm` are the pair-weighted columns of `u` at `j`.
fn sigma_dot_at(kernels: &KernelTable, u: &[Vec2], udot: &[Vec2], vp: &[Vec2], vm: &[Vec2], j: usize) -> Mat2 {
    let mut edge = Vec2::zeros();
    for b in 0..=j {
        let m = (j - b) as isize;
        let mut w = 0.0;
        if b < j {
            w += kernels.single_weight(1, m);
        }
        if b > 0 {
            w += kernels.single_weight(-1, m);
        }
        edge += w * u[j - b];
    }
    let b = Vec2::new(0.0, 1.0) * edge.transpose() + outer(&udot[..=j], j, vp, vm);
    b + b.transpose()
}

/// Richardson step against the same formula on the `2·dt` grid. The hat
/// interpolation of `u̇` is second order with a constant that grows with the
/// cutoff; the correction is cubic-interpolated onto odd indices.
fn extrapolate_sigma_dot(fine: Vec<Mat2>, u: &[Vec2], udot: &[Vec2], kernels: &KernelTable) -> Result<Vec<Mat2>> {
    let Some(coarse) = kernels.coarsened()? else {
        return Ok(fine);
    };
    let nc = coarse.grid.len();
    let uc: Vec<Vec2> = (0..nc).map(|i| u[2 * i]).collect();
    let udc: Vec<Vec2> = (0..nc).map(|i| udot[2 * i]).collect();
    let pairs = PairWeights::new(&coarse);
    let corr: Vec<Mat2> = (0..nc)
        .into_par_iter()
        .map(|j| {
            if j == 0 {
                return Mat2::zeros();
            }
            let (vp, vm) = pairs.columns(&uc, j);
            (fine[2 * j] - sigma_dot_at(&coarse, &uc, &udc, &vp, &vm, j)) / 3.0
        })
        .collect();
    let width = nc.min(4);
    Ok(fine
        .iter()
        .enumerate()
        .map(|(k, sd)| {
            if k % 2 == 0 {
                return sd + corr[k / 2];
            }
            let x = k as f64 / 2.0;
            let start = (k / 2).saturating_sub(1).min(nc - width);
            let nodes: Vec<f64> = (start..start + width).map(|i| i as f64).collect();
            let w = fd_weights(x, &nodes, 0);
            let c = w.iter().enumerate().fold(Mat2::zeros(), |acc, (i, wi)| acc + corr[start + i] * *wi);
            sd + c
        })
        .collect())
}

fn symmetrize_last(col: &mut [Mat2]) {
    if let Some(d) = col.last_mut() {
        *d = 0.5 * (*d + d.transpose());
    }
}

impl CovarianceTable {
    pub fn build(prop: &PropagatorTable, kernels: &KernelTable) -> Result<Self> {
        check_grids(prop.grid, kernels.grid)?;
        if let Some(white) = kernels.white {
            return Ok(Self::build_white(prop, white));
        }
        let n = prop.grid.len();
        let u: Vec<Vec2> = (0..n).map(|i| prop.kick_response(i)).collect();
        let udot: Vec<Vec2> = (0..n).map(|i| prop.kick_response_rate(i)).collect();
        let pairs = PairWeights::new(kernels);
        let columns: Vec<(Vec<Mat2>, Mat2)> = (0..n)
            .into_par_iter()
            .map(|j| {
                if j == 0 {
                    return (vec![Mat2::zeros()], Mat2::zeros());
                }
                let (vp, vm) = pairs.columns(&u, j);
                let col: Vec<Mat2> = (0..=j).map(|i| outer(&u[..=i], i, &vp, &vm)).collect();
                (col, sigma_dot_at(kernels, &u, &udot, &vp, &vm, j))
            })
            .collect();
        let mut sigma = Vec::with_capacity(n * (n + 1) / 2);
        let mut sigma_dot = Vec::with_capacity(n);
        for (mut col, sd) in columns {
            symmetrize_last(&mut col);
            sigma.extend(col);
            sigma_dot.push(sd);
        }
        let sigma_dot = extrapolate_sigma_dot(sigma_dot, &u, &udot, kernels)?;
        Ok(Self {
            grid: prop.grid,
            sigma,
            sigma_dot,
        })
    }

    /// White noise of intensity `w`: `σ_T(t₁,t₂) = w ∫₀^{min} u(t₁−τ)u(t₂−τ)ᵀ dτ`.
    fn build_white(prop: &PropagatorTable, white: f64) -> Self {
        let n = prop.grid.len();
        let dt = prop.grid.dt;
        let u: Vec<Vec2> = (0..n).map(|i| prop.kick_response(i)).collect();
        let columns: Vec<Vec<Mat2>> = (0..n)
            .into_par_iter()
            .map(|j| {
                (0..=j)
                    .map(|i| {
                        if i == 0 {
                            return Mat2::zeros();
                        }
                        let w = gregory_weights(i + 1);
                        let mut acc = Mat2::zeros();
                        for a in 0..=i {
                            acc += w[a] * u[i - a] * u[j - a].transpose();
                        }
                        acc * (white * dt)
                    })
                    .collect()
            })
            .collect();
        Self {
            grid: prop.grid,
            sigma: columns
                .into_iter()
                .flat_map(|mut c| {
                    symmetrize_last(&mut c);
                    c
                })
                .collect(),
            sigma_dot: u.iter().map(|u| white * u * u.transpose()).collect(),
        }
    }

    /// `σ_T(t_i, t_j)` by grid index.
    pub fn sigma(&self, i: usize, j: usize) -> Mat2 {
        if i <= j {
            self.sigma[packed(i, j)]
        } else {
            self.sigma[packed(j, i)].transpose()
        }
    }

    pub fn sigma_at(&self, t1: f64, t2: f64) -> Result<Mat2> {
        Ok(self.sigma(self.grid.index(t1)?, self.grid.index(t2)?))
    }

    pub fn equal_time(&self, i: usize) -> Mat2 {
        self.sigma(i, i)
    }

    /// `d(τ,t) = x̂ᵀ[Φ(τ,t)σ_T(t,t) − σ_T(τ,t)]` by grid index.
    pub fn delta1_idx(&self, prop: &PropagatorTable, tau: usize, t: usize) -> Result<Vec2> {
        let rel = prop.phi_rel_idx(tau, t)?;
        let m = rel * self.sigma(t, t) - self.sigma(tau, t);
        Ok(m.row(0).transpose())
    }

    /// `s(τ,t) = x̂ᵀ[σ(τ,τ) + Φ(τ,t)σ(t,t)Φᵀ(τ,t) − 2Φ(τ,t)σ(t,τ)]x̂`.
    pub fn s_idx(&self, prop: &PropagatorTable, tau: usize, t: usize) -> Result<f64> {
        let rel = prop.phi_rel_idx(tau, t)?;
        let m = self.sigma(tau, tau) + rel * self.sigma(t, t) * rel.transpose()
            - 2.0 * rel * self.sigma(t, tau);
        Ok(m[(0, 0)])
    }

    /// Columnar export `t σ_xx σ_xp σ_pp` of the equal-time covariance.
    pub fn export_diagonal(&self) -> String {
        let mut out = String::from("# t sigma_xx sigma_xp sigma_pp\n");
        for i in 0..self.grid.len() {
            let s = self.equal_time(i);
            out.push_str(&format!(
                "{:.6} {:.16e} {:.16e} {:.16e}\n",
                self.grid.time(i),
                s[(0, 0)],
                s[(0, 1)],
                s[(1, 1)]
            ));
        }
        out
    }
}

fn check_grids(a: TimeGrid, b: TimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::param("grid", "propagator and kernel tables use different grids"));
    }
    Ok(())
}

/// Single block of `σ_T(t₁,t₂)` straight from the double sum, without a table.
pub fn sigma_t(prop: &PropagatorTable, kernels: &KernelTable, t1: f64, t2: f64) -> Result<Mat2> {
    check_grids(prop.grid, kernels.grid)?;
    let (i, j) = (prop.grid.index(t1)?, prop.grid.index(t2)?);
    if i == 0 || j == 0 {
        return Ok(Mat2::zeros());
    }
    let dt = prop.grid.dt;
    if let Some(white) = kernels.white {
        let k = i.min(j);
        let w = gregory_weights(k + 1);
        let mut acc = Mat2::zeros();
        for a in 0..=k {
            acc += w[a] * prop.kick_response(i - a) * prop.kick_response(j - a).transpose();
        }
        return Ok(acc * (white * dt));
    }
    // same hat-basis double sum, assembled pair by pair
    let halves = |a: usize, end: usize| [(1i8, a < end), (-1i8, a > 0)];
    let mut acc = Mat2::zeros();
    for a in 0..=i {
        for b in 0..=j {
            let mut c = 0.0;
            for (sg, on_a) in halves(a, i) {
                for (rh, on_b) in halves(b, j) {
                    if on_a && on_b {
                        c += kernels.pair_weight(sg, rh, a as isize - b as isize);
                    }
                }
            }
            acc += c * prop.kick_response(i - a) * prop.kick_response(j - b).transpose();
        }
    }
    Ok(acc)
}

pub fn delta1_coeff(prop: &PropagatorTable, cov: &CovarianceTable, tau: f64, t: f64) -> Result<Delta1Coeff> {
    let (i, j) = (prop.grid.index(tau)?, prop.grid.index(t)?);
    if i > j {
        return Err(Error::param("tau", "requires tau <= t"));
    }
    Ok(Delta1Coeff {
        tau,
        t,
        d: cov.delta1_idx(prop, i, j)?,
    })
}

pub fn s_kernel(prop: &PropagatorTable, cov: &CovarianceTable, tau: f64, t: f64) -> Result<f64> {
    let (i, j) = (prop.grid.index(tau)?, prop.grid.index(t)?);
    if i > j {
        return Err(Error::param("tau", "requires tau <= t"));
    }
    cov.s_idx(prop, i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{Family, SpectralModel};

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

    fn tables(m: SpectralModel, t_max: f64, dt: f64) -> (PropagatorTable, KernelTable, CovarianceTable) {
        let g = TimeGrid::new(t_max, dt).unwrap();
        let p = PropagatorTable::new(&m, g).unwrap();
        let k = KernelTable::build(&m, g).unwrap();
        let c = CovarianceTable::build(&p, &k).unwrap();
        (p, k, c)
    }

    #[test]
    fn boundary_values_and_symmetry() {
        let (p, k, c) = tables(model(Family::OhmicLorentzCutoff), 1.5, 0.005);
        assert_eq!(c.sigma(0, 200), Mat2::zeros());
        assert_eq!(c.sigma(200, 0), Mat2::zeros());
        let a = sigma_t(&p, &k, 0.4, 0.9).unwrap();
        let b = sigma_t(&p, &k, 0.9, 0.4).unwrap();
        assert!((a - b.transpose()).abs().max() < 1e-9);
        assert!((a - c.sigma_at(0.4, 0.9).unwrap()).abs().max() < 1e-12);
        assert_eq!(c.sigma_dot[0], Mat2::zeros());
        for i in 0..c.grid.len() {
            let s = c.equal_time(i);
            assert!((s - s.transpose()).abs().max() < 1e-14);
            let e = s.symmetric_eigenvalues();
            assert!(e.min() >= -1e-10 * s.trace().abs());
        }
    }

    fn derivative_gap(family: Family, dt: f64) -> f64 {
        let (_, _, c) = tables(model(family), 0.5, dt);
        let mut gap = 0.0f64;
        for t in [0.1, 0.25, 0.4] {
            let i = c.grid.index(t).unwrap();
            let w = crate::quad::fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
            let fd = (0..5).fold(Mat2::zeros(), |acc, k| acc + c.equal_time(i + k - 2) * (w[k] / dt));
            gap = gap.max((fd - c.sigma_dot[i]).abs().max() / c.sigma_dot[i].abs().max());
        }
        gap
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for family in [Family::OhmicExpCutoff, Family::OhmicLorentzCutoff] {
            let coarse = derivative_gap(family, 0.005);
            let fine = derivative_gap(family, 0.0025);
            // second order in dt on both kernels
            assert!(coarse < 1e-3 && fine < 0.3 * coarse, "{family}: {coarse} {fine}");
        }
    }

    #[test]
    fn delta1_and_s_vanish_at_edges() {
        let (p, _, c) = tables(model(Family::OhmicLorentzCutoff), 1.0, 0.005);
        assert!(delta1_coeff(&p, &c, 0.7, 0.7).unwrap().d.abs().max() < 1e-14);
        assert_eq!(delta1_coeff(&p, &c, 0.0, 0.0).unwrap().d, Vec2::zeros());
        assert!(s_kernel(&p, &c, 0.7, 0.7).unwrap().abs() < 1e-14);
        assert_eq!(s_kernel(&p, &c, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn local_family_matches_lyapunov_solution() {
        // constant 𝓗 and white noise: σ(t) = ∫₀ᵗ e^{−𝓗s} 2D e^{−𝓗ᵀs} ds
        let mut m = model(Family::Local);
        m.gamma0 = 0.5;
        m.temperature = 3.0;
        let (_, _, c) = tables(m, 2.0, 0.005);
        let h = Mat2::new(0.0, -1.0, 4.0, 1.0);
        let d = Mat2::new(0.0, 0.0, 0.0, 2.0 * 0.5 * 3.0);
        // RK4 on σ̇ = −𝓗σ − σ𝓗ᵀ + 2D
        let f = |s: Mat2| -h * s - s * h.transpose() + 2.0 * d;
        let mut s = Mat2::zeros();
        let hdt = 0.0005;
        for _ in 0..4000 {
            let k1 = f(s);
            let k2 = f(s + 0.5 * hdt * k1);
            let k3 = f(s + 0.5 * hdt * k2);
            let k4 = f(s + hdt * k3);
            s += hdt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let got = c.equal_time(400);
        assert!((got - s).abs().max() < 1e-7 * s.abs().max(), "{got} vs {s}");
    }

    #[test]
    fn second_order_grid_convergence() {
        for family in [Family::OhmicExpCutoff, Family::OhmicLorentzCutoff] {
            grid_order(model(family));
        }
    }

    fn grid_order(m: SpectralModel) {
        let vals: Vec<Mat2> = [0.01, 0.005, 0.0025]
            .iter()
            .map(|&dt| {
                let (_, _, c) = tables(m, 1.0, dt);
                c.equal_time(c.grid.len() - 1)
            })
            .collect();
        let e1 = (vals[0] - vals[1]).abs().max();
        let e2 = (vals[1] - vals[2]).abs().max();
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "{}: order {order}", m.family);
    }
}
