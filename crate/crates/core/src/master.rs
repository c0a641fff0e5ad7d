//! Time-local generators of the reduced Wigner dynamics: the zeroth-order
//! Fokker–Planck generator `𝓛₀ = ∇ᵀ𝓗z + ∇ᵀ𝐃∇` and the first-order
//! correction `𝓛₁` for weak additional forcing.
//!
//! `𝓛₁(t) = {d/dt − Ad[𝓛₀(t)]} A(t)` with `A(t) = ∫₀ᵗ δ𝓛̄(τ,t) dτ`; the
//! upper-limit term of the derivative supplies `δ𝓛(t) = δ𝓛̄(t,t)`.

use rayon::prelude::*;

use crate::covariance::{outer, CovarianceTable, PairWeights};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::opalg::{Monomial, PhaseOp};
use crate::propagator::{Mat2, PropagatorTable, Vec2};
use crate::quad::{fd_weights, gregory_weights};

/// Time-local coefficients at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterCoefficients {
    pub t: f64,
    pub h: Mat2,
    pub d: Mat2,
    pub l0: PhaseOp,
    pub l1: Option<PhaseOp>,
}

/// `𝓗(t)` and `𝐃(t)` on the whole grid.
#[derive(Debug, Clone)]
pub struct MasterTable {
    pub grid: TimeGrid,
    pub h: Vec<Mat2>,
    pub d: Vec<Mat2>,
}

/// One term `F_db(τ) [∇ᵀΦ(t−τ)p̂]^d Σ_k C(b,k) [x̂ᵀΦ(τ,t)z]^{b−k} Δ^[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTerm {
    pub d: u32,
    pub b: u32,
    pub coeff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingKind {
    /// Force `F(t)` on the momentum.
    External(Vec<f64>),
    /// Linear drift perturbation `∇ᵀK(t)z`.
    Linear(Vec<Mat2>),
    /// Force `−k₁x²`.
    Quadratic(Vec<f64>),
    /// Force `−k₂x³`.
    Cubic(Vec<f64>),
    GeneralPolynomial(Vec<PolyTerm>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    /// Drops the `∂ₚ³` deformation terms of the quadratic and cubic kinds.
    pub classical_characteristics_only: bool,
}

impl ForcingSpec {
    pub fn new(kind: ForcingKind) -> Self {
        Self {
            kind,
            classical_characteristics_only: false,
        }
    }

    pub fn external(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::new(ForcingKind::External(grid.times().map(f).collect()))
    }

    pub fn linear(grid: TimeGrid, k: impl Fn(f64) -> Mat2) -> Self {
        Self::new(ForcingKind::Linear(grid.times().map(k).collect()))
    }

    pub fn quadratic(grid: TimeGrid, k1: impl Fn(f64) -> f64) -> Self {
        Self::new(ForcingKind::Quadratic(grid.times().map(k1).collect()))
    }

    pub fn cubic(grid: TimeGrid, k2: impl Fn(f64) -> f64) -> Self {
        Self::new(ForcingKind::Cubic(grid.times().map(k2).collect()))
    }

    pub fn general(terms: Vec<PolyTerm>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.d == 0 && t.b == 0) {
            return Err(Error::param(
                "forcing.terms",
                format!("term (d={}, b={}) needs d >= 1 or b >= 1", t.d, t.b),
            ));
        }
        Ok(Self::new(ForcingKind::GeneralPolynomial(terms)))
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ForcingKind::External(_) => "external",
            ForcingKind::Linear(_) => "linear",
            ForcingKind::Quadratic(_) => "quadratic",
            ForcingKind::Cubic(_) => "cubic",
            ForcingKind::GeneralPolynomial(_) => "general",
        }
    }

    fn samples(&self) -> usize {
        match &self.kind {
            ForcingKind::External(v) | ForcingKind::Quadratic(v) | ForcingKind::Cubic(v) => v.len(),
            ForcingKind::Linear(v) => v.len(),
            ForcingKind::GeneralPolynomial(t) => t.iter().map(|t| t.coeff.len()).min().unwrap_or(usize::MAX),
        }
    }

    /// The equivalent list of `(d, b, F_db)` terms, deformation terms included.
    /// Not available for the matrix-valued linear kind.
    pub fn poly_terms(&self) -> Option<Vec<PolyTerm>> {
        let quantum = !self.classical_characteristics_only;
        let scaled = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<_>>();
        Some(match &self.kind {
            ForcingKind::External(f) => vec![PolyTerm { d: 1, b: 0, coeff: scaled(f, -1.0) }],
            ForcingKind::Linear(_) => return None,
            ForcingKind::Quadratic(k) => {
                let mut v = vec![PolyTerm { d: 1, b: 2, coeff: k.clone() }];
                if quantum {
                    v.push(PolyTerm { d: 3, b: 0, coeff: scaled(k, -1.0 / 12.0) });
                }
                v
            }
            ForcingKind::Cubic(k) => {
                let mut v = vec![PolyTerm { d: 1, b: 3, coeff: k.clone() }];
                if quantum {
                    v.push(PolyTerm { d: 3, b: 1, coeff: scaled(k, -0.25) });
                }
                v
            }
            ForcingKind::GeneralPolynomial(t) => t.clone(),
        })
    }
}

/// `∇ᵀMz = Σ M_ij ∂_i z_j`.
pub fn drift_operator(m: Mat2) -> PhaseOp {
    let mut op = PhaseOp::zero();
    op.add_term(m[(0, 0)], Monomial::new(1, 0, 1, 0));
    op.add_term(m[(0, 1)], Monomial::new(1, 0, 0, 1));
    op.add_term(m[(1, 0)], Monomial::new(0, 1, 1, 0));
    op.add_term(m[(1, 1)], Monomial::new(0, 1, 0, 1));
    op.canonical()
}

/// `∇ᵀN∇`.
pub fn diffusion_operator(n: Mat2) -> PhaseOp {
    let mut op = PhaseOp::zero();
    op.add_term(n[(0, 0)], Monomial::new(2, 0, 0, 0));
    op.add_term(n[(0, 1)] + n[(1, 0)], Monomial::new(1, 1, 0, 0));
    op.add_term(n[(1, 1)], Monomial::new(0, 2, 0, 0));
    op.canonical()
}

/// `∇ᵀ𝓗z + ∇ᵀ𝐃∇`.
pub fn fokker_planck_operator(h: Mat2, d: Mat2) -> PhaseOp {
    drift_operator(h) + diffusion_operator(d)
}

/// Coefficients of `∂_i z_j` as a matrix.
pub fn drift_matrix(op: &PhaseOp) -> Mat2 {
    Mat2::new(
        op.coeff(Monomial::new(1, 0, 1, 0)),
        op.coeff(Monomial::new(1, 0, 0, 1)),
        op.coeff(Monomial::new(0, 1, 1, 0)),
        op.coeff(Monomial::new(0, 1, 0, 1)),
    )
}

/// Coefficients of `∂ₓ` and `∂ₚ`.
pub fn drift_vector(op: &PhaseOp) -> Vec2 {
    Vec2::new(op.coeff(Monomial::new(1, 0, 0, 0)), op.coeff(Monomial::new(0, 1, 0, 0)))
}

/// Symmetric matrix of the second-derivative sector.
pub fn diffusion_matrix(op: &PhaseOp) -> Mat2 {
    let c = 0.5 * op.coeff(Monomial::new(1, 1, 0, 0));
    Mat2::new(op.coeff(Monomial::new(2, 0, 0, 0)), c, c, op.coeff(Monomial::new(0, 2, 0, 0)))
}

impl MasterTable {
    pub fn build(prop: &PropagatorTable, cov: &CovarianceTable) -> Result<Self> {
        let n = prop.grid.len();
        let mut h = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let (hi, di) = hpz_idx(prop, cov, i)?;
            h.push(hi);
            d.push(di);
        }
        Ok(Self { grid: prop.grid, h, d })
    }

    pub fn l0(&self, i: usize) -> PhaseOp {
        fokker_planck_operator(self.h[i], self.d[i])
    }

    /// `𝓛₀` at an arbitrary time by linear interpolation of the coefficients.
    pub fn l0_at(&self, t: f64) -> PhaseOp {
        let (h, d) = self.coefficients_at(t);
        fokker_planck_operator(h, d)
    }

    pub fn coefficients_at(&self, t: f64) -> (Mat2, Mat2) {
        let x = (t / self.grid.dt).clamp(0.0, self.grid.steps as f64);
        let i = (x.floor() as usize).min(self.grid.steps.saturating_sub(1));
        let f = x - i as f64;
        if self.grid.steps == 0 {
            return (self.h[0], self.d[0]);
        }
        (
            self.h[i] * (1.0 - f) + self.h[i + 1] * f,
            self.d[i] * (1.0 - f) + self.d[i + 1] * f,
        )
    }

    /// Columnar export `t H11 H12 H21 H22 D11 D12 D22`.
    pub fn export(&self) -> String {
        let mut s = String::from("# t H11 H12 H21 H22 D11 D12 D22\n");
        for i in 0..self.grid.len() {
            let (h, d) = (self.h[i], self.d[i]);
            s.push_str(&format!(
                "{:.6} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}\n",
                self.grid.time(i),
                h[(0, 0)],
                h[(0, 1)],
                h[(1, 0)],
                h[(1, 1)],
                d[(0, 0)],
                d[(0, 1)],
                d[(1, 1)]
            ));
        }
        s
    }
}

/// `𝓗 = −Φ̇Φ⁻¹`, `𝐃 = ½(𝓗σ + σ𝓗ᵀ + σ̇)` at grid index `i`.
pub fn hpz_idx(prop: &PropagatorTable, cov: &CovarianceTable, i: usize) -> Result<(Mat2, Mat2)> {
    let h = -prop.phidot[i] * prop.inverse_idx(i)?;
    let s = cov.equal_time(i);
    let d = 0.5 * (h * s + s * h.transpose() + cov.sigma_dot[i]);
    Ok((h, 0.5 * (d + d.transpose())))
}

pub fn hpz_coefficients(prop: &PropagatorTable, cov: &CovarianceTable, t: f64) -> Result<MasterCoefficients> {
    let i = prop.grid.index(t)?;
    let (h, d) = hpz_idx(prop, cov, i)?;
    Ok(MasterCoefficients {
        t: prop.grid.time(i),
        h,
        d,
        l0: fokker_planck_operator(h, d),
        l1: None,
    })
}

pub fn build_l0(coeffs: &MasterCoefficients) -> PhaseOp {
    fokker_planck_operator(coeffs.h, coeffs.d)
}

/// Building blocks of the two-time operator at `(τ, t)`.
#[derive(Debug, Clone)]
pub struct TwoTimeBlocks {
    /// `Φ(t−τ)`.
    pub phi: Mat2,
    /// `Φ(τ,t)`.
    pub rel: Mat2,
    /// `Φ(τ,t)σ_T(t,t) − σ_T(τ,t)`.
    pub n: Mat2,
    pub s: f64,
}

impl TwoTimeBlocks {
    pub fn new(prop: &PropagatorTable, cov: &CovarianceTable, tau: usize, t: usize) -> Result<Self> {
        if tau > t {
            return Err(Error::param("tau", "requires tau <= t"));
        }
        let rel = prop.phi_rel_idx(tau, t)?;
        Ok(Self {
            phi: prop.phi[t - tau],
            rel,
            n: rel * cov.sigma(t, t) - cov.sigma(tau, t),
            s: cov.s_idx(prop, tau, t)?,
        })
    }

    /// `∇ᵀΦ(t−τ)p̂`.
    pub fn p_op(&self) -> PhaseOp {
        PhaseOp::gradient(self.phi[(0, 1)], self.phi[(1, 1)])
    }

    /// `x̂ᵀΦ(τ,t)z`.
    pub fn x_op(&self) -> PhaseOp {
        PhaseOp::linear(self.rel[(0, 0)], self.rel[(0, 1)])
    }

    /// `Δ^[1] = d·∇`.
    pub fn delta1(&self) -> PhaseOp {
        PhaseOp::gradient(self.n[(0, 0)], self.n[(0, 1)])
    }
}

/// `Δ^[k]` from `Δ^[k] = Δ^[1]Δ^[k−1] − (k−1) s Δ^[k−2]`.
pub fn delta_k_from(delta1: &PhaseOp, s: f64, k: u32) -> Result<PhaseOp> {
    let mut prev = PhaseOp::identity().with_cap(delta1.cap());
    if k == 0 {
        return Ok(prev);
    }
    let mut cur = delta1.clone();
    for j in 2..=k {
        let next = delta1.product(&cur)? - prev.scale((j - 1) as f64 * s);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

pub fn delta_k(prop: &PropagatorTable, cov: &CovarianceTable, tau: f64, t: f64, k: u32) -> Result<PhaseOp> {
    let b = TwoTimeBlocks::new(prop, cov, prop.grid.index(tau)?, prop.grid.index(t)?)?;
    delta_k_from(&b.delta1(), b.s, k)
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `[∇ᵀΦ p̂]^d Σ_k C(b,k) X^{b−k} Δ^[k]` without the coefficient.
pub fn polynomial_structure(blocks: &TwoTimeBlocks, d: u32, b: u32) -> Result<PhaseOp> {
    let x = blocks.x_op();
    let delta1 = blocks.delta1();
    let mut sum = PhaseOp::zero();
    for k in 0..=b {
        let dk = delta_k_from(&delta1, blocks.s, k)?;
        sum = sum + x.pow(b - k)?.product(&dk)?.scale(binom(b, k));
    }
    blocks.p_op().pow(d)?.product(&sum)
}

/// `δ𝓛̄(τ,t)` by grid index.
pub fn two_time_operator_idx(
    spec: &ForcingSpec,
    prop: &PropagatorTable,
    cov: &CovarianceTable,
    tau: usize,
    t: usize,
) -> Result<PhaseOp> {
    if spec.samples() < prop.grid.len() {
        return Err(Error::param("forcing", "coefficient series shorter than the time grid"));
    }
    let blocks = TwoTimeBlocks::new(prop, cov, tau, t)?;
    if let ForcingKind::Linear(k) = &spec.kind {
        // ∇ᵀΦ(t−τ)K(τ){Φ(τ,t)z + N∇}
        let a = blocks.phi * k[tau];
        let grads = [PhaseOp::dx(), PhaseOp::dp()];
        let coords = [
            PhaseOp::linear(blocks.rel[(0, 0)], blocks.rel[(0, 1)]) + PhaseOp::gradient(blocks.n[(0, 0)], blocks.n[(0, 1)]),
            PhaseOp::linear(blocks.rel[(1, 0)], blocks.rel[(1, 1)]) + PhaseOp::gradient(blocks.n[(1, 0)], blocks.n[(1, 1)]),
        ];
        let mut op = PhaseOp::zero();
        for i in 0..2 {
            for j in 0..2 {
                if a[(i, j)] != 0.0 {
                    op = op + grads[i].product(&coords[j])?.scale(a[(i, j)]);
                }
            }
        }
        return Ok(op);
    }
    let mut op = PhaseOp::zero();
    for term in spec.poly_terms().expect("polynomial kind") {
        let c = term.coeff[tau];
        if c != 0.0 {
            op = op + polynomial_structure(&blocks, term.d, term.b)?.scale(c);
        }
    }
    Ok(op)
}

pub fn two_time_operator(
    spec: &ForcingSpec,
    prop: &PropagatorTable,
    cov: &CovarianceTable,
    tau: f64,
    t: f64,
) -> Result<PhaseOp> {
    two_time_operator_idx(spec, prop, cov, prop.grid.index(tau)?, prop.grid.index(t)?)
}

/// `δ𝓛(t)` from the time-local forms, independent of any propagator.
pub fn local_operator(spec: &ForcingSpec, t: usize) -> Result<PhaseOp> {
    if let ForcingKind::Linear(k) = &spec.kind {
        return Ok(drift_operator(k[t]));
    }
    let mut op = PhaseOp::zero();
    for term in spec.poly_terms().expect("polynomial kind") {
        op = op + PhaseOp::monomial(term.coeff[t], 0, term.d, term.b, 0);
    }
    Ok(op)
}

/// `A(t_k) = ∫₀^{t_k} δ𝓛̄(τ,t_k) dτ` with fourth-order Gregory weights.
pub fn integrated_operator(spec: &ForcingSpec, prop: &PropagatorTable, cov: &CovarianceTable, k: usize) -> Result<PhaseOp> {
    if k == 0 {
        return Ok(PhaseOp::zero());
    }
    let w = gregory_weights(k + 1);
    let dt = prop.grid.dt;
    let mut acc = PhaseOp::zero();
    for (tau, wt) in w.iter().enumerate() {
        acc = acc + two_time_operator_idx(spec, prop, cov, tau, k)?.scale(wt * dt);
    }
    Ok(acc)
}

/// Five grid nodes for `d/dt` at index `k`, nearest first. Index 1 is left
/// out because `A(t₁)` only has a trapezoid estimate.
fn derivative_nodes(k: usize, len: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..len).filter(|&i| i != 1 || len < 7).collect();
    cand.sort_by_key(|&i| (i.abs_diff(k), i));
    let mut nodes: Vec<usize> = cand.into_iter().take(5.min(len)).collect();
    nodes.sort_unstable();
    nodes
}

/// `𝓛₁` at the grid indices `at` (parallel over the required `A(t)`).
pub fn build_l1_series(
    spec: &ForcingSpec,
    prop: &PropagatorTable,
    cov: &CovarianceTable,
    master: &MasterTable,
    at: &[usize],
) -> Result<Vec<PhaseOp>> {
    let len = prop.grid.len();
    if len < 2 {
        return at.iter().map(|&k| local_operator(spec, k)).collect();
    }
    let mut needed: Vec<usize> = at
        .iter()
        .filter(|&&k| k > 0)
        .flat_map(|&k| {
            let mut v = derivative_nodes(k, len);
            v.push(k);
            v
        })
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let computed: Vec<(usize, PhaseOp)> = needed
        .par_iter()
        .map(|&k| integrated_operator(spec, prop, cov, k).map(|a| (k, a)))
        .collect::<Result<_>>()?;
    let lookup = |k: usize| &computed[computed.binary_search_by_key(&k, |(i, _)| *i).expect("computed")].1;
    let dt = prop.grid.dt;
    at.iter()
        .map(|&k| {
            if k == 0 {
                return local_operator(spec, 0);
            }
            let nodes = derivative_nodes(k, len);
            let xs: Vec<f64> = nodes.iter().map(|&i| i as f64).collect();
            let w = fd_weights(k as f64, &xs, 1);
            let mut deriv = PhaseOp::zero();
            for (&i, wi) in nodes.iter().zip(&w) {
                deriv = deriv + lookup(i).scale(wi / dt);
            }
            let a = lookup(k);
            Ok((deriv - master.l0(k).commutator(a)?).canonical())
        })
        .collect()
}

pub fn build_l1(
    spec: &ForcingSpec,
    prop: &PropagatorTable,
    cov: &CovarianceTable,
    master: &MasterTable,
    t: f64,
) -> Result<PhaseOp> {
    let k = prop.grid.index(t)?;
    Ok(build_l1_series(spec, prop, cov, master, &[k])?.remove(0))
}

/// Closed form of the external-force correction:
/// `−∫₀ᵗ {d/dt + 𝓗(t)} Φ(t−τ) p̂ F(τ) dτ`, returned as the `(∂ₓ, ∂ₚ)` coefficients.
pub fn external_force_correction(prop: &PropagatorTable, master: &MasterTable, force: &[f64], k: usize) -> Vec2 {
    if k == 0 {
        return Vec2::zeros();
    }
    let w = gregory_weights(k + 1);
    let h = master.h[k];
    let mut acc = Vec2::zeros();
    for (tau, wt) in w.iter().enumerate() {
        let u = prop.kick_response(k - tau);
        let ud = prop.kick_response_rate(k - tau);
        acc += (wt * force[tau]) * (ud + h * u);
    }
    -acc * prop.grid.dt
}

/// `𝓗₁(t) = K(t) + ∫₀ᵗ {(d/dt + 𝓗₀(t)) Φ₀(t−τ)} K(τ) Φ₀(τ,t) dτ`, from
/// the first-order propagator `Φ₁ = −∫Φ₀(t−τ)K(τ)Φ₀(τ)dτ`.
pub fn linear_h1(prop: &PropagatorTable, master: &MasterTable, k_series: &[Mat2], k: usize) -> Result<Mat2> {
    let mut acc = Mat2::zeros();
    if k > 0 {
        let w = gregory_weights(k + 1);
        let h = master.h[k];
        for (tau, wt) in w.iter().enumerate() {
            let lead = prop.phidot[k - tau] + h * prop.phi[k - tau];
            acc += *wt * lead * k_series[tau] * prop.phi_rel_idx(tau, k)?;
        }
        acc *= prop.grid.dt;
    }
    Ok(k_series[k] + acc)
}

/// First-order two-time propagator applied to `p̂`:
/// `Φ₁(t,τ)p̂ = −∫_τ^t Φ₀(t−τ′)K(τ′)Φ₀(τ′−τ)p̂ dτ′`.
fn phi1_kick(prop: &PropagatorTable, k_series: &[Mat2], t: usize, tau: usize) -> Vec2 {
    if t == tau {
        return Vec2::zeros();
    }
    let w = gregory_weights(t - tau + 1);
    let mut acc = Vec2::zeros();
    for (j, wt) in w.iter().enumerate() {
        let tp = tau + j;
        acc += *wt * prop.phi[t - tp] * (k_series[tp] * prop.kick_response(tp - tau));
    }
    -acc * prop.grid.dt
}

/// First-order change of the equal-time covariance, `σ₁(t)`, from `Φ₁`.
pub fn linear_sigma1(
    prop: &PropagatorTable,
    kernels: &crate::bath::KernelTable,
    k_series: &[Mat2],
    t: usize,
) -> Mat2 {
    if t == 0 {
        return Mat2::zeros();
    }
    let dt = prop.grid.dt;
    let u1: Vec<Vec2> = (0..=t).map(|a| phi1_kick(prop, k_series, t, a)).collect();
    let s = if let Some(white) = kernels.white {
        let w = gregory_weights(t + 1);
        let mut acc = Mat2::zeros();
        for a in 0..=t {
            acc += w[a] * u1[a] * prop.kick_response(t - a).transpose();
        }
        acc * (white * dt)
    } else {
        let u0: Vec<Vec2> = (0..=t).map(|i| prop.kick_response(i)).collect();
        let (vp, vm) = PairWeights::new(kernels).columns(&u0, t);
        // outer() indexes its first argument as f[t − a]
        let f: Vec<Vec2> = (0..=t).map(|i| u1[t - i]).collect();
        outer(&f, t, &vp, &vm)
    };
    s + s.transpose()
}

/// `𝐃₁(t)` from the `Φ₁` route:
/// `½(𝓗₁σ₀ + σ₀𝓗₁ᵀ + 𝓗₀σ₁ + σ₁𝓗₀ᵀ + σ̇₁)` with `σ̇₁` by five-point differences.
pub fn linear_d1(
    prop: &PropagatorTable,
    cov: &CovarianceTable,
    kernels: &crate::bath::KernelTable,
    master: &MasterTable,
    k_series: &[Mat2],
    k: usize,
) -> Result<Mat2> {
    let len = prop.grid.len();
    let nodes = derivative_nodes(k, len)
        .into_iter()
        .chain(std::iter::once(k))
        .collect::<Vec<_>>();
    let mut nodes_sorted = nodes.clone();
    nodes_sorted.sort_unstable();
    nodes_sorted.dedup();
    // σ₁(0) = 0 exactly, so index 1 may be used here
    let fd_nodes: Vec<usize> = {
        let mut c: Vec<usize> = (0..len).collect();
        c.sort_by_key(|&i| (i.abs_diff(k), i));
        let mut v: Vec<usize> = c.into_iter().take(5.min(len)).collect();
        v.sort_unstable();
        v
    };
    let s1: Vec<(usize, Mat2)> = fd_nodes
        .par_iter()
        .map(|&i| (i, linear_sigma1(prop, kernels, k_series, i)))
        .collect();
    let xs: Vec<f64> = fd_nodes.iter().map(|&i| i as f64).collect();
    let w = fd_weights(k as f64, &xs, 1);
    let mut sdot1 = Mat2::zeros();
    for ((_, s), wi) in s1.iter().zip(&w) {
        sdot1 += *s * (wi / prop.grid.dt);
    }
    let sigma1 = s1.iter().find(|(i, _)| *i == k).map(|(_, s)| *s).expect("k is a node");
    let h0 = master.h[k];
    let h1 = linear_h1(prop, master, k_series, k)?;
    let s0 = cov.equal_time(k);
    let d = 0.5 * (h1 * s0 + s0 * h1.transpose() + h0 * sigma1 + sigma1 * h0.transpose() + sdot1);
    Ok(0.5 * (d + d.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{Family, KernelTable, SpectralModel};

    struct Setup {
        prop: PropagatorTable,
        cov: CovarianceTable,
        master: MasterTable,
    }

    fn setup(family: Family, gamma0: f64, t_max: f64) -> Setup {
        let m = SpectralModel {
            family,
            gamma0,
            cutoff: 10.0,
            temperature: 0.5,
            mass: 1.0,
            omega: 2.0,
        };
        let g = TimeGrid::new(t_max, 0.005).unwrap();
        let prop = PropagatorTable::new(&m, g).unwrap();
        let k = KernelTable::build(&m, g).unwrap();
        let cov = CovarianceTable::build(&prop, &k).unwrap();
        let master = MasterTable::build(&prop, &cov).unwrap();
        Setup { prop, cov, master }
    }

    #[test]
    fn undamped_drift_matrix() {
        let s = setup(Family::OhmicLorentzCutoff, 0.0, 1.0);
        for h in &s.master.h {
            assert!((h - Mat2::new(0.0, -1.0, 4.0, 0.0)).abs().max() < 1e-6);
        }
        assert_eq!(s.master.d[0], Mat2::zeros());
    }

    #[test]
    fn local_high_temperature_diffusion() {
        let m = SpectralModel {
            family: Family::Local,
            gamma0: 0.5,
            cutoff: 1.0,
            temperature: 100.0,
            mass: 1.0,
            omega: 2.0,
        };
        let g = TimeGrid::new(3.0, 0.005).unwrap();
        let prop = PropagatorTable::new(&m, g).unwrap();
        let k = KernelTable::build(&m, g).unwrap();
        let cov = CovarianceTable::build(&prop, &k).unwrap();
        let c = hpz_coefficients(&prop, &cov, 3.0).unwrap();
        assert!((c.d[(1, 1)] / (2.0 * 0.5 * 100.0) - 1.0).abs() < 1e-2);
        assert!((c.h - Mat2::new(0.0, -1.0, 4.0, 1.0)).abs().max() < 1e-10);
    }

    #[test]
    fn l0_structure() {
        assert!(fokker_planck_operator(Mat2::zeros(), Mat2::zeros()).is_zero());
        let l = fokker_planck_operator(Mat2::new(0.0, -1.0, 0.0, 0.0), Mat2::zeros());
        assert_eq!(l, PhaseOp::monomial(-1.0, 1, 0, 0, 1));
        let s = setup(Family::OhmicLorentzCutoff, 2.0, 0.5);
        for i in [0, 17, 100] {
            let l0 = s.master.l0(i);
            assert!(l0.terms().all(|(m, _)| m.derivative_order() > 0));
            assert!((drift_matrix(&l0) - s.master.h[i]).abs().max() < 1e-14);
            assert!((diffusion_matrix(&l0) - s.master.d[i]).abs().max() < 1e-15);
        }
    }

    #[test]
    fn delta_recursion_low_orders() {
        let d1 = PhaseOp::gradient(0.3, -1.2);
        assert_eq!(delta_k_from(&d1, 0.7, 0).unwrap(), PhaseOp::identity());
        assert_eq!(delta_k_from(&d1, 0.7, 1).unwrap(), d1);
        let d2 = delta_k_from(&d1, 0.7, 2).unwrap();
        let expect = d1.product(&d1).unwrap() - PhaseOp::constant(0.7);
        assert!(d2.max_difference(&expect) < 1e-15);
    }

    #[test]
    fn local_operator_matches_two_time_endpoint() {
        let s = setup(Family::OhmicLorentzCutoff, 2.0, 0.5);
        let g = s.prop.grid;
        let spec = ForcingSpec::cubic(g, |t| 1.0 + t);
        for k in [0, 33, 100] {
            let a = two_time_operator_idx(&spec, &s.prop, &s.cov, k, k).unwrap();
            let b = local_operator(&spec, k).unwrap();
            assert_eq!(a.terms().map(|(m, _)| m).collect::<Vec<_>>(), b.terms().map(|(m, _)| m).collect::<Vec<_>>());
            assert!(a.max_difference(&b) < 1e-12);
        }
    }

    #[test]
    fn external_force_l1_has_only_constant_drift() {
        let s = setup(Family::OhmicLorentzCutoff, 2.0, 0.5);
        let f = |t: f64| (3.0 * t).cos();
        let spec = ForcingSpec::external(s.prop.grid, f);
        let force: Vec<f64> = s.prop.grid.times().map(f).collect();
        let at = [0, 1, 2, 7, 50, 100];
        let l1 = build_l1_series(&spec, &s.prop, &s.cov, &s.master, &at).unwrap();
        let (mut err, mut mag) = (0.0f64, 0.0f64);
        for (op, &k) in l1.iter().zip(&at) {
            assert!(op.terms().all(|(m, _)| m.derivative_order() == 1 && m.x == 0 && m.p == 0), "{op}");
            let corr = drift_vector(op) - Vec2::new(0.0, -force[k]);
            let expect = external_force_correction(&s.prop, &s.master, &force, k);
            err = err.max((corr - expect).abs().max());
            mag = mag.max(expect.abs().max());
        }
        assert!(err < 1e-4 * mag, "{err} vs {mag}");
    }

    #[test]
    fn local_dissipation_cancels_external_correction() {
        let s = setup(Family::Local, 0.5, 0.5);
        let spec = ForcingSpec::external(s.prop.grid, |t| (3.0 * t).cos());
        let at: Vec<usize> = (0..=100).step_by(3).collect();
        for (op, &k) in build_l1_series(&spec, &s.prop, &s.cov, &s.master, &at).unwrap().iter().zip(&at) {
            let f = (3.0 * s.prop.grid.time(k)).cos();
            let corr = drift_vector(op) - Vec2::new(0.0, -f);
            assert!(corr.abs().max() < 1e-6, "k={k} {corr}");
        }
    }

    #[test]
    fn linear_forcing_matches_phi1_route() {
        let s = setup(Family::OhmicLorentzCutoff, 2.0, 0.5);
        let kf = |t: f64| Mat2::new(0.0, 0.0, 0.5 + 0.2 * t, 0.0);
        let spec = ForcingSpec::linear(s.prop.grid, kf);
        let ks: Vec<Mat2> = s.prop.grid.times().map(kf).collect();
        let at = [3, 40, 100];
        let l1 = build_l1_series(&spec, &s.prop, &s.cov, &s.master, &at).unwrap();
        for (op, &k) in l1.iter().zip(&at) {
            assert!(op.terms().all(|(m, _)| m.derivative_order() > 0));
            let h1 = linear_h1(&s.prop, &s.master, &ks, k).unwrap();
            assert!((drift_matrix(op) - h1).abs().max() < 1e-6 * h1.abs().max(), "{} {}", drift_matrix(op), h1);
        }
    }

    #[test]
    fn linear_forcing_diffusion_matches_phi1_route() {
        let m = SpectralModel {
            family: Family::OhmicLorentzCutoff,
            gamma0: 2.0,
            cutoff: 10.0,
            temperature: 0.5,
            mass: 1.0,
            omega: 2.0,
        };
        let g = TimeGrid::new(1.0, 0.005).unwrap();
        let prop = PropagatorTable::new(&m, g).unwrap();
        let kt = KernelTable::build(&m, g).unwrap();
        let cov = CovarianceTable::build(&prop, &kt).unwrap();
        let master = MasterTable::build(&prop, &cov).unwrap();
        let kf = |t: f64| Mat2::new(0.0, 0.0, 0.5 + 0.2 * t, 0.0);
        let spec = ForcingSpec::linear(g, kf);
        let ks: Vec<Mat2> = g.times().map(kf).collect();
        let (mut err, mut mag) = (0.0f64, 0.0f64);
        for (op, &k) in build_l1_series(&spec, &prop, &cov, &master, &[20, 100, 200]).unwrap().iter().zip(&[20, 100, 200]) {
            let b = linear_d1(&prop, &cov, &kt, &master, &ks, k).unwrap();
            err = err.max((diffusion_matrix(op) - b).abs().max());
            mag = mag.max(b.abs().max());
        }
        assert!(err < 1e-3 * mag, "{err} {mag}");
    }
}
