//! Normal-ordered phase-space differential operators.
//!
//! A [`PhaseOp`] is a finite sum of monomials `c ∂ₓ^i ∂ₚ^j x^k p^l` with every
//! derivative standing left of every coordinate.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::evolve::WignerGrid;
use crate::quad::fd_weights;

pub const DEFAULT_DEGREE_CAP: u32 = 8;
/// Highest derivative order `apply` has stencils for.
pub const MAX_STENCIL_ORDER: u32 = 8;
const PRUNE: f64 = 1e-14;

/// Exponents of `∂ₓ^dx ∂ₚ^dp x^x p^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub dx: u32,
    pub dp: u32,
    pub x: u32,
    pub p: u32,
}

impl Monomial {
    pub const ONE: Monomial = Monomial::new(0, 0, 0, 0);

    pub const fn new(dx: u32, dp: u32, x: u32, p: u32) -> Self {
        Self { dx, dp, x, p }
    }

    pub fn degree(&self) -> u32 {
        self.dx + self.dp + self.x + self.p
    }

    pub fn derivative_order(&self) -> u32 {
        self.dx + self.dp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOp {
    terms: BTreeMap<Monomial, f64>,
    cap: u32,
}

impl Default for PhaseOp {
    fn default() -> Self {
        Self::zero()
    }
}

fn binom(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

impl PhaseOp {
    pub fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
            cap: DEFAULT_DEGREE_CAP,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::term(c, Monomial::ONE)
    }

    pub fn identity() -> Self {
        Self::constant(1.0)
    }

    pub fn term(c: f64, m: Monomial) -> Self {
        let mut op = Self::zero();
        if c != 0.0 {
            op.terms.insert(m, c);
        }
        op
    }

    pub fn monomial(c: f64, dx: u32, dp: u32, x: u32, p: u32) -> Self {
        Self::term(c, Monomial::new(dx, dp, x, p))
    }

    pub fn dx() -> Self {
        Self::monomial(1.0, 1, 0, 0, 0)
    }

    pub fn dp() -> Self {
        Self::monomial(1.0, 0, 1, 0, 0)
    }

    pub fn x() -> Self {
        Self::monomial(1.0, 0, 0, 1, 0)
    }

    pub fn p() -> Self {
        Self::monomial(1.0, 0, 0, 0, 1)
    }

    /// `a ∂ₓ + b ∂ₚ`.
    pub fn gradient(a: f64, b: f64) -> Self {
        Self::dx() * a + Self::dp() * b
    }

    /// `a x + b p`.
    pub fn linear(a: f64, b: f64) -> Self {
        Self::x() * a + Self::p() * b
    }

    pub fn with_cap(mut self, cap: u32) -> Self {
        self.cap = cap;
        self
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: Monomial) -> f64 {
        self.terms.get(&m).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, c)| (*m, *c))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn derivative_order(&self) -> u32 {
        self.terms.keys().map(Monomial::derivative_order).max().unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn add_term(&mut self, c: f64, m: Monomial) {
        *self.terms.entry(m).or_insert(0.0) += c;
    }

    /// Drops coefficients below `1e-14 · max|c|` and exact zeros.
    pub fn canonical(mut self) -> Self {
        let floor = PRUNE * self.max_abs();
        self.terms.retain(|_, c| *c != 0.0 && c.abs() > floor);
        self
    }

    fn checked(self) -> Result<Self> {
        let op = self.canonical();
        let degree = op.degree();
        if degree > op.cap {
            return Err(Error::DegreeOverflow { degree, cap: op.cap });
        }
        Ok(op)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(m, c)| (*m, c * s)).collect(),
            cap: self.cap,
        }
        .canonical()
    }

    /// Retains only the monomials selected by `keep`.
    pub fn filter(&self, keep: impl Fn(Monomial) -> bool) -> Self {
        Self {
            terms: self.terms.iter().filter(|(m, _)| keep(**m)).map(|(m, c)| (*m, *c)).collect(),
            cap: self.cap,
        }
    }

    /// Composition `self ∘ other`, reordered so derivatives stand left, using
    /// `x^k ∂ₓ^i = Σ_r (−1)^r r! C(k,r) C(i,r) ∂ₓ^{i−r} x^{k−r}`.
    pub fn product(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zero().with_cap(self.cap.max(other.cap));
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                for r in 0..=a.x.min(b.dx) {
                    let fx = if r % 2 == 0 { 1.0 } else { -1.0 }
                        * factorial(r)
                        * binom(a.x, r)
                        * binom(b.dx, r);
                    for s in 0..=a.p.min(b.dp) {
                        let fp = if s % 2 == 0 { 1.0 } else { -1.0 }
                            * factorial(s)
                            * binom(a.p, s)
                            * binom(b.dp, s);
                        let m = Monomial::new(a.dx + b.dx - r, a.dp + b.dp - s, a.x - r + b.x, a.p - s + b.p);
                        out.add_term(ca * cb * fx * fp, m);
                    }
                }
            }
        }
        out.checked()
    }

    pub fn pow(&self, n: u32) -> Result<Self> {
        let mut out = Self::identity().with_cap(self.cap);
        for _ in 0..n {
            out = out.product(self)?;
        }
        Ok(out)
    }

    /// `[self, other]`, the adjoint action `Ad[self](other)`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        Ok((self.product(other)? - other.product(self)?).canonical())
    }

    /// Applies the operator to grid samples: coordinate factors pointwise,
    /// then derivatives by central finite differences of the given accuracy
    /// order (2 or 4), with zero samples assumed outside the window.
    pub fn apply(&self, w: &WignerGrid, accuracy: usize) -> Result<WignerGrid> {
        self.apply_with(w, accuracy, Boundary::ZeroGhost)
    }

    pub fn apply_with(&self, w: &WignerGrid, accuracy: usize, boundary: Boundary) -> Result<WignerGrid> {
        let mut out = w.zeros_like();
        if self.is_zero() {
            return Ok(out);
        }
        let order = self.derivative_order();
        if order > MAX_STENCIL_ORDER {
            return Err(Error::StencilOrder { order, max: MAX_STENCIL_ORDER });
        }
        let mut cache: BTreeMap<(u32, u32), WignerGrid> = BTreeMap::new();
        for (m, c) in &self.terms {
            let key = (m.x, m.p);
            let base = cache.entry(key).or_insert_with(|| w.multiply_coordinates(m.x, m.p));
            let mut f = base.clone();
            if m.dp > 0 {
                f = f.differentiate(Axis::P, m.dp as usize, accuracy, boundary)?;
            }
            if m.dx > 0 {
                f = f.differentiate(Axis::X, m.dx as usize, accuracy, boundary)?;
            }
            out.axpy(*c, &f);
        }
        Ok(out)
    }

    /// One monomial per line, `coeff dx^i dp^j x^k p^l`, sorted by key.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (m, c) in &self.terms {
            s.push_str(&format!("{:+.16e} dx^{} dp^{} x^{} p^{}\n", c, m.dx, m.dp, m.x, m.p));
        }
        s
    }

    /// Parses the [`dump`](Self::dump) format.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut op = Self::zero();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::param("dump", format!("line {}: `{line}`", n + 1));
            let mut parts = line.split_whitespace();
            let c: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let mut exps = [0u32; 4];
            for (slot, prefix) in exps.iter_mut().zip(["dx^", "dp^", "x^", "p^"]) {
                let tok = parts.next().ok_or_else(bad)?;
                *slot = tok.strip_prefix(prefix).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            }
            op.add_term(c, Monomial::new(exps[0], exps[1], exps[2], exps[3]));
        }
        Ok(op.canonical())
    }

    /// Largest coefficient difference against `other` over the union of keys.
    pub fn max_difference(&self, other: &Self) -> f64 {
        let mut d = 0.0f64;
        for (m, c) in &self.terms {
            d = d.max((c - other.coeff(*m)).abs());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                d = d.max(c.abs());
            }
        }
        d
    }
}

impl fmt::Display for PhaseOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            write!(f, "{c:+}")?;
            for (name, e) in [("∂x", m.dx), ("∂p", m.dp), ("x", m.x), ("p", m.p)] {
                match e {
                    0 => {}
                    1 => write!(f, "·{name}")?,
                    _ => write!(f, "·{name}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

impl Add for PhaseOp {
    type Output = PhaseOp;
    fn add(mut self, rhs: PhaseOp) -> PhaseOp {
        for (m, c) in rhs.terms {
            self.add_term(c, m);
        }
        self.cap = self.cap.max(rhs.cap);
        self.canonical()
    }
}

impl Sub for PhaseOp {
    type Output = PhaseOp;
    fn sub(self, rhs: PhaseOp) -> PhaseOp {
        self + (-rhs)
    }
}

impl Neg for PhaseOp {
    type Output = PhaseOp;
    fn neg(self) -> PhaseOp {
        self.scale(-1.0)
    }
}

impl Mul<f64> for PhaseOp {
    type Output = PhaseOp;
    fn mul(self, s: f64) -> PhaseOp {
        self.scale(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    P,
}

/// Edge treatment for grid derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Central stencils throughout, samples beyond the window taken as zero.
    ZeroGhost,
    /// Stencils shifted inwards near the edges, same width.
    OneSided,
}

/// Finite-difference weights for derivative `order` at every node of a
/// uniform axis of `len` points and spacing `h`.
pub(crate) struct Stencil {
    pub start: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

impl Stencil {
    pub fn new(len: usize, h: f64, order: usize, accuracy: usize, boundary: Boundary) -> Result<Self> {
        let accuracy = accuracy.max(2) + accuracy % 2;
        let width = 2 * order.div_ceil(2) - 1 + accuracy;
        if order as u32 > MAX_STENCIL_ORDER || width > len {
            return Err(Error::StencilOrder {
                order: order as u32,
                max: MAX_STENCIL_ORDER.min(len.saturating_sub(accuracy).max(1) as u32),
            });
        }
        let half = width / 2;
        let scale = h.powi(order as i32);
        let central: Vec<f64> = {
            let nodes: Vec<f64> = (0..width).map(|k| k as f64).collect();
            fd_weights(half as f64, &nodes, order).iter().map(|w| w / scale).collect()
        };
        let mut start = Vec::with_capacity(len);
        let mut weights = Vec::with_capacity(len);
        for i in 0..len {
            if boundary == Boundary::ZeroGhost {
                let lo = i.saturating_sub(half);
                let skip = lo + half - i;
                let hi = (i + half).min(len - 1);
                start.push(lo);
                weights.push(central[skip..skip + hi + 1 - lo].to_vec());
                continue;
            }
            let s = i.saturating_sub(half).min(len - width);
            start.push(s);
            if s + half == i {
                weights.push(central.clone());
            } else {
                let nodes: Vec<f64> = (s..s + width).map(|k| k as f64).collect();
                weights.push(fd_weights(i as f64, &nodes, order).iter().map(|w| w / scale).collect());
            }
        }
        Ok(Self { start, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type Poly = BTreeMap<(u32, u32), f64>;

    /// Exact action of an operator on a polynomial in (x, p).
    fn act(op: &PhaseOp, f: &Poly) -> Poly {
        let mut out = Poly::new();
        for (m, c) in op.terms() {
            for (&(a, b), &v) in f {
                let (mut a, mut b) = (a + m.x, b + m.p);
                let mut v = v * c;
                for _ in 0..m.dx {
                    v *= a as f64;
                    a = a.wrapping_sub(1);
                }
                for _ in 0..m.dp {
                    v *= b as f64;
                    b = b.wrapping_sub(1);
                }
                if v != 0.0 {
                    *out.entry((a, b)).or_insert(0.0) += v;
                }
            }
        }
        out.retain(|_, v| *v != 0.0);
        out
    }

    fn op_strategy(max_deg: u32, terms: usize) -> impl Strategy<Value = PhaseOp> {
        prop::collection::vec(((0..=max_deg), (0..=max_deg), (0..=max_deg), (0..=max_deg), -4i32..=4), 1..=terms)
            .prop_map(move |v| {
                let mut op = PhaseOp::zero();
                for (a, b, c, d, k) in v {
                    if a + b + c + d <= max_deg {
                        op.add_term(k as f64, Monomial::new(a, b, c, d));
                    }
                }
                op.canonical()
            })
    }

    fn poly_strategy() -> impl Strategy<Value = Poly> {
        prop::collection::btree_map((0u32..=5, 0u32..=5), -5i32..=5, 1..6).prop_map(|m| {
            m.into_iter()
                .filter(|((a, b), v)| a + b <= 5 && *v != 0)
                .map(|(k, v)| (k, v as f64))
                .collect()
        })
    }

    #[test]
    fn canonical_commutators() {
        // ∂ₚ∘p = p∂ₚ + 1, i.e. p∘∂ₚ = ∂ₚp − 1 in derivative-left order
        let r = PhaseOp::p().product(&PhaseOp::dp()).unwrap();
        let expect = PhaseOp::monomial(1.0, 0, 1, 0, 1) - PhaseOp::identity();
        assert_eq!(r, expect);
        assert_eq!(PhaseOp::dp().product(&PhaseOp::p()).unwrap(), PhaseOp::monomial(1.0, 0, 1, 0, 1));
        assert_eq!(PhaseOp::x().product(&PhaseOp::x()).unwrap(), PhaseOp::monomial(1.0, 0, 0, 2, 0));
        assert_eq!(PhaseOp::dx().commutator(&PhaseOp::x()).unwrap(), PhaseOp::identity());
        assert!(PhaseOp::dx().commutator(&PhaseOp::p()).unwrap().is_zero());
    }

    #[test]
    fn degree_cap_is_an_error() {
        let a = PhaseOp::monomial(1.0, 2, 0, 3, 0);
        assert!(matches!(a.product(&a), Err(Error::DegreeOverflow { degree: 10, cap: 8 })));
        assert!(a.clone().with_cap(12).product(&a).is_ok());
    }

    #[test]
    fn dump_round_trip() {
        let a = PhaseOp::monomial(0.25, 1, 0, 0, 1) + PhaseOp::monomial(-3.0, 0, 2, 0, 0);
        let text = a.dump();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("-3.0000000000000000e0 dx^0 dp^2 x^0 p^0"));
        assert_eq!(PhaseOp::parse_dump(&text).unwrap(), a);
    }

    #[test]
    fn squared_drift_on_cubic() {
        let a = PhaseOp::monomial(1.0, 1, 0, 1, 0);
        let f: Poly = [((3, 0), 1.0)].into_iter().collect();
        let prod = a.product(&a).unwrap();
        assert_eq!(act(&prod, &f), act(&a, &act(&a, &f)));
        // ∂ₓx x³ = 4x³, twice: 16x³
        assert_eq!(act(&prod, &f), [((3, 0), 16.0)].into_iter().collect::<Poly>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn product_matches_sequential_application(
            a in op_strategy(2, 4), b in op_strategy(2, 4), f in poly_strategy()
        ) {
            let ab = a.product(&b).unwrap();
            prop_assert_eq!(act(&ab, &f), act(&a, &act(&b, &f)));
        }

        #[test]
        fn product_is_associative(a in op_strategy(2, 3), b in op_strategy(2, 3), c in op_strategy(2, 3)) {
            let l = a.product(&b).unwrap().product(&c).unwrap();
            let r = a.product(&b.product(&c).unwrap()).unwrap();
            prop_assert!(l.max_difference(&r) == 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn jacobi_identity(a in op_strategy(3, 3), b in op_strategy(3, 3), c in op_strategy(3, 3)) {
            let cap = 16;
            let (a, b, c) = (a.with_cap(cap), b.with_cap(cap), c.with_cap(cap));
            let j = a.commutator(&b.commutator(&c).unwrap()).unwrap()
                + b.commutator(&c.commutator(&a).unwrap()).unwrap()
                + c.commutator(&a.commutator(&b).unwrap()).unwrap();
            prop_assert!(j.is_zero(), "{}", j);
        }

        #[test]
        fn self_commutator_vanishes(a in op_strategy(3, 4)) {
            prop_assert!(a.commutator(&a).unwrap().is_zero());
        }

        #[test]
        fn product_is_bilinear(
            a in op_strategy(2, 3), b in op_strategy(2, 3), c in op_strategy(2, 3),
            s in -3i32..=3, r in -3i32..=3
        ) {
            let (s, r) = (s as f64, r as f64);
            let lhs = (a.clone() * s + b.clone() * r).product(&c).unwrap();
            let rhs = a.product(&c).unwrap() * s + b.product(&c).unwrap() * r;
            prop_assert!(lhs.max_difference(&rhs) < 1e-12);
        }
    }

    fn gaussian_grid(n: usize) -> WignerGrid {
        WignerGrid::from_fn((-6.0, 6.0), (-6.0, 6.0), n, n, |x, p| (-x * x - p * p).exp())
    }

    #[test]
    fn identity_and_coordinate_multiplication() {
        let w = gaussian_grid(41);
        assert_eq!(PhaseOp::identity().apply(&w, 2).unwrap().values, w.values);
        let xw = PhaseOp::x().apply(&w, 2).unwrap();
        for ix in 0..w.nx {
            for ip in 0..w.np {
                assert_eq!(xw.get(ix, ip), w.x(ix) * w.get(ix, ip));
            }
        }
    }

    #[test]
    fn derivative_converges_at_stencil_order() {
        let err = |n: usize, acc: usize, b: Boundary| {
            let w = gaussian_grid(n);
            let d = PhaseOp::dx().apply_with(&w, acc, b).unwrap();
            let mut e = 0.0f64;
            for ix in 0..n {
                for ip in 0..n {
                    let (x, p) = (w.x(ix), w.p(ip));
                    e = e.max((d.get(ix, ip) + 2.0 * x * (-x * x - p * p).exp()).abs());
                }
            }
            e
        };
        for b in [Boundary::ZeroGhost, Boundary::OneSided] {
            let o2 = (err(61, 2, b) / err(121, 2, b)).log2();
            let o4 = (err(61, 4, b) / err(121, 4, b)).log2();
            assert!(o2 > 1.8 && o2 < 2.3, "{o2}");
            assert!(o4 > 3.6, "{o4}");
        }
    }

    #[test]
    fn grid_product_matches_sequential_application() {
        let w = gaussian_grid(121);
        let a = PhaseOp::monomial(1.0, 1, 0, 0, 1) + PhaseOp::monomial(0.5, 0, 2, 0, 0);
        let b = PhaseOp::monomial(1.0, 0, 1, 1, 0) - PhaseOp::monomial(2.0, 1, 0, 0, 0);
        let lhs = a.product(&b).unwrap().apply(&w, 4).unwrap();
        let rhs = a.apply(&b.apply(&w, 4).unwrap(), 4).unwrap();
        let scale = lhs.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = lhs.values.iter().zip(&rhs.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-3 * scale, "{diff}");
    }

    #[test]
    fn stencil_order_limit() {
        let w = gaussian_grid(9);
        let high = PhaseOp::monomial(1.0, 9, 0, 0, 0).with_cap(12);
        assert!(matches!(high.apply(&w, 2), Err(Error::StencilOrder { .. })));
        let wide = PhaseOp::monomial(1.0, 8, 0, 0, 0);
        assert!(matches!(wide.apply(&w, 4), Err(Error::StencilOrder { .. })));
        assert!(wide.apply(&gaussian_grid(11), 4).is_ok());
    }
}
