//! Quadrature and finite-difference weights shared by the table builders.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-8,
            max_intervals: 200_000,
        }
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[10] * fc;
    let mut gauss = 0.0;
    for k in 0..10 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod (10/21) quadrature over the partition
/// given by `breaks` (sorted, at least two points).
pub fn integrate_partition<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Quadrature> {
    assert!(breaks.len() >= 2);
    let mut heap = BinaryHeap::new();
    let mut value = 0.0;
    let mut error = 0.0;
    for w in breaks.windows(2) {
        let (v, e) = gk21(&f, w[0], w[1]);
        value += v;
        error += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    while error > tol.abs.max(tol.rel * value.abs()) {
        if heap.len() >= tol.max_intervals {
            return Err(Error::Quadrature {
                estimate: error,
                tolerance: tol.abs.max(tol.rel * value.abs()),
            });
        }
        let seg = heap.pop().expect("non-empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval exhausted at machine precision
            heap.push(Segment { error: 0.0, ..seg });
            error = heap.iter().map(|s| s.error).sum();
            continue;
        }
        let (v1, e1) = gk21(&f, seg.a, mid);
        let (v2, e2) = gk21(&f, mid, seg.b);
        value += v1 + v2 - seg.value;
        error += e1 + e2 - seg.error;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
        });
    }
    let intervals = heap.len();
    // re-sum to shed accumulated update roundoff
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Quadrature {
        value,
        error,
        intervals,
    })
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Quadrature> {
    integrate_partition(f, &[a, b], tol)
}

/// Same as [`integrate`] with the range pre-split into `panels` equal pieces;
/// used for oscillatory integrands.
pub fn integrate_panels<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    tol: Tolerance,
) -> Result<Quadrature> {
    let n = panels.max(1);
    let breaks: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    integrate_partition(f, &breaks, tol)
}

/// Weights (unit spacing) for integrating samples `f_0..f_{n-1}` over
/// `[0, n-1]`. Fourth-order Gregory end corrections for six or more points,
/// closed Newton–Cotes below that.
pub fn gregory_weights(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        2 => vec![0.5, 0.5],
        3 => vec![1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0],
        4 => vec![3.0 / 8.0, 9.0 / 8.0, 9.0 / 8.0, 3.0 / 8.0],
        5 => vec![14.0 / 45.0, 64.0 / 45.0, 24.0 / 45.0, 64.0 / 45.0, 14.0 / 45.0],
        n => {
            let mut w = vec![1.0; n];
            let ends = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
            for (k, e) in ends.iter().enumerate() {
                w[k] = *e;
                w[n - 1 - k] = *e;
            }
            w
        }
    }
}

/// Trapezoid weights (unit spacing) for `points` samples.
pub fn trapezoid_weights(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        n => {
            let mut w = vec![1.0; n];
            w[0] = 0.5;
            w[n - 1] = 0.5;
            w
        }
    }
}

/// Fornberg's finite-difference weights for the `order`-th derivative at `z`
/// from samples at `nodes`.
pub fn fd_weights(z: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > order, "need more nodes than derivative order");
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// First-derivative stencil (unit spacing) for sample `i` of a sequence of
/// length `len`, using `width` points centred where possible and shifted
/// inwards at the ends. Returns the first index and the weights.
pub fn sequence_derivative(i: usize, len: usize, width: usize) -> (usize, Vec<f64>) {
    let width = width.min(len);
    let half = width / 2;
    let start = i.saturating_sub(half).min(len - width);
    let nodes: Vec<f64> = (start..start + width).map(|k| k as f64).collect();
    (start, fd_weights(i as f64, &nodes, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_exp() {
        let q = integrate(|x| x.powi(7) - 3.0 * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((q.value - (32.0 - 6.0)).abs() < 1e-12);
        let q = integrate(f64::exp, 0.0, 1.0, Tolerance::default()).unwrap();
        assert!((q.value - (1f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn handles_endpoint_log_singularity() {
        let tol = Tolerance { abs: 1e-12, rel: 1e-12, ..Tolerance::default() };
        let q = integrate(|x: f64| x.ln(), 0.0, 1.0, tol).unwrap();
        assert!((q.value + 1.0).abs() < 1e-9);
    }

    #[test]
    fn oscillatory_panels() {
        // ∫_0^100 cos(3x) e^{-x/20} dx
        let a: f64 = 1.0 / 20.0;
        let exact = {
            let e = (-100.0 * a).exp();
            (a + e * (3.0 * (300.0f64).sin() - a * (300.0f64).cos())) / (a * a + 9.0)
        };
        let q = integrate_panels(|x: f64| (3.0 * x).cos() * (-x * a).exp(), 0.0, 100.0, 50, Tolerance::default())
            .unwrap();
        assert!((q.value - exact).abs() < 1e-10, "{} vs {}", q.value, exact);
    }

    #[test]
    fn gregory_is_fourth_order() {
        for n in 2..12usize {
            let w = gregory_weights(n);
            let h = 1.0 / (n - 1) as f64;
            let s: f64 = w.iter().enumerate().map(|(k, w)| w * (k as f64 * h).powi(3)).sum::<f64>() * h;
            if n >= 3 {
                assert!((s - 0.25).abs() < 1e-13, "n={n}: {s}");
            }
        }
    }

    #[test]
    fn fornberg_central_and_one_sided() {
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        let expect = [-1.5, 2.0, -0.5];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn sequence_derivative_shifts_at_edges() {
        let (s, w) = sequence_derivative(0, 10, 5);
        assert_eq!(s, 0);
        assert_eq!(w.len(), 5);
        let (s, _) = sequence_derivative(9, 10, 5);
        assert_eq!(s, 5);
        let (s, _) = sequence_derivative(4, 10, 5);
        assert_eq!(s, 2);
    }
}
