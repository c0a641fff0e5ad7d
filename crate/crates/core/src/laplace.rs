//! Numerical inverse Laplace transform on a fixed Talbot contour.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Inverts `F(s)` at `t > 0` with `m` contour nodes. All singularities of
/// `F` must lie in the left half plane or near the negative real axis.
pub fn talbot<F: Fn(Complex64) -> Complex64>(f: F, t: f64, m: usize) -> f64 {
    assert!(t > 0.0 && m >= 2);
    let r = 2.0 * m as f64 / (5.0 * t);
    let mut sum = 0.5 * (f(Complex64::new(r, 0.0)) * (r * t).exp()).re;
    for k in 1..m {
        let theta = k as f64 * PI / m as f64;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let w = (s * t).exp() * Complex64::new(1.0, sigma);
        sum += (w * f(s)).re;
    }
    r / m as f64 * sum
}
