//! Exponential integrals needed by the closed-form vacuum noise kernels.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `e^x E1(x)` for `x > 0`.
pub fn scaled_e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        (-EULER_GAMMA - x.ln() + sum) * x.exp()
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

pub fn e1(x: f64) -> f64 {
    scaled_e1(x) * (-x).exp()
}

/// `e^{-x} Ei(x)` for `x > 0`.
pub fn scaled_ei(x: f64) -> f64 {
    assert!(x > 0.0);
    if x < 40.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..400 {
            term *= x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add < 1e-17 * sum {
                break;
            }
        }
        (EULER_GAMMA + x.ln() + sum) * (-x).exp()
    } else {
        let mut sum = 1.0;
        let mut term = 1.0;
        for k in 1..200 {
            let next = term * k as f64 / x;
            if next > term {
                break;
            }
            term = next;
            sum += term;
            if term < 1e-17 {
                break;
            }
        }
        sum / x
    }
}

pub fn ei(x: f64) -> f64 {
    scaled_ei(x) * x.exp()
}

/// `∫_0^∞ y cos(x y) / (1 + y²) dy = ½[e^x E1(x) − e^{−x} Ei(x)]`, `x > 0`.
pub fn cosine_lorentz_first_moment(x: f64) -> f64 {
    0.5 * (scaled_e1(x) - scaled_ei(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // E1(1) = 0.21938393439552027, Ei(1) = 1.8951178163559368
        assert!((e1(1.0) - 0.219_383_934_395_520_27).abs() < 1e-15);
        assert!((e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-14);
        assert!((e1(5.0) - 0.001_148_295_591_275_325_8).abs() < 1e-17);
        assert!((ei(1.0) - 1.895_117_816_355_936_8).abs() < 1e-14);
        assert!((ei(5.0) - 40.185_275_355_803_18).abs() < 1e-11);
    }

    #[test]
    fn branches_agree_at_switch_points() {
        let a = scaled_ei(40.0 - 1e-9);
        let b = scaled_ei(40.0 + 1e-9);
        assert!((a - 0.025_658_862_786_634_006).abs() < 1e-14);
        assert!((b - 0.025_658_862_785_316_285).abs() < 1e-14);
        let a = scaled_e1(1.0 - 1e-12);
        let b = scaled_e1(1.0 + 1e-12);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lorentz_moment_matches_quadrature() {
        // subtract the 1/y tail: y/(1+y²) = 1/y − 1/(y(1+y²))
        for &x in &[0.3, 1.0, 4.0] {
            let l = 4000.0;
            let direct = integrate_panelsish(|y| y * (x * y).cos() / (1.0 + y * y), l, x);
            // ∫_L^∞ cos(xy)/y dy = −Ci(xL) ≈ −sin(xL)/(xL)
            let rem = -(x * l).sin() / (x * l);
            let got = cosine_lorentz_first_moment(x);
            assert!((direct + rem - got).abs() < 2e-6, "x={x}: {} vs {}", direct + rem, got);
        }
    }

    fn integrate_panelsish<F: Fn(f64) -> f64>(f: F, l: f64, x: f64) -> f64 {
        use crate::quad::{integrate_panels, Tolerance};
        let panels = (l * x / 3.0).ceil() as usize;
        integrate_panels(f, 0.0, l, panels, Tolerance { abs: 1e-12, rel: 1e-12, max_intervals: 1_000_000 })
            .unwrap()
            .value
    }
}
