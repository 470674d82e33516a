//! Standard normal helpers shared by every model in the crate.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

/// 1/sqrt(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// ln(sqrt(2π))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Lower bound applied to Bernoulli probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-14;

#[inline]
pub fn cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

/// Inverse standard normal CDF, polished with Newton steps so that
/// `cdf(quantile(q))` reproduces `q` to about machine precision.
pub fn quantile(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if q >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * q);
    for _ in 0..2 {
        let dens = pdf(x);
        if dens <= 1e-300 {
            break;
        }
        // work on the smaller tail to avoid cancellation in cdf(x) - q
        x = if q < 0.5 { x - (cdf(x) - q) / dens } else { x + (cdf(-x) - (1.0 - q)) / dens };
    }
    x
}

/// Clamp a probability into `[PROB_FLOOR, 1 - PROB_FLOOR]`.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Bernoulli log-likelihood of `y` under a probit index `h`, i.e. with
/// `Pr(y = 1) = Φ(h)`, together with its derivative in `h`.
///
/// Probabilities are clamped at [`PROB_FLOOR`]; on the clamped region the
/// value is constant and the derivative is zero.
#[inline]
pub fn bernoulli_probit(y: bool, h: f64) -> (f64, f64) {
    // Pr(outcome observed) = Φ(s·h) with s = ±1
    let s = if y { 1.0 } else { -1.0 };
    let p = cdf(s * h);
    if p <= PROB_FLOOR {
        (PROB_FLOOR.ln(), 0.0)
    } else if p >= 1.0 - PROB_FLOOR {
        ((1.0 - PROB_FLOOR).ln(), 0.0)
    } else {
        (p.ln(), s * pdf(h) / p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((cdf(-1.959_963_984_540_054) - 0.025).abs() < 1e-15);
        assert!((pdf(0.0) - INV_SQRT_2PI).abs() < 1e-16);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
    }

    #[test]
    fn quantile_roundtrip() {
        for i in 1..2000 {
            let q = i as f64 / 2000.0;
            assert!((cdf(quantile(q)) - q).abs() < 1e-15, "q={q}");
        }
        for q in [1e-6, 1e-10, 1.0 - 1e-6] {
            assert!(((cdf(quantile(q)) - q) / q.min(1.0 - q)).abs() < 1e-10);
        }
    }

    #[test]
    fn bernoulli_derivative_matches_difference() {
        for &(y, h) in &[(true, 0.3), (false, -1.2), (true, -2.5), (false, 4.0)] {
            let (_, d) = bernoulli_probit(y, h);
            let e = 1e-6;
            let fd = (bernoulli_probit(y, h + e).0 - bernoulli_probit(y, h - e).0) / (2.0 * e);
            assert!((d - fd).abs() < 1e-7 * (1.0 + d.abs()), "{y} {h} {d} {fd}");
        }
    }

    #[test]
    fn bernoulli_is_clamped() {
        let (v, d) = bernoulli_probit(true, -40.0);
        assert_eq!(v, PROB_FLOOR.ln());
        assert_eq!(d, 0.0);
    }
}
