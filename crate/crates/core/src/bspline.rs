//! Cubic B-splines on uniform knots.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// `n_basis` cubic B-splines covering `[lo, hi]` with uniform interior knots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicBasis {
    lo: f64,
    hi: f64,
    n_basis: usize,
    width: f64,
}

impl CubicBasis {
    pub fn new(lo: f64, hi: f64, n_basis: usize) -> Result<Self> {
        if n_basis < 4 {
            return Err(Error::InvalidParameter(format!("cubic basis needs at least 4 functions, got {n_basis}")));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid basis range [{lo}, {hi}]")));
        }
        Ok(CubicBasis { lo, hi, n_basis, width: (hi - lo) / (n_basis - 3) as f64 })
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Index of the first non-zero function at `x` (clamped into the range),
    /// the four non-zero values, and their derivatives.
    #[inline]
    pub fn eval(&self, x: f64) -> (usize, [f64; 4], [f64; 4]) {
        let u = (x.clamp(self.lo, self.hi) - self.lo) / self.width;
        let j = (u.floor() as usize).min(self.n_basis - 4);
        let t = u - j as f64;
        let s = 1.0 - t;
        let t2 = t * t;
        let t3 = t2 * t;
        let v = [
            s * s * s / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ];
        let h = self.width;
        let d = [
            -0.5 * s * s / h,
            (1.5 * t2 - 2.0 * t) / h,
            (-1.5 * t2 + t + 0.5) / h,
            0.5 * t2 / h,
        ];
        (j, v, d)
    }

    /// Dense design matrix at the given points.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(xs.len(), self.n_basis);
        for (r, &x) in xs.iter().enumerate() {
            let (j, v, _) = self.eval(x);
            for k in 0..4 {
                b[(r, j + k)] = v[k];
            }
        }
        b
    }

    /// Second-difference penalty `D'D`.
    pub fn penalty(&self) -> DMatrix<f64> {
        let n = self.n_basis;
        let mut d = DMatrix::zeros(n - 2, n);
        for i in 0..n - 2 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        d.transpose() * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let b = CubicBasis::new(-1.0, 2.0, 9).unwrap();
        for k in 0..=300 {
            let x = -1.0 + 0.01 * k as f64;
            let (_, v, d) = b.eval(x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(d.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_differences() {
        let b = CubicBasis::new(0.0, 1.0, 7).unwrap();
        let coef = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5, -0.7];
        let f = |x: f64| {
            let (j, v, d) = b.eval(x);
            (0..4).fold((0.0, 0.0), |(s, g), k| (s + coef[j + k] * v[k], g + coef[j + k] * d[k]))
        };
        for &x in &[0.05, 0.33, 0.5, 0.61, 0.95] {
            let h = 1e-6;
            let fd = (f(x + h).0 - f(x - h).0) / (2.0 * h);
            assert!((fd - f(x).1).abs() < 1e-7);
        }
    }

    #[test]
    fn penalty_annihilates_lines() {
        let b = CubicBasis::new(0.0, 4.0, 8).unwrap();
        let p = b.penalty();
        let line: Vec<f64> = (0..8).map(|i| 2.0 - 0.5 * i as f64).collect();
        let pl = &p * nalgebra::DVector::from_vec(line);
        assert!(pl.amax() < 1e-12);
        assert!(CubicBasis::new(0.0, 1.0, 3).is_err());
        assert!(CubicBasis::new(1.0, 1.0, 5).is_err());
    }
}
