//! The sinh–arcsinh (SAS) distribution family.
//!
//! A draw is `Z = μ + σ·sinh((asinh(Y) + ν)/τ)` with `Y ~ N(0, 1)`, so that
//! `F(z) = Φ(sinh(τ·asinh((z − μ)/σ) − ν))`. At `ν = 0, τ = 1` the family is
//! exactly `N(μ, σ²)`.
//!
//! Besides the distribution itself this module provides the event probability
//! `Pr(Z > 0)` used by the threshold models, written as a probit index
//! `Pr(Z > 0) = Φ(h)` with `h = sinh(τ·asinh(μ/σ) + ν)`, plus the gradient of
//! `h` with respect to the link-scale coordinates `(μ, log σ, ν, log τ)`.

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature;
use crate::rng::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Arguments of `sinh`/`cosh` are clamped to this magnitude.
pub const HYPERBOLIC_GUARD: f64 = 700.0;

const MOMENT_TAIL: f64 = 1e-12;
const MOMENT_ABS_TOL: f64 = 1e-10;
const MOMENT_MAX_SEGMENTS: usize = 4000;

#[inline]
fn sinh_g(x: f64) -> f64 {
    x.clamp(-HYPERBOLIC_GUARD, HYPERBOLIC_GUARD).sinh()
}

#[inline]
fn cosh_g(x: f64) -> f64 {
    x.clamp(-HYPERBOLIC_GUARD, HYPERBOLIC_GUARD).cosh()
}

/// One latent distribution: location `mu`, scale `sigma`, skewness `nu`, and
/// tail weight `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SasParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
    pub tau: f64,
}

impl SasParams {
    pub fn new(mu: f64, sigma: f64, nu: f64, tau: f64) -> Result<Self> {
        let p = SasParams { mu, sigma, nu, tau };
        p.validate()?;
        Ok(p)
    }

    /// The standard normal member `(0, 1, 0, 1)`.
    pub const fn standard() -> Self {
        SasParams { mu: 0.0, sigma: 1.0, nu: 0.0, tau: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.mu, self.sigma, self.nu, self.tau].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter(format!("non-finite SAS parameters {self:?}")));
        }
        if self.sigma <= 0.0 || self.tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "SAS scale and tail weight must be positive, got sigma={} tau={}",
                self.sigma, self.tau
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu, self.sigma, self.nu, self.tau]
    }

    /// Link-scale coordinates `(μ, log σ, ν, log τ)`.
    pub fn to_link_scale(&self) -> [f64; 4] {
        [self.mu, self.sigma.ln(), self.nu, self.tau.ln()]
    }
}

/// Maps a standard-normal draw `y` to the SAS variate.
#[inline]
pub fn transform(y: f64, p: &SasParams) -> f64 {
    p.mu + p.sigma * sinh_g((y.asinh() + p.nu) / p.tau)
}

/// Standardized normal score of `z`: `F(z) = Φ(score(z))`.
#[inline]
fn score(z: f64, p: &SasParams) -> f64 {
    sinh_g(p.tau * ((z - p.mu) / p.sigma).asinh() - p.nu)
}

pub fn cdf(z: f64, p: &SasParams) -> f64 {
    normal::cdf(score(z, p))
}

/// Upper tail `1 − F(z)`, computed without cancellation.
pub fn sf(z: f64, p: &SasParams) -> f64 {
    normal::cdf(-score(z, p))
}

pub fn pdf(z: f64, p: &SasParams) -> f64 {
    let x = (z - p.mu) / p.sigma;
    let inner = p.tau * x.asinh() - p.nu;
    let s = sinh_g(inner);
    normal::pdf(s) * cosh_g(inner) * p.tau / (p.sigma * (1.0 + x * x).sqrt())
}

pub fn quantile(q: f64, p: &SasParams) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(transform(normal::quantile(q), p))
}

/// Probit index `h` with `Pr(Z > 0) = Φ(h)`.
#[inline]
pub fn event_index(p: &SasParams) -> f64 {
    sinh_g(p.tau * (p.mu / p.sigma).asinh() + p.nu)
}

/// `Pr(Z > 0) = 1 − F(0)`.
pub fn event_prob(p: &SasParams) -> f64 {
    normal::cdf(event_index(p))
}

/// Probit index evaluated from link-scale coordinates `(μ, log σ, ν, log τ)`
/// and its gradient with respect to those coordinates.
#[inline]
pub fn event_index_grad(link: &[f64; 4]) -> (f64, [f64; 4]) {
    let [mu, log_sigma, nu, log_tau] = *link;
    let sigma = log_sigma.exp();
    let tau = log_tau.exp();
    let a = mu / sigma;
    let r = a.asinh();
    let g = tau * r + nu;
    let h = sinh_g(g);
    if g.abs() >= HYPERBOLIC_GUARD {
        return (h, [0.0; 4]);
    }
    let c = g.cosh();
    let inv_root = 1.0 / (1.0 + a * a).sqrt();
    (
        h,
        [
            c * tau * inv_root / sigma,
            -c * tau * a * inv_root,
            c,
            c * tau * r,
        ],
    )
}

/// `n` i.i.d. draws; reproducible for a given seed.
pub fn sample(n: usize, p: &SasParams, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    sample_with(&mut rng, n, p)
}

pub fn sample_with<R: Rng + ?Sized>(rng: &mut R, n: usize, p: &SasParams) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let y: f64 = rng.sample(StandardNormal);
            transform(y, p)
        })
        .collect()
}

/// First four standardized moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Non-excess kurtosis (3 for the normal).
    pub kurtosis: f64,
}

/// Moments by adaptive quadrature on the normal scale: `E[g(X)]` for the
/// standardized member `(0, 1, ν, τ)` is `∫ g(x(y)) φ(y) dy` over the central
/// `1 − 2e-12` of `y`, with `x(y) = sinh((asinh y + ν)/τ)`. The tolerance is
/// relative to a coarse trapezoid estimate of `∫ |x|^k φ`, since heavy tails
/// make the higher raw moments large. Location and scale are applied
/// afterwards.
pub fn numeric_moments(p: &SasParams) -> Result<Moments> {
    p.validate()?;
    let y_max = -normal::quantile(MOMENT_TAIL);
    let x_of = |y: f64| sinh_g((y.asinh() + p.nu) / p.tau);
    let raw = |k: i32| {
        let f = |y: f64| x_of(y).powi(k) * normal::pdf(y);
        let n = 400;
        let h = 2.0 * y_max / n as f64;
        let scale: f64 = (0..=n).map(|j| f(-y_max + h * j as f64).abs()).sum::<f64>() * h;
        quadrature::integrate(f, -y_max, y_max, MOMENT_ABS_TOL * scale.max(1.0), MOMENT_MAX_SEGMENTS)
            .map_err(|e| Error::Quadrature(format!("moment {k} at {p:?}: {e}")))
    };
    let mass = raw(0)?;
    let m1 = raw(1)? / mass;
    let m2 = raw(2)? / mass;
    let m3 = raw(3)? / mass;
    let m4 = raw(4)? / mass;
    let var = m2 - m1 * m1;
    if !(var > 0.0) {
        return Err(Error::Quadrature(format!("non-positive variance at {p:?}")));
    }
    let c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
    let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
    Ok(Moments {
        mean: p.mu + p.sigma * m1,
        variance: p.sigma * p.sigma * var,
        skewness: c3 / var.powf(1.5),
        kurtosis: c4 / (var * var),
    })
}

/// Whether the numeric moments satisfy `kurtosis > skewness² + 1` with a
/// margin of `1e-9`.
pub fn check_admissibility(p: &SasParams) -> Result<bool> {
    let m = numeric_moments(p)?;
    Ok(m.kurtosis - (m.skewness * m.skewness + 1.0) > 1e-9)
}
