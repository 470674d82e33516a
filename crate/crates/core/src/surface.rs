//! Smoothed Monte Carlo probability surface and the pseudo-likelihood fit
//! built on it.
//!
//! Event probabilities are simulated on a tensor grid, mapped to the probit
//! scale and smoothed with a tensor-product cubic spline carrying a
//! second-difference penalty in every direction. The grid lives in the
//! coordinates `(asinh(μ/σ), log σ, ν, log τ)`: an event `Z > 0` depends on
//! location and scale only through `μ/σ`, and in these coordinates the
//! probability varies on a scale the grid can resolve even for small `σ`.

use crate::bspline::CubicBasis;
use crate::error::{Error, Result};
use crate::hmc::{self, PosteriorDraws, SamplerConfig};
use crate::model::{EventModel, Posterior, PriorConfig};
use crate::normal;
use crate::panel::PanelData;
use crate::par::*;
use crate::rng::child_rng;
use crate::sas::{self, SasParams};
use crate::structure::MomentSpec;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const SURFACE_MAGIC: &str = "LATMOM-SURFACE";
pub const SURFACE_VERSION: u32 = 1;

/// Grid points per coordinate `(asinh(μ/σ), log σ, ν, log τ)`.
pub const DEFAULT_POINTS: [usize; 4] = [48, 4, 16, 16];
pub const DEFAULT_MC_DRAWS: usize = 10_000;

/// Out-of-box rates above this are reported as a warning.
pub const CLAMP_WARN_RATE: f64 = 0.01;

/// `log10 λ` ladder searched by generalized cross-validation.
const GCV_LADDER: (f64, f64, f64) = (-8.0, 3.0, 0.5);

/// Admissible moment ranges on the natural scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridRanges {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub nu: [f64; 2],
    pub tau: [f64; 2],
}

impl Default for GridRanges {
    fn default() -> Self {
        GridRanges { mu: [-4.0, 4.0], sigma: [0.2, 5.0], nu: [-2.0, 2.0], tau: [0.3, 3.0] }
    }
}

impl GridRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("mu", self.mu), ("sigma", self.sigma), ("nu", self.nu), ("tau", self.tau)] {
            if !(r[0] < r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::InvalidParameter(format!("range for {name} must satisfy lo < hi, got {r:?}")));
            }
        }
        if !(self.sigma[0] > 0.0 && self.tau[0] > 0.0) {
            return Err(Error::InvalidParameter("sigma and tau ranges must be positive".into()));
        }
        Ok(())
    }

    /// Bounding box in surface coordinates.
    pub fn coordinate_box(&self) -> [(f64, f64); 4] {
        let ratios = [
            self.mu[0] / self.sigma[0],
            self.mu[0] / self.sigma[1],
            self.mu[1] / self.sigma[0],
            self.mu[1] / self.sigma[1],
        ];
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [
            (lo.asinh(), hi.asinh()),
            (self.sigma[0].ln(), self.sigma[1].ln()),
            (self.nu[0], self.nu[1]),
            (self.tau[0].ln(), self.tau[1].ln()),
        ]
    }

    pub fn contains(&self, p: &SasParams) -> bool {
        let inside = |v: f64, r: [f64; 2]| r[0] <= v && v <= r[1];
        inside(p.mu, self.mu) && inside(p.sigma, self.sigma) && inside(p.nu, self.nu) && inside(p.tau, self.tau)
    }
}

/// Surface coordinates of a parameter set.
#[inline]
pub fn to_coordinates(p: &SasParams) -> [f64; 4] {
    [(p.mu / p.sigma).asinh(), p.sigma.ln(), p.nu, p.tau.ln()]
}

/// Parameter set at surface coordinates.
#[inline]
pub fn from_coordinates(c: &[f64; 4]) -> SasParams {
    let sigma = c[1].exp();
    SasParams { mu: sigma * c[0].sinh(), sigma, nu: c[2], tau: c[3].exp() }
}

/// Tensor grid of moment combinations, stored with the last coordinate
/// varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentGrid {
    pub ranges: GridRanges,
    pub points_per_dim: [usize; 4],
    pub mc_draws: usize,
    axes: [Vec<f64>; 4],
}

impl MomentGrid {
    pub fn len(&self) -> usize {
        self.points_per_dim.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Knots of coordinate `d` in surface coordinates.
    pub fn axis(&self, d: usize) -> &[f64] {
        &self.axes[d]
    }

    pub fn coordinates(&self, k: usize) -> [f64; 4] {
        let mut rem = k;
        let mut c = [0.0; 4];
        for d in (0..4).rev() {
            let n = self.points_per_dim[d];
            c[d] = self.axes[d][rem % n];
            rem /= n;
        }
        c
    }

    pub fn params(&self, k: usize) -> SasParams {
        from_coordinates(&self.coordinates(k))
    }

    /// σ knots on the natural scale (log-spaced).
    pub fn sigma_knots(&self) -> Vec<f64> {
        self.axes[1].iter().map(|v| v.exp()).collect()
    }

    /// τ knots on the natural scale (log-spaced).
    pub fn tau_knots(&self) -> Vec<f64> {
        self.axes[3].iter().map(|v| v.exp()).collect()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn generate_grid(ranges: GridRanges, points_per_dim: [usize; 4], mc_draws: usize) -> Result<MomentGrid> {
    ranges.validate()?;
    if let Some(n) = points_per_dim.iter().find(|&&n| n < 2) {
        return Err(Error::InvalidParameter(format!("each grid dimension needs at least 2 points, got {n}")));
    }
    if mc_draws == 0 {
        return Err(Error::InvalidParameter("mc_draws must be positive".into()));
    }
    let bx = ranges.coordinate_box();
    let axes = std::array::from_fn(|d| linspace(bx[d].0, bx[d].1, points_per_dim[d]));
    Ok(MomentGrid { ranges, points_per_dim, mc_draws, axes })
}

/// Fraction of `mc_draws` simulated latent values above zero at every grid
/// point. Point `k` draws from its own stream derived from `seed` and `k`.
pub fn simulate_probabilities(grid: &MomentGrid, seed: u64) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let p = grid.params(k);
            let mut rng = child_rng(seed, k as u64);
            let hits = (0..grid.mc_draws)
                .filter(|_| {
                    let y: f64 = rng.sample(StandardNormal);
                    sas::transform(y, &p) > 0.0
                })
                .count();
            hits as f64 / grid.mc_draws as f64
        })
        .collect()
}

/// Multiplies mode `d` of a 4-way tensor by `a` (`a.ncols() == dims[d]`).
fn mode_product(t: &[f64], dims: [usize; 4], d: usize, a: &DMatrix<f64>) -> (Vec<f64>, [usize; 4]) {
    let n = dims[d];
    let m = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    let outer: usize = dims[..d].iter().product();
    let inner: usize = dims[d + 1..].iter().product();
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &t[(o * n + k) * inner..(o * n + k + 1) * inner];
            for i in 0..m {
                let w = a[(i, k)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(o * m + i) * inner..(o * m + i + 1) * inner];
                for (x, y) in dst.iter_mut().zip(src) {
                    *x += w * y;
                }
            }
        }
    }
    let mut new_dims = dims;
    new_dims[d] = m;
    (out, new_dims)
}

fn multi_mode(mut t: Vec<f64>, mut dims: [usize; 4], mats: &[DMatrix<f64>]) -> Vec<f64> {
    for (d, a) in mats.iter().enumerate() {
        let (nt, nd) = mode_product(&t, dims, d, a);
        t = nt;
        dims = nd;
    }
    t
}

/// How the penalty weight is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// Generalized cross-validation over a log-spaced ladder.
    Gcv,
    Fixed(f64),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Gcv
    }
}

/// Tensor-product spline for the probit index over surface coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilitySurface {
    pub ranges: GridRanges,
    pub lambda: f64,
    /// In-sample RMSE of the fit on the probit scale.
    pub rmse_probit: f64,
    bases: [CubicBasis; 4],
    coef: Vec<f64>,
}

/// Surface value at a point together with whether it had to be clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub index: f64,
    pub grad: [f64; 4],
    pub clamped: bool,
}

pub fn fit_surface(grid: &MomentGrid, probabilities: &[f64], smoothing: Smoothing) -> Result<ProbabilitySurface> {
    fit_surface_with_basis(grid, probabilities, smoothing, grid.points_per_dim)
}

pub fn fit_surface_with_basis(
    grid: &MomentGrid,
    probabilities: &[f64],
    smoothing: Smoothing,
    n_basis: [usize; 4],
) -> Result<ProbabilitySurface> {
    if probabilities.len() != grid.len() {
        return Err(Error::Dimension(format!("{} probabilities for {} grid points", probabilities.len(), grid.len())));
    }
    if let Some(d) = (0..4).find(|&d| grid.points_per_dim[d] < 4 || n_basis[d] < 4 || n_basis[d] > grid.points_per_dim[d]) {
        return Err(Error::Numerical(format!(
            "singular surface fit: dimension {d} has {} points for {} basis functions (need 4 ≤ basis ≤ points)",
            grid.points_per_dim[d], n_basis[d]
        )));
    }
    let eps = 0.5 / grid.mc_draws as f64;
    let y: Vec<f64> = probabilities.iter().map(|p| normal::quantile(p.clamp(eps, 1.0 - eps))).collect();
    let bx = grid.ranges.coordinate_box();
    let mut bases = Vec::with_capacity(4);
    let mut u_mats = Vec::with_capacity(4);
    let mut bu_mats = Vec::with_capacity(4);
    let mut eigen = Vec::with_capacity(4);
    for d in 0..4 {
        let basis = CubicBasis::new(bx[d].0, bx[d].1, n_basis[d])?;
        let b = basis.design(grid.axis(d));
        let gram = b.transpose() * &b;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("singular surface fit: Gram matrix of dimension {d} is not positive definite")))?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n_basis[d], n_basis[d]))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let m = &l_inv * basis.penalty() * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let sym = m.symmetric_eigen();
        let u = l_inv.transpose() * &sym.eigenvectors;
        bu_mats.push(&b * &u);
        u_mats.push(u);
        eigen.push(sym.eigenvalues.iter().map(|s| s.max(0.0)).collect::<Vec<f64>>());
        bases.push(basis);
    }
    let dims = grid.points_per_dim;
    let bu_t: Vec<DMatrix<f64>> = bu_mats.iter().map(|m| m.transpose()).collect();
    let z = multi_mode(y.clone(), dims, &bu_t);
    let nb = n_basis;
    let total_penalty: Vec<f64> = (0..z.len())
        .map(|k| {
            let mut rem = k;
            let mut s = 0.0;
            for d in (0..4).rev() {
                s += eigen[d][rem % nb[d]];
                rem /= nb[d];
            }
            s
        })
        .collect();
    let n = y.len() as f64;
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let gcv = |lambda: f64| {
        let (mut rss, mut trace) = (yy - zz, 0.0);
        for (zk, sk) in z.iter().zip(&total_penalty) {
            let f = 1.0 / (1.0 + lambda * sk);
            rss += (1.0 - f) * (1.0 - f) * zk * zk;
            trace += f;
        }
        if n - trace <= 0.0 { f64::INFINITY } else { n * rss.max(0.0) / (n - trace).powi(2) }
    };
    let lambda = match smoothing {
        Smoothing::Fixed(l) if l >= 0.0 && l.is_finite() => l,
        Smoothing::Fixed(l) => return Err(Error::InvalidParameter(format!("penalty weight {l} must be non-negative"))),
        Smoothing::Gcv => {
            let (lo, hi, step) = GCV_LADDER;
            let steps = ((hi - lo) / step).round() as usize;
            (0..=steps)
                .map(|i| 10f64.powf(lo + step * i as f64))
                .map(|l| (gcv(l), l))
                .fold((f64::INFINITY, f64::NAN), |best, c| if c.0 < best.0 { c } else { best })
                .1
        }
    };
    if !lambda.is_finite() {
        return Err(Error::Numerical("no penalty weight gives a finite GCV score".into()));
    }
    let shrunk: Vec<f64> = z.iter().zip(&total_penalty).map(|(zk, sk)| zk / (1.0 + lambda * sk)).collect();
    let fitted = multi_mode(shrunk.clone(), nb, &bu_mats);
    let rmse_probit = (y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    let coef = multi_mode(shrunk, nb, &u_mats);
    let bases = [bases[0], bases[1], bases[2], bases[3]];
    Ok(ProbabilitySurface { ranges: grid.ranges, lambda, rmse_probit, bases, coef })
}

impl ProbabilitySurface {
    pub fn n_basis(&self) -> [usize; 4] {
        std::array::from_fn(|d| self.bases[d].n_basis())
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    /// Probit index and its gradient at surface coordinates `c`; points
    /// outside the box are clamped onto it and the gradient is taken there,
    /// with zero slope along the clamped axes.
    #[inline]
    pub fn index_at(&self, c: &[f64; 4]) -> SurfacePoint {
        let mut outside = [false; 4];
        let e: [(usize, [f64; 4], [f64; 4]); 4] = std::array::from_fn(|d| {
            let (lo, hi) = self.bases[d].range();
            outside[d] = !(c[d] >= lo && c[d] <= hi);
            self.bases[d].eval(c[d])
        });
        let nb = self.n_basis();
        let (j0, v0, d0) = e[0];
        let (j1, v1, d1) = e[1];
        let (j2, v2, d2) = e[2];
        let (j3, v3, d3) = e[3];
        let mut val = 0.0;
        let mut g = [0.0; 4];
        for a in 0..4 {
            for b in 0..4 {
                let row = ((j0 + a) * nb[1] + j1 + b) * nb[2];
                for cc in 0..4 {
                    let base = (row + j2 + cc) * nb[3] + j3;
                    let w = &self.coef[base..base + 4];
                    let s = w[0] * v3[0] + w[1] * v3[1] + w[2] * v3[2] + w[3] * v3[3];
                    let s3 = w[0] * d3[0] + w[1] * d3[1] + w[2] * d3[2] + w[3] * d3[3];
                    let w01 = v0[a] * v1[b];
                    val += w01 * v2[cc] * s;
                    g[0] += d0[a] * v1[b] * v2[cc] * s;
                    g[1] += v0[a] * d1[b] * v2[cc] * s;
                    g[2] += w01 * d2[cc] * s;
                    g[3] += w01 * v2[cc] * s3;
                }
            }
        }
        for d in 0..4 {
            if outside[d] {
                g[d] = 0.0;
            }
        }
        SurfacePoint { index: val, grad: g, clamped: outside.iter().any(|&o| o) }
    }

    /// Approximate `Pr(Z > 0)` and whether `p` lay outside the box.
    pub fn eval(&self, p: &SasParams) -> (f64, bool) {
        let s = self.index_at(&to_coordinates(p));
        (normal::cdf(s.index), s.clamped)
    }

    /// Gradient of the approximate probability with respect to `(μ, σ, ν, τ)`.
    pub fn grad(&self, p: &SasParams) -> [f64; 4] {
        let s = self.index_at(&to_coordinates(p));
        let a = p.mu / p.sigma;
        let root = (1.0 + a * a).sqrt();
        let dens = normal::pdf(s.index);
        let g = s.grad;
        [
            dens * g[0] / (p.sigma * root),
            dens * (-g[0] * a / (p.sigma * root) + g[1] / p.sigma),
            dens * g[2],
            dens * g[3] / p.tau,
        ]
    }

    pub fn is_out_of_box(&self, link: &[f64; 4]) -> bool {
        let c = link_to_coordinates(link);
        self.bases.iter().zip(&c).any(|(b, v)| {
            let (lo, hi) = b.range();
            !(*v >= lo && *v <= hi)
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        writeln!(w, "{SURFACE_MAGIC}")?;
        writeln!(w, "version {SURFACE_VERSION}")?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let r = &self.ranges;
        writeln!(
            w,
            "ranges {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            r.mu[0], r.mu[1], r.sigma[0], r.sigma[1], r.nu[0], r.nu[1], r.tau[0], r.tau[1]
        )?;
        let nb = self.n_basis();
        writeln!(w, "basis {} {} {} {}", nb[0], nb[1], nb[2], nb[3])?;
        writeln!(w, "lambda {:?}", self.lambda)?;
        writeln!(w, "rmse_probit {:?}", self.rmse_probit)?;
        writeln!(w, "coefficients {}", self.coef.len())?;
        for c in &self.coef {
            writeln!(w, "{c:?}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("surface artifact: {m}"));
        let mut lines = r.lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#')));
        let mut next = |what: &str| -> Result<String> {
            lines.next().ok_or_else(|| bad(&format!("missing {what}")))?.map_err(Error::from)
        };
        if next("header")?.trim() != SURFACE_MAGIC {
            return Err(bad("not a surface file"));
        }
        let fields = |line: String, key: &str, n: usize| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(&format!("expected `{key}`")));
            }
            let v: Vec<String> = it.map(str::to_string).collect();
            if v.len() != n {
                return Err(bad(&format!("`{key}` needs {n} values")));
            }
            Ok(v)
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("malformed number `{s}`")));
        let version = fields(next("version")?, "version", 1)?;
        if version[0] != SURFACE_VERSION.to_string() {
            return Err(bad(&format!("unsupported version {}", version[0])));
        }
        let rv = fields(next("ranges")?, "ranges", 8)?.iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
        let ranges = GridRanges { mu: [rv[0], rv[1]], sigma: [rv[2], rv[3]], nu: [rv[4], rv[5]], tau: [rv[6], rv[7]] };
        ranges.validate()?;
        let nb = fields(next("basis")?, "basis", 4)?
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| bad("malformed basis count")))
            .collect::<Result<Vec<usize>>>()?;
        let lambda = num(&fields(next("lambda")?, "lambda", 1)?[0])?;
        let rmse_probit = num(&fields(next("rmse_probit")?, "rmse_probit", 1)?[0])?;
        let count: usize =
            fields(next("coefficients")?, "coefficients", 1)?[0].parse().map_err(|_| bad("malformed coefficient count"))?;
        if count != nb.iter().product::<usize>() {
            return Err(bad("coefficient count does not match basis sizes"));
        }
        let coef = (0..count).map(|_| num(next("coefficient")?.trim())).collect::<Result<Vec<f64>>>()?;
        let bx = ranges.coordinate_box();
        let bases = [
            CubicBasis::new(bx[0].0, bx[0].1, nb[0])?,
            CubicBasis::new(bx[1].0, bx[1].1, nb[1])?,
            CubicBasis::new(bx[2].0, bx[2].1, nb[2])?,
            CubicBasis::new(bx[3].0, bx[3].1, nb[3])?,
        ];
        Ok(ProbabilitySurface { ranges, lambda, rmse_probit, bases, coef })
    }
}

#[inline]
fn link_to_coordinates(link: &[f64; 4]) -> [f64; 4] {
    [(link[0] * (-link[1]).exp()).asinh(), link[1], link[2], link[3]]
}

impl EventModel for ProbabilitySurface {
    /// Chain rule from surface coordinates to `(μ, log σ, ν, log τ)`.
    #[inline]
    fn index_grad(&self, link: &[f64; 4]) -> (f64, [f64; 4]) {
        let sigma = link[1].exp();
        let a = link[0] / sigma;
        let root = (1.0 + a * a).sqrt();
        let s = self.index_at(&[a.asinh(), link[1], link[2], link[3]]);
        let g = s.grad;
        (s.index, [g[0] / (sigma * root), -g[0] * a / root + g[1], g[2], g[3]])
    }
}

/// Bernoulli pseudo-log-likelihood with surface probabilities.
pub fn pseudo_log_likelihood(panel: &PanelData, params: &[SasParams], surface: &ProbabilitySurface) -> Result<f64> {
    if params.len() != panel.n_obs() {
        return Err(Error::Dimension(format!("{} parameter sets for {} observations", params.len(), panel.n_obs())));
    }
    Ok(panel
        .outcomes()
        .iter()
        .zip(params)
        .map(|(&y, p)| normal::bernoulli_probit(y, surface.index_at(&to_coordinates(p)).index).0)
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadFit {
    pub draws: PosteriorDraws,
    /// Share of (draw, observation) pairs whose moments fell outside the box.
    pub clamp_rate: f64,
}

impl QuadFit {
    pub fn clamp_warning(&self) -> bool {
        self.clamp_rate > CLAMP_WARN_RATE
    }
}

/// Samples the pseudo-posterior defined by the surface.
pub fn quad_fit(
    panel: &PanelData,
    spec: &MomentSpec,
    prior: &PriorConfig,
    surface: &ProbabilitySurface,
    cfg: &SamplerConfig,
) -> Result<QuadFit> {
    let post = Posterior::new(panel, spec, prior.clone(), surface)?;
    let draws = hmc::sample(&post, post.layout().names().to_vec(), cfg)?;
    let rows: Vec<&[f64]> = draws.iter().collect();
    let clamped: usize = rows
        .into_par_iter()
        .map(|x| post.links(x).iter().filter(|l| surface.is_out_of_box(&clamp_log_links(l))).count())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let total = (draws.n_draws() * panel.n_obs()).max(1);
    Ok(QuadFit { draws, clamp_rate: clamped as f64 / total as f64 })
}

fn clamp_log_links(l: &[f64; 4]) -> [f64; 4] {
    use crate::structure::LOG_LINK_BOUND;
    [l[0], l[1].clamp(-LOG_LINK_BOUND, LOG_LINK_BOUND), l[2], l[3].clamp(-LOG_LINK_BOUND, LOG_LINK_BOUND)]
}
