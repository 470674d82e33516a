//! Reference estimators: logistic GLM, exchangeable GEE and a logistic
//! random-intercept GLMM fitted by adaptive Gauss–Hermite quadrature.

use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::quadrature::gauss_hermite;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Linear predictors beyond this magnitude are treated as separation.
const SEPARATION_BOUND: f64 = 30.0;

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log σ(t)` without overflow.
#[inline]
fn log_logistic(t: f64) -> f64 {
    if t >= 0.0 { -(-t).exp().ln_1p() } else { t - t.exp().ln_1p() }
}

#[inline]
fn bernoulli_logit(y: bool, eta: f64) -> f64 {
    if y { log_logistic(eta) } else { log_logistic(-eta) }
}

/// Intercept plus the named covariates, one row per observation.
pub fn design_matrix(panel: &PanelData, covariates: &[String]) -> Result<DMatrix<f64>> {
    let cols: Vec<usize> = covariates
        .iter()
        .map(|c| panel.covariate_index(c).ok_or_else(|| Error::Data(format!("unknown covariate `{c}`"))))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(panel.n_obs(), cols.len() + 1, |r, c| if c == 0 { 1.0 } else { panel.covariate(r, cols[c - 1]) }))
}

fn coefficient_names(covariates: &[String]) -> Vec<String> {
    std::iter::once("intercept".to_string()).chain(covariates.iter().cloned()).collect()
}

fn check_separation(x: &DMatrix<f64>, beta: &DVector<f64>, what: &str) -> Result<()> {
    let eta = x * beta;
    if eta.iter().any(|e| !e.is_finite() || e.abs() > SEPARATION_BOUND) {
        return Err(Error::Numerical(format!("{what}: coefficients diverge (separation detected)")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

/// Logistic regression by iteratively reweighted least squares.
pub fn fit_glm(panel: &PanelData, covariates: &[String]) -> Result<GlmFit> {
    let x = design_matrix(panel, covariates)?;
    let (beta, info, it) = irls(&x, panel.outcomes())?;
    let cov = info.try_inverse().ok_or_else(|| Error::Numerical("GLM information matrix is singular".into()))?;
    let eta = &x * &beta;
    let loglik = panel.outcomes().iter().zip(eta.iter()).map(|(&y, &e)| bernoulli_logit(y, e)).sum();
    Ok(GlmFit { names: coefficient_names(covariates), coef: beta.iter().copied().collect(), cov, loglik, iterations: it })
}

fn irls(x: &DMatrix<f64>, y: &[bool]) -> Result<(DVector<f64>, DMatrix<f64>, usize)> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for it in 1..=100 {
        let eta = x * &beta;
        let mut info = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for r in 0..x.nrows() {
            let mu = logistic(eta[r]);
            let w = mu * (1.0 - mu);
            let xr = x.row(r);
            let resid = y[r] as u8 as f64 - mu;
            for a in 0..p {
                score[a] += xr[a] * resid;
                for b in 0..=a {
                    info[(a, b)] += w * xr[a] * xr[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("GLM information matrix is not positive definite".into()))?
            .solve(&score);
        beta += &step;
        check_separation(x, &beta, "logistic GLM")?;
        if step.amax() < 1e-10 {
            return Ok((beta, info, it));
        }
    }
    Err(Error::NotConverged("logistic GLM", 100))
}

/// Working correlation for GEE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkingCorrelation {
    #[default]
    Exchangeable,
    Independence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeeFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Robust (sandwich) covariance.
    pub robust_cov: DMatrix<f64>,
    pub alpha: f64,
    pub phi: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Norm of the estimating equations at the start of each iteration.
    pub score_norms: Vec<f64>,
}

impl GeeFit {
    pub fn robust_se(&self) -> Vec<f64> {
        (0..self.coef.len()).map(|j| self.robust_cov[(j, j)].sqrt()).collect()
    }
}

pub const GEE_MAX_ITER: usize = 200;
pub const GEE_TOL: f64 = 1e-8;

/// `R⁻¹ v` for an exchangeable correlation of size `v.len()`.
fn exch_solve(alpha: f64, v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let c = alpha / (1.0 + (n - 1.0) * alpha);
    let s: f64 = v.iter().sum();
    v.iter().map(|x| (x - c * s) / (1.0 - alpha)).collect()
}

/// Logit-link GEE solved by Fisher scoring.
pub fn fit_gee(panel: &PanelData, covariates: &[String], corr: WorkingCorrelation) -> Result<GeeFit> {
    let x = design_matrix(panel, covariates)?;
    let y = panel.outcomes();
    let p = x.ncols();
    let n_total = panel.n_obs() as f64;
    let max_t = panel.max_times();
    let (alpha_lo, alpha_hi) = if max_t > 1 { (-1.0 / (max_t as f64 - 1.0) + 1e-6, 1.0 - 1e-6) } else { (0.0, 0.0) };
    let pairs: f64 = panel.subject_ranges().iter().map(|r| (r.len() * r.len().saturating_sub(1)) as f64 / 2.0).sum();
    let mut beta = DVector::zeros(p);
    let mut alpha = 0.0;
    let mut phi;
    let mut score_norms = Vec::new();
    for it in 1..=GEE_MAX_ITER {
        let eta = &x * &beta;
        let mu: Vec<f64> = eta.iter().map(|e| logistic(*e)).collect();
        let sd: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).sqrt().max(1e-12)).collect();
        let e: Vec<f64> = (0..y.len()).map(|k| (y[k] as u8 as f64 - mu[k]) / sd[k]).collect();
        phi = e.iter().map(|v| v * v).sum::<f64>() / (n_total - p as f64).max(1.0);
        if corr == WorkingCorrelation::Exchangeable && pairs > p as f64 {
            let mut cross = 0.0;
            for r in panel.subject_ranges() {
                let s: f64 = e[r.clone()].iter().sum();
                let ss: f64 = e[r.clone()].iter().map(|v| v * v).sum();
                cross += 0.5 * (s * s - ss);
            }
            alpha = (cross / ((pairs - p as f64) * phi)).clamp(alpha_lo, alpha_hi);
        }
        let mut h = DMatrix::zeros(p, p);
        let mut u = DVector::zeros(p);
        for r in panel.subject_ranges() {
            let xt: Vec<Vec<f64>> = (0..p).map(|j| r.clone().map(|k| sd[k] * x[(k, j)]).collect()).collect();
            let rinv_e = exch_solve(alpha, &e[r.clone()]);
            let rinv_x: Vec<Vec<f64>> = xt.iter().map(|col| exch_solve(alpha, col)).collect();
            for a in 0..p {
                u[a] += xt[a].iter().zip(&rinv_e).map(|(s, t)| s * t).sum::<f64>();
                for b in 0..p {
                    h[(a, b)] += xt[a].iter().zip(&rinv_x[b]).map(|(s, t)| s * t).sum::<f64>();
                }
            }
        }
        score_norms.push(u.norm());
        let h_inv = h.clone().try_inverse().ok_or_else(|| Error::Numerical("GEE information matrix is singular".into()))?;
        let step = &h_inv * &u;
        beta += &step;
        check_separation(&x, &beta, "GEE")?;
        if step.amax() < GEE_TOL {
            let robust_cov = sandwich(panel, &x, &beta, alpha)?;
            return Ok(GeeFit {
                names: coefficient_names(covariates),
                coef: beta.iter().copied().collect(),
                robust_cov,
                alpha,
                phi,
                converged: true,
                iterations: it,
                score_norms,
            });
        }
    }
    Err(Error::NotConverged("GEE", GEE_MAX_ITER))
}

fn sandwich(panel: &PanelData, x: &DMatrix<f64>, beta: &DVector<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    let y = panel.outcomes();
    let eta = x * beta;
    let mut bread = DMatrix::<f64>::zeros(p, p);
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for r in panel.subject_ranges() {
        let mu: Vec<f64> = r.clone().map(|k| logistic(eta[k])).collect();
        let sd: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).sqrt().max(1e-12)).collect();
        let e: Vec<f64> = r.clone().enumerate().map(|(j, k)| (y[k] as u8 as f64 - mu[j]) / sd[j]).collect();
        let xt: Vec<Vec<f64>> = (0..p).map(|c| r.clone().enumerate().map(|(j, k)| sd[j] * x[(k, c)]).collect()).collect();
        let rinv_e = exch_solve(alpha, &e);
        let rinv_x: Vec<Vec<f64>> = xt.iter().map(|col| exch_solve(alpha, col)).collect();
        let ui: Vec<f64> = xt.iter().map(|col| col.iter().zip(&rinv_e).map(|(s, t)| s * t).sum()).collect();
        for a in 0..p {
            for b in 0..p {
                bread[(a, b)] += xt[a].iter().zip(&rinv_x[b]).map(|(s, t)| s * t).sum::<f64>();
                meat[(a, b)] += ui[a] * ui[b];
            }
        }
    }
    let b_inv = bread.try_inverse().ok_or_else(|| Error::Numerical("GEE information matrix is singular".into()))?;
    Ok(&b_inv * meat * &b_inv)
}

pub const GLMM_DEFAULT_NODES: usize = 15;

/// Random-intercept SDs below this are treated as a boundary estimate.
pub const GLMM_BOUNDARY_SD: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GlmmFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Random-intercept variance.
    pub variance: f64,
    /// Approximate covariance of the fixed effects (inverse observed information).
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    /// The variance hit zero and the fit fell back to a plain GLM.
    pub boundary: bool,
    pub nodes: usize,
    /// Conditional mode of each subject's intercept, in subject order.
    pub modes: Vec<f64>,
    pub subject_ids: Vec<String>,
}

struct GlmmProblem<'a> {
    x: &'a DMatrix<f64>,
    panel: &'a PanelData,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GlmmProblem<'_> {
    fn subject_terms(&self, r: &std::ops::Range<usize>, eta: &[f64]) -> Vec<(bool, f64)> {
        r.clone().map(|k| (self.panel.outcomes()[k], eta[k])).collect()
    }

    /// Mode and curvature of `log p(y_i | b) + log N(b; 0, s²)`.
    fn mode(obs: &[(bool, f64)], s: f64) -> (f64, f64) {
        let prec = 1.0 / (s * s);
        let mut b = 0.0;
        let mut curv = prec;
        for _ in 0..100 {
            let (mut g, mut h) = (-b * prec, prec);
            for &(y, e) in obs {
                let m = logistic(e + b);
                g += y as u8 as f64 - m;
                h += m * (1.0 - m);
            }
            curv = h;
            let step = (g / h).clamp(-5.0, 5.0);
            b += step;
            if step.abs() < 1e-12 {
                break;
            }
        }
        (b, curv)
    }

    fn log_joint(obs: &[(bool, f64)], b: f64, s: f64) -> f64 {
        let z = b / s;
        obs.iter().map(|&(y, e)| bernoulli_logit(y, e + b)).sum::<f64>() - 0.5 * z * z - s.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Marginal log-likelihood at `(β, log s)`; also returns subject modes.
    fn loglik(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.x.ncols();
        let beta = DVector::from_column_slice(&theta[..p]);
        let s = theta[p].exp();
        let eta: Vec<f64> = (self.x * beta).iter().copied().collect();
        let mut total = 0.0;
        let mut modes = Vec::with_capacity(self.panel.n_subjects());
        for r in self.panel.subject_ranges() {
            let obs = self.subject_terms(r, &eta);
            let (b_hat, curv) = Self::mode(&obs, s);
            let scale = std::f64::consts::SQRT_2 / curv.sqrt();
            let terms: Vec<f64> = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(&t, &w)| w.ln() + t * t + Self::log_joint(&obs, b_hat + scale * t, s))
                .collect();
            let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += scale.ln() + m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            modes.push(b_hat);
        }
        (total, modes)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        (0..theta.len())
            .map(|j| {
                let h = 1e-5 * theta[j].abs().max(1.0);
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[j] += h;
                dn[j] -= h;
                (self.loglik(&up).0 - self.loglik(&dn).0) / (2.0 * h)
            })
            .collect()
    }
}

/// Maximizes `f` by BFGS with backtracking line search. Returns the optimum,
/// its value and whether the gradient criterion was met.
fn bfgs<F, G>(f: F, grad: G, x0: Vec<f64>, max_iter: usize) -> (Vec<f64>, f64, bool)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut fx = f(x.as_slice());
    let mut g = DVector::from_vec(grad(x.as_slice()));
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if g.amax() < 1e-6 {
            return (x.iter().copied().collect(), fx, true);
        }
        // ascent direction
        let mut dir = &h * &g;
        if dir.dot(&g) <= 0.0 {
            h = DMatrix::identity(n, n);
            dir = g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let fc = f(cand.as_slice());
            if fc.is_finite() && fc >= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return (x.iter().copied().collect(), fx, g.amax() < 1e-4);
        };
        let g_new = DVector::from_vec(grad(x_new.as_slice()));
        let s = &x_new - &x;
        // curvature of the negated objective
        let yv = &g - &g_new;
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h = left * &h * right + &s * s.transpose() * rho;
        }
        let small_change = (f_new - fx).abs() < 1e-12 * (1.0 + fx.abs());
        x = x_new;
        fx = f_new;
        g = g_new;
        if small_change && g.amax() < 1e-4 {
            return (x.iter().copied().collect(), fx, true);
        }
    }
    (x.iter().copied().collect(), fx, g.amax() < 1e-4)
}

/// Logistic random-intercept GLMM by adaptive Gauss–Hermite quadrature.
/// One node gives the Laplace approximation.
pub fn fit_glmm(panel: &PanelData, covariates: &[String], nodes: usize) -> Result<GlmmFit> {
    if nodes == 0 {
        return Err(Error::InvalidParameter("at least one quadrature node is required".into()));
    }
    let x = design_matrix(panel, covariates)?;
    let p = x.ncols();
    let glm = fit_glm(panel, covariates)?;
    let (gh_nodes, gh_weights) = gauss_hermite(nodes);
    let problem = GlmmProblem { x: &x, panel, nodes: gh_nodes, weights: gh_weights };
    let min_log_sd = GLMM_BOUNDARY_SD.ln() - 4.0;
    let clamp = |t: &[f64]| {
        let mut t = t.to_vec();
        t[p] = t[p].max(min_log_sd);
        t
    };
    let mut theta0 = glm.coef.clone();
    theta0.push(0.5f64.ln());
    let (theta, _, converged) = bfgs(
        |t| if t[p] < min_log_sd || t[p] > 5.0 { f64::NEG_INFINITY } else { problem.loglik(t).0 },
        |t| problem.gradient(&clamp(t)),
        theta0,
        500,
    );
    check_separation(&x, &DVector::from_column_slice(&theta[..p]), "GLMM")?;
    let sd = theta[p].exp();
    let names = coefficient_names(covariates);
    if sd < GLMM_BOUNDARY_SD {
        return Ok(GlmmFit {
            names,
            coef: glm.coef,
            variance: 0.0,
            cov: glm.cov,
            loglik: glm.loglik,
            converged,
            boundary: true,
            nodes,
            modes: vec![0.0; panel.n_subjects()],
            subject_ids: panel.subject_ids().to_vec(),
        });
    }
    if !converged {
        return Err(Error::NotConverged("GLMM", 500));
    }
    let (loglik, modes) = problem.loglik(&theta);
    let cov = observed_information(&problem, &theta)
        .and_then(|m| m.try_inverse())
        .map(|inv| inv.view((0, 0), (p, p)).into_owned())
        .unwrap_or_else(|| DMatrix::from_element(p, p, f64::NAN));
    Ok(GlmmFit {
        names,
        coef: theta[..p].to_vec(),
        variance: sd * sd,
        cov,
        loglik,
        converged,
        boundary: false,
        nodes,
        modes,
        subject_ids: panel.subject_ids().to_vec(),
    })
}

fn observed_information(problem: &GlmmProblem<'_>, theta: &[f64]) -> Option<DMatrix<f64>> {
    let n = theta.len();
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-4 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let gu = problem.gradient(&up);
        let gd = problem.gradient(&dn);
        for i in 0..n {
            hess[(i, j)] = -(gu[i] - gd[i]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    sym.iter().all(|v| v.is_finite()).then_some(sym)
}

/// A fitted baseline ready for prediction.
#[derive(Clone, Debug, PartialEq)]
pub enum BaselineFit {
    Glm(GlmFit, Vec<String>),
    Gee(GeeFit, Vec<String>),
    Glmm(GlmmFit, Vec<String>),
}

/// Per-observation event probabilities. GEE and GLM predictions are
/// marginal; GLMM predictions condition on each subject's intercept mode
/// (zero for subjects not seen during fitting).
pub fn baseline_predict(fit: &BaselineFit, panel: &PanelData) -> Result<Vec<f64>> {
    let (coef, covariates) = match fit {
        BaselineFit::Glm(f, c) => (&f.coef, c),
        BaselineFit::Gee(f, c) => (&f.coef, c),
        BaselineFit::Glmm(f, c) => (&f.coef, c),
    };
    let x = design_matrix(panel, covariates)?;
    let eta = x * DVector::from_column_slice(coef);
    let offsets: Vec<f64> = match fit {
        BaselineFit::Glmm(f, _) => panel
            .obs_subject()
            .iter()
            .map(|&i| {
                let id = &panel.subject_ids()[i];
                f.subject_ids.iter().position(|s| s == id).map_or(0.0, |j| f.modes[j])
            })
            .collect(),
        _ => vec![0.0; panel.n_obs()],
    };
    Ok(eta.iter().zip(&offsets).map(|(e, b)| logistic(e + b).clamp(1e-14, 1.0 - 1e-14)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::ObservationRow;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn logistic_panel(n: usize, t: usize, beta: [f64; 2], re_sd: f64, seed: u64) -> PanelData {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        for i in 0..n {
            let b: f64 = re_sd * rng.sample::<f64, _>(StandardNormal);
            for k in 0..t {
                let x: f64 = rng.random_range(-1.0..1.0);
                let p = logistic(beta[0] + beta[1] * x + b);
                rows.push(ObservationRow { subject: format!("s{i}"), time: k as f64, y: rng.random_bool(p), covariates: vec![x] });
            }
        }
        PanelData::from_rows(vec!["x".into()], rows).unwrap()
    }

    fn cov() -> Vec<String> {
        vec!["x".into()]
    }

    #[test]
    fn independence_gee_equals_glm() {
        let p = logistic_panel(100, 4, [-0.2, 0.8], 0.8, 1);
        let glm = fit_glm(&p, &cov()).unwrap();
        let gee = fit_gee(&p, &cov(), WorkingCorrelation::Independence).unwrap();
        for (a, b) in glm.coef.iter().zip(&gee.coef) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(gee.alpha, 0.0);
    }

    #[test]
    fn duplicated_rows_give_positive_alpha() {
        let base = logistic_panel(80, 1, [0.1, 1.0], 0.0, 2);
        let rows: Vec<ObservationRow> = base
            .rows()
            .into_iter()
            .flat_map(|r| (0..3).map(move |k| ObservationRow { time: k as f64, ..r.clone() }))
            .collect();
        let p = PanelData::from_rows(vec!["x".into()], rows).unwrap();
        let gee = fit_gee(&p, &cov(), WorkingCorrelation::Exchangeable).unwrap();
        assert!(gee.alpha > 0.5, "{}", gee.alpha);
    }

    #[test]
    fn gee_score_norm_decreases() {
        let p = logistic_panel(200, 5, [0.3, -0.7], 1.0, 3);
        let gee = fit_gee(&p, &cov(), WorkingCorrelation::Exchangeable).unwrap();
        assert!(gee.converged && gee.alpha > 0.0);
        let n = &gee.score_norms;
        assert!(n.len() > 3);
        assert!(n[3..].windows(2).all(|w| w[1] <= w[0] + 1e-12), "{n:?}");
    }

    #[test]
    fn separation_is_reported() {
        let rows = (0..20)
            .map(|k| ObservationRow {
                subject: format!("s{}", k / 2),
                time: (k % 2) as f64,
                y: k >= 10,
                covariates: vec![k as f64 - 9.5],
            })
            .collect();
        let p = PanelData::from_rows(vec!["x".into()], rows).unwrap();
        let r = fit_gee(&p, &cov(), WorkingCorrelation::Independence);
        assert!(r.is_err(), "{r:?}");
        assert!(fit_glm(&p, &cov()).is_err());
    }

    #[test]
    fn laplace_close_to_full_quadrature() {
        let p = logistic_panel(150, 6, [-0.5, 1.0], 1.0, 4);
        let full = fit_glmm(&p, &cov(), 15).unwrap();
        let lap = fit_glmm(&p, &cov(), 1).unwrap();
        assert!(!full.boundary);
        for (a, b) in full.coef.iter().zip(&lap.coef) {
            assert!((a - b).abs() <= 0.1 * a.abs().max(0.1), "{a} vs {b}");
        }
        assert!((full.variance - lap.variance).abs() <= 0.1 * full.variance.max(0.1) + 0.1);
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let p = logistic_panel(5, 2, [0.0, 0.0], 0.0, 5);
        let glm = GlmFit { names: vec![], coef: vec![0.0, 0.0], cov: DMatrix::zeros(2, 2), loglik: 0.0, iterations: 0 };
        let probs = baseline_predict(&BaselineFit::Glm(glm, cov()), &p).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relabeling_subjects_leaves_fits_unchanged() {
        let p = logistic_panel(60, 4, [0.2, 0.6], 0.7, 6);
        let renamed: Vec<ObservationRow> =
            p.rows().into_iter().map(|r| ObservationRow { subject: format!("z{}", r.subject), ..r }).collect();
        let q = PanelData::from_rows(vec!["x".into()], renamed).unwrap();
        let a = fit_gee(&p, &cov(), WorkingCorrelation::Exchangeable).unwrap();
        let b = fit_gee(&q, &cov(), WorkingCorrelation::Exchangeable).unwrap();
        assert_eq!(a.coef, b.coef);
        let a = fit_glmm(&p, &cov(), 15).unwrap();
        let b = fit_glmm(&q, &cov(), 15).unwrap();
        assert_eq!(a.coef, b.coef);
    }
}
