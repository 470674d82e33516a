//! Posterior density of the latent-moment model on an unconstrained space.
//!
//! Random intercepts and AR(1) paths are non-centered: the state carries
//! standardized effects and innovations, scaled inside the model. Scales
//! live on the log scale and AR coefficients on the `atanh` scale, with the
//! matching Jacobians added to the prior.

use crate::error::{Error, Result};
use crate::hmc::LogDensity;
use crate::normal::{self, LN_SQRT_2PI};
use crate::panel::{Moment, PanelData};
use crate::par::*;
use crate::sas::{self, SasParams};
use crate::structure::{
    Ar1Terms, Design, EffectLevel, MomentCoefficients, MomentSpec, RandomIntercepts, LOG_LINK_BOUND,
};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Prior scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Normal prior SD on the coefficients of each moment, ordered `μ, σ, ν, τ`.
    pub lambda: [f64; 4],
    /// Half-Cauchy scale on subject-level random-intercept SDs.
    pub half_cauchy_scale: f64,
    /// Half-Cauchy scale on group-level (multiple-membership) SDs.
    pub mm_scale: f64,
    /// Half-Cauchy scale on AR(1) innovation SDs.
    pub ar_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { lambda: [5.0; 4], half_cauchy_scale: 2.5, mm_scale: 2.5, ar_scale: 2.5 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let all = self.lambda.iter().chain([&self.half_cauchy_scale, &self.mm_scale, &self.ar_scale]);
        for &s in all {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("prior scale {s} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Probit index of `Pr(Z > 0)` as a function of link-scale moments
/// `(μ, log σ, ν, log τ)`.
pub trait EventModel: Sync {
    fn index_grad(&self, link: &[f64; 4]) -> (f64, [f64; 4]);
}

impl<E: EventModel> EventModel for &E {
    #[inline]
    fn index_grad(&self, link: &[f64; 4]) -> (f64, [f64; 4]) {
        (**self).index_grad(link)
    }
}

/// The exact sinh–arcsinh event probability.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactSas;

impl EventModel for ExactSas {
    #[inline]
    fn index_grad(&self, link: &[f64; 4]) -> (f64, [f64; 4]) {
        sas::event_index_grad(link)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EffectBlock {
    level: EffectLevel,
    log_scale: usize,
    values: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
struct ArBlock {
    atanh_rho: usize,
    log_scale: usize,
    innovations: Range<usize>,
}

/// Positions of every parameter block inside the unconstrained state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    beta: [Range<usize>; 4],
    effects: [Option<EffectBlock>; 4],
    ar: [Option<ArBlock>; 4],
    active: Vec<Moment>,
    names: Vec<String>,
}

impl ParamLayout {
    pub fn new(panel: &PanelData, design: &Design, spec: &MomentSpec) -> Result<Self> {
        let mut names = Vec::new();
        let mut beta: [Range<usize>; 4] = Default::default();
        let mut effects: [Option<EffectBlock>; 4] = Default::default();
        let mut ar: [Option<ArBlock>; 4] = Default::default();
        let active = spec.active_moments();
        for &m in &active {
            let k = m.index();
            let start = names.len();
            names.extend(design.names(m).iter().map(|c| format!("beta.{m}.{c}")));
            beta[k] = start..names.len();
            if spec.has_random_intercept(m) {
                let (level, ids): (EffectLevel, Vec<String>) = if spec.multiple_membership {
                    let mm = panel.membership().ok_or_else(|| {
                        Error::Data("multiple membership requested but panel has no membership weights".into())
                    })?;
                    (EffectLevel::Group, mm.group_ids.clone())
                } else {
                    (EffectLevel::Subject, panel.subject_ids().to_vec())
                };
                let log_scale = names.len();
                names.push(format!("log_sd.{m}"));
                let start = names.len();
                names.extend(ids.iter().map(|id| format!("effect.{m}.{id}")));
                effects[k] = Some(EffectBlock { level, log_scale, values: start..names.len() });
            }
            if spec.has_ar1(m) {
                let atanh_rho = names.len();
                names.push(format!("atanh_rho.{m}"));
                let log_scale = names.len();
                names.push(format!("log_ar_sd.{m}"));
                let start = names.len();
                names.extend((0..panel.n_obs()).map(|obs| format!("innov.{m}.{obs}")));
                ar[k] = Some(ArBlock { atanh_rho, log_scale, innovations: start..names.len() });
            }
        }
        Ok(ParamLayout { beta, effects, ar, active, names })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn beta_range(&self, m: Moment) -> Range<usize> {
        self.beta[m.index()].clone()
    }

    /// Natural-scale coefficients and realized random terms for state `x`.
    pub fn coefficients(&self, panel: &PanelData, x: &[f64]) -> Result<MomentCoefficients> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("state has {} entries, layout expects {}", x.len(), self.dim())));
        }
        let mut c = MomentCoefficients::default();
        for &m in &self.active {
            let k = m.index();
            c.beta[k] = x[self.beta[k].clone()].to_vec();
            if let Some(e) = &self.effects[k] {
                let scale = x[e.log_scale].exp();
                let values = x[e.values.clone()].iter().map(|z| scale * z).collect();
                c.random[k] = Some(RandomIntercepts { level: e.level, scale, values });
            }
            if let Some(a) = &self.ar[k] {
                let rho = x[a.atanh_rho].tanh();
                let scale = x[a.log_scale].exp();
                let mut path = vec![0.0; panel.n_obs()];
                ar_forward(panel, rho, scale, &x[a.innovations.clone()], &mut path);
                c.ar1[k] = Some(Ar1Terms { rho, scale, path });
            }
        }
        Ok(c)
    }
}

/// Builds AR(1) paths from standardized innovations, subject by subject.
fn ar_forward(panel: &PanelData, rho: f64, scale: f64, e: &[f64], path: &mut [f64]) {
    let stat = scale / (1.0 - rho * rho).sqrt();
    for r in panel.subject_ranges() {
        let mut prev = 0.0;
        for (j, obs) in r.clone().enumerate() {
            let u = if j == 0 { stat * e[obs] } else { rho * prev + scale * e[obs] };
            path[obs] = u;
            prev = u;
        }
    }
}

/// Bernoulli log-likelihood of the panel under one parameter set per
/// observation.
pub fn log_likelihood(panel: &PanelData, params: &[SasParams]) -> Result<f64> {
    if params.len() != panel.n_obs() {
        return Err(Error::Dimension(format!("{} parameter sets for {} observations", params.len(), panel.n_obs())));
    }
    Ok(panel
        .outcomes()
        .iter()
        .zip(params)
        .map(|(&y, p)| normal::bernoulli_probit(y, sas::event_index(p)).0)
        .sum())
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() }
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { let e = t.exp(); e / (1.0 + e) }
}

/// Half-Cauchy(0, `a`) log-density of `exp(l)` including the log Jacobian,
/// and its derivative in `l`.
#[inline]
fn half_cauchy_log_scale(l: f64, a: f64) -> (f64, f64) {
    let t = 2.0 * (l - a.ln());
    let lp = (2.0 / (std::f64::consts::PI * a)).ln() - softplus(t) + l;
    (lp, 1.0 - 2.0 * logistic(t))
}

/// Uniform(−1, 1) log-density of `tanh(k)` including the log Jacobian, and
/// its derivative in `k`.
#[inline]
fn uniform_atanh(k: f64) -> (f64, f64) {
    // log(1 − tanh²k) = −2 log cosh k
    let a = k.abs();
    let log_cosh = a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2;
    (-2.0 * log_cosh - std::f64::consts::LN_2, -2.0 * k.tanh())
}

#[inline]
fn std_normal(z: f64) -> (f64, f64) {
    (-0.5 * z * z - LN_SQRT_2PI, -z)
}

/// Log prior of an unconstrained state; accumulates the gradient when given.
pub fn log_prior(layout: &ParamLayout, x: &[f64], prior: &PriorConfig, mut grad: Option<&mut [f64]>) -> f64 {
    let mut lp = 0.0;
    let mut add = |i: usize, (v, d): (f64, f64), grad: &mut Option<&mut [f64]>| {
        lp += v;
        if let Some(g) = grad.as_deref_mut() {
            g[i] += d;
        }
    };
    for &m in &layout.active {
        let k = m.index();
        let lambda = prior.lambda[k];
        for i in layout.beta[k].clone() {
            let z = x[i] / lambda;
            add(i, (-0.5 * z * z - LN_SQRT_2PI - lambda.ln(), -z / lambda), &mut grad);
        }
        if let Some(e) = &layout.effects[k] {
            let a = if e.level == EffectLevel::Group { prior.mm_scale } else { prior.half_cauchy_scale };
            add(e.log_scale, half_cauchy_log_scale(x[e.log_scale], a), &mut grad);
            for i in e.values.clone() {
                add(i, std_normal(x[i]), &mut grad);
            }
        }
        if let Some(a) = &layout.ar[k] {
            add(a.atanh_rho, uniform_atanh(x[a.atanh_rho]), &mut grad);
            add(a.log_scale, half_cauchy_log_scale(x[a.log_scale], prior.ar_scale), &mut grad);
            for i in a.innovations.clone() {
                add(i, std_normal(x[i]), &mut grad);
            }
        }
    }
    lp
}

/// Log posterior of the latent-moment model for a given event model.
pub struct Posterior<'a, E: EventModel> {
    panel: &'a PanelData,
    design: Design,
    layout: ParamLayout,
    prior: PriorConfig,
    event: E,
}

impl<'a, E: EventModel> Posterior<'a, E> {
    pub fn new(panel: &'a PanelData, spec: &MomentSpec, prior: PriorConfig, event: E) -> Result<Self> {
        prior.validate()?;
        let design = Design::build(panel, spec)?;
        let layout = ParamLayout::new(panel, &design, spec)?;
        Ok(Posterior { panel, design, layout, prior, event })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn event_model(&self) -> &E {
        &self.event
    }

    /// Per-observation link-scale moments `(μ, log σ, ν, log τ)` before
    /// clamping.
    pub fn links(&self, x: &[f64]) -> Vec<[f64; 4]> {
        let offsets = self.offsets(x);
        (0..self.panel.n_obs()).map(|obs| self.raw_links(x, &offsets, obs)).collect()
    }

    /// Random-effect plus AR(1) contribution per active moment and observation.
    fn offsets(&self, x: &[f64]) -> [Vec<f64>; 4] {
        let panel = self.panel;
        let n = panel.n_obs();
        let mut out: [Vec<f64>; 4] = Default::default();
        for &m in &self.layout.active {
            let k = m.index();
            let mut off = vec![0.0; n];
            if let Some(e) = &self.layout.effects[k] {
                let scale = x[e.log_scale].exp();
                let z = &x[e.values.clone()];
                for (i, r) in panel.subject_ranges().iter().enumerate() {
                    let b = match e.level {
                        EffectLevel::Subject => scale * z[i],
                        EffectLevel::Group => {
                            let mm = panel.membership().expect("layout built with membership");
                            scale * mm.rows[i].iter().map(|&(g, w)| w * z[g]).sum::<f64>()
                        }
                    };
                    off[r.clone()].iter_mut().for_each(|v| *v = b);
                }
            }
            if let Some(a) = &self.layout.ar[k] {
                let mut path = vec![0.0; n];
                ar_forward(panel, x[a.atanh_rho].tanh(), x[a.log_scale].exp(), &x[a.innovations.clone()], &mut path);
                off.iter_mut().zip(&path).for_each(|(o, u)| *o += u);
            }
            out[k] = off;
        }
        out
    }

    #[inline]
    fn raw_links(&self, x: &[f64], offsets: &[Vec<f64>; 4], obs: usize) -> [f64; 4] {
        let mut raw = [0.0; 4];
        for &m in &self.layout.active {
            let k = m.index();
            let row = self.design.row(m, obs);
            let beta = &x[self.layout.beta[k].clone()];
            raw[k] = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + offsets[k][obs];
        }
        raw
    }

    /// Log-likelihood and its derivative with respect to each observation's
    /// raw link-scale predictors.
    fn likelihood_terms(&self, x: &[f64]) -> (f64, Vec<[f64; 4]>) {
        let offsets = self.offsets(x);
        let y = self.panel.outcomes();
        let terms: Vec<(f64, [f64; 4])> = (0..self.panel.n_obs())
            .into_par_iter()
            .map(|obs| {
                let raw = self.raw_links(x, &offsets, obs);
                let mut link = raw;
                let mut clamped = [false; 4];
                for k in [1, 3] {
                    if raw[k].abs() > LOG_LINK_BOUND {
                        link[k] = raw[k].clamp(-LOG_LINK_BOUND, LOG_LINK_BOUND);
                        clamped[k] = true;
                    }
                }
                let (h, g) = self.event.index_grad(&link);
                let (ll, d) = normal::bernoulli_probit(y[obs], h);
                let mut adj = [0.0; 4];
                for k in 0..4 {
                    if !clamped[k] {
                        adj[k] = d * g[k];
                    }
                }
                (ll, adj)
            })
            .collect();
        let ll = terms.iter().map(|t| t.0).sum();
        (ll, terms.into_iter().map(|t| t.1).collect())
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.likelihood_terms(x).0
    }

    pub fn log_prior(&self, x: &[f64]) -> f64 {
        log_prior(&self.layout, x, &self.prior, None)
    }

    /// Log posterior (likelihood plus prior with Jacobians) and its gradient.
    pub fn log_posterior_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.layout.dim() {
            return Err(Error::Dimension(format!("state has {} entries, expected {}", x.len(), self.layout.dim())));
        }
        let mut grad = vec![0.0; x.len()];
        let lp = self.evaluate(x, &mut grad);
        Ok((lp, grad))
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let panel = self.panel;
        let (ll, adj) = self.likelihood_terms(x);
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        for &m in &self.layout.active {
            let k = m.index();
            let br = self.layout.beta[k].clone();
            for (obs, a) in adj.iter().enumerate() {
                let a = a[k];
                if a != 0.0 {
                    for (g, xv) in grad[br.clone()].iter_mut().zip(self.design.row(m, obs)) {
                        *g += a * xv;
                    }
                }
            }
            if let Some(e) = &self.layout.effects[k] {
                let scale = x[e.log_scale].exp();
                let z = &x[e.values.clone()];
                let mut d_log_scale = 0.0;
                for (i, r) in panel.subject_ranges().iter().enumerate() {
                    let s: f64 = adj[r.clone()].iter().map(|a| a[k]).sum();
                    match e.level {
                        EffectLevel::Subject => {
                            grad[e.values.start + i] += s * scale;
                            d_log_scale += s * scale * z[i];
                        }
                        EffectLevel::Group => {
                            let mm = panel.membership().expect("layout built with membership");
                            for &(g, w) in &mm.rows[i] {
                                grad[e.values.start + g] += s * scale * w;
                                d_log_scale += s * scale * w * z[g];
                            }
                        }
                    }
                }
                grad[e.log_scale] += d_log_scale;
            }
            if let Some(a) = &self.layout.ar[k] {
                let rho = x[a.atanh_rho].tanh();
                let one_m = 1.0 - rho * rho;
                if !(one_m > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let scale = x[a.log_scale].exp();
                let root = one_m.sqrt();
                let e = &x[a.innovations.clone()];
                let (mut d_rho, mut d_scale) = (0.0, 0.0);
                for r in panel.subject_ranges() {
                    let mut lam = 0.0;
                    // u_{t-1} is needed for ∂ρ, so rebuild the path first
                    let mut u = Vec::with_capacity(r.len());
                    for (j, obs) in r.clone().enumerate() {
                        let prev = u.last().copied().unwrap_or(0.0);
                        u.push(if j == 0 { scale / root * e[obs] } else { rho * prev + scale * e[obs] });
                    }
                    for (j, obs) in r.clone().enumerate().rev() {
                        lam = adj[obs][k] + rho * lam;
                        if j == 0 {
                            grad[a.innovations.start + obs] += lam * scale / root;
                            d_scale += lam * e[obs] / root;
                            d_rho += lam * e[obs] * scale * rho / (one_m * root);
                        } else {
                            grad[a.innovations.start + obs] += lam * scale;
                            d_scale += lam * e[obs];
                            d_rho += lam * u[j - 1];
                        }
                    }
                }
                grad[a.atanh_rho] += d_rho * one_m;
                grad[a.log_scale] += d_scale * scale;
            }
        }
        let lp = log_prior(&self.layout, x, &self.prior, Some(grad));
        let total = ll + lp;
        if total.is_finite() && grad.iter().all(|g| g.is_finite()) {
            total
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl<E: EventModel> LogDensity for Posterior<'_, E> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(x, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::ObservationRow;
    use crate::structure::{assemble_params, MomentTerms, Variant};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn panel(n: usize, t: usize, seed: u64) -> PanelData {
        let mut rng = rng_from_seed(seed);
        let rows = (0..n)
            .flat_map(|i| (0..t).map(move |k| (i, k)))
            .map(|(i, k)| ObservationRow {
                subject: format!("s{i}"),
                time: k as f64,
                y: rng.random_bool(0.4),
                covariates: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
            })
            .collect();
        PanelData::from_rows(vec!["x1".into(), "x2".into(), "zero".into()], rows).unwrap()
    }

    #[test]
    fn trivial_likelihoods() {
        let p = PanelData::from_rows(vec![], vec![
            ObservationRow { subject: "a".into(), time: 0.0, y: true, covariates: vec![] },
            ObservationRow { subject: "a".into(), time: 1.0, y: false, covariates: vec![] },
        ])
        .unwrap();
        let ll = log_likelihood(&p, &[SasParams::standard(); 2]).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn half_cauchy_at_its_scale() {
        let (lp, _) = half_cauchy_log_scale(2.5f64.ln(), 2.5);
        // density at the scale plus log-Jacobian log(2.5)
        let expected = (2.0 / (std::f64::consts::PI * 2.5)).ln() - 2f64.ln() + 2.5f64.ln();
        assert!((lp - expected).abs() < 1e-14);
        let (lp, d) = half_cauchy_log_scale(800.0, 2.5);
        assert!(lp.is_finite() && (d + 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_rho_prior() {
        let (lp, d) = uniform_atanh(0.0);
        assert!((lp + std::f64::consts::LN_2).abs() < 1e-15 && d == 0.0);
        let k = 0.7f64;
        let direct = (1.0 - k.tanh().powi(2)).ln() - std::f64::consts::LN_2;
        assert!((uniform_atanh(k).0 - direct).abs() < 1e-14);
        assert!(uniform_atanh(400.0).0.is_finite());
    }

    #[test]
    fn doubling_beta_changes_prior_quadratically() {
        let p = panel(3, 2, 1);
        let spec = MomentSpec::uniform(&["x1"], false);
        let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
        let mut x = vec![0.0; post.layout().dim()];
        x[1] = 0.8;
        let a = post.log_prior(&x);
        x[1] = 1.6;
        let b = post.log_prior(&x);
        assert!((b - a + 3.0 * 0.64 / (2.0 * 25.0)).abs() < 1e-14);
    }

    fn random_state(dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect()
    }

    fn check_gradient(post: &Posterior<'_, ExactSas>, x: &[f64]) {
        let (_, g) = post.log_posterior_and_gradient(x).unwrap();
        let h = 1e-5;
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (post.log_posterior_and_gradient(&xp).unwrap().0 - post.log_posterior_and_gradient(&xm).unwrap().0)
                / (2.0 * h);
            let err = (fd - g[j]).abs() / fd.abs().max(1.0);
            assert!(err < 1e-5, "{}: analytic {} vs fd {}", post.layout().names()[j], g[j], fd);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = panel(6, 4, 2);
        let mut spec = MomentSpec::uniform(&["x1", "x2"], true);
        spec.mu.ar1 = true;
        spec.nu.ar1 = true;
        let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
        for seed in 0..3 {
            check_gradient(&post, &random_state(post.layout().dim(), seed));
        }
    }

    #[test]
    fn zero_covariate_gets_prior_gradient_only() {
        let p = panel(4, 3, 3);
        let spec = MomentSpec::uniform(&["x1", "zero"], true);
        let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
        let x = random_state(post.layout().dim(), 5);
        let (_, g) = post.log_posterior_and_gradient(&x).unwrap();
        for m in Moment::ALL {
            let j = post.layout().beta_range(m).end - 1;
            assert!((g[j] + x[j] / 25.0).abs() < 1e-16);
        }
    }

    #[test]
    fn value_is_likelihood_plus_prior() {
        let p = panel(5, 3, 4);
        let spec = MomentSpec::uniform(&["x1"], true);
        let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
        let x = random_state(post.layout().dim(), 6);
        let (v, _) = post.log_posterior_and_gradient(&x).unwrap();
        let coef = post.layout().coefficients(&p, &x).unwrap();
        let params = assemble_params(&p, post.design(), &coef, &spec).unwrap();
        let ll = log_likelihood(&p, &params).unwrap();
        assert!((v - ll - post.log_prior(&x)).abs() < 1e-10);
    }

    #[test]
    fn no_tail_reduces_to_probit() {
        let p = panel(8, 3, 7);
        let spec = MomentSpec {
            mu: MomentTerms::with_covariates(["x1", "x2"]),
            sigma: MomentTerms { intercept: false, ..Default::default() },
            ..Default::default()
        }
        .with_variant(Variant::NoTail);
        let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
        let x = random_state(post.layout().dim(), 8);
        let ll = post.log_likelihood(&x);
        let probit: f64 = (0..p.n_obs())
            .map(|k| {
                let eta = x[0] + x[1] * p.covariate(k, 0) + x[2] * p.covariate(k, 1);
                let q = normal::cdf(eta);
                if p.outcomes()[k] { q.ln() } else { (1.0 - q).ln() }
            })
            .sum();
        assert!((ll - probit).abs() < 1e-10, "{ll} vs {probit}");
    }

    #[test]
    fn finite_under_extreme_states() {
        let p = panel(4, 3, 9);
        let mut spec = MomentSpec::uniform(&["x1"], true);
        spec.tau.ar1 = true;
        let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
        for v in [-200.0, 200.0] {
            let x = vec![v; post.layout().dim()];
            assert!(post.log_likelihood(&x).is_finite());
        }
    }
}
