//! Per-moment regression structure.
//!
//! Each latent moment `m ∈ {μ, σ, ν, τ}` has a linear predictor
//! `x'β + b_i + u_it`. Random intercepts `b_i` are either direct subject
//! effects or multiple-membership combinations `Σ_g w_ig γ_g`, and `u_it` is an
//! optional stationary Gaussian AR(1) path. Scale and tail weight use log
//! links; location and skewness use the identity.

use crate::error::{Error, Result};
use crate::normal;
use crate::panel::{validate_weight_row, Moment, PanelData};
use crate::sas::SasParams;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Log-link predictors are clamped to `±LOG_LINK_BOUND` before
/// exponentiation.
pub const LOG_LINK_BOUND: f64 = 30.0;

/// Which moments are free. Reduced variants pin the dropped moments at their
/// normal values (`ν = 0`, `τ = 1`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    Full,
    NoSkew,
    NoTail,
}

impl Variant {
    pub fn is_active(self, m: Moment) -> bool {
        match (self, m) {
            (Variant::Full, _) | (_, Moment::Mu) | (_, Moment::Sigma) => true,
            (Variant::NoSkew, Moment::Tau) => true,
            _ => false,
        }
    }
}

fn yes() -> bool {
    true
}

/// Regression terms for one moment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentTerms {
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub random_intercept: bool,
    #[serde(default)]
    pub ar1: bool,
}

impl Default for MomentTerms {
    fn default() -> Self {
        MomentTerms { intercept: true, covariates: Vec::new(), random_intercept: false, ar1: false }
    }
}

impl MomentTerms {
    pub fn with_covariates<S: Into<String>>(covs: impl IntoIterator<Item = S>) -> Self {
        MomentTerms { covariates: covs.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    pub fn random_intercept(mut self, on: bool) -> Self {
        self.random_intercept = on;
        self
    }

    pub fn ar1(mut self, on: bool) -> Self {
        self.ar1 = on;
        self
    }
}

/// Model structure: terms per moment, random-effect layout and variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    #[serde(default)]
    pub mu: MomentTerms,
    #[serde(default)]
    pub sigma: MomentTerms,
    #[serde(default)]
    pub nu: MomentTerms,
    #[serde(default)]
    pub tau: MomentTerms,
    /// Random intercepts come from group effects weighted by the panel's
    /// membership matrix instead of one effect per subject.
    #[serde(default)]
    pub multiple_membership: bool,
    #[serde(default)]
    pub variant: Variant,
}

impl Default for MomentSpec {
    fn default() -> Self {
        MomentSpec {
            mu: MomentTerms::default(),
            sigma: MomentTerms::default(),
            nu: MomentTerms::default(),
            tau: MomentTerms::default(),
            multiple_membership: false,
            variant: Variant::Full,
        }
    }
}

impl MomentSpec {
    /// Same covariates on every moment with a random intercept on each.
    pub fn uniform<S: Into<String> + Clone>(covariates: &[S], random_intercepts: bool) -> Self {
        let t = MomentTerms::with_covariates(covariates.iter().cloned()).random_intercept(random_intercepts);
        MomentSpec { mu: t.clone(), sigma: t.clone(), nu: t.clone(), tau: t, ..Default::default() }
    }

    pub fn terms(&self, m: Moment) -> &MomentTerms {
        match m {
            Moment::Mu => &self.mu,
            Moment::Sigma => &self.sigma,
            Moment::Nu => &self.nu,
            Moment::Tau => &self.tau,
        }
    }

    pub fn terms_mut(&mut self, m: Moment) -> &mut MomentTerms {
        match m {
            Moment::Mu => &mut self.mu,
            Moment::Sigma => &mut self.sigma,
            Moment::Nu => &mut self.nu,
            Moment::Tau => &mut self.tau,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn active_moments(&self) -> Vec<Moment> {
        Moment::ALL.into_iter().filter(|m| self.variant.is_active(*m)).collect()
    }

    pub fn has_random_intercept(&self, m: Moment) -> bool {
        self.variant.is_active(m) && self.terms(m).random_intercept
    }

    pub fn has_ar1(&self, m: Moment) -> bool {
        self.variant.is_active(m) && self.terms(m).ar1
    }
}

/// Per-moment design matrices (row-major, one row per observation).
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    n_obs: usize,
    names: [Vec<String>; 4],
    values: [Vec<f64>; 4],
}

impl Design {
    pub fn build(panel: &PanelData, spec: &MomentSpec) -> Result<Self> {
        let n = panel.n_obs();
        let mut names: [Vec<String>; 4] = Default::default();
        let mut values: [Vec<f64>; 4] = Default::default();
        for m in spec.active_moments() {
            let terms = spec.terms(m);
            let cols: Vec<usize> = terms
                .covariates
                .iter()
                .map(|c| {
                    panel
                        .covariate_index(c)
                        .ok_or_else(|| Error::Dimension(format!("moment {m}: unknown covariate `{c}`")))
                })
                .collect::<Result<_>>()?;
            let k = m.index();
            if terms.intercept {
                names[k].push("intercept".into());
            }
            names[k].extend(terms.covariates.iter().cloned());
            let p = names[k].len();
            let mut v = Vec::with_capacity(n * p);
            for obs in 0..n {
                if terms.intercept {
                    v.push(1.0);
                }
                v.extend(cols.iter().map(|&j| panel.covariate(obs, j)));
            }
            values[k] = v;
        }
        Ok(Design { n_obs: n, names, values })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn p(&self, m: Moment) -> usize {
        self.names[m.index()].len()
    }

    pub fn names(&self, m: Moment) -> &[String] {
        &self.names[m.index()]
    }

    #[inline]
    pub fn row(&self, m: Moment, obs: usize) -> &[f64] {
        let p = self.p(m);
        &self.values[m.index()][obs * p..(obs + 1) * p]
    }

    /// Total number of fixed effects, `Σ_m p_m`.
    pub fn n_fixed_effects(&self) -> usize {
        Moment::ALL.iter().map(|&m| self.p(m)).sum()
    }
}

/// Whether random intercepts are indexed by subject or by membership group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EffectLevel {
    Subject,
    Group,
}

/// Random intercepts for one moment on the natural scale.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomIntercepts {
    pub level: EffectLevel,
    pub scale: f64,
    pub values: Vec<f64>,
}

impl RandomIntercepts {
    pub fn subject(scale: f64, values: Vec<f64>) -> Self {
        RandomIntercepts { level: EffectLevel::Subject, scale, values }
    }

    pub fn group(scale: f64, values: Vec<f64>) -> Self {
        RandomIntercepts { level: EffectLevel::Group, scale, values }
    }
}

/// A realized AR(1) path for one moment, aligned with observation order.
#[derive(Clone, Debug, PartialEq)]
pub struct Ar1Terms {
    pub rho: f64,
    pub scale: f64,
    pub path: Vec<f64>,
}

/// All regression coefficients and realized random terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentCoefficients {
    pub beta: [Vec<f64>; 4],
    pub random: [Option<RandomIntercepts>; 4],
    pub ar1: [Option<Ar1Terms>; 4],
}

impl MomentCoefficients {
    /// All-zero coefficients sized for `design`, with no random terms.
    pub fn zeros(design: &Design) -> Self {
        let mut c = MomentCoefficients::default();
        for m in Moment::ALL {
            c.beta[m.index()] = vec![0.0; design.p(m)];
        }
        c
    }

    /// Number of random intercept values carried.
    pub fn n_random_effects(&self) -> usize {
        self.random.iter().flatten().map(|r| r.values.len()).sum()
    }
}

/// Raw (pre-link) predictor of moment `m` at observation `obs`.
pub fn linear_predictor(
    m: Moment,
    obs: usize,
    panel: &PanelData,
    design: &Design,
    coef: &MomentCoefficients,
) -> Result<f64> {
    let k = m.index();
    let x = design.row(m, obs);
    if coef.beta[k].len() != x.len() {
        return Err(Error::Dimension(format!(
            "moment {m}: {} coefficients for {} design columns",
            coef.beta[k].len(),
            x.len()
        )));
    }
    let mut eta: f64 = x.iter().zip(&coef.beta[k]).map(|(a, b)| a * b).sum();
    if let Some(re) = &coef.random[k] {
        let i = panel.obs_subject()[obs];
        eta += match re.level {
            EffectLevel::Group => {
                let mm = panel
                    .membership()
                    .ok_or_else(|| Error::Data("group effects given but panel has no membership weights".into()))?;
                mm_effect(&mm.rows[i], &re.values)?
            }
            EffectLevel::Subject => *re
                .values
                .get(i)
                .ok_or_else(|| Error::Dimension(format!("moment {m}: missing random intercept for subject {i}")))?,
        };
    }
    if let Some(ar) = &coef.ar1[k] {
        eta += *ar
            .path
            .get(obs)
            .ok_or_else(|| Error::Dimension(format!("moment {m}: AR(1) path shorter than panel")))?;
    }
    Ok(eta)
}

/// Identity links for `μ, ν`; log links for `σ, τ`.
pub fn apply_links(raw: [f64; 4]) -> SasParams {
    SasParams {
        mu: raw[0],
        sigma: raw[1].clamp(-LOG_LINK_BOUND, LOG_LINK_BOUND).exp(),
        nu: raw[2],
        tau: raw[3].clamp(-LOG_LINK_BOUND, LOG_LINK_BOUND).exp(),
    }
}

/// Multiple-membership random effect `Σ_g w_g γ_g`.
pub fn mm_effect(weights: &[(usize, f64)], gamma: &[f64]) -> Result<f64> {
    validate_weight_row(weights, gamma.len())?;
    Ok(weights.iter().map(|&(g, w)| w * gamma[g]).sum())
}

fn check_ar1(rho: f64, scale: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("AR(1) coefficient {rho} is not stationary")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("AR(1) innovation scale {scale} must be positive")));
    }
    Ok(())
}

/// Stationary AR(1) path of length `t`: `u_1 ~ N(0, s²/(1 − ρ²))`,
/// `u_t = ρ u_{t−1} + s ε_t`.
pub fn ar1_simulate<R: Rng + ?Sized>(t: usize, rho: f64, scale: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_ar1(rho, scale)?;
    let mut out = Vec::with_capacity(t);
    let mut prev = 0.0;
    for k in 0..t {
        let e: f64 = rng.sample(StandardNormal);
        let u = if k == 0 { scale / (1.0 - rho * rho).sqrt() * e } else { rho * prev + scale * e };
        out.push(u);
        prev = u;
    }
    Ok(out)
}

/// Exact Gaussian log-density of an AR(1) path.
pub fn ar1_logdensity(u: &[f64], rho: f64, scale: f64) -> Result<f64> {
    check_ar1(rho, scale)?;
    let mut lp = 0.0;
    for (k, &v) in u.iter().enumerate() {
        let (mean, sd) = if k == 0 { (0.0, scale / (1.0 - rho * rho).sqrt()) } else { (rho * u[k - 1], scale) };
        lp += normal::ln_pdf((v - mean) / sd) - sd.ln();
    }
    Ok(lp)
}

/// Raw link-scale predictors `(μ, log σ, ν, log τ)` for every observation,
/// with variant constraints applied.
pub fn assemble_links(
    panel: &PanelData,
    design: &Design,
    coef: &MomentCoefficients,
    spec: &MomentSpec,
) -> Result<Vec<[f64; 4]>> {
    if design.n_obs() != panel.n_obs() {
        return Err(Error::Dimension("design and panel disagree on observation count".into()));
    }
    for m in Moment::ALL {
        if let Some(re) = &coef.random[m.index()] {
            let expected = if re.level == EffectLevel::Group {
                panel
                    .membership()
                    .ok_or_else(|| Error::Data("multiple membership requested but panel has no weights".into()))?
                    .n_groups()
            } else {
                panel.n_subjects()
            };
            if re.values.len() != expected {
                return Err(Error::Dimension(format!(
                    "moment {m}: {} random effects, expected {expected}",
                    re.values.len()
                )));
            }
        }
    }
    let active = spec.active_moments();
    (0..panel.n_obs())
        .map(|obs| {
            let mut raw = [0.0; 4];
            for &m in &active {
                raw[m.index()] = linear_predictor(m, obs, panel, design, coef)?;
            }
            Ok(raw)
        })
        .collect()
}

/// One valid [`SasParams`] per observation.
pub fn assemble_params(
    panel: &PanelData,
    design: &Design,
    coef: &MomentCoefficients,
    spec: &MomentSpec,
) -> Result<Vec<SasParams>> {
    Ok(assemble_links(panel, design, coef, spec)?.into_iter().map(apply_links).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Membership, ObservationRow};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn panel(n: usize, t: usize, seed: u64) -> PanelData {
        let mut rng = rng_from_seed(seed);
        let rows = (0..n)
            .flat_map(|i| (0..t).map(move |k| (i, k)))
            .map(|(i, k)| ObservationRow {
                subject: format!("s{i}"),
                time: k as f64,
                y: rng.random_bool(0.5),
                covariates: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            })
            .collect();
        PanelData::from_rows(vec!["x1".into(), "x2".into()], rows).unwrap()
    }

    #[test]
    fn intercept_only_predictor() {
        let p = panel(2, 2, 1);
        let spec = MomentSpec::default();
        let d = Design::build(&p, &spec).unwrap();
        let mut c = MomentCoefficients::zeros(&d);
        c.beta[0] = vec![0.7];
        assert_eq!(linear_predictor(Moment::Mu, 3, &p, &d, &c).unwrap(), 0.7);
    }

    #[test]
    fn arithmetic_example() {
        let p = PanelData::from_rows(
            vec!["x".into()],
            vec![ObservationRow { subject: "a".into(), time: 0.0, y: true, covariates: vec![0.5] }],
        )
        .unwrap();
        let spec = MomentSpec { mu: MomentTerms::with_covariates(["x"]).random_intercept(true), ..Default::default() };
        let d = Design::build(&p, &spec).unwrap();
        let mut c = MomentCoefficients::zeros(&d);
        c.beta[0] = vec![0.2, -0.4];
        c.random[0] = Some(RandomIntercepts::subject(1.0, vec![0.1]));
        let v = linear_predictor(Moment::Mu, 0, &p, &d, &c).unwrap();
        assert!((v - 0.1).abs() < 1e-15);
        c.beta[0] = vec![0.2];
        assert!(matches!(linear_predictor(Moment::Mu, 0, &p, &d, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn link_examples() {
        assert_eq!(apply_links([0.0; 4]), SasParams::standard());
        let p = apply_links([1.5, 2f64.ln(), -0.3, 0.8f64.ln()]);
        assert!((p.sigma - 2.0).abs() < 1e-15 && (p.tau - 0.8).abs() < 1e-15);
        let p = apply_links([0.0, 50.0, 0.0, -900.0]);
        assert!(p.sigma.is_finite() && p.sigma == LOG_LINK_BOUND.exp());
        assert!(p.tau > 0.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn mm_examples() {
        let gamma = [0.3, -1.2, 2.0];
        assert_eq!(mm_effect(&[(1, 1.0)], &gamma).unwrap(), -1.2);
        let eq = mm_effect(&[(0, 1.0 / 3.0), (1, 1.0 / 3.0), (2, 1.0 / 3.0)], &gamma).unwrap();
        assert!((eq - gamma.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert!(mm_effect(&[(0, 0.5), (1, 0.4)], &gamma).is_err());
        assert!(mm_effect(&[(0, 1.5), (1, -0.5)], &gamma).is_err());
    }

    #[test]
    fn ar1_independent_case() {
        let u = [0.3, -1.0, 0.4];
        let lp = ar1_logdensity(&u, 0.0, 0.7).unwrap();
        let direct: f64 = u.iter().map(|v| normal::ln_pdf(v / 0.7) - 0.7f64.ln()).sum();
        assert!((lp - direct).abs() < 1e-13);
        assert!(ar1_logdensity(&u, 1.0, 0.7).is_err());
        assert!(ar1_simulate(3, -1.2, 1.0, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn zero_coefficients_give_standard_params() {
        let p = panel(4, 3, 2);
        let spec = MomentSpec::uniform(&["x1", "x2"], true);
        let d = Design::build(&p, &spec).unwrap();
        let mut c = MomentCoefficients::zeros(&d);
        for k in 0..4 {
            c.random[k] = Some(RandomIntercepts::subject(1.0, vec![0.0; 4]));
        }
        let t = assemble_params(&p, &d, &c, &spec).unwrap();
        assert!(t.iter().all(|s| *s == SasParams::standard()));
        assert_eq!(d.n_fixed_effects(), 12);
        assert_eq!(c.n_random_effects(), 4 * p.n_subjects());
    }

    #[test]
    fn no_tail_pins_shape() {
        let p = panel(3, 2, 3);
        let full = MomentSpec::uniform(&["x1"], false);
        let d_full = Design::build(&p, &full).unwrap();
        let mut c = MomentCoefficients::zeros(&d_full);
        for k in 0..4 {
            c.beta[k] = vec![0.4, -0.9];
        }
        let spec = full.clone().with_variant(Variant::NoTail);
        let d = Design::build(&p, &spec).unwrap();
        assert_eq!(d.p(Moment::Nu), 0);
        let mut c2 = c.clone();
        c2.beta[2].clear();
        c2.beta[3].clear();
        let t = assemble_params(&p, &d, &c2, &spec).unwrap();
        assert!(t.iter().all(|s| s.nu == 0.0 && s.tau == 1.0));
        // idempotent
        let spec2 = spec.clone().with_variant(Variant::NoTail);
        assert_eq!(assemble_params(&p, &d, &c2, &spec2).unwrap(), t);
    }

    #[test]
    fn identity_membership_reduces_to_subject_effects() {
        let p = panel(5, 3, 4);
        let pm = p.clone().with_membership(Membership::identity(p.subject_ids())).unwrap();
        let b: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let spec = MomentSpec { mu: MomentTerms::default().random_intercept(true), ..Default::default() };
        let mut mm_spec = spec.clone();
        mm_spec.multiple_membership = true;
        let d = Design::build(&p, &spec).unwrap();
        let mut c = MomentCoefficients::zeros(&d);
        c.random[0] = Some(RandomIntercepts::subject(1.0, b.clone()));
        let direct = assemble_params(&p, &d, &c, &spec).unwrap();
        c.random[0] = Some(RandomIntercepts::group(1.0, b));
        let via_mm = assemble_params(&pm, &d, &c, &mm_spec).unwrap();
        assert_eq!(direct, via_mm);
    }
}
