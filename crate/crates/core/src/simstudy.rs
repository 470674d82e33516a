//! Simulated panels and the replication harness.
//!
//! Subjects carry a static covariate `x_static ~ U(−1, 1)` and a
//! time-varying covariate `x_time ~ U(−1, 1)` drawn afresh at each of the
//! times `1..=T`. Every moment has the linear predictor
//! `β₀ + β₁·x_static + β₂·x_time + b_i` with `b_i ~ N(0, sd²)`, on the link
//! scale of [`crate::structure`]. The latent variable is then drawn from the
//! sinh–arcsinh family, from a skew-t with a slant that drifts in time, or
//! from a two-component normal mixture whose weight drifts in time.
//!
//! Replication `r` of a study with master seed `s` uses the seed
//! `derive_seed(s, r)`. Within a replication, the panels come from child
//! stream 0 of that seed and the estimators blas, quad, gee and glmm use
//! child streams 1 to 4.

use crate::baselines::{
    baseline_predict, fit_gee, fit_glmm, BaselineFit, WorkingCorrelation, GLMM_DEFAULT_NODES,
};
use crate::error::{Error, Result};
use crate::hmc::{PosteriorDraws, SamplerConfig};
use crate::metrics::{moment_recovery, MetricSet};
use crate::model::PriorConfig;
use crate::normal;
use crate::panel::{Moment, ObservationRow, PanelData};
use crate::par::*;
use crate::posterior::{hmc_run, posterior_event_probs, posterior_event_probs_with, posterior_moments, Interval};
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::sas::{self, SasParams};
use crate::structure::{apply_links, MomentSpec};
use crate::surface::{quad_fit, ProbabilitySurface, QuadFit};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

pub const STATIC_COVARIATE: &str = "x_static";
pub const TIME_COVARIATE: &str = "x_time";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    Sas,
    SkewT,
    Mixture,
}

/// `(β₀, β₁, β₂)` for each moment on its link scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrueCoefficients {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub nu: [f64; 3],
    pub tau: [f64; 3],
}

impl Default for TrueCoefficients {
    fn default() -> Self {
        TrueCoefficients { mu: [-0.3, 0.6, 0.5], sigma: [0.1, 0.2, 0.0], nu: [0.2, 0.0, 0.4], tau: [0.0, 0.1, 0.0] }
    }
}

impl TrueCoefficients {
    pub fn get(&self, m: Moment) -> [f64; 3] {
        match m {
            Moment::Mu => self.mu,
            Moment::Sigma => self.sigma,
            Moment::Nu => self.nu,
            Moment::Tau => self.tau,
        }
    }
}

/// Azzalini skew-t with slant `a₀ + a₁·t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkewTParams {
    pub df: f64,
    pub slant_intercept: f64,
    pub slant_trend: f64,
}

impl Default for SkewTParams {
    fn default() -> Self {
        SkewTParams { df: 5.0, slant_intercept: 0.0, slant_trend: 0.3 }
    }
}

impl SkewTParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.df > 2.0) {
            return Err(Error::InvalidParameter(format!("skew-t degrees of freedom must exceed 2, got {}", self.df)));
        }
        if !self.slant_intercept.is_finite() || !self.slant_trend.is_finite() {
            return Err(Error::InvalidParameter("skew-t slant must be finite".into()));
        }
        Ok(())
    }

    pub fn slant(&self, t: f64) -> f64 {
        self.slant_intercept + self.slant_trend * t
    }
}

/// Two normal components shifted by the location predictor, with weight
/// `π_t = logistic(c₀ + c₁·t)` on the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureParams {
    pub means: [f64; 2],
    pub sds: [f64; 2],
    pub weight_intercept: f64,
    pub weight_trend: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        MixtureParams { means: [-0.5, 1.0], sds: [0.8, 1.5], weight_intercept: 0.5, weight_trend: -0.3 }
    }
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        if !self.sds.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("mixture SDs must be positive, got {:?}", self.sds)));
        }
        if !self.means.iter().chain([&self.weight_intercept, &self.weight_trend]).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("mixture parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn weight(&self, t: f64) -> f64 {
        1.0 / (1.0 + (-(self.weight_intercept + self.weight_trend * t)).exp())
    }

    /// `Pr(Z > 0)` given the location predictor.
    pub fn event_prob(&self, mu: f64, t: f64) -> f64 {
        let w = self.weight(t);
        w * normal::cdf((self.means[0] + mu) / self.sds[0]) + (1.0 - w) * normal::cdf((self.means[1] + mu) / self.sds[1])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub skew_t: SkewTParams,
    pub mixture: MixtureParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimDesign {
    pub n_subjects: usize,
    pub n_times: usize,
    pub beta: TrueCoefficients,
    /// Random-intercept SDs ordered `μ, σ, ν, τ`.
    pub re_sd: [f64; 4],
    pub scenario: Scenario,
    pub params: ScenarioParams,
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign {
            n_subjects: 250,
            n_times: 6,
            beta: TrueCoefficients::default(),
            re_sd: [0.5, 0.2, 0.2, 0.2],
            scenario: Scenario::Sas,
            params: ScenarioParams::default(),
            replications: 20,
            seed: 1,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 || self.n_times < 2 {
            return Err(Error::InvalidParameter(format!(
                "design needs at least 2 subjects and 2 times, got N = {}, T = {}",
                self.n_subjects, self.n_times
            )));
        }
        if self.replications < 1 {
            return Err(Error::InvalidParameter("replication count must be at least 1".into()));
        }
        if !self.re_sd.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("random-effect SDs must be non-negative, got {:?}", self.re_sd)));
        }
        if !Moment::ALL.iter().flat_map(|&m| self.beta.get(m)).all(f64::is_finite) {
            return Err(Error::InvalidParameter("true coefficients must be finite".into()));
        }
        match self.scenario {
            Scenario::Sas => Ok(()),
            Scenario::SkewT => self.params.skew_t.validate(),
            Scenario::Mixture => self.params.mixture.validate(),
        }
    }
}

/// A simulated panel with the link-scale linear predictors that generated
/// each observation (panel order). For the sinh–arcsinh scenario these are
/// the true latent moments. `holdout` is a replicate panel for the same
/// subjects and times: same static covariates and random effects, fresh
/// time-varying covariates and latent draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPanel {
    pub panel: PanelData,
    pub holdout: PanelData,
    pub scenario: Scenario,
    pub links: Vec<[f64; 4]>,
    pub holdout_links: Vec<[f64; 4]>,
}

impl SimulatedPanel {
    /// True `(μ, σ, ν, τ)` per observation; `None` outside the sinh–arcsinh
    /// scenario, where the moments do not define the latent law.
    pub fn truth(&self) -> Option<Vec<SasParams>> {
        (self.scenario == Scenario::Sas).then(|| self.links.iter().map(|l| apply_links(*l)).collect())
    }
}

/// Shared skeleton: covariates, random effects and predictors, with the
/// latent draw supplied by `latent(rng, links, t)`. Subject-level draws come
/// first, then the fitting panel, then the holdout panel.
fn generate<F>(design: &SimDesign, scenario: Scenario, seed: u64, mut latent: F) -> Result<SimulatedPanel>
where
    F: FnMut(&mut SimRng, &[f64; 4], f64) -> f64,
{
    design.validate()?;
    let mut rng = rng_from_seed(seed);
    let subjects: Vec<(f64, [f64; 4])> = (0..design.n_subjects)
        .map(|_| {
            let x_static: f64 = rng.random_range(-1.0..1.0);
            let b: [f64; 4] = std::array::from_fn(|k| design.re_sd[k] * rng.sample::<f64, _>(StandardNormal));
            (x_static, b)
        })
        .collect();
    let width = design.n_subjects.to_string().len();
    let mut one_panel = |rng: &mut SimRng| -> Result<(PanelData, Vec<[f64; 4]>)> {
        let mut rows = Vec::with_capacity(design.n_subjects * design.n_times);
        let mut links = Vec::with_capacity(rows.capacity());
        for (i, (x_static, b)) in subjects.iter().enumerate() {
            for t in 1..=design.n_times {
                let x_time: f64 = rng.random_range(-1.0..1.0);
                let l: [f64; 4] = std::array::from_fn(|k| {
                    let c = design.beta.get(Moment::ALL[k]);
                    c[0] + c[1] * x_static + c[2] * x_time + b[k]
                });
                let z = latent(rng, &l, t as f64);
                rows.push(ObservationRow {
                    subject: format!("s{i:0width$}"),
                    time: t as f64,
                    y: z > 0.0,
                    covariates: vec![*x_static, x_time],
                });
                links.push(l);
            }
        }
        let panel = PanelData::from_rows(vec![STATIC_COVARIATE.into(), TIME_COVARIATE.into()], rows)?;
        Ok((panel, links))
    };
    let (panel, links) = one_panel(&mut rng)?;
    let (holdout, holdout_links) = one_panel(&mut rng)?;
    Ok(SimulatedPanel { panel, holdout, scenario, links, holdout_links })
}

/// Sinh–arcsinh latent variable.
pub fn simulate_panel(design: &SimDesign, seed: u64) -> Result<SimulatedPanel> {
    if design.scenario != Scenario::Sas {
        return Err(Error::InvalidParameter(format!("simulate_panel needs the sas scenario, got {:?}", design.scenario)));
    }
    generate(design, Scenario::Sas, seed, |rng, l, _| {
        let eps: f64 = rng.sample(StandardNormal);
        sas::transform(eps, &apply_links(*l))
    })
}

/// One standard Azzalini skew-t draw.
pub fn skew_t_draw<R: Rng + ?Sized>(rng: &mut R, slant: f64, chi: &ChiSquared<f64>, df: f64) -> f64 {
    let delta = slant / (1.0 + slant * slant).sqrt();
    let u0: f64 = rng.sample(StandardNormal);
    let u1: f64 = rng.sample(StandardNormal);
    let x = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
    let w = chi.sample(rng);
    x / (w / df).sqrt()
}

/// Skew-t latent variable with location `μ_it` and scale `σ_it`.
pub fn simulate_skew_t(design: &SimDesign, params: &SkewTParams, seed: u64) -> Result<SimulatedPanel> {
    params.validate()?;
    let chi = ChiSquared::new(params.df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    generate(design, Scenario::SkewT, seed, |rng, l, t| {
        let st = skew_t_draw(rng, params.slant(t), &chi, params.df);
        l[0] + l[1].exp() * st
    })
}

/// Normal-mixture latent variable shifted by `μ_it`.
pub fn simulate_mixture(design: &SimDesign, params: &MixtureParams, seed: u64) -> Result<SimulatedPanel> {
    params.validate()?;
    generate(design, Scenario::Mixture, seed, |rng, l, t| {
        let k = if rng.random_bool(params.weight(t)) { 0 } else { 1 };
        let eps: f64 = rng.sample(StandardNormal);
        l[0] + params.means[k] + params.sds[k] * eps
    })
}

/// Dispatches on `design.scenario`.
pub fn simulate(design: &SimDesign, seed: u64) -> Result<SimulatedPanel> {
    match design.scenario {
        Scenario::Sas => simulate_panel(design, seed),
        Scenario::SkewT => simulate_skew_t(design, &design.params.skew_t, seed),
        Scenario::Mixture => simulate_mixture(design, &design.params.mixture, seed),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Blas,
    Quad,
    Gee,
    Glmm,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Blas, Estimator::Quad, Estimator::Gee, Estimator::Glmm];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Blas => "blas",
            Estimator::Quad => "quad",
            Estimator::Gee => "gee",
            Estimator::Glmm => "glmm",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model `{s}` (expected blas, quad, gee or glmm)")))
    }
}

/// Default structure for the latent-moment fits: both covariates on every
/// moment and a random intercept on the location. The scale equation has no
/// intercept, fixing `σ = 1` at zero covariates, since binary outcomes only
/// see `μ/σ`.
pub fn default_fit_spec() -> MomentSpec {
    let mut spec = MomentSpec::uniform(&[STATIC_COVARIATE, TIME_COVARIATE], false);
    spec.mu.random_intercept = true;
    spec.sigma.intercept = false;
    spec
}

/// Coefficient scales `(5, 5, 0.25, 0.25)`: shape coefficients are shrunk
/// toward the normal special case.
pub fn default_fit_prior() -> PriorConfig {
    PriorConfig { lambda: [5.0, 5.0, 0.25, 0.25], ..Default::default() }
}

fn default_baseline_covariates() -> Vec<String> {
    vec![STATIC_COVARIATE.into(), TIME_COVARIATE.into()]
}

fn default_glmm_nodes() -> usize {
    GLMM_DEFAULT_NODES
}

/// Everything an estimator needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default = "default_fit_spec")]
    pub spec: MomentSpec,
    #[serde(default = "default_fit_prior")]
    pub prior: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_baseline_covariates")]
    pub baseline_covariates: Vec<String>,
    #[serde(default)]
    pub working_correlation: WorkingCorrelation,
    #[serde(default = "default_glmm_nodes")]
    pub glmm_nodes: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            spec: default_fit_spec(),
            prior: default_fit_prior(),
            sampler: SamplerConfig::default(),
            baseline_covariates: default_baseline_covariates(),
            working_correlation: WorkingCorrelation::default(),
            glmm_nodes: GLMM_DEFAULT_NODES,
        }
    }
}

/// A fitted estimator.
#[derive(Clone, Debug)]
pub enum EstimatorFit {
    Blas(PosteriorDraws),
    Quad(QuadFit),
    Baseline(BaselineFit),
}

fn missing_surface() -> Error {
    Error::InvalidParameter("the quad model needs a probability surface; run `build-surface` first".into())
}

/// Fits one estimator; `seed` replaces the sampler seed for the Bayesian
/// models.
pub fn fit_estimator(
    estimator: Estimator,
    panel: &PanelData,
    settings: &FitSettings,
    surface: Option<&ProbabilitySurface>,
    seed: u64,
) -> Result<EstimatorFit> {
    let cfg = SamplerConfig { seed, ..settings.sampler.clone() };
    let covs = &settings.baseline_covariates;
    Ok(match estimator {
        Estimator::Blas => EstimatorFit::Blas(hmc_run(panel, &settings.spec, &settings.prior, &cfg)?),
        Estimator::Quad => {
            let surface = surface.ok_or_else(missing_surface)?;
            EstimatorFit::Quad(quad_fit(panel, &settings.spec, &settings.prior, surface, &cfg)?)
        }
        Estimator::Gee => {
            EstimatorFit::Baseline(BaselineFit::Gee(fit_gee(panel, covs, settings.working_correlation)?, covs.clone()))
        }
        Estimator::Glmm => {
            EstimatorFit::Baseline(BaselineFit::Glmm(fit_glmm(panel, covs, settings.glmm_nodes)?, covs.clone()))
        }
    })
}

impl EstimatorFit {
    /// Per-observation event probability: the posterior mean for the
    /// Bayesian models, the plug-in prediction for the baselines.
    pub fn probabilities(
        &self,
        panel: &PanelData,
        spec: &MomentSpec,
        surface: Option<&ProbabilitySurface>,
    ) -> Result<Vec<f64>> {
        let intervals = match self {
            EstimatorFit::Blas(d) => posterior_event_probs(d, panel, spec)?,
            EstimatorFit::Quad(q) => posterior_event_probs_with(&q.draws, panel, spec, surface.ok_or_else(missing_surface)?)?,
            EstimatorFit::Baseline(b) => return baseline_predict(b, panel),
        };
        Ok(intervals.into_iter().map(|i| i.mean).collect())
    }

    /// Posterior latent-moment summaries; `None` for the baselines.
    pub fn moments(&self, panel: &PanelData, spec: &MomentSpec) -> Result<Option<[Vec<Interval>; 4]>> {
        match self {
            EstimatorFit::Blas(d) => posterior_moments(d, panel, spec).map(Some),
            EstimatorFit::Quad(q) => posterior_moments(&q.draws, panel, spec).map(Some),
            EstimatorFit::Baseline(_) => Ok(None),
        }
    }

    pub fn draws(&self) -> Option<&PosteriorDraws> {
        match self {
            EstimatorFit::Blas(d) => Some(d),
            EstimatorFit::Quad(q) => Some(&q.draws),
            EstimatorFit::Baseline(_) => None,
        }
    }
}

/// One metric value of one estimator in one replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub message: String,
}

/// Mean of one metric over the replications where it was defined.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub estimator: Estimator,
    pub metric: String,
    pub mean: f64,
    /// Standard deviation over replications divided by `√n`; zero when
    /// `n = 1`.
    pub mc_se: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationReport {
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<FailureRecord>,
}

impl ReplicationReport {
    /// Entries in estimator order, then in order of first appearance of
    /// each metric.
    pub fn summary(&self) -> Vec<SummaryEntry> {
        let mut out = Vec::new();
        for &est in &self.estimators {
            let mut metrics: Vec<&str> = Vec::new();
            for r in self.rows.iter().filter(|r| r.estimator == est) {
                if !metrics.contains(&r.metric.as_str()) {
                    metrics.push(&r.metric);
                }
            }
            for metric in metrics {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.estimator == est && r.metric == metric)
                    .filter_map(|r| r.value)
                    .collect();
                if v.is_empty() {
                    continue;
                }
                let n = v.len();
                let mean = v.iter().sum::<f64>() / n as f64;
                let mc_se = if n > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
                } else {
                    0.0
                };
                out.push(SummaryEntry { estimator: est, metric: metric.to_string(), mean, mc_se, n });
            }
        }
        out
    }

    pub fn mean(&self, estimator: Estimator, metric: &str) -> Option<f64> {
        self.summary().into_iter().find(|e| e.estimator == estimator && e.metric == metric).map(|e| e.mean)
    }

    pub fn failure_count(&self, estimator: Estimator) -> usize {
        self.failures.iter().filter(|f| f.estimator == estimator).count()
    }

    /// Long format: `replication,seed,estimator,metric,value`, empty value
    /// when undefined.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "seed", "estimator", "metric", "value"])?;
        for r in &self.rows {
            let value = r.value.map(crate::hmc::fmt_f64).unwrap_or_default();
            w.write_record([r.replication.to_string(), r.seed.to_string(), r.estimator.to_string(), r.metric.clone(), value])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let failures: serde_json::Map<String, serde_json::Value> =
            self.estimators.iter().map(|e| (e.to_string(), self.failure_count(*e).into())).collect();
        serde_json::json!({
            "replications": self.replications,
            "summary": self.summary(),
            "failure_counts": failures,
            "failures": self.failures,
        })
    }
}

/// Per-replication scores for every estimator. Predictions are scored on the
/// holdout panel; recovery of the latent moments is scored on the fitted
/// panel, and only when it carries a true moment table.
fn run_one(
    replication: usize,
    design: &SimDesign,
    estimators: &[Estimator],
    settings: &FitSettings,
    surface: Option<&ProbabilitySurface>,
) -> (Vec<ReplicationRow>, Vec<FailureRecord>) {
    let seed = derive_seed(design.seed, replication as u64);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let sim = match simulate(design, derive_seed(seed, 0)) {
        Ok(s) => s,
        Err(e) => {
            for &est in estimators {
                failures.push(FailureRecord { replication, seed, estimator: est, message: format!("simulation: {e}") });
            }
            return (rows, failures);
        }
    };
    let truth = sim.truth();
    for &est in estimators {
        let scored = fit_estimator(est, &sim.panel, settings, surface, derive_seed(seed, 1 + est.code())).and_then(|fit| {
            let probs = fit.probabilities(&sim.holdout, &settings.spec, surface)?;
            let mut m = MetricSet::score(&probs, sim.holdout.outcomes())?;
            if let (Some(truth), Some(moments)) = (&truth, fit.moments(&sim.panel, &settings.spec)?) {
                for k in settings.spec.active_moments() {
                    let t: Vec<f64> = truth.iter().map(|p| p.as_array()[k.index()]).collect();
                    m.recovery[k.index()] = Some(moment_recovery(&moments[k.index()], &t)?);
                }
            }
            let mut extra = Vec::new();
            if let Some(d) = fit.draws() {
                extra.push(("divergent_transitions".to_string(), Some(d.divergent_count() as f64)));
            }
            if let EstimatorFit::Quad(q) = &fit {
                extra.push(("surface_clamp_rate".to_string(), Some(q.clamp_rate)));
            }
            Ok((m, extra))
        });
        match scored {
            Ok((m, extra)) => {
                for (metric, value) in m.flat().into_iter().chain(extra) {
                    rows.push(ReplicationRow { replication, seed, estimator: est, metric, value });
                }
            }
            Err(e) => failures.push(FailureRecord { replication, seed, estimator: est, message: e.to_string() }),
        }
    }
    (rows, failures)
}

/// Simulates `design.replications` panels, fits every estimator to each and
/// scores predictions for the holdout panel. Estimator failures are recorded, never
/// propagated.
pub fn run_replications(
    design: &SimDesign,
    estimators: &[Estimator],
    settings: &FitSettings,
    surface: Option<&ProbabilitySurface>,
) -> Result<ReplicationReport> {
    design.validate()?;
    settings.prior.validate()?;
    settings.sampler.validate()?;
    if estimators.is_empty() {
        return Err(Error::InvalidParameter("no estimators requested".into()));
    }
    if estimators.contains(&Estimator::Quad) && surface.is_none() {
        return Err(missing_surface());
    }
    let parts: Vec<_> = (0..design.replications)
        .into_par_iter()
        .map(|r| run_one(r, design, estimators, settings, surface))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in parts {
        rows.extend(r);
        failures.extend(f);
    }
    Ok(ReplicationReport { replications: design.replications, estimators: estimators.to_vec(), rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: Scenario) -> SimDesign {
        SimDesign { n_subjects: 40, n_times: 3, scenario, replications: 1, ..Default::default() }
    }

    #[test]
    fn zero_design_is_balanced() {
        let d = SimDesign {
            n_subjects: 500,
            beta: TrueCoefficients { mu: [0.0; 3], sigma: [0.0; 3], nu: [0.0; 3], tau: [0.0; 3] },
            re_sd: [0.0; 4],
            ..Default::default()
        };
        let sim = simulate_panel(&d, 3).unwrap();
        let n = sim.panel.n_obs() as f64;
        let rate = sim.panel.outcomes().iter().filter(|&&y| y).count() as f64 / n;
        assert!((rate - 0.5).abs() < 3.0 / n.sqrt(), "{rate}");
    }

    #[test]
    fn layout_and_truth() {
        let sim = simulate_panel(&small(Scenario::Sas), 1).unwrap();
        assert_eq!(sim.panel.n_subjects(), 40);
        assert_eq!(sim.panel.n_obs(), 120);
        assert_eq!(sim.panel.times()[..3], [1.0, 2.0, 3.0]);
        let truth = sim.truth().unwrap();
        assert_eq!(truth.len(), 120);
        // static covariate constant within subject
        assert_eq!(sim.panel.covariate(0, 0), sim.panel.covariate(2, 0));
        let l = sim.links[5];
        assert!((truth[5].sigma - l[1].exp()).abs() < 1e-15);
        assert!(simulate_skew_t(&small(Scenario::SkewT), &SkewTParams::default(), 1).unwrap().truth().is_none());
    }

    #[test]
    fn seeds_reproduce() {
        for s in [Scenario::Sas, Scenario::SkewT, Scenario::Mixture] {
            let d = small(s);
            assert_eq!(simulate(&d, 9).unwrap(), simulate(&d, 9).unwrap());
            assert_ne!(simulate(&d, 9).unwrap().panel, simulate(&d, 10).unwrap().panel);
        }
    }

    #[test]
    fn invalid_designs() {
        assert!(simulate_panel(&SimDesign { n_subjects: 1, ..Default::default() }, 1).is_err());
        assert!(simulate_panel(&small(Scenario::Mixture), 1).is_err());
        let p = SkewTParams { df: 2.0, ..Default::default() };
        assert!(simulate_skew_t(&small(Scenario::SkewT), &p, 1).is_err());
        let m = MixtureParams { sds: [0.0, 1.0], ..Default::default() };
        assert!(simulate_mixture(&small(Scenario::Mixture), &m, 1).is_err());
    }

    #[test]
    fn degenerate_mixture() {
        let m = MixtureParams { weight_intercept: 50.0, weight_trend: 0.0, ..Default::default() };
        let p = m.event_prob(0.3, 2.0);
        assert!((p - normal::cdf((0.3 - 0.5) / 0.8)).abs() < 1e-15);
    }

    #[test]
    fn estimator_names() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("lasso".parse::<Estimator>().is_err());
    }

    #[test]
    fn gee_only_report() {
        let d = SimDesign { n_subjects: 60, replications: 1, ..Default::default() };
        let rep = run_replications(&d, &[Estimator::Gee], &FitSettings::default(), None).unwrap();
        assert!(rep.failures.is_empty());
        let metrics: Vec<&str> = rep.rows.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(metrics, ["auc", "brier", "calibration_slope", "calibration_intercept", "log_loss"]);
        assert_eq!(rep.summary().len(), 5);
        assert!(run_replications(&d, &[Estimator::Quad], &FitSettings::default(), None).is_err());
    }
}
