//! Running the exact-likelihood sampler and summarizing its draws.

use crate::error::{Error, Result};
use crate::hmc::{self, PosteriorDraws, SamplerConfig};
use crate::model::{EventModel, ExactSas, Posterior, PriorConfig};
use crate::normal;
use crate::panel::PanelData;
use crate::par::*;
use crate::sas;
use crate::structure::{apply_links, MomentSpec};
use serde::Serialize;

/// Posterior mean with a central 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    /// Summary of a sample; sorts it in place.
    pub fn from_sample(values: &mut [f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(f64::total_cmp);
        Interval { mean, lower: quantile_sorted(values, 0.025), upper: quantile_sorted(values, 0.975) }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Samples the exact-likelihood posterior.
pub fn hmc_run(panel: &PanelData, spec: &MomentSpec, prior: &PriorConfig, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    let post = Posterior::new(panel, spec, prior.clone(), ExactSas)?;
    hmc::sample(&post, post.layout().names().to_vec(), cfg)
}

/// Link-scale moments for every retained draw (draw-major).
fn draw_links<E: EventModel>(post: &Posterior<'_, E>, draws: &PosteriorDraws) -> Result<Vec<Vec<[f64; 4]>>> {
    if draws.names.as_slice() != post.layout().names() {
        return Err(Error::Dimension("draws do not match the model's parameter layout".into()));
    }
    let rows: Vec<&[f64]> = draws.iter().collect();
    Ok(rows.into_par_iter().map(|x| post.links(x)).collect())
}

fn summarize<F>(links: &[Vec<[f64; 4]>], f: F) -> Vec<Interval>
where
    F: Fn(usize, &[f64; 4]) -> f64 + Sync,
{
    let n_obs = links.first().map_or(0, Vec::len);
    (0..n_obs)
        .into_par_iter()
        .map(|obs| {
            let mut v: Vec<f64> = links.iter().map(|d| f(obs, &d[obs])).collect();
            Interval::from_sample(&mut v)
        })
        .collect()
}

/// Per-observation posterior event probability under the exact likelihood.
pub fn posterior_event_probs(draws: &PosteriorDraws, panel: &PanelData, spec: &MomentSpec) -> Result<Vec<Interval>> {
    posterior_event_probs_with(draws, panel, spec, ExactSas)
}

/// Per-observation posterior event probability under any event model.
pub fn posterior_event_probs_with<E: EventModel>(
    draws: &PosteriorDraws,
    panel: &PanelData,
    spec: &MomentSpec,
    event: E,
) -> Result<Vec<Interval>> {
    let post = Posterior::new(panel, spec, PriorConfig::default(), event)?;
    let links = draw_links(&post, draws)?;
    let model = post.event_model();
    Ok(summarize(&links, |_, l| {
        let clamped = clamp_links(l);
        normal::cdf(model.index_grad(&clamped).0)
    }))
}

fn clamp_links(l: &[f64; 4]) -> [f64; 4] {
    let p = apply_links(*l);
    [p.mu, p.sigma.ln(), p.nu, p.tau.ln()]
}

/// Posterior summaries of `(μ, σ, ν, τ)` per observation on the natural scale.
pub fn posterior_moments(draws: &PosteriorDraws, panel: &PanelData, spec: &MomentSpec) -> Result<[Vec<Interval>; 4]> {
    let post = Posterior::new(panel, spec, PriorConfig::default(), ExactSas)?;
    let links = draw_links(&post, draws)?;
    Ok(std::array::from_fn(|k| summarize(&links, |_, l| apply_links(*l).as_array()[k])))
}

/// Posterior-mean latent density of one subject at each of its observation
/// times, evaluated on `grid`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityCurve {
    pub time: f64,
    pub density: Vec<f64>,
}

pub fn latent_density_trajectory(
    draws: &PosteriorDraws,
    panel: &PanelData,
    spec: &MomentSpec,
    subject: &str,
    grid: &[f64],
) -> Result<Vec<DensityCurve>> {
    let i = panel.subject_index(subject).ok_or_else(|| Error::UnknownSubject(subject.to_string()))?;
    let post = Posterior::new(panel, spec, PriorConfig::default(), ExactSas)?;
    if draws.names.as_slice() != post.layout().names() {
        return Err(Error::Dimension("draws do not match the model's parameter layout".into()));
    }
    let range = panel.subject_range(i);
    let mut sums = vec![vec![0.0; grid.len()]; range.len()];
    for x in draws.iter() {
        let links = post.links(x);
        for (curve, obs) in sums.iter_mut().zip(range.clone()) {
            let p = apply_links(links[obs]);
            for (acc, &z) in curve.iter_mut().zip(grid) {
                *acc += sas::pdf(z, &p);
            }
        }
    }
    let n = draws.n_draws() as f64;
    Ok(range
        .zip(sums)
        .map(|(obs, s)| DensityCurve { time: panel.times()[obs], density: s.into_iter().map(|v| v / n).collect() })
        .collect())
}

/// Mean, SD and central 95% interval of every sampled parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn parameter_summaries(draws: &PosteriorDraws) -> Vec<ParameterSummary> {
    (0..draws.dim())
        .map(|j| {
            let mut v: Vec<f64> = draws.iter().map(|x| x[j]).collect();
            let n = v.len() as f64;
            let iv = Interval::from_sample(&mut v);
            let sd = (v.iter().map(|x| (x - iv.mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            ParameterSummary { name: draws.names[j].clone(), mean: iv.mean, sd, lower: iv.lower, upper: iv.upper }
        })
        .collect()
}
