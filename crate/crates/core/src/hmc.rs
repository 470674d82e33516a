//! Hamiltonian Monte Carlo with a jittered static trajectory.
//!
//! Each transition draws a leapfrog count uniformly from `1..=max_leapfrog`.
//! Warmup follows the usual windowed scheme: a fast initial buffer for step
//! size, doubling slow windows that estimate a diagonal inverse mass matrix,
//! and a terminal buffer that settles the step size. Step size is tuned by
//! dual averaging towards the configured mean acceptance probability.

use crate::error::{Error, Result};
use crate::par::*;
use crate::rng::{child_rng, SimRng};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Energy error beyond which a transition is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Fraction of divergent post-warmup transitions that fails a run.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.10;

/// An unnormalized log density with gradient on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density. A
    /// non-finite return marks an invalid point.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_leapfrog: usize,
    pub seed: u64,
    /// Initial values are drawn uniformly from `(-init_radius, init_radius)`.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iterations: 2000,
            warmup: 1000,
            target_accept: 0.8,
            max_leapfrog: 64,
            seed: 1,
            init_radius: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::InvalidParameter("at least one chain is required".into()));
        }
        if self.warmup >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter("target acceptance must lie in (0, 1)".into()));
        }
        if self.max_leapfrog < 1 {
            return Err(Error::InvalidParameter("max_leapfrog must be at least 1".into()));
        }
        if !(self.init_radius >= 0.0) {
            return Err(Error::InvalidParameter("init_radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        self.iterations - self.warmup
    }
}

/// Retained draws of one chain, stored row-major (`draws × dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct ChainDraws {
    pub values: Vec<f64>,
    pub log_density: Vec<f64>,
    pub divergent: Vec<bool>,
    pub accept_stat: Vec<f64>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub warmup_divergent: usize,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// Draw `k` of chain `c`.
    pub fn draw(&self, c: usize, k: usize) -> &[f64] {
        let d = self.dim();
        &self.chains[c].values[k * d..(k + 1) * d]
    }

    /// All draws, chain-major.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let d = self.dim();
        self.chains.iter().flat_map(move |c| c.values.chunks_exact(d))
    }

    /// Per-chain series of parameter `j`.
    pub fn parameter(&self, j: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        self.chains.iter().map(|c| c.values.iter().skip(j).step_by(d).copied().collect()).collect()
    }

    pub fn divergent_count(&self) -> usize {
        self.chains.iter().map(|c| c.divergent.iter().filter(|d| **d).count()).sum()
    }

    pub fn mean(&self, j: usize) -> f64 {
        let s: f64 = self.iter().map(|x| x[j]).sum();
        s / self.n_draws() as f64
    }

    /// CSV with columns `chain,draw,lp__,<names...>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string(), "lp__".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for k in 0..chain.len() {
                let mut rec = vec![c.to_string(), k.to_string(), fmt_f64(chain.log_density[k])];
                rec.extend(self.draw(c, k).iter().map(|v| fmt_f64(*v)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`PosteriorDraws::write_csv`]; sampler bookkeeping other
    /// than the log density is not persisted.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "chain" || &header[1] != "draw" || &header[2] != "lp__" {
            return Err(Error::Data("draws file must start with chain,draw,lp__".into()));
        }
        let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let mut chains: Vec<ChainDraws> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Data(format!("draws row {}: malformed number `{s}`", line + 1)))
            };
            let c: usize = rec[0].parse().map_err(|_| Error::Data(format!("draws row {}: bad chain", line + 1)))?;
            while chains.len() <= c {
                chains.push(ChainDraws {
                    values: Vec::new(),
                    log_density: Vec::new(),
                    divergent: Vec::new(),
                    accept_stat: Vec::new(),
                    step_size: f64::NAN,
                    inv_mass: Vec::new(),
                    warmup_divergent: 0,
                });
            }
            let ch = &mut chains[c];
            ch.log_density.push(parse(&rec[2])?);
            ch.divergent.push(false);
            ch.accept_stat.push(f64::NAN);
            for s in rec.iter().skip(3) {
                ch.values.push(parse(s)?);
            }
        }
        Ok(PosteriorDraws { names, chains })
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

struct DualAverage {
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    mu: f64,
    count: f64,
    target: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, target: f64) -> Self {
        DualAverage { log_step: step.ln(), log_step_bar: 0.0, h_bar: 0.0, mu: (10.0 * step).ln(), count: 0.0, target }
    }

    fn update(&mut self, accept: f64) {
        self.count += 1.0;
        let w = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_step = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.count.powf(-Self::KAPPA);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Welford accumulator for the diagonal mass matrix.
struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    fn new(dim: usize) -> Self {
        VarianceEstimator { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Regularized variance, shrunk towards `1e-3`.
    fn estimate(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0).max(1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Slow-window end points (exclusive) for mass-matrix adaptation.
fn adaptation_windows(warmup: usize) -> (usize, Vec<usize>) {
    if warmup < 20 {
        return (warmup, Vec::new());
    }
    let (init, term, base) = if warmup < 150 {
        let init = (0.15 * warmup as f64) as usize;
        let term = (0.1 * warmup as f64) as usize;
        (init, term, warmup - init - term)
    } else {
        (75, 50, 25)
    };
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < slow_end {
        let mut end = start + size;
        // absorb a short trailing window into the current one
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    (init, ends)
}

struct Chain<'a, T: LogDensity> {
    target: &'a T,
    rng: SimRng,
    x: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    inv_mass: Vec<f64>,
    step: f64,
    max_leapfrog: usize,
}

struct Transition {
    accept_stat: f64,
    divergent: bool,
}

impl<'a, T: LogDensity> Chain<'a, T> {
    fn init(target: &'a T, mut rng: SimRng, radius: f64) -> Result<Self> {
        let d = target.dim();
        let mut grad = vec![0.0; d];
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| if radius > 0.0 { rng.random_range(-radius..radius) } else { 0.0 }).collect();
            let logp = target.log_density_grad(&x, &mut grad);
            if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok(Chain { target, rng, x, grad, logp, inv_mass: vec![1.0; d], step: 0.1, max_leapfrog: 1 });
            }
        }
        Err(Error::Numerical("could not find a finite initial point in 100 attempts".into()))
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn draw_momentum(&mut self) -> Vec<f64> {
        let inv_mass = &self.inv_mass;
        let rng = &mut self.rng;
        inv_mass
            .iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                z / m.sqrt()
            })
            .collect()
    }

    /// Runs `steps` leapfrog steps from the current state; returns the end
    /// point or `None` when the trajectory leaves the valid region.
    fn leapfrog(&self, mut p: Vec<f64>, steps: usize, step: f64) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        let mut x = self.x.clone();
        let mut grad = self.grad.clone();
        let mut logp = self.logp;
        for _ in 0..steps {
            for (pi, g) in p.iter_mut().zip(&grad) {
                *pi += 0.5 * step * g;
            }
            for ((xi, pi), m) in x.iter_mut().zip(&p).zip(&self.inv_mass) {
                *xi += step * pi * m;
            }
            logp = self.target.log_density_grad(&x, &mut grad);
            if !logp.is_finite() {
                return None;
            }
            for (pi, g) in p.iter_mut().zip(&grad) {
                *pi += 0.5 * step * g;
            }
        }
        Some((x, p, grad, logp))
    }

    fn transition(&mut self, steps: usize) -> Transition {
        let p0 = self.draw_momentum();
        let h0 = -self.logp + self.kinetic(&p0);
        let proposal = self.leapfrog(p0, steps, self.step);
        let u: f64 = self.rng.random();
        match proposal {
            Some((x, p, grad, logp)) => {
                let h1 = -logp + self.kinetic(&p);
                let delta = h1 - h0;
                if !delta.is_finite() || delta > DIVERGENCE_THRESHOLD {
                    return Transition { accept_stat: 0.0, divergent: true };
                }
                let accept = (-delta).exp().min(1.0);
                if u < accept {
                    self.x = x;
                    self.grad = grad;
                    self.logp = logp;
                }
                Transition { accept_stat: accept, divergent: false }
            }
            None => Transition { accept_stat: 0.0, divergent: true },
        }
    }

    fn jittered_steps(&mut self) -> usize {
        self.rng.random_range(1..=self.max_leapfrog)
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of one half.
    fn find_reasonable_step(&mut self) {
        let mut step = self.step;
        let accept_of = |chain: &mut Self, step: f64| {
            let p0 = chain.draw_momentum();
            let h0 = -chain.logp + chain.kinetic(&p0);
            match chain.leapfrog(p0, 1, step) {
                Some((_, p, _, logp)) => {
                    let h = -logp + chain.kinetic(&p);
                    let a = (h0 - h).exp();
                    if a.is_finite() { a } else { 0.0 }
                }
                None => 0.0,
            }
        };
        let a = accept_of(self, step);
        let up = a > 0.5;
        for _ in 0..60 {
            let next = if up { step * 2.0 } else { step * 0.5 };
            let a = accept_of(self, next);
            if up && a < 0.5 {
                break;
            }
            step = next;
            if !up && a > 0.5 {
                break;
            }
        }
        self.step = step;
    }
}

fn run_chain<T: LogDensity>(target: &T, cfg: &SamplerConfig, chain_index: usize) -> Result<ChainDraws> {
    let rng = child_rng(cfg.seed, chain_index as u64);
    let mut chain = Chain::init(target, rng, cfg.init_radius)?;
    chain.max_leapfrog = cfg.max_leapfrog;
    chain.step = 1.0;
    chain.find_reasonable_step();
    let mut da = DualAverage::new(chain.step, cfg.target_accept);
    let (init_buffer, window_ends) = adaptation_windows(cfg.warmup);
    let mut window_start = init_buffer;
    let mut next_window = 0usize;
    let mut var_est = VarianceEstimator::new(target.dim());
    let mut warmup_divergent = 0;

    for it in 0..cfg.warmup {
        let steps = chain.jittered_steps();
        chain.step = da.step();
        let t = chain.transition(steps);
        warmup_divergent += t.divergent as usize;
        da.update(t.accept_stat);
        if it >= window_start && next_window < window_ends.len() {
            var_est.add(&chain.x);
            if it + 1 == window_ends[next_window] {
                chain.inv_mass = var_est.estimate();
                var_est = VarianceEstimator::new(target.dim());
                window_start = it + 1;
                next_window += 1;
                chain.find_reasonable_step();
                da = DualAverage::new(chain.step, cfg.target_accept);
            }
        }
    }
    chain.step = if cfg.warmup > 0 { da.final_step() } else { chain.step };

    let n = cfg.retained_per_chain();
    let d = target.dim();
    let mut out = ChainDraws {
        values: Vec::with_capacity(n * d),
        log_density: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        accept_stat: Vec::with_capacity(n),
        step_size: chain.step,
        inv_mass: chain.inv_mass.clone(),
        warmup_divergent,
    };
    for _ in 0..n {
        let steps = chain.jittered_steps();
        let t = chain.transition(steps);
        out.values.extend_from_slice(&chain.x);
        out.log_density.push(chain.logp);
        out.divergent.push(t.divergent);
        out.accept_stat.push(t.accept_stat);
    }
    Ok(out)
}

/// Runs all chains (concurrently when the `parallel` feature is on). Results
/// depend only on the target, the configuration and its seed.
pub fn sample<T: LogDensity>(target: &T, names: Vec<String>, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if names.len() != target.dim() {
        return Err(Error::Dimension(format!("{} names for a {}-dimensional target", names.len(), target.dim())));
    }
    let chains: Vec<ChainDraws> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let draws = PosteriorDraws { names, chains };
    let total = draws.n_draws();
    let divergent = draws.divergent_count();
    if total > 0 && divergent as f64 > MAX_DIVERGENT_FRACTION * total as f64 {
        return Err(Error::Divergent { divergent, total });
    }
    Ok(draws)
}
