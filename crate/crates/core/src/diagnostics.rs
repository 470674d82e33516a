//! Convergence diagnostics: split R-hat and effective sample size.

use crate::error::{Error, Result};
use crate::hmc::PosteriorDraws;

/// R-hat values above this are flagged.
pub const RHAT_THRESHOLD: f64 = 1.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub flagged: bool,
}

/// Split R-hat and ESS for every parameter. Requires at least two chains.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Vec<ParamDiagnostic>> {
    if draws.n_chains() < 2 {
        return Err(Error::InvalidParameter("diagnostics need at least two chains".into()));
    }
    Ok((0..draws.dim())
        .map(|j| {
            let chains = draws.parameter(j);
            let rhat = split_rhat(&chains);
            ParamDiagnostic { name: draws.names[j].clone(), rhat, ess: ess(&chains), flagged: !(rhat <= RHAT_THRESHOLD) }
        })
        .collect())
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            // the middle draw of an odd-length chain is dropped
            [&c[..h], &c[c.len() - h..]]
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Within-chain variance `W` and pooled estimate `var⁺`.
fn variance_parts(chains: &[&[f64]]) -> (f64, f64) {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / chains.len() as f64;
    let b_over_n = if chains.len() > 1 {
        let mm = mean(&means);
        means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (chains.len() as f64 - 1.0)
    } else {
        0.0
    };
    (w, (n - 1.0) / n * w + b_over_n)
}

/// Split R-hat over chains of equal length.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    if halves.is_empty() || halves[0].len() < 2 {
        return f64::NAN;
    }
    let (w, var_plus) = variance_parts(&halves);
    if w <= 0.0 {
        return if var_plus <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// estimator, computed on split chains.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    if halves.is_empty() || halves[0].len() < 4 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let n = halves[0].len();
    let total = m * n as f64;
    let (w, var_plus) = variance_parts(&halves);
    if !(var_plus > 0.0) {
        return total;
    }
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let autocov = |t: usize| -> f64 {
        halves
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - t).map(|i| (c[i] - mu) * (c[i + t] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m
    };
    // W is based on unbiased chain variances; the lag-0 autocovariance is not
    let rho = |t: usize| 1.0 - (w - autocov(t)) / var_plus;
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut r = rng_from_seed(seed);
        (0..n).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect()
    }

    fn ar1(seed: u64, n: usize, rho: f64) -> Vec<f64> {
        let mut r = rng_from_seed(seed);
        let mut x = r.sample::<f64, _>(StandardNormal) / (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                let out = x;
                x = rho * x + r.sample::<f64, _>(StandardNormal);
                out
            })
            .collect()
    }

    #[test]
    fn iid_chains_mix() {
        let chains: Vec<_> = (0..4).map(|s| noise(s, 1000, 0.0)).collect();
        assert!((split_rhat(&chains) - 1.0).abs() < 0.02);
        let e = ess(&chains);
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn separated_chains_flagged() {
        let chains = vec![noise(1, 500, 5.0), noise(2, 500, -5.0)];
        assert!(split_rhat(&chains) > 1.1);
    }

    #[test]
    fn ar1_ess_matches_analytic() {
        let rho = 0.7;
        let n = 20_000;
        let chains = vec![ar1(3, n, rho), ar1(4, n, rho)];
        let analytic = 2.0 * n as f64 * (1.0 - rho) / (1.0 + rho);
        let e = ess(&chains);
        assert!((e / analytic - 1.0).abs() < 0.2, "{e} vs {analytic}");
    }
}
