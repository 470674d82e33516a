#![allow(dead_code)]

use latmom::rng::rng_from_seed;
use latmom::surface::{fit_surface, generate_grid, simulate_probabilities, GridRanges, ProbabilitySurface, Smoothing};
use latmom::{ObservationRow, PanelData};
use rand::Rng;

/// Random panel with covariates `x1`, `x2` in (-1, 1).
pub fn panel(n: usize, t: usize, seed: u64) -> PanelData {
    let mut rng = rng_from_seed(seed);
    let rows = (0..n)
        .flat_map(|i| (0..t).map(move |k| (i, k)))
        .map(|(i, k)| ObservationRow {
            subject: format!("s{i:02}"),
            time: (k + 1) as f64,
            y: rng.random_bool(0.45),
            covariates: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        })
        .collect();
    PanelData::from_rows(vec!["x1".into(), "x2".into()], rows).unwrap()
}

/// A coarse surface that builds in well under a second.
pub fn small_surface() -> ProbabilitySurface {
    let grid = generate_grid(GridRanges::default(), [16, 4, 8, 8], 2000).unwrap();
    let probs = simulate_probabilities(&grid, 11);
    fit_surface(&grid, &probs, Smoothing::Gcv).unwrap()
}

pub fn uniform_state(dim: usize, half_width: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect()
}

/// Largest `|fd - g| / max(|fd|, |g|, 1)` over all coordinates.
pub fn fd_gradient_error<F: Fn(&[f64]) -> (f64, Vec<f64>)>(f: F, x: &[f64], h: f64) -> f64 {
    let (_, g) = f(x);
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1.0));
    }
    worst
}
