//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! the real stdout (bypassing capture) and then asserts.
//!
//! The study criteria (6 to 9) run the full replication harness and take tens
//! of minutes on one core.

use latmom::diagnostics::diagnostics;
use latmom::hmc::{sample, LogDensity, SamplerConfig};
use latmom::model::{ExactSas, Posterior};
use latmom::par::*;
use latmom::rng::{child_rng, rng_from_seed};
use latmom::sas::{self, SasParams};
use latmom::simstudy::{
    default_fit_prior, default_fit_spec, run_replications, simulate, Estimator, FitSettings, ReplicationReport,
    Scenario, SimDesign, TrueCoefficients,
};
use latmom::surface::{
    fit_surface, from_coordinates, generate_grid, simulate_probabilities, GridRanges, ProbabilitySurface, Smoothing,
    DEFAULT_MC_DRAWS, DEFAULT_POINTS,
};
use latmom::{MomentSpec, Variant};
use rand::Rng;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("\ncriterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

const SURFACE_SEED: u64 = 1;

fn surface() -> &'static ProbabilitySurface {
    static S: OnceLock<ProbabilitySurface> = OnceLock::new();
    S.get_or_init(|| {
        let grid = generate_grid(GridRanges::default(), DEFAULT_POINTS, DEFAULT_MC_DRAWS).unwrap();
        let probs = simulate_probabilities(&grid, SURFACE_SEED);
        fit_surface(&grid, &probs, Smoothing::Gcv).unwrap()
    })
}

fn study_settings() -> FitSettings {
    FitSettings {
        sampler: SamplerConfig { chains: 2, iterations: 800, warmup: 400, ..Default::default() },
        ..Default::default()
    }
}

fn sas_study() -> &'static ReplicationReport {
    static R: OnceLock<ReplicationReport> = OnceLock::new();
    R.get_or_init(|| {
        let design = SimDesign { n_subjects: 250, n_times: 6, replications: 20, ..Default::default() };
        run_replications(&design, &Estimator::ALL, &study_settings(), Some(surface())).unwrap()
    })
}

fn mean_of(r: &ReplicationReport, e: Estimator, metric: &str) -> f64 {
    r.mean(e, metric).unwrap_or(f64::NAN)
}

fn random_params<R: Rng>(rng: &mut R) -> SasParams {
    SasParams::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(0.3..3.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(0.4..2.5),
    )
    .unwrap()
}

#[test]
fn criterion_01_sas_exactness() {
    let mut rng = rng_from_seed(101);
    let (mut red, mut trip, mut dens) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let mu = rng.random_range(-3.0..3.0);
        let sigma = rng.random_range(0.2..4.0);
        let normal = SasParams::new(mu, sigma, 0.0, 1.0).unwrap();
        let z = mu + sigma * rng.random_range(-6.0..6.0);
        let x = (z - mu) / sigma;
        let phi = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let dens_n = (-0.5 * x * x).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
        red = red.max((sas::cdf(z, &normal) - phi).abs());
        red = red.max((sas::pdf(z, &normal) - dens_n).abs() / dens_n);
        // tabulated normal quantiles
        for (q, zq) in [(0.975, 1.959963984540054), (0.5, 0.0), (0.8413447460685429, 1.0), (0.01, -2.3263478740408408)] {
            red = red.max((sas::quantile(q, &normal).unwrap() - (mu + sigma * zq)).abs() / sigma.max(1.0));
        }

        let p = random_params(&mut rng);
        for k in 1..20 {
            let q = k as f64 / 20.0;
            let zq = sas::quantile(q, &p).unwrap();
            trip = trip.max((sas::cdf(zq, &p) - q).abs());
            let h = 1e-4 * p.sigma;
            let fd = (sas::cdf(zq + h, &p) - sas::cdf(zq - h, &p)) / (2.0 * h);
            let d = sas::pdf(zq, &p);
            dens = dens.max((fd - d).abs() / d);
        }
        for q in [1e-6, 1e-3, 0.999, 1.0 - 1e-6] {
            trip = trip.max((sas::cdf(sas::quantile(q, &p).unwrap(), &p) - q).abs());
        }
    }
    let pass = red <= 1e-12 && trip <= 1e-10 && dens <= 1e-6;
    verdict(
        1,
        pass,
        &format!("normal reduction {red:.2e} (cdf abs, pdf rel, quantile; tol 1e-12), roundtrip {trip:.2e} (tol 1e-10), fd density rel {dens:.2e} (tol 1e-6)"),
    );
}

#[test]
fn criterion_02_event_probability_oracle() {
    const DRAWS: usize = 10_000_000;
    const CHUNK: usize = 1_000_000;
    let mut rng = rng_from_seed(202);
    let points: Vec<SasParams> = (0..20).map(|_| random_params(&mut rng)).collect();
    let z: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = child_rng(2020, i as u64);
            let mut hits = 0usize;
            for _ in 0..DRAWS / CHUNK {
                hits += sas::sample_with(&mut r, CHUNK, p).iter().filter(|&&v| v > 0.0).count();
            }
            let mc = hits as f64 / DRAWS as f64;
            let exact = sas::event_prob(p);
            let se = (exact * (1.0 - exact) / DRAWS as f64).sqrt();
            (mc - exact).abs() / se
        })
        .collect();
    let worst = z.iter().cloned().fold(0.0, f64::max);
    verdict(2, worst <= 4.0, &format!("max |MC - exact| = {worst:.2} MC standard errors over 20 points (tol 4)"));
}

fn gradient_panel() -> latmom::PanelData {
    let design = SimDesign { n_subjects: 10, n_times: 6, replications: 1, ..Default::default() };
    simulate(&design, 303).unwrap().panel
}

fn rich_spec() -> MomentSpec {
    let mut spec = default_fit_spec();
    for m in latmom::Moment::ALL {
        spec.terms_mut(m).random_intercept = true;
    }
    spec.mu.ar1 = true;
    spec
}

fn max_fd_error<T: LogDensity>(target: &T, seed: u64) -> f64 {
    let dim = target.dim();
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut g = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        target.log_density_grad(&x, &mut g);
        let h = 1e-5;
        for j in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (target.log_density_grad(&xp, &mut scratch) - target.log_density_grad(&xm, &mut scratch)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1.0));
        }
    }
    worst
}

#[test]
fn criterion_03_gradient_correctness() {
    let panel = gradient_panel();
    let spec = rich_spec();
    let blas = Posterior::new(&panel, &spec, default_fit_prior(), ExactSas).unwrap();
    let quad = Posterior::new(&panel, &spec, default_fit_prior(), surface()).unwrap();
    let eb = max_fd_error(&blas, 31);
    let eq = max_fd_error(&quad, 32);
    verdict(
        3,
        eb <= 1e-5 && eq <= 1e-5,
        &format!("max relative gradient error: exact {eb:.2e}, pseudo {eq:.2e} (tol 1e-5, dim {})", blas.dim()),
    );
}

#[test]
fn criterion_04_surface_fidelity() {
    let s = surface();
    let bx = GridRanges::default().coordinate_box();
    let mut rng = rng_from_seed(404);
    let errs: Vec<f64> = (0..1000)
        .map(|_| {
            let c = [0, 1, 2, 3].map(|d| rng.random_range(bx[d].0..bx[d].1));
            let p = from_coordinates(&c);
            (s.eval(&p).0 - sas::event_prob(&p)).abs()
        })
        .collect();
    let mae = errs.iter().sum::<f64>() / errs.len() as f64;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    verdict(4, mae < 0.005 && max < 0.02, &format!("MAE {mae:.5} (tol 0.005), max {max:.5} (tol 0.02)"));
}

struct Gaussian2 {
    mean: [f64; 2],
    prec: [[f64; 2]; 2],
}

impl LogDensity for Gaussian2 {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let pd = [self.prec[0][0] * d[0] + self.prec[0][1] * d[1], self.prec[1][0] * d[0] + self.prec[1][1] * d[1]];
        grad[0] = -pd[0];
        grad[1] = -pd[1];
        -0.5 * (d[0] * pd[0] + d[1] * pd[1])
    }
}

#[test]
fn criterion_05_sampler_sanity() {
    let mean = [1.0, -2.0];
    let cov = [[1.0, 0.6], [0.6, 1.5]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let prec = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let cfg = SamplerConfig { chains: 4, iterations: 2000, warmup: 1000, seed: 5, ..Default::default() };
    let draws = sample(&Gaussian2 { mean, prec }, vec!["x".into(), "y".into()], &cfg).unwrap();
    let all: Vec<&[f64]> = draws.iter().collect();
    let n = all.len() as f64;
    let m = [0, 1].map(|j| all.iter().map(|d| d[j]).sum::<f64>() / n);
    let c = |a: usize, b: usize| all.iter().map(|d| (d[a] - m[a]) * (d[b] - m[b])).sum::<f64>() / (n - 1.0);
    let mean_err = (0..2).map(|j| (m[j] - mean[j]).abs()).fold(0.0, f64::max);
    let cov_err = [(0, 0), (0, 1), (1, 1)].iter().map(|&(a, b)| (c(a, b) - cov[a][b]).abs()).fold(0.0, f64::max);
    let rhat = diagnostics(&draws).unwrap().iter().map(|d| d.rhat).fold(0.0, f64::max);
    verdict(
        5,
        all.len() == 4000 && mean_err <= 0.05 && cov_err <= 0.1 && rhat < 1.05,
        &format!("{} draws, mean err {mean_err:.3} (tol 0.05), cov err {cov_err:.3} (tol 0.1), split R-hat {rhat:.4} (tol 1.05)", all.len()),
    );
}

fn failures_note(r: &ReplicationReport) -> String {
    let n: usize = r.estimators.iter().map(|&e| r.failure_count(e)).sum();
    if n == 0 { String::new() } else { format!(", {n} failed fits") }
}

#[test]
fn criterion_06_predictive_ordering() {
    let r = sas_study();
    let (ab, aq, ag) = (mean_of(r, Estimator::Blas, "auc"), mean_of(r, Estimator::Quad, "auc"), mean_of(r, Estimator::Gee, "auc"));
    let slope = mean_of(r, Estimator::Blas, "calibration_slope");
    let (bb, bg) = (mean_of(r, Estimator::Blas, "brier"), mean_of(r, Estimator::Gee, "brier"));
    let pass = ab >= aq - 0.01 && aq - 0.01 >= ag + 0.01 && (0.85..=1.10).contains(&slope) && bb < bg;
    verdict(
        6,
        pass,
        &format!(
            "AUC blas {ab:.4} quad {aq:.4} gee {ag:.4} glmm {:.4}; blas slope {slope:.3} in [0.85, 1.10]; brier blas {bb:.4} gee {bg:.4}{}",
            mean_of(r, Estimator::Glmm, "auc"),
            failures_note(r)
        ),
    );
}

#[test]
fn criterion_07_moment_recovery() {
    let r = sas_study();
    let bias = mean_of(r, Estimator::Blas, "mu_bias");
    let cov_mu = mean_of(r, Estimator::Blas, "mu_coverage_95");
    let cov_sigma = mean_of(r, Estimator::Blas, "sigma_coverage_95");
    let cov_nu = mean_of(r, Estimator::Blas, "nu_coverage_95");
    let cov_tau = mean_of(r, Estimator::Blas, "tau_coverage_95");
    let in_band = |c: f64| (80.0..=100.0).contains(&c);
    let pass = bias.abs() < 0.1 && in_band(cov_mu) && in_band(cov_sigma) && cov_nu > 70.0 && cov_tau > 70.0;
    verdict(
        7,
        pass,
        &format!(
            "blas mu bias {bias:.4} (tol 0.1), coverage mu {cov_mu:.1}% sigma {cov_sigma:.1}% (band 80-100), nu {cov_nu:.1}% tau {cov_tau:.1}% (> 70); quad mu bias {:.4} coverage {:.1}%",
            mean_of(r, Estimator::Quad, "mu_bias"),
            mean_of(r, Estimator::Quad, "mu_coverage_95")
        ),
    );
}

#[test]
fn criterion_08_misspecification() {
    let design = SimDesign { n_subjects: 250, replications: 10, scenario: Scenario::SkewT, seed: 8, ..Default::default() };
    let r = run_replications(&design, &[Estimator::Quad, Estimator::Gee], &study_settings(), Some(surface())).unwrap();
    let sq = mean_of(&r, Estimator::Quad, "calibration_slope");
    let sg = mean_of(&r, Estimator::Gee, "calibration_slope");
    verdict(
        8,
        sq > sg && sg < 0.9,
        &format!("skew-t calibration slope quad {sq:.3} vs gee {sg:.3}; need quad > gee and gee < 0.9{}", failures_note(&r)),
    );
}

#[test]
fn criterion_09_variant_check() {
    let design = SimDesign {
        n_subjects: 250,
        replications: 10,
        seed: 9,
        beta: TrueCoefficients { nu: [0.0, 0.0, 0.8], ..Default::default() },
        ..Default::default()
    };
    let full = study_settings();
    let mut no_tail = study_settings();
    no_tail.spec = no_tail.spec.with_variant(Variant::NoTail);
    let rf = run_replications(&design, &[Estimator::Blas], &full, None).unwrap();
    let rn = run_replications(&design, &[Estimator::Blas], &no_tail, None).unwrap();
    let (af, an) = (mean_of(&rf, Estimator::Blas, "auc"), mean_of(&rn, Estimator::Blas, "auc"));
    verdict(
        9,
        af - an >= 0.01,
        &format!("AUC full {af:.4} vs no-tail {an:.4}, difference {:.4} (need >= 0.01){}{}", af - an, failures_note(&rf), failures_note(&rn)),
    );
}

fn latmom(args: &[&str], cwd: &Path) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_latmom")).args(args).current_dir(cwd).output().unwrap();
    if !out.status.success() {
        eprintln!("{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() { stack.push(p) } else { out.push(p.strip_prefix(root).unwrap().to_path_buf()) }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"surface": {"points": [16, 4, 8, 8], "mc_draws": 1000}, "fit": {"sampler": {"chains": 2, "iterations": 100, "warmup": 50}}}"#;
    let script: &[&[&str]] = &[
        &["simulate", "--config", "cfg.json", "--out", "sim", "--n-subjects", "25", "--seed", "10"],
        &["build-surface", "--config", "cfg.json", "--out", "surf", "--seed", "10"],
        &["fit", "--config", "cfg.json", "--model", "blas", "--panel", "sim/panel.csv", "--predict", "sim/holdout.csv", "--out", "blas"],
        &["fit", "--config", "cfg.json", "--model", "quad", "--panel", "sim/panel.csv", "--surface", "surf/surface.bin", "--out", "quad"],
        &["fit", "--config", "cfg.json", "--model", "gee", "--panel", "sim/panel.csv", "--out", "gee"],
        &["fit", "--config", "cfg.json", "--model", "glmm", "--panel", "sim/panel.csv", "--out", "glmm"],
        &["evaluate", "--config", "cfg.json", "--probs", "blas/probs.csv", "--out", "eval"],
        &["report", "--config", "cfg.json", "--fit", "blas", "--panel", "sim/panel.csv", "--subject", "s03", "--out", "report"],
        &["replicate", "--config", "cfg.json", "--out", "rep", "--replications", "2", "--n-subjects", "20", "--surface", "surf/surface.bin"],
    ];
    let mut ok = true;
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        fs::create_dir_all(&root).unwrap();
        fs::write(root.join("cfg.json"), cfg).unwrap();
        for args in script {
            ok &= latmom(args, &root);
        }
        let dc = Command::new(env!("CARGO_BIN_EXE_latmom")).arg("default-config").output().unwrap();
        ok &= dc.status.success();
        fs::write(root.join("default-config.json"), dc.stdout).unwrap();
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let fa = files_under(&a);
    let mut differing: Vec<String> = Vec::new();
    if fa != files_under(&b) {
        differing.push("file sets".into());
    }
    for f in &fa {
        if fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    verdict(
        10,
        ok && differing.is_empty() && fa.len() > 20,
        &format!("{} output files from 10 commands compared byte for byte, all commands ok: {ok}, differing: {differing:?}", fa.len()),
    );
}
