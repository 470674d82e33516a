use crate::config::{override_sampler, RunConfig};
use crate::failure::Failure;
use crate::output::Staging;
use crate::{Common, SamplerArgs};
use latmom::baselines::BaselineFit;
use latmom::diagnostics::diagnostics;
use latmom::hmc::{fmt_f64, PosteriorDraws};
use latmom::io::{load_membership, load_panel, write_panel, write_truth, Metadata, Predictions, Standardization};
use latmom::metrics::{per_time_metrics, MetricSet};
use latmom::posterior::{
    latent_density_trajectory, parameter_summaries, posterior_event_probs, posterior_event_probs_with,
};
use latmom::simstudy::{fit_estimator, run_replications, simulate as simulate_design, Estimator, EstimatorFit, Scenario};
use latmom::surface::{fit_surface, generate_grid, simulate_probabilities, ProbabilitySurface};
use latmom::PanelData;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    Ok(RunConfig::load(path)?)
}

fn checked(cfg: RunConfig) -> Result<(RunConfig, String), Failure> {
    cfg.validate()?;
    let canonical = cfg.canonical();
    Ok((cfg, canonical))
}

fn run_record(command: &str, meta: &Metadata, cfg: &RunConfig, extra: Value) -> Value {
    json!({
        "command": command,
        "metadata": meta,
        "config": cfg,
        "result": extra,
    })
}

fn report_written(paths: &[std::path::PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

pub fn simulate(common: &Common, n_subjects: Option<usize>, scenario: Option<Scenario>) -> Result<(), Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.design.seed = s;
    }
    if let Some(n) = n_subjects {
        cfg.design.n_subjects = n;
    }
    if let Some(s) = scenario {
        cfg.design.scenario = s;
    }
    let (cfg, canonical) = checked(cfg)?;
    let meta = Metadata::new(&canonical, Some(cfg.design.seed));
    let sim = simulate_design(&cfg.design, cfg.design.seed)?;
    let mut out = Staging::new(&common.out)?;
    out.write("panel.csv", |w| write_panel(&sim.panel, w, Some(&meta)))?;
    out.write("holdout.csv", |w| write_panel(&sim.holdout, w, Some(&meta)))?;
    out.write("truth.csv", |w| write_truth(&sim, w, Some(&meta)))?;
    let events = sim.panel.outcomes().iter().filter(|&&y| y).count();
    let extra = json!({
        "n_subjects": sim.panel.n_subjects(),
        "n_obs": sim.panel.n_obs(),
        "event_rate": events as f64 / sim.panel.n_obs() as f64,
        "truth_is_latent_law": sim.truth().is_some(),
    });
    out.write_json("run.json", &run_record("simulate", &meta, &cfg, extra))?;
    report_written(&out.commit()?);
    Ok(())
}

pub fn build_surface(common: &Common) -> Result<(), Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.surface.seed = s;
    }
    let (cfg, canonical) = checked(cfg)?;
    let sc = &cfg.surface;
    let meta = Metadata::new(&canonical, Some(sc.seed));
    let grid = generate_grid(sc.ranges, sc.points, sc.mc_draws)?;
    eprintln!("simulating {} grid points x {} draws", grid.len(), sc.mc_draws);
    let probs = simulate_probabilities(&grid, sc.seed);
    let surface = fit_surface(&grid, &probs, sc.smoothing)?;
    eprintln!("surface: lambda {} probit rmse {}", fmt_f64(surface.lambda), fmt_f64(surface.rmse_probit));
    let mut out = Staging::new(&common.out)?;
    let comments = vec![
        meta.comment_line().trim_start_matches("# ").to_string(),
        format!("points {:?} mc_draws {}", sc.points, sc.mc_draws),
    ];
    out.write("surface.bin", |w| surface.write_to(w, &comments))?;
    let extra = json!({ "lambda": surface.lambda, "rmse_probit": surface.rmse_probit, "grid_points": grid.len() });
    out.write_json("run.json", &run_record("build-surface", &meta, &cfg, extra))?;
    report_written(&out.commit()?);
    Ok(())
}

fn load_surface(path: Option<&Path>) -> Result<ProbabilitySurface, Failure> {
    let path = path.ok_or_else(|| {
        Failure::Config("the quad model needs a surface artifact: run `build-surface` and pass its surface.bin with --surface".into())
    })?;
    let f = File::open(path).map_err(|e| {
        Failure::Data(format!("cannot open surface {} ({e}); create one with `build-surface`", path.display()))
    })?;
    Ok(ProbabilitySurface::read_from(BufReader::new(f))?)
}

/// Loads a panel, applies the stored or configured standardization and
/// attaches membership weights.
fn prepare_panel(path: &Path, st: &Standardization, membership: Option<&Path>) -> Result<PanelData, Failure> {
    let mut panel = load_panel(path)?;
    st.apply(&mut panel)?;
    if let Some(m) = membership {
        let mm = load_membership(m, &panel)?;
        panel = panel.with_membership(mm)?;
    }
    Ok(panel)
}

fn write_parameters<W: Write>(draws: &PosteriorDraws, w: W, meta: &Metadata) -> latmom::Result<()> {
    let mut w = w;
    writeln!(w, "{}", meta.comment_line())?;
    let diag = if draws.n_chains() >= 2 { Some(diagnostics(draws)?) } else { None };
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["parameter", "mean", "sd", "lower", "upper", "rhat", "ess"])?;
    for (j, s) in parameter_summaries(draws).into_iter().enumerate() {
        let (rhat, ess) = diag.as_ref().map_or((String::new(), String::new()), |d| (fmt_f64(d[j].rhat), fmt_f64(d[j].ess)));
        c.write_record([s.name, fmt_f64(s.mean), fmt_f64(s.sd), fmt_f64(s.lower), fmt_f64(s.upper), rhat, ess])?;
    }
    c.flush()?;
    Ok(())
}

fn write_estimates<W: Write>(fit: &BaselineFit, w: W, meta: &Metadata) -> latmom::Result<()> {
    let mut w = w;
    writeln!(w, "{}", meta.comment_line())?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["term", "estimate", "std_error"])?;
    let (names, coef, se, extra): (&[String], &[f64], Vec<f64>, Vec<(&str, f64)>) = match fit {
        BaselineFit::Glm(f, _) => (&f.names, &f.coef, (0..f.coef.len()).map(|j| f.cov[(j, j)].sqrt()).collect(), vec![]),
        BaselineFit::Gee(f, _) => (&f.names, &f.coef, f.robust_se(), vec![("working_alpha", f.alpha)]),
        BaselineFit::Glmm(f, _) => (
            &f.names,
            &f.coef,
            (0..f.coef.len()).map(|j| f.cov[(j, j)].sqrt()).collect(),
            vec![("random_intercept_sd", f.variance.sqrt())],
        ),
    };
    for j in 0..coef.len() {
        c.write_record([names[j].clone(), fmt_f64(coef[j]), fmt_f64(se[j])])?;
    }
    for (name, v) in extra {
        c.write_record([name.to_string(), fmt_f64(v), String::new()])?;
    }
    c.flush()?;
    Ok(())
}

pub fn fit(
    common: &Common,
    model: Estimator,
    panel_path: &Path,
    surface_path: Option<&Path>,
    membership: Option<&Path>,
    predict: Option<&Path>,
    sampler: &SamplerArgs,
) -> Result<(), Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.fit.sampler.seed = s;
    }
    override_sampler(&mut cfg.fit.sampler, sampler.chains, sampler.iterations, sampler.warmup);
    let (cfg, canonical) = checked(cfg)?;
    let surface = match model {
        Estimator::Quad => Some(load_surface(surface_path)?),
        _ => None,
    };
    let seed = cfg.fit.sampler.seed;
    let meta = Metadata::new(&canonical, Some(seed));

    let mut panel = load_panel(panel_path)?;
    let st = Standardization::fit(&mut panel, &cfg.standardize)?;
    if let Some(m) = membership {
        let mm = load_membership(m, &panel)?;
        panel = panel.with_membership(mm)?;
    }
    if cfg.fit.spec.multiple_membership && panel.membership().is_none() {
        return Err(Failure::Data("the model uses multiple membership but no --membership file was given".into()));
    }
    let target = match predict {
        Some(p) => prepare_panel(p, &st, membership)?,
        None => panel.clone(),
    };

    let fitted = fit_estimator(model, &panel, &cfg.fit, surface.as_ref(), seed)?;
    let spec = &cfg.fit.spec;
    let preds = match &fitted {
        EstimatorFit::Blas(d) => Predictions::from_intervals(&target, &posterior_event_probs(d, &target, spec)?)?,
        EstimatorFit::Quad(q) => Predictions::from_intervals(
            &target,
            &posterior_event_probs_with(&q.draws, &target, spec, surface.as_ref().expect("quad surface"))?,
        )?,
        EstimatorFit::Baseline(_) => Predictions::new(&target, fitted.probabilities(&target, spec, None)?, None)?,
    };

    let mut out = Staging::new(&common.out)?;
    let mut extra = json!({ "model": model, "n_obs": panel.n_obs(), "n_subjects": panel.n_subjects() });
    match &fitted {
        EstimatorFit::Baseline(b) => out.write("estimates.csv", |w| write_estimates(b, w, &meta))?,
        _ => {
            let draws = fitted.draws().expect("bayesian draws");
            out.write("draws.csv", |w| {
                writeln!(w, "{}", meta.comment_line())?;
                draws.write_csv(w)
            })?;
            out.write("parameters.csv", |w| write_parameters(draws, w, &meta))?;
            extra["divergent_transitions"] = json!(draws.divergent_count());
        }
    }
    if let EstimatorFit::Quad(q) = &fitted {
        extra["surface_clamp_rate"] = json!(q.clamp_rate);
        if q.clamp_warning() {
            eprintln!("warning: {:.2}% of moment vectors fell outside the surface box", 100.0 * q.clamp_rate);
        }
    }
    out.write("probs.csv", |w| preds.write_csv(w, Some(&meta)))?;
    if !st.columns.is_empty() {
        out.write_json("standardization.json", &st)?;
    }
    out.write_json("run.json", &run_record("fit", &meta, &cfg, extra))?;
    report_written(&out.commit()?);
    Ok(())
}

pub fn evaluate(config: Option<&Path>, probs: &Path, out_dir: &Path) -> Result<(), Failure> {
    let (cfg, canonical) = checked(load_config(config)?)?;
    let meta = Metadata::new(&canonical, None);
    let f = File::open(probs).map_err(|e| Failure::Data(format!("cannot open {}: {e}", probs.display())))?;
    let preds = Predictions::read_csv(BufReader::new(f))?;
    let m = MetricSet::score(&preds.probs, &preds.outcomes)?;
    let by_time = per_time_metrics(&preds.probs, &preds.outcomes, &preds.times)?;
    let mut flat = m.to_json();
    flat.insert("n".into(), json!(preds.probs.len()));
    flat.insert("tool_version".into(), json!(meta.tool_version));
    flat.insert("config_hash".into(), json!(meta.config_hash));
    flat.insert("seed".into(), Value::Null);
    let mut out = Staging::new(out_dir)?;
    out.write_json("metrics.json", &flat)?;
    out.write("metrics_by_time.csv", |w| {
        writeln!(w, "{}", meta.comment_line())?;
        let mut c = csv::Writer::from_writer(w);
        let keys: Vec<String> = m.flat().into_iter().map(|(k, _)| k).collect();
        let mut header = vec!["time".to_string(), "n".to_string()];
        header.extend(keys.iter().cloned());
        c.write_record(&header)?;
        for (t, ms) in &by_time {
            let n = preds.times.iter().filter(|&&x| x == *t).count();
            let mut rec = vec![fmt_f64(*t), n.to_string()];
            rec.extend(ms.flat().into_iter().map(|(_, v)| v.map(fmt_f64).unwrap_or_default()));
            c.write_record(&rec)?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.write_json("run.json", &run_record("evaluate", &meta, &cfg, json!({ "probs": probs.display().to_string() })))?;
    report_written(&out.commit()?);
    Ok(())
}

pub fn replicate(
    common: &Common,
    surface_path: Option<&Path>,
    replications: Option<usize>,
    n_subjects: Option<usize>,
    scenario: Option<Scenario>,
    estimators: Option<Vec<Estimator>>,
    sampler: &SamplerArgs,
) -> Result<(), Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.design.seed = s;
    }
    if let Some(r) = replications {
        cfg.design.replications = r;
    }
    if let Some(n) = n_subjects {
        cfg.design.n_subjects = n;
    }
    if let Some(s) = scenario {
        cfg.design.scenario = s;
    }
    if let Some(e) = estimators {
        cfg.replicate.estimators = e;
    }
    override_sampler(&mut cfg.fit.sampler, sampler.chains, sampler.iterations, sampler.warmup);
    let (cfg, canonical) = checked(cfg)?;
    let surface = if cfg.replicate.estimators.contains(&Estimator::Quad) { Some(load_surface(surface_path)?) } else { None };
    let meta = Metadata::new(&canonical, Some(cfg.design.seed));
    let report = run_replications(&cfg.design, &cfg.replicate.estimators, &cfg.fit, surface.as_ref())?;
    for e in report.summary() {
        eprintln!("{:<5} {:<24} {:>12} (mc se {}, n {})", e.estimator, e.metric, fmt_f64(e.mean), fmt_f64(e.mc_se), e.n);
    }
    for f in &report.failures {
        eprintln!("replication {} {} failed: {}", f.replication, f.estimator, f.message);
    }
    let mut out = Staging::new(&common.out)?;
    out.write("report.csv", |w| {
        writeln!(w, "{}", meta.comment_line())?;
        report.write_csv(w)
    })?;
    let mut summary = report.summary_json();
    summary["metadata"] = json!(meta);
    out.write_json("summary.json", &summary)?;
    let extra = json!({ "failures": report.failures.len() });
    out.write_json("run.json", &run_record("replicate", &meta, &cfg, extra))?;
    report_written(&out.commit()?);
    Ok(())
}

pub fn report(
    common: &Common,
    fit_dir: &Path,
    panel_path: &Path,
    membership: Option<&Path>,
    subject: &str,
) -> Result<(), Failure> {
    let run_path = fit_dir.join("run.json");
    let run: Value = serde_json::from_reader(BufReader::new(
        File::open(&run_path).map_err(|e| Failure::Data(format!("cannot open {}: {e}", run_path.display())))?,
    ))
    .map_err(|e| Failure::Data(format!("{}: {e}", run_path.display())))?;
    let model: Estimator = serde_json::from_value(run["result"]["model"].clone())
        .map_err(|_| Failure::Data(format!("{} does not describe a fit", run_path.display())))?;
    if !matches!(model, Estimator::Blas | Estimator::Quad) {
        return Err(Failure::Config(format!("trajectories need a blas or quad fit, {} is a {model} fit", fit_dir.display())));
    }
    let fit_cfg: RunConfig = serde_json::from_value(run["config"].clone())
        .map_err(|e| Failure::Data(format!("{}: {e}", run_path.display())))?;
    let mut cfg = match common.config.as_deref() {
        Some(p) => load_config(Some(p))?,
        None => RunConfig::default(),
    };
    cfg.fit = fit_cfg.fit;
    cfg.standardize = fit_cfg.standardize;
    let (cfg, canonical) = checked(cfg)?;
    let meta = Metadata::new(&canonical, common.seed.or(Some(cfg.fit.sampler.seed)));

    let st_path = fit_dir.join("standardization.json");
    let st: Standardization = if st_path.exists() {
        serde_json::from_reader(BufReader::new(File::open(&st_path).map_err(|e| Failure::Data(e.to_string()))?))
            .map_err(|e| Failure::Data(format!("{}: {e}", st_path.display())))?
    } else {
        Standardization::default()
    };
    let panel = prepare_panel(panel_path, &st, membership)?;
    let draws_path = fit_dir.join("draws.csv");
    let draws = PosteriorDraws::read_csv(BufReader::new(
        File::open(&draws_path).map_err(|e| Failure::Data(format!("cannot open {}: {e}", draws_path.display())))?,
    ))?;
    let grid = cfg.report.grid();
    let curves = latent_density_trajectory(&draws, &panel, &cfg.fit.spec, subject, &grid)?;

    let mut out = Staging::new(&common.out)?;
    out.write("trajectory.csv", |w| {
        writeln!(w, "{}", meta.comment_line())?;
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["z".to_string()];
        header.extend(curves.iter().map(|cv| format!("t_{}", fmt_f64(cv.time))));
        c.write_record(&header)?;
        for (k, z) in grid.iter().enumerate() {
            let mut rec = vec![fmt_f64(*z)];
            rec.extend(curves.iter().map(|cv| fmt_f64(cv.density[k])));
            c.write_record(&rec)?;
        }
        c.flush()?;
        Ok(())
    })?;
    let extra = json!({ "subject": subject, "model": model, "times": curves.iter().map(|c| c.time).collect::<Vec<_>>() });
    out.write_json("run.json", &run_record("report", &meta, &cfg, extra))?;
    report_written(&out.commit()?);
    Ok(())
}

pub fn default_config() -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes");
    println!("{text}");
    Ok(())
}
