use latmom::hmc::SamplerConfig;
use latmom::simstudy::{Estimator, FitSettings, SimDesign};
use latmom::surface::{GridRanges, Smoothing, DEFAULT_MC_DRAWS, DEFAULT_POINTS};
use latmom::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything a command reads from its JSON config. Every section is
/// optional; unknown keys anywhere are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub design: SimDesign,
    pub fit: FitSettings,
    pub surface: SurfaceConfig,
    pub replicate: ReplicateConfig,
    pub report: ReportConfig,
    /// Covariate columns z-scored at load.
    pub standardize: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub ranges: GridRanges,
    pub points: [usize; 4],
    pub mc_draws: usize,
    pub smoothing: Smoothing,
    pub seed: u64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            ranges: GridRanges::default(),
            points: DEFAULT_POINTS,
            mc_draws: DEFAULT_MC_DRAWS,
            smoothing: Smoothing::Gcv,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicateConfig {
    pub estimators: Vec<Estimator>,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig { estimators: Estimator::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub z_points: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { z_min: -5.0, z_max: 5.0, z_points: 201 }
    }
}

impl ReportConfig {
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.z_max - self.z_min) / (self.z_points - 1) as f64;
        (0..self.z_points).map(|k| self.z_min + step * k as f64).collect()
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.fit.prior.validate()?;
        self.fit.sampler.validate()?;
        if self.fit.glmm_nodes == 0 {
            return Err(Error::InvalidParameter("glmm_nodes must be at least 1".into()));
        }
        self.surface.ranges.validate()?;
        if self.surface.points.iter().any(|&p| p < 4) || self.surface.mc_draws == 0 {
            return Err(Error::InvalidParameter("surface needs at least 4 points per axis and 1 draw".into()));
        }
        if let Smoothing::Fixed(l) = self.surface.smoothing {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("fixed smoothing weight must be positive, got {l}")));
            }
        }
        if self.replicate.estimators.is_empty() {
            return Err(Error::InvalidParameter("replicate.estimators is empty".into()));
        }
        let r = &self.report;
        if !(r.z_min < r.z_max) || r.z_points < 2 {
            return Err(Error::InvalidParameter("report grid needs z_min < z_max and at least 2 points".into()));
        }
        Ok(())
    }

    /// Canonical text used for the config hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Command-line overrides of sampler settings.
pub fn override_sampler(cfg: &mut SamplerConfig, chains: Option<usize>, iterations: Option<usize>, warmup: Option<usize>) {
    if let Some(c) = chains {
        cfg.chains = c;
    }
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    if let Some(w) = warmup {
        cfg.warmup = w;
    }
}
