//! Long-format binary panels.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

/// Tolerance on membership weight rows summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// One of the four latent moments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Moment {
    Mu,
    Sigma,
    Nu,
    Tau,
}

impl Moment {
    pub const ALL: [Moment; 4] = [Moment::Mu, Moment::Sigma, Moment::Nu, Moment::Tau];

    pub const fn index(self) -> usize {
        match self {
            Moment::Mu => 0,
            Moment::Sigma => 1,
            Moment::Nu => 2,
            Moment::Tau => 3,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Moment::Mu => "mu",
            Moment::Sigma => "sigma",
            Moment::Nu => "nu",
            Moment::Tau => "tau",
        }
    }
}

impl fmt::Display for Moment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Multiple-membership weights: per subject, a sparse row of `(group, weight)`
/// pairs summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    pub group_ids: Vec<String>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Membership {
    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    /// The identity assignment: every subject is its own group with weight one.
    pub fn identity(subject_ids: &[String]) -> Self {
        Membership {
            group_ids: subject_ids.to_vec(),
            rows: (0..subject_ids.len()).map(|i| vec![(i, 1.0)]).collect(),
        }
    }
}

/// One observation row before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRow {
    pub subject: String,
    pub time: f64,
    pub y: bool,
    pub covariates: Vec<f64>,
}

/// A validated binary panel. Observations are stored grouped by subject (in
/// order of first appearance) and sorted by time within subject.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    subject_ids: Vec<String>,
    subject_ranges: Vec<Range<usize>>,
    obs_subject: Vec<usize>,
    time: Vec<f64>,
    y: Vec<bool>,
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
    membership: Option<Membership>,
}

impl PanelData {
    pub fn from_rows(covariate_names: Vec<String>, rows: Vec<ObservationRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("panel has no observations".into()));
        }
        let p = covariate_names.len();
        let mut order: HashMap<String, usize> = HashMap::new();
        let mut subject_ids = Vec::new();
        let mut buckets: Vec<Vec<ObservationRow>> = Vec::new();
        for (k, row) in rows.into_iter().enumerate() {
            if row.covariates.len() != p {
                return Err(Error::Data(format!(
                    "row {k}: expected {p} covariates, found {}",
                    row.covariates.len()
                )));
            }
            if !row.time.is_finite() {
                return Err(Error::Data(format!("row {k}: non-finite time")));
            }
            if let Some(j) = row.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {k}: non-finite covariate `{}`", covariate_names[j])));
            }
            let idx = *order.entry(row.subject.clone()).or_insert_with(|| {
                subject_ids.push(row.subject.clone());
                buckets.push(Vec::new());
                subject_ids.len() - 1
            });
            buckets[idx].push(row);
        }
        let n_obs: usize = buckets.iter().map(Vec::len).sum();
        let mut panel = PanelData {
            subject_ids,
            subject_ranges: Vec::with_capacity(buckets.len()),
            obs_subject: Vec::with_capacity(n_obs),
            time: Vec::with_capacity(n_obs),
            y: Vec::with_capacity(n_obs),
            covariate_names,
            covariates: Vec::with_capacity(n_obs * p),
            membership: None,
        };
        for (i, mut bucket) in buckets.into_iter().enumerate() {
            bucket.sort_by(|a, b| a.time.total_cmp(&b.time));
            let start = panel.y.len();
            for row in bucket {
                panel.obs_subject.push(i);
                panel.time.push(row.time);
                panel.y.push(row.y);
                panel.covariates.extend_from_slice(&row.covariates);
            }
            panel.subject_ranges.push(start..panel.y.len());
        }
        Ok(panel)
    }

    /// Attach membership weights; rows must lie on the simplex within
    /// [`SIMPLEX_TOL`] and reference known subjects and groups.
    pub fn with_membership(mut self, membership: Membership) -> Result<Self> {
        if membership.rows.len() != self.n_subjects() {
            return Err(Error::Dimension(format!(
                "membership has {} rows for {} subjects",
                membership.rows.len(),
                self.n_subjects()
            )));
        }
        for (i, row) in membership.rows.iter().enumerate() {
            validate_weight_row(row, membership.n_groups())
                .map_err(|e| Error::Data(format!("subject `{}`: {e}", self.subject_ids[i])))?;
        }
        self.membership = Some(membership);
        Ok(self)
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }

    pub fn subject_range(&self, i: usize) -> Range<usize> {
        self.subject_ranges[i].clone()
    }

    pub fn subject_ranges(&self) -> &[Range<usize>] {
        &self.subject_ranges
    }

    pub fn obs_subject(&self) -> &[usize] {
        &self.obs_subject
    }

    pub fn times(&self) -> &[f64] {
        &self.time
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.y
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn covariate(&self, obs: usize, col: usize) -> f64 {
        self.covariates[obs * self.covariate_names.len() + col]
    }

    pub fn covariate_row(&self, obs: usize) -> &[f64] {
        let p = self.covariate_names.len();
        &self.covariates[obs * p..(obs + 1) * p]
    }

    pub fn membership(&self) -> Option<&Membership> {
        self.membership.as_ref()
    }

    pub fn max_times(&self) -> usize {
        self.subject_ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Rows in storage order, suitable for rebuilding or writing the panel.
    pub fn rows(&self) -> Vec<ObservationRow> {
        (0..self.n_obs())
            .map(|k| ObservationRow {
                subject: self.subject_ids[self.obs_subject[k]].clone(),
                time: self.time[k],
                y: self.y[k],
                covariates: self.covariate_row(k).to_vec(),
            })
            .collect()
    }

    /// Replace outcomes, keeping everything else.
    pub fn with_outcomes(mut self, y: Vec<bool>) -> Result<Self> {
        if y.len() != self.n_obs() {
            return Err(Error::Dimension(format!("{} outcomes for {} observations", y.len(), self.n_obs())));
        }
        self.y = y;
        Ok(self)
    }

    /// Z-score the named columns in place; returns `(name, mean, sd)` for each.
    pub fn standardize(&mut self, columns: &[String]) -> Result<Vec<(String, f64, f64)>> {
        let mut out = Vec::new();
        let p = self.n_covariates();
        for name in columns {
            let j = self
                .covariate_index(name)
                .ok_or_else(|| Error::Data(format!("unknown covariate `{name}`")))?;
            let n = self.n_obs() as f64;
            let mean = (0..self.n_obs()).map(|k| self.covariates[k * p + j]).sum::<f64>() / n;
            let var = (0..self.n_obs())
                .map(|k| (self.covariates[k * p + j] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            self.apply_standardization(j, mean, sd);
            out.push((name.clone(), mean, sd));
        }
        Ok(out)
    }

    /// Apply a stored `(mean, sd)` transform to a column.
    pub fn apply_standardization(&mut self, col: usize, mean: f64, sd: f64) {
        let p = self.n_covariates();
        for k in 0..self.n_obs() {
            let v = &mut self.covariates[k * p + col];
            *v = (*v - mean) / sd;
        }
    }
}

pub(crate) fn validate_weight_row(row: &[(usize, f64)], n_groups: usize) -> Result<()> {
    if row.is_empty() {
        return Err(Error::Data("empty membership row".into()));
    }
    let mut total = 0.0;
    for &(g, w) in row {
        if g >= n_groups {
            return Err(Error::Data(format!("group index {g} out of range")));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Data(format!("invalid membership weight {w}")));
        }
        total += w;
    }
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Data(format!("membership weights sum to {total}, expected 1")));
    }
    Ok(())
}
