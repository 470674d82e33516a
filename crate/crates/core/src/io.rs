//! CSV and JSON persistence.
//!
//! CSV outputs start with one `#` metadata line; every reader here skips
//! `#` lines. Floats are written in shortest round-trip form so a
//! write/read cycle is exact.

use crate::error::{Error, Result};
use crate::hmc::fmt_f64;
use crate::panel::{Membership, ObservationRow, PanelData};
use crate::posterior::Interval;
use crate::simstudy::SimulatedPanel;
use crate::structure::apply_links;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Required leading columns of a panel file; every further column is a
/// covariate.
pub const PANEL_COLUMNS: [&str; 3] = ["subject_id", "time", "y"];

/// Membership weights that miss one by at most this much are rescaled;
/// larger deviations are rejected.
pub const WEIGHT_RENORMALIZE_TOL: f64 = 1e-6;

/// Provenance attached to every output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub config_hash: String,
    /// `None` for commands without randomness.
    pub seed: Option<u64>,
}

impl Metadata {
    /// `config` is the canonical serialized configuration.
    pub fn new(config: &str, seed: Option<u64>) -> Self {
        Metadata { tool_version: TOOL_VERSION.to_string(), config_hash: config_hash(config), seed }
    }

    pub fn comment_line(&self) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!("# latmom {} config_sha256={} seed={seed}", self.tool_version, self.config_hash)
    }
}

/// Hex SHA-256 of the configuration text.
pub fn config_hash(config: &str) -> String {
    Sha256::digest(config.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("line {line}: column `{column}` is not a finite number: `{field}`")))
}

/// Reads a long-format panel: `subject_id,time,y,<covariates...>`.
pub fn read_panel<R: Read>(input: R) -> Result<PanelData> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    for (k, want) in PANEL_COLUMNS.iter().enumerate() {
        match cols.get(k) {
            Some(c) if c == want => {}
            Some(c) => {
                return Err(Error::Data(format!("header column {} must be `{want}`, found `{c}`", k + 1)));
            }
            None => return Err(Error::Data(format!("missing required column `{want}`"))),
        }
    }
    let covs: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    if let Some(dup) = covs.iter().enumerate().find(|(i, c)| covs[..*i].contains(c)) {
        return Err(Error::Data(format!("duplicate covariate column `{}`", dup.1)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let subject = rec[0].to_string();
        if subject.is_empty() {
            return Err(Error::Data(format!("line {line}: empty subject_id")));
        }
        let time = parse_f64(&rec[1], "time", line)?;
        let y = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Data(format!("line {line}: y must be 0 or 1, found `{other}`"))),
        };
        let covariates = covs
            .iter()
            .enumerate()
            .map(|(j, name)| parse_f64(&rec[3 + j], name, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ObservationRow { subject, time, y, covariates });
    }
    PanelData::from_rows(covs, rows)
}

pub fn load_panel(path: &Path) -> Result<PanelData> {
    read_panel(open(path)?).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn write_panel<W: Write>(panel: &PanelData, mut out: W, meta: Option<&Metadata>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "{}", m.comment_line())?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = PANEL_COLUMNS.to_vec();
    header.extend(panel.covariate_names().iter().map(String::as_str));
    w.write_record(&header)?;
    for row in panel.rows() {
        let mut rec = vec![row.subject, fmt_f64(row.time), if row.y { "1" } else { "0" }.to_string()];
        rec.extend(row.covariates.into_iter().map(fmt_f64));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `subject_id,group_id,weight` rows. Subjects absent from the panel
/// are an error, as is a panel subject without weights. Each subject's
/// weights are rescaled to sum to one when they miss by at most
/// [`WEIGHT_RENORMALIZE_TOL`].
pub fn read_membership<R: Read>(input: R, panel: &PanelData) -> Result<Membership> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["subject_id", "group_id", "weight"] {
        return Err(Error::Data("membership header must be `subject_id,group_id,weight`".into()));
    }
    let mut group_ids: Vec<String> = Vec::new();
    let mut group_index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); panel.n_subjects()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let i = panel
            .subject_index(&rec[0])
            .ok_or_else(|| Error::Data(format!("line {line}: subject `{}` is not in the panel", &rec[0])))?;
        let w = parse_f64(&rec[2], "weight", line)?;
        if w < 0.0 {
            return Err(Error::Data(format!("line {line}: negative weight {w} for subject `{}`", &rec[0])));
        }
        let g = *group_index.entry(rec[1].to_string()).or_insert_with(|| {
            group_ids.push(rec[1].to_string());
            group_ids.len() - 1
        });
        rows[i].push((g, w));
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let id = &panel.subject_ids()[i];
        if row.is_empty() {
            return Err(Error::Data(format!("subject `{id}` has no membership weights")));
        }
        let total: f64 = row.iter().map(|r| r.1).sum();
        if (total - 1.0).abs() > WEIGHT_RENORMALIZE_TOL {
            return Err(Error::Data(format!("membership weights of subject `{id}` sum to {total}, expected 1")));
        }
        for r in row.iter_mut() {
            r.1 /= total;
        }
    }
    Ok(Membership { group_ids, rows })
}

pub fn load_membership(path: &Path, panel: &PanelData) -> Result<Membership> {
    read_membership(open(path)?, panel)
}

/// `subject_id,time,mu,sigma,nu,tau` for the fitted panel. Misspecified
/// scenarios have no truth table; their columns hold the generating
/// linear predictors on the natural scale.
pub fn write_truth<W: Write>(sim: &SimulatedPanel, mut out: W, meta: Option<&Metadata>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "{}", m.comment_line())?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "time", "mu", "sigma", "nu", "tau"])?;
    for (k, l) in sim.links.iter().enumerate() {
        let p = apply_links(*l);
        let id = &sim.panel.subject_ids()[sim.panel.obs_subject()[k]];
        let mut rec = vec![id.clone(), fmt_f64(sim.panel.times()[k])];
        rec.extend(p.as_array().into_iter().map(fmt_f64));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Predicted probabilities with the panel's keys and outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub subject_ids: Vec<String>,
    pub times: Vec<f64>,
    pub outcomes: Vec<bool>,
    pub probs: Vec<f64>,
    /// Central 95% posterior interval, when available.
    pub intervals: Option<Vec<(f64, f64)>>,
}

impl Predictions {
    pub fn new(panel: &PanelData, probs: Vec<f64>, intervals: Option<Vec<(f64, f64)>>) -> Result<Self> {
        if probs.len() != panel.n_obs() || intervals.as_ref().is_some_and(|v| v.len() != probs.len()) {
            return Err(Error::Dimension(format!("{} predictions for {} observations", probs.len(), panel.n_obs())));
        }
        Ok(Predictions {
            subject_ids: panel.obs_subject().iter().map(|&i| panel.subject_ids()[i].clone()).collect(),
            times: panel.times().to_vec(),
            outcomes: panel.outcomes().to_vec(),
            probs,
            intervals,
        })
    }

    pub fn from_intervals(panel: &PanelData, iv: &[Interval]) -> Result<Self> {
        Predictions::new(panel, iv.iter().map(|i| i.mean).collect(), Some(iv.iter().map(|i| (i.lower, i.upper)).collect()))
    }

    /// `subject_id,time,y,prob[,lower,upper]`.
    pub fn write_csv<W: Write>(&self, mut out: W, meta: Option<&Metadata>) -> Result<()> {
        if let Some(m) = meta {
            writeln!(out, "{}", m.comment_line())?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["subject_id", "time", "y", "prob"];
        if self.intervals.is_some() {
            header.extend(["lower", "upper"]);
        }
        w.write_record(&header)?;
        for k in 0..self.probs.len() {
            let mut rec = vec![
                self.subject_ids[k].clone(),
                fmt_f64(self.times[k]),
                if self.outcomes[k] { "1" } else { "0" }.to_string(),
                fmt_f64(self.probs[k]),
            ];
            if let Some(iv) = &self.intervals {
                rec.extend([fmt_f64(iv[k].0), fmt_f64(iv[k].1)]);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = reader(input);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let has_iv = match cols.as_slice() {
            ["subject_id", "time", "y", "prob"] => false,
            ["subject_id", "time", "y", "prob", "lower", "upper"] => true,
            _ => return Err(Error::Data("probability file header must be `subject_id,time,y,prob[,lower,upper]`".into())),
        };
        let mut p = Predictions { subject_ids: vec![], times: vec![], outcomes: vec![], probs: vec![], intervals: None };
        let mut iv = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            p.subject_ids.push(rec[0].to_string());
            p.times.push(parse_f64(&rec[1], "time", line)?);
            p.outcomes.push(match &rec[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Data(format!("line {line}: y must be 0 or 1, found `{other}`"))),
            });
            let prob = parse_f64(&rec[3], "prob", line)?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::Data(format!("line {line}: probability {prob} outside [0, 1]")));
            }
            p.probs.push(prob);
            if has_iv {
                iv.push((parse_f64(&rec[4], "lower", line)?, parse_f64(&rec[5], "upper", line)?));
            }
        }
        if has_iv {
            p.intervals = Some(iv);
        }
        Ok(p)
    }
}

/// Persisted z-score transforms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub columns: Vec<ColumnTransform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnTransform {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    /// Estimates the transforms on `panel` and applies them.
    pub fn fit(panel: &mut PanelData, columns: &[String]) -> Result<Self> {
        let cols = panel.standardize(columns)?;
        Ok(Standardization { columns: cols.into_iter().map(|(name, mean, sd)| ColumnTransform { name, mean, sd }).collect() })
    }

    /// Applies stored transforms, e.g. to new data at prediction time.
    pub fn apply(&self, panel: &mut PanelData) -> Result<()> {
        for c in &self.columns {
            let j = panel
                .covariate_index(&c.name)
                .ok_or_else(|| Error::Data(format!("standardized column `{}` missing from panel", c.name)))?;
            if !(c.sd > 0.0) {
                return Err(Error::InvalidParameter(format!("column `{}` has non-positive sd {}", c.name, c.sd)));
            }
            panel.apply_standardization(j, c.mean, c.sd);
        }
        Ok(())
    }
}
