//! Cohort schema, CSV ingestion, synthetic cohort generation, and
//! deterministic stratified splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{index_hash, rng};

/// The biomarker columns of the reference schema, in file order.
pub const SCHEMA_FEATURES: [&str; 9] = [
    "balf_total",
    "balf_macrophages",
    "balf_neutrophils",
    "balf_lymphocytes",
    "crp",
    "ox_stress",
    "tnfa_mrna",
    "vo2",
    "activity",
];

/// Experimental group. Encoded Sham = 0, CS = 1 everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    Sham,
    Cs,
}

impl Condition {
    pub fn code(self) -> u8 {
        match self {
            Condition::Sham => 0,
            Condition::Cs => 1,
        }
    }

    pub fn indicator(self) -> f64 {
        self.code() as f64
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Condition::Sham),
            1 => Some(Condition::Cs),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::Sham => "Sham",
            Condition::Cs => "CS",
        }
    }
}

/// Regression endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "weight_mg")]
    Weight,
    #[serde(rename = "force_mN")]
    Force,
    #[serde(rename = "quality")]
    Quality,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Weight, Target::Force, Target::Quality];

    pub fn column(self) -> &'static str {
        match self {
            Target::Weight => "weight_mg",
            Target::Force => "force_mN",
            Target::Quality => "quality",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Target::Weight => "mg",
            Target::Force => "mN",
            Target::Quality => "mN/mg",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight_mg" | "weight" => Ok(Target::Weight),
            "force_mN" | "force" => Ok(Target::Force),
            "quality" => Ok(Target::Quality),
            other => Err(Error::Config(format!("unknown target '{other}'"))),
        }
    }
}

/// One subject. Feature values are aligned with the owning cohort's
/// `feature_names`; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub features: Vec<Option<f64>>,
    pub condition: Condition,
    pub weight_mg: Option<f64>,
    pub force_mn: Option<f64>,
    quality: Option<f64>,
}

impl SubjectRecord {
    pub fn new(
        features: Vec<Option<f64>>,
        condition: Condition,
        weight_mg: Option<f64>,
        force_mn: Option<f64>,
    ) -> Self {
        let quality = match (force_mn, weight_mg) {
            (Some(f), Some(w)) if w > 0.0 => Some(f / w),
            _ => None,
        };
        Self {
            features,
            condition,
            weight_mg,
            force_mn,
            quality,
        }
    }

    /// Muscle quality index, force / weight (mN per mg).
    pub fn quality(&self) -> Option<f64> {
        self.quality
    }

    pub fn target(&self, target: Target) -> Option<f64> {
        match target {
            Target::Weight => self.weight_mg,
            Target::Force => self.force_mn,
            Target::Quality => self.quality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub feature_names: Vec<String>,
    pub subjects: Vec<SubjectRecord>,
}

impl Cohort {
    pub fn new(feature_names: Vec<String>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        for (i, s) in subjects.iter().enumerate() {
            if s.features.len() != feature_names.len() {
                return Err(Error::Schema(format!(
                    "subject {i} has {} feature values, expected {}",
                    s.features.len(),
                    feature_names.len()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{name}'")));
            }
        }
        Ok(Self {
            feature_names,
            subjects,
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn conditions(&self) -> Vec<Condition> {
        self.subjects.iter().map(|s| s.condition).collect()
    }

    /// Sub-cohort of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Cohort {
        Cohort {
            feature_names: self.feature_names.clone(),
            subjects: rows.iter().map(|&r| self.subjects[r].clone()).collect(),
        }
    }

    /// Rows whose target is present and finite (and, for quality, whose
    /// weight and force are strictly positive).
    pub fn rows_with_target(&self, target: Target) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| match target {
                Target::Quality => matches!(
                    (s.weight_mg, s.force_mn),
                    (Some(w), Some(f)) if w > 0.0 && f > 0.0 && w.is_finite() && f.is_finite()
                ),
                t => s.target(t).is_some_and(f64::is_finite),
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks the quality-target precondition: every subject has positive
    /// weight and force.
    pub fn validate_for(&self, target: Target) -> Result<()> {
        let needs = match target {
            Target::Quality => vec![Target::Weight, Target::Force],
            t => vec![t],
        };
        for (i, s) in self.subjects.iter().enumerate() {
            for t in &needs {
                match s.target(*t) {
                    None => {
                        return Err(Error::Config(format!(
                            "subject {i} is missing target column {t}"
                        )))
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(Error::Config(format!("subject {i} has non-finite {t}")))
                    }
                    Some(v) if target == Target::Quality && v <= 0.0 => {
                        return Err(Error::Config(format!(
                            "subject {i} has nonpositive {t}; quality requires weight > 0 and force > 0"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Read access to a cohort. Models read columns only through this trait so
/// tests can audit which columns a configured model touches.
pub trait DataSource: Sync {
    fn n_subjects(&self) -> usize;
    fn feature_names(&self) -> &[String];
    fn column(&self, name: &str, rows: &[usize]) -> Result<Vec<Option<f64>>>;
    fn condition(&self, row: usize) -> Condition;
    fn target(&self, row: usize, target: Target) -> Option<f64>;

    fn has_feature(&self, name: &str) -> bool {
        self.feature_names().iter().any(|f| f == name)
    }

    fn conditions(&self, rows: &[usize]) -> Vec<Condition> {
        rows.iter().map(|&r| self.condition(r)).collect()
    }

    fn targets(&self, rows: &[usize], target: Target) -> Result<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                self.target(r, target)
                    .ok_or_else(|| Error::Config(format!("row {r} has no value for target {target}")))
            })
            .collect()
    }
}

impl DataSource for Cohort {
    fn n_subjects(&self) -> usize {
        self.n()
    }

    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn column(&self, name: &str, rows: &[usize]) -> Result<Vec<Option<f64>>> {
        let j = self
            .feature_index(name)
            .ok_or_else(|| Error::Schema(format!("unknown feature column '{name}'")))?;
        Ok(rows.iter().map(|&r| self.subjects[r].features[j]).collect())
    }

    fn condition(&self, row: usize) -> Condition {
        self.subjects[row].condition
    }

    fn target(&self, row: usize, target: Target) -> Option<f64> {
        self.subjects[row].target(target)
    }
}

// ---------------------------------------------------------------------------
// Schema descriptor and CSV ingestion
// ---------------------------------------------------------------------------

/// Companion schema descriptor (TOML, `key = value`).
///
/// ```toml
/// condition = "condition"
/// targets = ["weight_mg", "force_mN"]
/// [labels]
/// Sham = 0
/// CS = 1
/// [units]
/// crp = "mg/L"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub condition: String,
    pub targets: Vec<String>,
    /// Explicit feature list; empty means "every non-condition, non-target column".
    pub features: Vec<String>,
    pub labels: BTreeMap<String, u8>,
    pub units: BTreeMap<String, String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        let labels = [("Sham", 0u8), ("CS", 1), ("0", 0), ("1", 1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let units = [
            ("balf_total", "cells"),
            ("balf_macrophages", "cells"),
            ("balf_neutrophils", "cells"),
            ("balf_lymphocytes", "cells"),
            ("crp", "ug/mL"),
            ("ox_stress", "a.u."),
            ("tnfa_mrna", "fold-change"),
            ("vo2", "mL/kg/h"),
            ("activity", "counts"),
            ("weight_mg", "mg"),
            ("force_mN", "mN"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            condition: "condition".into(),
            targets: vec!["weight_mg".into(), "force_mN".into()],
            features: Vec::new(),
            labels,
            units,
        }
    }
}

impl ColumnSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ColumnSpec = toml::from_str(text)?;
        for (label, code) in &spec.labels {
            if Condition::from_code(*code).is_none() {
                return Err(Error::Schema(format!(
                    "label '{label}' maps to {code}; only 0 (Sham) and 1 (CS) are valid"
                )));
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn parse_condition(&self, raw: &str, line: usize) -> Result<Condition> {
        let code = self.labels.get(raw.trim()).ok_or_else(|| {
            Error::Schema(format!("line {line}: unknown condition label '{}'", raw.trim()))
        })?;
        Ok(Condition::from_code(*code).expect("labels validated at construction"))
    }
}

/// Load a cohort CSV with a header row. Empty cells are missing values.
pub fn load_cohort(path: &Path, schema: &ColumnSpec) -> Result<Cohort> {
    let file = std::fs::File::open(path)?;
    read_cohort(file, schema)
}

pub fn read_cohort<R: Read>(reader: R, schema: &ColumnSpec) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Schema("empty file: no header row".into())),
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    {
        let mut seen = std::collections::HashSet::new();
        for h in &header {
            if !seen.insert(h.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{h}'")));
            }
        }
    }
    let col = |name: &str| header.iter().position(|h| h == name);
    let cond_col = col(&schema.condition).ok_or_else(|| {
        Error::Schema(format!("header lacks condition column '{}'", schema.condition))
    })?;
    let weight_col = col("weight_mg").filter(|_| schema.targets.iter().any(|t| t == "weight_mg"));
    let force_col = col("force_mN").filter(|_| schema.targets.iter().any(|t| t == "force_mN"));
    if weight_col.is_none() && force_col.is_none() {
        return Err(Error::Schema(
            "header contains no target column (weight_mg or force_mN)".into(),
        ));
    }
    let excluded: Vec<&str> = [schema.condition.as_str(), "weight_mg", "force_mN", "quality"]
        .into_iter()
        .chain(schema.targets.iter().map(String::as_str))
        .collect();
    let feature_cols: Vec<(String, usize)> = if schema.features.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| !excluded.contains(&h.as_str()))
            .map(|(i, h)| (h.clone(), i))
            .collect()
    } else {
        schema
            .features
            .iter()
            .map(|f| {
                col(f)
                    .map(|i| (f.clone(), i))
                    .ok_or_else(|| Error::Schema(format!("schema feature '{f}' not in header")))
            })
            .collect::<Result<_>>()?
    };

    let mut subjects = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let cell = |i: usize| -> Result<Option<f64>> {
            let raw = rec.get(i).unwrap_or("");
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column '{}': cannot parse '{raw}' as a number", header[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column '{}': non-finite value", header[i]),
                });
            }
            Ok(Some(v))
        };
        let condition = schema.parse_condition(rec.get(cond_col).unwrap_or(""), line)?;
        let features = feature_cols
            .iter()
            .map(|(_, i)| cell(*i))
            .collect::<Result<Vec<_>>>()?;
        let weight = weight_col.map(&cell).transpose()?.flatten();
        let force = force_col.map(&cell).transpose()?.flatten();
        subjects.push(SubjectRecord::new(features, condition, weight, force));
    }
    Cohort::new(feature_cols.into_iter().map(|(n, _)| n).collect(), subjects)
}

/// Write a cohort in the same CSV layout `load_cohort` reads.
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_cohort(cohort, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_cohort<W: std::io::Write>(cohort: &Cohort, w: &mut csv::Writer<W>) -> Result<()> {
    let mut header = vec!["condition".to_string()];
    header.extend(cohort.feature_names.iter().cloned());
    header.push("weight_mg".into());
    header.push("force_mN".into());
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for s in &cohort.subjects {
        let mut row = vec![s.condition.label().to_string()];
        row.extend(s.features.iter().map(|v| fmt(*v)));
        row.push(fmt(s.weight_mg));
        row.push(fmt(s.force_mn));
        w.write_record(&row)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic cohort generator
// ---------------------------------------------------------------------------

/// Lognormal biomarker: value = median_c * exp(log_sd * z), where z mixes a
/// shared inflammation factor with an independent draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerProfile {
    pub name: String,
    pub sham_median: f64,
    pub cs_median: f64,
    pub log_sd: f64,
}

impl BiomarkerProfile {
    fn new(name: &str, sham_median: f64, cs_median: f64, log_sd: f64) -> Self {
        Self {
            name: name.into(),
            sham_median,
            cs_median,
            log_sd,
        }
    }
}

/// Generator profile. Defaults are desk-scale plumbing values: Sham weight
/// 47 mg, CS weight 41 mg, within-group SD 4 mg; inflammatory markers have
/// CS medians 1.5-3x Sham.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenProfile {
    pub biomarkers: Vec<BiomarkerProfile>,
    /// Fraction of CS subjects.
    pub cs_fraction: f64,
    /// Weight of the shared latent factor in each biomarker's log-noise, in [0, 1).
    pub shared_loading: f64,
    pub sham_weight_mean: f64,
    /// CS mean weight = Sham mean minus this.
    pub cs_weight_suppression: f64,
    pub weight_sd: f64,
    /// mg per unit of CRP log-deviation (negative effect on weight).
    pub crp_weight_coef: f64,
    /// mg per unit of the CRP x neutrophil log-deviation product (negative effect).
    pub interaction_coef: f64,
    pub sham_force_mean: f64,
    pub cs_force_suppression: f64,
    /// mN of force per mg of weight deviation from the group mean.
    pub force_per_weight: f64,
    /// mN per unit of VO2 log-deviation.
    pub vo2_force_coef: f64,
    pub force_sd: f64,
    /// Per-cell probability that a biomarker value is missing.
    pub missing_rate: f64,
}

impl Default for GenProfile {
    fn default() -> Self {
        Self {
            biomarkers: vec![
                BiomarkerProfile::new("balf_total", 2.0e5, 5.0e5, 0.35),
                BiomarkerProfile::new("balf_macrophages", 1.8e5, 3.6e5, 0.35),
                BiomarkerProfile::new("balf_neutrophils", 5.0e3, 1.5e4, 0.5),
                BiomarkerProfile::new("balf_lymphocytes", 4.0e3, 8.0e3, 0.45),
                BiomarkerProfile::new("crp", 10.0, 18.0, 0.3),
                BiomarkerProfile::new("ox_stress", 1.0, 1.5, 0.25),
                BiomarkerProfile::new("tnfa_mrna", 1.0, 2.5, 0.4),
                BiomarkerProfile::new("vo2", 3000.0, 2700.0, 0.1),
                BiomarkerProfile::new("activity", 1000.0, 800.0, 0.3),
            ],
            cs_fraction: 0.5,
            shared_loading: 0.4,
            sham_weight_mean: 47.0,
            cs_weight_suppression: 6.0,
            weight_sd: 4.0,
            crp_weight_coef: 5.0,
            interaction_coef: 20.0,
            sham_force_mean: 12500.0,
            cs_force_suppression: 2000.0,
            force_per_weight: 150.0,
            vo2_force_coef: 4000.0,
            force_sd: 1500.0,
            missing_rate: 0.0,
        }
    }
}

impl GenProfile {
    /// Same profile with every noise scale set to zero.
    pub fn noiseless(mut self) -> Self {
        for b in &mut self.biomarkers {
            b.log_sd = 0.0;
        }
        self.weight_sd = 0.0;
        self.force_sd = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("profile scale '{name}' must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("profile noise scale '{name}' must be >= 0, got {v}")))
            }
        };
        if self.biomarkers.is_empty() {
            return Err(Error::Config("profile has no biomarkers".into()));
        }
        for b in &self.biomarkers {
            pos(&format!("{}.sham_median", b.name), b.sham_median)?;
            pos(&format!("{}.cs_median", b.name), b.cs_median)?;
            nonneg(&format!("{}.log_sd", b.name), b.log_sd)?;
        }
        pos("sham_weight_mean", self.sham_weight_mean)?;
        pos("cs_weight_mean", self.sham_weight_mean - self.cs_weight_suppression)?;
        pos("sham_force_mean", self.sham_force_mean)?;
        pos("cs_force_mean", self.sham_force_mean - self.cs_force_suppression)?;
        nonneg("weight_sd", self.weight_sd)?;
        nonneg("force_sd", self.force_sd)?;
        if !(0.0..1.0).contains(&self.shared_loading) {
            return Err(Error::Config("shared_loading must lie in [0, 1)".into()));
        }
        if !(self.cs_fraction > 0.0 && self.cs_fraction < 1.0) {
            return Err(Error::Config("cs_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generate a synthetic cohort. Deterministic for fixed `(n, seed, profile)`.
pub fn generate_synthetic_cohort(n: usize, seed: u64, profile: &GenProfile) -> Result<Cohort> {
    if n < 10 {
        return Err(Error::Config(format!("synthetic cohort needs n >= 10, got {n}")));
    }
    profile.validate()?;
    let mut rng = rng(seed);

    let n_cs = ((n as f64) * profile.cs_fraction).round() as usize;
    let n_cs = n_cs.clamp(1, n - 1);
    let mut conditions: Vec<Condition> = (0..n)
        .map(|i| if i < n_cs { Condition::Cs } else { Condition::Sham })
        .collect();
    conditions.shuffle(&mut rng);

    let idx_of = |name: &str| profile.biomarkers.iter().position(|b| b.name == name);
    let crp_i = idx_of("crp");
    let neut_i = idx_of("balf_neutrophils");
    let vo2_i = idx_of("vo2");
    let load = profile.shared_loading;

    let mut subjects = Vec::with_capacity(n);
    for &c in &conditions {
        let shared: f64 = rng.sample(StandardNormal);
        let mut devs = Vec::with_capacity(profile.biomarkers.len());
        let mut features = Vec::with_capacity(profile.biomarkers.len());
        for b in &profile.biomarkers {
            let own: f64 = rng.sample(StandardNormal);
            let z = load.sqrt() * shared + (1.0 - load).sqrt() * own;
            let dev = b.log_sd * z;
            let median = match c {
                Condition::Sham => b.sham_median,
                Condition::Cs => b.cs_median,
            };
            devs.push(dev);
            features.push(Some(median * dev.exp()));
        }
        let d = |i: Option<usize>| i.map(|i| devs[i]).unwrap_or(0.0);
        let (d_crp, d_neut, d_vo2) = (d(crp_i), d(neut_i), d(vo2_i));

        let w_mean = match c {
            Condition::Sham => profile.sham_weight_mean,
            Condition::Cs => profile.sham_weight_mean - profile.cs_weight_suppression,
        };
        let e_w: f64 = rng.sample(StandardNormal);
        let weight = w_mean - profile.crp_weight_coef * d_crp
            - profile.interaction_coef * d_crp * d_neut
            + profile.weight_sd * e_w;
        let weight = weight.max(0.05 * w_mean);

        let f_mean = match c {
            Condition::Sham => profile.sham_force_mean,
            Condition::Cs => profile.sham_force_mean - profile.cs_force_suppression,
        };
        let e_f: f64 = rng.sample(StandardNormal);
        let force = f_mean
            + profile.force_per_weight * (weight - w_mean)
            + profile.vo2_force_coef * d_vo2
            + profile.force_sd * e_f;
        let force = force.max(0.05 * f_mean);

        if profile.missing_rate > 0.0 {
            for v in features.iter_mut() {
                if rng.gen::<f64>() < profile.missing_rate {
                    *v = None;
                }
            }
        }
        subjects.push(SubjectRecord::new(features, c, Some(weight), Some(force)));
    }
    let names = profile.biomarkers.iter().map(|b| b.name.clone()).collect();
    Cohort::new(names, subjects)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub folds: Vec<Fold>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn train_hash(&self) -> String {
        index_hash(&self.train_idx)
    }

    /// Fingerprint of the whole train/test assignment.
    pub fn split_hash(&self) -> String {
        let mut keyed: Vec<usize> = self.train_idx.iter().map(|&i| 2 * i).collect();
        keyed.extend(self.test_idx.iter().map(|&i| 2 * i + 1));
        index_hash(&keyed)
    }
}

fn strata(rows: &[usize], conditions: &[Condition]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for &r in rows {
        out[conditions[r].code() as usize].push(r);
    }
    out
}

/// Stratified hold-out split over `rows` (cohort indices). Per-stratum test
/// counts use largest-remainder allocation so the total equals
/// `round(n * test_fraction)`.
pub fn stratified_split_rows(
    rows: &[usize],
    conditions: &[Condition],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let groups = strata(rows, conditions);
    for (code, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            let label = Condition::from_code(code as u8).unwrap().label();
            return Err(Error::Split(format!(
                "stratum {label} has {} subject(s); at least 2 required",
                g.len()
            )));
        }
    }
    let n = rows.len();
    let total = (n as f64 * test_fraction).round() as usize;
    let ideal: Vec<f64> = groups.iter().map(|g| g.len() as f64 * test_fraction).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    // largest fractional part first; lower stratum index on ties
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(counts.iter().sum());
    for &s in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if counts[s] < groups[s].len() - 1 {
            counts[s] += 1;
            remaining -= 1;
        }
    }

    let mut rng = rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, &k) in groups.iter().zip(&counts) {
        let mut members = g.clone();
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(
    cohort: &Cohort,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let rows: Vec<usize> = (0..cohort.n()).collect();
    stratified_split_rows(&rows, &cohort.conditions(), test_fraction, seed)
}

/// Stratified K-fold assignment over `train_idx`. `conditions` is indexed by
/// cohort row. Round-robin assignment continues across strata so both the
/// per-stratum and the total fold sizes differ by at most one.
pub fn kfold_indices(
    train_idx: &[usize],
    k: usize,
    seed: u64,
    conditions: &[Condition],
) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Split(format!("K must be >= 2, got {k}")));
    }
    if k > train_idx.len() {
        return Err(Error::Split(format!(
            "K = {k} exceeds the number of training subjects ({})",
            train_idx.len()
        )));
    }
    let mut rng = rng(seed);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0usize;
    for g in strata(train_idx, conditions) {
        let mut members = g;
        members.shuffle(&mut rng);
        for r in members {
            assignment[next % k].push(r);
            next += 1;
        }
    }
    let folds = (0..k)
        .map(|f| {
            let mut validation = assignment[f].clone();
            validation.sort_unstable();
            let mut train: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            Fold { train, validation }
        })
        .collect();
    Ok(folds)
}

/// Full plan: stratified hold-out over `rows`, then stratified K folds of
/// the training part.
pub fn make_split_plan(
    rows: &[usize],
    conditions: &[Condition],
    test_fraction: f64,
    k: usize,
    split_seed: u64,
    cv_seed: u64,
) -> Result<SplitPlan> {
    let (train_idx, test_idx) = stratified_split_rows(rows, conditions, test_fraction, split_seed)?;
    let folds = kfold_indices(&train_idx, k, cv_seed, conditions)?;
    Ok(SplitPlan {
        train_idx,
        test_idx,
        folds,
        seed: split_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV3: &str = "condition,crp,balf_neutrophils,weight_mg,force_mN\n\
                        Sham,1.5,100,47.1,12000\n\
                        CS,,250,40.2,10000\n\
                        1,2.5,300,41.0,10500\n";

    #[test]
    fn loads_three_rows_with_missing_cell() {
        let c = read_cohort(CSV3.as_bytes(), &ColumnSpec::default()).unwrap();
        assert_eq!(c.n(), 3);
        assert_eq!(c.feature_names, vec!["crp", "balf_neutrophils"]);
        assert_eq!(c.subjects[1].features[0], None);
        assert_eq!(c.subjects[1].condition, Condition::Cs);
        assert_eq!(c.subjects[2].condition, Condition::Cs);
        let q = c.subjects[0].quality().unwrap();
        assert!((q - 12000.0 / 47.1).abs() <= 1e-9 * q);
    }

    #[test]
    fn unknown_condition_label_is_schema_error() {
        let text = "condition,crp,weight_mg\nSmoke,1.0,40\n";
        let mut spec = ColumnSpec::default();
        spec.labels = [("Sham".to_string(), 0), ("CS".to_string(), 1)].into_iter().collect();
        assert!(matches!(read_cohort(text.as_bytes(), &spec), Err(Error::Schema(_))));
    }

    #[test]
    fn duplicate_column_is_schema_error() {
        let text = "condition,crp,crp,weight_mg\nSham,1,2,40\n";
        assert!(matches!(
            read_cohort(text.as_bytes(), &ColumnSpec::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = "condition,crp,weight_mg\nSham,1,40\nCS,abc,41\n";
        match read_cohort(text.as_bytes(), &ColumnSpec::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = "condition,crp,weight_mg\nSham,1\n";
        assert!(matches!(
            read_cohort(short.as_bytes(), &ColumnSpec::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_target_header_is_schema_error() {
        let text = "condition,crp\nSham,1\n";
        assert!(matches!(
            read_cohort(text.as_bytes(), &ColumnSpec::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn schema_descriptor_parses() {
        let spec = ColumnSpec::from_toml(
            "condition = \"group\"\ntargets = [\"weight_mg\"]\n[labels]\nair = 0\nsmoke = 1\n",
        )
        .unwrap();
        let text = "group,crp,weight_mg\nair,1,40\nsmoke,2,38\n";
        let c = read_cohort(text.as_bytes(), &spec).unwrap();
        assert_eq!(c.conditions(), vec![Condition::Sham, Condition::Cs]);
        assert!(ColumnSpec::from_toml("[labels]\nx = 2\n").is_err());
    }

    #[test]
    fn csv_round_trip_preserves_cohort() {
        let c = generate_synthetic_cohort(
            20,
            3,
            &GenProfile {
                missing_rate: 0.1,
                ..GenProfile::default()
            },
        )
        .unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        write_cohort(&c, &mut w).unwrap();
        let bytes = w.into_inner().unwrap();
        let back = read_cohort(bytes.as_slice(), &ColumnSpec::default()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn generator_is_deterministic() {
        let p = GenProfile::default();
        let a = generate_synthetic_cohort(213, 7, &p).unwrap();
        let b = generate_synthetic_cohort(213, 7, &p).unwrap();
        assert_eq!(a, b);
        let mut wa = csv::Writer::from_writer(Vec::new());
        write_cohort(&a, &mut wa).unwrap();
        let mut wb = csv::Writer::from_writer(Vec::new());
        write_cohort(&b, &mut wb).unwrap();
        assert_eq!(wa.into_inner().unwrap(), wb.into_inner().unwrap());
    }

    #[test]
    fn generator_group_means_are_ordered() {
        let c = generate_synthetic_cohort(213, 7, &GenProfile::default()).unwrap();
        let group = |cond| -> Vec<f64> {
            c.subjects
                .iter()
                .filter(|s| s.condition == cond)
                .map(|s| s.weight_mg.unwrap())
                .collect()
        };
        let (sham, cs) = (group(Condition::Sham), group(Condition::Cs));
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let mu = m(v);
            v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let pooled = ((var(&sham) * (sham.len() - 1) as f64 + var(&cs) * (cs.len() - 1) as f64)
            / (sham.len() + cs.len() - 2) as f64)
            .sqrt();
        let se = pooled * (1.0 / sham.len() as f64 + 1.0 / cs.len() as f64).sqrt();
        assert!(m(&sham) - m(&cs) > 3.0 * se, "diff {} se {}", m(&sham) - m(&cs), se);

        // inflammatory markers are higher under CS, and everything is nonnegative
        for name in ["crp", "balf_neutrophils"] {
            let j = c.feature_index(name).unwrap();
            let gm = |cond| {
                let v: Vec<f64> = c
                    .subjects
                    .iter()
                    .filter(|s| s.condition == cond)
                    .map(|s| s.features[j].unwrap())
                    .collect();
                m(&v)
            };
            assert!(gm(Condition::Cs) > gm(Condition::Sham));
        }
        assert!(c.subjects.iter().all(|s| s.features.iter().all(|v| v.unwrap() >= 0.0)));
    }

    #[test]
    fn noiseless_profile_gives_identical_sham_records() {
        let c = generate_synthetic_cohort(30, 1, &GenProfile::default().noiseless()).unwrap();
        let sham: Vec<&SubjectRecord> =
            c.subjects.iter().filter(|s| s.condition == Condition::Sham).collect();
        assert!(sham.len() > 1);
        assert!(sham.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn weight_suppression_is_monotone() {
        let cs_mean = |supp: f64| {
            let p = GenProfile {
                cs_weight_suppression: supp,
                ..GenProfile::default()
            };
            let c = generate_synthetic_cohort(100, 11, &p).unwrap();
            let v: Vec<f64> = c
                .subjects
                .iter()
                .filter(|s| s.condition == Condition::Cs)
                .map(|s| s.weight_mg.unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let means: Vec<f64> = [0.0, 3.0, 6.0, 9.0].iter().map(|&s| cs_mean(s)).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    }

    #[test]
    fn bad_profile_is_config_error() {
        let mut p = GenProfile::default();
        p.biomarkers[0].sham_median = 0.0;
        assert!(matches!(generate_synthetic_cohort(20, 1, &p), Err(Error::Config(_))));
        let p = GenProfile {
            weight_sd: -1.0,
            ..GenProfile::default()
        };
        assert!(matches!(generate_synthetic_cohort(20, 1, &p), Err(Error::Config(_))));
        assert!(generate_synthetic_cohort(9, 1, &GenProfile::default()).is_err());
    }

    fn balanced(n_sham: usize, n_cs: usize) -> Vec<Condition> {
        let mut v = vec![Condition::Sham; n_sham];
        v.extend(vec![Condition::Cs; n_cs]);
        v
    }

    #[test]
    fn split_213_gives_43_test_subjects() {
        let c = generate_synthetic_cohort(213, 7, &GenProfile::default()).unwrap();
        let (train, test) = stratified_split(&c, 0.2, 42).unwrap();
        assert_eq!(test.len(), 43);
        assert_eq!(train.len() + test.len(), 213);
    }

    #[test]
    fn split_balanced_ten_takes_one_per_stratum() {
        let conds = balanced(5, 5);
        let rows: Vec<usize> = (0..10).collect();
        let (train, test) = stratified_split_rows(&rows, &conds, 0.2, 3).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test.iter().filter(|&&i| conds[i] == Condition::Sham).count(), 1);
        assert_eq!(train.len(), 8);
        let again = stratified_split_rows(&rows, &conds, 0.2, 3).unwrap();
        assert_eq!(again, (train, test));
    }

    #[test]
    fn split_rejects_tiny_stratum() {
        let conds = balanced(9, 1);
        let rows: Vec<usize> = (0..10).collect();
        assert!(matches!(
            stratified_split_rows(&rows, &conds, 0.2, 0),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn kfold_sizes_and_partition() {
        let conds = balanced(5, 5);
        let train: Vec<usize> = (0..10).collect();
        let folds = kfold_indices(&train, 5, 1, &conds).unwrap();
        assert!(folds.iter().all(|f| f.validation.len() == 2));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.validation.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, train);
        assert!(kfold_indices(&train, 11, 1, &conds).is_err());
        assert!(kfold_indices(&train, 1, 1, &conds).is_err());
    }

    #[test]
    fn kfold_170_balanced_has_17_per_stratum() {
        let conds = balanced(85, 85);
        let train: Vec<usize> = (0..170).collect();
        let folds = kfold_indices(&train, 5, 9, &conds).unwrap();
        for f in &folds {
            let sham = f.validation.iter().filter(|&&i| conds[i] == Condition::Sham).count();
            assert_eq!((sham, f.validation.len() - sham), (17, 17));
        }
    }
}
