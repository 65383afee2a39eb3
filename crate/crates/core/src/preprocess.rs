//! Train-only-fitted transforms and the pipeline that chains them.
//!
//! Order of application inside [`FittedPipeline`]:
//! budget columns -> median imputation -> engineered composites (on imputed
//! raw values) -> Yeo-Johnson -> scaler -> append condition (raw 0/1) and
//! optional condition interactions -> optional PCA -> optional angle map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Condition, DataSource};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::util::{index_hash, mean, median, quantile};

// ---------------------------------------------------------------------------
// Yeo-Johnson
// ---------------------------------------------------------------------------

const LAMBDA_RANGE: (f64, f64) = (-5.0, 5.0);
const LAMBDA_GRID_STEP: f64 = 0.05;

/// Four-branch Yeo-Johnson transform.
pub fn yj_transform(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        if lambda.abs() < 1e-12 {
            x.ln_1p()
        } else {
            (lambda * x.ln_1p()).exp_m1() / lambda
        }
    } else {
        let mu = 2.0 - lambda;
        if mu.abs() < 1e-12 {
            -(-x).ln_1p()
        } else {
            -(mu * (-x).ln_1p()).exp_m1() / mu
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YJParams {
    pub lambda: f64,
    /// Set when the column was constant and λ fell back to 1.
    pub degenerate: bool,
}

impl YJParams {
    pub fn apply(&self, x: f64) -> f64 {
        yj_transform(x, self.lambda)
    }
}

/// Gaussian profile log-likelihood of the transformed column, including the
/// Jacobian term.
pub fn yj_log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let t: Vec<f64> = values.iter().map(|&x| yj_transform(x, lambda)).collect();
    let mu = mean(&t);
    let var = t.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    if !(var.is_finite() && var > 0.0) {
        return f64::NEG_INFINITY;
    }
    let jac: f64 = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

/// Maximum-likelihood λ over [-5, 5]: coarse grid (step 0.05) then
/// golden-section refinement around the best grid point.
pub fn estimate_yj_lambda(values: &[f64]) -> Result<YJParams> {
    if values.len() < 3 {
        return Err(Error::Fit(format!(
            "Yeo-Johnson needs at least 3 non-missing values, got {}",
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo == hi {
        log::warn!("constant column: Yeo-Johnson lambda set to 1");
        return Ok(YJParams {
            lambda: 1.0,
            degenerate: true,
        });
    }
    let ll = |l: f64| yj_log_likelihood(values, l);
    let steps = ((LAMBDA_RANGE.1 - LAMBDA_RANGE.0) / LAMBDA_GRID_STEP).round() as usize;
    let mut best = (LAMBDA_RANGE.0, f64::NEG_INFINITY);
    for i in 0..=steps {
        let l = LAMBDA_RANGE.0 + i as f64 * LAMBDA_GRID_STEP;
        let v = ll(l);
        if v > best.1 {
            best = (l, v);
        }
    }
    let mut a = (best.0 - LAMBDA_GRID_STEP).max(LAMBDA_RANGE.0);
    let mut b = (best.0 + LAMBDA_GRID_STEP).min(LAMBDA_RANGE.1);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (ll(c), ll(d));
    while b - a > 1e-9 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ll(d);
        }
    }
    let refined = 0.5 * (a + b);
    let lambda = if ll(refined) >= best.1 { refined } else { best.0 };
    Ok(YJParams {
        lambda,
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    Standard,
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub center: f64,
    pub scale: f64,
}

/// Standard: mean and population SD. Robust: median and IQR with
/// linearly interpolated quartiles. Scale is floored at 1e-12.
pub fn fit_scaler(values: &[f64], kind: ScalerKind) -> Result<ScalerParams> {
    if values.len() < 2 {
        return Err(Error::Fit(format!(
            "scaler needs at least 2 values, got {}",
            values.len()
        )));
    }
    let (center, scale) = match kind {
        ScalerKind::Standard => {
            let mu = mean(values);
            let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / values.len() as f64;
            (mu, var.sqrt())
        }
        ScalerKind::Robust => (
            median(values),
            quantile(values, 0.75) - quantile(values, 0.25),
        ),
    };
    Ok(ScalerParams {
        kind,
        center,
        scale: scale.max(SCALE_FLOOR),
    })
}

pub fn apply_scaler(x: f64, params: &ScalerParams) -> f64 {
    (x - params.center) / params.scale
}

// ---------------------------------------------------------------------------
// Target transform
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    Log1p,
}

impl TargetTransform {
    pub fn forward(self, y: f64) -> Result<f64> {
        match self {
            TargetTransform::Identity => Ok(y),
            TargetTransform::Log1p => target_forward(y),
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            TargetTransform::Identity => y,
            TargetTransform::Log1p => target_inverse(y),
        }
    }

    pub fn forward_all(self, ys: &[f64]) -> Result<Vec<f64>> {
        ys.iter().map(|&y| self.forward(y)).collect()
    }
}

pub fn target_forward(y: f64) -> Result<f64> {
    if !(y > -1.0) {
        return Err(Error::Domain(format!("log1p target transform needs y > -1, got {y}")));
    }
    Ok(y.ln_1p())
}

pub fn target_inverse(y: f64) -> f64 {
    y.exp_m1()
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `q` orthonormal loading vectors, each of length p.
    pub components: Vec<Vec<f64>>,
    /// Nonincreasing, nonnegative (sample covariance, n - 1 denominator).
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

/// PCA on the training rows: top-`q` eigenvectors of the sample covariance.
/// Each component's largest-magnitude entry is made positive.
pub fn fit_pca(rows: &[Vec<f64>], q: usize) -> Result<PcaModel> {
    let p = rows.first().map(Vec::len).unwrap_or(0);
    if q == 0 || q > p {
        return Err(Error::Config(format!("PCA q = {q} must lie in 1..={p}")));
    }
    if rows.len() < q + 1 {
        return Err(Error::Fit(format!(
            "PCA with q = {q} needs at least {} rows, got {}",
            q + 1,
            rows.len()
        )));
    }
    let n = rows.len();
    let x = crate::linalg::from_rows(rows, p)?;
    let mu: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let (vals, vecs) = sym_eigen(&cov);
    let mut components = Vec::with_capacity(q);
    let mut explained = Vec::with_capacity(q);
    for k in 0..q {
        let mut v: Vec<f64> = vecs.column(k).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bv), (i, &x)| {
                if x.abs() > bv { (i, x.abs()) } else { (bi, bv) }
            })
            .0;
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained.push(vals[k].max(0.0));
    }
    Ok(PcaModel {
        mean: mu,
        components,
        explained_variance: explained,
        total_variance,
    })
}

pub fn pca_project(x: &[f64], model: &PcaModel) -> Result<Vec<f64>> {
    crate::error::shape(model.mean.len(), x.len())?;
    Ok(model
        .components
        .iter()
        .map(|c| c.iter().zip(x).zip(&model.mean).map(|((w, v), m)| w * (v - m)).sum())
        .collect())
}

// ---------------------------------------------------------------------------
// Angle map
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleMap {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub degenerate: Vec<bool>,
}

pub fn fit_angle_map(rows: &[Vec<f64>], interval: (f64, f64)) -> Result<AngleMap> {
    let (theta_min, theta_max) = interval;
    if !(theta_min < theta_max) {
        return Err(Error::Config(format!(
            "angle interval must satisfy min < max, got [{theta_min}, {theta_max}]"
        )));
    }
    let q = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || q == 0 {
        return Err(Error::Fit("angle map needs at least one non-empty row".into()));
    }
    let mut mins = vec![f64::INFINITY; q];
    let mut maxs = vec![f64::NEG_INFINITY; q];
    for r in rows {
        crate::error::shape(q, r.len())?;
        for j in 0..q {
            mins[j] = mins[j].min(r[j]);
            maxs[j] = maxs[j].max(r[j]);
        }
    }
    let degenerate = mins.iter().zip(&maxs).map(|(a, b)| b - a <= 1e-12).collect();
    Ok(AngleMap {
        mins,
        maxs,
        theta_min,
        theta_max,
        degenerate,
    })
}

impl AngleMap {
    /// Linear train-min -> θ_min, train-max -> θ_max; out-of-range inputs
    /// clamp to the interval ends; degenerate components map to the midpoint.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        crate::error::shape(self.mins.len(), u.len())?;
        let span = self.theta_max - self.theta_min;
        Ok(u.iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.degenerate[j] {
                    return 0.5 * (self.theta_min + self.theta_max);
                }
                let t = self.theta_min + (x - self.mins[j]) / (self.maxs[j] - self.mins[j]) * span;
                t.clamp(self.theta_min, self.theta_max)
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Engineered features and condition interactions
// ---------------------------------------------------------------------------

pub const ENGINEERED_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeKind {
    Ratio,
    Product,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composite {
    pub name: String,
    pub kind: CompositeKind,
    /// Source column positions within the input row.
    pub a: usize,
    pub b: usize,
}

/// The six composite covariates: (name, numerator or left factor, denominator
/// or right factor, kind).
pub const COMPOSITES: [(&str, &str, &str, CompositeKind); 6] = [
    ("NLR", "balf_neutrophils", "balf_lymphocytes", CompositeKind::Ratio),
    ("CRPperCell", "crp", "balf_total", CompositeKind::Ratio),
    ("OxStressOverVO2", "ox_stress", "vo2", CompositeKind::Ratio),
    ("CRPVO2", "crp", "vo2", CompositeKind::Product),
    ("CRPOxStress", "crp", "ox_stress", CompositeKind::Product),
    ("TNFaNeutrophils", "tnfa_mrna", "balf_neutrophils", CompositeKind::Product),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineeredSpec {
    pub composites: Vec<Composite>,
}

impl EngineeredSpec {
    /// Composites whose source columns are all present in `names`.
    pub fn from_names(names: &[String]) -> Self {
        let pos = |n: &str| names.iter().position(|x| x == n);
        let composites = COMPOSITES
            .iter()
            .filter_map(|(name, a, b, kind)| {
                Some(Composite {
                    name: (*name).to_string(),
                    kind: *kind,
                    a: pos(a)?,
                    b: pos(b)?,
                })
            })
            .collect();
        Self { composites }
    }

    pub fn names(&self) -> Vec<String> {
        self.composites.iter().map(|c| c.name.clone()).collect()
    }

    /// The input row followed by every available composite.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        for c in &self.composites {
            let (a, b) = (row[c.a], row[c.b]);
            out.push(match c.kind {
                CompositeKind::Ratio => a / (b + ENGINEERED_EPS),
                CompositeKind::Product => a * b,
            });
        }
        out
    }
}

/// Augment a record with the composites available under `names`; returns
/// the augmented vector and the names of the composites that were added.
pub fn engineered_features(row: &[f64], names: &[String]) -> (Vec<f64>, Vec<String>) {
    let spec = EngineeredSpec::from_names(names);
    (spec.apply(row), spec.names())
}

/// `[phi, c, c * phi]`.
pub fn condition_interactions(phi: &[f64], c: Condition) -> Vec<f64> {
    let ci = c.indicator();
    let mut out = Vec::with_capacity(2 * phi.len() + 1);
    out.extend_from_slice(phi);
    out.push(ci);
    out.extend(phi.iter().map(|v| ci * v));
    out
}

// ---------------------------------------------------------------------------
// Median imputation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianImputer {
    pub names: Vec<String>,
    pub medians: Vec<f64>,
}

/// Fit per-column medians on training values. An all-missing column is a
/// fit error naming the column.
pub fn fit_median_imputer(columns: &[(String, Vec<Option<f64>>)]) -> Result<MedianImputer> {
    let mut medians = Vec::with_capacity(columns.len());
    for (name, col) in columns {
        let present: Vec<f64> = col.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Fit(format!(
                "column '{name}' has no non-missing training values"
            )));
        }
        medians.push(median(&present));
    }
    Ok(MedianImputer {
        names: columns.iter().map(|(n, _)| n.clone()).collect(),
        medians,
    })
}

impl MedianImputer {
    pub fn apply(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        crate::error::shape(self.medians.len(), row.len())?;
        Ok(row
            .iter()
            .zip(&self.medians)
            .map(|(v, m)| v.unwrap_or(*m))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Which transforms a pipeline applies and to which columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Biomarker columns read from the cohort (the feature budget).
    pub features: Vec<String>,
    pub include_condition: bool,
    pub engineered: bool,
    /// Append `c * phi` after the condition indicator. Requires `include_condition`.
    pub interactions: bool,
    pub power_transform: bool,
    pub scaler: Option<ScalerKind>,
    pub target: TargetTransform,
    pub pca: Option<usize>,
    pub angle_interval: Option<(f64, f64)>,
}

impl PipelineSpec {
    pub fn tabular(features: Vec<String>, include_condition: bool) -> Self {
        Self {
            features,
            include_condition,
            engineered: false,
            interactions: false,
            power_transform: true,
            scaler: Some(ScalerKind::Standard),
            target: TargetTransform::Log1p,
            pca: None,
            angle_interval: None,
        }
    }
}

/// A stack of transforms with frozen, train-fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub spec: PipelineSpec,
    pub imputer: MedianImputer,
    pub engineered: Option<EngineeredSpec>,
    /// Continuous column names after engineering.
    pub continuous_names: Vec<String>,
    pub power: Option<Vec<YJParams>>,
    pub scalers: Option<Vec<ScalerParams>>,
    pub pca: Option<PcaModel>,
    pub angle: Option<AngleMap>,
    /// Fingerprint of the training rows every parameter was computed from.
    pub fit_hash: String,
    pub n_fit_rows: usize,
}

impl FittedPipeline {
    pub fn fit(spec: &PipelineSpec, data: &dyn DataSource, rows: &[usize]) -> Result<Self> {
        if spec.interactions && !spec.include_condition {
            return Err(Error::Config("condition interactions require include_condition".into()));
        }
        if spec.features.is_empty() && !spec.include_condition {
            return Err(Error::Config("pipeline has no input columns".into()));
        }
        let raw = read_columns(&spec.features, data, rows)?;
        let imputer = fit_median_imputer(&raw)?;
        let mut mat: Vec<Vec<f64>> = (0..rows.len())
            .map(|i| {
                let row: Vec<Option<f64>> = raw.iter().map(|(_, c)| c[i]).collect();
                imputer.apply(&row)
            })
            .collect::<Result<_>>()?;

        let engineered = spec
            .engineered
            .then(|| EngineeredSpec::from_names(&spec.features));
        let mut continuous_names = spec.features.clone();
        if let Some(e) = &engineered {
            continuous_names.extend(e.names());
            mat = mat.iter().map(|r| e.apply(r)).collect();
        }
        let d = continuous_names.len();
        let column = |m: &[Vec<f64>], j: usize| -> Vec<f64> { m.iter().map(|r| r[j]).collect() };

        let power = if spec.power_transform && d > 0 {
            let params = (0..d)
                .map(|j| estimate_yj_lambda(&column(&mat, j)))
                .collect::<Result<Vec<_>>>()?;
            for r in mat.iter_mut() {
                for (v, p) in r.iter_mut().zip(&params) {
                    *v = p.apply(*v);
                }
            }
            Some(params)
        } else {
            None
        };

        let scalers = match spec.scaler {
            Some(kind) if d > 0 => {
                let params = (0..d)
                    .map(|j| fit_scaler(&column(&mat, j), kind))
                    .collect::<Result<Vec<_>>>()?;
                for r in mat.iter_mut() {
                    for (v, p) in r.iter_mut().zip(&params) {
                        *v = apply_scaler(*v, p);
                    }
                }
                Some(params)
            }
            _ => None,
        };

        let conds = data.conditions(rows);
        let mut mat: Vec<Vec<f64>> = mat
            .into_iter()
            .zip(&conds)
            .map(|(r, &c)| attach_condition(r, c, spec))
            .collect();

        let pca = match spec.pca {
            Some(q) => {
                let model = fit_pca(&mat, q)?;
                mat = mat
                    .iter()
                    .map(|r| pca_project(r, &model))
                    .collect::<Result<_>>()?;
                Some(model)
            }
            None => None,
        };
        let angle = match spec.angle_interval {
            Some(iv) => Some(fit_angle_map(&mat, iv)?),
            None => None,
        };

        Ok(Self {
            spec: spec.clone(),
            imputer,
            engineered,
            continuous_names,
            power,
            scalers,
            pca,
            angle,
            fit_hash: index_hash(rows),
            n_fit_rows: rows.len(),
        })
    }

    /// Transform the given rows with the frozen parameters.
    pub fn transform(&self, data: &dyn DataSource, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let raw = read_columns(&self.spec.features, data, rows)?;
        let conds = data.conditions(rows);
        (0..rows.len())
            .map(|i| {
                let row: Vec<Option<f64>> = raw.iter().map(|(_, c)| c[i]).collect();
                self.transform_record(&row, conds[i])
            })
            .collect()
    }

    /// Transform one record given its budget-column values (missing allowed).
    pub fn transform_record(&self, raw: &[Option<f64>], c: Condition) -> Result<Vec<f64>> {
        let mut v = self.imputer.apply(raw)?;
        if let Some(e) = &self.engineered {
            v = e.apply(&v);
        }
        if let Some(ps) = &self.power {
            for (x, p) in v.iter_mut().zip(ps) {
                *x = p.apply(*x);
            }
        }
        if let Some(ss) = &self.scalers {
            for (x, s) in v.iter_mut().zip(ss) {
                *x = apply_scaler(*x, s);
            }
        }
        let mut v = attach_condition(v, c, &self.spec);
        if let Some(p) = &self.pca {
            v = pca_project(&v, p)?;
        }
        if let Some(a) = &self.angle {
            v = a.apply(&v)?;
        }
        Ok(v)
    }

    pub fn output_dim(&self) -> usize {
        if let Some(p) = &self.pca {
            return p.components.len();
        }
        let d = self.continuous_names.len();
        match (self.spec.include_condition, self.spec.interactions) {
            (false, _) => d,
            (true, false) => d + 1,
            (true, true) => 2 * d + 1,
        }
    }

    pub fn target_transform(&self) -> TargetTransform {
        self.spec.target
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

fn attach_condition(mut v: Vec<f64>, c: Condition, spec: &PipelineSpec) -> Vec<f64> {
    match (spec.include_condition, spec.interactions) {
        (false, _) => v,
        (true, false) => {
            v.push(c.indicator());
            v
        }
        (true, true) => condition_interactions(&v, c),
    }
}

fn read_columns(
    names: &[String],
    data: &dyn DataSource,
    rows: &[usize],
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    names
        .iter()
        .map(|n| Ok((n.clone(), data.column(n, rows)?)))
        .collect()
}

/// Pearson correlation of each candidate column (median-imputed on the
/// given rows) with the target; returns the `k` names with the largest
/// absolute correlation, ties by candidate order. Only `rows` are read.
pub fn rank_by_correlation(
    data: &dyn DataSource,
    rows: &[usize],
    y: &[f64],
    candidates: &[String],
    k: usize,
) -> Result<Vec<String>> {
    crate::error::shape(rows.len(), y.len())?;
    let y_mean = mean(y);
    let mut scored = Vec::new();
    for (pos, name) in candidates.iter().enumerate() {
        let col = data.column(name, rows)?;
        let present: Vec<f64> = col.iter().flatten().copied().collect();
        if present.is_empty() {
            continue;
        }
        let med = median(&present);
        let x: Vec<f64> = col.iter().map(|v| v.unwrap_or(med)).collect();
        let xm = mean(&x);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - y_mean)).sum();
        let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - y_mean).powi(2)).sum();
        let r = if sxx > 0.0 && syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
        scored.push((pos, r.abs()));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(p, _)| candidates[p].clone())
        .collect())
}

/// Column variance helper used by tests and reports.
pub fn column_variances(rows: &[Vec<f64>]) -> Vec<f64> {
    let p = rows.first().map(Vec::len).unwrap_or(0);
    let n = rows.len() as f64;
    (0..p)
        .map(|j| {
            let c: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let m = mean(&c);
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}
