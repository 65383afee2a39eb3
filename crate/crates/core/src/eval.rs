//! Regression and screening metrics, and the grid-search CV harness.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Condition, DataSource, Fold, Target};
use crate::error::{Error, Result};
use crate::util::{derive_seed, index_hash, mean, median, str_key};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// NaN when the true values have zero variance.
    pub r2: f64,
    /// NaN when the mean of the true values is zero.
    pub pct_rmse: f64,
    pub pct_mae: f64,
}

pub fn regression_metrics(y: &[f64], yhat: &[f64]) -> Result<RegressionMetrics> {
    crate::error::shape(y.len(), yhat.len())?;
    if y.len() < 2 {
        return Err(Error::Domain(format!("metrics need at least 2 values, got {}", y.len())));
    }
    let n = y.len() as f64;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let rmse = (sse / n).sqrt();
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let ybar = mean(y);
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else {
        log::warn!("R^2 undefined: true values have zero variance");
        f64::NAN
    };
    let (pct_rmse, pct_mae) = if ybar != 0.0 {
        (100.0 * rmse / ybar, 100.0 * mae / ybar)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RegressionMetrics {
        rmse,
        mae,
        r2,
        pct_rmse,
        pct_mae,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStatistic {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSpec {
    pub kappa: f64,
    pub statistic: ThresholdStatistic,
    pub positive: PositiveClass,
}

impl Default for ScreeningSpec {
    fn default() -> Self {
        Self {
            kappa: 0.8,
            statistic: ThresholdStatistic::Mean,
            positive: PositiveClass::Low,
        }
    }
}

/// `κ ×` (mean or median) of the Sham training targets.
pub fn fit_screening_threshold(y_train: &[f64], c_train: &[Condition], spec: &ScreeningSpec) -> Result<f64> {
    crate::error::shape(y_train.len(), c_train.len())?;
    let sham: Vec<f64> = y_train
        .iter()
        .zip(c_train)
        .filter(|(_, c)| **c == Condition::Sham)
        .map(|(y, _)| *y)
        .collect();
    if sham.is_empty() {
        return Err(Error::Protocol("screening threshold needs at least one Sham training subject".into()));
    }
    let stat = match spec.statistic {
        ThresholdStatistic::Mean => mean(&sham),
        ThresholdStatistic::Median => median(&sham),
    };
    Ok(spec.kappa * stat)
}

/// 1 for the positive class. The boundary value counts as positive.
pub fn screening_labels(values: &[f64], tau: f64, positive: PositiveClass) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            u8::from(match positive {
                PositiveClass::Low => v <= tau,
                PositiveClass::High => v >= tau,
            })
        })
        .collect()
}

pub fn prediction_labels(yhat: &[f64], tau: f64, positive: PositiveClass) -> Vec<u8> {
    screening_labels(yhat, tau, positive)
}

/// Larger score means stronger evidence for the positive class.
pub fn screening_scores(yhat: &[f64], positive: PositiveClass) -> Vec<f64> {
    match positive {
        PositiveClass::Low => yhat.iter().map(|v| -v).collect(),
        PositiveClass::High => yhat.to_vec(),
    }
}

/// Average 1-based ranks with ties sharing their midrank.
fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney ROC-AUC with midranks for ties. NaN when only one class is
/// present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    crate::error::shape(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        log::warn!("ROC-AUC undefined: labels contain a single class");
        return Ok(f64::NAN);
    }
    let ranks = midranks(scores);
    let pos_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = pos_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningMetrics {
    pub roc_auc: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub balanced_accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class precision, recall and F1 over the two classes with `0/0 = 0`.
/// The returned `roc_auc` is NaN; fill it from the scores.
pub fn classification_report(pred: &[u8], truth: &[u8]) -> Result<ScreeningMetrics> {
    crate::error::shape(truth.len(), pred.len())?;
    let mut prec = [0.0; 2];
    let mut rec = [0.0; 2];
    let mut f1 = [0.0; 2];
    let mut support = [0usize; 2];
    for class in [0u8, 1] {
        let k = class as usize;
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == class && **t == class).count();
        let predicted = pred.iter().filter(|p| **p == class).count();
        support[k] = truth.iter().filter(|t| **t == class).count();
        prec[k] = ratio(tp, predicted);
        rec[k] = ratio(tp, support[k]);
        f1[k] = if prec[k] + rec[k] > 0.0 {
            2.0 * prec[k] * rec[k] / (prec[k] + rec[k])
        } else {
            0.0
        };
    }
    let total = (support[0] + support[1]).max(1) as f64;
    Ok(ScreeningMetrics {
        roc_auc: f64::NAN,
        f1_macro: (f1[0] + f1[1]) / 2.0,
        f1_weighted: (f1[0] * support[0] as f64 + f1[1] * support[1] as f64) / total,
        precision_macro: (prec[0] + prec[1]) / 2.0,
        recall_macro: (rec[0] + rec[1]) / 2.0,
        balanced_accuracy: (rec[0] + rec[1]) / 2.0,
    })
}

/// Screening metrics for regression outputs thresholded at `tau`.
pub fn screening_metrics(y: &[f64], yhat: &[f64], tau: f64, positive: PositiveClass) -> Result<ScreeningMetrics> {
    let truth = screening_labels(y, tau, positive);
    let pred = prediction_labels(yhat, tau, positive);
    let mut m = classification_report(&pred, &truth)?;
    m.roc_auc = roc_auc(&screening_scores(yhat, positive), &truth)?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// A model fitted by an [`Estimator`]. Predictions are in original target
/// units.
pub trait FittedModel: Send + Sync {
    fn predict(&self, data: &dyn DataSource, rows: &[usize]) -> Result<Vec<f64>>;
    /// Fingerprint of the rows every data-dependent step was fitted on.
    fn fit_hash(&self) -> &str;
}

/// A model family with a hyperparameter type. `fit` runs the whole pipeline
/// (all transforms included) on `rows` only.
pub trait Estimator: Sync {
    type Config: Clone + Send + Sync + std::fmt::Debug;

    fn name(&self) -> &str;
    fn describe(&self, cfg: &Self::Config) -> String;
    fn fit(
        &self,
        cfg: &Self::Config,
        data: &dyn DataSource,
        target: Target,
        rows: &[usize],
        seed: u64,
    ) -> Result<Box<dyn FittedModel>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub family: String,
    pub stage: String,
    pub expected: String,
    pub recorded: String,
}

impl AuditEntry {
    pub fn ok(&self) -> bool {
        self.expected == self.recorded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: String,
    pub fingerprint: String,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// 1 is best; `None` for excluded configs.
    pub rank: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub family: String,
    pub rows: Vec<CvRow>,
}

pub struct GridSearchResult<C> {
    pub best_index: usize,
    pub best_config: C,
    pub table: CvTable,
    pub audit: Vec<AuditEntry>,
    /// Winner refitted on every training row.
    pub model: Box<dyn FittedModel>,
}

fn validation_rmse(
    model: &dyn FittedModel,
    data: &dyn DataSource,
    target: Target,
    rows: &[usize],
) -> Result<f64> {
    let pred = model.predict(data, rows)?;
    let truth = data.targets(rows, target)?;
    let sse: f64 = pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum();
    let rmse = (sse / rows.len() as f64).sqrt();
    if rmse.is_finite() {
        Ok(rmse)
    } else {
        Err(Error::Numeric("non-finite validation RMSE".into()))
    }
}

/// Exhaustive CV over `grid`: every (config, fold) pair refits the full
/// pipeline on the fold's training part and scores RMSE in original units
/// on its validation part. The lowest mean wins with ties going to the
/// earlier config; a config that fails on any fold is excluded. The winner
/// is refitted on `train_rows`.
pub fn grid_search_cv<E: Estimator>(
    est: &E,
    grid: &[E::Config],
    data: &dyn DataSource,
    target: Target,
    train_rows: &[usize],
    folds: &[Fold],
    seed: u64,
) -> Result<GridSearchResult<E::Config>> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{}: empty hyperparameter grid", est.name())));
    }
    if folds.is_empty() {
        return Err(Error::Config(format!("{}: no CV folds", est.name())));
    }
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<(Result<f64>, Option<AuditEntry>)> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let fold = &folds[f];
            let fit_seed = derive_seed(seed, &[c as u64, f as u64]);
            match est.fit(&grid[c], data, target, &fold.train, fit_seed) {
                Ok(model) => {
                    let audit = AuditEntry {
                        family: est.name().to_string(),
                        stage: format!("config {c} fold {f}"),
                        expected: index_hash(&fold.train),
                        recorded: model.fit_hash().to_string(),
                    };
                    (validation_rmse(model.as_ref(), data, target, &fold.validation), Some(audit))
                }
                Err(e) => (Err(e), None),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(grid.len());
    let mut audit = Vec::new();
    for (c, cfg) in grid.iter().enumerate() {
        let label = est.describe(cfg);
        let mut fold_rmse = Vec::with_capacity(folds.len());
        let mut error = None;
        for f in 0..folds.len() {
            let (res, entry) = &outcomes[c * folds.len() + f];
            if let Some(e) = entry {
                audit.push(e.clone());
            }
            match res {
                Ok(v) => fold_rmse.push(*v),
                Err(e) => {
                    fold_rmse.push(f64::NAN);
                    error.get_or_insert_with(|| format!("fold {f}: {e}"));
                }
            }
        }
        if let Some(e) = &error {
            log::warn!("{}: excluding config {label}: {e}", est.name());
        }
        let mean_rmse = if error.is_none() { mean(&fold_rmse) } else { f64::NAN };
        rows.push(CvRow {
            fingerprint: format!("{:016x}", str_key(&format!("{}|{label}", est.name()))),
            config: label,
            fold_rmse,
            mean_rmse,
            rank: None,
            error,
        });
    }
    let mut valid: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].error.is_none()).collect();
    if valid.is_empty() {
        return Err(Error::Harness(format!(
            "{}: every configuration failed; first error: {}",
            est.name(),
            rows[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    valid.sort_by(|&a, &b| rows[a].mean_rmse.total_cmp(&rows[b].mean_rmse).then(a.cmp(&b)));
    for (r, &i) in valid.iter().enumerate() {
        rows[i].rank = Some(r + 1);
    }
    let best_index = valid[0];
    let model = est.fit(
        &grid[best_index],
        data,
        target,
        train_rows,
        derive_seed(seed, &[u64::MAX]),
    )?;
    audit.push(AuditEntry {
        family: est.name().to_string(),
        stage: "refit".into(),
        expected: index_hash(train_rows),
        recorded: model.fit_hash().to_string(),
    });
    Ok(GridSearchResult {
        best_index,
        best_config: grid[best_index].clone(),
        table: CvTable {
            family: est.name().to_string(),
            rows,
        },
        audit,
        model,
    })
}

/// Fixed-precision float formatting shared by every report writer.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// CV table as CSV: fingerprint, config label, per-fold RMSE, mean, rank.
pub fn write_cv_table<W: Write>(w: W, table: &CvTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n_folds = table.rows.first().map_or(0, |r| r.fold_rmse.len());
    let mut header = vec!["family".to_string(), "fingerprint".into(), "config".into()];
    header.extend((0..n_folds).map(|f| format!("fold{f}_rmse")));
    header.extend(["mean_rmse".into(), "rank".into(), "error".into()]);
    out.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![table.family.clone(), r.fingerprint.clone(), r.config.clone()];
        rec.extend(r.fold_rmse.iter().map(|v| fmt_num(*v)));
        rec.push(fmt_num(r.mean_rmse));
        rec.push(r.rank.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.error.clone().unwrap_or_default());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{kfold_indices, Cohort, SubjectRecord};
    use crate::linmodels::{fit_ridge, RidgeModel};
    use crate::util::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn regression_metric_examples() {
        let y = [1.0, 2.0, 4.0];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.r2), (0.0, 1.0));
        let m = regression_metrics(&y, &[7.0 / 3.0; 3]).unwrap();
        assert!(m.r2.abs() < 1e-15);
        let m = regression_metrics(&[0.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.mae, 1.0);
        assert!((m.pct_rmse - 100.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!(regression_metrics(&[3.0, 3.0], &[1.0, 2.0]).unwrap().r2.is_nan());
        assert!(regression_metrics(&[-1.0, 1.0], &[0.0, 0.0]).unwrap().pct_rmse.is_nan());
        assert!(regression_metrics(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let spec = ScreeningSpec::default();
        let c = [Condition::Sham; 3];
        assert!((fit_screening_threshold(&[10.0; 3], &c, &spec).unwrap() - 8.0).abs() < 1e-15);
        let med = ScreeningSpec {
            statistic: ThresholdStatistic::Median,
            kappa: 1.0,
            ..spec
        };
        assert_eq!(fit_screening_threshold(&[12.0, 8.0, 10.0], &c, &med).unwrap(), 10.0);
        let med8 = ScreeningSpec { kappa: 0.8, ..med };
        assert!((fit_screening_threshold(&[8.0, 10.0, 12.0], &c, &med8).unwrap() - 8.0).abs() < 1e-15);
        // CS subjects are ignored
        let mixed = [Condition::Sham, Condition::Cs, Condition::Sham];
        let one = ScreeningSpec { kappa: 1.0, ..spec };
        assert_eq!(fit_screening_threshold(&[4.0, 100.0, 6.0], &mixed, &one).unwrap(), 5.0);
        assert!(matches!(
            fit_screening_threshold(&[1.0], &[Condition::Cs], &spec),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn label_boundaries() {
        assert_eq!(screening_labels(&[7.0, 8.0, 9.0], 8.0, PositiveClass::Low), vec![1, 1, 0]);
        assert_eq!(screening_labels(&[7.0, 8.0, 9.0], 8.0, PositiveClass::High), vec![0, 1, 1]);
    }

    fn pair_auc(s: &[f64], l: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] == 1 && l[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        let l = [0, 0, 1, 1];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.3, 0.4], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.4, 0.3, 0.2, 0.1], &l).unwrap(), 0.0);
        assert_eq!(roc_auc(&[1.0; 4], &l).unwrap(), pair_auc(&[1.0; 4], &l));
        assert_eq!(roc_auc(&[1.0; 4], &l).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).unwrap().is_nan());
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut r = rng(3);
        for _ in 0..200 {
            let n = r.gen_range(2..40);
            let s: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64).collect();
            let mut l: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
            l[0] = 0;
            l[1] = 1;
            assert_eq!(roc_auc(&s, &l).unwrap(), pair_auc(&s, &l));
        }
    }

    #[test]
    fn classification_examples() {
        let m = classification_report(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        for v in [m.f1_macro, m.f1_weighted, m.precision_macro, m.recall_macro, m.balanced_accuracy] {
            assert_eq!(v, 1.0);
        }
        // TP=1, FN=1, TN=2, FP=0
        let m = classification_report(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.balanced_accuracy, 0.75);
        assert_eq!(m.recall_macro, 0.75);
        // precision: pos 1/1, neg 2/3; f1: pos 2/3, neg 0.8
        assert!((m.precision_macro - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((m.f1_macro - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        let m = classification_report(&[0, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.balanced_accuracy, 0.5);
        assert_eq!(m.precision_macro, 0.25);
    }

    proptest! {
        #[test]
        fn auc_complement_and_monotone_invariance(
            s in proptest::collection::hash_set(-1000i32..1000, 4..30),
            seed in 0u64..1000,
        ) {
            let s: Vec<f64> = s.into_iter().map(|v| v as f64 / 10.0).collect();
            let mut r = rng(seed);
            let mut l: Vec<u8> = (0..s.len()).map(|_| r.gen_range(0..2)).collect();
            l[0] = 0;
            l[1] = 1;
            let a = roc_auc(&s, &l).unwrap();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((a + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
            let warped: Vec<f64> = s.iter().map(|v| v.exp() + 3.0 * v).collect();
            prop_assert_eq!(a, roc_auc(&warped, &l).unwrap());
        }

        #[test]
        fn metric_inequalities(y in proptest::collection::vec(-50.0f64..50.0, 2..20), d in proptest::collection::vec(-5.0f64..5.0, 20)) {
            let yhat: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
            let m = regression_metrics(&y, &yhat).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12 && m.mae >= 0.0);
            prop_assert!(m.r2.is_nan() || m.r2 <= 1.0);
        }
    }

    // Minimal estimator over raw cohort columns for harness tests.
    struct RidgeEst;
    struct RidgeFit {
        model: RidgeModel,
        hash: String,
    }

    impl FittedModel for RidgeFit {
        fn predict(&self, data: &dyn DataSource, rows: &[usize]) -> Result<Vec<f64>> {
            let x = data.column("x", rows)?;
            x.iter().map(|v| self.model.predict_row(&[v.unwrap()])).collect()
        }
        fn fit_hash(&self) -> &str {
            &self.hash
        }
    }

    impl Estimator for RidgeEst {
        type Config = f64;
        fn name(&self) -> &str {
            "ridge"
        }
        fn describe(&self, cfg: &f64) -> String {
            format!("alpha={cfg:e}")
        }
        fn fit(&self, alpha: &f64, data: &dyn DataSource, target: Target, rows: &[usize], _seed: u64) -> Result<Box<dyn FittedModel>> {
            if *alpha < 0.0 {
                return Err(Error::Config("negative alpha".into()));
            }
            let x: Vec<Vec<f64>> = data.column("x", rows)?.into_iter().map(|v| vec![v.unwrap()]).collect();
            let y = data.targets(rows, target)?;
            Ok(Box::new(RidgeFit {
                model: fit_ridge(&x, &y, *alpha)?,
                hash: index_hash(rows),
            }))
        }
    }

    fn line_cohort(n: usize) -> Cohort {
        let subjects = (0..n)
            .map(|i| {
                let x = i as f64;
                let c = if i % 2 == 0 { Condition::Sham } else { Condition::Cs };
                SubjectRecord::new(vec![Some(x)], c, Some(3.0 * x + 1.0), Some(100.0))
            })
            .collect();
        Cohort::new(vec!["x".into()], subjects).unwrap()
    }

    #[test]
    fn grid_search_prefers_small_alpha_on_clean_line() {
        let cohort = line_cohort(30);
        let rows: Vec<usize> = (0..30).collect();
        let folds = kfold_indices(&rows, 5, 1, &cohort.conditions()).unwrap();
        let res = grid_search_cv(&RidgeEst, &[1e3, 1e-6], &cohort, Target::Weight, &rows, &folds, 7).unwrap();
        assert_eq!(res.best_index, 1);
        assert!(res.table.rows[1].mean_rmse < res.table.rows[0].mean_rmse);
        assert_eq!(res.table.rows[1].rank, Some(1));
        assert!(res.audit.iter().all(AuditEntry::ok));
        assert_eq!(res.audit.len(), 2 * 5 + 1);

        let one = grid_search_cv(&RidgeEst, &[5.0], &cohort, Target::Weight, &rows, &folds, 7).unwrap();
        assert_eq!(one.best_index, 0);

        let tie = grid_search_cv(&RidgeEst, &[1.0, 1.0], &cohort, Target::Weight, &rows, &folds, 7).unwrap();
        assert_eq!(tie.best_index, 0);
        assert_eq!(tie.table.rows[0].mean_rmse, tie.table.rows[1].mean_rmse);
    }

    #[test]
    fn grid_search_excludes_failures() {
        let cohort = line_cohort(20);
        let rows: Vec<usize> = (0..20).collect();
        let folds = kfold_indices(&rows, 4, 1, &cohort.conditions()).unwrap();
        let res = grid_search_cv(&RidgeEst, &[-1.0, 2.0], &cohort, Target::Weight, &rows, &folds, 0).unwrap();
        assert_eq!(res.best_index, 1);
        assert!(res.table.rows[0].error.is_some());
        assert_eq!(res.table.rows[0].rank, None);
        let err = grid_search_cv(&RidgeEst, &[-1.0], &cohort, Target::Weight, &rows, &folds, 0);
        assert!(matches!(err, Err(Error::Harness(_))));
        assert!(matches!(
            grid_search_cv(&RidgeEst, &[], &cohort, Target::Weight, &rows, &folds, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cv_table_csv_layout() {
        let cohort = line_cohort(20);
        let rows: Vec<usize> = (0..20).collect();
        let folds = kfold_indices(&rows, 4, 1, &cohort.conditions()).unwrap();
        let res = grid_search_cv(&RidgeEst, &[0.1, 10.0], &cohort, Target::Weight, &rows, &folds, 0).unwrap();
        let mut buf = Vec::new();
        write_cv_table(&mut buf, &res.table).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "family,fingerprint,config,fold0_rmse,fold1_rmse,fold2_rmse,fold3_rmse,mean_rmse,rank,error"
        );
    }
}
