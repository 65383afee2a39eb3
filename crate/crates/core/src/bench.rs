//! Benchmark orchestration: run configuration, model families, report
//! assembly and rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic_cohort, load_cohort, make_split_plan, Cohort, ColumnSpec, Condition, DataSource,
    GenProfile, SplitPlan, Target,
};
use crate::error::{Error, Result};
use crate::eval::{
    fit_screening_threshold, fmt_num, grid_search_cv, regression_metrics, screening_metrics, write_cv_table,
    AuditEntry, CvTable, Estimator, FittedModel, RegressionMetrics, ScreeningMetrics, ScreeningSpec,
};
use crate::linmodels::{fit_ridge, log_grid, ConditionMeans, LdaRidge, RidgeModel};
use crate::preprocess::{rank_by_correlation, FittedPipeline, PipelineSpec};
use crate::qkernel::{
    qkf_fit, qkr_fit, vqr_fit, FeatureMapConfig, QkfModel, QkfParams, QkrModel, QkrParams, VqrConfig, VqrModel,
};
use crate::spd::{spd_pipeline_fit, DescriptorKind, SpdConfig, SpdFitOptions, SpdModel, SynSize};
use crate::trees::{fit_cart, fit_random_forest, ForestModel, ForestParams, RegressionTree};
use crate::util::{derive_seed, index_hash, str_key};

pub const DEFAULT_COMPACT: [&str; 3] = ["crp", "balf_neutrophils", "balf_total"];

// ---------------------------------------------------------------------------
// Budgets and families
// ---------------------------------------------------------------------------

/// Which columns a model may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Every biomarker plus condition.
    Full,
    /// Every biomarker, composites, condition and condition interactions.
    Engineered,
    Compact3Condition,
    Compact3,
}

impl Budget {
    pub fn label(self) -> &'static str {
        match self {
            Budget::Full => "full",
            Budget::Engineered => "engineered",
            Budget::Compact3Condition => "compact-3+condition",
            Budget::Compact3 => "compact-3",
        }
    }

    pub fn spec(self, all_features: &[String], compact: &[String]) -> PipelineSpec {
        match self {
            Budget::Full => PipelineSpec::tabular(all_features.to_vec(), true),
            Budget::Engineered => PipelineSpec {
                engineered: true,
                interactions: true,
                ..PipelineSpec::tabular(all_features.to_vec(), true)
            },
            Budget::Compact3Condition => PipelineSpec::tabular(compact.to_vec(), true),
            Budget::Compact3 => PipelineSpec::tabular(compact.to_vec(), false),
        }
    }
}

/// Model families in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GlobalMean,
    ConditionMeans,
    LdaRidgeRaw,
    RidgeRaw,
    ForestRaw,
    TreeRaw,
    LdaRidgeEng,
    RidgeEng,
    ForestEng,
    TreeEng,
    SpdBaseline,
    SpdOuter,
    AngleRidge,
    QkrFull,
    QkfCluster,
    Vqr,
}

impl Family {
    pub const ALL: [Family; 16] = [
        Family::GlobalMean,
        Family::ConditionMeans,
        Family::LdaRidgeRaw,
        Family::RidgeRaw,
        Family::ForestRaw,
        Family::TreeRaw,
        Family::LdaRidgeEng,
        Family::RidgeEng,
        Family::ForestEng,
        Family::TreeEng,
        Family::SpdBaseline,
        Family::SpdOuter,
        Family::AngleRidge,
        Family::QkrFull,
        Family::QkfCluster,
        Family::Vqr,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Family::GlobalMean => "global_mean",
            Family::ConditionMeans => "condition_means",
            Family::LdaRidgeRaw => "lda_ridge_raw",
            Family::RidgeRaw => "ridge_raw",
            Family::ForestRaw => "forest_raw",
            Family::TreeRaw => "tree_raw",
            Family::LdaRidgeEng => "lda_ridge_eng",
            Family::RidgeEng => "ridge_eng",
            Family::ForestEng => "forest_eng",
            Family::TreeEng => "tree_eng",
            Family::SpdBaseline => "spd_baseline",
            Family::SpdOuter => "spd_outer",
            Family::AngleRidge => "angle_ridge",
            Family::QkrFull => "qkr_full",
            Family::QkfCluster => "qkf_cluster",
            Family::Vqr => "vqr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::GlobalMean => "Global mean baseline",
            Family::ConditionMeans => "Condition means baseline",
            Family::LdaRidgeRaw | Family::LdaRidgeEng => "LDA condition axis then Ridge",
            Family::RidgeRaw | Family::RidgeEng => "Ridge",
            Family::ForestRaw | Family::ForestEng => "Random forest",
            Family::TreeRaw | Family::TreeEng => "Shallow decision tree",
            Family::SpdBaseline => "Ridge baseline (biomarkers only)",
            Family::SpdOuter => "Ridge + SPD distances (outer-product; best)",
            Family::AngleRidge => "Angle-space Ridge",
            Family::QkrFull => "QKR-full",
            Family::QkfCluster => "QKF-cluster (Nystrom)",
            Family::Vqr => "VQR",
        }
    }

    pub fn group(self) -> &'static str {
        match self {
            Family::GlobalMean | Family::ConditionMeans => "baselines",
            Family::LdaRidgeRaw | Family::RidgeRaw | Family::ForestRaw | Family::TreeRaw => "classical_raw",
            Family::LdaRidgeEng | Family::RidgeEng | Family::ForestEng | Family::TreeEng => "classical_engineered",
            Family::SpdBaseline | Family::SpdOuter => "spd",
            Family::AngleRidge | Family::QkrFull | Family::QkfCluster | Family::Vqr => "quantum",
        }
    }

    fn is_spd(self) -> bool {
        matches!(self, Family::SpdBaseline | Family::SpdOuter)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family '{s}'")))
    }
}

/// Sorted, deduplicated family list.
pub fn parse_families(list: &str) -> Result<Vec<Family>> {
    if list.trim() == "all" {
        return Ok(Family::ALL.to_vec());
    }
    let set: BTreeSet<Family> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Family::from_str)
        .collect::<Result<_>>()?;
    Ok(set.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    /// CSV file; when absent a synthetic cohort is generated.
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub profile: GenProfile,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            path: None,
            schema: None,
            n: 213,
            seed: 0,
            profile: GenProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub k_folds: usize,
    /// Defaults to the run seed.
    pub split_seed: Option<u64>,
    /// Defaults to a seed derived from the run seed.
    pub cv_seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            k_folds: 5,
            split_seed: None,
            cv_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub raw: Budget,
    pub engineered: Budget,
    pub spd: Budget,
    pub quantum: Budget,
    /// The three compact biomarkers.
    pub compact: Vec<String>,
    /// Rank candidates by train-split correlation instead of using `compact`.
    pub compact_auto: bool,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            raw: Budget::Full,
            engineered: Budget::Engineered,
            spd: Budget::Compact3,
            quantum: Budget::Compact3Condition,
            compact: DEFAULT_COMPACT.iter().map(|s| s.to_string()).collect(),
            compact_auto: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinGrid {
    pub alphas: Vec<f64>,
    pub lda_shrinkage: Vec<f64>,
}

impl Default for LinGrid {
    fn default() -> Self {
        Self {
            alphas: log_grid(1e-3, 1e3, 13),
            lda_shrinkage: vec![0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeGrid {
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<usize>,
    pub forest_trees: usize,
    pub forest_min_leaf: Vec<usize>,
    pub forest_max_depth: Option<usize>,
}

impl Default for TreeGrid {
    fn default() -> Self {
        Self {
            max_depth: vec![2, 3],
            min_leaf: vec![3, 5],
            forest_trees: 300,
            forest_min_leaf: vec![2, 5],
            forest_max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdGrid {
    pub k_medoids: Vec<usize>,
    pub normalize: Vec<bool>,
    /// Synthetic pool size as a multiple of the training count.
    pub synthetic: Vec<f64>,
    pub eps: f64,
    pub alphas: Vec<f64>,
    pub inner_folds: usize,
}

impl Default for SpdGrid {
    fn default() -> Self {
        Self {
            k_medoids: vec![2, 3, 4, 6],
            normalize: vec![true, false],
            synthetic: vec![0.0, 2.0],
            eps: crate::spd::DEFAULT_EPS,
            alphas: log_grid(1e-3, 1e3, 7),
            inner_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumGrid {
    pub qubits: Vec<usize>,
    pub layers: Vec<usize>,
    pub scales: Vec<f64>,
    pub powers: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub qkf_centers: Vec<usize>,
    pub whiten: bool,
    pub qkr_center: bool,
    pub angle_interval: (f64, f64),
    pub angle_alphas: Vec<f64>,
}

impl Default for QuantumGrid {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        Self {
            qubits: vec![3, 4],
            layers: vec![1, 2, 3],
            scales: vec![0.5, 1.0, 2.0],
            powers: vec![0.5, 1.0],
            lambdas: log_grid(1e-3, 10.0, 5),
            qkf_centers: vec![3, 5, 8],
            whiten: true,
            qkr_center: true,
            angle_interval: (-h, h),
            angle_alphas: log_grid(1e-3, 1e3, 13),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqrGrid {
    pub qubits: Vec<usize>,
    pub layers: Vec<usize>,
    pub scales: Vec<f64>,
    pub var_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for VqrGrid {
    fn default() -> Self {
        Self {
            qubits: vec![3, 4],
            layers: vec![1],
            scales: vec![1.0],
            var_layers: 2,
            learning_rate: 0.1,
            epochs: 300,
        }
    }
}

/// One row of an SPD ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationEntry {
    pub key: String,
    pub label: String,
    pub kind: DescriptorKind,
    pub k_medoids: Vec<usize>,
    #[serde(default = "default_normalize")]
    pub normalize: Vec<bool>,
    #[serde(default = "default_no_synthetic")]
    pub synthetic: Vec<f64>,
    #[serde(default = "default_k_nn")]
    pub k_nn: usize,
    #[serde(default = "default_local_shrinkage")]
    pub shrinkage: f64,
}

fn default_normalize() -> Vec<bool> {
    vec![true]
}
fn default_no_synthetic() -> Vec<f64> {
    vec![0.0]
}
fn default_k_nn() -> usize {
    8
}
fn default_local_shrinkage() -> f64 {
    0.1
}

/// The four standard ablation rows.
pub fn default_ablation() -> Vec<AblationEntry> {
    let entry = |key: &str, label: &str, kind, k: Vec<usize>, normalize: Vec<bool>| AblationEntry {
        key: key.into(),
        label: label.into(),
        kind,
        k_medoids: k,
        normalize,
        synthetic: vec![0.0],
        k_nn: 8,
        shrinkage: 0.1,
    };
    vec![
        entry(
            Family::SpdBaseline.key(),
            Family::SpdBaseline.label(),
            DescriptorKind::Outer,
            vec![0],
            vec![true],
        ),
        entry(
            "spd_outer_k3",
            "Ridge + SPD distances (outer-product, K=3, no synthetic)",
            DescriptorKind::Outer,
            vec![3],
            vec![true],
        ),
        entry(
            Family::SpdOuter.key(),
            "Ridge + SPD distances (outer-product; best, no synthetic)",
            DescriptorKind::Outer,
            vec![2, 3, 4, 6],
            vec![true, false],
        ),
        entry(
            "spd_local_k6",
            "Ridge + SPD distances (local covariance, K=6, k=8, no synthetic)",
            DescriptorKind::LocalCov,
            vec![6],
            vec![true],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub targets: Vec<Target>,
    pub families: Vec<Family>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub cohort: CohortConfig,
    pub split: SplitConfig,
    pub screening: ScreeningSpec,
    pub budgets: BudgetConfig,
    pub linmodels: LinGrid,
    pub trees: TreeGrid,
    pub spd: SpdGrid,
    pub qkernel: QuantumGrid,
    pub vqr: VqrGrid,
    pub ablation: Vec<AblationEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            targets: vec![Target::Weight],
            families: Family::ALL.to_vec(),
            seed: 0,
            out_dir: PathBuf::from("results"),
            svg: true,
            cohort: CohortConfig::default(),
            split: SplitConfig::default(),
            screening: ScreeningSpec::default(),
            budgets: BudgetConfig::default(),
            linmodels: LinGrid::default(),
            trees: TreeGrid::default(),
            spd: SpdGrid::default(),
            qkernel: QuantumGrid::default(),
            vqr: VqrGrid::default(),
            ablation: default_ablation(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.split_seed.unwrap_or(self.seed)
    }

    pub fn cv_seed(&self) -> u64 {
        self.split.cv_seed.unwrap_or_else(|| derive_seed(self.seed, &[str_key("cv")]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("no model families enabled".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no targets selected".into()));
        }
        if !self.budgets.compact_auto && self.budgets.compact.len() != 3 {
            return Err(Error::Config(format!(
                "compact budget must name exactly three biomarkers, got {}",
                self.budgets.compact.len()
            )));
        }
        let distinct: BTreeSet<&String> = self.budgets.compact.iter().collect();
        if distinct.len() != self.budgets.compact.len() {
            return Err(Error::Config("compact budget lists a biomarker twice".into()));
        }
        if !(self.screening.kappa > 0.0 && self.screening.kappa.is_finite()) {
            return Err(Error::Config(format!("screening kappa must be > 0, got {}", self.screening.kappa)));
        }
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("grid '{name}' is empty")))
            } else {
                Ok(())
            }
        };
        empty("linmodels.alphas", self.linmodels.alphas.len())?;
        empty("linmodels.lda_shrinkage", self.linmodels.lda_shrinkage.len())?;
        empty("trees.max_depth", self.trees.max_depth.len())?;
        empty("trees.min_leaf", self.trees.min_leaf.len())?;
        empty("trees.forest_min_leaf", self.trees.forest_min_leaf.len())?;
        empty("spd.k_medoids", self.spd.k_medoids.len())?;
        empty("spd.normalize", self.spd.normalize.len())?;
        empty("spd.synthetic", self.spd.synthetic.len())?;
        empty("spd.alphas", self.spd.alphas.len())?;
        empty("qkernel.qubits", self.qkernel.qubits.len())?;
        empty("qkernel.layers", self.qkernel.layers.len())?;
        empty("qkernel.scales", self.qkernel.scales.len())?;
        empty("qkernel.powers", self.qkernel.powers.len())?;
        empty("qkernel.lambdas", self.qkernel.lambdas.len())?;
        empty("qkernel.qkf_centers", self.qkernel.qkf_centers.len())?;
        empty("qkernel.angle_alphas", self.qkernel.angle_alphas.len())?;
        empty("vqr.qubits", self.vqr.qubits.len())?;
        empty("vqr.layers", self.vqr.layers.len())?;
        empty("vqr.scales", self.vqr.scales.len())?;
        if self.trees.forest_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        let (lo, hi) = self.qkernel.angle_interval;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!("angle interval [{lo}, {hi}] is not increasing")));
        }
        Ok(())
    }
}

/// Load the configured cohort file or generate the synthetic one.
pub fn load_data(cfg: &CohortConfig) -> Result<Cohort> {
    match &cfg.path {
        Some(path) => {
            let schema = match &cfg.schema {
                Some(s) => ColumnSpec::from_path(s)?,
                None => ColumnSpec::default(),
            };
            load_cohort(path, &schema)
        }
        None => generate_synthetic_cohort(cfg.n, cfg.seed, &cfg.profile),
    }
}

// ---------------------------------------------------------------------------
// Model configurations and the family estimator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    GlobalMean,
    ConditionMeans,
    LdaRidge { shrinkage: f64, alpha: f64 },
    Ridge { alpha: f64 },
    Forest { n_trees: usize, min_leaf: usize, max_depth: Option<usize> },
    Tree { max_depth: usize, min_leaf: usize },
    Spd(SpdConfig),
    AngleRidge { qubits: usize, alpha: f64 },
    Qkr { map: FeatureMapConfig, power: f64, lambda: f64, center: bool },
    Qkf { map: FeatureMapConfig, power: f64, centers: usize, lambda: f64, whiten: bool },
    Vqr(VqrConfig),
}

impl ModelConfig {
    pub fn describe(&self) -> String {
        match self {
            ModelConfig::GlobalMean | ModelConfig::ConditionMeans => "-".into(),
            ModelConfig::LdaRidge { shrinkage, alpha } => format!("shrinkage={shrinkage} alpha={alpha:.3e}"),
            ModelConfig::Ridge { alpha } => format!("alpha={alpha:.3e}"),
            ModelConfig::Forest {
                n_trees,
                min_leaf,
                max_depth,
            } => format!(
                "trees={n_trees} min_leaf={min_leaf} max_depth={}",
                max_depth.map_or("none".to_string(), |d| d.to_string())
            ),
            ModelConfig::Tree { max_depth, min_leaf } => format!("max_depth={max_depth} min_leaf={min_leaf}"),
            ModelConfig::Spd(c) if c.k_medoids == 0 => "K=0".into(),
            ModelConfig::Spd(c) => c.label(),
            ModelConfig::AngleRidge { qubits, alpha } => format!("q={qubits} alpha={alpha:.3e}"),
            ModelConfig::Qkr {
                map,
                power,
                lambda,
                center,
            } => format!(
                "q={} L={} s={} p={power} lambda={lambda:.3e} center={}",
                map.qubits,
                map.layers,
                map.angle_scale,
                if *center { "on" } else { "off" }
            ),
            ModelConfig::Qkf {
                map,
                power,
                centers,
                lambda,
                whiten,
            } => format!(
                "q={} L={} s={} p={power} m={centers} lambda={lambda:.3e} whiten={}",
                map.qubits,
                map.layers,
                map.angle_scale,
                if *whiten { "on" } else { "off" }
            ),
            ModelConfig::Vqr(v) => format!(
                "q={} L={} s={} var_layers={} lr={} epochs={}",
                v.map.qubits, v.map.layers, v.map.angle_scale, v.var_layers, v.learning_rate, v.epochs
            ),
        }
    }

    fn qubits(&self) -> Option<usize> {
        match self {
            ModelConfig::AngleRidge { qubits, .. } => Some(*qubits),
            ModelConfig::Qkr { map, .. } | ModelConfig::Qkf { map, .. } => Some(map.qubits),
            ModelConfig::Vqr(v) => Some(v.map.qubits),
            _ => None,
        }
    }
}

/// One model family bound to its input pipeline.
pub struct FamilyEstimator {
    pub family: Family,
    pub spec: PipelineSpec,
    pub angle_interval: (f64, f64),
    pub spd_alphas: Vec<f64>,
    pub spd_inner_folds: usize,
}

enum Trained {
    Ridge(RidgeModel),
    LdaRidge(LdaRidge),
    Forest(ForestModel),
    Tree(RegressionTree),
    Spd(SpdModel),
    Qkr(QkrModel),
    Qkf(QkfModel),
    Vqr(VqrModel),
}

impl Trained {
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Trained::Ridge(m) => m.predict(x),
            Trained::LdaRidge(m) => m.predict(x),
            Trained::Forest(m) => m.predict(x),
            Trained::Tree(m) => m.predict(x),
            Trained::Spd(m) => m.predict(x),
            Trained::Qkr(m) => m.predict(x),
            Trained::Qkf(m) => m.predict(x),
            Trained::Vqr(m) => m.predict(x),
        }
    }
}

struct PipelineModel {
    pipeline: FittedPipeline,
    model: Trained,
}

impl FittedModel for PipelineModel {
    fn predict(&self, data: &dyn DataSource, rows: &[usize]) -> Result<Vec<f64>> {
        let x = self.pipeline.transform(data, rows)?;
        let t = self.pipeline.target_transform();
        Ok(self.model.predict(&x)?.into_iter().map(|v| t.inverse(v)).collect())
    }

    fn fit_hash(&self) -> &str {
        &self.pipeline.fit_hash
    }
}

enum Baseline {
    Constant(f64),
    ByCondition(ConditionMeans),
}

struct BaselineModel {
    model: Baseline,
    fit_hash: String,
}

impl FittedModel for BaselineModel {
    fn predict(&self, data: &dyn DataSource, rows: &[usize]) -> Result<Vec<f64>> {
        match &self.model {
            Baseline::Constant(m) => Ok(vec![*m; rows.len()]),
            Baseline::ByCondition(m) => m.predict(&data.conditions(rows)),
        }
    }

    fn fit_hash(&self) -> &str {
        &self.fit_hash
    }
}

impl FamilyEstimator {
    fn pipeline_for(&self, cfg: &ModelConfig) -> PipelineSpec {
        let mut spec = self.spec.clone();
        if let ModelConfig::LdaRidge { .. } = cfg {
            // the axis is learned from biomarkers; the condition is its label
            spec.include_condition = false;
            spec.interactions = false;
        }
        if let Some(q) = cfg.qubits() {
            spec.pca = Some(q);
            spec.angle_interval = Some(self.angle_interval);
        }
        spec
    }
}

impl Estimator for FamilyEstimator {
    type Config = ModelConfig;

    fn name(&self) -> &str {
        self.family.key()
    }

    fn describe(&self, cfg: &ModelConfig) -> String {
        cfg.describe()
    }

    fn fit(
        &self,
        cfg: &ModelConfig,
        data: &dyn DataSource,
        target: Target,
        rows: &[usize],
        seed: u64,
    ) -> Result<Box<dyn FittedModel>> {
        match cfg {
            ModelConfig::GlobalMean => {
                let y = data.targets(rows, target)?;
                let m = crate::linmodels::baseline_global_mean(&y)?;
                return Ok(Box::new(BaselineModel {
                    model: Baseline::Constant(m.value),
                    fit_hash: index_hash(rows),
                }));
            }
            ModelConfig::ConditionMeans => {
                let y = data.targets(rows, target)?;
                let m = crate::linmodels::baseline_condition_means(&y, &data.conditions(rows))?;
                return Ok(Box::new(BaselineModel {
                    model: Baseline::ByCondition(m),
                    fit_hash: index_hash(rows),
                }));
            }
            _ => {}
        }
        let spec = self.pipeline_for(cfg);
        let pipeline = FittedPipeline::fit(&spec, data, rows)?;
        let x = pipeline.transform(data, rows)?;
        let y = pipeline.target_transform().forward_all(&data.targets(rows, target)?)?;
        let model = match cfg {
            ModelConfig::GlobalMean | ModelConfig::ConditionMeans => unreachable!(),
            ModelConfig::LdaRidge { shrinkage, alpha } => {
                Trained::LdaRidge(LdaRidge::fit(&x, &data.conditions(rows), &y, *shrinkage, *alpha)?)
            }
            ModelConfig::Ridge { alpha } | ModelConfig::AngleRidge { alpha, .. } => {
                Trained::Ridge(fit_ridge(&x, &y, *alpha)?)
            }
            ModelConfig::Forest {
                n_trees,
                min_leaf,
                max_depth,
            } => {
                let p = pipeline.output_dim();
                let params = ForestParams {
                    n_trees: *n_trees,
                    mtry: p.div_ceil(3).max(1),
                    max_depth: *max_depth,
                    min_leaf: *min_leaf,
                    bootstrap: true,
                };
                Trained::Forest(fit_random_forest(&x, &y, params, seed)?)
            }
            ModelConfig::Tree { max_depth, min_leaf } => Trained::Tree(fit_cart(&x, &y, Some(*max_depth), *min_leaf)?),
            ModelConfig::Spd(c) => {
                let c = SpdConfig { seed, ..c.clone() };
                let opts = SpdFitOptions {
                    alphas: &self.spd_alphas,
                    inner_folds: self.spd_inner_folds,
                    dump: None,
                };
                Trained::Spd(spd_pipeline_fit(&x, &y, &c, &opts)?)
            }
            ModelConfig::Qkr {
                map,
                power,
                lambda,
                center,
            } => Trained::Qkr(qkr_fit(
                &x,
                &y,
                QkrParams {
                    map: *map,
                    power: *power,
                    center: *center,
                    lambda: *lambda,
                },
            )?),
            ModelConfig::Qkf {
                map,
                power,
                centers,
                lambda,
                whiten,
            } => Trained::Qkf(qkf_fit(
                &x,
                &y,
                QkfParams {
                    map: *map,
                    power: *power,
                    n_centers: *centers,
                    whiten: *whiten,
                    lambda: *lambda,
                    fit_intercept: true,
                    seed,
                },
            )?),
            ModelConfig::Vqr(v) => Trained::Vqr(vqr_fit(&x, &y, *v, seed)?),
        };
        Ok(Box::new(PipelineModel { pipeline, model }))
    }
}

fn spd_grid(g: &SpdGrid) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for &k in &g.k_medoids {
        for &normalize in &g.normalize {
            for &syn in &g.synthetic {
                out.push(ModelConfig::Spd(SpdConfig {
                    kind: DescriptorKind::Outer,
                    normalize,
                    eps: g.eps,
                    k_medoids: k,
                    n_synthetic: syn_size(syn),
                    ..SpdConfig::default()
                }));
            }
        }
    }
    out
}

fn syn_size(multiple: f64) -> SynSize {
    if multiple == 0.0 {
        SynSize::Count(0)
    } else {
        SynSize::PerTrain(multiple)
    }
}

fn maps(qubits: &[usize], layers: &[usize], scales: &[f64]) -> Vec<FeatureMapConfig> {
    let mut out = Vec::new();
    for &q in qubits {
        for &l in layers {
            for &s in scales {
                out.push(FeatureMapConfig::new(q, l, s));
            }
        }
    }
    out
}

/// Hyperparameter grid of a family in a fixed order.
pub fn family_grid(family: Family, cfg: &RunConfig) -> Vec<ModelConfig> {
    let lin = &cfg.linmodels;
    let tr = &cfg.trees;
    let qk = &cfg.qkernel;
    match family {
        Family::GlobalMean => vec![ModelConfig::GlobalMean],
        Family::ConditionMeans => vec![ModelConfig::ConditionMeans],
        Family::LdaRidgeRaw | Family::LdaRidgeEng => lin
            .lda_shrinkage
            .iter()
            .flat_map(|&s| lin.alphas.iter().map(move |&a| ModelConfig::LdaRidge { shrinkage: s, alpha: a }))
            .collect(),
        Family::RidgeRaw | Family::RidgeEng => lin.alphas.iter().map(|&a| ModelConfig::Ridge { alpha: a }).collect(),
        Family::ForestRaw | Family::ForestEng => tr
            .forest_min_leaf
            .iter()
            .map(|&m| ModelConfig::Forest {
                n_trees: tr.forest_trees,
                min_leaf: m,
                max_depth: tr.forest_max_depth,
            })
            .collect(),
        Family::TreeRaw | Family::TreeEng => tr
            .max_depth
            .iter()
            .flat_map(|&d| tr.min_leaf.iter().map(move |&m| ModelConfig::Tree { max_depth: d, min_leaf: m }))
            .collect(),
        Family::SpdBaseline => vec![ModelConfig::Spd(SpdConfig {
            k_medoids: 0,
            eps: cfg.spd.eps,
            ..SpdConfig::default()
        })],
        Family::SpdOuter => spd_grid(&cfg.spd),
        Family::AngleRidge => qk
            .qubits
            .iter()
            .flat_map(|&q| qk.angle_alphas.iter().map(move |&a| ModelConfig::AngleRidge { qubits: q, alpha: a }))
            .collect(),
        Family::QkrFull => {
            let mut out = Vec::new();
            for map in maps(&qk.qubits, &qk.layers, &qk.scales) {
                for &power in &qk.powers {
                    for &lambda in &qk.lambdas {
                        out.push(ModelConfig::Qkr {
                            map,
                            power,
                            lambda,
                            center: qk.qkr_center,
                        });
                    }
                }
            }
            out
        }
        Family::QkfCluster => {
            let mut out = Vec::new();
            for map in maps(&qk.qubits, &qk.layers, &qk.scales) {
                for &power in &qk.powers {
                    for &centers in &qk.qkf_centers {
                        for &lambda in &qk.lambdas {
                            out.push(ModelConfig::Qkf {
                                map,
                                power,
                                centers,
                                lambda,
                                whiten: qk.whiten,
                            });
                        }
                    }
                }
            }
            out
        }
        Family::Vqr => maps(&cfg.vqr.qubits, &cfg.vqr.layers, &cfg.vqr.scales)
            .into_iter()
            .map(|map| {
                ModelConfig::Vqr(VqrConfig {
                    map,
                    var_layers: cfg.vqr.var_layers,
                    learning_rate: cfg.vqr.learning_rate,
                    epochs: cfg.vqr.epochs,
                })
            })
            .collect(),
    }
}

fn family_budget(family: Family, b: &BudgetConfig) -> Option<Budget> {
    match family.group() {
        "baselines" => None,
        "classical_raw" => Some(b.raw),
        "classical_engineered" => Some(b.engineered),
        "spd" => Some(b.spd),
        _ => Some(b.quantum),
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub key: String,
    pub model: String,
    pub group: String,
    pub budget: String,
    pub status: RowStatus,
    pub error: Option<String>,
    pub metrics: Option<RegressionMetrics>,
    pub screening: Option<ScreeningMetrics>,
    pub config: String,
    /// Mean CV RMSE of the selected configuration.
    pub cv_rmse: f64,
    pub seed: u64,
    pub split_hash: String,
    pub tau: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub key: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// "benchmark" or "ablation".
    pub kind: String,
    pub target: Target,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub split_hash: String,
    pub train_hash: String,
    pub tau: f64,
    pub screening: ScreeningSpec,
    pub seed: u64,
    pub split_seed: u64,
    pub cv_seed: u64,
    pub compact: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub audit: Vec<AuditEntry>,
    pub cv_tables: Vec<CvTable>,
    /// Wall-clock seconds per row; kept out of the deterministic outputs.
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

impl EvalReport {
    pub fn row(&self, key: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn audit_violations(&self) -> Vec<&AuditEntry> {
        self.audit.iter().filter(|a| !a.ok()).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Split, threshold and compact budget shared by every row of a run.
pub struct Protocol {
    pub plan: SplitPlan,
    pub tau: f64,
    pub compact: Vec<String>,
    pub n_rows: usize,
}

/// Rows that carry a value for `target`, the split plan over them, the
/// screening threshold from Sham training targets, and the compact budget.
pub fn prepare_protocol(cfg: &RunConfig, data: &dyn DataSource, target: Target) -> Result<Protocol> {
    cfg.validate()?;
    let rows: Vec<usize> = (0..data.n_subjects())
        .filter(|&r| data.target(r, target).is_some())
        .collect();
    if rows.is_empty() {
        return Err(Error::Config(format!("cohort has no values for target {target}")));
    }
    let all: Vec<usize> = (0..data.n_subjects()).collect();
    let conds: Vec<Condition> = data.conditions(&all);
    let plan = make_split_plan(
        &rows,
        &conds,
        cfg.split.test_fraction,
        cfg.split.k_folds,
        cfg.split_seed(),
        cfg.cv_seed(),
    )?;
    let y_train = data.targets(&plan.train_idx, target)?;
    let c_train = data.conditions(&plan.train_idx);
    let tau = fit_screening_threshold(&y_train, &c_train, &cfg.screening)?;

    let compact = if cfg.budgets.compact_auto {
        rank_by_correlation(data, &plan.train_idx, &y_train, data.feature_names(), 3)?
    } else {
        cfg.budgets.compact.clone()
    };
    if compact.len() != 3 {
        return Err(Error::Config(format!(
            "compact budget must name exactly three biomarkers, got {}",
            compact.len()
        )));
    }
    for name in &compact {
        if !data.has_feature(name) {
            return Err(Error::Config(format!("compact biomarker '{name}' is not a cohort column")));
        }
    }
    Ok(Protocol {
        plan,
        tau,
        compact,
        n_rows: rows.len(),
    })
}

struct Outcome {
    row: ReportRow,
    table: Option<CvTable>,
    audit: Vec<AuditEntry>,
    seconds: f64,
}

struct RowJob {
    key: String,
    label: String,
    group: String,
    budget: Option<Budget>,
    estimator: FamilyEstimator,
    grid: Vec<ModelConfig>,
}

fn run_job(job: &RowJob, data: &dyn DataSource, target: Target, proto: &Protocol, cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let seed = derive_seed(cfg.seed, &[str_key(&job.key)]);
    let mut row = ReportRow {
        key: job.key.clone(),
        model: job.label.clone(),
        group: job.group.clone(),
        budget: job.budget.map_or("condition".into(), |b| b.label().into()),
        status: RowStatus::Failed,
        error: None,
        metrics: None,
        screening: None,
        config: String::new(),
        cv_rmse: f64::NAN,
        seed,
        split_hash: proto.plan.split_hash(),
        tau: proto.tau,
        n_test: proto.plan.test_idx.len(),
    };
    let plan = &proto.plan;
    let result = grid_search_cv(&job.estimator, &job.grid, data, target, &plan.train_idx, &plan.folds, seed);
    let (table, audit) = match result {
        Ok(gs) => {
            row.config = gs.table.rows[gs.best_index].config.clone();
            row.cv_rmse = gs.table.rows[gs.best_index].mean_rmse;
            let scored = gs.model.predict(data, &plan.test_idx).and_then(|yhat| {
                let y = data.targets(&plan.test_idx, target)?;
                Ok((
                    regression_metrics(&y, &yhat)?,
                    screening_metrics(&y, &yhat, proto.tau, cfg.screening.positive)?,
                ))
            });
            match scored {
                Ok((m, s)) => {
                    row.status = RowStatus::Ok;
                    row.metrics = Some(m);
                    row.screening = Some(s);
                }
                Err(e) => row.error = Some(format!("test evaluation: {e}")),
            }
            (Some(gs.table), gs.audit)
        }
        Err(e) => {
            log::warn!("{}: {e}", job.key);
            row.error = Some(e.to_string());
            (None, Vec::new())
        }
    };
    Outcome {
        row,
        table,
        audit,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn assemble(kind: &str, cfg: &RunConfig, target: Target, proto: &Protocol, outcomes: Vec<Outcome>) -> EvalReport {
    let mut report = EvalReport {
        kind: kind.into(),
        target,
        n_rows: proto.n_rows,
        n_train: proto.plan.train_idx.len(),
        n_test: proto.plan.test_idx.len(),
        split_hash: proto.plan.split_hash(),
        train_hash: proto.plan.train_hash(),
        tau: proto.tau,
        screening: cfg.screening,
        seed: cfg.seed,
        split_seed: cfg.split_seed(),
        cv_seed: cfg.cv_seed(),
        compact: proto.compact.clone(),
        rows: Vec::new(),
        audit: Vec::new(),
        cv_tables: Vec::new(),
        timings: Vec::new(),
    };
    for o in outcomes {
        report.timings.push(Timing {
            key: o.row.key.clone(),
            seconds: o.seconds,
        });
        report.rows.push(o.row);
        report.audit.extend(o.audit);
        report.cv_tables.extend(o.table);
    }
    report
}

fn estimator(family: Family, spec: PipelineSpec, cfg: &RunConfig) -> FamilyEstimator {
    FamilyEstimator {
        family,
        spec,
        angle_interval: cfg.qkernel.angle_interval,
        spd_alphas: cfg.spd.alphas.clone(),
        spd_inner_folds: cfg.spd.inner_folds,
    }
}

/// Hold-out benchmark of every enabled family on one target. Rows come
/// out in family order whatever order the config lists them in.
pub fn run_benchmark(cfg: &RunConfig, data: &dyn DataSource, target: Target) -> Result<EvalReport> {
    let proto = prepare_protocol(cfg, data, target)?;
    let families: BTreeSet<Family> = cfg.families.iter().copied().collect();
    let jobs: Vec<RowJob> = families
        .into_iter()
        .map(|f| {
            let budget = family_budget(f, &cfg.budgets);
            let spec = budget
                .unwrap_or(Budget::Compact3Condition)
                .spec(data.feature_names(), &proto.compact);
            RowJob {
                key: f.key().into(),
                label: f.label().into(),
                group: f.group().into(),
                budget,
                estimator: estimator(f, spec, cfg),
                grid: family_grid(f, cfg),
            }
        })
        .collect();
    let outcomes: Vec<Outcome> = jobs.par_iter().map(|j| run_job(j, data, target, &proto, cfg)).collect();
    Ok(assemble("benchmark", cfg, target, &proto, outcomes))
}

/// SPD ablation: one row per entry, each tuned over its own grid on the
/// benchmark's split and threshold.
pub fn run_ablation(
    cfg: &RunConfig,
    data: &dyn DataSource,
    target: Target,
    entries: &[AblationEntry],
) -> Result<EvalReport> {
    if !cfg.families.iter().any(|f| f.is_spd()) {
        return Err(Error::Config("ablation requires an SPD family to be enabled".into()));
    }
    if entries.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let proto = prepare_protocol(cfg, data, target)?;
    let spec = cfg.budgets.spd.spec(data.feature_names(), &proto.compact);
    let jobs: Vec<RowJob> = entries
        .iter()
        .map(|e| {
            let mut grid = Vec::new();
            for &k in &e.k_medoids {
                for &normalize in &e.normalize {
                    for &syn in &e.synthetic {
                        grid.push(ModelConfig::Spd(SpdConfig {
                            kind: e.kind,
                            normalize,
                            eps: cfg.spd.eps,
                            k_nn: e.k_nn,
                            shrinkage: e.shrinkage,
                            k_medoids: k,
                            n_synthetic: syn_size(syn),
                            seed: 0,
                        }));
                    }
                }
            }
            RowJob {
                key: e.key.clone(),
                label: e.label.clone(),
                group: "spd".into(),
                budget: Some(cfg.budgets.spd),
                estimator: estimator(Family::SpdOuter, spec.clone(), cfg),
                grid,
            }
        })
        .collect();
    let outcomes: Vec<Outcome> = jobs.par_iter().map(|j| run_job(j, data, target, &proto, cfg)).collect();
    Ok(assemble("ablation", cfg, target, &proto, outcomes))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub svg: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self { svg: true }
    }
}

const CSV_HEADER: [&str; 24] = [
    "target",
    "group",
    "key",
    "model",
    "budget",
    "status",
    "rmse",
    "pct_rmse",
    "mae",
    "pct_mae",
    "r2",
    "roc_auc",
    "f1_macro",
    "f1_weighted",
    "precision_macro",
    "recall_macro",
    "balanced_accuracy",
    "cv_rmse",
    "n_test",
    "tau",
    "split_hash",
    "seed",
    "config",
    "error",
];

fn metric_cells(row: &ReportRow) -> Vec<String> {
    let nan = f64::NAN;
    let m = row.metrics.unwrap_or(RegressionMetrics {
        rmse: nan,
        mae: nan,
        r2: nan,
        pct_rmse: nan,
        pct_mae: nan,
    });
    let s = row.screening.unwrap_or(ScreeningMetrics {
        roc_auc: nan,
        f1_macro: nan,
        f1_weighted: nan,
        precision_macro: nan,
        recall_macro: nan,
        balanced_accuracy: nan,
    });
    [
        m.rmse,
        m.pct_rmse,
        m.mae,
        m.pct_mae,
        m.r2,
        s.roc_auc,
        s.f1_macro,
        s.f1_weighted,
        s.precision_macro,
        s.recall_macro,
        s.balanced_accuracy,
        row.cv_rmse,
    ]
    .iter()
    .map(|v| fmt_num(*v))
    .collect()
}

pub fn write_report_csv<W: std::io::Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in &report.rows {
        let mut rec = vec![
            report.target.column().to_string(),
            r.group.clone(),
            r.key.clone(),
            r.model.clone(),
            r.budget.clone(),
            match r.status {
                RowStatus::Ok => "ok".into(),
                RowStatus::Failed => "failed".into(),
            },
        ];
        rec.extend(metric_cells(r));
        rec.extend([
            r.n_test.to_string(),
            fmt_num(r.tau),
            r.split_hash.clone(),
            r.seed.to_string(),
            r.config.clone(),
            r.error.clone().unwrap_or_default(),
        ]);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn short(v: f64, digits: usize) -> String {
    if v.is_nan() {
        "--".into()
    } else {
        format!("{v:.digits$}")
    }
}

/// Aligned plain-text table.
pub fn render_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "target: {} ({})", report.target.column(), report.target.unit());
    let _ = writeln!(
        s,
        "rows: {}  train: {}  test: {}  split: {}  tau: {}",
        report.n_rows,
        report.n_train,
        report.n_test,
        report.split_hash,
        fmt_num(report.tau)
    );
    let _ = writeln!(s, "compact budget: {}", report.compact.join(", "));
    let _ = writeln!(s);
    let header = ["model", "budget", "RMSE", "%RMSE", "MAE", "R2", "ROC-AUC", "F1-macro", "BalAcc", "config"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    let mut group = String::new();
    let mut group_rows = Vec::new();
    for r in &report.rows {
        if r.group != group {
            group = r.group.clone();
            group_rows.push(cells.len());
        }
        let (m, sc) = (r.metrics, r.screening);
        let mut line = vec![r.model.clone(), r.budget.clone()];
        match (m, sc) {
            (Some(m), Some(sc)) => line.extend([
                short(m.rmse, 4),
                short(m.pct_rmse, 2),
                short(m.mae, 4),
                short(m.r2, 4),
                short(sc.roc_auc, 4),
                short(sc.f1_macro, 4),
                short(sc.balanced_accuracy, 4),
                r.config.clone(),
            ]),
            _ => {
                line.extend((0..7).map(|_| "--".to_string()));
                line.push(format!("FAILED: {}", r.error.as_deref().unwrap_or("unknown")));
            }
        }
        cells.push(line);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| cells.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let last = header.len() - 1;
    for (i, line) in cells.iter().enumerate() {
        if group_rows.contains(&i) {
            let g = &report.rows[i - 1].group;
            let _ = writeln!(s, "[{g}]");
        }
        let mut out = String::new();
        for (j, c) in line.iter().enumerate() {
            let pad = widths[j] - c.chars().count();
            if j == last {
                out.push_str(c);
            } else if j < 2 {
                out.push_str(c);
                out.push_str(&" ".repeat(pad + 2));
            } else {
                out.push_str(&" ".repeat(pad));
                out.push_str(c);
                out.push_str("  ");
            }
        }
        let _ = writeln!(s, "{}", out.trim_end());
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * last;
            let _ = writeln!(s, "{}", "-".repeat(total));
        }
    }
    s
}

/// Bar-chart data: model, RMSE, ROC-AUC in report order.
pub fn write_chart_csv<W: std::io::Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "model", "group", "rmse", "roc_auc"])?;
    for r in &report.rows {
        out.write_record([
            r.key.clone(),
            r.model.clone(),
            r.group.clone(),
            fmt_num(r.metrics.map_or(f64::NAN, |m| m.rmse)),
            fmt_num(r.screening.map_or(f64::NAN, |s| s.roc_auc)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal RMSE bars with ROC-AUC printed alongside.
pub fn render_svg(report: &EvalReport) -> String {
    let bar_h = 18.0;
    let gap = 6.0;
    let left = 330.0;
    let width = 420.0;
    let top = 40.0;
    let max = report
        .rows
        .iter()
        .filter_map(|r| r.metrics.map(|m| m.rmse))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let height = top + report.rows.len() as f64 * (bar_h + gap) + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        left + width + 120.0
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="22" font-size="14">Test RMSE ({}) and ROC-AUC, {}</text>"#,
        xml_escape(report.target.unit()),
        xml_escape(report.target.column())
    );
    for (i, r) in report.rows.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{} [{}]</text>"#,
            left - 8.0,
            y + 13.0,
            xml_escape(&r.model),
            xml_escape(&r.budget)
        );
        match r.metrics {
            Some(m) if m.rmse.is_finite() && max > 0.0 => {
                let w = width * m.rmse / max;
                let auc = r.screening.map_or(f64::NAN, |s| s.roc_auc);
                let _ = writeln!(
                    s,
                    r##"<rect x="{left}" y="{y:.1}" width="{w:.1}" height="{bar_h}" fill="#4a78a8"/>"##
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}">{} | AUC {}</text>"#,
                    left + w + 6.0,
                    y + 13.0,
                    short(m.rmse, 3),
                    short(auc, 3)
                );
            }
            _ => {
                let _ = writeln!(s, r#"<text x="{left}" y="{:.1}">failed</text>"#, y + 13.0);
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_audit_csv<W: std::io::Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["family", "stage", "expected", "recorded", "ok"])?;
    for a in &report.audit {
        out.write_record([
            a.family.as_str(),
            a.stage.as_str(),
            a.expected.as_str(),
            a.recorded.as_str(),
            if a.ok() { "true" } else { "false" },
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn file_stem(report: &EvalReport) -> String {
    format!("{}_{}", report.target.column(), report.kind)
}

/// Write every artifact of a report into `dir` and return the paths
/// written. Wall times go to a separate file so the others stay
/// byte-identical across runs.
pub fn emit_report(report: &EvalReport, dir: &Path, formats: Formats) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Config("refusing to emit an empty report".into()));
    }
    fs::create_dir_all(dir)?;
    let stem = file_stem(report);
    let mut written = Vec::new();
    let mut path = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    write_report_csv(fs::File::create(path(format!("{stem}.csv")))?, report)?;
    fs::write(path(format!("{stem}.txt")), render_text(report))?;
    write_chart_csv(fs::File::create(path(format!("{stem}_chart.csv")))?, report)?;
    if formats.svg {
        fs::write(path(format!("{stem}_chart.svg")), render_svg(report))?;
    }
    write_audit_csv(fs::File::create(path(format!("{stem}_audit.csv")))?, report)?;
    let mut cv = Vec::new();
    for t in &report.cv_tables {
        write_cv_table(&mut cv, t)?;
    }
    fs::write(path(format!("{stem}_cv.csv")), cv)?;
    fs::write(path(format!("{stem}.toml")), report.to_toml()?)?;

    let mut f = fs::File::create(path(format!("{stem}_timings.csv")))?;
    writeln!(f, "key,seconds")?;
    for t in &report.timings {
        writeln!(f, "{},{:.3}", t.key, t.seconds)?;
    }
    Ok(written)
}

/// Reload a report saved by [`emit_report`].
pub fn load_report(path: &Path) -> Result<EvalReport> {
    EvalReport::from_toml(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        RunConfig {
            families: vec![Family::GlobalMean, Family::ConditionMeans],
            cohort: CohortConfig {
                n: 213,
                seed: 3,
                ..CohortConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn families_round_trip_and_order() {
        for f in Family::ALL {
            assert_eq!(f.key().parse::<Family>().unwrap(), f);
        }
        let parsed = parse_families("vqr, global_mean,ridge_raw,vqr").unwrap();
        assert_eq!(parsed, vec![Family::GlobalMean, Family::RidgeRaw, Family::Vqr]);
        assert!(parse_families("nope").is_err());
        let mut sorted = Family::ALL.to_vec();
        sorted.sort();
        assert_eq!(sorted, Family::ALL.to_vec());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let partial = RunConfig::from_toml("seed = 9\n[trees]\nmax_depth = [2]\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.trees.max_depth, vec![2]);
        assert_eq!(partial.trees.min_leaf, vec![3, 5]);
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn compact_budget_must_have_three_names() {
        let mut cfg = RunConfig::default();
        cfg.budgets.compact.pop();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn two_baseline_report() {
        let cfg = small_config();
        let data = load_data(&cfg.cohort).unwrap();
        let rep = run_benchmark(&cfg, &data, Target::Weight).unwrap();
        assert_eq!(rep.rows.len(), 2);
        let gm = rep.row("global_mean").unwrap();
        assert_eq!(gm.screening.unwrap().roc_auc, 0.5);
        assert!(rep.audit_violations().is_empty());
        assert_eq!(rep.n_test, 43);
    }

    #[test]
    fn missing_compact_column_is_config_error() {
        let mut cfg = small_config();
        cfg.budgets.compact = vec!["crp".into(), "balf_total".into(), "nope".into()];
        let data = load_data(&cfg.cohort).unwrap();
        assert!(matches!(run_benchmark(&cfg, &data, Target::Weight), Err(Error::Config(_))));
    }

    #[test]
    fn report_toml_round_trip_and_text() {
        let cfg = small_config();
        let data = load_data(&cfg.cohort).unwrap();
        let rep = run_benchmark(&cfg, &data, Target::Force).unwrap();
        let back = EvalReport::from_toml(&rep.to_toml().unwrap()).unwrap();
        assert_eq!(back.rows, rep.rows);
        let text = render_text(&rep);
        assert!(text.contains("Condition means baseline"));
        let svg = render_svg(&rep);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn ablation_requires_spd_family() {
        let cfg = small_config();
        let data = load_data(&cfg.cohort).unwrap();
        let err = run_ablation(&cfg, &data, Target::Weight, &default_ablation());
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
