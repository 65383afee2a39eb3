//! SPD descriptors, Stein divergence, log-Euclidean augmentation, PAM
//! prototypes and the distance-feature ridge pipeline.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_map, sym_eigen, symmetrize};
use crate::linmodels::{fit_ridge, ridge_cv_alpha, RidgeModel};
use crate::util::{derive_seed, rng};

pub const DEFAULT_EPS: f64 = 1e-6;
const NORM_DELTA: f64 = 1e-12;
const EIGEN_FLOOR: f64 = 1e-14;
const MAX_SWAP_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Outer,
    LocalCov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Outer,
    LocalCov,
    Synthetic,
}

/// A symmetric positive definite descriptor. Fields are private so that only
/// the constructors in this module can label a matrix's source.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdDescriptor {
    matrix: DMatrix<f64>,
    eps: f64,
    source: Source,
}

impl SpdDescriptor {
    fn new(matrix: DMatrix<f64>, eps: f64, source: Source) -> Self {
        Self {
            matrix: symmetrize(&matrix),
            eps,
            source,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Symmetric to 1e-10 and smallest eigenvalue at least eps/2.
    pub fn check(&self) -> Result<()> {
        let asym = (&self.matrix - self.matrix.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::Numeric(format!("descriptor asymmetric by {asym:e}")));
        }
        let min = crate::linalg::min_eigenvalue(&self.matrix);
        if min < self.eps / 2.0 {
            return Err(Error::Numeric(format!(
                "descriptor min eigenvalue {min:e} below eps/2 = {:e}",
                self.eps / 2.0
            )));
        }
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("descriptor eps must be > 0, got {eps}")))
    }
}

/// `x̃ x̃ᵀ + εI` with `x̃ = x / (‖x‖ + δ)` when normalising.
pub fn outer_descriptor(x: &[f64], normalize: bool, eps: f64) -> Result<SpdDescriptor> {
    check_eps(eps)?;
    let p = x.len();
    let scale = if normalize {
        1.0 / (x.iter().map(|v| v * v).sum::<f64>().sqrt() + NORM_DELTA)
    } else {
        1.0
    };
    let xt: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let m = DMatrix::from_fn(p, p, |i, j| xt[i] * xt[j] + if i == j { eps } else { 0.0 });
    Ok(SpdDescriptor::new(m, eps, Source::Outer))
}

/// Shrunk covariance of the `k_nn` training rows nearest to `x`:
/// `(1 − λ)Σ + λ(tr Σ / p)I + εI`. Σ uses the `k − 1` denominator and
/// distance ties go to the lower row index.
pub fn local_cov_descriptor(
    x: &[f64],
    train_x: &[Vec<f64>],
    k_nn: usize,
    shrinkage: f64,
    eps: f64,
) -> Result<SpdDescriptor> {
    check_eps(eps)?;
    if k_nn < 2 {
        return Err(Error::Config(format!("k_nn must be >= 2, got {k_nn}")));
    }
    if k_nn > train_x.len() {
        return Err(Error::Config(format!(
            "k_nn = {k_nn} exceeds the {} training rows",
            train_x.len()
        )));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Config(format!("shrinkage must lie in [0, 1], got {shrinkage}")));
    }
    let p = x.len();
    let mut dist: Vec<(f64, usize)> = train_x
        .iter()
        .enumerate()
        .map(|(i, r)| {
            crate::error::shape(p, r.len())?;
            Ok((r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
        })
        .collect::<Result<_>>()?;
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nb: Vec<&Vec<f64>> = dist[..k_nn].iter().map(|&(_, i)| &train_x[i]).collect();
    let mu: Vec<f64> = (0..p).map(|j| nb.iter().map(|r| r[j]).sum::<f64>() / k_nn as f64).collect();
    let mut cov = DMatrix::zeros(p, p);
    for r in &nb {
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    cov /= (k_nn - 1) as f64;
    let tr = cov.trace() / p as f64;
    let mut s = cov * (1.0 - shrinkage);
    for i in 0..p {
        s[(i, i)] += shrinkage * tr + eps;
    }
    Ok(SpdDescriptor::new(s, eps, Source::LocalCov))
}

/// Sum of log eigenvalues; any eigenvalue at or below 1e-14 is an error.
pub fn logdet_spd(m: &DMatrix<f64>, name: &str) -> Result<f64> {
    let vals = symmetrize(m).symmetric_eigenvalues();
    let mut s = 0.0;
    for v in vals.iter() {
        if !(*v > EIGEN_FLOOR) {
            return Err(Error::Numeric(format!(
                "matrix {name} is not positive definite (eigenvalue {v:e})"
            )));
        }
        s += v.ln();
    }
    Ok(s)
}

fn stein_with_logdets(a: &DMatrix<f64>, b: &DMatrix<f64>, ld_a: f64, ld_b: f64) -> Result<f64> {
    let mid = (a + b) * 0.5;
    let d = logdet_spd(&mid, "(A+B)/2")? - 0.5 * (ld_a + ld_b);
    Ok(d.max(0.0))
}

/// Stein (Jensen–Bregman LogDet) divergence `logdet((A+B)/2) − ½ logdet(AB)`.
/// Round-off negatives are clamped to zero.
pub fn stein_divergence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    crate::error::shape(a.nrows(), b.nrows())?;
    let ld_a = logdet_spd(a, "A")?;
    let ld_b = logdet_spd(b, "B")?;
    stein_with_logdets(a, b, ld_a, ld_b)
}

pub fn matrix_log(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(s);
    if let Some(v) = vals.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Numeric(format!("matrix log of a matrix with eigenvalue {v:e}")));
    }
    Ok(spectral_map(&vals, &vecs, f64::ln))
}

pub fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    spectral_map(&vals, &vecs, f64::exp)
}

fn interp_logs(la: &DMatrix<f64>, lb: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    matrix_exp(&(la * (1.0 - t) + lb * t))
}

/// Log-Euclidean geodesic `exp((1 − t) log Sa + t log Sb)`.
pub fn loge_interpolate(sa: &SpdDescriptor, sb: &SpdDescriptor, t: f64) -> Result<SpdDescriptor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("interpolation t must lie in [0, 1], got {t}")));
    }
    crate::error::shape(sa.dim(), sb.dim())?;
    let m = interp_logs(&matrix_log(&sa.matrix)?, &matrix_log(&sb.matrix)?, t);
    Ok(SpdDescriptor::new(m, sa.eps.min(sb.eps), Source::Synthetic))
}

/// Descriptors built from training rows only. The clustering pool can only
/// be assembled from this type plus synthetic matrices derived from it.
#[derive(Debug, Clone)]
pub struct TrainDescriptors(Vec<SpdDescriptor>);

impl TrainDescriptors {
    pub fn build(train_x: &[Vec<f64>], cfg: &SpdConfig) -> Result<Self> {
        let d = train_x
            .iter()
            .map(|x| descriptor_for(x, train_x, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(d))
    }

    pub fn as_slice(&self) -> &[SpdDescriptor] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `n_syn` unlabeled interpolants between random distinct training pairs,
/// with `t ~ U(0, 1)`.
pub fn synth_augment(train: &TrainDescriptors, n_syn: usize, seed: u64) -> Result<Vec<SpdDescriptor>> {
    if n_syn == 0 {
        return Ok(Vec::new());
    }
    let m = train.len();
    if m < 2 {
        return Err(Error::Config("augmentation needs at least 2 training descriptors".into()));
    }
    let logs = train
        .0
        .iter()
        .map(|d| matrix_log(&d.matrix))
        .collect::<Result<Vec<_>>>()?;
    let eps = train.0.iter().map(|d| d.eps).fold(f64::INFINITY, f64::min);
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n_syn);
    for _ in 0..n_syn {
        let pair = sample(&mut r, m, 2);
        let (a, b) = (pair.index(0), pair.index(1));
        let t: f64 = r.gen_range(0.0..1.0);
        out.push(SpdDescriptor::new(interp_logs(&logs[a], &logs[b], t), eps, Source::Synthetic));
    }
    Ok(out)
}

/// Clustering pool: training descriptors followed by synthetic ones.
#[derive(Debug, Clone)]
pub struct ClusterPool {
    items: Vec<SpdDescriptor>,
    n_train: usize,
}

impl ClusterPool {
    pub fn new(train: &TrainDescriptors, synthetic: Vec<SpdDescriptor>) -> Result<Self> {
        if let Some(d) = synthetic.iter().find(|d| d.source != Source::Synthetic) {
            return Err(Error::Protocol(format!(
                "only synthetic descriptors may extend the clustering pool, got {:?}",
                d.source
            )));
        }
        let mut items = train.0.clone();
        items.extend(synthetic);
        Ok(Self {
            items,
            n_train: train.len(),
        })
    }

    pub fn items(&self) -> &[SpdDescriptor] {
        &self.items
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_synthetic(&self) -> usize {
        self.items.len() - self.n_train
    }
}

/// Pairwise Stein divergences, rows computed in parallel.
pub fn divergence_matrix(items: &[SpdDescriptor]) -> Result<DMatrix<f64>> {
    let logdets = items
        .iter()
        .enumerate()
        .map(|(i, d)| logdet_spd(&d.matrix, &format!("pool[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let m = items.len();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..m)
                .map(|j| stein_with_logdets(&items[i].matrix, &items[j].matrix, logdets[i], logdets[j]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            let j = i + 1 + off;
            d[(i, j)] = *v;
            d[(j, i)] = *v;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamResult {
    /// Pool indices of the medoids in ascending order.
    pub medoids: Vec<usize>,
    pub objective: f64,
    pub swaps: usize,
}

pub fn pam_objective(d: &DMatrix<f64>, medoids: &[usize]) -> f64 {
    (0..d.nrows())
        .map(|i| medoids.iter().map(|&m| d[(i, m)]).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Partitioning Around Medoids on a precomputed dissimilarity matrix:
/// greedy BUILD followed by best-improvement SWAP passes until no swap
/// lowers the objective or 100 passes have run. Ties go to lower indices.
pub fn pam_medoids(d: &DMatrix<f64>, k: usize) -> Result<PamResult> {
    let m = d.nrows();
    if d.ncols() != m {
        return Err(Error::Shape {
            expected: m,
            got: d.ncols(),
        });
    }
    if k == 0 {
        return Err(Error::Config("number of medoids must be >= 1".into()));
    }
    if k > m {
        return Err(Error::Config(format!("{k} medoids requested from a pool of {m}")));
    }

    // BUILD
    let mut medoids = Vec::with_capacity(k);
    let first = (0..m)
        .map(|j| (0..m).map(|i| d[(i, j)]).sum::<f64>())
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, s)| if s < best.1 { (j, s) } else { best })
        .0;
    medoids.push(first);
    let mut nearest: Vec<f64> = (0..m).map(|i| d[(i, first)]).collect();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for h in (0..m).filter(|h| !medoids.contains(h)) {
            let gain: f64 = (0..m).map(|i| (nearest[i] - d[(i, h)]).max(0.0)).sum();
            if gain > best.1 {
                best = (h, gain);
            }
        }
        medoids.push(best.0);
        for (i, n) in nearest.iter_mut().enumerate() {
            *n = n.min(d[(i, best.0)]);
        }
    }
    medoids.sort_unstable();

    // SWAP
    let mut objective = pam_objective(d, &medoids);
    let mut swaps = 0;
    for _ in 0..MAX_SWAP_ITERS {
        // nearest and second-nearest medoid distances per point
        let (mut d1, mut d2, mut n1) = (vec![f64::INFINITY; m], vec![f64::INFINITY; m], vec![0; m]);
        for i in 0..m {
            for &c in &medoids {
                let v = d[(i, c)];
                if v < d1[i] {
                    d2[i] = d1[i];
                    d1[i] = v;
                    n1[i] = c;
                } else if v < d2[i] {
                    d2[i] = v;
                }
            }
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for (pos, &out) in medoids.iter().enumerate() {
            for h in (0..m).filter(|h| !medoids.contains(h)) {
                let total: f64 = (0..m)
                    .map(|i| {
                        let other = if n1[i] == out { d2[i] } else { d1[i] };
                        other.min(d[(i, h)])
                    })
                    .sum();
                if best.map_or(true, |b| total < b.2) {
                    best = Some((pos, h, total));
                }
            }
        }
        match best {
            Some((pos, h, total)) if total < objective - 1e-12 * objective.abs().max(1e-300) => {
                medoids[pos] = h;
                medoids.sort_unstable();
                objective = pam_objective(d, &medoids);
                swaps += 1;
            }
            _ => break,
        }
    }
    Ok(PamResult {
        medoids,
        objective,
        swaps,
    })
}

pub fn spd_distance_features(s: &SpdDescriptor, medoids: &[SpdDescriptor]) -> Result<Vec<f64>> {
    let ld = logdet_spd(&s.matrix, "sample")?;
    medoids
        .iter()
        .enumerate()
        .map(|(k, c)| {
            crate::error::shape(s.dim(), c.dim())?;
            let lc = logdet_spd(&c.matrix, &format!("medoid[{k}]"))?;
            stein_with_logdets(&s.matrix, &c.matrix, ld, lc)
        })
        .collect()
}

/// Size of the synthetic pool extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynSize {
    Count(usize),
    /// Multiple of the number of training descriptors, rounded.
    PerTrain(f64),
}

impl SynSize {
    pub fn resolve(self, n_train: usize) -> usize {
        match self {
            SynSize::Count(n) => n,
            SynSize::PerTrain(f) => (f * n_train as f64).round().max(0.0) as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdConfig {
    pub kind: DescriptorKind,
    pub normalize: bool,
    pub eps: f64,
    pub k_nn: usize,
    pub shrinkage: f64,
    /// Number of medoids; 0 disables the distance block entirely.
    pub k_medoids: usize,
    pub n_synthetic: SynSize,
    pub seed: u64,
}

impl Default for SpdConfig {
    fn default() -> Self {
        Self {
            kind: DescriptorKind::Outer,
            normalize: true,
            eps: DEFAULT_EPS,
            k_nn: 8,
            shrinkage: 0.1,
            k_medoids: 3,
            n_synthetic: SynSize::Count(0),
            seed: 0,
        }
    }
}

impl SpdConfig {
    pub fn validate(&self) -> Result<()> {
        check_eps(self.eps)?;
        if self.kind == DescriptorKind::LocalCov {
            if self.k_nn < 2 {
                return Err(Error::Config(format!("k_nn must be >= 2, got {}", self.k_nn)));
            }
            if !(0.0..=1.0).contains(&self.shrinkage) {
                return Err(Error::Config(format!("shrinkage must lie in [0, 1], got {}", self.shrinkage)));
            }
        }
        if let SynSize::PerTrain(f) = self.n_synthetic {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("synthetic multiple must be >= 0, got {f}")));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let syn = match self.n_synthetic {
            SynSize::Count(n) => format!("{n}"),
            SynSize::PerTrain(f) => format!("{f}x"),
        };
        match self.kind {
            DescriptorKind::Outer => format!(
                "outer K={} norm={} syn={syn}",
                self.k_medoids,
                if self.normalize { "on" } else { "off" }
            ),
            DescriptorKind::LocalCov => format!(
                "local_cov K={} k={} shrink={} syn={syn}",
                self.k_medoids, self.k_nn, self.shrinkage
            ),
        }
    }
}

fn descriptor_for(x: &[f64], train_x: &[Vec<f64>], cfg: &SpdConfig) -> Result<SpdDescriptor> {
    match cfg.kind {
        DescriptorKind::Outer => outer_descriptor(x, cfg.normalize, cfg.eps),
        DescriptorKind::LocalCov => local_cov_descriptor(x, train_x, cfg.k_nn, cfg.shrinkage, cfg.eps),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidSet {
    pub pool_indices: Vec<usize>,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub objective: f64,
    pub seed: u64,
}

/// Ridge on `[x, d(x)]` where `d` holds Stein divergences to pool medoids.
#[derive(Debug, Clone)]
pub struct SpdModel {
    pub cfg: SpdConfig,
    train_x: Vec<Vec<f64>>,
    prototypes: Vec<SpdDescriptor>,
    pub medoids: Option<MedoidSet>,
    pub ridge: RidgeModel,
    pub alpha_cv_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdFitOptions<'a> {
    pub alphas: &'a [f64],
    pub inner_folds: usize,
    /// Write the pool divergence matrix and medoid indices here when set.
    pub dump: Option<&'a std::path::Path>,
}

pub fn spd_pipeline_fit(x: &[Vec<f64>], y: &[f64], cfg: &SpdConfig, opts: &SpdFitOptions) -> Result<SpdModel> {
    cfg.validate()?;
    crate::error::shape(x.len(), y.len())?;
    let (prototypes, medoids) = if cfg.k_medoids == 0 {
        (Vec::new(), None)
    } else {
        let train = TrainDescriptors::build(x, cfg)?;
        let n_syn = cfg.n_synthetic.resolve(train.len());
        let syn = synth_augment(&train, n_syn, derive_seed(cfg.seed, &[1]))?;
        let pool = ClusterPool::new(&train, syn)?;
        let div = divergence_matrix(pool.items())?;
        let pam = pam_medoids(&div, cfg.k_medoids)?;
        if let Some(path) = opts.dump {
            write_divergence_csv(std::fs::File::create(path)?, &div, &pam.medoids)?;
        }
        let protos = pam.medoids.iter().map(|&i| pool.items()[i].clone()).collect();
        let set = MedoidSet {
            pool_indices: pam.medoids,
            n_train: pool.n_train(),
            n_synthetic: pool.n_synthetic(),
            objective: pam.objective,
            seed: cfg.seed,
        };
        (protos, Some(set))
    };
    let mut model = SpdModel {
        cfg: cfg.clone(),
        train_x: x.to_vec(),
        prototypes,
        medoids,
        ridge: RidgeModel {
            weights: Vec::new(),
            intercept: 0.0,
            alpha: 0.0,
            fit_intercept: true,
            jittered: false,
        },
        alpha_cv_errors: Vec::new(),
    };
    let h = model.features(x)?;
    let (alpha, errs) = ridge_cv_alpha(&h, y, opts.alphas, opts.inner_folds, derive_seed(cfg.seed, &[2]))?;
    model.ridge = fit_ridge(&h, y, alpha)?;
    model.alpha_cv_errors = errs;
    Ok(model)
}

impl SpdModel {
    pub fn prototypes(&self) -> &[SpdDescriptor] {
        &self.prototypes
    }

    /// Augmented rows `[x, d]`. Descriptors of new rows only ever see the
    /// stored training rows and prototypes.
    pub fn features(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        x.iter()
            .map(|row| {
                let mut h = row.clone();
                if !self.prototypes.is_empty() {
                    let s = descriptor_for(row, &self.train_x, &self.cfg)?;
                    h.extend(spd_distance_features(&s, &self.prototypes)?);
                }
                Ok(h)
            })
            .collect()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.ridge.predict(&self.features(x)?)
    }
}

/// CSV with one row per pool element: index, medoid flag, then divergences.
pub fn write_divergence_csv<W: Write>(w: W, d: &DMatrix<f64>, medoids: &[usize]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["index".to_string(), "medoid".to_string()];
    header.extend((0..d.ncols()).map(|j| format!("d{j}")));
    out.write_record(&header)?;
    for i in 0..d.nrows() {
        let mut rec = vec![i.to_string(), u8::from(medoids.contains(&i)).to_string()];
        rec.extend(d.row(i).iter().map(|v| format!("{v:.12e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
