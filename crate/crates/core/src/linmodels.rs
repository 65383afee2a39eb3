//! Closed-form ridge regression, the two mean baselines, and the
//! LDA-condition-axis-then-ridge composite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Condition;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, spd_solve};
use crate::util::mean;

const RANK_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub fit_intercept: bool,
    /// Set when the normal equations were singular and 1e-10 jitter was added.
    pub jittered: bool,
}

/// Ridge with an unpenalised intercept (handled by centering `h` and `y`).
pub fn fit_ridge(h: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeModel> {
    fit_ridge_with(h, y, alpha, true)
}

/// Cholesky solve that refuses numerically singular systems: a pivot
/// below `1e-12` of the largest diagonal entry counts as failure.
fn well_posed_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.diagonal().iter().copied().fold(0.0f64, f64::max);
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    if (0..a.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        return None;
    }
    let w = chol.solve(b);
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// Ridge minimising Σ(y - wᵀh - b)² + α‖w‖². Without an intercept `b = 0`
/// and no centering happens.
pub fn fit_ridge_with(h: &[Vec<f64>], y: &[f64], alpha: f64, fit_intercept: bool) -> Result<RidgeModel> {
    let n = h.len();
    crate::error::shape(n, y.len())?;
    if n < 2 {
        return Err(Error::Fit(format!("ridge needs at least 2 rows, got {n}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be finite and >= 0, got {alpha}")));
    }
    let p = h[0].len();
    let x = from_rows(h, p)?;
    let (x_mean, y_mean) = if fit_intercept {
        ((0..p).map(|j| x.column(j).mean()).collect::<Vec<_>>(), mean(y))
    } else {
        (vec![0.0; p], 0.0)
    };
    if p == 0 {
        return Ok(RidgeModel {
            weights: Vec::new(),
            intercept: y_mean,
            alpha,
            fit_intercept,
            jittered: false,
        });
    }
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let xt = xc.transpose();
    let mut gram = &xt * &xc;
    for j in 0..p {
        gram[(j, j)] += alpha;
    }
    let rhs = &xt * &yc;
    let (w, jittered) = match well_posed_solve(&gram, &rhs) {
        Some(w) => (w, false),
        _ => {
            for j in 0..p {
                gram[(j, j)] += RANK_JITTER;
            }
            let w = spd_solve(&gram, &rhs)
                .or_else(|| gram.clone().lu().solve(&rhs))
                .ok_or_else(|| Error::Numeric("ridge normal equations are singular".into()))?;
            log::warn!("ridge normal equations singular at alpha = {alpha}; added jitter");
            (w, true)
        }
    };
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    let weights: Vec<f64> = w.iter().copied().collect();
    if !weights.iter().all(|v| v.is_finite()) || !intercept.is_finite() {
        return Err(Error::Numeric("ridge produced non-finite weights".into()));
    }
    Ok(RidgeModel {
        weights,
        intercept,
        alpha,
        fit_intercept,
        jittered,
    })
}

impl RidgeModel {
    pub fn predict_row(&self, h: &[f64]) -> Result<f64> {
        crate::error::shape(self.weights.len(), h.len())?;
        Ok(self.intercept + self.weights.iter().zip(h).map(|(w, x)| w * x).sum::<f64>())
    }

    pub fn predict(&self, h: &[Vec<f64>]) -> Result<Vec<f64>> {
        h.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

pub fn predict_ridge(model: &RidgeModel, h: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(h)
}

/// Contiguous blocks of a seeded permutation of `0..n`.
pub fn shuffled_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::util::rng(seed));
    let k = k.clamp(1, n.max(1));
    (0..k).map(|f| idx.iter().skip(f).step_by(k).copied().collect()).collect()
}

/// Pick ridge alpha by k-fold mean squared error. Ties keep the earlier
/// grid entry. Returns the chosen alpha and the per-alpha CV errors.
pub fn ridge_cv_alpha(h: &[Vec<f64>], y: &[f64], alphas: &[f64], k: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    if alphas.is_empty() {
        return Err(Error::Config("empty alpha grid".into()));
    }
    crate::error::shape(h.len(), y.len())?;
    if alphas.len() == 1 {
        return Ok((alphas[0], vec![f64::NAN]));
    }
    let folds = shuffled_folds(h.len(), k, seed);
    if folds.len() < 2 || folds.iter().any(|f| h.len() - f.len() < 2) {
        return Err(Error::Fit(format!("cannot run {k}-fold alpha selection on {} rows", h.len())));
    }
    let mut errors = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut sse = 0.0;
        for fold in &folds {
            let mut held = vec![false; h.len()];
            fold.iter().for_each(|&i| held[i] = true);
            let (mut ht, mut yt) = (Vec::new(), Vec::new());
            for i in (0..h.len()).filter(|&i| !held[i]) {
                ht.push(h[i].clone());
                yt.push(y[i]);
            }
            let m = fit_ridge(&ht, &yt, alpha)?;
            for &i in fold {
                sse += (m.predict_row(&h[i])? - y[i]).powi(2);
            }
        }
        errors.push(sse / h.len() as f64);
    }
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    Ok((alphas[best], errors))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalMean {
    pub value: f64,
}

pub fn baseline_global_mean(y: &[f64]) -> Result<GlobalMean> {
    if y.is_empty() {
        return Err(Error::Fit("global-mean baseline needs a nonempty training set".into()));
    }
    Ok(GlobalMean { value: mean(y) })
}

impl GlobalMean {
    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.value; n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMeans {
    pub sham: Option<f64>,
    pub cs: Option<f64>,
}

pub fn baseline_condition_means(y: &[f64], c: &[Condition]) -> Result<ConditionMeans> {
    crate::error::shape(y.len(), c.len())?;
    let group = |cond| -> Option<f64> {
        let v: Vec<f64> = y.iter().zip(c).filter(|(_, &k)| k == cond).map(|(v, _)| *v).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let out = ConditionMeans {
        sham: group(Condition::Sham),
        cs: group(Condition::Cs),
    };
    if out.sham.is_none() && out.cs.is_none() {
        return Err(Error::Fit("condition-means baseline needs training rows".into()));
    }
    Ok(out)
}

impl ConditionMeans {
    pub fn predict(&self, c: &[Condition]) -> Result<Vec<f64>> {
        c.iter()
            .map(|&k| {
                match k {
                    Condition::Sham => self.sham,
                    Condition::Cs => self.cs,
                }
                .ok_or_else(|| {
                    Error::Predict(format!("condition {} was not seen in training", k.label()))
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// LDA condition axis
// ---------------------------------------------------------------------------

pub const DEFAULT_LDA_SHRINKAGE: f64 = 0.05;
const FALLBACK_SHRINKAGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaAxis {
    /// Unit norm, or all zeros when `zero_direction` is set.
    pub direction: Vec<f64>,
    pub class_means: [Vec<f64>; 2],
    pub shrinkage: f64,
    pub zero_direction: bool,
    /// Set when the requested shrinkage left the covariance singular.
    pub shrinkage_raised: bool,
}

/// Fisher direction Σ⁻¹(μ_CS − μ_Sham) with the pooled covariance shrunk
/// toward (tr Σ / p)·I, normalised to unit length.
pub fn fit_lda_axis(x: &[Vec<f64>], c: &[Condition], shrinkage: f64) -> Result<LdaAxis> {
    crate::error::shape(x.len(), c.len())?;
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Config(format!("LDA shrinkage must lie in [0, 1], got {shrinkage}")));
    }
    let p = x.first().map(Vec::len).unwrap_or(0);
    let mut groups: [Vec<&Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (row, k) in x.iter().zip(c) {
        crate::error::shape(p, row.len())?;
        groups[k.code() as usize].push(row);
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Fit("LDA needs at least 2 members in each condition".into()));
    }
    let means: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| (0..p).map(|j| g.iter().map(|r| r[j]).sum::<f64>() / g.len() as f64).collect())
        .collect();
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for (g, mu) in groups.iter().zip(&means) {
        for r in g {
            let d = DVector::from_iterator(p, r.iter().zip(mu).map(|(a, b)| a - b));
            scatter += &d * d.transpose();
        }
    }
    let pooled = scatter / (x.len() as f64 - 2.0);
    let delta = DVector::from_iterator(p, means[1].iter().zip(&means[0]).map(|(a, b)| a - b));
    let class_means = [means[0].clone(), means[1].clone()];

    let zero_axis = |shrinkage, raised| LdaAxis {
        direction: vec![0.0; p],
        class_means: class_means.clone(),
        shrinkage,
        zero_direction: true,
        shrinkage_raised: raised,
    };
    if p == 0 || delta.norm() <= 1e-12 {
        return Ok(zero_axis(shrinkage, false));
    }
    let shrunk = |s: f64| {
        let mut m = &pooled * (1.0 - s);
        let t = pooled.trace() / p as f64;
        for j in 0..p {
            m[(j, j)] += s * t;
        }
        m
    };
    let (dir, used, raised) = match spd_solve(&shrunk(shrinkage), &delta) {
        Some(d) => (d, shrinkage, false),
        None => {
            let s = shrinkage.max(FALLBACK_SHRINKAGE);
            log::warn!("LDA covariance singular at shrinkage {shrinkage}; retrying at {s}");
            match spd_solve(&shrunk(s), &delta) {
                Some(d) => (d, s, true),
                None => return Ok(zero_axis(s, true)),
            }
        }
    };
    let norm = dir.norm();
    if !(norm > 1e-300 && norm.is_finite()) {
        return Ok(zero_axis(used, raised));
    }
    Ok(LdaAxis {
        direction: (dir / norm).iter().copied().collect(),
        class_means,
        shrinkage: used,
        zero_direction: false,
        shrinkage_raised: raised,
    })
}

impl LdaAxis {
    pub fn project(&self, x: &[f64]) -> Result<f64> {
        crate::error::shape(self.direction.len(), x.len())?;
        Ok(self.direction.iter().zip(x).map(|(a, b)| a * b).sum())
    }
}

/// LDA score followed by ridge on the 1-D score. A zero-direction axis
/// falls back to an intercept-only ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaRidge {
    pub axis: LdaAxis,
    pub ridge: RidgeModel,
}

impl LdaRidge {
    pub fn fit(x: &[Vec<f64>], c: &[Condition], y: &[f64], shrinkage: f64, alpha: f64) -> Result<Self> {
        let axis = fit_lda_axis(x, c, shrinkage)?;
        let h: Vec<Vec<f64>> = if axis.zero_direction {
            vec![Vec::new(); x.len()]
        } else {
            x.iter().map(|r| axis.project(r).map(|s| vec![s])).collect::<Result<_>>()?
        };
        let ridge = fit_ridge(&h, y, alpha)?;
        Ok(Self { axis, ridge })
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter()
            .map(|r| {
                if self.axis.zero_direction {
                    self.ridge.predict_row(&[])
                } else {
                    self.ridge.predict_row(&[self.axis.project(r)?])
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn line() -> (Vec<Vec<f64>>, Vec<f64>) {
        (vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.0, 1.0, 2.0])
    }

    #[test]
    fn ridge_interpolates_line() {
        let (h, y) = line();
        let m = fit_ridge(&h, &y, 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn ridge_hand_example() {
        // Sxy = 2, Sxx = 2: w = 2 / (2 + 2) = 0.5, b = 1 - 0.5 = 0.5
        let (h, y) = line();
        let m = fit_ridge(&h, &y, 2.0).unwrap();
        assert!((m.weights[0] - 0.5).abs() < 1e-12);
        assert!((m.intercept - 0.5).abs() < 1e-12);
        assert!((m.predict_row(&[1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(m.predict(&[]).unwrap().is_empty());
        assert!(matches!(m.predict_row(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn ridge_large_alpha_predicts_mean() {
        let (h, y) = line();
        let m = fit_ridge(&h, &y, 1e12).unwrap();
        assert!(m.weights[0].abs() < 1e-10);
        assert!((m.predict_row(&[5.0]).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_rank_deficient_is_jittered() {
        let h = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let m = fit_ridge(&h, &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert!(m.jittered);
        assert!(m.weights.iter().all(|w| w.is_finite()));
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
        let mut r = rng(seed);
        let h: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        let y: Vec<f64> = h
            .iter()
            .map(|row| {
                row.iter().enumerate().map(|(j, v)| (j as f64 - 1.0) * v).sum::<f64>()
                    + 3.0
                    + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut r)
            })
            .collect();
        (h, y, r.gen_range(0.01..10.0))
    }

    fn objective(h: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, alpha: f64) -> f64 {
        let rss: f64 = h
            .iter()
            .zip(y)
            .map(|(r, yi)| (yi - b - r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()).powi(2))
            .sum();
        rss + alpha * w.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn ridge_is_optimal_under_perturbation() {
        let mut r = rng(77);
        for seed in 0..100 {
            let (h, y, alpha) = random_problem(seed, 25, 4);
            let m = fit_ridge(&h, &y, alpha).unwrap();
            let base = objective(&h, &y, &m.weights, m.intercept, alpha);
            for _ in 0..20 {
                let dw: Vec<f64> = (0..4).map(|_| r.gen_range(-1e-3..1e-3)).collect();
                let db: f64 = r.gen_range(-1e-3..1e-3);
                let w: Vec<f64> = m.weights.iter().zip(&dw).map(|(a, b)| a + b).collect();
                assert!(objective(&h, &y, &w, m.intercept + db, alpha) >= base - 1e-9 * base.abs());
            }
        }
    }

    /// Independent route: plain gradient descent on the ridge objective.
    fn gradient_descent(h: &[Vec<f64>], y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
        let p = h[0].len();
        let (mut w, mut b) = (vec![0.0; p], 0.0);
        let n = h.len() as f64;
        let lr = 0.2 / (n + alpha);
        for _ in 0..20_000 {
            let mut gw = vec![0.0; p];
            let mut gb = 0.0;
            for (r, yi) in h.iter().zip(y) {
                let e = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() - yi;
                gb += 2.0 * e;
                for j in 0..p {
                    gw[j] += 2.0 * e * r[j];
                }
            }
            for j in 0..p {
                w[j] -= lr * (gw[j] + 2.0 * alpha * w[j]);
            }
            b -= lr * gb;
        }
        (w, b)
    }

    #[test]
    fn ridge_matches_gradient_descent() {
        for seed in 0..10 {
            let (h, y, alpha) = random_problem(1000 + seed, 30, 3);
            let m = fit_ridge(&h, &y, alpha).unwrap();
            let (w, _) = gradient_descent(&h, &y, alpha);
            let gd_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((m.weight_norm() - gd_norm).abs() < 1e-6);
        }
    }

    #[test]
    fn ridge_shrinkage_is_monotone() {
        let (h, y, _) = random_problem(5, 30, 5);
        let norms: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&a| fit_ridge(&h, &y, a).unwrap().weight_norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[0] >= w[1]), "{norms:?}");
    }

    #[test]
    fn ridge_without_intercept() {
        let m = fit_ridge_with(&[vec![1.0], vec![2.0]], &[2.0, 4.0], 0.0, false).unwrap();
        assert_eq!(m.intercept, 0.0);
        assert!((m.weights[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn baselines() {
        let g = baseline_global_mean(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.predict(2), vec![2.0, 2.0]);
        assert_eq!(baseline_global_mean(&[5.0]).unwrap().value, 5.0);
        assert!(baseline_global_mean(&[]).is_err());

        use Condition::*;
        let cm = baseline_condition_means(&[10.0, 12.0, 6.0, 8.0], &[Sham, Sham, Cs, Cs]).unwrap();
        assert_eq!(cm.predict(&[Sham, Cs]).unwrap(), vec![11.0, 7.0]);
        let one = baseline_condition_means(&[3.0, 9.0], &[Sham, Cs]).unwrap();
        assert_eq!(one.predict(&[Cs, Sham]).unwrap(), vec![9.0, 3.0]);
        let eq = baseline_condition_means(&[1.0, 3.0, 2.0, 2.0], &[Sham, Sham, Cs, Cs]).unwrap();
        assert_eq!(eq.predict(&[Sham]).unwrap()[0], 2.0);
        let sham_only = baseline_condition_means(&[1.0, 2.0], &[Sham, Sham]).unwrap();
        assert!(matches!(sham_only.predict(&[Cs]), Err(Error::Predict(_))));
    }

    fn two_blobs(seed: u64, shift: [f64; 2], scale: [f64; 2]) -> (Vec<Vec<f64>>, Vec<Condition>) {
        let mut r = rng(seed);
        let mut x = Vec::new();
        let mut c = Vec::new();
        for k in 0..60 {
            let cond = if k % 2 == 0 { Condition::Sham } else { Condition::Cs };
            let off = cond.indicator();
            let z: [f64; 2] = [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)];
            x.push(vec![scale[0] * (z[0] + off * shift[0]), scale[1] * (z[1] + off * shift[1])]);
            c.push(cond);
        }
        (x, c)
    }

    #[test]
    fn lda_identity_covariance_direction() {
        // Exact class statistics: identity pooled covariance, Δμ = (2, 0).
        let x = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![3.0, 0.0],
            vec![1.0, 0.0],
            vec![2.0, 1.0],
            vec![2.0, -1.0],
        ];
        use Condition::*;
        let c = vec![Sham, Sham, Sham, Sham, Cs, Cs, Cs, Cs];
        let axis = fit_lda_axis(&x, &c, 0.0).unwrap();
        assert!((axis.direction[0].abs() - 1.0).abs() < 1e-12);
        assert!(axis.direction[1].abs() < 1e-12);
    }

    #[test]
    fn lda_ranking_invariant_to_isotropic_scaling() {
        let (x, c) = two_blobs(3, [2.0, 0.5], [1.0, 1.0]);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 7.5 * v).collect()).collect();
        let a = fit_lda_axis(&x, &c, DEFAULT_LDA_SHRINKAGE).unwrap();
        let b = fit_lda_axis(&scaled, &c, DEFAULT_LDA_SHRINKAGE).unwrap();
        let rank = |axis: &LdaAxis, x: &[Vec<f64>]| {
            let s: Vec<f64> = x.iter().map(|r| axis.project(r).unwrap()).collect();
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
            idx
        };
        assert_eq!(rank(&a, &x), rank(&b, &scaled));
    }

    #[test]
    fn lda_ranking_invariant_to_affine_rescaling_without_shrinkage() {
        let (x, c) = two_blobs(4, [1.5, 1.0], [1.0, 1.0]);
        let tx: Vec<Vec<f64>> = x.iter().map(|r| vec![3.0 * r[0] + 1.0, 0.2 * r[1] - 5.0]).collect();
        let a = fit_lda_axis(&x, &c, 0.0).unwrap();
        let b = fit_lda_axis(&tx, &c, 0.0).unwrap();
        let sa: Vec<f64> = x.iter().map(|r| a.project(r).unwrap()).collect();
        let sb: Vec<f64> = tx.iter().map(|r| b.project(r).unwrap()).collect();
        for i in 0..sa.len() {
            for j in 0..sa.len() {
                if (sa[i] - sa[j]).abs() > 1e-9 {
                    assert_eq!(sa[i] < sa[j], sb[i] < sb[j]);
                }
            }
        }
    }

    #[test]
    fn lda_zero_delta_falls_back_to_intercept() {
        use Condition::*;
        let x = vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]];
        let c = vec![Sham, Sham, Cs, Cs];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let m = LdaRidge::fit(&x, &c, &y, 0.05, 1.0).unwrap();
        assert!(m.axis.zero_direction);
        assert_eq!(m.predict(&[vec![9.0]]).unwrap(), vec![2.5]);
    }

    #[test]
    fn lda_singular_covariance_raises_shrinkage() {
        use Condition::*;
        // second feature constant: pooled covariance singular at zero shrinkage
        let x = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0], vec![3.0, 1.0]];
        let c = vec![Sham, Sham, Cs, Cs];
        let axis = fit_lda_axis(&x, &c, 0.0).unwrap();
        assert!(axis.shrinkage_raised);
        assert_eq!(axis.shrinkage, 0.1);
        assert!((axis.direction.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
