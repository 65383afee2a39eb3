//! Exact statevector simulation of a Y-rotation re-uploading feature map,
//! fidelity kernels and the three quantum regressors built on them.
//!
//! Amplitudes are indexed with qubit 0 as the most significant bit. The gate
//! set is RY plus CNOT, so every state stays real and amplitudes are stored
//! as `f64`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_map, sym_eigen};
use crate::linmodels::{fit_ridge_with, RidgeModel};
use crate::util::{mean, rng, str_key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entangler {
    Ring,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapConfig {
    pub qubits: usize,
    pub layers: usize,
    pub angle_scale: f64,
    pub entangler: Entangler,
}

impl FeatureMapConfig {
    pub fn new(qubits: usize, layers: usize, angle_scale: f64) -> Self {
        Self {
            qubits,
            layers,
            angle_scale,
            entangler: Entangler::Ring,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits == 0 || self.qubits > 20 {
            return Err(Error::Config(format!("qubits must lie in 1..=20, got {}", self.qubits)));
        }
        if self.layers == 0 {
            return Err(Error::Config("feature map needs at least one layer".into()));
        }
        if !(self.angle_scale > 0.0 && self.angle_scale.is_finite()) {
            return Err(Error::Config(format!("angle scale must be > 0, got {}", self.angle_scale)));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "{:016x}",
            str_key(&format!(
                "q={};L={};s={:e};ent={:?}",
                self.qubits, self.layers, self.angle_scale, self.entangler
            ))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<f64>,
    qubits: usize,
}

impl StateVector {
    pub fn zero(qubits: usize) -> Self {
        let mut amps = vec![0.0; 1 << qubits];
        amps[0] = 1.0;
        Self { amps, qubits }
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amps
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a * a).sum()
    }

    pub fn inner(&self, other: &StateVector) -> f64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a * b).sum()
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.qubits - 1 - qubit)
    }

    pub fn apply_ry(&mut self, qubit: usize, angle: f64) {
        let (s, c) = (0.5 * angle).sin_cos();
        let m = self.mask(qubit);
        for i in 0..self.amps.len() {
            if i & m == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | m]);
                self.amps[i] = c * a0 - s * a1;
                self.amps[i | m] = s * a0 + c * a1;
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let (cm, tm) = (self.mask(control), self.mask(target));
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amps.swap(i, i | tm);
            }
        }
    }

    fn apply_ring(&mut self) {
        if self.qubits < 2 {
            return;
        }
        for j in 0..self.qubits {
            self.apply_cnot(j, (j + 1) % self.qubits);
        }
    }

    /// Pauli-Z expectation on each qubit.
    pub fn z_expectations(&self) -> Vec<f64> {
        (0..self.qubits)
            .map(|j| {
                let m = self.mask(j);
                self.amps
                    .iter()
                    .enumerate()
                    .map(|(i, a)| if i & m == 0 { a * a } else { -a * a })
                    .sum()
            })
            .collect()
    }
}

fn encode_layer(state: &mut StateVector, theta: &[f64], cfg: &FeatureMapConfig) {
    for (j, t) in theta.iter().enumerate() {
        state.apply_ry(j, cfg.angle_scale * t);
    }
    if cfg.entangler == Entangler::Ring {
        state.apply_ring();
    }
}

pub fn build_feature_state(theta: &[f64], cfg: &FeatureMapConfig) -> Result<StateVector> {
    cfg.validate()?;
    crate::error::shape(cfg.qubits, theta.len())?;
    let mut state = StateVector::zero(cfg.qubits);
    for _ in 0..cfg.layers {
        encode_layer(&mut state, theta, cfg);
    }
    Ok(state)
}

pub fn fidelity_kernel(a: &[f64], b: &[f64], cfg: &FeatureMapConfig) -> Result<f64> {
    let sa = build_feature_state(a, cfg)?;
    let sb = build_feature_state(b, cfg)?;
    Ok(sa.inner(&sb).powi(2))
}

fn states(thetas: &[Vec<f64>], cfg: &FeatureMapConfig) -> Result<Vec<StateVector>> {
    thetas.iter().map(|t| build_feature_state(t, cfg)).collect()
}

fn gram_of_states(s: &[StateVector]) -> DMatrix<f64> {
    let n = s.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| s[i].inner(&s[j]).powi(2)).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            k[(i, i + off)] = *v;
            k[(i + off, i)] = *v;
        }
    }
    k
}

fn cross_of_states(a: &[StateVector], b: &[StateVector]) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|sa| b.iter().map(|sb| sa.inner(sb).powi(2)).collect())
        .collect();
    DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterStats {
    pub col_means: Vec<f64>,
    pub grand_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    pub k: DMatrix<f64>,
    pub power: f64,
    pub centered: bool,
    pub stats: Option<CenterStats>,
    pub psd_repaired: bool,
}

/// Raw fidelity Gram matrix, one evaluation per unordered pair.
pub fn gram_matrix(thetas: &[Vec<f64>], cfg: &FeatureMapConfig) -> Result<GramBundle> {
    if thetas.is_empty() {
        return Err(Error::Fit("Gram matrix needs at least one sample".into()));
    }
    Ok(GramBundle {
        k: gram_of_states(&states(thetas, cfg)?),
        power: 1.0,
        centered: false,
        stats: None,
        psd_repaired: false,
    })
}

/// Kernel between every row of `a` and every row of `b`.
pub fn cross_kernel(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &FeatureMapConfig) -> Result<DMatrix<f64>> {
    Ok(cross_of_states(&states(a, cfg)?, &states(b, cfg)?))
}

fn check_power(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("kernel power must lie in (0, 1], got {p}")))
    }
}

/// Entrywise `K^p`. For `p < 1` negative eigenvalues of the result are
/// clamped to zero; the flag reports whether any clamp happened.
pub fn kernel_power(k: &DMatrix<f64>, p: f64) -> Result<(DMatrix<f64>, bool)> {
    check_power(p)?;
    if p == 1.0 {
        return Ok((k.clone(), false));
    }
    let kp = k.map(|v| v.max(0.0).powf(p));
    if kp.nrows() != kp.ncols() {
        return Ok((kp, false));
    }
    let (vals, vecs) = sym_eigen(&kp);
    if vals.iter().all(|v| *v >= 0.0) {
        return Ok((kp, false));
    }
    Ok((spectral_map(&vals, &vecs, |v| v.max(0.0)), true))
}

/// `H K H` with `H = I − 11ᵀ/n`.
pub fn center_gram(k: &DMatrix<f64>) -> (DMatrix<f64>, CenterStats) {
    let n = k.nrows();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).mean()).collect();
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).mean()).collect();
    let grand_mean = mean(&col_means);
    let kc = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand_mean);
    (
        kc,
        CenterStats {
            col_means,
            grand_mean,
        },
    )
}

/// Center a test-versus-train kernel row with training statistics.
pub fn center_test_row(row: &[f64], stats: &CenterStats) -> Result<Vec<f64>> {
    crate::error::shape(stats.col_means.len(), row.len())?;
    let rm = mean(row);
    Ok(row
        .iter()
        .zip(&stats.col_means)
        .map(|(v, c)| v - rm - c + stats.grand_mean)
        .collect())
}

// ---------------------------------------------------------------------------
// Kernel ridge
// ---------------------------------------------------------------------------

/// Dual solve `(K + λI) α = y` by Cholesky.
pub fn qkr_solve(k: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    crate::error::shape(k.nrows(), y.len())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::Numeric(format!(
            "kernel ridge system not positive definite at lambda = {lambda:e}; try a larger lambda"
        ))
    })?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("kernel ridge produced non-finite coefficients".into()));
    }
    Ok(alpha.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QkrParams {
    pub map: FeatureMapConfig,
    pub power: f64,
    pub center: bool,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct QkrModel {
    pub params: QkrParams,
    pub alpha: Vec<f64>,
    pub stats: Option<CenterStats>,
    pub psd_repaired: bool,
    /// Added back to predictions; zero unless the kernel is centered.
    pub y_offset: f64,
    train_states: Vec<StateVector>,
    train_angles: Vec<Vec<f64>>,
}

/// Full kernel ridge on fidelity Grams. When centering is on the targets
/// are centered as well and the train mean is added back at prediction.
pub fn qkr_fit(thetas: &[Vec<f64>], y: &[f64], params: QkrParams) -> Result<QkrModel> {
    crate::error::shape(thetas.len(), y.len())?;
    check_power(params.power)?;
    let train_states = states(thetas, &params.map)?;
    let raw = gram_of_states(&train_states);
    let (k, psd_repaired) = kernel_power(&raw, params.power)?;
    let (k, stats, y_offset) = if params.center {
        let (kc, st) = center_gram(&k);
        (kc, Some(st), mean(y))
    } else {
        (k, None, 0.0)
    };
    let yc: Vec<f64> = y.iter().map(|v| v - y_offset).collect();
    let alpha = qkr_solve(&k, &yc, params.lambda)?;
    Ok(QkrModel {
        params,
        alpha,
        stats,
        psd_repaired,
        y_offset,
        train_states,
        train_angles: thetas.to_vec(),
    })
}

impl QkrModel {
    pub fn train_angles(&self) -> &[Vec<f64>] {
        &self.train_angles
    }

    pub fn predict(&self, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
        let s = states(thetas, &self.params.map)?;
        let cross = cross_of_states(&s, &self.train_states);
        (0..cross.nrows())
            .map(|i| {
                let mut row: Vec<f64> = cross.row(i).iter().map(|v| v.powf(self.params.power)).collect();
                if let Some(st) = &self.stats {
                    row = center_test_row(&row, st)?;
                }
                Ok(self.y_offset + row.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect()
    }
}

pub fn qkr_predict(model: &QkrModel, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(thetas)
}

// ---------------------------------------------------------------------------
// K-means and clustered kernel features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(x, m)))
        .fold((0, f64::INFINITY), |b, (c, d)| if d < b.1 { (c, d) } else { b })
}

/// Seeded k-means++ followed by Lloyd iterations until every center moves
/// less than 1e-10 or 300 iterations. An empty cluster takes the point
/// farthest from its current center.
pub fn kmeans_angles(thetas: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let n = thetas.len();
    if k == 0 {
        return Err(Error::Config("k-means needs at least one cluster".into()));
    }
    if k > n {
        return Err(Error::Config(format!("{k} clusters requested for {n} points")));
    }
    let d = thetas[0].len();
    for t in thetas {
        crate::error::shape(d, t.len())?;
    }
    let mut r = rng(seed);
    let mut chosen = vec![r.gen_range(0..n)];
    let mut d2: Vec<f64> = thetas.iter().map(|t| sq_dist(t, &thetas[chosen[0]])).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(&mut r),
            // all remaining mass is zero (duplicates): take the first unused row
            Err(_) => (0..n).find(|i| !chosen.contains(i)).expect("k <= n"),
        };
        chosen.push(next);
        for (i, t) in thetas.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(t, &thetas[next]));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| thetas[i].clone()).collect();
    let mut labels = vec![0; n];
    let mut iterations = 0;
    while iterations < 300 {
        iterations += 1;
        for (i, t) in thetas.iter().enumerate() {
            labels[i] = nearest(t, &centers).0;
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, sq_dist(&thetas[i], &centers[labels[i]])))
                .fold((usize::MAX, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b })
                .0;
            counts[labels[far]] -= 1;
            labels[far] = empty;
            counts[empty] += 1;
        }
        let mut next = vec![vec![0.0; d]; k];
        for (t, &l) in thetas.iter().zip(&labels) {
            for (a, v) in next[l].iter_mut().zip(t) {
                *a += v;
            }
        }
        for (c, cnt) in next.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *cnt as f64);
        }
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift < 1e-10 {
            break;
        }
    }
    for (i, t) in thetas.iter().enumerate() {
        labels[i] = nearest(t, &centers).0;
    }
    let inertia = thetas.iter().zip(&labels).map(|(t, &l)| sq_dist(t, &centers[l])).sum();
    Ok(KMeansResult {
        centers,
        labels,
        inertia,
        iterations,
    })
}

const WHITEN_FLOOR: f64 = 1e-10;

/// `K^{-1/2}` on the spectrum clipped at 1e-10; clipped directions map to 0.
pub fn inverse_sqrt(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(k);
    spectral_map(&vals, &vecs, |v| if v < WHITEN_FLOOR { 0.0 } else { 1.0 / v.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QkfParams {
    pub map: FeatureMapConfig,
    pub power: f64,
    pub n_centers: usize,
    pub whiten: bool,
    pub lambda: f64,
    pub fit_intercept: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct QkfModel {
    pub params: QkfParams,
    pub centers: Vec<Vec<f64>>,
    pub whitening: Option<DMatrix<f64>>,
    pub head: RidgeModel,
    center_states: Vec<StateVector>,
}

impl QkfModel {
    /// Fidelity to each center, powered and optionally whitened.
    pub fn features(&self, thetas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let s = states(thetas, &self.params.map)?;
        let raw = cross_of_states(&s, &self.center_states).map(|v| v.powf(self.params.power));
        let phi = match &self.whitening {
            Some(w) => raw * w,
            None => raw,
        };
        Ok(crate::linalg::rows_of(&phi))
    }

    pub fn predict(&self, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.head.predict(&self.features(thetas)?)
    }
}

pub fn qkf_features(theta: &[f64], model: &QkfModel) -> Result<Vec<f64>> {
    Ok(model.features(&[theta.to_vec()])?.remove(0))
}

/// Clustered kernel features: k-means centers in angle space, then a ridge
/// head on the (whitened) center similarities.
pub fn qkf_fit(thetas: &[Vec<f64>], y: &[f64], params: QkfParams) -> Result<QkfModel> {
    let km = kmeans_angles(thetas, params.n_centers, params.seed)?;
    qkf_fit_with_centers(km.centers, thetas, y, params)
}

pub fn qkf_fit_with_centers(
    centers: Vec<Vec<f64>>,
    thetas: &[Vec<f64>],
    y: &[f64],
    params: QkfParams,
) -> Result<QkfModel> {
    crate::error::shape(thetas.len(), y.len())?;
    check_power(params.power)?;
    if centers.is_empty() {
        return Err(Error::Config("QKF needs at least one center".into()));
    }
    let center_states = states(&centers, &params.map)?;
    let whitening = if params.whiten {
        let kmm = gram_of_states(&center_states).map(|v| v.powf(params.power));
        Some(inverse_sqrt(&kmm))
    } else {
        None
    };
    let mut model = QkfModel {
        params,
        centers,
        whitening,
        head: RidgeModel {
            weights: Vec::new(),
            intercept: 0.0,
            alpha: params.lambda,
            fit_intercept: params.fit_intercept,
            jittered: false,
        },
        center_states,
    };
    let phi = model.features(thetas)?;
    model.head = fit_ridge_with(&phi, y, params.lambda, params.fit_intercept)?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Variational regressor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqrConfig {
    pub map: FeatureMapConfig,
    pub var_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl VqrConfig {
    pub fn new(map: FeatureMapConfig) -> Self {
        Self {
            map,
            var_layers: 2,
            learning_rate: 0.1,
            epochs: 300,
        }
    }
}

/// Circuit weights, `var_layers` rows of one angle per qubit.
pub type CircuitWeights = Vec<Vec<f64>>;

/// Encoding layers, then per trainable layer: RY(W[l][j]) on every qubit
/// followed by the CNOT ring. Returns per-qubit Z expectations.
pub fn vqr_measurements(theta: &[f64], weights: &CircuitWeights, cfg: &FeatureMapConfig) -> Result<Vec<f64>> {
    let mut state = build_feature_state(theta, cfg)?;
    for layer in weights {
        crate::error::shape(cfg.qubits, layer.len())?;
        for (j, w) in layer.iter().enumerate() {
            state.apply_ry(j, *w);
        }
        if cfg.entangler == Entangler::Ring {
            state.apply_ring();
        }
    }
    Ok(state.z_expectations())
}

/// Jacobian of the measurements with respect to every circuit weight by the
/// ±π/2 parameter-shift rule. Entry `[l * q + j][k]` is `∂m_k/∂W[l][j]`.
pub fn parameter_shift_jacobian(
    theta: &[f64],
    weights: &CircuitWeights,
    cfg: &FeatureMapConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(weights.len() * cfg.qubits);
    let mut w = weights.clone();
    for l in 0..weights.len() {
        for j in 0..cfg.qubits {
            let orig = w[l][j];
            w[l][j] = orig + FRAC_PI_2;
            let plus = vqr_measurements(theta, &w, cfg)?;
            w[l][j] = orig - FRAC_PI_2;
            let minus = vqr_measurements(theta, &w, cfg)?;
            w[l][j] = orig;
            out.push(plus.iter().zip(&minus).map(|(a, b)| 0.5 * (a - b)).collect());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqrModel {
    pub cfg: VqrConfig,
    pub weights: CircuitWeights,
    pub head: RidgeModel,
    /// Training MSE after the head refit at each epoch, plus the final one.
    pub loss_log: Vec<f64>,
    pub seed: u64,
}

fn measure_all(thetas: &[Vec<f64>], w: &CircuitWeights, cfg: &FeatureMapConfig) -> Result<Vec<Vec<f64>>> {
    thetas.par_iter().map(|t| vqr_measurements(t, w, cfg)).collect()
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, v)| (p - v).powi(2)).sum::<f64>() / y.len() as f64
}

fn head_ls(m: &[Vec<f64>], y: &[f64]) -> Result<RidgeModel> {
    fit_ridge_with(m, y, 0.0, true)
}

/// Gradient of the training MSE with respect to the circuit weights at a
/// fixed head, via parameter shift.
pub fn vqr_loss_gradient(
    thetas: &[Vec<f64>],
    y: &[f64],
    weights: &CircuitWeights,
    head: &RidgeModel,
    cfg: &FeatureMapConfig,
) -> Result<Vec<f64>> {
    crate::error::shape(thetas.len(), y.len())?;
    let n = thetas.len() as f64;
    let per_row: Vec<Vec<f64>> = thetas
        .par_iter()
        .zip(y)
        .map(|(t, yi)| {
            let m = vqr_measurements(t, weights, cfg)?;
            let resid = head.predict_row(&m)? - yi;
            let jac = parameter_shift_jacobian(t, weights, cfg)?;
            Ok(jac
                .iter()
                .map(|dm| 2.0 * resid * dm.iter().zip(&head.weights).map(|(a, b)| a * b).sum::<f64>() / n)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; weights.len() * cfg.qubits];
    for row in per_row {
        for (a, b) in g.iter_mut().zip(row) {
            *a += b;
        }
    }
    Ok(g)
}

pub fn vqr_loss(thetas: &[Vec<f64>], y: &[f64], weights: &CircuitWeights, head: &RidgeModel, cfg: &FeatureMapConfig) -> Result<f64> {
    let m = measure_all(thetas, weights, cfg)?;
    Ok(mse(&head.predict(&m)?, y))
}

pub fn init_weights(var_layers: usize, qubits: usize, seed: u64) -> CircuitWeights {
    let mut r = rng(seed);
    let u = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI);
    (0..var_layers)
        .map(|_| (0..qubits).map(|_| u.sample(&mut r)).collect())
        .collect()
}

/// Alternating optimisation: exact least-squares head, then one
/// parameter-shift gradient step on the circuit weights. The best
/// parameters seen are returned, so the final loss never exceeds the
/// initial one.
pub fn vqr_fit(thetas: &[Vec<f64>], y: &[f64], cfg: VqrConfig, seed: u64) -> Result<VqrModel> {
    cfg.map.validate()?;
    crate::error::shape(thetas.len(), y.len())?;
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config(format!("learning rate must be > 0, got {}", cfg.learning_rate)));
    }
    let mut w = init_weights(cfg.var_layers, cfg.map.qubits, seed);
    let mut head = head_ls(&measure_all(thetas, &w, &cfg.map)?, y)?;
    let mut loss = vqr_loss(thetas, y, &w, &head, &cfg.map)?;
    let mut best = (w.clone(), head.clone(), loss);
    let mut loss_log = vec![loss];
    for _ in 0..cfg.epochs {
        let g = vqr_loss_gradient(thetas, y, &w, &head, &cfg.map)?;
        for (l, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v -= cfg.learning_rate * g[l * cfg.map.qubits + j];
            }
        }
        head = head_ls(&measure_all(thetas, &w, &cfg.map)?, y)?;
        loss = vqr_loss(thetas, y, &w, &head, &cfg.map)?;
        loss_log.push(loss);
        if loss < best.2 {
            best = (w.clone(), head.clone(), loss);
        }
    }
    Ok(VqrModel {
        cfg,
        weights: best.0,
        head: best.1,
        loss_log,
        seed,
    })
}

impl VqrModel {
    pub fn predict(&self, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.head.predict(&measure_all(thetas, &self.weights, &self.cfg.map)?)
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_log.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn vqr_predict(model: &VqrModel, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(thetas)
}

/// Gram matrix CSV with a leading `# ` line carrying the map fingerprint.
pub fn write_gram_csv<W: Write>(mut w: W, gram: &GramBundle, cfg: &FeatureMapConfig) -> Result<()> {
    writeln!(
        w,
        "# fingerprint={} qubits={} layers={} scale={} power={} centered={} psd_repaired={}",
        cfg.fingerprint(),
        cfg.qubits,
        cfg.layers,
        cfg.angle_scale,
        gram.power,
        gram.centered,
        gram.psd_repaired
    )?;
    let mut out = csv::Writer::from_writer(w);
    let n = gram.k.ncols();
    let mut header = vec!["row".to_string()];
    header.extend((0..n).map(|j| format!("k{j}")));
    out.write_record(&header)?;
    for i in 0..gram.k.nrows() {
        let mut rec = vec![i.to_string()];
        rec.extend(gram.k.row(i).iter().map(|v| format!("{v:.12e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Powered and optionally centered training Gram, for diagnostics.
pub fn processed_gram(thetas: &[Vec<f64>], cfg: &FeatureMapConfig, power: f64, center: bool) -> Result<GramBundle> {
    let raw = gram_matrix(thetas, cfg)?;
    let (k, psd_repaired) = kernel_power(&raw.k, power)?;
    let (k, stats) = if center {
        let (kc, st) = center_gram(&k);
        (kc, Some(st))
    } else {
        (k, None)
    };
    Ok(GramBundle {
        k,
        power,
        centered: center,
        stats,
        psd_repaired,
    })
}
