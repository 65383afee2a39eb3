//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! to stderr (uncaptured) and then asserts.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use qspd_bench::bench::{emit_report, load_data, run_benchmark, EvalReport, Family, Formats, RunConfig};
use qspd_bench::data::{generate_synthetic_cohort, make_split_plan, Condition, GenProfile, Target};
use qspd_bench::eval::roc_auc;
use qspd_bench::linmodels::fit_ridge;
use qspd_bench::preprocess::{estimate_yj_lambda, yj_transform};
use qspd_bench::qkernel::{
    fidelity_kernel, gram_matrix, parameter_shift_jacobian, qkf_fit_with_centers, qkr_fit, vqr_loss,
    vqr_loss_gradient, vqr_measurements, FeatureMapConfig, QkfParams, QkrParams,
};
use qspd_bench::linmodels::RidgeModel;
use qspd_bench::spd::{pam_medoids, pam_objective, stein_divergence};
use qspd_bench::util::rng;

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn random_spd(r: &mut impl Rng, p: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(p, p, |_, _| Distribution::<f64>::sample(&StandardNormal, r));
    &b * b.transpose() + DMatrix::identity(p, p) * 0.1
}

fn random_angles(r: &mut impl Rng, n: usize, q: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..q).map(|_| r.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect())
        .collect()
}

#[test]
fn c01_stein_divergence() {
    let start = Instant::now();
    let eye = DMatrix::<f64>::identity(2, 2);
    let d = stein_divergence(&eye, &(&eye * 3.0)).unwrap();
    let closed = (4.0f64 / 3.0).ln();
    let mut worst_sym = 0.0f64;
    let mut worst_self = 0.0f64;
    let mut r = rng(101);
    for i in 0..200 {
        let p = 1 + i % 6;
        let a = random_spd(&mut r, p);
        let b = random_spd(&mut r, p);
        let ab = stein_divergence(&a, &b).unwrap();
        let ba = stein_divergence(&b, &a).unwrap();
        worst_sym = worst_sym.max((ab - ba).abs());
        worst_self = worst_self.max(stein_divergence(&a, &a).unwrap().abs());
    }
    let elapsed = start.elapsed();
    let ok = (d - closed).abs() <= 1e-12 && worst_sym <= 1e-10 && worst_self <= 1e-10 && elapsed < Duration::from_secs(1);
    verdict(
        1,
        ok,
        &format!(
            "|D-ln(4/3)|={:.2e} sym={worst_sym:.2e} self={worst_self:.2e} in {elapsed:?}",
            (d - closed).abs()
        ),
    );
}

#[test]
fn c02_single_qubit_kernel() {
    let start = Instant::now();
    let cfg = FeatureMapConfig::new(1, 1, 1.0);
    let grid: Vec<f64> = (0..50).map(|i| -3.0 + 6.0 * i as f64 / 49.0).collect();
    let mut worst = 0.0f64;
    for &a in &grid {
        for &b in &grid {
            let k = fidelity_kernel(&[a], &[b], &cfg).unwrap();
            worst = worst.max((k - ((a - b) / 2.0).cos().powi(2)).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        &format!("max error {worst:.2e} in {elapsed:?}"),
    );
}

#[test]
fn c03_gram_psd() {
    let start = Instant::now();
    let mut r = rng(103);
    let mut min_eig = f64::INFINITY;
    for t in 0..20 {
        let cfg = FeatureMapConfig::new(4, 1 + t % 3, 1.0);
        let thetas = random_angles(&mut r, 40, 4);
        let k = gram_matrix(&thetas, &cfg).unwrap().k;
        let e = SymmetricEigen::new(k).eigenvalues.min();
        min_eig = min_eig.min(e);
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        min_eig >= -1e-8 && elapsed < Duration::from_secs(10),
        &format!("min eigenvalue {min_eig:.3e} in {elapsed:?}"),
    );
}

#[test]
fn c04_nystrom_identity() {
    let start = Instant::now();
    let mut r = rng(104);
    let train = random_angles(&mut r, 20, 3);
    let test = random_angles(&mut r, 15, 3);
    let y: Vec<f64> = train.iter().map(|t| t[0].sin() + 0.3 * t[1] * t[2]).collect();
    let map = FeatureMapConfig::new(3, 2, 1.0);
    let mut worst = 0.0f64;
    for lambda in [1e-3, 1e-1] {
        let full = qkr_fit(&train, &y, QkrParams { map, power: 1.0, center: false, lambda }).unwrap();
        let params = QkfParams {
            map,
            power: 1.0,
            n_centers: train.len(),
            whiten: true,
            lambda,
            fit_intercept: false,
            seed: 0,
        };
        let nys = qkf_fit_with_centers(train.clone(), &train, &y, params).unwrap();
        for rows in [&train, &test] {
            let a = full.predict(rows).unwrap();
            let b = nys.predict(rows).unwrap();
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        worst <= 1e-6 && elapsed < Duration::from_secs(5),
        &format!("max |QKR - QKF| {worst:.2e} in {elapsed:?}"),
    );
}

/// Exhaustive k-medoids optimum over all subsets of size k.
fn exhaustive_optimum(d: &DMatrix<f64>, k: usize) -> f64 {
    let m = d.nrows();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        best = best.min(pam_objective(d, &set));
    }
    best
}

#[test]
fn c05_pam_matches_exhaustive() {
    let start = Instant::now();
    let mut r = rng(105);
    let mut cases = 0;
    let mut misses = Vec::new();
    for trial in 0..50 {
        let m = 2 + trial % 7;
        let p = 2 + trial % 3;
        let pool: Vec<DMatrix<f64>> = (0..m).map(|_| random_spd(&mut r, p)).collect();
        let d = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                0.0
            } else {
                stein_divergence(&pool[i], &pool[j]).unwrap()
            }
        });
        for k in 1..=m {
            let pam = pam_medoids(&d, k).unwrap();
            let got = pam_objective(&d, &pam.medoids);
            let opt = exhaustive_optimum(&d, k);
            cases += 1;
            if got != opt {
                misses.push(format!("trial {trial} m={m} K={k}: {got:.6} vs {opt:.6}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} of {cases} (pool, K) cases off the exhaustive optimum in {elapsed:?}{}",
        misses.len(),
        misses.first().map(|s| format!("; first: {s}")).unwrap_or_default()
    );
    verdict(5, misses.is_empty() && elapsed < Duration::from_secs(30), &detail);
}

fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn c06_auc_midrank_vs_pairs() {
    let start = Instant::now();
    let mut r = rng(106);
    let mut mismatches = 0;
    let mut sets = 0;
    while sets < 200 {
        let n = r.gen_range(2..60);
        // integer scores on a small range force ties
        let levels = r.gen_range(2..8);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        sets += 1;
        if roc_auc(&scores, &labels).unwrap() != pair_count_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        mismatches == 0 && elapsed < Duration::from_secs(5),
        &format!("{mismatches} mismatches over {sets} sets in {elapsed:?}"),
    );
}

/// Ridge with an unpenalized intercept via the augmented normal equations.
fn dense_ridge(x: &[Vec<f64>], y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let p = x[0].len();
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[i][j] } else { 1.0 });
    let mut lhs = a.transpose() * &a;
    for j in 0..p {
        lhs[(j, j)] += alpha;
    }
    let rhs = a.transpose() * DVector::from_column_slice(y);
    let sol = lhs.lu().solve(&rhs).unwrap();
    (sol.rows(0, p).iter().copied().collect(), sol[p])
}

#[test]
fn c07_ridge_oracle() {
    let mut r = rng(107);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(8..40);
        let p = r.gen_range(1..6);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| 1.5 + row.iter().sum::<f64>() + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut r))
            .collect();
        let alpha = 10f64.powf(r.gen_range(-3.0..2.0));
        let m = fit_ridge(&x, &y, alpha).unwrap();
        let (w, b) = dense_ridge(&x, &y, alpha);
        let scale = w.iter().map(|v| v.abs()).fold(b.abs(), f64::max).max(1e-300);
        let gap = m.weights.iter().zip(&w).map(|(u, v)| (u - v).abs()).fold((m.intercept - b).abs(), f64::max);
        worst = worst.max(gap / scale);
    }
    let line = vec![vec![0.0], vec![1.0], vec![2.0]];
    let hand = fit_ridge(&line, &[0.0, 1.0, 2.0], 2.0).unwrap();
    let hand_gap = (hand.weights[0] - 0.5).abs().max((hand.intercept - 0.5).abs());
    verdict(
        7,
        worst <= 1e-8 && hand_gap <= 1e-12,
        &format!("max relative gap {worst:.2e}; hand example gap {hand_gap:.2e}"),
    );
}

#[test]
fn c08_yeo_johnson() {
    let mut branch_err = 0.0f64;
    for x in [-3.0, -0.5, 0.0, 0.7, 3.2, 40.0] {
        branch_err = branch_err.max((yj_transform(x, 1.0) - x).abs());
        if x >= 0.0 {
            branch_err = branch_err.max((yj_transform(x, 0.0) - x.ln_1p()).abs());
        }
    }
    branch_err = branch_err.max((yj_transform(std::f64::consts::E - 1.0, 0.0) - 1.0).abs());
    let mut r = rng(108);
    let normal: Vec<f64> = (0..500).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
    let lognormal: Vec<f64> = (0..500)
        .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r).exp() - 1.0)
        .collect();
    let l_normal = estimate_yj_lambda(&normal).unwrap().lambda;
    let l_log = estimate_yj_lambda(&lognormal).unwrap().lambda;
    let ok = branch_err <= 1e-12 && (l_normal - 1.0).abs() <= 0.3 && l_log.abs() <= 0.3;
    verdict(
        8,
        ok,
        &format!("branch error {branch_err:.2e}; lambda(normal)={l_normal:.3} lambda(exp-1)={l_log:.3}"),
    );
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn c09_parameter_shift() {
    let start = Instant::now();
    let mut r = rng(109);
    let h = 1e-5;
    let mut failures = 0;
    let mut checked = 0;
    for c in 0..20 {
        let q = 1 + c % 4;
        let cfg = FeatureMapConfig::new(q, 1 + c % 3, r.gen_range(0.5..2.0));
        let var_layers = 1 + c % 3;
        let w: Vec<Vec<f64>> = (0..var_layers)
            .map(|_| (0..q).map(|_| r.gen_range(-3.0..3.0)).collect())
            .collect();
        let thetas = random_angles(&mut r, 6, q);
        let y: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();

        // measurement Jacobian at one input
        let jac = parameter_shift_jacobian(&thetas[0], &w, &cfg).unwrap();
        let mut w2 = w.clone();
        for l in 0..var_layers {
            for j in 0..q {
                let o = w2[l][j];
                w2[l][j] = o + h;
                let up = vqr_measurements(&thetas[0], &w2, &cfg).unwrap();
                w2[l][j] = o - h;
                let dn = vqr_measurements(&thetas[0], &w2, &cfg).unwrap();
                w2[l][j] = o;
                for k in 0..q {
                    checked += 1;
                    if !rel_close(jac[l * q + j][k], (up[k] - dn[k]) / (2.0 * h), 1e-4) {
                        failures += 1;
                    }
                }
            }
        }

        // training-loss gradient at a fixed head
        let head = RidgeModel {
            weights: (0..q).map(|_| r.gen_range(-1.0..1.0)).collect(),
            intercept: 0.2,
            alpha: 0.0,
            fit_intercept: true,
            jittered: false,
        };
        let g = vqr_loss_gradient(&thetas, &y, &w, &head, &cfg).unwrap();
        for l in 0..var_layers {
            for j in 0..q {
                let o = w2[l][j];
                w2[l][j] = o + h;
                let up = vqr_loss(&thetas, &y, &w2, &head, &cfg).unwrap();
                w2[l][j] = o - h;
                let dn = vqr_loss(&thetas, &y, &w2, &head, &cfg).unwrap();
                w2[l][j] = o;
                checked += 1;
                if !rel_close(g[l * q + j], (up - dn) / (2.0 * h), 1e-4) {
                    failures += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        9,
        failures == 0 && elapsed < Duration::from_secs(10),
        &format!("{failures} of {checked} derivatives off in {elapsed:?}"),
    );
}

struct FullRun {
    reports: Vec<EvalReport>,
    serial_dir: tempfile::TempDir,
    parallel_dir: tempfile::TempDir,
    serial_time: Duration,
    parallel_time: Duration,
}

fn full_default_config() -> RunConfig {
    RunConfig {
        targets: Target::ALL.to_vec(),
        families: Family::ALL.to_vec(),
        ..RunConfig::default()
    }
}

fn run_all(threads: usize, dir: &Path) -> (Vec<EvalReport>, Duration) {
    let cfg = full_default_config();
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let reports = pool.install(|| {
        let data = load_data(&cfg.cohort).unwrap();
        cfg.targets
            .iter()
            .map(|&t| {
                let rep = run_benchmark(&cfg, &data, t).unwrap();
                emit_report(&rep, dir, Formats::default()).unwrap();
                rep
            })
            .collect::<Vec<_>>()
    });
    (reports, start.elapsed())
}

fn full_run() -> &'static FullRun {
    static RUN: OnceLock<FullRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let parallel_dir = tempfile::tempdir().unwrap();
        let serial_dir = tempfile::tempdir().unwrap();
        let (reports, parallel_time) = run_all(4, parallel_dir.path());
        let (_, serial_time) = run_all(1, serial_dir.path());
        FullRun {
            reports,
            serial_dir,
            parallel_dir,
            serial_time,
            parallel_time,
        }
    })
}

#[test]
fn c10_leakage_audit() {
    let run = full_run();
    let entries: usize = run.reports.iter().map(|r| r.audit.len()).sum();
    let violations: usize = run.reports.iter().map(|r| r.audit_violations().len()).sum();
    let failed_rows: usize = run
        .reports
        .iter()
        .map(|r| r.rows.iter().filter(|row| row.error.is_some()).count())
        .sum();
    // a failed family records no audit entries, so it must not pass silently
    let missing: usize = run
        .reports
        .iter()
        .map(|r| {
            r.rows
                .iter()
                .filter(|row| !r.audit.iter().any(|a| a.family == row.key && a.stage == "refit"))
                .count()
        })
        .sum();
    verdict(
        10,
        entries > 0 && violations == 0 && missing == 0,
        &format!("{entries} fit records, {violations} violations, {missing} rows without a refit record, {failed_rows} failed rows"),
    );
}

#[test]
fn c11_protocol_split() {
    let cohort = generate_synthetic_cohort(213, 0, &GenProfile::default()).unwrap();
    let conds = cohort.conditions();
    let rows: Vec<usize> = (0..213).collect();
    let plan = make_split_plan(&rows, &conds, 0.2, 5, 0, 1).unwrap();
    let mut problems = Vec::new();
    if plan.test_idx.len() != 43 {
        problems.push(format!("test size {}", plan.test_idx.len()));
    }
    let train: BTreeSet<usize> = plan.train_idx.iter().copied().collect();
    let test: BTreeSet<usize> = plan.test_idx.iter().copied().collect();
    if !train.is_disjoint(&test) || train.len() + test.len() != 213 {
        problems.push("train/test not a partition".into());
    }
    let stratum = |idx: &[usize], c: Condition| idx.iter().filter(|&&i| conds[i] == c).count();
    for c in [Condition::Sham, Condition::Cs] {
        let total = stratum(&rows, c) as f64;
        let expected = total * 0.2;
        if (stratum(&plan.test_idx, c) as f64 - expected).abs() >= 1.0 {
            problems.push(format!("{} test share off", c.label()));
        }
    }
    let mut seen = BTreeSet::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let tr: BTreeSet<usize> = fold.train.iter().copied().collect();
        let va: BTreeSet<usize> = fold.validation.iter().copied().collect();
        if !tr.is_disjoint(&va) || tr.union(&va).copied().collect::<BTreeSet<_>>() != train {
            problems.push(format!("fold {f} does not partition the training set"));
        }
        for &v in &va {
            if !seen.insert(v) {
                problems.push(format!("row {v} validated twice"));
            }
        }
    }
    if seen != train {
        problems.push("validation folds do not cover the training set".into());
    }
    for c in [Condition::Sham, Condition::Cs] {
        let sizes: Vec<usize> = plan.folds.iter().map(|f| stratum(&f.validation, c)).collect();
        if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
            problems.push(format!("{} fold sizes {sizes:?}", c.label()));
        }
    }
    verdict(
        11,
        problems.is_empty() && plan.folds.len() == 5,
        &format!("n_test={} folds={} problems={problems:?}", plan.test_idx.len(), plan.folds.len()),
    );
}

fn deterministic_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with("_timings.csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn c12_determinism_and_scale() {
    let run = full_run();
    let a = deterministic_files(run.parallel_dir.path());
    let b = deterministic_files(run.serial_dir.path());
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let rows: Vec<usize> = run.reports.iter().map(|r| r.rows.len()).collect();
    let budget = Duration::from_secs(600);
    let ok = a.len() == b.len()
        && !a.is_empty()
        && differing.is_empty()
        && rows.iter().all(|&n| n == Family::ALL.len())
        && run.parallel_time < budget
        && run.serial_time < budget;
    verdict(
        12,
        ok,
        &format!(
            "{} files, differing {differing:?}; rows per target {rows:?}; parallel {:.0?}, serial {:.0?}",
            a.len(),
            run.parallel_time,
            run.serial_time
        ),
    );
}

#[test]
fn c13_directional_baselines() {
    let mut details = Vec::new();
    let mut ok = GenProfile::default().interaction_coef > 0.0;
    for seed in 0..3u64 {
        let mut cfg = RunConfig {
            families: vec![Family::GlobalMean, Family::ConditionMeans],
            seed,
            ..RunConfig::default()
        };
        cfg.cohort.seed = seed;
        let data = load_data(&cfg.cohort).unwrap();
        let rep = run_benchmark(&cfg, &data, Target::Weight).unwrap();
        let r2 = |k: &str| rep.row(k).unwrap().metrics.unwrap().r2;
        let (gm, cm) = (r2("global_mean"), r2("condition_means"));
        ok &= cm > 0.0 && gm <= 0.0;
        details.push(format!("seed {seed}: global {gm:.6} condition {cm:.6}"));
    }
    verdict(13, ok, &details.join("; "));
}
