//! CART regression trees and a bootstrap random forest.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{derive_seed, rng, Rng};

/// Minimum reduction in within-node sum of squares for a split to count.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means all.
    pub mtry: Option<usize>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: TreeParams,
    p: usize,
    rng: Option<Rng>,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn sse(&self, idx: &[usize]) -> (f64, f64) {
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n;
        let sse = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        (mean, sse)
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        match (self.params.mtry, self.rng.as_mut()) {
            (Some(m), Some(r)) if m < self.p => {
                let mut f = sample(r, self.p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.p).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize], parent_sse: f64) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf;
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        for f in self.candidate_features() {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut ls, mut lsq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yi = self.y[order[k]];
                ls += yi;
                lsq += yi * yi;
                let nl = k + 1;
                let nr = n - nl;
                let (xa, xb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if nl < min_leaf || nr < min_leaf || xa == xb {
                    continue;
                }
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let child = (lsq - ls * ls / nl as f64) + (rsq - rs * rs / nr as f64);
                let gain = parent_sse - child;
                if gain > MIN_GAIN && best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (xa + xb),
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let (mean, sse) = self.sse(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: mean,
            count: idx.len(),
        });
        let depth_ok = self.params.max_depth.map_or(true, |d| depth < d);
        if !depth_ok || idx.len() < 2 * self.params.min_leaf || sse <= MIN_GAIN {
            return id;
        }
        let Some(split) = self.best_split(&idx, sse) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    crate::error::shape(x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::Fit("tree needs at least one row".into()));
    }
    let p = x[0].len();
    for r in x {
        crate::error::shape(p, r.len())?;
    }
    Ok(p)
}

fn fit_tree_rows(
    x: &[Vec<f64>],
    y: &[f64],
    rows: Vec<usize>,
    params: TreeParams,
    rng: Option<Rng>,
) -> Result<RegressionTree> {
    let p = check_xy(x, y)?;
    if params.min_leaf == 0 {
        return Err(Error::Config("min_leaf must be >= 1".into()));
    }
    let mut b = Builder {
        x,
        y,
        params,
        p,
        rng,
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    Ok(RegressionTree {
        nodes: b.nodes,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        n_features: p,
    })
}

/// Greedy variance-reduction CART. Ties go to the lowest feature index and
/// then the lowest threshold; thresholds are midpoints between adjacent
/// distinct observed values.
pub fn fit_cart(x: &[Vec<f64>], y: &[f64], max_depth: Option<usize>, min_leaf: usize) -> Result<RegressionTree> {
    if x.len() < 2 * min_leaf.max(1) {
        log::debug!("CART fit with n < 2 * min_leaf; tree will be a single leaf");
    }
    fit_tree_rows(
        x,
        y,
        (0..x.len()).collect(),
        TreeParams {
            max_depth,
            min_leaf,
            mtry: None,
        },
        None,
    )
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        crate::error::shape(self.n_features, x.len())?;
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value, .. } => return Ok(*value),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, count } => Some((*value, *count)),
            _ => None,
        })
    }

    /// Indented text dump with feature names, thresholds, leaf means and counts.
    pub fn dump(&self, names: &[String]) -> String {
        let mut out = String::new();
        self.dump_node(0, 0, names, &mut out);
        out
    }

    fn dump_node(&self, id: usize, indent: usize, names: &[String], out: &mut String) {
        let pad = "  ".repeat(indent);
        match &self.nodes[id] {
            Node::Leaf { value, count } => {
                let _ = writeln!(out, "{pad}leaf: mean = {value:.6}, n = {count}");
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let name = names.get(*feature).cloned().unwrap_or_else(|| format!("x{feature}"));
                let _ = writeln!(out, "{pad}{name} <= {threshold:.6}");
                self.dump_node(*left, indent + 1, names, out);
                let _ = writeln!(out, "{pad}{name} > {threshold:.6}");
                self.dump_node(*right, indent + 1, names, out);
            }
        }
    }
}

pub fn predict_tree(model: &RegressionTree, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(x)
}

// ---------------------------------------------------------------------------
// Forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub n_trees: usize,
    pub mtry: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub mtry: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

/// Random forest. Tree `t` draws its bootstrap sample and split-feature
/// subsets from a generator seeded by `(seed, t)`, so serial and parallel
/// fits agree bit for bit.
pub fn fit_random_forest(x: &[Vec<f64>], y: &[f64], params: ForestParams, seed: u64) -> Result<ForestModel> {
    let p = check_xy(x, y)?;
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be >= 1".into()));
    }
    if params.mtry == 0 || params.mtry > p {
        return Err(Error::Config(format!("mtry must lie in 1..={p}, got {}", params.mtry)));
    }
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng(derive_seed(seed, &[t as u64]));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| r.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_rows(
                x,
                y,
                rows,
                TreeParams {
                    max_depth: params.max_depth,
                    min_leaf: params.min_leaf,
                    mtry: Some(params.mtry),
                },
                Some(r),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        n_trees: params.n_trees,
        mtry: params.mtry,
        bootstrap: params.bootstrap,
        seed,
    })
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for t in &self.trees {
            s += t.predict_row(x)?;
        }
        Ok(s / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }
}

pub fn predict_forest(model: &ForestModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(x)
}
