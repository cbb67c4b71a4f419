//! Gradient-boosted regression trees on squared loss.

mod cv;
mod tree;

pub use cv::{cross_validate, CvGrid, CvResult, CvRow};
pub use tree::{NestedNode, Node, Tree, TrainingMatrix, LEAF};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_category, FeatureCategory, Scaler, FEATURE_ORDER_VERSION};
use tree::{grow_tree, TreeParams};

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub m_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_split: usize,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            m_trees: 1000,
            max_depth: 10,
            learning_rate: 0.03,
            min_split: 2,
            seed: 42,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_trees < 1 {
            return Err(Error::Config("m_trees must be at least 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_split < 2 {
            return Err(Error::Config("min_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub f0: f64,
    pub nu: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub scaler: Scaler,
}

impl TreeEnsemble {
    /// Ensemble without trees; predicts `f0` everywhere.
    pub fn constant(f0: f64, nu: f64, n_features: usize) -> Self {
        TreeEnsemble {
            f0,
            nu,
            trees: Vec::new(),
            n_features,
            scaler: Scaler::default(),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: len,
            });
        }
        Ok(())
    }

    /// Prediction for an already standardized feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.f0 + self.nu * sum
    }

    /// Standardizes `x` with the embedded scaler, then predicts.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        let z = self.scaler.apply(x)?;
        self.predict(&z)
    }

    /// Predictions for many standardized rows, looping tree-major.
    pub fn predict_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        for r in rows {
            self.check_len(r.as_ref().len())?;
        }
        let mut sums = vec![0.0; rows.len()];
        for t in &self.trees {
            for (acc, r) in sums.iter_mut().zip(rows) {
                *acc += t.predict(r.as_ref());
            }
        }
        Ok(sums.into_iter().map(|s| self.f0 + self.nu * s).collect())
    }

    /// Predictions of the first `m` trees for every `m` in `stages`.
    pub fn staged_predict<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        stages: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        for r in rows {
            self.check_len(r.as_ref().len())?;
        }
        let mut sums = vec![0.0; rows.len()];
        let mut out = Vec::with_capacity(stages.len());
        let emit = |sums: &[f64]| sums.iter().map(|s| self.f0 + self.nu * s).collect::<Vec<_>>();
        let mut pending: Vec<usize> = stages.to_vec();
        pending.sort_unstable();
        let mut by_stage = std::collections::BTreeMap::new();
        let mut next = pending.iter().peekable();
        while let Some(&&0) = next.peek() {
            by_stage.insert(0, emit(&sums));
            next.next();
        }
        for (m, t) in self.trees.iter().enumerate() {
            for (acc, r) in sums.iter_mut().zip(rows) {
                *acc += t.predict(r.as_ref());
            }
            while let Some(&&s) = next.peek() {
                if s == m + 1 {
                    by_stage.insert(s, emit(&sums));
                    next.next();
                } else {
                    break;
                }
            }
        }
        for s in stages {
            let p = by_stage.get(s).cloned().unwrap_or_else(|| emit(&sums));
            out.push(p);
        }
        Ok(out)
    }

    /// Per-feature total squared-error reduction, normalized to sum to 1.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for t in &self.trees {
            for n in t.nodes.iter().filter(|n| !n.is_leaf()) {
                imp[n.feature as usize] += n.gain;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_order_version: FEATURE_ORDER_VERSION.to_string(),
            n_features: self.n_features,
            f0: self.f0,
            nu: self.nu,
            scaler: self.scaler.clone(),
            trees: self.trees.iter().map(Tree::to_nested).collect(),
        };
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TreeEnsemble> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if file.feature_order_version != FEATURE_ORDER_VERSION {
            return Err(Error::Format(format!(
                "model built for feature layout {:?}, this build uses {:?}",
                file.feature_order_version, FEATURE_ORDER_VERSION
            )));
        }
        Ok(TreeEnsemble {
            f0: file.f0,
            nu: file.nu,
            trees: file.trees.iter().map(Tree::from_nested).collect(),
            n_features: file.n_features,
            scaler: file.scaler,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_order_version: String,
    n_features: usize,
    f0: f64,
    nu: f64,
    scaler: Scaler,
    trees: Vec<NestedNode>,
}

/// Importance summed per feature category, in `FeatureCategory::ALL` order.
pub fn category_importance(importance: &[f64]) -> Vec<(FeatureCategory, f64)> {
    FeatureCategory::ALL
        .iter()
        .map(|c| {
            let total = importance
                .iter()
                .enumerate()
                .filter(|(i, _)| feature_category(*i) == *c)
                .map(|(_, v)| v)
                .sum();
            (*c, total)
        })
        .collect()
}

fn check_training_data<R: AsRef<[f64]>>(x: &[R], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Empty(format!(
            "boosting needs at least 2 rows, got {}",
            x.len()
        )));
    }
    let d = x[0].as_ref().len();
    for r in x {
        if r.as_ref().len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.as_ref().len(),
            });
        }
    }
    Ok(d)
}

/// Fits an ensemble on standardized rows. The returned ensemble carries an
/// unfitted scaler; attach one with [`fit_scaled`] or by hand.
pub fn fit<R: AsRef<[f64]>>(x: &[R], y: &[f64], cfg: &GbmConfig) -> Result<TreeEnsemble> {
    fit_with_history(x, y, cfg).map(|(e, _)| e)
}

/// Like [`fit`], also returning the training MSE after each round
/// (entry 0 is the MSE of `f0` alone).
pub fn fit_with_history<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    cfg: &GbmConfig,
) -> Result<(TreeEnsemble, Vec<f64>)> {
    cfg.validate()?;
    let d = check_training_data(x, y)?;
    let n = y.len();
    let f0 = y.iter().sum::<f64>() / n as f64;
    let data = TrainingMatrix::new(x);

    let var = y.iter().map(|v| (v - f0) * (v - f0)).sum::<f64>() / n as f64;
    let mean_abs = y.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let scale = var.sqrt().max(1e-6 * mean_abs).max(1e-150);
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_split: cfg.min_split,
        min_gain: 1e-12 * n as f64 * scale * scale,
    };

    let mut pred = vec![f0; n];
    let mut residuals: Vec<f64> = y.iter().map(|v| v - f0).collect();
    let mut history = vec![mse(&residuals)];
    let mut trees = Vec::with_capacity(cfg.m_trees);
    let mut node_of = Vec::new();
    for _ in 0..cfg.m_trees {
        let tree = grow_tree(&data, &residuals, &params, &mut node_of);
        for i in 0..n {
            pred[i] += cfg.learning_rate * tree.nodes[node_of[i] as usize].value;
            residuals[i] = y[i] - pred[i];
        }
        let loss = mse(&residuals);
        let prev = *history.last().unwrap();
        debug_assert!(
            loss <= prev * (1.0 + 1e-9) + 1e-12 * scale * scale,
            "training loss rose from {prev} to {loss}"
        );
        history.push(loss);
        let stop = tree.nodes.len() == 1;
        trees.push(tree);
        if stop {
            // A single-leaf tree on residuals with mean ~0 changes nothing.
            break;
        }
    }
    Ok((
        TreeEnsemble {
            f0,
            nu: cfg.learning_rate,
            trees,
            n_features: d,
            scaler: Scaler::default(),
        },
        history,
    ))
}

/// Fits a scaler on raw rows, standardizes them and fits the ensemble.
pub fn fit_scaled<R: AsRef<[f64]>>(x_raw: &[R], y: &[f64], cfg: &GbmConfig) -> Result<TreeEnsemble> {
    let scaler = Scaler::fit(x_raw)?;
    let z: Vec<Vec<f64>> = x_raw
        .iter()
        .map(|r| scaler.apply(r.as_ref()))
        .collect::<Result<_>>()?;
    let mut ens = fit(&z, y, cfg)?;
    ens.scaler = scaler;
    Ok(ens)
}

fn mse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}
