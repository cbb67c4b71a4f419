//! K-fold cross-validation with one-at-a-time parameter sweeps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, GbmConfig};
use crate::error::{Error, Result};
use crate::eval::r2_score;

/// Candidate values per parameter. Empty lists are not swept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvGrid {
    pub m_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub min_split: Vec<usize>,
}

impl CvGrid {
    /// The search ranges used for the published model.
    pub fn reference() -> Self {
        CvGrid {
            m_trees: vec![100, 500, 1000, 2000],
            max_depth: vec![5, 7, 10, 15, 20],
            learning_rate: vec![0.01, 0.03, 0.05, 0.1],
            min_split: vec![2, 5, 10],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.m_trees.is_empty()
            && self.max_depth.is_empty()
            && self.learning_rate.is_empty()
            && self.min_split.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub parameter: String,
    pub value: f64,
    pub mean_r2: f64,
    pub fold_r2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: GbmConfig,
    pub rows: Vec<CvRow>,
}

/// Mean R² values closer than this are treated as ties.
const TIE: f64 = 1e-12;

struct Fold {
    train: Vec<usize>,
    val: Vec<usize>,
}

fn make_folds(n: usize, groups: Option<&[usize]>, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut ids: Vec<usize> = match groups {
        Some(g) => {
            let mut ids = g.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
        None => (0..n).collect(),
    };
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of_group: std::collections::HashMap<usize, usize> =
        ids.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
    let mut folds: Vec<Fold> = (0..k)
        .map(|_| Fold {
            train: Vec::new(),
            val: Vec::new(),
        })
        .collect();
    for row in 0..n {
        let g = groups.map_or(row, |g| g[row]);
        let f = fold_of_group[&g];
        for (j, fold) in folds.iter_mut().enumerate() {
            if j == f {
                fold.val.push(row);
            } else {
                fold.train.push(row);
            }
        }
    }
    if let Some(i) = folds.iter().position(|f| f.val.is_empty() || f.train.len() < 2) {
        return Err(Error::Precondition(format!("cross-validation fold {i} has too few samples")));
    }
    Ok(folds)
}

/// Sweeps each parameter of `grid` with the others held at `base`, scoring
/// mean validation R² over `k` folds. Rows sharing a group id (for example
/// samples of one session) are kept in the same fold.
///
/// The returned config takes, for every swept parameter, its best value;
/// ties go to the smaller model (fewer trees, shallower trees, larger
/// minimum split, then the earlier listed learning rate).
pub fn cross_validate<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    groups: Option<&[usize]>,
    grid: &CvGrid,
    base: &GbmConfig,
    k: usize,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Precondition("cross-validation grid is empty".into()));
    }
    if k < 2 {
        return Err(Error::Precondition(format!("need at least 2 folds, got {k}")));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if let Some(g) = groups {
        if g.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: g.len(),
            });
        }
    }
    if x.len() < k {
        return Err(Error::Precondition(format!(
            "{} samples cannot fill {k} folds",
            x.len()
        )));
    }
    base.validate()?;
    let folds = make_folds(x.len(), groups, k, base.seed)?;

    let subset = |idx: &[usize]| -> (Vec<&[f64]>, Vec<f64>) {
        (
            idx.iter().map(|&i| x[i].as_ref()).collect(),
            idx.iter().map(|&i| y[i]).collect(),
        )
    };
    let score = |cfg: &GbmConfig, stages: &[usize]| -> Result<Vec<Vec<f64>>> {
        // fold_r2[stage][fold]
        let mut out = vec![Vec::with_capacity(k); stages.len().max(1)];
        for fold in &folds {
            let (xt, yt) = subset(&fold.train);
            let (xv, yv) = subset(&fold.val);
            let ens = fit(&xt, &yt, cfg)?;
            if stages.is_empty() {
                out[0].push(r2_score(&yv, &ens.predict_batch(&xv)?)?);
            } else {
                for (s, p) in ens.staged_predict(&xv, stages)?.iter().enumerate() {
                    out[s].push(r2_score(&yv, p)?);
                }
            }
        }
        Ok(out)
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut rows = Vec::new();
    let mut best = *base;

    if !grid.m_trees.is_empty() {
        let m_max = *grid.m_trees.iter().max().unwrap();
        let cfg = GbmConfig {
            m_trees: m_max,
            ..*base
        };
        let per_stage = score(&cfg, &grid.m_trees)?;
        let mut pick: Option<(usize, f64)> = None;
        for (m, fold_r2) in grid.m_trees.iter().zip(per_stage) {
            let r = mean(&fold_r2);
            let better = pick.is_none_or(|(pm, pr)| r > pr + TIE || ((r - pr).abs() <= TIE && *m < pm));
            if better {
                pick = Some((*m, r));
            }
            rows.push(CvRow {
                parameter: "m_trees".into(),
                value: *m as f64,
                mean_r2: r,
                fold_r2,
            });
        }
        best.m_trees = pick.unwrap().0;
    }

    let mut sweep = |name: &str,
                     values: Vec<f64>,
                     set: &dyn Fn(&mut GbmConfig, f64),
                     prefer: &dyn Fn(f64, f64) -> bool|
     -> Result<Option<f64>> {
        let mut pick: Option<(f64, f64)> = None;
        for v in values {
            let mut cfg = *base;
            set(&mut cfg, v);
            let fold_r2 = score(&cfg, &[])?.remove(0);
            let r = mean(&fold_r2);
            let better =
                pick.is_none_or(|(pv, pr)| r > pr + TIE || ((r - pr).abs() <= TIE && prefer(v, pv)));
            if better {
                pick = Some((v, r));
            }
            rows.push(CvRow {
                parameter: name.into(),
                value: v,
                mean_r2: r,
                fold_r2,
            });
        }
        Ok(pick.map(|p| p.0))
    };

    if let Some(v) = sweep(
        "max_depth",
        grid.max_depth.iter().map(|&d| d as f64).collect(),
        &|c, v| c.max_depth = v as usize,
        &|a, b| a < b,
    )? {
        best.max_depth = v as usize;
    }
    if let Some(v) = sweep(
        "learning_rate",
        grid.learning_rate.clone(),
        &|c, v| c.learning_rate = v,
        &|_, _| false,
    )? {
        best.learning_rate = v;
    }
    if let Some(v) = sweep(
        "min_split",
        grid.min_split.iter().map(|&d| d as f64).collect(),
        &|c, v| c.min_split = v as usize,
        &|a, b| a > b,
    )? {
        best.min_split = v as usize;
    }
    best.validate()?;
    Ok(CvResult { best, rows })
}
