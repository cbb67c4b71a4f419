use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub sizes: Vec<usize>,
    pub mean: Vec<f64>,
    /// Normal-approximation 95% half-width, `1.96 * sd / sqrt(runs)`.
    pub half_width: Vec<f64>,
    /// `values[size][run]`.
    pub values: Vec<Vec<f64>>,
}

impl LearningCurve {
    pub fn from_values(sizes: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        if sizes.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: sizes.len(),
                got: values.len(),
            });
        }
        let mut mean = Vec::with_capacity(values.len());
        let mut half_width = Vec::with_capacity(values.len());
        for v in &values {
            let (m, h) = mean_ci(v)?;
            mean.push(m);
            half_width.push(h);
        }
        Ok(LearningCurve {
            sizes,
            mean,
            half_width,
            values,
        })
    }

    /// Mean at the largest size.
    pub fn final_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }

    pub fn mean_at(&self, size: usize) -> Option<f64> {
        self.sizes.iter().position(|&s| s == size).map(|i| self.mean[i])
    }

    pub fn to_csv(&self, metric: &str) -> String {
        let mut out = format!("size,mean_{metric},ci95_half_width,runs\n");
        for i in 0..self.sizes.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.sizes[i],
                self.mean[i],
                self.half_width[i],
                self.values[i].len()
            ));
        }
        out
    }
}

/// Mean and 95% half-width (zero for a single run).
pub fn mean_ci(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("no runs to summarize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Trains and scores `runs` models per size. Run `r` draws one seeded
/// permutation of `pool` and uses its first `size` items, so the subsets
/// of a run are nested. `train_eval(subset, seed)` returns the score.
pub fn learning_curve<T>(
    pool: &[T],
    sizes: &[usize],
    runs: usize,
    seed: u64,
    mut train_eval: impl FnMut(&[&T], u64) -> Result<f64>,
) -> Result<LearningCurve> {
    if runs == 0 || sizes.is_empty() {
        return Err(Error::Empty("learning curve needs sizes and runs".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::Precondition("sizes must be positive and strictly increasing".into()));
    }
    if let Some(&too_big) = sizes.iter().find(|&&s| s > pool.len()) {
        return Err(Error::Precondition(format!(
            "size {too_big} exceeds the {} available samples",
            pool.len()
        )));
    }
    let mut values = vec![Vec::with_capacity(runs); sizes.len()];
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run as u64);
        let mut order: Vec<&T> = pool.iter().collect();
        order.shuffle(&mut rng);
        let run_seed = seed.wrapping_add(run as u64);
        for (i, &size) in sizes.iter().enumerate() {
            values[i].push(train_eval(&order[..size], run_seed)?);
        }
    }
    LearningCurve::from_values(sizes.to_vec(), values)
}

/// First size at which `challenger` scores strictly above `reference`.
pub fn crossover(reference: &LearningCurve, challenger: &LearningCurve) -> Option<usize> {
    challenger
        .sizes
        .iter()
        .zip(&challenger.mean)
        .find(|(s, m)| reference.mean_at(**s).is_some_and(|r| **m > r))
        .map(|(s, _)| *s)
}
