//! Regression metrics on charging times (minutes).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    pub max_e: f64,
}

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Empty("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Coefficient of determination. A constant target scores 1 when matched
/// exactly and 0 otherwise.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    check_pair(y_true, y_pred)?;
    if let Some(bad) = y_true.iter().find(|y| !(**y > 0.0)) {
        return Err(Error::Domain(format!(
            "percentage error needs positive targets, got {bad}"
        )));
    }
    let n = y_true.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut pct = 0.0;
    let mut max_e: f64 = 0.0;
    for (y, p) in y_true.iter().zip(y_pred) {
        let e = (p - y).abs();
        sq += e * e;
        abs += e;
        pct += e / y;
        max_e = max_e.max(e);
    }
    Ok(Metrics {
        r2: r2_score(y_true, y_pred)?,
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        mape: 100.0 * pct / n,
        max_e,
    })
}
