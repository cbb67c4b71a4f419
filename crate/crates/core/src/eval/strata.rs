use serde::{Deserialize, Serialize};

use super::metrics::{metrics, Metrics};
use crate::error::{Error, Result};
use crate::simulator::SessionTrace;

/// Half-open SoH interval `[lo, hi)`; the last bin of a set is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SohBin {
    pub lo: f64,
    pub hi: f64,
}

/// Three equal-width bins over `[0.7, 1.0]`.
pub fn default_soh_bins() -> Vec<SohBin> {
    vec![
        SohBin { lo: 0.7, hi: 0.8 },
        SohBin { lo: 0.8, hi: 0.9 },
        SohBin { lo: 0.9, hi: 1.0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub bin: SohBin,
    pub count: usize,
    /// `None` for an empty bin.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SohStratified {
    pub bins: Vec<BinResult>,
    /// `(mape_lowest_bin - mape_highest_bin) / mape_highest_bin`; `None`
    /// when either end bin is empty or the healthy MAPE is zero.
    pub mape_growth: Option<f64>,
}

fn check_bins(bins: &[SohBin]) -> Result<()> {
    let (Some(first), Some(last)) = (bins.first(), bins.last()) else {
        return Err(Error::Empty("no SoH bins given".into()));
    };
    if first.lo > 0.7 || last.hi < 1.0 {
        return Err(Error::Precondition("SoH bins must cover [0.7, 1.0]".into()));
    }
    for b in bins {
        if !(b.lo < b.hi) {
            return Err(Error::Precondition(format!("empty SoH bin [{}, {})", b.lo, b.hi)));
        }
    }
    for w in bins.windows(2) {
        if w[0].hi != w[1].lo {
            return Err(Error::Precondition("SoH bins must be sorted and contiguous".into()));
        }
    }
    Ok(())
}

/// Index of the bin holding `soh`, if any.
pub fn bin_of(bins: &[SohBin], soh: f64) -> Option<usize> {
    let last = bins.len().checked_sub(1)?;
    bins.iter().enumerate().position(|(i, b)| {
        soh >= b.lo && (soh < b.hi || (i == last && soh == b.hi))
    })
}

/// Metrics within each SoH bin for predictions `y_pred` on `test`.
pub fn soh_stratified_eval(
    test: &[SessionTrace],
    y_pred: &[f64],
    bins: &[SohBin],
) -> Result<SohStratified> {
    check_bins(bins)?;
    if test.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: test.len(),
            got: y_pred.len(),
        });
    }
    let mut truth = vec![Vec::new(); bins.len()];
    let mut pred = vec![Vec::new(); bins.len()];
    for (t, &p) in test.iter().zip(y_pred) {
        let b = bin_of(bins, t.scenario.soh).ok_or_else(|| {
            Error::Domain(format!("SoH {} outside the bins", t.scenario.soh))
        })?;
        truth[b].push(t.t_c_true);
        pred[b].push(p);
    }
    let results = bins
        .iter()
        .zip(truth.iter().zip(&pred))
        .map(|(bin, (y, p))| {
            Ok(BinResult {
                bin: *bin,
                count: y.len(),
                metrics: if y.is_empty() { None } else { Some(metrics(y, p)?) },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = results.first().and_then(|b| b.metrics);
    let best = results.last().and_then(|b| b.metrics);
    let mape_growth = match (worst, best) {
        (Some(w), Some(b)) if b.mape > 0.0 => Some((w.mape - b.mape) / b.mape),
        _ => None,
    };
    Ok(SohStratified {
        bins: results,
        mape_growth,
    })
}
