//! Physics-informed feature vector and standardization.
//!
//! The engineered vector has 26 entries in a frozen order:
//!
//! | slots  | group | contents |
//! |--------|-------|----------|
//! | 0–7    | base  | `s, C_nom, P_nom, T_amb, P_station, SoH, C_eff, P_eff` |
//! | 8–14   | poly  | `s, s², s³, s⁴, s⁵, √s, ln(s + 1e-6)` |
//! | 15–18  | taper | `m, m², m³, exp(-10 m)` with `m = max(0, s - 0.8)` |
//! | 19–25  | SoH   | `s·SoH, s²·SoH, SoH², s(1-SoH), (s-0.8)(1-SoH), C_eff/C_nom, P_eff/P_nom` |
//!
//! Slot 4 carries the station power. The order is versioned by
//! [`FEATURE_ORDER_VERSION`] and stored in every model file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, ChargingScenario};
use crate::simulator::SessionTrace;

pub const N_FEATURES: usize = 26;
pub const N_BASE: usize = 8;
pub const FEATURE_ORDER_VERSION: &str = "base8-poly7-taper4-soh7/1";

const LOG_EPS: f64 = 1e-6;
const TAPER_KNEE: f64 = 0.8;
const SIGMA_FLOOR: f64 = 1e-8;

pub type FeatureVector = [f64; N_FEATURES];

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "soc",
    "capacity_nom",
    "power_nom",
    "t_amb",
    "p_station",
    "soh",
    "capacity_eff",
    "power_eff",
    "soc_poly1",
    "soc_poly2",
    "soc_poly3",
    "soc_poly4",
    "soc_poly5",
    "soc_sqrt",
    "soc_log",
    "cv_taper1",
    "cv_taper2",
    "cv_taper3",
    "cv_taper_exp",
    "soc_x_soh",
    "soc2_x_soh",
    "soh2",
    "soc_x_fade",
    "cv_x_fade",
    "capacity_ratio",
    "power_ratio",
];

/// Groups used to roll feature importance up to categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureCategory {
    PhysicalLimits,
    SohInteractions,
    SocPolynomials,
    CcCvIndicators,
    Temperature,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 5] = [
        FeatureCategory::PhysicalLimits,
        FeatureCategory::SohInteractions,
        FeatureCategory::SocPolynomials,
        FeatureCategory::CcCvIndicators,
        FeatureCategory::Temperature,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureCategory::PhysicalLimits => "physical-limits",
            FeatureCategory::SohInteractions => "soh-interactions",
            FeatureCategory::SocPolynomials => "soc-polynomials",
            FeatureCategory::CcCvIndicators => "cc-cv-indicators",
            FeatureCategory::Temperature => "temperature",
        }
    }

    /// True for the engineered nonlinear groups (everything but raw limits
    /// and temperature).
    pub fn is_engineered(&self) -> bool {
        matches!(
            self,
            FeatureCategory::SohInteractions
                | FeatureCategory::SocPolynomials
                | FeatureCategory::CcCvIndicators
        )
    }
}

/// Category of each slot. The raw SoC counts as the degree-one polynomial
/// and the raw SoH as a degradation feature.
pub fn feature_category(index: usize) -> FeatureCategory {
    use FeatureCategory::*;
    match index {
        0 => SocPolynomials,
        1 | 2 | 4 | 6 | 7 => PhysicalLimits,
        3 => Temperature,
        5 => SohInteractions,
        8..=14 => SocPolynomials,
        15..=18 => CcCvIndicators,
        19..=25 => SohInteractions,
        _ => panic!("feature index {index} out of range"),
    }
}

/// Session-level inputs that stay fixed while the SoC varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub c_bat_nom: f64,
    pub p_max_nom: f64,
    pub t_amb: f64,
    pub p_station: f64,
    pub soh: f64,
}

impl From<&ChargingScenario> for FeatureContext {
    fn from(sc: &ChargingScenario) -> Self {
        FeatureContext {
            c_bat_nom: sc.vehicle.c_bat_nom,
            p_max_nom: sc.vehicle.p_max_nom,
            t_amb: sc.t_amb,
            p_station: sc.p_station,
            soh: sc.soh,
        }
    }
}

pub fn base_features(s: f64, ctx: &FeatureContext) -> [f64; N_BASE] {
    [
        s,
        ctx.c_bat_nom,
        ctx.p_max_nom,
        ctx.t_amb,
        ctx.p_station,
        ctx.soh,
        ctx.c_bat_nom * ctx.soh,
        ctx.p_max_nom * physics::power_fade_ratio(ctx.soh),
    ]
}

pub fn poly_features(s: f64) -> [f64; 7] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    [s, s2, s3, s4, s4 * s, s.sqrt(), (s + LOG_EPS).ln()]
}

pub fn taper_features(s: f64) -> [f64; 4] {
    let m = (s - TAPER_KNEE).max(0.0);
    [m, m * m, m * m * m, (-10.0 * m).exp()]
}

/// SoH interaction terms. The fifth entry is deliberately signed.
pub fn soh_features(s: f64, soh: f64, c_bat_nom: f64, p_max_nom: f64) -> [f64; 7] {
    let fade = 1.0 - soh;
    let c_eff = c_bat_nom * soh;
    let p_eff = p_max_nom * physics::power_fade_ratio(soh);
    [
        s * soh,
        s * s * soh,
        soh * soh,
        s * fade,
        (s - TAPER_KNEE) * fade,
        c_eff / c_bat_nom,
        p_eff / p_max_nom,
    ]
}

/// Full 26-entry feature vector at SoC `s`.
pub fn engineer(s: f64, ctx: &FeatureContext) -> FeatureVector {
    let mut x = [0.0; N_FEATURES];
    x[..8].copy_from_slice(&base_features(s, ctx));
    x[8..15].copy_from_slice(&poly_features(s));
    x[15..19].copy_from_slice(&taper_features(s));
    x[19..].copy_from_slice(&soh_features(s, ctx.soh, ctx.c_bat_nom, ctx.p_max_nom));
    x
}

/// Feature rows and power targets taken every `stride` grid points of each
/// trace (the first point is always included).
pub fn training_rows<'a>(
    traces: impl IntoIterator<Item = &'a SessionTrace>,
    stride: usize,
) -> (Vec<FeatureVector>, Vec<f64>) {
    let stride = stride.max(1);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in traces {
        let ctx = FeatureContext::from(&t.scenario);
        for k in (0..t.len()).step_by(stride) {
            xs.push(engineer(t.soc_grid[k], &ctx));
            ys.push(t.power_kw[k]);
        }
    }
    (xs, ys)
}

/// Column-wise standardization `(x - mu) / sigma`.
///
/// Population standard deviation; columns with `sigma < 1e-8` use 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Scaler {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Scaler> {
        if rows.len() < 2 {
            return Err(Error::Empty(format!(
                "scaler needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut mu = vec![0.0; d];
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mu) {
                *acc += (v - m) * (v - m);
            }
        }
        let sigma = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd < SIGMA_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Scaler { mu, sigma })
    }

    pub fn is_fitted(&self) -> bool {
        !self.mu.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::State("scaler applied before fit".into()));
        }
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - self.mu[i]) / self.sigma[i];
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        Ok(z
            .iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }
}
