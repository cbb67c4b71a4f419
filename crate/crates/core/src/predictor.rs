//! Charging time from a power model by summing `C_eff * ds / P` over an
//! SoC grid, plus the constant-power baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{engineer, FeatureContext, N_FEATURES};
use crate::gbm::TreeEnsemble;
use crate::physics::{pack_voltage, temperature_efficiency, ChargingScenario, PhysicsParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    pub n_points: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig { n_points: 100 }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::Config(format!(
                "n_points must be at least 2, got {}",
                self.n_points
            )));
        }
        Ok(())
    }

    /// Left endpoints `s_ini + k * ds` for `k = 0..n_points`.
    pub fn grid(&self, s_ini: f64, s_final: f64) -> Vec<f64> {
        let ds = (s_final - s_ini) / self.n_points as f64;
        (0..self.n_points).map(|k| s_ini + k as f64 * ds).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Minutes.
    pub t_c: f64,
    pub soc_grid: Vec<f64>,
    pub power_profile: Vec<f64>,
    pub current_profile: Vec<f64>,
}

/// Anything that predicts charging power (kW) along an SoC grid.
pub trait PowerModel {
    fn power_at(&self, s: f64) -> Result<f64>;

    /// Powers for the whole grid; models with batch or sequential
    /// inference override this.
    fn power_profile(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&s| self.power_at(s)).collect()
    }
}

impl<F: Fn(f64) -> f64> PowerModel for F {
    fn power_at(&self, s: f64) -> Result<f64> {
        Ok(self(s))
    }
}

/// Integrates the clamped model power over `cfg.n_points` left-endpoint
/// cells from `s_ini` to `s_final`.
pub fn predict_charging_time(
    scenario: &ChargingScenario,
    model: &(impl PowerModel + ?Sized),
    cfg: &IntegrationConfig,
) -> Result<PredictionResult> {
    cfg.validate()?;
    scenario.validate()?;
    let limits = scenario.limits()?;
    let grid = cfg.grid(scenario.s_ini, scenario.s_final);
    let ds = (scenario.s_final - scenario.s_ini) / cfg.n_points as f64;
    let raw = model.power_profile(&grid)?;
    if raw.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: raw.len(),
        });
    }
    let cap = scenario.p_station.min(limits.p_max_eff);
    let mut power = Vec::with_capacity(grid.len());
    let mut current = Vec::with_capacity(grid.len());
    let mut inv_sum = 0.0;
    for (&s, &p) in grid.iter().zip(&raw) {
        let p = p.min(cap);
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Integration { soc: s, power: p });
        }
        inv_sum += 1.0 / p;
        power.push(p);
        current.push(1000.0 * p / pack_voltage(s, &scenario.vehicle));
    }
    Ok(PredictionResult {
        t_c: 60.0 * limits.c_bat_eff * ds * inv_sum,
        soc_grid: grid,
        power_profile: power,
        current_profile: current,
    })
}

/// Power the constant-power baseline assumes for the whole session (kW).
pub fn baseline_power(scenario: &ChargingScenario) -> Result<f64> {
    let limits = scenario.limits()?;
    let eta = temperature_efficiency(scenario.t_amb, &PhysicsParams::default())?;
    Ok((limits.p_max_eff * eta)
        .min(scenario.p_station)
        .min(scenario.vehicle.p_cable))
}

/// Charging time (minutes) at constant power, ignoring the CV taper.
pub fn linear_baseline_time(scenario: &ChargingScenario) -> Result<f64> {
    scenario.validate()?;
    let limits = scenario.limits()?;
    let p = baseline_power(scenario)?;
    Ok(60.0 * limits.c_bat_eff * (scenario.s_final - scenario.s_ini) / p)
}

/// Gradient-boosted power model for one fixed scenario context.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticalModel<'a> {
    pub ensemble: &'a TreeEnsemble,
    pub context: FeatureContext,
}

impl<'a> AnalyticalModel<'a> {
    pub fn new(ensemble: &'a TreeEnsemble, scenario: &ChargingScenario) -> Result<Self> {
        if !ensemble.scaler.is_fitted() {
            return Err(Error::State("ensemble has no fitted scaler".into()));
        }
        Ok(AnalyticalModel {
            ensemble,
            context: FeatureContext::from(scenario),
        })
    }

    fn standardized(&self, s: f64) -> Result<[f64; N_FEATURES]> {
        let mut z = [0.0; N_FEATURES];
        self.ensemble
            .scaler
            .apply_into(&engineer(s, &self.context), &mut z)?;
        Ok(z)
    }
}

impl PowerModel for AnalyticalModel<'_> {
    fn power_at(&self, s: f64) -> Result<f64> {
        self.ensemble.predict(&self.standardized(s)?)
    }

    fn power_profile(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let rows: Vec<[f64; N_FEATURES]> =
            grid.iter().map(|&s| self.standardized(s)).collect::<Result<_>>()?;
        self.ensemble.predict_batch(&rows)
    }
}

/// Wraps an ensemble as a power model for `scenario`.
pub fn analytical_power_model<'a>(
    ensemble: &'a TreeEnsemble,
    scenario: &ChargingScenario,
) -> Result<AnalyticalModel<'a>> {
    AnalyticalModel::new(ensemble, scenario)
}
