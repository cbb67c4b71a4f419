use serde::{Deserialize, Serialize};

use super::{action_power, reward, RewardConfig, RlState};
use crate::error::{Error, Result};
use crate::physics::{
    pack_voltage, taper_factor, temperature_efficiency, ChargingScenario, DegradedLimits,
};
use crate::simulator::{ground_truth_power, SessionTrace, SimulatorConfig};

/// Reference power for the CV-region reward term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPower {
    /// Noise-free simulator power, including the current taper and caps.
    Simulator,
    /// `p_max_eff * eta_T * taper(s)`, ignoring station and cable caps.
    Physics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub target: TargetPower,
    pub simulator: SimulatorConfig,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            target: TargetPower::Simulator,
            simulator: SimulatorConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

/// Builds the observation at grid point `k` given the time already spent
/// and the current of the previous cell.
pub fn observe(scenario: &ChargingScenario, c_eff: f64, s: f64, current: f64, t_elapsed: f64) -> RlState {
    [
        s,
        scenario.soh,
        scenario.t_amb,
        scenario.p_station,
        scenario.vehicle.c_bat_nom,
        pack_voltage(s, &scenario.vehicle),
        current,
        t_elapsed,
        c_eff * (s - scenario.s_ini),
    ]
}

/// One charging session replayed step by step on its stored SoC grid.
pub struct ChargingEnv<'a> {
    trace: &'a SessionTrace,
    cfg: EnvConfig,
    limits: DegradedLimits,
    k: usize,
    state: RlState,
}

impl<'a> ChargingEnv<'a> {
    pub fn reset(trace: &'a SessionTrace, cfg: EnvConfig) -> Result<(Self, RlState)> {
        if trace.len() < 2 {
            return Err(Error::Precondition("trace needs at least two grid points".into()));
        }
        let limits = trace.scenario.limits()?;
        let state = observe(&trace.scenario, limits.c_bat_eff, trace.soc_grid[0], 0.0, 0.0);
        Ok((
            ChargingEnv {
                trace,
                cfg,
                limits,
                k: 0,
                state,
            },
            state,
        ))
    }

    pub fn n_steps(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn state(&self) -> &RlState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.n_steps()
    }

    pub fn p_max_nom(&self) -> f64 {
        self.trace.scenario.vehicle.p_max_nom
    }

    /// Noise-free reference power for the CV reward term at SoC `s`.
    pub fn target_power(&self, s: f64) -> Result<f64> {
        let sc = &self.trace.scenario;
        match self.cfg.target {
            TargetPower::Simulator => ground_truth_power(s, sc, &self.trace.physics, &self.cfg.simulator),
            TargetPower::Physics => Ok(self.limits.p_max_eff
                * temperature_efficiency(sc.t_amb, &self.trace.physics)?
                * taper_factor(s, &self.trace.physics)),
        }
    }

    /// Actual power of the current cell.
    pub fn actual_power(&self) -> f64 {
        self.trace.power_kw[self.k]
    }

    /// Applies `action`; returns the next state, the raw reward and whether
    /// the session is finished.
    pub fn step(&mut self, action: usize) -> Result<(RlState, f64, bool)> {
        if self.is_done() {
            return Err(Error::State("step called on a finished episode".into()));
        }
        let sc = &self.trace.scenario;
        let s = self.trace.soc_grid[self.k];
        let p_actual = self.trace.power_kw[self.k];
        let p_pred = action_power(action, sc.vehicle.p_max_nom)?.min(sc.p_station);
        let r = reward(
            p_pred,
            p_actual,
            self.target_power(s)?,
            s,
            sc.soh,
            sc.vehicle.p_max_nom,
            &self.cfg.reward,
        )?;
        let s_next = self.trace.soc_grid[self.k + 1];
        let dt = 60.0 * self.limits.c_bat_eff * (s_next - s) / p_actual;
        let current = 1000.0 * p_actual / pack_voltage(s, &sc.vehicle);
        self.state = observe(sc, self.limits.c_bat_eff, s_next, current, self.state[7] + dt);
        self.k += 1;
        Ok((self.state, r, self.is_done()))
    }
}
