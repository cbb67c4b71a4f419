//! Deep Q-learning over charging sessions: one episode walks the SoC grid
//! of a session and each action predicts the power of the next cell.

mod agent;
mod buffer;
mod env;
pub mod network;

pub use agent::{
    agent_times, argmax, continue_training, greedy_profile, schedule_samples, seed_buffer,
    select_action, td_loss_and_grad, td_update, train_agent, AgentPowerModel, DqnAgent,
    EpisodeRecord, EvalRecord, Seeding, TrainOptions, TrainingHistory, TrainingOutcome,
};
pub use buffer::ReplayBuffer;
pub use env::{observe, ChargingEnv, EnvConfig, TargetPower};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::effective_max_power;

pub const N_ACTIONS: usize = 50;
pub const STATE_DIM: usize = 9;

/// Raw agent observation:
/// `[soc, soh, t_amb, p_station, c_bat_nom, v_pack, current, t_elapsed (min), e_delivered (kWh)]`.
pub type RlState = [f64; STATE_DIM];

/// Fixed denominators that bring every state entry to order one.
pub const STATE_SCALE: RlState = [1.0, 1.0, 40.0, 150.0, 100.0, 800.0, 400.0, 300.0, 100.0];

pub fn normalize_state<T: network::Scalar>(state: &RlState) -> [T; STATE_DIM] {
    let mut out = [T::zero(); STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = T::from_f64(state[i] / STATE_SCALE[i]).unwrap();
    }
    out
}

/// Power level (kW) of action `index`: `index * p_max_nom / 49`.
pub fn action_power(index: usize, p_max_nom: f64) -> Result<f64> {
    if index >= N_ACTIONS {
        return Err(Error::Domain(format!(
            "action index {index} outside 0..{N_ACTIONS}"
        )));
    }
    Ok(index as f64 * p_max_nom / (N_ACTIONS - 1) as f64)
}

/// Index of the power level closest to `power`.
pub fn nearest_action(power: f64, p_max_nom: f64) -> usize {
    let step = p_max_nom / (N_ACTIONS - 1) as f64;
    ((power / step).round().max(0.0) as usize).min(N_ACTIONS - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda_soh: f64,
    pub lambda_cv: f64,
    pub s_cv: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_soh: 10.0,
            lambda_cv: 5.0,
            s_cv: 0.8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_soh >= 0.0 && self.lambda_cv >= 0.0) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Step reward: prediction error, a penalty for exceeding the degraded
/// power limit, and in the CV region a penalty for missing the taper target.
pub fn reward(
    p_pred: f64,
    p_actual: f64,
    p_target: f64,
    s: f64,
    soh: f64,
    p_max_nom: f64,
    cfg: &RewardConfig,
) -> Result<f64> {
    let p_eff = effective_max_power(p_max_nom, soh)?;
    let mut r = -(p_pred - p_actual).abs() - cfg.lambda_soh * (p_pred - p_eff).max(0.0);
    if s > cfg.s_cv {
        r -= cfg.lambda_cv * (p_pred - p_target).abs();
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: RlState,
    pub action: usize,
    /// Reward divided by the session's nominal power.
    pub reward: f64,
    pub next_state: RlState,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub init_buffer: usize,
    pub dropout: f64,
    pub target_sync_steps: u64,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    pub reward: RewardConfig,
    pub target: TargetPower,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![256, 128, 64],
            learning_rate: 1e-4,
            gamma: 0.99,
            buffer_capacity: 50_000,
            batch_size: 128,
            init_buffer: 1000,
            dropout: 0.2,
            target_sync_steps: 500,
            train_every: 4,
            reward: RewardConfig::default(),
            target: TargetPower::Simulator,
            seed: 42,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden sizes {:?}", self.hidden)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config(
                "batch_size must be > 0 and fit in the buffer".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.target_sync_steps == 0 || self.train_every == 0 {
            return Err(Error::Config(
                "target_sync_steps and train_every must be > 0".into(),
            ));
        }
        self.reward.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn action_levels() {
        assert_eq!(action_power(0, 150.0).unwrap(), 0.0);
        assert_eq!(action_power(49, 150.0).unwrap(), 150.0);
        assert!((action_power(7, 150.0).unwrap() - 21.42857).abs() < 1e-5);
        assert!(action_power(50, 150.0).is_err());
        for i in 0..N_ACTIONS {
            assert_eq!(nearest_action(action_power(i, 120.0).unwrap(), 120.0), i);
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(reward(40.0, 40.0, 0.0, 0.5, 1.0, 150.0, &cfg).unwrap(), 0.0);
        // Exceeds the degraded limit (p_eff = 150 at soh 1) by 2 kW.
        assert!((reward(152.0, 152.0, 0.0, 0.5, 1.0, 150.0, &cfg).unwrap() + 20.0).abs() < 1e-9);
        let target = 150.0 * (-1.0f64).exp();
        assert_eq!(reward(target, target, target, 0.9, 1.0, 150.0, &cfg).unwrap(), 0.0);
        assert!((target - 55.18).abs() < 5e-3);
    }

    proptest! {
        #[test]
        fn reward_is_non_positive(
            p in 0.0f64..300.0, a in 0.1f64..300.0, t in 0.1f64..300.0,
            s in 0.0f64..1.0, soh in 0.7f64..=1.0, pn in 20.0f64..300.0,
        ) {
            let cfg = RewardConfig::default();
            let r = reward(p, a, t, s, soh, pn, &cfg).unwrap();
            prop_assert!(r <= 0.0);
            let p_eff = effective_max_power(pn, soh).unwrap();
            let zero = p == a && p <= p_eff && (s <= 0.8 || p == t);
            prop_assert_eq!(r == 0.0, zero);
        }

        #[test]
        fn action_decoding_is_bijective(pn in 10.0f64..400.0) {
            let levels: Vec<f64> = (0..N_ACTIONS).map(|i| action_power(i, pn).unwrap()).collect();
            for w in levels.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
            for (i, p) in levels.iter().enumerate() {
                prop_assert_eq!(nearest_action(*p, pn), i);
            }
        }
    }
}
