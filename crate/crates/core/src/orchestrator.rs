//! Progressive hand-over from the analytical model to the agent as
//! charging sessions accumulate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbm::TreeEnsemble;
use crate::physics::ChargingScenario;
use crate::predictor::{
    analytical_power_model, predict_charging_time, IntegrationConfig, PowerModel, PredictionResult,
};
use crate::rl::{
    continue_training, greedy_profile, nearest_action, seed_buffer, ChargingEnv, DqnAgent,
    DqnConfig, EnvConfig, ReplayBuffer, RlState, Seeding, TrainOptions, Transition, STATE_DIM,
};
use crate::simulator::{SessionTrace, SimulatorConfig};

/// First sample count of the transition stage.
pub const COLD_START_END: usize = 500;
/// First sample count of the dominance stage.
pub const DOMINANCE_START: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ColdStart,
    Transition,
    Dominance,
}

pub fn stage_for(n_samples: usize) -> Stage {
    if n_samples < COLD_START_END {
        Stage::ColdStart
    } else if n_samples < DOMINANCE_START {
        Stage::Transition
    } else {
        Stage::Dominance
    }
}

/// Exploration rate for the agent at `n_samples`; `None` during cold start,
/// when the agent selects no actions.
pub fn epsilon_for(n_samples: usize) -> Option<f64> {
    match stage_for(n_samples) {
        Stage::ColdStart => None,
        Stage::Transition => {
            let frac = (n_samples - COLD_START_END) as f64 / (DOMINANCE_START - COLD_START_END) as f64;
            Some(0.3 - 0.2 * frac)
        }
        Stage::Dominance => Some(0.05),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytical,
    Rl,
    RlFallback,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Analytical => "analytical",
            Provenance::Rl => "rl",
            Provenance::RlFallback => "rl-fallback",
        }
    }
}

/// Per-dimension `[min, max]` of every state seen in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodEnvelope {
    pub min: RlState,
    pub max: RlState,
}

impl OodEnvelope {
    pub fn from_state(s: &RlState) -> Self {
        OodEnvelope { min: *s, max: *s }
    }

    pub fn extend(&mut self, s: &RlState) {
        for i in 0..STATE_DIM {
            self.min[i] = self.min[i].min(s[i]);
            self.max[i] = self.max[i].max(s[i]);
        }
    }

    pub fn contains(&self, s: &RlState) -> bool {
        (0..STATE_DIM).all(|i| s[i] >= self.min[i] && s[i] <= self.max[i])
    }

    /// True if any dimension of `s` lies outside the envelope widened by
    /// `margin` times its width on each side.
    pub fn is_ood(&self, s: &RlState, margin: f64) -> bool {
        (0..STATE_DIM).any(|i| {
            let pad = margin * (self.max[i] - self.min[i]);
            s[i] < self.min[i] - pad || s[i] > self.max[i] + pad
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    /// Relative widening of the OOD envelope.
    pub ood_margin: f64,
    /// Episodes run at each stage crossing (0 disables automatic training).
    pub kickoff_episodes: usize,
    pub dqn: DqnConfig,
    pub simulator: SimulatorConfig,
    pub integration: IntegrationConfig,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            ood_margin: 0.05,
            kickoff_episodes: 1000,
            dqn: DqnConfig::default(),
            simulator: SimulatorConfig::default(),
            integration: IntegrationConfig::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ood_margin >= 0.0 && self.ood_margin.is_finite()) {
            return Err(Error::Config(format!("ood_margin must be >= 0, got {}", self.ood_margin)));
        }
        self.dqn.validate()?;
        self.simulator.validate()?;
        self.integration.validate()
    }

    fn env(&self) -> EnvConfig {
        EnvConfig {
            target: self.dqn.target,
            simulator: self.simulator,
            reward: self.dqn.reward,
        }
    }
}

/// What an ingest triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestEvent {
    None,
    /// The agent was created, seeded and trained for the first time.
    TrainingStarted,
    /// The existing agent was trained further on the accumulated sessions.
    TrainingContinued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPrediction {
    pub result: PredictionResult,
    pub provenance: Provenance,
    pub stage: Stage,
    /// Grid points whose power came from the analytical model.
    pub fallback_points: usize,
}

/// Analytical model plus an optional agent, routed by stage.
#[derive(Debug, Clone)]
pub struct HybridPredictor {
    pub cfg: OrchestratorConfig,
    pub analytical: TreeEnsemble,
    pub agent: Option<DqnAgent>,
    pub n_samples: usize,
    pub ood: Option<OodEnvelope>,
    /// Transitions from ingested sessions (observed power as the action).
    pub experience: ReplayBuffer,
    pub sessions: Vec<SessionTrace>,
    pub episodes_trained: usize,
}

impl HybridPredictor {
    pub fn new(analytical: TreeEnsemble, cfg: OrchestratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(HybridPredictor {
            experience: ReplayBuffer::new(cfg.dqn.buffer_capacity)?,
            cfg,
            analytical,
            agent: None,
            n_samples: 0,
            ood: None,
            sessions: Vec::new(),
            episodes_trained: 0,
        })
    }

    /// Wraps an already trained agent; its states seen on `sessions` form
    /// the OOD envelope.
    pub fn with_agent(
        analytical: TreeEnsemble,
        agent: DqnAgent,
        sessions: &[SessionTrace],
        n_samples: usize,
        cfg: OrchestratorConfig,
    ) -> Result<Self> {
        let mut hp = HybridPredictor::new(analytical, cfg)?;
        for t in sessions {
            hp.record(t)?;
        }
        hp.sessions.clear();
        hp.n_samples = n_samples;
        hp.agent = Some(agent);
        Ok(hp)
    }

    pub fn stage(&self) -> Stage {
        stage_for(self.n_samples)
    }

    fn record(&mut self, trace: &SessionTrace) -> Result<()> {
        let (mut env, mut state) = ChargingEnv::reset(trace, self.cfg.env())?;
        let p_nom = trace.scenario.vehicle.p_max_nom;
        self.extend_ood(&state);
        while !env.is_done() {
            let action = nearest_action(env.actual_power(), p_nom);
            let (next, r, done) = env.step(action)?;
            self.extend_ood(&next);
            self.experience.push(Transition {
                state,
                action,
                reward: r / p_nom,
                next_state: next,
                done,
            });
            state = next;
        }
        self.sessions.push(trace.clone());
        Ok(())
    }

    fn extend_ood(&mut self, s: &RlState) {
        match &mut self.ood {
            Some(env) => env.extend(s),
            None => self.ood = Some(OodEnvelope::from_state(s)),
        }
    }

    /// Adds one observed session: its transitions go to the experience
    /// buffer, the OOD envelope grows, and crossing a stage threshold
    /// starts or continues agent training.
    pub fn ingest_session(&mut self, trace: &SessionTrace) -> Result<IngestEvent> {
        let before = self.stage();
        self.record(trace)?;
        self.n_samples += 1;
        let after = self.stage();
        if after == before || self.cfg.kickoff_episodes == 0 {
            return Ok(IngestEvent::None);
        }
        self.train(self.cfg.kickoff_episodes)
    }

    /// Trains the agent for `episodes` more episodes on the ingested
    /// sessions, creating and seeding it first if needed.
    pub fn train(&mut self, episodes: usize) -> Result<IngestEvent> {
        if self.sessions.is_empty() {
            return Err(Error::Precondition("no sessions ingested yet".into()));
        }
        let (agent, event) = match self.agent.take() {
            Some(a) => (a, IngestEvent::TrainingContinued),
            None => {
                let mut a = DqnAgent::new(self.cfg.dqn.clone())?;
                let refs: Vec<&SessionTrace> = self.sessions.iter().collect();
                seed_buffer(&mut a, &refs, &self.analytical, Seeding::Analytical, self.cfg.env())?;
                for t in self.experience.iter() {
                    a.buffer.push(*t);
                }
                (a, IngestEvent::TrainingStarted)
            }
        };
        let opts = TrainOptions {
            episodes,
            simulator: self.cfg.simulator,
            ..TrainOptions::default()
        };
        let out = continue_training(agent, &self.sessions, &self.analytical, &opts, self.episodes_trained)?;
        self.episodes_trained += episodes;
        self.agent = Some(out.agent);
        Ok(event)
    }

    pub fn predict(&self, scenario: &ChargingScenario) -> Result<HybridPrediction> {
        let stage = self.stage();
        let analytical = analytical_power_model(&self.analytical, scenario)?;
        if stage != Stage::Dominance {
            return Ok(HybridPrediction {
                result: predict_charging_time(scenario, &analytical, &self.cfg.integration)?,
                provenance: Provenance::Analytical,
                stage,
                fallback_points: 0,
            });
        }
        let agent = self.agent.as_ref().ok_or_else(|| {
            Error::Config("dominance stage reached but no trained agent is loaded".into())
        })?;
        let ood = self
            .ood
            .ok_or_else(|| Error::Config("agent has no recorded training states".into()))?;
        let grid = self.cfg.integration.grid(scenario.s_ini, scenario.s_final);
        let fallback = analytical.power_profile(&grid)?;
        let margin = self.cfg.ood_margin;
        let (profile, n_fallback) = greedy_profile(agent, scenario, &grid, &mut |k, state| {
            Ok(ood.is_ood(state, margin).then(|| fallback[k]))
        })?;
        let model = FixedProfile(profile);
        Ok(HybridPrediction {
            result: predict_charging_time(scenario, &model, &self.cfg.integration)?,
            provenance: if n_fallback > 0 {
                Provenance::RlFallback
            } else {
                Provenance::Rl
            },
            stage,
            fallback_points: n_fallback,
        })
    }

    /// Writes the analytical model, agent, experience buffer, sessions and
    /// counters into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.analytical.save(&dir.join(ANALYTICAL_FILE))?;
        let agent_path = dir.join(AGENT_FILE);
        match &self.agent {
            Some(a) => a.save(&agent_path)?,
            None if agent_path.exists() => fs::remove_file(&agent_path).map_err(|e| Error::io(&agent_path, e))?,
            None => {}
        }
        write_json(&dir.join(BUFFER_FILE), &self.experience)?;
        write_json(&dir.join(SESSIONS_FILE), &self.sessions)?;
        let state = PersistedState {
            n_samples: self.n_samples,
            episodes_trained: self.episodes_trained,
            ood: self.ood,
            config: self.cfg.clone(),
        };
        write_json(&dir.join(STATE_FILE), &state)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let state: PersistedState = read_json(&dir.join(STATE_FILE))?;
        let analytical = TreeEnsemble::load(&dir.join(ANALYTICAL_FILE))?;
        let agent_path = dir.join(AGENT_FILE);
        let agent = if agent_path.exists() {
            Some(DqnAgent::load(&agent_path)?)
        } else {
            None
        };
        let mut hp = HybridPredictor::new(analytical, state.config)?;
        hp.agent = agent;
        hp.n_samples = state.n_samples;
        hp.episodes_trained = state.episodes_trained;
        hp.ood = state.ood;
        hp.experience = read_json(&dir.join(BUFFER_FILE))?;
        hp.sessions = read_json(&dir.join(SESSIONS_FILE))?;
        Ok(hp)
    }
}

const ANALYTICAL_FILE: &str = "analytical.json";
const AGENT_FILE: &str = "agent.bin";
const BUFFER_FILE: &str = "buffer.json";
const SESSIONS_FILE: &str = "sessions.json";
const STATE_FILE: &str = "state.json";

#[derive(Serialize, Deserialize)]
struct PersistedState {
    n_samples: usize,
    episodes_trained: usize,
    ood: Option<OodEnvelope>,
    config: OrchestratorConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct FixedProfile(Vec<f64>);

impl PowerModel for FixedProfile {
    fn power_at(&self, _s: f64) -> Result<f64> {
        Err(Error::State("fixed profile has no pointwise evaluation".into()))
    }

    fn power_profile(&self, grid: &[f64]) -> Result<Vec<f64>> {
        if grid.len() != self.0.len() {
            return Err(Error::DimensionMismatch {
                expected: self.0.len(),
                got: grid.len(),
            });
        }
        Ok(self.0.clone())
    }
}
