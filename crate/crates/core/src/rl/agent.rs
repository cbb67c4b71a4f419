use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, Mode, QNetwork, Scalar};
use super::{
    action_power, nearest_action, normalize_state, observe, ChargingEnv, DqnConfig, EnvConfig,
    ReplayBuffer, RlState, Transition, N_ACTIONS, STATE_DIM, STATE_SCALE,
};
use crate::error::{Error, Result};
use crate::eval::metrics;
use crate::gbm::TreeEnsemble;
use crate::orchestrator::{epsilon_for, COLD_START_END, DOMINANCE_START};
use crate::physics::{pack_voltage, ChargingScenario};
use crate::predictor::{
    analytical_power_model, predict_charging_time, IntegrationConfig, PowerModel,
};
use crate::simulator::{SessionTrace, SimulatorConfig};

const AGENT_FORMAT_VERSION: u32 = 1;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the network's Q-values for `state`.
pub fn select_action<T: Scalar>(
    net: &QNetwork<T>,
    state: &[T],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.output_dim()));
    }
    Ok(argmax(&net.forward_one(state)?))
}

fn state_matrix<T: Scalar>(rows: impl ExactSizeIterator<Item = RlState>) -> Array2<T> {
    let n = rows.len();
    let mut m = Array2::zeros((n, STATE_DIM));
    for (i, s) in rows.enumerate() {
        for (j, v) in normalize_state::<T>(&s).into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Mean squared TD error of `batch` and its gradient for `net`.
pub fn td_loss_and_grad<T: Scalar>(
    net: &QNetwork<T>,
    target: &QNetwork<T>,
    batch: &[&Transition],
    gamma: f64,
    mode: Mode,
) -> Result<(f64, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("TD update needs a non-empty batch".into()));
    }
    let b = batch.len();
    let states = state_matrix::<T>(batch.iter().map(|t| t.state));
    let next = state_matrix::<T>(batch.iter().map(|t| t.next_state));
    let q_next = target.forward(next.view(), Mode::Eval)?;
    let (q, cache) = net.forward_cached(states.view(), mode, true)?;
    let mut dq = Array2::<T>::zeros(q.raw_dim());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        if t.action >= q.ncols() {
            return Err(Error::Domain(format!("action {} outside the network output", t.action)));
        }
        let bootstrap = if t.done {
            0.0
        } else {
            let row = q_next.row(i);
            row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap()))
        };
        let y = t.reward + gamma * bootstrap;
        let err = q[[i, t.action]].to_f64().unwrap() - y;
        loss += err * err;
        dq[[i, t.action]] = T::from_f64(2.0 * err / b as f64).unwrap();
    }
    let grads = net.backward(&cache.expect("cache requested"), &dq);
    Ok((loss / b as f64, grads))
}

/// One Adam step on the mean squared TD error; returns the pre-step loss.
pub fn td_update<T: Scalar>(
    net: &mut QNetwork<T>,
    target: &QNetwork<T>,
    opt: &mut Adam<T>,
    batch: &[&Transition],
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (loss, grads) = td_loss_and_grad(net, target, batch, gamma, Mode::Train(rng))?;
    opt.update(&mut net.params, &grads);
    Ok(loss)
}

/// Online and target networks, optimizer and replay buffer.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub cfg: DqnConfig,
    pub online: QNetwork<f32>,
    pub target: QNetwork<f32>,
    opt: Adam<f32>,
    pub buffer: ReplayBuffer,
    explore_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    pub grad_steps: u64,
    pub syncs: u64,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let online = QNetwork::new(STATE_DIM, &cfg.hidden, N_ACTIONS, cfg.dropout, &mut init_rng);
        let mut explore_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        explore_rng.set_stream(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(2);
        Ok(DqnAgent {
            target: online.clone(),
            opt: Adam::new(online.params.len(), cfg.learning_rate),
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            online,
            explore_rng,
            dropout_rng,
            grad_steps: 0,
            syncs: 0,
            cfg,
        })
    }

    pub fn q_values(&self, state: &RlState) -> Result<Vec<f32>> {
        self.online.forward_one(&normalize_state::<f32>(state))
    }

    pub fn greedy_action(&self, state: &RlState) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)?;
        self.syncs += 1;
        Ok(())
    }

    /// Samples a minibatch and takes one gradient step, once the buffer
    /// holds at least one batch. Syncs the target every
    /// `target_sync_steps` steps.
    pub fn learn(&mut self) -> Result<Option<f64>> {
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.explore_rng)?;
        let loss = td_update(
            &mut self.online,
            &self.target,
            &mut self.opt,
            &batch,
            self.cfg.gamma,
            &mut self.dropout_rng,
        )?;
        self.grad_steps += 1;
        if self.grad_steps.is_multiple_of(self.cfg.target_sync_steps) {
            self.sync_target()?;
        }
        Ok(Some(loss))
    }

    /// Writes a JSON header line followed by the online weights as
    /// little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = AgentHeader {
            format_version: AGENT_FORMAT_VERSION,
            config: self.cfg.clone(),
            state_scale: STATE_SCALE.to_vec(),
            layer_sizes: self.online.dims().to_vec(),
            n_params: self.online.params.len(),
            grad_steps: self.grad_steps,
        };
        let mut bytes = serde_json::to_vec(&header)?;
        bytes.push(b'\n');
        bytes.reserve(4 * self.online.params.len());
        for p in &self.online.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DqnAgent> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let split = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Format("agent file has no header line".into()))?;
        let header: AgentHeader = serde_json::from_slice(&bytes[..split])?;
        if header.format_version != AGENT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported agent format version {}",
                header.format_version
            )));
        }
        if header.state_scale != STATE_SCALE {
            return Err(Error::Format("agent was trained with a different state scaling".into()));
        }
        let body = &bytes[split + 1..];
        if body.len() != 4 * header.n_params {
            return Err(Error::Format(format!(
                "agent file holds {} weight bytes, header says {}",
                body.len(),
                4 * header.n_params
            )));
        }
        let params: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut agent = DqnAgent::new(header.config)?;
        agent.online = QNetwork::from_params(header.layer_sizes, agent.cfg.dropout, params)?;
        agent.target = agent.online.clone();
        agent.grad_steps = header.grad_steps;
        Ok(agent)
    }
}

#[derive(Serialize, Deserialize)]
struct AgentHeader {
    format_version: u32,
    config: DqnConfig,
    state_scale: Vec<f64>,
    layer_sizes: Vec<usize>,
    n_params: usize,
    grad_steps: u64,
}

/// Greedy agent powers along `grid` for `scenario`, feeding its own
/// clamped predictions back into the current and elapsed-time inputs.
/// `override_power` may replace the power at any point (returning `Some`);
/// the returned count says how often it did.
pub fn greedy_profile(
    agent: &DqnAgent,
    scenario: &ChargingScenario,
    grid: &[f64],
    override_power: &mut dyn FnMut(usize, &RlState) -> Result<Option<f64>>,
) -> Result<(Vec<f64>, usize)> {
    let limits = scenario.limits()?;
    let cap = scenario.p_station.min(limits.p_max_eff);
    let p_nom = scenario.vehicle.p_max_nom;
    let floor = action_power(1, p_nom)?.min(cap);
    let mut current = 0.0;
    let mut t_elapsed = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    let mut overrides = 0;
    for (k, &s) in grid.iter().enumerate() {
        let state = observe(scenario, limits.c_bat_eff, s, current, t_elapsed);
        let p = match override_power(k, &state)? {
            Some(p) => {
                overrides += 1;
                p.min(cap)
            }
            // A zero-power level would stall the session; use the lowest
            // non-zero level instead.
            None => action_power(agent.greedy_action(&state)?, p_nom)?.min(cap).max(floor),
        };
        out.push(p);
        let s_next = grid.get(k + 1).copied().unwrap_or(scenario.s_final);
        if p > 0.0 {
            t_elapsed += 60.0 * limits.c_bat_eff * (s_next - s) / p;
        }
        current = 1000.0 * p / pack_voltage(s, &scenario.vehicle);
    }
    Ok((out, overrides))
}

/// The greedy agent as a power model for one scenario.
pub struct AgentPowerModel<'a> {
    pub agent: &'a DqnAgent,
    pub scenario: ChargingScenario,
}

impl PowerModel for AgentPowerModel<'_> {
    fn power_at(&self, s: f64) -> Result<f64> {
        let limits = self.scenario.limits()?;
        let state = observe(&self.scenario, limits.c_bat_eff, s, 0.0, 0.0);
        action_power(self.agent.greedy_action(&state)?, self.scenario.vehicle.p_max_nom)
    }

    fn power_profile(&self, grid: &[f64]) -> Result<Vec<f64>> {
        greedy_profile(self.agent, &self.scenario, grid, &mut |_, _| Ok(None)).map(|r| r.0)
    }
}

/// How the replay buffer is filled before the first gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Seeding {
    /// Actions closest to the analytical model's power predictions.
    Analytical,
    /// Uniformly random actions.
    Random,
}

#[derive(Debug, Clone)]
pub struct TrainOptions<'a> {
    pub episodes: usize,
    pub seeding: Seeding,
    pub simulator: SimulatorConfig,
    /// Sessions scored every `eval_every` episodes (0 disables).
    pub eval_sessions: &'a [SessionTrace],
    pub eval_every: usize,
    /// Stop once the evaluation R² reaches this value.
    pub stop_at_r2: Option<f64>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            episodes: 2000,
            seeding: Seeding::Analytical,
            simulator: SimulatorConfig::default(),
            eval_sessions: &[],
            eval_every: 0,
            stop_at_r2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Mean raw reward per step.
    pub reward: f64,
    /// Mean over steps of the largest Q-value.
    pub mean_q: f64,
    pub epsilon: f64,
    /// Mean TD loss of the episode's updates; `None` when none ran.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: usize,
    pub r2: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub seeded: usize,
    pub grad_steps: u64,
    pub target_syncs: u64,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,reward,mean_q,epsilon,loss\n");
        for r in &self.episodes {
            let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.episode, r.reward, r.mean_q, r.epsilon, loss
            ));
        }
        out
    }

    /// First evaluated episode count whose R² reached `threshold`.
    pub fn episodes_to_r2(&self, threshold: f64) -> Option<usize> {
        self.evals.iter().find(|e| e.r2 >= threshold).map(|e| e.episode)
    }
}

pub struct TrainingOutcome {
    pub agent: DqnAgent,
    pub history: TrainingHistory,
}

/// Sample count that episode `e` of `total` stands for in the staged
/// exploration schedule: episodes are spread evenly from the start of the
/// transition stage, so the final third of training runs in dominance.
pub fn schedule_samples(e: usize, total: usize) -> usize {
    let span = (DOMINANCE_START - COLD_START_END) * 3 / 2;
    COLD_START_END + (e * span) / total.max(1)
}

/// Greedy charging-time predictions of `agent` for each trace.
pub fn agent_times(agent: &DqnAgent, traces: &[SessionTrace]) -> Result<Vec<f64>> {
    let cfg = IntegrationConfig::default();
    traces
        .iter()
        .map(|t| {
            let model = AgentPowerModel {
                agent,
                scenario: t.scenario,
            };
            predict_charging_time(&t.scenario, &model, &cfg).map(|r| r.t_c)
        })
        .collect()
}

fn evaluate(agent: &DqnAgent, traces: &[SessionTrace], episode: usize) -> Result<EvalRecord> {
    let pred = agent_times(agent, traces)?;
    let truth: Vec<f64> = traces.iter().map(|t| t.t_c_true).collect();
    let m = metrics(&truth, &pred)?;
    Ok(EvalRecord {
        episode,
        r2: m.r2,
        mape: m.mape,
    })
}

/// Fills the buffer with `cfg.init_buffer` transitions from rollouts over
/// `sessions` (cycled in order).
pub fn seed_buffer(
    agent: &mut DqnAgent,
    sessions: &[&SessionTrace],
    analytical: &TreeEnsemble,
    seeding: Seeding,
    env_cfg: EnvConfig,
) -> Result<usize> {
    if sessions.is_empty() {
        return Err(Error::Precondition("no sessions available for buffer seeding".into()));
    }
    let target = agent.cfg.init_buffer;
    let mut added = 0;
    let mut i = 0;
    while added < target {
        let trace = sessions[i % sessions.len()];
        i += 1;
        let sc = &trace.scenario;
        let p_nom = sc.vehicle.p_max_nom;
        let actions: Vec<usize> = match seeding {
            Seeding::Analytical => {
                let model = analytical_power_model(analytical, sc)?;
                let grid = &trace.soc_grid[..trace.len() - 1];
                let cap = sc.p_station.min(sc.limits()?.p_max_eff);
                model
                    .power_profile(grid)?
                    .into_iter()
                    .map(|p| nearest_action(p.min(cap), p_nom))
                    .collect()
            }
            Seeding::Random => (0..trace.len() - 1)
                .map(|_| agent.explore_rng.random_range(0..N_ACTIONS))
                .collect(),
        };
        let (mut env, mut state) = ChargingEnv::reset(trace, env_cfg)?;
        for a in actions {
            if added >= target {
                break;
            }
            let (next, r, done) = env.step(a)?;
            agent.buffer.push(Transition {
                state,
                action: a,
                reward: r / p_nom,
                next_state: next,
                done,
            });
            added += 1;
            state = next;
        }
    }
    Ok(added)
}

/// Seeds the buffer, then runs epsilon-greedy episodes over `sessions`
/// (reshuffled each pass) with a gradient step every `train_every`
/// environment steps.
pub fn train_agent(
    sessions: &[SessionTrace],
    analytical: &TreeEnsemble,
    cfg: &DqnConfig,
    opts: &TrainOptions,
) -> Result<TrainingOutcome> {
    let agent = DqnAgent::new(cfg.clone())?;
    continue_training(agent, sessions, analytical, opts, 0)
}

/// Runs `opts.episodes` more episodes on an existing agent. The buffer is
/// seeded only if it is still empty; `first_episode` offsets the
/// exploration schedule and the recorded episode numbers.
pub fn continue_training(
    mut agent: DqnAgent,
    sessions: &[SessionTrace],
    analytical: &TreeEnsemble,
    opts: &TrainOptions,
    first_episode: usize,
) -> Result<TrainingOutcome> {
    if sessions.is_empty() {
        return Err(Error::Precondition("training needs at least one session".into()));
    }
    let env_cfg = EnvConfig {
        target: agent.cfg.target,
        simulator: opts.simulator,
        reward: agent.cfg.reward,
    };
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.shuffle(&mut agent.explore_rng);
    if agent.buffer.is_empty() {
        let seed_set: Vec<&SessionTrace> = order.iter().map(|&i| &sessions[i]).collect();
        history.seeded = seed_buffer(&mut agent, &seed_set, analytical, opts.seeding, env_cfg)?;
    }

    let total = first_episode + opts.episodes;
    let mut env_steps = 0usize;
    for e in first_episode..total {
        let pos = (e - first_episode) % sessions.len();
        if pos == 0 && e > first_episode {
            order.shuffle(&mut agent.explore_rng);
        }
        let trace = &sessions[order[pos]];
        let epsilon = epsilon_for(schedule_samples(e, total)).unwrap_or(0.0);
        let p_nom = trace.scenario.vehicle.p_max_nom;
        let (mut env, mut state) = ChargingEnv::reset(trace, env_cfg)?;
        let mut reward_sum = 0.0;
        let mut q_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut n_loss = 0;
        let mut steps = 0;
        loop {
            let q = agent.q_values(&state)?;
            q_sum += q.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v)) as f64;
            let action = if agent.explore_rng.random::<f64>() < epsilon {
                agent.explore_rng.random_range(0..N_ACTIONS)
            } else {
                argmax(&q)
            };
            let (next, r, done) = env.step(action)?;
            agent.buffer.push(Transition {
                state,
                action,
                reward: r / p_nom,
                next_state: next,
                done,
            });
            reward_sum += r;
            steps += 1;
            env_steps += 1;
            if env_steps.is_multiple_of(agent.cfg.train_every) {
                if let Some(l) = agent.learn()? {
                    loss_sum += l;
                    n_loss += 1;
                }
            }
            state = next;
            if done {
                break;
            }
        }
        history.episodes.push(EpisodeRecord {
            episode: e + 1,
            reward: reward_sum / steps as f64,
            mean_q: q_sum / steps as f64,
            epsilon,
            loss: (n_loss > 0).then(|| loss_sum / n_loss as f64),
        });
        if opts.eval_every > 0 && !opts.eval_sessions.is_empty() && (e + 1) % opts.eval_every == 0 {
            let rec = evaluate(&agent, opts.eval_sessions, e + 1)?;
            history.evals.push(rec);
            if opts.stop_at_r2.is_some_and(|t| rec.r2 >= t) {
                break;
            }
        }
    }
    history.grad_steps = agent.grad_steps;
    history.target_syncs = agent.syncs;
    Ok(TrainingOutcome { agent, history })
}
