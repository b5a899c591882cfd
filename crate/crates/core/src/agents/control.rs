use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::targets::ddqn_target;
use super::TrainConfig;
use crate::argmax;
use crate::corridor::{deterministic_policy, solve_q_pi, CorridorSpec, PolicyTable, N_STATES};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, BackwardOptions, DenseNet, GradientSet};
use crate::replay::{anneal_beta, PrioritizedBuffer, Transition, UniformBuffer, DEFAULT_ALPHA, DEFAULT_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayKind {
    Uniform,
    Prioritized,
}

/// Settings for epsilon-greedy DDQN on the corridor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub train: TrainConfig,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the step budget over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub replay: ReplayKind,
    pub alpha: f64,
    pub capacity: usize,
    /// Environment steps collected before the first update.
    pub learning_starts: usize,
    /// Episodes are restarted (without a terminal flag) after this many steps.
    pub max_episode_steps: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            train: TrainConfig {
                learning_rate: 0.05,
                sync_period: 500,
                updates: 200_000,
                batch_size: 32,
                ..TrainConfig::default()
            },
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.2,
            replay: ReplayKind::Uniform,
            alpha: DEFAULT_ALPHA,
            capacity: DEFAULT_CAPACITY,
            learning_starts: 1_000,
            max_episode_steps: 500,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.epsilon_start) || !unit(self.epsilon_end) || !unit(self.epsilon_decay_fraction) {
            return Err(Error::Config("epsilon settings must lie in [0, 1]".into()));
        }
        if self.capacity == 0 || self.max_episode_steps == 0 {
            return Err(Error::Config("capacity and max_episode_steps must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over the first
/// `epsilon_decay_fraction` of `total` steps, then flat.
pub fn epsilon_at(config: &ControlConfig, step: usize) -> f64 {
    let decay = config.epsilon_decay_fraction * config.train.updates as f64;
    if (step as f64) >= decay {
        return config.epsilon_end;
    }
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * step as f64 / decay
}

#[derive(Debug, Clone)]
pub enum Replay {
    Uniform(UniformBuffer),
    Prioritized(PrioritizedBuffer),
}

impl Replay {
    pub fn len(&self) -> usize {
        match self {
            Replay::Uniform(b) => b.len(),
            Replay::Prioritized(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Online and target networks plus replay memory.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub online: DenseNet,
    target: DenseNet,
    pub config: ControlConfig,
    pub replay: Replay,
    steps: usize,
    syncs: usize,
}

impl AgentState {
    pub fn new(online: DenseNet, config: ControlConfig) -> Result<Self> {
        config.validate()?;
        let replay = match config.replay {
            ReplayKind::Uniform => Replay::Uniform(UniformBuffer::new(config.capacity)?),
            ReplayKind::Prioritized => {
                Replay::Prioritized(PrioritizedBuffer::new(config.capacity, config.alpha)?)
            }
        };
        Ok(AgentState {
            target: online.clone(),
            online,
            config,
            replay,
            steps: 0,
            syncs: 0,
        })
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn syncs(&self) -> usize {
        self.syncs
    }

    /// Copies the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
        self.syncs += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlStats {
    pub episodes: usize,
    pub goal_episodes: usize,
    pub updates: usize,
    pub final_epsilon: f64,
}

/// Runs `agent.config.train.updates` environment steps of epsilon-greedy
/// Double DQN with experience replay, gradient clipping, and a target network
/// synced every `sync_period` steps.
pub fn train_ddqn(spec: &CorridorSpec, agent: &mut AgentState) -> Result<ControlStats> {
    let config = agent.config;
    if agent.online.output_dim() != spec.n_actions() {
        return Err(Error::Shape(format!(
            "network emits {} values for {} actions",
            agent.online.output_dim(),
            spec.n_actions()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    rng.set_stream(2);
    let gamma = spec.discount();
    let batch = config.train.batch_size;
    let opts = BackwardOptions::training();
    let mut grads = GradientSet::zeros_like(&agent.online);
    let mut dq = vec![0.0; spec.n_actions()];
    let mut td_abs = Vec::with_capacity(batch);
    let mut stats = ControlStats {
        episodes: 0,
        goal_episodes: 0,
        updates: 0,
        final_epsilon: config.epsilon_start,
    };

    let mut state = spec.start();
    let mut episode_len = 0;
    for step in 0..config.train.updates {
        let epsilon = epsilon_at(&config, step);
        stats.final_epsilon = epsilon;
        let action = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..spec.n_actions())
        } else {
            argmax(&agent.online.q_values(&spec.encode_state(state)?)?)
        };
        let out = spec.step(state, action)?;
        let t = Transition {
            state,
            action,
            reward: out.reward,
            next: (!out.done).then_some(out.next),
        };
        match &mut agent.replay {
            Replay::Uniform(b) => b.push(t),
            Replay::Prioritized(b) => {
                b.push(t);
            }
        }
        episode_len += 1;
        if out.done || episode_len >= config.max_episode_steps {
            stats.episodes += 1;
            if out.done && out.reward >= spec.params().goal_reward {
                stats.goal_episodes += 1;
            }
            state = spec.start();
            episode_len = 0;
        } else {
            state = out.next;
        }

        if agent.replay.len() >= config.learning_starts.max(1) {
            let samples: Vec<(usize, Transition, f64)> = match &agent.replay {
                Replay::Uniform(b) => b
                    .sample_uniform(batch, &mut rng)?
                    .into_iter()
                    .map(|(i, t)| (i, t, 1.0))
                    .collect(),
                Replay::Prioritized(b) => {
                    let beta = anneal_beta(step, config.train.updates);
                    b.sample_prioritized(batch, beta, &mut rng)?
                        .into_iter()
                        .map(|s| (s.index, s.transition, s.weight))
                        .collect()
                }
            };
            grads.set_zero();
            td_abs.clear();
            for &(_, t, weight) in &samples {
                let y = ddqn_target(spec, &t, &agent.online, &agent.target, gamma)?;
                let (q, trace) = agent.online.forward(&spec.encode_state(t.state)?)?;
                let delta = q[t.action] - y;
                dq.iter_mut().for_each(|g| *g = 0.0);
                dq[t.action] = weight * delta / batch as f64;
                agent.online.accumulate_backward(&trace, &dq, opts, &mut grads)?;
                td_abs.push(delta.abs());
            }
            clip_grad_norm(&mut grads, config.train.clip_norm)?;
            agent.online.sgd_step(&grads, config.train.learning_rate)?;
            stats.updates += 1;
            if let Replay::Prioritized(b) = &mut agent.replay {
                let indices: Vec<usize> = samples.iter().map(|s| s.0).collect();
                b.update_priorities(&indices, &td_abs)?;
            }
        }

        agent.steps += 1;
        if agent.steps % config.train.sync_period == 0 {
            agent.sync_target();
        }
    }
    Ok(stats)
}

/// Deterministic greedy policy of `net` over the corridor (terminal rows take
/// action 0).
pub fn greedy_policy(spec: &CorridorSpec, net: &DenseNet) -> Result<PolicyTable> {
    let actions = (0..N_STATES)
        .map(|s| {
            if spec.is_terminal(s) {
                Ok(0)
            } else {
                Ok(argmax(&net.q_values(&spec.encode_state(s)?)?))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    deterministic_policy(spec.n_actions(), &actions)
}

/// Exact discounted return of the greedy policy from the start state,
/// computed by policy evaluation rather than sampling.
pub fn greedy_return(spec: &CorridorSpec, net: &DenseNet) -> Result<f64> {
    let pi = greedy_policy(spec, net)?;
    let q = solve_q_pi(spec, &pi, 1e-12)?;
    Ok(pi.expectation(spec.start(), q.row(spec.start())))
}
