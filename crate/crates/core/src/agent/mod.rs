//! Double + dueling DQN learner.

mod net;
mod replay;

pub use net::{gradient_check, sync_target, BlockCheck, DuelingNet, Forward, NetDims, TargetNet, BLOCK_NAMES};
pub use replay::{ReplayBuffer, Transition};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ScenarioKind, SnrRange};
use crate::env::{Action, LinkEnv, State, ACTION_COUNT};
use crate::error::{LinkError, Result};


/// Length of [`encode_state`] output.
pub const STATE_DIM: usize = ScenarioKind::ALL.len() + 2;

/// One-hot scenario, min-max normalized SNR estimate, and `n / N`.
pub fn encode_state(state: &State, snr: &SnrRange, episode_len: usize) -> Vec<f64> {
    let mut v = vec![0.0; STATE_DIM];
    v[state.scenario.index()] = 1.0;
    v[ScenarioKind::ALL.len()] = snr.normalize(state.snr_est_db);
    v[ScenarioKind::ALL.len() + 1] = state.step_index as f64 / episode_len as f64;
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// Select `a'` with the evaluation net, evaluate it with the target net.
    Double,
    /// Plain `max_a' Q_target(s', a')`.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub epsilon_max: f64,
    pub epsilon_min: f64,
    /// Per-step exponential decay rate of epsilon.
    pub epsilon_decay_rate: f64,
    pub target_sync_period: u64,
    pub replay_capacity: usize,
    /// Minimum buffer fill before gradient steps begin.
    pub learn_start: usize,
    pub target_rule: TargetRule,
    pub dueling: bool,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Multiplies rewards before they enter the replay buffer.
    pub reward_scale: f64,
    /// Per-step decay of the exponential moving average of the online
    /// weights that is handed out as the trained policy. 0 disables it.
    pub average_decay: f64,
    /// Fraction of episodes after which the average starts tracking.
    pub average_start: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut cfg = Self {
            episodes: 4000,
            batch_size: 32,
            discount: 0.99,
            learning_rate: 0.01,
            epsilon_max: 1.0,
            epsilon_min: 0.01,
            epsilon_decay_rate: 0.0,
            target_sync_period: 1000,
            replay_capacity: 20_000,
            learn_start: 32,
            target_rule: TargetRule::Double,
            dueling: true,
            hidden: 32,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            reward_scale: 1.0,
            average_decay: 0.9999,
            average_start: 0.5,
        };
        cfg.epsilon_decay_rate = cfg.decay_rate_for(4000 * 100);
        cfg
    }
}

impl TrainConfig {
    /// Decay rate that brings epsilon to 0.05 halfway through `total_steps`.
    pub fn decay_rate_for(&self, total_steps: u64) -> f64 {
        let half = (total_steps as f64 / 2.0).max(1.0);
        let span = self.epsilon_max - self.epsilon_min;
        let at_half = 0.05 - self.epsilon_min;
        if span <= 0.0 || at_half <= 0.0 || at_half >= span {
            return 0.0;
        }
        (span / at_half).ln() / half
    }

    pub fn with_schedule_for(mut self, total_steps: u64) -> Self {
        self.epsilon_decay_rate = self.decay_rate_for(total_steps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, why: &str| Err(LinkError::validation(format!("train.{f}"), why));
        if self.episodes == 0 {
            return err("episodes", "must be >= 1");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return err("discount", "must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", "must be positive");
        }
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon_max && self.epsilon_max <= 1.0) {
            return err("epsilon_min", "need 0 <= epsilon_min <= epsilon_max <= 1");
        }
        if !(self.epsilon_decay_rate >= 0.0 && self.epsilon_decay_rate.is_finite()) {
            return err("epsilon_decay_rate", "must be nonnegative");
        }
        if self.target_sync_period == 0 {
            return err("target_sync_period", "must be >= 1");
        }
        if self.replay_capacity == 0 {
            return err("replay_capacity", "must be >= 1");
        }
        if self.hidden == 0 {
            return err("hidden", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return err("adam_beta1", "Adam coefficients must lie in [0, 1)");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return err("reward_scale", "must be positive");
        }
        if !(0.0..1.0).contains(&self.average_decay) {
            return err("average_decay", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.average_start) {
            return err("average_start", "must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn net_dims(&self, input: usize, actions: usize) -> NetDims {
        NetDims {
            input,
            hidden1: self.hidden,
            hidden2: self.hidden,
            actions,
            dueling: self.dueling,
        }
    }
}

/// Exploration rate after `global_step` environment steps.
pub fn epsilon_at(config: &TrainConfig, global_step: u64) -> f64 {
    let span = config.epsilon_max - config.epsilon_min;
    let eps = config.epsilon_min + span * (-config.epsilon_decay_rate * global_step as f64).exp();
    eps.clamp(config.epsilon_min, config.epsilon_max)
}

/// Epsilon-greedy action index.
pub fn act<R: Rng + ?Sized>(net: &DuelingNet, state_vec: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let n = net.dims().actions;
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..n)
    } else {
        net.greedy(state_vec)
    }
}

/// Epsilon-greedy over the link action space.
pub fn act_link<R: Rng + ?Sized>(net: &DuelingNet, state_vec: &[f64], epsilon: f64, rng: &mut R) -> Action {
    Action::from_flat(act(net, state_vec, epsilon, rng)).expect("net has one output per action")
}

pub fn td_targets(
    batch: &[&Transition],
    net: &DuelingNet,
    target: &TargetNet,
    discount: f64,
    rule: TargetRule,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.terminal || discount == 0.0 {
                return t.reward;
            }
            let q_next = target.q_values(&t.next_state);
            let bootstrap = match rule {
                TargetRule::Double => q_next[net.greedy(&t.next_state)],
                TargetRule::Max => q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            t.reward + discount * bootstrap
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
        beta1: f64,
        beta2: f64,
    },
    Sgd,
}

const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
                t: 0,
                beta1: 0.9,
                beta2: 0.999,
            },
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn from_config(config: &TrainConfig, n_params: usize) -> Self {
        let mut opt = Self::new(config.optimizer, n_params);
        if let Optimizer::Adam { beta1, beta2, .. } = &mut opt {
            *beta1 = config.adam_beta1;
            *beta2 = config.adam_beta2;
        }
        opt
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { m, v, t, beta1, beta2 } => {
                let (b1, b2) = (*beta1, *beta2);
                *t += 1;
                let c1 = 1.0 - b1.powi(*t);
                let c2 = 1.0 - b2.powi(*t);
                for i in 0..params.len() {
                    let g = grad[i];
                    if g == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                        continue;
                    }
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// One gradient step on a uniformly sampled minibatch. `None` when the
/// buffer holds fewer than `max(batch_size, learn_start)` transitions.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut DuelingNet,
    target: &TargetNet,
    optimizer: &mut Optimizer,
    buffer: &ReplayBuffer,
    config: &TrainConfig,
    rng: &mut R,
) -> Option<f64> {
    if buffer.len() < config.batch_size.max(config.learn_start) {
        return None;
    }
    let batch = buffer.sample(config.batch_size, rng);
    Some(fit_batch(net, target, optimizer, &batch, config))
}

/// Computes targets for `batch`, takes one optimizer step and returns the
/// pre-update loss.
pub fn fit_batch(
    net: &mut DuelingNet,
    target: &TargetNet,
    optimizer: &mut Optimizer,
    batch: &[&Transition],
    config: &TrainConfig,
) -> f64 {
    let ys = td_targets(batch, net, target, config.discount, config.target_rule);
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grad) = net.loss_and_grad(&states, &actions, &ys);
    optimizer.apply(net.params_mut(), &grad, config.learning_rate);
    loss
}

/// Side information reported by an environment step, for metrics only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    pub valid: bool,
    pub power_w: f64,
    pub throughput_mbps: f64,
    pub ee_mbps_per_w: f64,
    pub violated: bool,
    pub oracle_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Stop bootstrapping from `next_state`.
    pub terminal: bool,
    /// Episode over (possibly truncated without being terminal).
    pub done: bool,
    pub info: StepInfo,
}

/// Anything the training loop can interact with.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<Feedback>;
}

impl Environment for LinkEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let s = LinkEnv::reset(self)?;
        let cfg = self.config();
        Ok(encode_state(&s, &cfg.snr, cfg.game.episode_len))
    }

    fn step(&mut self, action: usize) -> Result<Feedback> {
        let action = Action::from_flat(action)?;
        let o = LinkEnv::step(self, action)?;
        let cfg = self.config();
        Ok(Feedback {
            next_state: encode_state(&o.next_state, &cfg.snr, cfg.game.episode_len),
            reward: o.reward,
            terminal: o.terminal,
            done: o.terminal,
            info: StepInfo {
                valid: o.was_valid_action,
                power_w: action.power_w(),
                throughput_mbps: o.throughput_mbps,
                ee_mbps_per_w: o.ee_mbps_per_w,
                violated: o.constraint_violated,
                oracle_reward: o.oracle_reward,
            },
        })
    }
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub cumulative_reward: f64,
    pub oracle_reward: f64,
    pub valid_actions: usize,
    pub violations: usize,
    pub mean_power_w: f64,
    pub mean_throughput_mbps: f64,
    pub mean_ee_mbps_per_w: f64,
    pub epsilon: f64,
    pub mean_loss: f64,
}

/// Learner state: evaluation/target nets, optimizer and replay.
#[derive(Debug, Clone)]
pub struct D3qnAgent {
    pub net: DuelingNet,
    pub target: TargetNet,
    pub optimizer: Optimizer,
    pub buffer: ReplayBuffer,
    pub config: TrainConfig,
    pub global_step: u64,
    pub target_syncs: u64,
    pub transitions_stored: u64,
    /// Moving average of `net` parameters, once tracking has begun.
    pub average: Option<Vec<f64>>,
}

impl D3qnAgent {
    pub fn new<R: Rng + ?Sized>(config: TrainConfig, input: usize, actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = DuelingNet::new(config.net_dims(input, actions), rng);
        let target = TargetNet::from_net(&net);
        let optimizer = Optimizer::from_config(&config, net.params().len());
        Ok(Self {
            buffer: ReplayBuffer::new(config.replay_capacity),
            net,
            target,
            optimizer,
            config,
            global_step: 0,
            target_syncs: 0,
            transitions_stored: 0,
            average: None,
        })
    }

    /// The network to deploy: the weight average when one is kept, else the
    /// online network.
    pub fn policy_net(&self) -> DuelingNet {
        match &self.average {
            Some(avg) => DuelingNet::from_params(self.net.dims(), avg.clone()).expect("same layout"),
            None => self.net.clone(),
        }
    }

    fn update_average(&mut self) {
        let d = self.config.average_decay;
        let params = self.net.params();
        match &mut self.average {
            None => self.average = Some(params.to_vec()),
            Some(avg) => {
                for (a, p) in avg.iter_mut().zip(params) {
                    *a = d * *a + (1.0 - d) * p;
                }
            }
        }
    }

    /// Runs one episode of interaction and learning.
    pub fn run_episode<E: Environment, R: Rng + ?Sized>(
        &mut self,
        env: &mut E,
        episode: usize,
        rng: &mut R,
    ) -> Result<EpisodeMetrics> {
        let mut state = env.reset()?;
        let mut m = EpisodeMetrics {
            episode,
            steps: 0,
            cumulative_reward: 0.0,
            oracle_reward: 0.0,
            valid_actions: 0,
            violations: 0,
            mean_power_w: 0.0,
            mean_throughput_mbps: 0.0,
            mean_ee_mbps_per_w: 0.0,
            epsilon: 0.0,
            mean_loss: 0.0,
        };
        let mut losses = 0usize;
        let averaging = self.config.average_decay > 0.0
            && episode as f64 >= self.config.average_start * self.config.episodes as f64;
        loop {
            let eps = epsilon_at(&self.config, self.global_step);
            let a = act(&self.net, &state, eps, rng);
            let fb = env.step(a)?;
            self.buffer.push(Transition {
                state: std::mem::take(&mut state),
                action: a,
                reward: fb.reward * self.config.reward_scale,
                next_state: fb.next_state.clone(),
                terminal: fb.terminal,
            });
            self.transitions_stored += 1;
            if let Some(loss) =
                train_step(&mut self.net, &self.target, &mut self.optimizer, &self.buffer, &self.config, rng)
            {
                m.mean_loss += loss;
                losses += 1;
            }
            if averaging {
                self.update_average();
            }
            self.global_step += 1;
            if self.global_step % self.config.target_sync_period == 0 {
                sync_target(&self.net, &mut self.target);
                self.target_syncs += 1;
            }

            m.steps += 1;
            m.cumulative_reward += fb.reward;
            m.oracle_reward += fb.info.oracle_reward;
            m.valid_actions += usize::from(fb.info.valid);
            m.violations += usize::from(fb.info.violated);
            m.mean_power_w += fb.info.power_w;
            m.mean_throughput_mbps += fb.info.throughput_mbps;
            m.mean_ee_mbps_per_w += fb.info.ee_mbps_per_w;
            m.epsilon = eps;
            state = fb.next_state;
            if fb.done {
                break;
            }
        }
        let n = m.steps as f64;
        m.mean_power_w /= n;
        m.mean_throughput_mbps /= n;
        m.mean_ee_mbps_per_w /= n;
        if losses > 0 {
            m.mean_loss /= losses as f64;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: D3qnAgent,
    pub metrics: Vec<EpisodeMetrics>,
}

/// The full training loop: `config.episodes` episodes, one gradient step per
/// environment step, target sync every `target_sync_period` steps.
pub fn train<E: Environment>(env: &mut E, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = D3qnAgent::new(config.clone(), env.state_dim(), env.action_count(), &mut rng)?;
    let metrics = (0..config.episodes)
        .map(|ep| agent.run_episode(env, ep, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome { agent, metrics })
}
