//! Deep Deterministic Policy Gradient: replay buffer, Ornstein-Uhlenbeck
//! exploration, critic and actor updates, target tracking and the episodic
//! training loop.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::nn::{
    batch_from_rows, soft_update, Adam, Batch, Critic, Mlp, MlpSpec, Mode, NnError, OutputActivation,
    FINAL_LAYER_INIT,
};

#[derive(Debug, Error)]
pub enum DdpgError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    UnderfilledBuffer { have: usize, need: usize },
    #[error("critic loss is not finite")]
    NonFiniteLoss,
    #[error("observation has {got} entries, expected {expected}")]
    ObservationShape { expected: usize, got: usize },
    #[error("{0}")]
    Callback(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        OuParams {
            mu: 0.0,
            theta: 0.15,
            sigma: 0.1,
        }
    }
}

impl OuParams {
    /// Stationary standard deviation of the unit-step recursion,
    /// `σ / √(2θ − θ²)`.
    pub fn stationary_std(&self) -> f64 {
        self.sigma / (2.0 * self.theta - self.theta * self.theta).sqrt()
    }
}

/// Temporally correlated exploration noise, one component per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub params: OuParams,
    pub x: Vec<f64>,
}

impl OuNoise {
    pub fn new(params: OuParams, dim: usize) -> Self {
        OuNoise {
            params,
            x: vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.x.fill(0.0);
    }

    /// `x ← x + θ(μ − x) + σξ`, `ξ ~ N(0, 1)` per component.
    pub fn sample(&mut self, rng: &mut impl Rng) -> &[f64] {
        let OuParams { mu, theta, sigma } = self.params;
        for x in self.x.iter_mut() {
            let xi: f64 = rng.sample(StandardNormal);
            *x += theta * (mu - *x) + sigma * xi;
        }
        &self.x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Terminal: no bootstrapping from `s_next`.
    pub done: bool,
}

/// Fixed-capacity ring; once full, each insertion overwrites the oldest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn store(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `n` independent uniform draws, with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut impl Rng) -> Result<Vec<&'a Transition>, DdpgError> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(DdpgError::UnderfilledBuffer {
                have: self.items.len(),
                need: n.max(1),
            });
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }

    /// Storage order and write cursor; sampling indexes storage directly, so
    /// both are needed to resume sampling exactly.
    pub fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.items, self.cursor)
    }

    pub fn from_raw_parts(capacity: usize, items: Vec<Transition>, cursor: usize) -> Option<Self> {
        let valid = capacity > 0
            && items.len() <= capacity
            && cursor < capacity
            && (items.len() == capacity || cursor == items.len() % capacity);
        valid.then_some(ReplayBuffer { capacity, items, cursor })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Updates start once the buffer holds this many transitions.
    pub warmup: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_state_width: usize,
    pub critic_head_width: usize,
    pub batch_norm: bool,
    pub ou: OuParams,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            gamma: 0.99,
            tau: 0.001,
            batch_size: 64,
            buffer_capacity: 1_000_000,
            warmup: 1000,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            actor_hidden: vec![64, 64],
            critic_state_width: 64,
            critic_head_width: 64,
            batch_norm: true,
            ou: OuParams::default(),
        }
    }
}

/// One batch in network layout.
pub struct MiniBatch {
    pub states: Batch,
    pub actions: Batch,
    pub rewards: Vec<f64>,
    pub next_states: Batch,
    pub dones: Vec<bool>,
}

impl MiniBatch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let s: Vec<&[f64]> = ts.iter().map(|t| t.s.as_slice()).collect();
        let a: Vec<&[f64]> = ts.iter().map(|t| t.a.as_slice()).collect();
        let sn: Vec<&[f64]> = ts.iter().map(|t| t.s_next.as_slice()).collect();
        MiniBatch {
            states: batch_from_rows(&s),
            actions: batch_from_rows(&a),
            rewards: ts.iter().map(|t| t.r).collect(),
            next_states: batch_from_rows(&sn),
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn build_actor(obs_dim: usize, act_dim: usize, bound: f64, config: &DdpgConfig, rng: &mut impl Rng) -> Result<Mlp, NnError> {
    let mut sizes = vec![obs_dim];
    sizes.extend(&config.actor_hidden);
    sizes.push(act_dim);
    Mlp::build(
        &MlpSpec {
            sizes,
            normalize_input: config.batch_norm,
            normalize_hidden: config.batch_norm,
            activate_last: false,
            output: OutputActivation::BoundedTanh(bound),
            final_init: Some(FINAL_LAYER_INIT),
        },
        rng,
    )
}

/// `y = r + γ(1 − done)·Q'(s', μ'(s'))`, targets evaluated with running statistics.
pub fn critic_target_values(batch: &MiniBatch, actor_target: &Mlp, critic_target: &Critic, gamma: f64) -> Result<Vec<f64>, NnError> {
    let (next_actions, _) = actor_target.forward(&batch.next_states, Mode::Eval)?;
    let (q_next, _) = critic_target.forward(&batch.next_states, &next_actions, Mode::Eval)?;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(q_next.iter())
        .map(|((r, done), q)| if *done { *r } else { r + gamma * q })
        .collect())
}

/// Mean squared Bellman error and its gradient in train mode, without
/// touching the critic's running statistics.
pub fn critic_loss_and_gradient(
    critic: &Critic,
    states: &Batch,
    actions: &Batch,
    targets: &[f64],
) -> Result<(f64, Vec<DMatrix<f64>>), NnError> {
    let (q, cache) = critic.forward(states, actions, Mode::Train)?;
    let n = targets.len() as f64;
    let residual = Batch::from_fn(q.nrows(), 1, |i, _| q[i] - targets[i]);
    let loss = residual.iter().map(|e| e * e).sum::<f64>() / n;
    let (grads, _, _) = critic.backward(&cache, &(residual * (2.0 / n)))?;
    Ok((loss, grads))
}

/// Mean of `Q(s, μ(s))` and its gradient with respect to the actor's
/// trainable blocks, with both networks in train mode and no statistics
/// absorbed.
pub fn actor_objective_and_gradient(actor: &Mlp, critic: &Critic, states: &Batch) -> Result<(f64, Vec<DMatrix<f64>>), NnError> {
    let (actions, actor_cache) = actor.forward(states, Mode::Train)?;
    let (q, critic_cache) = critic.forward(states, &actions, Mode::Train)?;
    let n = q.nrows() as f64;
    let objective = q.sum() / n;
    let (_, _, dq_da) = critic.backward(&critic_cache, &Batch::from_element(q.nrows(), 1, 1.0 / n))?;
    let (grads, _) = actor.backward(&actor_cache, &dq_da)?;
    Ok((objective, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Critic,
    pub actor_target: Mlp,
    pub critic_target: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub noise: OuNoise,
    pub buffer: ReplayBuffer,
    pub config: DdpgConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_bound: f64,
}

impl Agent {
    /// Fresh networks from `init_seed`; targets start as exact copies.
    pub fn new(obs_dim: usize, act_dim: usize, action_bound: f64, config: DdpgConfig, init_seed: u64) -> Result<Agent, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let actor = build_actor(obs_dim, act_dim, action_bound, &config, &mut rng)?;
        let critic = Critic::build(
            obs_dim,
            act_dim,
            config.critic_state_width,
            config.critic_head_width,
            config.batch_norm,
            &mut rng,
        )?;
        Ok(Agent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(&actor, config.actor_lr),
            critic_opt: Adam::new(&critic, config.critic_lr),
            noise: OuNoise::new(config.ou, act_dim),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            actor,
            critic,
            obs_dim,
            act_dim,
            action_bound,
            config,
        })
    }

    pub fn for_env(env: &impl Environment, config: DdpgConfig, init_seed: u64) -> Result<Agent, NnError> {
        Agent::new(env.obs_dim(), env.act_dim(), env.action_bound(), config, init_seed)
    }

    /// Deterministic policy output with running statistics.
    pub fn policy(&self, obs: &[f64]) -> Result<Vec<f64>, DdpgError> {
        if obs.len() != self.obs_dim {
            return Err(DdpgError::ObservationShape {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        let (a, _) = self.actor.forward(&batch_from_rows(&[obs]), Mode::Eval)?;
        Ok(a.iter().map(|v| v.clamp(-self.action_bound, self.action_bound)).collect())
    }

    /// Policy action plus (optionally) one OU sample, clamped to the bound.
    pub fn select_action(&mut self, obs: &[f64], explore: bool, rng: &mut impl Rng) -> Result<Vec<f64>, DdpgError> {
        let mut a = self.policy(obs)?;
        if explore {
            let bound = self.action_bound;
            for (ai, n) in a.iter_mut().zip(self.noise.sample(rng)) {
                *ai = (*ai + n).clamp(-bound, bound);
            }
        }
        Ok(a)
    }

    pub fn store(&mut self, t: Transition) {
        self.buffer.store(t);
    }

    /// One optimizer step on the Bellman error; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &MiniBatch) -> Result<f64, DdpgError> {
        let targets = critic_target_values(batch, &self.actor_target, &self.critic_target, self.config.gamma)?;
        let (q, cache) = self.critic.forward_train(&batch.states, &batch.actions)?;
        let n = targets.len() as f64;
        let residual = Batch::from_fn(q.nrows(), 1, |i, _| q[i] - targets[i]);
        let loss = residual.iter().map(|e| e * e).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(DdpgError::NonFiniteLoss);
        }
        let (grads, _, _) = self.critic.backward(&cache, &(residual * (2.0 / n)))?;
        self.critic_opt.apply(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// One ascent step on the mean of `Q(s, μ(s))`; the critic is read-only.
    /// Returns the pre-step objective.
    pub fn actor_update(&mut self, batch: &MiniBatch) -> Result<f64, DdpgError> {
        let (actions, actor_cache) = self.actor.forward_train(&batch.states)?;
        let (q, critic_cache) = self.critic.forward(&batch.states, &actions, Mode::Train)?;
        let n = q.nrows() as f64;
        let objective = q.sum() / n;
        // Descend on −Q.
        let (_, _, dq_da) = self.critic.backward(&critic_cache, &Batch::from_element(q.nrows(), 1, -1.0 / n))?;
        let (grads, _) = self.actor.backward(&actor_cache, &dq_da)?;
        self.actor_opt.apply(&mut self.actor, &grads)?;
        Ok(objective)
    }

    pub fn update_targets(&mut self) -> Result<(), NnError> {
        soft_update(&mut self.critic_target, &self.critic, self.config.tau)?;
        soft_update(&mut self.actor_target, &self.actor, self.config.tau)
    }

    pub fn ready_to_learn(&self) -> bool {
        self.buffer.len() >= self.config.warmup.max(self.config.batch_size)
    }

    /// Sample, critic step, actor step, target blend.
    pub fn learn(&mut self, rng: &mut impl Rng) -> Result<(f64, f64), DdpgError> {
        let batch = {
            let ts = self.buffer.sample(self.config.batch_size, rng)?;
            MiniBatch::from_transitions(&ts)
        };
        let loss = self.critic_update(&batch)?;
        let objective = self.actor_update(&batch)?;
        self.update_targets()?;
        Ok((loss, objective))
    }
}

/// Derives independent subsystem seeds from one master seed (SplitMix64).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub master: u64,
    pub env: u64,
    pub init: u64,
    pub noise: u64,
    pub sampling: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedPlan {
    pub fn from_master(master: u64) -> Self {
        let mut s = master;
        SeedPlan {
            master,
            env: splitmix64(&mut s),
            init: splitmix64(&mut s),
            noise: splitmix64(&mut s),
            sampling: splitmix64(&mut s),
        }
    }
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    /// 1-based.
    pub episode: u64,
    pub steps: usize,
    pub ret: f64,
    pub distance: f64,
    pub fell: bool,
    /// Mean critic loss over the episode's updates (NaN when none ran).
    pub mean_critic_loss: f64,
}

/// Agent plus the random streams and counters that make training resumable.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub agent: Agent,
    pub env_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub sample_rng: ChaCha8Rng,
    pub episodes_done: u64,
    pub total_steps: u64,
    /// Per-episode step cap `T`.
    pub max_steps: usize,
}

impl Trainer {
    pub fn new(agent: Agent, seeds: SeedPlan, max_steps: usize) -> Self {
        Trainer {
            agent,
            env_rng: ChaCha8Rng::seed_from_u64(seeds.env),
            noise_rng: ChaCha8Rng::seed_from_u64(seeds.noise),
            sample_rng: ChaCha8Rng::seed_from_u64(seeds.sampling),
            episodes_done: 0,
            total_steps: 0,
            max_steps,
        }
    }

    pub fn run_episode(&mut self, env: &mut impl Environment) -> Result<EpisodeMetrics, DdpgError> {
        self.agent.noise.reset();
        let mut obs = env.reset(self.env_rng.next_u64());
        let mut metrics = EpisodeMetrics {
            episode: self.episodes_done + 1,
            steps: 0,
            ret: 0.0,
            distance: 0.0,
            fell: false,
            mean_critic_loss: f64::NAN,
        };
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        for _ in 0..self.max_steps {
            let action = self.agent.select_action(&obs, true, &mut self.noise_rng)?;
            let step = env.step(&action)?;
            self.agent.store(Transition {
                s: obs,
                a: action,
                r: step.reward,
                s_next: step.observation.clone(),
                done: step.terminal,
            });
            if self.agent.ready_to_learn() {
                let (loss, _) = self.agent.learn(&mut self.sample_rng)?;
                loss_sum += loss;
                updates += 1;
            }
            metrics.steps += 1;
            metrics.ret += step.reward;
            metrics.distance = step.distance;
            metrics.fell = step.fell;
            self.total_steps += 1;
            obs = step.observation;
            if step.done {
                break;
            }
        }
        if updates > 0 {
            metrics.mean_critic_loss = loss_sum / updates as f64;
        }
        self.episodes_done += 1;
        Ok(metrics)
    }

    /// Runs `episodes` more episodes, calling `on_episode` after each.
    pub fn train<E, F>(&mut self, env: &mut E, episodes: u64, mut on_episode: F) -> Result<Vec<EpisodeMetrics>, DdpgError>
    where
        E: Environment,
        F: FnMut(&Trainer, &EpisodeMetrics) -> Result<(), DdpgError>,
    {
        let mut out = Vec::with_capacity(episodes as usize);
        for _ in 0..episodes {
            let m = self.run_episode(env)?;
            on_episode(self, &m)?;
            out.push(m);
        }
        Ok(out)
    }

    /// Greedy rollout; returns the undiscounted return. Does not touch any
    /// training stream.
    pub fn evaluate(agent: &Agent, env: &mut impl Environment, seed: u64, max_steps: usize) -> Result<f64, DdpgError> {
        let mut obs = env.reset(seed);
        let mut ret = 0.0;
        for _ in 0..max_steps {
            let step = env.step(&agent.policy(&obs)?)?;
            ret += step.reward;
            obs = step.observation;
            if step.done {
                break;
            }
        }
        Ok(ret)
    }
}
