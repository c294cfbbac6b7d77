//! Double DQN for choosing λ.
//!
//! Behaviour is ε-greedy on the online network. Targets use the online
//! network to pick the next action and the target network to value it; only
//! reaching the optimum stops bootstrapping, while a cutoff does not (unless
//! `bootstrap_on_truncation` is switched off). Every environment step is
//! followed by one gradient step on the mean squared TD error and one soft
//! update of the target network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_state, StateGroups};
use crate::env::{EnvConfig, OneMaxEnv};
use crate::error::{Error, Result};
use crate::neural::{soft_update, AdamState, Matrix, Mlp};
use crate::onemax::{rng_from_seed, GaRng};
use crate::policy::{argmax, extract_greedy};
use crate::reward::{collect_reward_stats, naive_reward, RewardSpec, RewardStats, RewardVariant};
use crate::training::{CheckpointSink, Checkpointer, TrainingLog};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: f64,
    pub action: usize,
    pub reward: f64,
    pub next_state: f64,
    /// True only when the optimum was reached.
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdqnConfig {
    pub env: EnvConfig,
    pub reward: RewardVariant,
    pub epsilon: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_transitions: usize,
    pub buffer_capacity: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub bootstrap_on_truncation: bool,
    /// Seed for exploration, replay sampling and weight initialization.
    pub agent_seed: u64,
}

/// Discount factors of the horizon sweep.
pub const GAMMA_SWEEP: [f64; 5] = [0.9, 0.99, 0.995, 0.9998, 1.0];

impl DdqnConfig {
    pub fn new(env: EnvConfig, reward: RewardVariant) -> Self {
        Self {
            env,
            reward,
            epsilon: 0.2,
            gamma: 0.99,
            tau: 0.01,
            batch_size: 2048,
            learning_rate: 0.001,
            warmup_transitions: 10_000,
            buffer_capacity: 1_000_000,
            total_steps: 500_000,
            checkpoint_every: 2000,
            bootstrap_on_truncation: true,
            agent_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check((0.0..=1.0).contains(&self.epsilon), "epsilon must lie in [0, 1]")?;
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1]")?;
        check(self.tau > 0.0 && self.tau <= 1.0, "tau must lie in (0, 1]")?;
        check(self.batch_size > 0, "batch size must be positive")?;
        check(self.learning_rate >= 0.0, "learning rate must be non-negative")?;
        check(self.buffer_capacity > 0, "replay capacity must be positive")?;
        check(self.checkpoint_every > 0, "checkpoint interval must be positive")?;
        Ok(())
    }
}

/// Double-Q targets: `r` for terminal transitions, otherwise
/// `r + γ·Q_target(s', argmax_a Q_online(s', a))`.
pub fn td_target(
    batch: &[Transition],
    online: &Mlp,
    target: &Mlp,
    gamma: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Usage("TD targets of an empty batch".into()));
    }
    let groups = StateGroups::new(batch.iter().map(|t| t.next_state), n);
    let q_online = online.forward(&groups.rows)?;
    let q_target = target.forward(&groups.rows)?;
    let bootstrap: Vec<f64> = (0..groups.unique_count())
        .map(|r| q_target.get(r, argmax(q_online.row(r))))
        .collect();
    Ok(batch
        .iter()
        .zip(&groups.row_of)
        .map(|(t, &row)| {
            if t.done {
                t.reward
            } else {
                t.reward + gamma * bootstrap[row]
            }
        })
        .collect())
}

/// Online/target network pair with its optimizer.
#[derive(Clone, Debug)]
pub struct QLearner {
    pub online: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    n: usize,
    updates: u64,
}

impl QLearner {
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        actions: usize,
        gamma: f64,
        tau: f64,
        batch_size: usize,
        learning_rate: f64,
        rng: &mut R,
    ) -> Self {
        let online = Mlp::standard(1, actions, rng);
        Self::from_network(online, n, gamma, tau, batch_size, learning_rate)
    }

    pub fn from_network(
        online: Mlp,
        n: usize,
        gamma: f64,
        tau: f64,
        batch_size: usize,
        learning_rate: f64,
    ) -> Self {
        Self {
            target: online.clone(),
            adam: AdamState::new(&online, learning_rate),
            online,
            gamma,
            tau,
            batch_size,
            n,
            updates: 0,
        }
    }

    pub fn q_values(&self, state: f64) -> Result<Vec<f64>> {
        Ok(self.online.forward(&Matrix::column(vec![state]))?.row(0).to_vec())
    }

    pub fn greedy(&self, state: f64) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// Uniform random action with probability `epsilon`, greedy otherwise.
    pub fn epsilon_greedy<R: Rng + ?Sized>(&self, state: f64, epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.random_bool(epsilon) {
            Ok(rng.random_range(0..self.online.output_dim()))
        } else {
            self.greedy(state)
        }
    }

    /// One gradient step on a uniformly sampled batch. Returns `None`, doing
    /// nothing, while the buffer holds fewer than `batch_size` transitions.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<f64>> {
        if buffer.len() < self.batch_size {
            return Ok(None);
        }
        let batch: Vec<Transition> = buffer
            .sample_indices(self.batch_size, rng)
            .into_iter()
            .map(|i| buffer.items()[i])
            .collect();
        let targets = td_target(&batch, &self.online, &self.target, self.gamma, self.n)?;

        let groups = StateGroups::new(batch.iter().map(|t| t.state), self.n);
        let (q, cache) = self.online.forward_cached(&groups.rows)?;
        let mut upstream = Matrix::zeros(q.rows(), q.cols());
        let scale = 2.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ((t, &row), &y) in batch.iter().zip(&groups.row_of).zip(&targets) {
            let err = q.get(row, t.action) - y;
            loss += err * err;
            let g = upstream.get(row, t.action) + scale * err;
            upstream.set(row, t.action, g);
        }
        loss /= batch.len() as f64;

        let grads = self.online.backward(&cache, &upstream)?;
        self.adam.step(&mut self.online, &grads)?;
        self.updates += 1;
        self.online.check_finite(self.updates)?;
        soft_update(&mut self.target, &self.online, self.tau)?;
        Ok(Some(loss))
    }
}

/// Raw outcome of one warm-up step, kept until the reward is fixed.
#[derive(Clone, Copy, Debug)]
struct RawStep {
    state: f64,
    action: usize,
    delta_f: usize,
    step_evals: u64,
    next_state: f64,
    terminated: bool,
    truncated: bool,
}

fn reset_to_nonoptimal(env: &mut OneMaxEnv) {
    env.reset();
    while env.state().is_optimal() {
        env.reset();
    }
}

/// Environment, replay buffer and learner for one training run.
pub struct DdqnTrainer {
    pub config: DdqnConfig,
    pub env: OneMaxEnv,
    pub buffer: ReplayBuffer,
    pub learner: QLearner,
    pub reward: RewardSpec,
    rng: GaRng,
    episodes: u64,
}

impl DdqnTrainer {
    pub fn new(config: DdqnConfig) -> Result<Self> {
        config.validate()?;
        let mut env = OneMaxEnv::new(config.env.clone())?;
        if env.state().is_optimal() {
            reset_to_nonoptimal(&mut env);
        }
        let mut rng = rng_from_seed(config.agent_seed);
        let learner = QLearner::new(
            config.env.n,
            env.portfolio().len(),
            config.gamma,
            config.tau,
            config.batch_size,
            config.learning_rate,
            &mut rng,
        );
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            reward: RewardSpec::new(config.reward),
            config,
            env,
            learner,
            rng,
            episodes: 0,
        })
    }

    fn done_flag(&self, terminated: bool, truncated: bool) -> bool {
        terminated || (truncated && !self.config.bootstrap_on_truncation)
    }

    fn raw_step(&mut self, action: usize) -> Result<RawStep> {
        let n = self.env.n();
        let state = self.env.observation();
        let out = self.env.step_action(action)?;
        let next_state = encode_state(out.next_fitness, n);
        if out.episode_over() {
            self.episodes += 1;
            reset_to_nonoptimal(&mut self.env);
        }
        Ok(RawStep {
            state,
            action,
            delta_f: out.delta_f,
            step_evals: out.step_evals,
            next_state,
            terminated: out.terminated,
            truncated: out.truncated,
        })
    }

    fn store(&mut self, raw: RawStep) -> Result<f64> {
        let reward = self.reward.reward(raw.delta_f, raw.step_evals, self.env.n())?;
        let done = self.done_flag(raw.terminated, raw.truncated);
        self.buffer.push(Transition {
            state: raw.state,
            action: raw.action,
            reward,
            next_state: raw.next_state,
            done,
        });
        Ok(reward)
    }

    /// Plays uniformly random actions for `warmup_transitions` steps, fills
    /// the buffer, and resolves the adaptive bias from the naive rewards.
    pub fn warmup(&mut self) -> Result<RewardStats> {
        if !self.buffer.is_empty() {
            return Err(Error::Usage("warm-up expects an empty replay buffer".into()));
        }
        let k = self.env.portfolio().len();
        let mut raws = Vec::with_capacity(self.config.warmup_transitions);
        for _ in 0..self.config.warmup_transitions {
            let action = self.rng.random_range(0..k);
            raws.push(self.raw_step(action)?);
        }
        let naive: Vec<f64> = raws.iter().map(|r| naive_reward(r.delta_f, r.step_evals)).collect();
        let stats = collect_reward_stats(&naive)?;
        self.reward.resolve(&stats)?;
        for raw in raws {
            self.store(raw)?;
        }
        Ok(stats)
    }

    /// One ε-greedy environment step followed by one learner update.
    pub fn step(&mut self) -> Result<Option<f64>> {
        let state = self.env.observation();
        let action = self
            .learner
            .epsilon_greedy(state, self.config.epsilon, &mut self.rng)?;
        let raw = self.raw_step(action)?;
        self.store(raw)?;
        self.learner.train_step(&self.buffer, &mut self.rng)
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }
}

/// Warm-up followed by `total_steps` training steps with a greedy-policy
/// checkpoint every `checkpoint_every` steps.
pub fn run_training<'a>(
    config: &DdqnConfig,
    quick_seeds: &'a [u64],
    sink: Option<CheckpointSink<'a>>,
) -> Result<TrainingLog> {
    let mut trainer = DdqnTrainer::new(config.clone())?;
    let n = config.env.n;
    let stats = trainer.warmup()?;
    let mut checkpointer = Checkpointer::new(config.env.clone(), quick_seeds, sink);
    let mut aborted = None;
    for step in 1..=config.total_steps {
        match trainer.step() {
            Ok(Some(loss)) => checkpointer.record_loss(loss),
            Ok(None) => {}
            Err(e @ Error::NonFinite { .. }) => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        if step % config.checkpoint_every == 0 {
            let policy = extract_greedy(&trainer.learner.online, n)?;
            checkpointer.checkpoint(step, policy, trainer.episodes())?;
        }
    }
    Ok(TrainingLog {
        algorithm: "ddqn".into(),
        n,
        reward: trainer.reward,
        warmup_stats: Some(stats),
        checkpoints: checkpointer.records,
        aborted,
    })
}

/// Result of comparing value iteration with and without a reward shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftOracleReport {
    pub gamma: f64,
    pub bias: f64,
    /// `b / (1 − γ)`.
    pub expected_offset: f64,
    /// Largest `|Q'(s,a) − Q(s,a) − b/(1−γ)|`.
    pub max_deviation: f64,
    pub greedy_identical: bool,
    pub q: Vec<[f64; 2]>,
    pub q_shifted: Vec<[f64; 2]>,
}

/// Deterministic continuing MDP with four states and two actions:
/// `(next state, reward)` per state and action.
pub const ORACLE_MDP: [[(usize, f64); 2]; 4] = [
    [(1, 1.0), (2, 0.0)],
    [(3, -1.0), (0, 2.0)],
    [(0, 0.5), (3, -0.5)],
    [(2, 0.0), (1, 3.0)],
];

fn value_iteration(gamma: f64, shift: f64) -> Vec<[f64; 2]> {
    let mut q = vec![[0.0f64; 2]; ORACLE_MDP.len()];
    loop {
        let next: Vec<[f64; 2]> = ORACLE_MDP
            .iter()
            .map(|row| {
                let mut out = [0.0; 2];
                for (a, &(s2, r)) in row.iter().enumerate() {
                    out[a] = r + shift + gamma * q[s2][0].max(q[s2][1]);
                }
                out
            })
            .collect();
        let delta = next
            .iter()
            .zip(&q)
            .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
            .fold(0.0, f64::max);
        q = next;
        if delta == 0.0 || delta < 1e-14 * (1.0 - gamma) {
            return q;
        }
    }
}

/// Checks that shifting every reward by `b` offsets the optimal Q table by
/// `b / (1 − γ)` and leaves the greedy policy unchanged.
pub fn tabular_shift_oracle(gamma: f64, bias: f64) -> Result<ShiftOracleReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("the shift identity needs 0 < γ < 1, got {gamma}")));
    }
    let q = value_iteration(gamma, 0.0);
    let q_shifted = value_iteration(gamma, bias);
    let expected_offset = bias / (1.0 - gamma);
    let max_deviation = q
        .iter()
        .zip(&q_shifted)
        .flat_map(|(a, b)| [(b[0] - a[0] - expected_offset).abs(), (b[1] - a[1] - expected_offset).abs()])
        .fold(0.0, f64::max);
    let greedy_identical = q.iter().zip(&q_shifted).all(|(a, b)| argmax(a) == argmax(b));
    Ok(ShiftOracleReport {
        gamma,
        bias,
        expected_offset,
        max_deviation,
        greedy_identical,
        q,
        q_shifted,
    })
}
