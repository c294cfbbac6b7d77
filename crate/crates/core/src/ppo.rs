//! Proximal policy optimization with separate actor and critic networks.
//!
//! Rollouts run across episode boundaries. Advantages come from GAE: reaching
//! the optimum cuts the recursion with a zero next value, while the cutoff
//! cuts it with the stored value of the state where the episode was truncated.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_state, StateGroups};
use crate::env::{EnvConfig, OneMaxEnv};
use crate::error::{Error, Result};
use crate::neural::{clip_global_norm, AdamState, Matrix, Mlp};
use crate::onemax::{rng_from_seed, GaRng};
use crate::policy::{argmax, extract_greedy};
use crate::reward::{collect_reward_stats, naive_reward, RewardSpec, RewardStats, RewardVariant};
use crate::training::{CheckpointSink, Checkpointer, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub env: EnvConfig,
    pub reward: RewardVariant,
    pub learning_rate: f64,
    pub rollout_steps: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    /// Random-policy steps used to estimate the adaptive bias (adaptive rewards only).
    pub warmup_transitions: usize,
    pub agent_seed: u64,
}

/// Entropy coefficients of the regularization sweep.
pub const ENTROPY_SWEEP: [f64; 6] = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0];

impl PpoConfig {
    pub fn new(env: EnvConfig, reward: RewardVariant) -> Self {
        Self {
            env,
            reward,
            learning_rate: 3e-4,
            rollout_steps: 2048,
            minibatch_size: 64,
            epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            total_steps: 500_000,
            checkpoint_every: 2000,
            warmup_transitions: 10_000,
            agent_seed: 0,
        }
    }

    /// Tuned configuration found by hyperparameter optimization.
    pub fn hpo(env: EnvConfig, reward: RewardVariant) -> Self {
        Self {
            learning_rate: 1e-5,
            minibatch_size: 128,
            epochs: 10,
            entropy_coef: 0.115,
            gae_lambda: 0.705,
            clip_range: 0.442,
            gamma: 0.986,
            ..Self::new(env, reward)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check(self.learning_rate >= 0.0, "learning rate must be non-negative")?;
        check(self.rollout_steps > 0, "rollout length must be positive")?;
        check(self.minibatch_size > 0, "minibatch size must be positive")?;
        check(self.epochs > 0, "epochs must be positive")?;
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1]")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda must lie in [0, 1]")?;
        check(self.clip_range > 0.0, "clip range must be positive")?;
        check(self.entropy_coef >= 0.0, "entropy coefficient must be non-negative")?;
        check(self.value_coef >= 0.0, "value coefficient must be non-negative")?;
        check(self.max_grad_norm > 0.0, "max_grad_norm must be positive")?;
        check(self.checkpoint_every > 0, "checkpoint interval must be positive")?;
        Ok(())
    }
}

/// Numerically stable log-softmax of one row of logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Entropy of a categorical distribution given by its log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub state: f64,
    pub action: usize,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Critic value of the state where the episode was cut off (used only when truncated).
    pub truncation_value: f64,
}

/// Advantages and returns for one rollout. `bootstrap_value` is the critic
/// value of the state following the last step.
pub fn compute_gae(steps: &[RolloutStep], bootstrap_value: f64, gamma: f64, gae_lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let len = steps.len();
    let mut advantages = vec![0.0; len];
    let mut next_advantage = 0.0;
    for t in (0..len).rev() {
        let s = &steps[t];
        let (next_value, carry) = if s.terminated {
            (0.0, 0.0)
        } else if s.truncated {
            (s.truncation_value, 0.0)
        } else if t + 1 < len {
            (steps[t + 1].value, 1.0)
        } else {
            (bootstrap_value, 1.0)
        };
        let delta = s.reward + gamma * next_value - s.value;
        advantages[t] = delta + gamma * gae_lambda * carry * next_advantage;
        next_advantage = advantages[t];
    }
    let returns = advantages.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (advantages, returns)
}

/// Scales to zero mean and unit sample standard deviation (the deviation is floored at 1e-8).
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.len() < 2 {
        return;
    }
    let len = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / len;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (len - 1.0);
    let std = var.sqrt().max(1e-8);
    advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Clipped surrogate objective of one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl UpdateStats {
    pub fn total_loss(&self, config: &PpoConfig) -> f64 {
        self.policy_loss + config.value_coef * self.value_loss - config.entropy_coef * self.entropy
    }
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(actions: usize, learning_rate: f64, rng: &mut R) -> Self {
        let actor = Mlp::standard(1, actions, rng);
        let critic = Mlp::standard(1, 1, rng);
        Self {
            actor_adam: AdamState::new(&actor, learning_rate),
            critic_adam: AdamState::new(&critic, learning_rate),
            actor,
            critic,
        }
    }

    pub fn value(&self, state: f64) -> Result<f64> {
        Ok(self.critic.forward(&Matrix::column(vec![state]))?.get(0, 0))
    }

    /// Samples an action; returns it with its log-probability and the state value.
    pub fn act<R: Rng + ?Sized>(&self, state: f64, rng: &mut R) -> Result<(usize, f64, f64)> {
        let input = Matrix::column(vec![state]);
        let log_probs = log_softmax(self.actor.forward(&input)?.row(0));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = log_probs.len() - 1;
        for (i, lp) in log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                action = i;
                break;
            }
        }
        let value = self.critic.forward(&input)?.get(0, 0);
        Ok((action, log_probs[action], value))
    }

    pub fn greedy(&self, state: f64) -> Result<usize> {
        Ok(argmax(self.actor.forward(&Matrix::column(vec![state]))?.row(0)))
    }

    /// Gradient pass over one minibatch; `advantages` must already be normalized.
    fn minibatch_step(
        &mut self,
        batch: &[(RolloutStep, f64, f64)],
        config: &PpoConfig,
        n_states: usize,
        step: u64,
    ) -> Result<UpdateStats> {
        let size = batch.len() as f64;
        let groups = StateGroups::new(batch.iter().map(|b| b.0.state), n_states);
        let (logits, actor_cache) = self.actor.forward_cached(&groups.rows)?;
        let (values, critic_cache) = self.critic.forward_cached(&groups.rows)?;
        let k = logits.cols();

        let rows = groups.unique_count();
        let log_probs: Vec<Vec<f64>> = (0..rows).map(|r| log_softmax(logits.row(r))).collect();
        let entropies: Vec<f64> = log_probs.iter().map(|lp| entropy(lp)).collect();

        let mut actor_up = Matrix::zeros(rows, k);
        let mut critic_up = Matrix::zeros(rows, 1);
        let mut stats = UpdateStats::default();
        for ((s, adv, ret), &row) in batch.iter().zip(&groups.row_of) {
            let lp = &log_probs[row];
            let log_ratio = lp[s.action] - s.log_prob;
            let ratio = log_ratio.exp();
            stats.policy_loss -= clipped_surrogate(ratio, *adv, config.clip_range) / size;
            stats.approx_kl += ((ratio - 1.0) - log_ratio) / size;
            let clipped = (ratio - 1.0).abs() > config.clip_range;
            if clipped {
                stats.clip_fraction += 1.0 / size;
            }
            let unclipped = if *adv >= 0.0 {
                ratio <= 1.0 + config.clip_range
            } else {
                ratio >= 1.0 - config.clip_range
            };
            let out = actor_up.row_mut(row);
            if unclipped {
                let g = -ratio * adv / size;
                for (j, o) in out.iter_mut().enumerate() {
                    let p = lp[j].exp();
                    *o += g * (if j == s.action { 1.0 } else { 0.0 } - p);
                }
            }
            if config.entropy_coef > 0.0 {
                let h = entropies[row];
                for (j, o) in out.iter_mut().enumerate() {
                    let p = lp[j].exp();
                    *o += config.entropy_coef / size * p * (lp[j] + h);
                }
            }
            let v = values.get(row, 0);
            stats.value_loss += (v - ret).powi(2) / size;
            let g = critic_up.get(row, 0) + 2.0 * config.value_coef * (v - ret) / size;
            critic_up.set(row, 0, g);
            stats.entropy += entropies[row] / size;
        }

        let mut actor_grads = self.actor.backward(&actor_cache, &actor_up)?;
        let mut critic_grads = self.critic.backward(&critic_cache, &critic_up)?;
        clip_global_norm(&mut [&mut actor_grads, &mut critic_grads], config.max_grad_norm);
        self.actor_adam.step(&mut self.actor, &actor_grads)?;
        self.critic_adam.step(&mut self.critic, &critic_grads)?;
        self.actor.check_finite(step)?;
        self.critic.check_finite(step)?;
        Ok(stats)
    }

    /// Several epochs of shuffled minibatch updates on one rollout.
    /// `n_states` is the number of distinct encoded states (the problem size).
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        steps: &[RolloutStep],
        bootstrap_value: f64,
        config: &PpoConfig,
        n_states: usize,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        if steps.is_empty() {
            return Err(Error::Usage("PPO update on an empty rollout".into()));
        }
        let (mut advantages, returns) = compute_gae(steps, bootstrap_value, config.gamma, config.gae_lambda);
        normalize_advantages(&mut advantages);
        let samples: Vec<(RolloutStep, f64, f64)> = steps
            .iter()
            .zip(advantages)
            .zip(returns)
            .map(|((s, a), r)| (*s, a, r))
            .collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut total = UpdateStats::default();
        let mut count = 0.0;
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(config.minibatch_size) {
                let batch: Vec<_> = chunk.iter().map(|&i| samples[i]).collect();
                let step = self.actor_adam.timestep + 1;
                let s = self.minibatch_step(&batch, config, n_states, step)?;
                total.policy_loss += s.policy_loss;
                total.value_loss += s.value_loss;
                total.entropy += s.entropy;
                total.clip_fraction += s.clip_fraction;
                total.approx_kl += s.approx_kl;
                count += 1.0;
            }
        }
        total.policy_loss /= count;
        total.value_loss /= count;
        total.entropy /= count;
        total.clip_fraction /= count;
        total.approx_kl /= count;
        Ok(total)
    }
}

/// Estimates reward statistics from uniformly random actions on a separate
/// environment stream.
fn random_policy_stats(config: &PpoConfig, rng: &mut GaRng) -> Result<RewardStats> {
    let mut env = OneMaxEnv::new(config.env.with_seed(config.env.seed ^ 0x7761_726d))?;
    let k = env.portfolio().len();
    let mut rewards = Vec::with_capacity(config.warmup_transitions);
    while rewards.len() < config.warmup_transitions {
        if env.state().is_optimal() {
            env.reset();
            continue;
        }
        let out = env.step_action(rng.random_range(0..k))?;
        rewards.push(naive_reward(out.delta_f, out.step_evals));
        if out.episode_over() {
            env.reset();
        }
    }
    collect_reward_stats(&rewards)
}

/// Alternates rollout collection and updates until `total_steps`
/// environment steps, checkpointing the greedy policy every
/// `checkpoint_every` steps.
pub fn run_training<'a>(
    config: &PpoConfig,
    quick_seeds: &'a [u64],
    sink: Option<CheckpointSink<'a>>,
) -> Result<TrainingLog> {
    config.validate()?;
    let n = config.env.n;
    let mut rng = rng_from_seed(config.agent_seed);
    let mut reward = RewardSpec::new(config.reward);
    let warmup_stats = if config.reward.is_adaptive() {
        let stats = random_policy_stats(config, &mut rng)?;
        reward.resolve(&stats)?;
        Some(stats)
    } else {
        None
    };

    let mut env = OneMaxEnv::new(config.env.clone())?;
    while env.state().is_optimal() {
        env.reset();
    }
    let mut agent = ActorCritic::new(env.portfolio().len(), config.learning_rate, &mut rng);
    let mut checkpointer = Checkpointer::new(config.env.clone(), quick_seeds, sink);
    let mut global_step = 0u64;
    let mut episodes = 0u64;
    let mut aborted = None;
    let mut rollout = Vec::with_capacity(config.rollout_steps);

    'outer: while global_step < config.total_steps {
        rollout.clear();
        while rollout.len() < config.rollout_steps && global_step < config.total_steps {
            let state = env.observation();
            let (action, log_prob, value) = agent.act(state, &mut rng)?;
            let out = env.step_action(action)?;
            let r = reward.reward(out.delta_f, out.step_evals, n)?;
            let truncation_value = if out.truncated && !out.terminated {
                agent.value(encode_state(out.next_fitness, n))?
            } else {
                0.0
            };
            rollout.push(RolloutStep {
                state,
                action,
                reward: r,
                value,
                log_prob,
                terminated: out.terminated,
                truncated: out.truncated && !out.terminated,
                truncation_value,
            });
            if out.episode_over() {
                episodes += 1;
                env.reset();
                while env.state().is_optimal() {
                    env.reset();
                }
            }
            global_step += 1;
            if global_step % config.checkpoint_every == 0 {
                checkpointer.checkpoint(global_step, extract_greedy(&agent.actor, n)?, episodes)?;
            }
        }
        if global_step >= config.total_steps {
            break;
        }
        let bootstrap = agent.value(env.observation())?;
        match agent.update(&rollout, bootstrap, config, n, &mut rng) {
            Ok(stats) => checkpointer.record_loss(stats.total_loss(config)),
            Err(e @ Error::NonFinite { .. }) => {
                aborted = Some(e.to_string());
                break 'outer;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(TrainingLog {
        algorithm: "ppo".into(),
        n,
        reward,
        warmup_stats,
        checkpoints: checkpointer.records,
        aborted,
    })
}

/// Mean rewards of the single-state bandit used as a policy-gradient sanity check.
pub const BANDIT_MEANS: [f64; 4] = [0.0, 0.3, 1.0, 0.5];
pub const BANDIT_BEST_ARM: usize = 2;

/// Trains on a one-step, single-state bandit with Gaussian reward noise and
/// returns the greedy arm afterwards.
pub fn bandit_check(seed: u64) -> Result<usize> {
    let mut rng = rng_from_seed(seed);
    let config = PpoConfig {
        rollout_steps: 512,
        ..PpoConfig::new(EnvConfig::new(2, seed), RewardVariant::Naive)
    };
    let noise = Normal::new(0.0, 0.5).map_err(|e| Error::Config(e.to_string()))?;
    let mut agent = ActorCritic::new(BANDIT_MEANS.len(), config.learning_rate, &mut rng);
    let state = 0.5;
    for _ in 0..20 {
        let mut rollout = Vec::with_capacity(config.rollout_steps);
        for _ in 0..config.rollout_steps {
            let (action, log_prob, value) = agent.act(state, &mut rng)?;
            rollout.push(RolloutStep {
                state,
                action,
                reward: BANDIT_MEANS[action] + noise.sample(&mut rng),
                value,
                log_prob,
                terminated: true,
                truncated: false,
                truncation_value: 0.0,
            });
        }
        agent.update(&rollout, 0.0, &config, 2, &mut rng)?;
    }
    agent.greedy(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(reward: f64, value: f64) -> RolloutStep {
        RolloutStep {
            state: 0.0,
            action: 0,
            reward,
            value,
            log_prob: 0.0,
            terminated: false,
            truncated: false,
            truncation_value: 0.0,
        }
    }

    #[test]
    fn two_step_gae() {
        let mut steps = vec![step(1.0, 0.5), step(1.0, 0.5)];
        steps[1].terminated = true;
        let (adv, ret) = compute_gae(&steps, 0.0, 1.0, 0.9);
        assert!((adv[0] - 1.45).abs() < 1e-12);
        assert!((adv[1] - 0.5).abs() < 1e-12);
        assert!((ret[0] - 1.95).abs() < 1e-12);
    }

    #[test]
    fn truncation_bootstraps_and_cuts() {
        let mut steps = vec![step(-2.0, 1.0), step(-3.0, 0.0)];
        steps[0].truncated = true;
        steps[0].truncation_value = 4.0;
        let (adv, _) = compute_gae(&steps, 10.0, 0.5, 1.0);
        assert_eq!(adv[0], -2.0 + 0.5 * 4.0 - 1.0);
        assert_eq!(adv[1], -3.0 + 0.5 * 10.0);
    }

    #[test]
    fn clipping_example() {
        // ratio 1.5 with positive advantage is clipped at 1.2.
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_surrogate(1.1, 1.0, 0.2), 1.1);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
    }

    #[test]
    fn categorical_helpers() {
        for k in [2usize, 3, 7] {
            let lp = log_softmax(&vec![0.3; k]);
            assert!((entropy(&lp) - (k as f64).ln()).abs() < 1e-15);
        }
        let p = softmax(&[1000.0, -3.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn advantage_normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0];
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / 4.0;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let mut flat = vec![2.0; 5];
        normalize_advantages(&mut flat);
        assert!(flat.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn policy_gradient_finds_best_arm() {
        assert_eq!(bandit_check(1).unwrap(), BANDIT_BEST_ARM);
    }

    #[test]
    fn hpo_config_values() {
        let c = PpoConfig::hpo(EnvConfig::new(50, 0), RewardVariant::Naive);
        assert_eq!((c.learning_rate, c.minibatch_size, c.epochs), (1e-5, 128, 10));
        assert_eq!((c.entropy_coef, c.gae_lambda, c.clip_range, c.gamma), (0.115, 0.705, 0.442, 0.986));
        c.validate().unwrap();
        let bad = PpoConfig { gae_lambda: 1.5, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn short_training_run_checkpoints() {
        let cfg = PpoConfig {
            total_steps: 4100,
            rollout_steps: 1024,
            ..PpoConfig::new(EnvConfig::new(20, 3), RewardVariant::ShiftedAdaptive)
        };
        let cfg = PpoConfig { warmup_transitions: 500, ..cfg };
        let seeds = [1, 2, 3];
        let log = run_training(&cfg, &seeds, None).unwrap();
        let steps: Vec<u64> = log.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![2000, 4000]);
        assert!(log.reward.resolved_bias.is_some());
        assert!(log.aborted.is_none());
    }
}
