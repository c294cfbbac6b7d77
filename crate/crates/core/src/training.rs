//! Checkpoint records shared by the DDQN and PPO trainers.

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::Result;
use crate::metrics::{evaluate, Candidate, LearningCurve};
use crate::policy::{pairwise_difference, PolicyKind, TabularPolicy};
use crate::reward::{RewardSpec, RewardStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub policy: TabularPolicy,
    /// Mean runtime / n over the quick-evaluation seeds.
    pub quick_mean: f64,
    pub quick_std: f64,
    /// Pairwise difference to the previous checkpoint (absent for the first).
    pub pairwise_difference: Option<usize>,
    /// Mean training loss since the previous checkpoint.
    pub mean_loss: f64,
    pub episodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub algorithm: String,
    pub n: usize,
    pub reward: RewardSpec,
    pub warmup_stats: Option<RewardStats>,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Diagnostic when training stopped early (non-finite parameters).
    pub aborted: Option<String>,
}

impl TrainingLog {
    pub fn curve(&self) -> LearningCurve {
        LearningCurve {
            points: self.checkpoints.iter().map(|c| (c.step, c.quick_mean)).collect(),
        }
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.checkpoints
            .iter()
            .map(|c| Candidate {
                step: c.step,
                policy: c.policy.clone(),
                quick_mean: c.quick_mean,
            })
            .collect()
    }
}

/// Callback invoked with every new checkpoint, used for incremental persistence.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(&CheckpointRecord) -> Result<()>;

/// Evaluates and records greedy policies as training proceeds.
pub(crate) struct Checkpointer<'a> {
    env: EnvConfig,
    quick_seeds: &'a [u64],
    sink: Option<CheckpointSink<'a>>,
    loss_sum: f64,
    loss_count: u64,
    pub records: Vec<CheckpointRecord>,
}

impl<'a> Checkpointer<'a> {
    pub fn new(env: EnvConfig, quick_seeds: &'a [u64], sink: Option<CheckpointSink<'a>>) -> Self {
        Self {
            env,
            quick_seeds,
            sink,
            loss_sum: 0.0,
            loss_count: 0,
            records: Vec::new(),
        }
    }

    pub fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
    }

    pub fn checkpoint(&mut self, step: u64, policy: TabularPolicy, episodes: u64) -> Result<()> {
        let (quick_mean, quick_std) = if self.quick_seeds.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate(&PolicyKind::Tabular(policy.clone()), &self.env, self.quick_seeds)?;
            (r.mean_ert_over_n, r.std_over_n)
        };
        let pairwise = self
            .records
            .last()
            .map(|prev| pairwise_difference(&prev.policy, &policy))
            .transpose()?;
        let mean_loss = if self.loss_count == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.loss_count as f64
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        let record = CheckpointRecord {
            step,
            policy,
            quick_mean,
            quick_std,
            pairwise_difference: pairwise,
            mean_loss,
            episodes,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink(&record)?;
        }
        self.records.push(record);
        Ok(())
    }
}
