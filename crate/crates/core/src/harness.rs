//! Experiment configuration, run directories and artifact persistence.
//!
//! Configurations are flat TOML tables. Unknown keys are rejected, and keys
//! belonging to the other algorithm are an error rather than silently ignored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddqn::{self, DdqnConfig};
use crate::env::{default_cutoff, EnvConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    auc, best_policy_selection, evaluate, gap, hitting_rate_window, EvalResult, HIT_WINDOWS,
};
use crate::policy::{PolicyKind, TabularPolicy};
use crate::ppo::{self, PpoConfig};
use crate::reward::{RewardStats, RewardVariant};
use crate::seeds::{derive_seed, seed_list, tags};
use crate::training::{CheckpointRecord, TrainingLog};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "ONEMAX_DAC_OUTPUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ddqn,
    Ppo,
    EvalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardName {
    Naive,
    Scaled,
    ShiftedFixed,
    ShiftedAdaptive,
    ScaledShiftedAdaptive,
}

impl RewardName {
    pub const ALL: [RewardName; 5] = [
        RewardName::Naive,
        RewardName::Scaled,
        RewardName::ShiftedFixed,
        RewardName::ShiftedAdaptive,
        RewardName::ScaledShiftedAdaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardName::Naive => "naive",
            RewardName::Scaled => "scaled",
            RewardName::ShiftedFixed => "shifted_fixed",
            RewardName::ShiftedAdaptive => "shifted_adaptive",
            RewardName::ScaledShiftedAdaptive => "scaled_shifted_adaptive",
        }
    }

    pub fn variant(self, bias: Option<f64>) -> Result<RewardVariant> {
        Ok(match (self, bias) {
            (RewardName::ShiftedFixed, Some(bias)) => RewardVariant::ShiftedFixed { bias },
            (RewardName::ShiftedFixed, None) => {
                return Err(Error::Config("reward shifted_fixed needs a `bias`".into()))
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "`bias` only applies to shifted_fixed, not {}",
                    self.as_str()
                )))
            }
            (RewardName::Naive, None) => RewardVariant::Naive,
            (RewardName::Scaled, None) => RewardVariant::Scaled,
            (RewardName::ShiftedAdaptive, None) => RewardVariant::ShiftedAdaptive,
            (RewardName::ScaledShiftedAdaptive, None) => RewardVariant::ScaledShiftedAdaptive,
        })
    }
}

impl fmt::Display for RewardName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward `{s}`")))
    }
}

fn default_reward() -> RewardName {
    RewardName::Naive
}
fn default_repetitions() -> u64 {
    1
}
fn default_quick() -> usize {
    100
}
fn default_final() -> usize {
    1000
}
fn default_top_k() -> usize {
    5
}
fn default_workers() -> usize {
    10
}

/// One experiment, or a grid of experiments when `sweep_param` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_evals: Option<u64>,
    #[serde(default = "default_reward")]
    pub reward: RewardName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_transitions: Option<usize>,

    // DDQN only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_on_truncation: Option<bool>,

    // PPO only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gae_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_coef: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_coef: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,

    /// Policy for eval_only: pi_cont, pi_disc, random, constant:<λ> or a CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,

    #[serde(default = "default_repetitions")]
    pub repetitions: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Run directory relative to the output root; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_quick")]
    pub quick_eval_seeds: usize,
    #[serde(default = "default_final")]
    pub final_eval_seeds: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_workers")]
    pub eval_workers: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_param: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_values: Option<Vec<f64>>,
}

/// Parameters a grid may vary.
pub const SWEEP_PARAMS: [&str; 8] = [
    "gamma",
    "epsilon",
    "bias",
    "entropy_coef",
    "learning_rate",
    "tau",
    "gae_lambda",
    "clip_range",
];

/// Shipped configuration files, by name.
pub const PRESETS: [(&str, &str); 11] = [
    ("ddqn_n50_adaptive", include_str!("../configs/ddqn_n50_adaptive.toml")),
    ("ddqn_n100_adaptive", include_str!("../configs/ddqn_n100_adaptive.toml")),
    ("ddqn_n100_naive", include_str!("../configs/ddqn_n100_naive.toml")),
    ("ddqn_gamma_sweep", include_str!("../configs/ddqn_gamma_sweep.toml")),
    ("ddqn_fixed_bias", include_str!("../configs/ddqn_fixed_bias.toml")),
    ("ddqn_epsilon_grid", include_str!("../configs/ddqn_epsilon_grid.toml")),
    ("ppo_n100_naive", include_str!("../configs/ppo_n100_naive.toml")),
    ("ppo_hpo", include_str!("../configs/ppo_hpo.toml")),
    ("ppo_entropy_grid", include_str!("../configs/ppo_entropy_grid.toml")),
    ("eval_pi_disc", include_str!("../configs/eval_pi_disc.toml")),
    ("eval_pi_cont", include_str!("../configs/eval_pi_cont.toml")),
];

/// Command-line overrides applied on top of a loaded configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub master_seed: Option<u64>,
    pub total_steps: Option<u64>,
    pub reward: Option<RewardName>,
    pub gamma: Option<f64>,
    pub repetitions: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(name: &str) -> Option<Result<Self>> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml_str(text))
    }

    /// A preset name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(config) = Self::preset(name_or_path) {
            return config;
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            return Err(Error::Config(format!(
                "`{name_or_path}` is neither a file nor a preset ({})",
                names.join(", ")
            )));
        }
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(n) = o.n {
            self.n = n;
        }
        if let Some(s) = o.master_seed {
            self.master_seed = s;
        }
        if let Some(s) = o.total_steps {
            self.total_steps = Some(s);
        }
        if let Some(r) = o.reward {
            self.reward = r;
            if r != RewardName::ShiftedFixed {
                self.bias = None;
            }
        }
        if let Some(g) = o.gamma {
            self.gamma = Some(g);
        }
        if let Some(r) = o.repetitions {
            self.repetitions = r;
        }
        self.validate()
    }

    pub fn env(&self, seed: u64) -> EnvConfig {
        EnvConfig {
            n: self.n,
            cutoff_evals: self.cutoff_evals.unwrap_or_else(|| default_cutoff(self.n)),
            seed,
        }
    }

    fn reward_variant(&self) -> Result<RewardVariant> {
        self.reward.variant(self.bias)
    }

    fn ddqn_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut push = |set: bool, k| {
            if set {
                keys.push(k)
            }
        };
        push(self.epsilon.is_some(), "epsilon");
        push(self.tau.is_some(), "tau");
        push(self.batch_size.is_some(), "batch_size");
        push(self.buffer_capacity.is_some(), "buffer_capacity");
        push(self.bootstrap_on_truncation.is_some(), "bootstrap_on_truncation");
        keys
    }

    fn ppo_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut push = |set: bool, k| {
            if set {
                keys.push(k)
            }
        };
        push(self.rollout_steps.is_some(), "rollout_steps");
        push(self.minibatch_size.is_some(), "minibatch_size");
        push(self.epochs.is_some(), "epochs");
        push(self.gae_lambda.is_some(), "gae_lambda");
        push(self.clip_range.is_some(), "clip_range");
        push(self.entropy_coef.is_some(), "entropy_coef");
        push(self.value_coef.is_some(), "value_coef");
        push(self.max_grad_norm.is_some(), "max_grad_norm");
        keys
    }

    /// Checks the whole configuration, including every grid point.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config("`name` must be a non-empty plain name".into()));
        }
        match (&self.sweep_param, &self.sweep_values) {
            (None, None) => self.validate_point(),
            (Some(p), Some(values)) => {
                if !SWEEP_PARAMS.contains(&p.as_str()) {
                    return Err(Error::Config(format!(
                        "cannot sweep `{p}`; choose one of {}",
                        SWEEP_PARAMS.join(", ")
                    )));
                }
                if values.is_empty() {
                    return Err(Error::Config("`sweep_values` is empty".into()));
                }
                self.expand()?.iter().try_for_each(Self::validate_point)
            }
            _ => Err(Error::Config(
                "`sweep_param` and `sweep_values` must be given together".into(),
            )),
        }
    }

    fn validate_point(&self) -> Result<()> {
        self.env(0).validate()?;
        let foreign = match self.algorithm {
            Algorithm::Ddqn => self.ppo_keys(),
            Algorithm::Ppo => self.ddqn_keys(),
            Algorithm::EvalOnly => {
                let mut k = self.ddqn_keys();
                k.extend(self.ppo_keys());
                k
            }
        };
        if !foreign.is_empty() {
            return Err(Error::Config(format!(
                "keys {} do not apply to algorithm {:?}",
                foreign.join(", "),
                self.algorithm
            )));
        }
        if let Some(dir) = &self.output_dir {
            let escapes = dir.is_absolute()
                || dir.components().any(|c| matches!(c, std::path::Component::ParentDir));
            if escapes {
                return Err(Error::Config(format!(
                    "output_dir {} must be relative and stay below the output root",
                    dir.display()
                )));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::Config("`repetitions` must be at least 1".into()));
        }
        if self.final_eval_seeds == 0 || self.eval_workers == 0 || self.top_k == 0 {
            return Err(Error::Config(
                "`final_eval_seeds`, `top_k` and `eval_workers` must be positive".into(),
            ));
        }
        match self.algorithm {
            Algorithm::Ddqn => self.ddqn_config(0, 0)?.validate()?,
            Algorithm::Ppo => self.ppo_config(0, 0)?.validate()?,
            Algorithm::EvalOnly => {
                let spec = self
                    .policy
                    .as_deref()
                    .ok_or_else(|| Error::Config("eval_only needs a `policy`".into()))?;
                if !spec.ends_with(".csv") {
                    parse_policy(spec, self.n)?;
                }
            }
        }
        if self.algorithm != Algorithm::EvalOnly && self.policy.is_some() {
            return Err(Error::Config("`policy` only applies to eval_only".into()));
        }
        if self.algorithm != Algorithm::EvalOnly && self.quick_eval_seeds == 0 {
            return Err(Error::Config("training needs `quick_eval_seeds` > 0".into()));
        }
        Ok(())
    }

    /// One configuration per grid value; a single-element list otherwise.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let (Some(param), Some(values)) = (&self.sweep_param, &self.sweep_values) else {
            return Ok(vec![self.clone()]);
        };
        values
            .iter()
            .map(|&v| {
                let mut c = self.clone();
                c.sweep_param = None;
                c.sweep_values = None;
                let slot = match param.as_str() {
                    "gamma" => &mut c.gamma,
                    "epsilon" => &mut c.epsilon,
                    "bias" => &mut c.bias,
                    "entropy_coef" => &mut c.entropy_coef,
                    "learning_rate" => &mut c.learning_rate,
                    "tau" => &mut c.tau,
                    "gae_lambda" => &mut c.gae_lambda,
                    "clip_range" => &mut c.clip_range,
                    other => return Err(Error::Config(format!("cannot sweep `{other}`"))),
                };
                *slot = Some(v);
                let base = self.output_dir.clone().unwrap_or_else(|| PathBuf::from(&self.name));
                c.output_dir = Some(base.join(format!("{param}_{v}")));
                Ok(c)
            })
            .collect()
    }

    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(self.output_dir.clone().unwrap_or_else(|| PathBuf::from(&self.name)))
    }

    pub fn ddqn_config(&self, env_seed: u64, agent_seed: u64) -> Result<DdqnConfig> {
        let mut c = DdqnConfig::new(self.env(env_seed), self.reward_variant()?);
        c.agent_seed = agent_seed;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(gamma, learning_rate, total_steps, checkpoint_every, warmup_transitions);
        set!(epsilon, tau, batch_size, buffer_capacity, bootstrap_on_truncation);
        Ok(c)
    }

    pub fn ppo_config(&self, env_seed: u64, agent_seed: u64) -> Result<PpoConfig> {
        let mut c = PpoConfig::new(self.env(env_seed), self.reward_variant()?);
        c.agent_seed = agent_seed;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(gamma, learning_rate, total_steps, checkpoint_every, warmup_transitions);
        set!(rollout_steps, minibatch_size, epochs, gae_lambda, clip_range);
        set!(entropy_coef, value_coef, max_grad_norm);
        Ok(c)
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Parses a baseline name (`pi_cont`, `pi_disc`, `random`, `constant:<λ>`)
/// or loads a tabular policy CSV.
pub fn parse_policy(spec: &str, n: usize) -> Result<PolicyKind> {
    let kind = match spec {
        "pi_cont" => PolicyKind::ContinuousTheory,
        "pi_disc" => PolicyKind::DiscreteTheory,
        "random" => PolicyKind::Random,
        _ => {
            if let Some(l) = spec.strip_prefix("constant:") {
                PolicyKind::Constant(
                    l.parse()
                        .map_err(|_| Error::Config(format!("bad constant λ `{l}`")))?,
                )
            } else if Path::new(spec).is_file() {
                PolicyKind::Tabular(TabularPolicy::load(Path::new(spec))?)
            } else {
                return Err(Error::Config(format!(
                    "policy `{spec}` is not a baseline name or an existing CSV file"
                )));
            }
        }
    };
    kind.validate(n)?;
    Ok(kind)
}

/// Seeds used by one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSeeds {
    pub repetition: u64,
    pub env: u64,
    pub agent: u64,
    pub quick_eval: Vec<u64>,
    pub final_eval: Vec<u64>,
}

impl RepetitionSeeds {
    /// Final-evaluation seeds are shared by all repetitions and baselines so
    /// results can be compared pairwise.
    pub fn derive(config: &ExperimentConfig, repetition: u64) -> Self {
        let m = config.master_seed;
        let final_tag = if config.algorithm == Algorithm::EvalOnly {
            tags::EVAL
        } else {
            tags::FINAL_EVAL
        };
        let final_rep = if config.algorithm == Algorithm::EvalOnly { repetition } else { 0 };
        Self {
            repetition,
            env: derive_seed(m, repetition, tags::TRAIN_ENV),
            agent: derive_seed(m, repetition, tags::TRAIN_AGENT),
            quick_eval: seed_list(m, repetition, tags::QUICK_EVAL, config.quick_eval_seeds),
            final_eval: seed_list(m, final_rep, final_tag, config.final_eval_seeds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted { reason: String },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: RepetitionSeeds,
    pub resolved_bias: Option<f64>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    /// Files written, relative to the repetition directory.
    pub artifacts: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    step: u64,
    quick_mean_ert_over_n: f64,
    quick_std_ert_over_n: f64,
    pairwise_difference: Option<usize>,
    mean_loss: f64,
    episodes: u64,
}

impl From<&CheckpointRecord> for CurveRow {
    fn from(c: &CheckpointRecord) -> Self {
        Self {
            step: c.step,
            quick_mean_ert_over_n: c.quick_mean,
            quick_std_ert_over_n: c.quick_std,
            pairwise_difference: c.pairwise_difference,
            mean_loss: c.mean_loss,
            episodes: c.episodes,
        }
    }
}

#[derive(Serialize)]
struct RuntimeRow {
    seed: u64,
    runtime: u64,
    runtime_over_n: f64,
    success: bool,
}

pub fn write_runtimes(path: &Path, result: &EvalResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for ((&seed, &runtime), &success) in result.seeds.iter().zip(&result.runtimes).zip(&result.successes) {
        w.serialize(RuntimeRow {
            seed,
            runtime,
            runtime_over_n: runtime as f64 / result.n as f64,
            success,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Mean, deviation and success rate of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub policy: String,
    pub seeds: usize,
    pub mean_ert_over_n: f64,
    pub std_ert_over_n: f64,
    pub success_rate: f64,
}

impl EvalSummary {
    pub fn new(policy: impl Into<String>, r: &EvalResult) -> Self {
        Self {
            policy: policy.into(),
            seeds: r.seeds.len(),
            mean_ert_over_n: r.mean_ert_over_n,
            std_ert_over_n: r.std_over_n,
            success_rate: r.success_rate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub from: f64,
    pub to: f64,
    pub rate: f64,
}

/// Outcome of one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repetition: u64,
    pub resolved_bias: Option<f64>,
    pub warmup_stats: Option<RewardStats>,
    pub checkpoints: usize,
    pub best_step: Option<u64>,
    pub best: EvalSummary,
    /// `(checkpoint step, final mean)` of the re-evaluated candidates.
    pub finalists: Vec<(u64, f64)>,
    pub gap_to_pi_disc: f64,
    pub gap_to_pi_cont: f64,
    pub auc_vs_pi_disc: Option<f64>,
    pub hitting_rates: Vec<HitRate>,
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub dir: PathBuf,
    pub algorithm: Algorithm,
    pub n: usize,
    pub reward: String,
    pub baselines: Vec<EvalSummary>,
    pub runs: Vec<RunSummary>,
    pub mean_best_ert_over_n: f64,
}

impl ExperimentSummary {
    pub fn any_aborted(&self) -> bool {
        self.runs.iter().any(|r| r.aborted.is_some())
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    policy: &'a str,
    repetition: Option<u64>,
    mean_ert_over_n: f64,
    std_ert_over_n: f64,
    success_rate: f64,
    gap_to_pi_disc: f64,
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("evaluation pool: {e}")))?
        .install(f)
}

/// Runs every grid point of `config` below `root`.
pub fn run_experiment(config: &ExperimentConfig, root: &Path) -> Result<Vec<ExperimentSummary>> {
    config.validate()?;
    config
        .expand()?
        .iter()
        .map(|c| with_pool(c.eval_workers, || run_single(c, root)))
        .collect()
}

fn run_single(config: &ExperimentConfig, root: &Path) -> Result<ExperimentSummary> {
    let dir = config.run_dir(root);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml_string()?)?;

    let shared = RepetitionSeeds::derive(config, 0);
    let baseline_env = config.env(0);
    let pi_disc = evaluate(&PolicyKind::DiscreteTheory, &baseline_env, &shared.final_eval)?;
    let pi_cont = evaluate(&PolicyKind::ContinuousTheory, &baseline_env, &shared.final_eval)?;
    let baselines = vec![EvalSummary::new("pi_cont", &pi_cont), EvalSummary::new("pi_disc", &pi_disc)];

    let mut runs = Vec::new();
    for rep in 0..config.repetitions {
        let rep_dir = dir.join(format!("rep_{rep:02}"));
        fs::create_dir_all(&rep_dir)?;
        let mut manifest = RunManifest {
            config: config.clone(),
            config_hash: config.hash()?,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: RepetitionSeeds::derive(config, rep),
            resolved_bias: None,
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            artifacts: Vec::new(),
        };
        manifest.write(&rep_dir)?;
        let outcome = run_repetition(config, &rep_dir, &mut manifest, &pi_disc, &pi_cont);
        manifest.finished_at = Some(now());
        match outcome {
            Ok(summary) => {
                manifest.status = match &summary.aborted {
                    Some(reason) => RunStatus::Aborted { reason: reason.clone() },
                    None => RunStatus::Completed,
                };
                manifest.artifacts.push("manifest.json".into());
                manifest.write(&rep_dir)?;
                runs.push(summary);
            }
            Err(e) => {
                manifest.status = RunStatus::Failed { error: e.to_string() };
                manifest.write(&rep_dir)?;
                return Err(e);
            }
        }
    }

    let mean_best = runs.iter().map(|r| r.best.mean_ert_over_n).sum::<f64>() / runs.len() as f64;
    let summary = ExperimentSummary {
        name: config.name.clone(),
        dir: dir.clone(),
        algorithm: config.algorithm,
        n: config.n,
        reward: config.reward_variant()?.name().to_string(),
        baselines,
        runs,
        mean_best_ert_over_n: mean_best,
    };
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for b in &summary.baselines {
        w.serialize(SummaryRow {
            policy: &b.policy,
            repetition: None,
            mean_ert_over_n: b.mean_ert_over_n,
            std_ert_over_n: b.std_ert_over_n,
            success_rate: b.success_rate,
            gap_to_pi_disc: (b.mean_ert_over_n - pi_disc.mean_ert_over_n) / pi_disc.mean_ert_over_n,
        })?;
    }
    for r in &summary.runs {
        w.serialize(SummaryRow {
            policy: &r.best.policy,
            repetition: Some(r.repetition),
            mean_ert_over_n: r.best.mean_ert_over_n,
            std_ert_over_n: r.best.std_ert_over_n,
            success_rate: r.best.success_rate,
            gap_to_pi_disc: r.gap_to_pi_disc,
        })?;
    }
    w.flush()?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_repetition(
    config: &ExperimentConfig,
    dir: &Path,
    manifest: &mut RunManifest,
    pi_disc: &EvalResult,
    pi_cont: &EvalResult,
) -> Result<RunSummary> {
    let seeds = manifest.seeds.clone();
    let env = config.env(seeds.env);

    if config.algorithm == Algorithm::EvalOnly {
        let spec = config.policy.as_deref().unwrap_or_default();
        let policy = parse_policy(spec, config.n)?;
        let result = evaluate(&policy, &env, &seeds.final_eval)?;
        write_runtimes(&dir.join("runtimes.csv"), &result)?;
        manifest.artifacts.push("runtimes.csv".into());
        let summary = RunSummary {
            repetition: seeds.repetition,
            resolved_bias: None,
            warmup_stats: None,
            checkpoints: 0,
            best_step: None,
            best: EvalSummary::new(policy.to_string(), &result),
            finalists: Vec::new(),
            gap_to_pi_disc: gap(&result, pi_disc)?,
            gap_to_pi_cont: gap(&result, pi_cont)?,
            auc_vs_pi_disc: None,
            hitting_rates: Vec::new(),
            aborted: None,
        };
        write_json(&dir.join("summary.json"), &summary)?;
        manifest.artifacts.push("summary.json".into());
        return Ok(summary);
    }

    let policy_dir = dir.join("policies");
    fs::create_dir_all(&policy_dir)?;
    let mut curve = csv::Writer::from_path(dir.join("curve.csv"))?;
    let mut sink = |record: &CheckpointRecord| -> Result<()> {
        curve.serialize(CurveRow::from(record))?;
        curve.flush()?;
        record
            .policy
            .save(&policy_dir.join(format!("step_{:07}.csv", record.step)))
    };
    let log: TrainingLog = match config.algorithm {
        Algorithm::Ddqn => {
            let c = config.ddqn_config(seeds.env, seeds.agent)?;
            ddqn::run_training(&c, &seeds.quick_eval, Some(&mut sink))?
        }
        Algorithm::Ppo => {
            let c = config.ppo_config(seeds.env, seeds.agent)?;
            ppo::run_training(&c, &seeds.quick_eval, Some(&mut sink))?
        }
        Algorithm::EvalOnly => unreachable!("handled above"),
    };
    manifest.resolved_bias = log.reward.resolved_bias;
    manifest.artifacts.push("curve.csv".into());
    manifest.artifacts.extend(
        log.checkpoints
            .iter()
            .map(|c| format!("policies/step_{:07}.csv", c.step)),
    );

    if log.checkpoints.is_empty() {
        return Err(Error::Usage(format!(
            "training produced no checkpoints{}",
            log.aborted.as_deref().map(|a| format!(" ({a})")).unwrap_or_default()
        )));
    }
    let selection = best_policy_selection(&log.candidates(), &env, &seeds.final_eval, config.top_k)?;
    selection.policy.save(&dir.join("best_policy.csv"))?;
    write_runtimes(&dir.join("best_runtimes.csv"), &selection.result)?;
    manifest.artifacts.push("best_policy.csv".into());
    manifest.artifacts.push("best_runtimes.csv".into());

    let curve = log.curve();
    let summary = RunSummary {
        repetition: seeds.repetition,
        resolved_bias: log.reward.resolved_bias,
        warmup_stats: log.warmup_stats,
        checkpoints: log.checkpoints.len(),
        best_step: Some(selection.step),
        best: EvalSummary::new(format!("best@{}", selection.step), &selection.result),
        finalists: selection
            .finalists
            .iter()
            .map(|&(i, m)| (log.checkpoints[i].step, m))
            .collect(),
        gap_to_pi_disc: gap(&selection.result, pi_disc)?,
        gap_to_pi_cont: gap(&selection.result, pi_cont)?,
        auc_vs_pi_disc: Some(auc(&curve, pi_disc.mean_ert_over_n)?),
        hitting_rates: HIT_WINDOWS
            .iter()
            .map(|&(from, to)| HitRate {
                from,
                to,
                rate: hitting_rate_window(&curve, pi_disc, (from, to)),
            })
            .collect(),
        aborted: log.aborted,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    manifest.artifacts.push("summary.json".into());
    Ok(summary)
}

/// Evaluates π_cont and π_disc on shared seeds and tests their difference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub n: usize,
    pub rows: Vec<EvalSummary>,
    pub t_test: crate::metrics::PairedTTest,
}

pub fn baselines(n: usize, seeds: &[u64]) -> Result<BaselineReport> {
    let env = EnvConfig::new(n, 0);
    let cont = evaluate(&PolicyKind::ContinuousTheory, &env, seeds)?;
    let disc = evaluate(&PolicyKind::DiscreteTheory, &env, seeds)?;
    let t_test = crate::metrics::paired_t_test(&cont.normalized(), &disc.normalized())?;
    Ok(BaselineReport {
        n,
        rows: vec![EvalSummary::new("pi_cont", &cont), EvalSummary::new("pi_disc", &disc)],
        t_test,
    })
}
