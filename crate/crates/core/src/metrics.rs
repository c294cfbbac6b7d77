//! Policy evaluation and learning-curve metrics.
//!
//! Runtimes are counted in solution evaluations and reported divided by `n`.
//! A run cut off by the evaluation budget contributes the cutoff itself and
//! is flagged unsuccessful. Episodes for different seeds run on the rayon
//! pool; results are gathered in seed order, so aggregates do not depend on
//! scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::{EnvConfig, OneMaxEnv};
use crate::error::{Error, Result};
use crate::onemax::rng_from_seed;
use crate::policy::{PolicyKind, TabularPolicy};
use crate::reward::naive_reward;
use crate::seeds::mix64;

/// One GA iteration as seen by an evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub fitness: usize,
    pub lambda: u32,
    pub delta_f: usize,
    pub step_evals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub evals: u64,
    pub success: bool,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn naive_rewards(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| naive_reward(s.delta_f, s.step_evals))
            .collect()
    }
}

/// Plays one episode of `policy` on the environment seeded with `seed`.
///
/// Policy randomness (for the random policy) uses a separate stream derived
/// from the same seed.
pub fn run_episode(policy: &PolicyKind, config: &EnvConfig, seed: u64) -> Result<EpisodeTrace> {
    let mut env = OneMaxEnv::new(config.with_seed(seed))?;
    let mut policy_rng = rng_from_seed(mix64(seed ^ 0x706f_6c69_6379));
    let n = config.n;
    let mut steps = Vec::new();
    let mut success = env.state().is_optimal();
    while !success && !env.is_finished() {
        let fitness = env.fitness();
        let lambda = policy
            .act(n, fitness, &mut policy_rng)?
            .lambda(env.portfolio());
        let out = env.step(lambda)?;
        steps.push(StepRecord {
            fitness,
            lambda,
            delta_f: out.delta_f,
            step_evals: out.step_evals,
        });
        success = out.terminated;
    }
    let evals = if success {
        env.state().evals
    } else {
        config.cutoff_evals
    };
    Ok(EpisodeTrace {
        seed,
        steps,
        evals,
        success,
    })
}

pub fn run_episodes(
    policy: &PolicyKind,
    config: &EnvConfig,
    seeds: &[u64],
) -> Result<Vec<EpisodeTrace>> {
    policy.validate(config.n)?;
    config.validate()?;
    seeds
        .par_iter()
        .map(|&s| run_episode(policy, config, s))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    pub seeds: Vec<u64>,
    pub runtimes: Vec<u64>,
    pub successes: Vec<bool>,
    pub mean_ert_over_n: f64,
    /// Sample standard deviation of runtime / n.
    pub std_over_n: f64,
}

impl EvalResult {
    pub fn from_runtimes(n: usize, seeds: Vec<u64>, runtimes: Vec<u64>, successes: Vec<bool>) -> Self {
        let normalized: Vec<f64> = runtimes.iter().map(|&r| r as f64 / n as f64).collect();
        let (mean, std) = mean_std(&normalized);
        Self {
            n,
            seeds,
            runtimes,
            successes,
            mean_ert_over_n: mean,
            std_over_n: std,
        }
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.runtimes.iter().map(|&r| r as f64 / self.n as f64).collect()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes.iter().filter(|&&s| s).count() as f64 / self.successes.len().max(1) as f64
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

/// One episode per seed.
pub fn evaluate(policy: &PolicyKind, config: &EnvConfig, seeds: &[u64]) -> Result<EvalResult> {
    if seeds.is_empty() {
        return Err(Error::Usage("evaluation needs at least one seed".into()));
    }
    let traces = run_episodes(policy, config, seeds)?;
    Ok(EvalResult::from_runtimes(
        config.n,
        seeds.to_vec(),
        traces.iter().map(|t| t.evals).collect(),
        traces.iter().map(|t| t.success).collect(),
    ))
}

/// Candidate policy together with its quick-evaluation mean.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub step: u64,
    pub policy: TabularPolicy,
    pub quick_mean: f64,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub index: usize,
    pub step: u64,
    pub policy: TabularPolicy,
    pub result: EvalResult,
    /// `(candidate index, final mean)` for every re-evaluated candidate.
    pub finalists: Vec<(usize, f64)>,
}

/// Re-evaluates the `top_k` candidates with the lowest quick mean on
/// `final_seeds` and returns the best of them.
pub fn best_policy_selection(
    candidates: &[Candidate],
    config: &EnvConfig,
    final_seeds: &[u64],
    top_k: usize,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Usage("no checkpoints to select from".into()));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].quick_mean.total_cmp(&candidates[b].quick_mean));
    order.truncate(top_k.max(1));

    let mut best: Option<(usize, EvalResult)> = None;
    let mut finalists = Vec::new();
    for idx in order {
        let result = evaluate(
            &PolicyKind::Tabular(candidates[idx].policy.clone()),
            config,
            final_seeds,
        )?;
        finalists.push((idx, result.mean_ert_over_n));
        let better = best
            .as_ref()
            .is_none_or(|(_, r)| result.mean_ert_over_n < r.mean_ert_over_n);
        if better {
            best = Some((idx, result));
        }
    }
    let (index, result) = best.expect("at least one finalist");
    Ok(Selection {
        index,
        step: candidates[index].step,
        policy: candidates[index].policy.clone(),
        result,
        finalists,
    })
}

/// Relative ERT difference `(policy − baseline) / baseline`.
pub fn gap(policy: &EvalResult, baseline: &EvalResult) -> Result<f64> {
    if policy.n != baseline.n {
        return Err(Error::Usage("gap needs results for the same n".into()));
    }
    Ok(gap_of_means(policy.mean_ert_over_n, baseline.mean_ert_over_n))
}

pub fn gap_of_means(policy: f64, baseline: f64) -> f64 {
    (policy - baseline) / baseline
}

/// Checkpointed learning curve in runtime / n.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<(u64, f64)>,
}

impl LearningCurve {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Usage("learning-curve steps must increase".into()));
        }
        Ok(Self { points })
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    /// Points whose position lies in the `[from, to]` fraction of training,
    /// measured by checkpoint index.
    pub fn window(&self, from: f64, to: f64) -> &[(u64, f64)] {
        let len = self.points.len();
        let start = ((from * len as f64).round() as usize).min(len);
        let end = ((to * len as f64).round() as usize).clamp(start, len);
        &self.points[start..end]
    }
}

/// Mean positive excess of the curve over the baseline ERT.
pub fn auc(curve: &LearningCurve, baseline_ert_over_n: f64) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::Usage("AUC of an empty curve".into()));
    }
    Ok(curve
        .points
        .iter()
        .map(|&(_, v)| (v - baseline_ert_over_n).max(0.0))
        .sum::<f64>()
        / curve.points.len() as f64)
}

/// Training phases over which hitting rates are reported.
pub const HIT_WINDOWS: [(f64, f64); 3] = [(0.0, 1.0), (0.5, 1.0), (0.75, 1.0)];

/// Fraction of checkpoints within `μ ± 0.25σ` of the baseline.
///
/// An empty window yields 0.
pub fn hitting_rate(values: &[f64], baseline_mean: f64, baseline_std: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let lo = baseline_mean - 0.25 * baseline_std;
    let hi = baseline_mean + 0.25 * baseline_std;
    values.iter().filter(|&&v| v >= lo && v <= hi).count() as f64 / values.len() as f64
}

pub fn hitting_rate_window(curve: &LearningCurve, baseline: &EvalResult, window: (f64, f64)) -> f64 {
    let values: Vec<f64> = curve.window(window.0, window.1).iter().map(|p| p.1).collect();
    hitting_rate(&values, baseline.mean_ert_over_n, baseline.std_over_n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_difference: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

impl PairedTTest {
    /// Significance at level `alpha` after Bonferroni correction for
    /// `comparisons` tests.
    pub fn significant(&self, alpha: f64, comparisons: usize) -> bool {
        self.p_value < alpha / comparisons.max(1) as f64
    }
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Usage(
            "paired t-test needs two equal-length samples of size >= 2".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&diffs);
    let df = (diffs.len() - 1) as f64;
    if sd == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTTest {
            mean_difference: mean,
            t,
            df,
            p_value: p,
        });
    }
    let t = mean / (sd / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest {
        mean_difference: mean,
        t,
        df,
        p_value,
    })
}

/// Half-open fitness interval `[lo, hi)`; `hi = n + 1` covers the optimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessInterval {
    pub lo: usize,
    pub hi: usize,
}

pub fn default_intervals(n: usize) -> Vec<FitnessInterval> {
    let half = n / 2;
    let upper = (0.9 * n as f64).ceil() as usize;
    vec![
        FitnessInterval { lo: half, hi: upper },
        FitnessInterval { lo: upper, hi: n + 1 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalShare {
    pub interval: FitnessInterval,
    /// Mean over episodes of the fraction of steps taken from this interval.
    pub mean_fraction: f64,
    pub mean_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDiagnostics {
    pub n: usize,
    pub lengths: Vec<usize>,
    pub median_length: f64,
    pub q1_length: f64,
    pub q3_length: f64,
    pub intervals: Vec<IntervalShare>,
}

/// Episode-length distribution and the share of steps spent per fitness
/// interval (by the fitness at which each decision was taken).
pub fn episode_diagnostics(
    policy: &PolicyKind,
    config: &EnvConfig,
    seeds: &[u64],
    intervals: &[FitnessInterval],
) -> Result<EpisodeDiagnostics> {
    if seeds.is_empty() {
        return Err(Error::Usage("diagnostics need at least one episode".into()));
    }
    let traces = run_episodes(policy, config, seeds)?;
    let lengths: Vec<usize> = traces.iter().map(EpisodeTrace::len).collect();
    let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let q = |p| crate::reward::quantile_sorted(&sorted, p);
    let shares = intervals
        .iter()
        .map(|&iv| {
            let (fractions, counts): (Vec<f64>, Vec<f64>) = traces
                .iter()
                .map(|t| {
                    let c = t
                        .steps
                        .iter()
                        .filter(|s| s.fitness >= iv.lo && s.fitness < iv.hi)
                        .count() as f64;
                    (if t.is_empty() { 0.0 } else { c / t.len() as f64 }, c)
                })
                .unzip();
            IntervalShare {
                interval: iv,
                mean_fraction: fractions.iter().sum::<f64>() / fractions.len() as f64,
                mean_steps: counts.iter().sum::<f64>() / counts.len() as f64,
            }
        })
        .collect();
    Ok(EpisodeDiagnostics {
        n: config.n,
        median_length: q(0.5),
        q1_length: q(0.25),
        q3_length: q(0.75),
        lengths,
        intervals: shares,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepVariance {
    pub step: usize,
    pub count: usize,
    pub mean_return: f64,
    pub variance: f64,
}

/// Per-step-index variance of the discounted return-to-go
/// `G_t = Σ_{j≥t} γ^{j−t} r_j`, over the trajectories still running at `t`.
pub fn return_variances(trajectories: &[Vec<f64>], gamma: f64) -> Vec<StepVariance> {
    let returns: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|rs| {
            let mut g = vec![0.0; rs.len()];
            let mut acc = 0.0;
            for (t, &r) in rs.iter().enumerate().rev() {
                acc = r + gamma * acc;
                g[t] = acc;
            }
            g
        })
        .collect();
    let max_len = returns.iter().map(Vec::len).max().unwrap_or(0);
    (0..max_len)
        .map(|t| {
            let at_t: Vec<f64> = returns.iter().filter_map(|g| g.get(t).copied()).collect();
            let (mean, sd) = mean_std(&at_t);
            StepVariance {
                step: t,
                count: at_t.len(),
                mean_return: mean,
                variance: sd * sd,
            }
        })
        .collect()
}

/// Rolls out `policy` once per seed and reports [`return_variances`] of the
/// naive reward.
pub fn variance_probe(
    policy: &PolicyKind,
    config: &EnvConfig,
    gamma: f64,
    seeds: &[u64],
) -> Result<Vec<StepVariance>> {
    if seeds.len() < 2 {
        return Err(Error::Usage("variance probe needs at least two episodes".into()));
    }
    let traces = run_episodes(policy, config, seeds)?;
    let rewards: Vec<Vec<f64>> = traces.iter().map(EpisodeTrace::naive_rewards).collect();
    Ok(return_variances(&rewards, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_arithmetic() {
        let r = EvalResult::from_runtimes(50, vec![1, 2], vec![100, 200], vec![true, true]);
        assert!((r.mean_ert_over_n - 3.0).abs() < 1e-15);
        assert!((r.std_over_n - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gap_signs() {
        let a = EvalResult::from_runtimes(10, vec![0], vec![60], vec![true]);
        let b = EvalResult::from_runtimes(10, vec![0], vec![50], vec![true]);
        assert_eq!(gap(&b, &b).unwrap(), 0.0);
        assert!((gap(&a, &b).unwrap() - 0.2).abs() < 1e-12);
        assert!(gap(&b, &a).unwrap() < 0.0);
        let c = EvalResult::from_runtimes(11, vec![0], vec![50], vec![true]);
        assert!(gap(&a, &c).is_err());
    }

    #[test]
    fn auc_cases() {
        let flat = LearningCurve::new(vec![(2000, 5.0), (4000, 5.0)]).unwrap();
        assert_eq!(auc(&flat, 5.0).unwrap(), 0.0);
        let above = LearningCurve::new((1..=7).map(|i| (i * 2000, 7.0)).collect()).unwrap();
        assert!((auc(&above, 5.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(auc(&flat, 6.0).unwrap(), 0.0);
        assert!(auc(&LearningCurve::default(), 1.0).is_err());
        assert!(LearningCurve::new(vec![(2, 1.0), (2, 1.0)]).is_err());
    }

    #[test]
    fn hitting_rate_cases() {
        let hr = hitting_rate(&[5.7, 6.5, 5.9, 7.0], 5.934, 1.28);
        assert!((hr - 0.5).abs() < 1e-12);
        assert_eq!(hitting_rate(&[5.934; 4], 5.934, 1.28), 1.0);
        assert_eq!(hitting_rate(&[], 5.934, 1.28), 0.0);
        let curve = LearningCurve::new((0..8).map(|i| (i, if i < 4 { 9.0 } else { 5.9 })).collect()).unwrap();
        let base = EvalResult {
            n: 100,
            seeds: vec![],
            runtimes: vec![],
            successes: vec![],
            mean_ert_over_n: 5.934,
            std_over_n: 1.28,
        };
        assert_eq!(hitting_rate_window(&curve, &base, (0.0, 1.0)), 0.5);
        assert_eq!(hitting_rate_window(&curve, &base, (0.5, 1.0)), 1.0);
        assert_eq!(hitting_rate_window(&curve, &base, (0.75, 1.0)), 1.0);
    }

    #[test]
    fn t_test_hand_computed() {
        // Differences 1, 2, 3, 4, 5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5)/sqrt(5)) = 3·sqrt(2).
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.df, 4.0);
        // Two-sided p for t = 4.2426 with 4 df is 0.01324 (tables).
        assert!((t.p_value - 0.01324).abs() < 5e-5, "{}", t.p_value);
        assert!(t.significant(0.05, 1));
        assert!(!t.significant(0.01, 1));
        assert!(paired_t_test(&a, &b[..3]).is_err());
    }

    #[test]
    fn return_variance_cases() {
        let constant = vec![vec![-1.0; 5]; 4];
        assert!(return_variances(&constant, 0.9).iter().all(|v| v.variance == 0.0));
        let trajs = vec![vec![1.0, 5.0], vec![3.0, 2.0], vec![-2.0, 0.0, 4.0]];
        let v0 = return_variances(&trajs, 0.0);
        let (_, sd) = mean_std(&[1.0, 3.0, -2.0]);
        assert!((v0[0].variance - sd * sd).abs() < 1e-12);
        assert_eq!(v0[2].count, 1);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = EnvConfig::new(30, 0);
        let seeds: Vec<u64> = (0..20).collect();
        let a = evaluate(&PolicyKind::Random, &cfg, &seeds).unwrap();
        let b = evaluate(&PolicyKind::Random, &cfg, &seeds).unwrap();
        assert_eq!(a, b);
        assert!(a.runtimes.iter().all(|&r| r <= cfg.cutoff_evals));
        assert!(evaluate(&PolicyKind::Random, &cfg, &[]).is_err());
    }

    #[test]
    fn selection_single_and_ranking() {
        let cfg = EnvConfig::new(20, 0);
        let seeds: Vec<u64> = (0..30).collect();
        let only = Candidate {
            step: 2000,
            policy: TabularPolicy::discrete_theory(20),
            quick_mean: 6.0,
        };
        let sel = best_policy_selection(std::slice::from_ref(&only), &cfg, &seeds, 5).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.policy, only.policy);

        let quick = [6.0, 5.5, 7.0, 6.2, 6.1, 6.3];
        let cands: Vec<Candidate> = quick
            .iter()
            .enumerate()
            .map(|(i, &q)| Candidate {
                step: (i as u64 + 1) * 2000,
                policy: TabularPolicy::discrete_theory(20),
                quick_mean: q,
            })
            .collect();
        let sel = best_policy_selection(&cands, &cfg, &seeds, 5).unwrap();
        assert_eq!(sel.finalists.len(), 5);
        assert!(sel.finalists.iter().all(|&(i, _)| i != 2));
    }
}
