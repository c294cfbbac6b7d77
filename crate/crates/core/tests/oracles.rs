//! Library results checked against independent reference computations.

use onemax_dac::ddqn::{DdqnConfig, DdqnTrainer};
use onemax_dac::env::EnvConfig;
use onemax_dac::metrics::{best_policy_selection, paired_t_test, Candidate};
use onemax_dac::onemax::{rng_from_seed, sample_bin_gt0};
use onemax_dac::policy::TabularPolicy;
use onemax_dac::reward::{collect_reward_stats, RewardVariant};
use proptest::prelude::*;

/// Quantile with linear interpolation between order statistics at `(N − 1)·q`.
fn reference_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[test]
fn quartiles_of_small_example() {
    let s = collect_reward_stats(&[-1.0, -2.0, -3.0, -4.0]).unwrap();
    assert_eq!(s.mean, -2.5);
    assert!((s.q1 - -3.25).abs() < 1e-12);
    assert!((s.q3 - -1.75).abs() < 1e-12);
}

proptest! {
    #[test]
    fn quartiles_match_reference(values in proptest::collection::vec(-1e3f64..1e3, 1..300)) {
        let s = collect_reward_stats(&values).unwrap();
        prop_assert!((s.q1 - reference_quantile(&values, 0.25)).abs() < 1e-9);
        prop_assert!((s.q3 - reference_quantile(&values, 0.75)).abs() < 1e-9);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((s.mean - mean).abs() < 1e-9);
    }
}

#[test]
fn conditional_binomial_mean_matches_closed_form() {
    let (n, p) = (100usize, 0.01);
    let expected = n as f64 * p / (1.0 - (1.0 - p).powi(n as i32));
    assert!((expected - 1.582).abs() / 1.582 < 0.01);
    let mut rng = rng_from_seed(2);
    let draws = 1_000_000;
    let total: usize = (0..draws).map(|_| sample_bin_gt0(n, p, &mut rng).unwrap()).sum();
    let mean = total as f64 / draws as f64;
    assert!((mean - expected).abs() / expected < 0.01, "{mean} vs {expected}");
}

/// Two-sided p-value by Simpson integration of the Student t density.
fn reference_p_value(t: f64, df: f64) -> f64 {
    let ln_gamma = |x: f64| statrs::function::gamma::ln_gamma(x);
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let steps = 20_000;
    let h = t.abs() / steps as f64;
    let mut acc = pdf(0.0) + pdf(t.abs());
    for i in 1..steps {
        acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let central = acc * h / 3.0;
    1.0 - 2.0 * central
}

#[test]
fn t_test_matches_textbook_arithmetic() {
    let a = [5.1, 4.9, 6.2, 5.8, 6.0];
    let b = [4.8, 5.0, 5.5, 5.1, 5.9];
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / 5.0;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    let t_expected = mean / (sd / 5f64.sqrt());
    let r = paired_t_test(&a, &b).unwrap();
    assert!((r.t - t_expected).abs() < 1e-12);
    assert_eq!(r.df, 4.0);
    assert!((r.p_value - reference_p_value(t_expected, 4.0)).abs() < 1e-8);
    assert!((r.mean_difference - mean).abs() < 1e-12);
}

#[test]
fn final_evaluation_can_overturn_quick_ranking() {
    let n = 30;
    let good = TabularPolicy::discrete_theory(n);
    let poor = TabularPolicy::new(n, vec![3; n]).unwrap();
    // The poor policy is given the better quick score, as a lucky quick evaluation would.
    let candidates = vec![
        Candidate { step: 2000, policy: poor, quick_mean: 1.0 },
        Candidate { step: 4000, policy: good, quick_mean: 2.0 },
    ];
    let env = EnvConfig::new(n, 0);
    let seeds: Vec<u64> = (0..300).collect();
    let top1 = best_policy_selection(&candidates, &env, &seeds, 1).unwrap();
    assert_eq!(top1.step, 2000);
    let top2 = best_policy_selection(&candidates, &env, &seeds, 2).unwrap();
    assert_eq!(top2.step, 4000);
    assert_eq!(top2.finalists.len(), 2);
    assert!(top2.result.mean_ert_over_n < top1.result.mean_ert_over_n);
}

#[test]
fn adaptive_bias_grows_in_magnitude_with_n() {
    let biases: Vec<f64> = [50usize, 100, 200]
        .iter()
        .map(|&n| {
            let mut cfg = DdqnConfig::new(EnvConfig::new(n, 11), RewardVariant::ShiftedAdaptive);
            cfg.agent_seed = 12;
            let mut trainer = DdqnTrainer::new(cfg).unwrap();
            trainer.warmup().unwrap();
            assert_eq!(trainer.buffer.len(), 10_000);
            trainer.reward.resolved_bias.unwrap()
        })
        .collect();
    assert!(biases.iter().all(|&b| b < 0.0), "{biases:?}");
    assert!(biases[0].abs() < biases[1].abs() && biases[1].abs() < biases[2].abs(), "{biases:?}");
}
