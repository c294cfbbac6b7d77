//! Randomized invariants of the environment, rewards and learners.

use onemax_dac::encoding::{decode_state, encode_state, StateGroups};
use onemax_dac::env::{EnvConfig, OneMaxEnv};
use onemax_dac::neural::{clip_global_norm, soft_update, Matrix, Mlp};
use onemax_dac::onemax::rng_from_seed;
use onemax_dac::ppo::{compute_gae, log_softmax, normalize_advantages, RolloutStep};
use onemax_dac::seeds::{derive_seed, tags};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_respect_accounting(n in 2usize..80, seed in any::<u64>(), policy_seed in any::<u64>()) {
        let mut env = OneMaxEnv::new(EnvConfig::new(n, seed)).unwrap();
        let mut rng = rng_from_seed(policy_seed);
        let k = env.portfolio().len();
        let mut total = 0;
        while !env.is_finished() && !env.state().is_optimal() {
            let before = env.fitness();
            let lambda = env.portfolio().lambdas()[rng.random_range(0..k)];
            let out = env.step(lambda).unwrap();
            prop_assert!(out.step_evals >= lambda as u64 && out.step_evals <= 2 * lambda as u64);
            prop_assert!(out.next_fitness >= before);
            prop_assert_eq!(out.terminated, out.next_fitness == n);
            total += out.step_evals;
            prop_assert_eq!(env.state().evals, total);
            if out.truncated {
                prop_assert!(total >= env.config().cutoff_evals);
            }
        }
    }

    #[test]
    fn state_encoding_round_trips(n in 1usize..10_000, frac in 0.0f64..=1.0) {
        let f = ((n as f64) * frac).floor() as usize;
        prop_assert_eq!(decode_state(encode_state(f, n), n), f);
    }

    #[test]
    fn state_groups_index_distinct_rows(fits in proptest::collection::vec(0usize..=40, 1..200)) {
        let states: Vec<f64> = fits.iter().map(|&f| encode_state(f, 40)).collect();
        let g = StateGroups::new(states.iter().copied(), 40);
        for (s, &row) in states.iter().zip(&g.row_of) {
            prop_assert_eq!(g.rows.get(row, 0), *s);
        }
        let mut distinct = fits.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(g.unique_count(), distinct.len());
    }

    #[test]
    fn soft_update_is_convex_combination(tau in 0.001f64..=1.0, s1 in any::<u64>(), s2 in any::<u64>()) {
        let online = Mlp::standard(1, 4, &mut rng_from_seed(s1));
        let mut target = Mlp::standard(1, 4, &mut rng_from_seed(s2));
        let before = target.clone();
        soft_update(&mut target, &online, tau).unwrap();
        for ((t, b), o) in target.params().iter().zip(before.params()).zip(online.params()) {
            prop_assert!((t - ((1.0 - tau) * b + tau * o)).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_joint_norm(scale in 0.01f64..100.0, max in 0.1f64..5.0) {
        let net = Mlp::standard(1, 3, &mut rng_from_seed(3));
        let up = Matrix::from_vec(1, 3, vec![scale, -scale, scale]).unwrap();
        let grads_at = |x: f64| {
            let (_, cache) = net.forward_cached(&Matrix::column(vec![x])).unwrap();
            net.backward(&cache, &up).unwrap()
        };
        let (mut a, mut b) = (grads_at(0.5), grads_at(0.7));
        let before = (a.norm().powi(2) + b.norm().powi(2)).sqrt();
        let reported = clip_global_norm(&mut [&mut a, &mut b], max);
        prop_assert!((reported - before).abs() < 1e-9 * before.max(1.0));
        let after = (a.norm().powi(2) + b.norm().powi(2)).sqrt();
        prop_assert!(after <= max + 1e-9);
        if before <= max {
            prop_assert!((after - before).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_normalizes(logits in proptest::collection::vec(-50.0f64..50.0, 1..10)) {
        let lp = log_softmax(&logits);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_advantages_have_unit_scale(values in proptest::collection::vec(-100.0f64..100.0, 2..100)) {
        let mut a = values.clone();
        normalize_advantages(&mut a);
        let m = a.len() as f64;
        let mean = a.iter().sum::<f64>() / m;
        prop_assert!(mean.abs() < 1e-9);
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-6 {
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn terminal_steps_isolate_gae(rewards in proptest::collection::vec(-5.0f64..5.0, 2..30), gamma in 0.1f64..1.0, lam in 0.0f64..=1.0) {
        // Every step terminal: each advantage is its own one-step TD error.
        let steps: Vec<RolloutStep> = rewards
            .iter()
            .map(|&r| RolloutStep {
                state: 0.0,
                action: 0,
                reward: r,
                value: 0.5,
                log_prob: 0.0,
                terminated: true,
                truncated: false,
                truncation_value: 0.0,
            })
            .collect();
        let (adv, ret) = compute_gae(&steps, 100.0, gamma, lam);
        for (i, r) in rewards.iter().enumerate() {
            prop_assert!((adv[i] - (r - 0.5)).abs() < 1e-12);
            prop_assert!((ret[i] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_streams_are_disjoint(master in any::<u64>(), rep in 0u64..1000) {
        let train = derive_seed(master, rep, tags::TRAIN_ENV);
        prop_assert_ne!(train, derive_seed(master, rep, tags::FINAL_EVAL));
        prop_assert_ne!(train, derive_seed(master, rep + 1, tags::TRAIN_ENV));
        prop_assert_eq!(train, derive_seed(master, rep, tags::TRAIN_ENV));
    }
}
