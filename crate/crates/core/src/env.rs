//! The (1+(λ,λ))-GA on OneMax as an episodic decision process.
//!
//! One decision (a choice of λ) is taken per GA iteration. An episode ends
//! when the optimum is found (termination) or when the cumulative number of
//! evaluations reaches the cutoff (truncation). The iteration in progress
//! always completes, so the final evaluation count may overshoot the cutoff
//! by at most one iteration. The initial solution's evaluation is not
//! counted.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::onemax::{one_max, rng_from_seed, sample_bin_gt0, BitString, GaRng};

/// Discrete λ choices `{2^i | 2^i <= n}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    lambdas: Vec<u32>,
}

impl Portfolio {
    pub fn new(n: usize) -> Self {
        let lambdas = std::iter::successors(Some(1u32), |&l| l.checked_mul(2))
            .take_while(|&l| l as usize <= n.max(1))
            .collect();
        Self { lambdas }
    }

    /// Number of actions `k`.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[u32] {
        &self.lambdas
    }

    pub fn lambda(&self, index: usize) -> Option<u32> {
        self.lambdas.get(index).copied()
    }

    pub fn index_of(&self, lambda: u32) -> Option<usize> {
        self.lambdas.iter().position(|&l| l == lambda)
    }

    /// Index of the entry closest to `value`; ties go to the smaller λ.
    pub fn nearest(&self, value: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &l) in self.lambdas.iter().enumerate() {
            let dist = (l as f64 - value).abs();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n: usize,
    pub cutoff_evals: u64,
    pub seed: u64,
}

impl EnvConfig {
    /// Configuration with the default cutoff `⌊0.8 n²⌋`.
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            cutoff_evals: default_cutoff(n),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("problem size {} is below 2", self.n)));
        }
        if self.cutoff_evals < self.n as u64 {
            return Err(Error::Config(format!(
                "cutoff {} is below the problem size {}",
                self.cutoff_evals, self.n
            )));
        }
        Ok(())
    }
}

pub fn default_cutoff(n: usize) -> u64 {
    (0.8 * (n as f64) * (n as f64)).floor() as u64
}

/// State of one GA run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaState {
    pub x: BitString,
    pub fitness: usize,
    pub evals: u64,
    pub iteration: u64,
}

impl GaState {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn is_optimal(&self) -> bool {
        self.fitness == self.n()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_fitness: usize,
    pub delta_f: usize,
    pub step_evals: u64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepOutcome {
    pub fn episode_over(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Uniform random initial state; its evaluation is free.
pub fn reset_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GaState {
    let x = BitString::random(n, rng);
    let fitness = one_max(&x);
    GaState {
        x,
        fitness,
        evals: 0,
        iteration: 0,
    }
}

fn flip_gain(x: &BitString, pos: usize) -> isize {
    if x.get(pos) {
        -1
    } else {
        1
    }
}

/// One full iteration of the (1+(λ,λ))-GA with population size `lambda`.
///
/// Mutants and crossover offspring are represented by the positions in which
/// they differ from `x`; a crossover child that coincides with `x` or with
/// the mutation winner inherits the known fitness and costs no evaluation.
pub fn ga_step<R: Rng + ?Sized>(
    state: &mut GaState,
    lambda: u32,
    cutoff_evals: u64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let n = state.n();
    if lambda == 0 {
        return Err(Error::Usage("population size must be positive".into()));
    }
    if state.is_optimal() || state.evals >= cutoff_evals {
        return Err(Error::Usage("episode already finished; reset first".into()));
    }
    let lam = lambda as usize;
    let p = (lam as f64 / n as f64).min(1.0);
    let c = 1.0 / lam as f64;
    let f = state.fitness as isize;

    // Mutation phase.
    let ell = sample_bin_gt0(n, p, rng)?;
    let mut mutant_best = isize::MIN;
    let mut mutant_ties = 0u32;
    let mut winner: Vec<usize> = Vec::with_capacity(ell);
    for _ in 0..lam {
        let flips = index::sample(rng, n, ell).into_vec();
        let fit = f + flips.iter().map(|&i| flip_gain(&state.x, i)).sum::<isize>();
        if fit > mutant_best {
            mutant_best = fit;
            mutant_ties = 1;
            winner = flips;
        } else if fit == mutant_best {
            mutant_ties += 1;
            if rng.random_range(0..mutant_ties) == 0 {
                winner = flips;
            }
        }
    }
    let mut step_evals = lam as u64;
    let f_xprime = mutant_best;

    // Crossover phase.
    let mut cross_best = isize::MIN;
    let mut cross_ties = 0u32;
    let mut cross_winner: Vec<usize> = Vec::new();
    let mut subset = Vec::with_capacity(winner.len());
    for _ in 0..lam {
        subset.clear();
        subset.extend(winner.iter().copied().filter(|_| rng.random_bool(c)));
        let fit = if subset.is_empty() {
            f
        } else if subset.len() == winner.len() {
            f_xprime
        } else {
            step_evals += 1;
            f + subset.iter().map(|&i| flip_gain(&state.x, i)).sum::<isize>()
        };
        if fit > cross_best {
            cross_best = fit;
            cross_ties = 1;
            cross_winner.clone_from(&subset);
        } else if fit == cross_best {
            cross_ties += 1;
            if rng.random_range(0..cross_ties) == 0 {
                cross_winner.clone_from(&subset);
            }
        }
    }

    // Selection.
    let (f_y, y_flips) = if cross_best > f_xprime {
        (cross_best, &cross_winner)
    } else {
        (f_xprime, &winner)
    };
    if f_y >= f {
        for &i in y_flips {
            state.x.flip(i);
        }
        state.fitness = f_y as usize;
    }
    state.evals += step_evals;
    state.iteration += 1;

    let terminated = state.is_optimal();
    Ok(StepOutcome {
        next_fitness: state.fitness,
        delta_f: state.fitness - f as usize,
        step_evals,
        terminated,
        truncated: !terminated && state.evals >= cutoff_evals,
    })
}

/// Gym-style wrapper owning its RNG and the current GA state.
#[derive(Clone, Debug)]
pub struct OneMaxEnv {
    config: EnvConfig,
    portfolio: Portfolio,
    rng: GaRng,
    state: GaState,
    finished: bool,
}

impl OneMaxEnv {
    /// Creates the environment and performs an initial reset.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let state = reset_state(config.n, &mut rng);
        Ok(Self {
            portfolio: Portfolio::new(config.n),
            config,
            rng,
            state,
            finished: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn portfolio(&self) -> &Portfolio {
        &self.portfolio
    }

    pub fn state(&self) -> &GaState {
        &self.state
    }

    pub fn fitness(&self) -> usize {
        self.state.fitness
    }

    /// Fitness divided by `n`, the observation fed to agents.
    pub fn observation(&self) -> f64 {
        self.state.fitness as f64 / self.config.n as f64
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Starts a new episode from the environment's own RNG stream.
    pub fn reset(&mut self) -> &GaState {
        self.state = reset_state(self.config.n, &mut self.rng);
        self.finished = false;
        &self.state
    }

    pub fn step(&mut self, lambda: u32) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::Usage("episode already finished; reset first".into()));
        }
        let out = ga_step(&mut self.state, lambda, self.config.cutoff_evals, &mut self.rng)?;
        self.finished = out.episode_over();
        Ok(out)
    }

    /// Steps with the λ at `action` in the portfolio.
    pub fn step_action(&mut self, action: usize) -> Result<StepOutcome> {
        let lambda = self.portfolio.lambda(action).ok_or_else(|| {
            Error::Usage(format!(
                "action {action} outside portfolio of size {}",
                self.portfolio.len()
            ))
        })?;
        self.step(lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portfolio_is_powers_of_two() {
        assert_eq!(Portfolio::new(50).lambdas(), &[1, 2, 4, 8, 16, 32]);
        assert_eq!(Portfolio::new(100).lambdas(), &[1, 2, 4, 8, 16, 32, 64]);
        assert_eq!(Portfolio::new(64).lambdas(), &[1, 2, 4, 8, 16, 32, 64]);
        let p = Portfolio::new(100);
        assert_eq!(p.nearest(10.0), 3);
        assert_eq!(p.nearest(1.414), 0);
        assert_eq!(p.nearest(3.0), 1); // 2 and 4 tie, smaller wins
    }

    #[test]
    fn cutoff_default_and_validation() {
        assert_eq!(default_cutoff(50), 2000);
        assert_eq!(default_cutoff(100), 8000);
        let mut cfg = EnvConfig::new(50, 0);
        assert!(cfg.validate().is_ok());
        cfg.cutoff_evals = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lambda_one_costs_one_evaluation() {
        let mut rng = rng_from_seed(9);
        for _ in 0..200 {
            let mut s = reset_state(30, &mut rng);
            if s.is_optimal() {
                continue;
            }
            let out = ga_step(&mut s, 1, 10_000, &mut rng).unwrap();
            assert_eq!(out.step_evals, 1);
        }
    }

    #[test]
    fn stepping_finished_episode_is_rejected() {
        let mut rng = rng_from_seed(2);
        let mut s = GaState {
            x: BitString::ones(10),
            fitness: 10,
            evals: 0,
            iteration: 0,
        };
        assert!(ga_step(&mut s, 2, 100, &mut rng).is_err());

        let mut env = OneMaxEnv::new(EnvConfig {
            n: 10,
            cutoff_evals: 10,
            seed: 1,
        })
        .unwrap();
        loop {
            if env.step(8).unwrap().episode_over() {
                break;
            }
        }
        assert!(env.step(1).is_err());
        env.reset();
        assert!(env.step(1).is_ok());
    }

    #[test]
    fn episode_invariants() {
        let mut env = OneMaxEnv::new(EnvConfig::new(40, 17)).unwrap();
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            env.reset();
            let mut total = 0;
            let mut prev = env.fitness();
            loop {
                let lam = env.portfolio().lambdas()[rng.random_range(0..env.portfolio().len())];
                let out = env.step(lam).unwrap();
                assert!(out.step_evals >= lam as u64 && out.step_evals <= 2 * lam as u64);
                assert!(out.next_fitness >= prev);
                assert_eq!(out.delta_f, out.next_fitness - prev);
                prev = out.next_fitness;
                total += out.step_evals;
                assert_eq!(total, env.state().evals);
                assert_eq!(out.terminated, out.next_fitness == 40);
                assert_eq!(
                    out.truncated,
                    env.state().evals >= env.config().cutoff_evals && out.next_fitness < 40
                );
                assert_eq!(one_max(&env.state().x), env.fitness());
                if out.episode_over() {
                    break;
                }
            }
        }
    }

    #[test]
    fn seeded_resets_match() {
        let a = OneMaxEnv::new(EnvConfig::new(50, 123)).unwrap();
        let b = OneMaxEnv::new(EnvConfig::new(50, 123)).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn initial_fitness_is_half_n_on_average() {
        let mut rng = rng_from_seed(99);
        let resets = 100_000;
        let total: usize = (0..resets).map(|_| reset_state(50, &mut rng).fitness).sum();
        let mean = total as f64 / resets as f64;
        assert!((mean - 25.0).abs() < 0.1, "{mean}");
    }
}
