use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use onemax_dac::ddqn::tabular_shift_oracle;
use onemax_dac::env::EnvConfig;
use onemax_dac::harness::{self, ExperimentConfig, Overrides, RewardName, OUTPUT_ROOT_VAR};
use onemax_dac::metrics::{default_intervals, episode_diagnostics, evaluate, variance_probe};
use onemax_dac::seeds::{seed_list, tags};

#[derive(Parser)]
#[command(name = "onemax-dac", version, about = "Learn and evaluate λ schedules for the (1+(λ,λ))-GA on OneMax")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents (or evaluate a fixed policy) as described by a config.
    Train {
        /// Preset name or path to a TOML config.
        #[arg(long)]
        config: String,
        /// Problem size.
        #[arg(long)]
        n: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Training steps per repetition.
        #[arg(long)]
        steps: Option<u64>,
        /// Reward variant: naive, scaled, shifted_fixed, shifted_adaptive, scaled_shifted_adaptive.
        #[arg(long)]
        reward: Option<String>,
        /// Discount factor.
        #[arg(long)]
        gamma: Option<f64>,
        /// Number of repetitions.
        #[arg(long)]
        repetitions: Option<u64>,
        /// Output root.
        #[arg(long, env = OUTPUT_ROOT_VAR, default_value = harness::DEFAULT_OUTPUT_ROOT)]
        out: PathBuf,
    },
    /// Evaluate one policy: pi_cont, pi_disc, random, constant:<λ> or a policy CSV.
    Eval {
        #[arg(long)]
        policy: String,
        #[arg(long)]
        n: usize,
        /// Number of episodes.
        #[arg(long, default_value_t = 1000)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        /// Write per-seed runtimes to this CSV file.
        #[arg(long)]
        runtimes: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Compare π_cont and π_disc on shared seeds.
    Baselines {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Episode-length statistics and the per-step return variance.
    Diag {
        #[arg(long, default_value = "pi_disc")]
        policy: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        /// Discount factors for the variance probe.
        #[arg(long, value_delimiter = ',', default_values_t = [0.99, 1.0])]
        gammas: Vec<f64>,
        /// Variance rows to print per discount factor.
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
    /// Check that a constant reward shift offsets tabular Q values by b/(1−γ).
    ShiftOracle {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-5.0, -1.0, 0.0, 3.0])]
        bias: Vec<f64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            n,
            seed,
            steps,
            reward,
            gamma,
            repetitions,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let reward = reward.map(|r| r.parse::<RewardName>()).transpose()?;
            cfg.apply(&Overrides {
                n,
                master_seed: seed,
                total_steps: steps,
                reward,
                gamma,
                repetitions,
            })?;
            let summaries = harness::run_experiment(&cfg, &out)?;
            let mut aborted = false;
            for s in &summaries {
                println!("{} (n={}, reward={}) -> {}", s.name, s.n, s.reward, s.dir.display());
                for b in &s.baselines {
                    println!("  {:<12} {:>8.4} ± {:.4}", b.policy, b.mean_ert_over_n, b.std_ert_over_n);
                }
                for r in &s.runs {
                    println!(
                        "  rep {:<8} {:>8.4} ± {:.4}  gap to pi_disc {:+.2}%{}",
                        r.repetition,
                        r.best.mean_ert_over_n,
                        r.best.std_ert_over_n,
                        100.0 * r.gap_to_pi_disc,
                        r.aborted.as_deref().map(|a| format!("  ABORTED: {a}")).unwrap_or_default()
                    );
                }
                aborted |= s.any_aborted();
            }
            Ok(if aborted { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Eval {
            policy,
            n,
            seeds,
            master_seed,
            runtimes,
            json,
        } => {
            let kind = harness::parse_policy(&policy, n)?;
            let list = seed_list(master_seed, 0, tags::EVAL, seeds);
            let result = evaluate(&kind, &EnvConfig::new(n, 0), &list)?;
            if let Some(path) = runtimes {
                harness::write_runtimes(&path, &result)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let summary = harness::EvalSummary::new(kind.to_string(), &result);
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                println!("policy,n,seeds,mean_ert_over_n,std_ert_over_n,success_rate");
                println!(
                    "{},{n},{},{:.4},{:.4},{:.4}",
                    summary.policy, summary.seeds, summary.mean_ert_over_n, summary.std_ert_over_n, summary.success_rate
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Baselines {
            n,
            seeds,
            master_seed,
            json,
        } => {
            let list = seed_list(master_seed, 0, tags::EVAL, seeds);
            let report = harness::baselines(n, &list)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("policy,n,seeds,mean_ert_over_n,std_ert_over_n,success_rate");
                for r in &report.rows {
                    println!(
                        "{},{n},{},{:.4},{:.4},{:.4}",
                        r.policy, r.seeds, r.mean_ert_over_n, r.std_ert_over_n, r.success_rate
                    );
                }
                let t = &report.t_test;
                println!(
                    "# paired t-test pi_cont - pi_disc: diff {:.4}, t {:.3}, df {}, p {:.4}, significant at 99%: {}",
                    t.mean_difference,
                    t.t,
                    t.df,
                    t.p_value,
                    t.significant(0.01, 1)
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Diag {
            policy,
            n,
            seeds,
            master_seed,
            gammas,
            steps,
        } => {
            if seeds < 2 {
                bail!("diagnostics need at least two seeds");
            }
            let kind = harness::parse_policy(&policy, n)?;
            let env = EnvConfig::new(n, 0);
            let list = seed_list(master_seed, 0, tags::EVAL, seeds);
            let d = episode_diagnostics(&kind, &env, &list, &default_intervals(n))?;
            println!(
                "{kind} n={n}: episode length median {:.1} (Q1 {:.1}, Q3 {:.1})",
                d.median_length, d.q1_length, d.q3_length
            );
            for s in &d.intervals {
                println!(
                    "  fitness [{}, {}): {:.1}% of steps, {:.1} steps per episode",
                    s.interval.lo,
                    s.interval.hi,
                    100.0 * s.mean_fraction,
                    s.mean_steps
                );
            }
            println!("gamma,step,count,mean_return,variance");
            for g in gammas {
                for v in variance_probe(&kind, &env, g, &list)?.iter().take(steps) {
                    println!("{g},{},{},{:.4},{:.4}", v.step, v.count, v.mean_return, v.variance);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ShiftOracle { gamma, bias } => {
            let mut ok = true;
            println!("bias,offset,max_deviation,greedy_identical");
            for b in bias {
                let r = tabular_shift_oracle(gamma, b)?;
                ok &= r.greedy_identical && r.max_deviation < 1e-8;
                println!("{b},{:.6},{:.3e},{}", r.expected_offset, r.max_deviation, r.greedy_identical);
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
