use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use slicearb::config::{ExperimentConfig, Overrides};
use slicearb::runner::{load_summary, run, RunOptions};
use slicearb::summary::{compare, SERVED_THRESHOLD};
use slicearb::trace::{serialize_trace, synthesize_trace};
use slicearb_core::domain::{validate_scenario, RewardMode};
use slicearb_core::trainer::Algo;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    Coop,
    Gcn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RewardModeArg {
    AsWritten,
    Satisfaction,
}

/// Train and evaluate slice-allocation agents, or compare two runs.
///
/// Every flag can also be set through an environment variable named
/// SLICEARB_ followed by the flag name in upper case (e.g. SLICEARB_EPISODES,
/// SLICEARB_REWARD_MODE). Flags win over variables, variables over the config.
#[derive(Debug, Parser)]
#[command(name = "slicearb", version, subcommand_negates_reqs = true, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Experiment file (TOML).
    #[arg(long, env = "SLICEARB_CONFIG", required = true)]
    config: Option<PathBuf>,
    #[arg(long, env = "SLICEARB_ALGO", value_enum)]
    algo: Option<AlgoArg>,
    /// Neighbours per agent; selects the k-NN graph.
    #[arg(long, env = "SLICEARB_K")]
    k: Option<usize>,
    /// Training episodes per seed.
    #[arg(long, env = "SLICEARB_EPISODES")]
    episodes: Option<u32>,
    /// Replaces the config's seed list; repeat for several seeds.
    #[arg(long = "seed", env = "SLICEARB_SEED", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, env = "SLICEARB_OUT")]
    out: Option<PathBuf>,
    /// Evaluate the network in --checkpoint without training.
    #[arg(long, env = "SLICEARB_EVAL_ONLY", requires = "checkpoint")]
    eval_only: bool,
    #[arg(long, env = "SLICEARB_CHECKPOINT", requires = "eval_only")]
    checkpoint: Option<PathBuf>,
    #[arg(long, env = "SLICEARB_REWARD_MODE", value_enum)]
    reward_mode: Option<RewardModeArg>,
    /// Seeds run concurrently. Only 1 guarantees bit-identical outputs.
    #[arg(long, env = "SLICEARB_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Side-by-side satisfaction and message figures of two runs.
    Compare {
        /// summary.json of the first run (or its output directory).
        a: PathBuf,
        /// summary.json of the second run (or its output directory).
        b: PathBuf,
    },
    /// Write a synthetic demand trace in the replay CSV format.
    GenTrace {
        #[arg(long)]
        config: PathBuf,
        /// Timesteps to generate.
        #[arg(long, default_value_t = 20)]
        steps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn summary_path(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        p.join(slicearb::metrics::SUMMARY)
    } else {
        p
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Compare { a, b }) => {
            let (a, b) = match (load_summary(&summary_path(a)), load_summary(&summary_path(b))) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return fail(3, e),
            };
            match compare(&a, &b) {
                Ok(table) => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(6, e),
            }
        }
        Some(Command::GenTrace { config, steps, seed, out }) => {
            let scenario = match ExperimentConfig::load(&config) {
                Ok(c) => c.scenario,
                Err(e) => return fail(2, e),
            };
            let scenario = match validate_scenario(scenario) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            let records = match synthesize_trace(&scenario, steps, seed) {
                Ok(r) => r,
                Err(e) => return fail(4, e),
            };
            let written = std::fs::File::create(&out)
                .map_err(Into::into)
                .and_then(|f| serialize_trace(&records, std::io::BufWriter::new(f)));
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(5, format_args!("{}: {e}", out.display())),
            }
        }
        None => run_experiment(cli),
    }
}

fn run_experiment(cli: Cli) -> ExitCode {
    let path = cli.config.expect("clap enforces --config");
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    cfg.apply(&Overrides {
        algo: cli.algo.map(|a| match a {
            AlgoArg::Coop => Algo::CoopMarl,
            AlgoArg::Gcn => Algo::GcnAttention,
        }),
        k: cli.k,
        episodes: cli.episodes,
        seeds: cli.seeds,
        output_dir: cli.out,
        reward_mode: cli.reward_mode.map(|m| match m {
            RewardModeArg::AsWritten => RewardMode::AsWritten,
            RewardModeArg::Satisfaction => RewardMode::Satisfaction,
        }),
    });
    let opts = RunOptions { threads: cli.threads.max(1), eval_checkpoint: cli.checkpoint.filter(|_| cli.eval_only) };
    match run(&cfg, &opts) {
        Ok(summary) => {
            for s in &summary.seeds {
                println!(
                    "seed {}: mean satisfaction {:.4}, min {:.4}, {} of {} slices >= {SERVED_THRESHOLD}, {} messages/step",
                    s.seed,
                    s.mean_satisfaction(),
                    s.min_satisfaction(),
                    s.slices_at_least(SERVED_THRESHOLD),
                    summary.n_slices,
                    s.messages_per_step
                );
            }
            println!("outputs in {}", cfg.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = u8::try_from(e.exit_code()).unwrap_or(1);
            fail(code, e)
        }
    }
}
