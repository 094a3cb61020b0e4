//! Training and evaluation over every configured seed.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use slicearb_core::domain::ValidatedScenario;
use slicearb_core::graph::{overhead_reduction, round_percent, GraphMode, OverheadLedger};
use slicearb_core::ingest::{DemandSource, IngestError, SliceChannel, SyntheticSource, TraceSource};
use slicearb_core::nn::{DgnNetwork, NetShape};
use slicearb_core::rng::{derive_seed, stream, SimRng};
use slicearb_core::trainer::{run_episode, ActionSpace, Algo, CoopNetwork, EpisodeMode, Learner, QModel, TrainError};
use thiserror::Error;

use crate::checkpoint::{peek_kind, read_checkpoint, write_checkpoint, CheckpointError, Checkpointable, ModelKind};
use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{self, RewardPart};
use crate::summary::{RunSummary, SeedSummary, SliceSatisfaction};
use crate::trace::{parse_trace, TraceFileError};

const LABEL_INIT: u64 = 1;
const LABEL_LEARNER: u64 = 2;
const LABEL_TRAIN_DEMAND: u64 = 3;
const LABEL_EVAL_DEMAND: u64 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace {path}: {source}")]
    Trace { path: PathBuf, source: TraceFileError },
    #[error("trace does not fit the scenario: {0}")]
    TraceScenario(IngestError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("seed {seed}: {source}")]
    Train { seed: u64, source: TrainError },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Trace { .. } | RunError::TraceScenario(_) | RunError::Checkpoint { .. } => 3,
            RunError::Train { .. } => 4,
            RunError::Io { .. } => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Seeds trained concurrently; 1 keeps runs bit-reproducible.
    pub threads: usize,
    /// Skip training and evaluate this checkpoint instead.
    pub eval_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint-seed-{seed}.bin"))
}

#[derive(Debug, Clone)]
enum Source {
    Synthetic(SyntheticSource),
    Trace(TraceSource),
}

impl DemandSource for Source {
    fn sample(
        &mut self,
        t: u32,
        prev: Option<&[SliceChannel]>,
        scenario: &ValidatedScenario,
    ) -> Result<Vec<SliceChannel>, IngestError> {
        match self {
            Source::Synthetic(s) => s.sample(t, prev, scenario),
            Source::Trace(s) => s.sample(t, prev, scenario),
        }
    }
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    scenario: &'a ValidatedScenario,
    trace: Option<&'a TraceSource>,
    checkpoint: Option<&'a (PathBuf, Vec<u8>)>,
    dir: &'a Path,
}

impl SeedContext<'_> {
    fn source(&self, root: u64, label: u64) -> Source {
        match self.trace {
            Some(t) => Source::Trace(t.clone()),
            None => Source::Synthetic(SyntheticSource::new(self.scenario, derive_seed(root, label))),
        }
    }

    fn run<M, F>(&self, seed: u64, fresh: F) -> Result<SeedSummary, RunError>
    where
        M: QModel + Checkpointable,
        F: FnOnce(NetShape, &mut SimRng) -> Result<M, TrainError>,
    {
        let train_err = |source| RunError::Train { seed, source };
        let root = derive_seed(seed, self.scenario.seed);
        let actions = ActionSpace::new(self.scenario.total_prbs, self.cfg.train.action_granularity);
        let net = match self.checkpoint {
            Some((path, bytes)) => read_checkpoint::<M, _>(bytes.as_slice())
                .map_err(|source| RunError::Checkpoint { path: path.clone(), source })?,
            None => fresh(self.cfg.train.net_shape(&actions), &mut stream(root, LABEL_INIT)).map_err(train_err)?,
        };
        let graph = self.cfg.effective_graph();
        let mut learner = Learner::new(net, self.cfg.train.clone(), graph, actions, stream(root, LABEL_LEARNER))
            .map_err(train_err)?;
        let mut ledger = OverheadLedger::default();

        let mut reward_curve = Vec::new();
        let part_path = metrics::reward_part_path(self.dir, seed);
        let mut part = RewardPart::create(self.dir, seed).map_err(io_err(&part_path))?;
        if self.checkpoint.is_none() {
            let mut source = self.source(root, LABEL_TRAIN_DEMAND);
            for episode in 0..self.cfg.train.episodes as usize {
                let stats = run_episode(&mut learner, self.scenario, &mut source, EpisodeMode::Train, &mut ledger)
                    .map_err(train_err)?;
                part.episode(episode, stats.cumulative_reward).map_err(io_err(&part_path))?;
                reward_curve.push(stats.cumulative_reward);
            }
            let path = checkpoint_path(self.dir, seed);
            let file = File::create(&path).map_err(io_err(&path))?;
            write_checkpoint(&learner.online, BufWriter::new(file))
                .map_err(|source| RunError::Checkpoint { path: path.clone(), source })?;
        }

        let n = self.scenario.n_slices();
        let mut source = self.source(root, LABEL_EVAL_DEMAND);
        let mut eval_rewards = Vec::with_capacity(self.cfg.eval_episodes as usize);
        let mut sat = vec![0.0; n];
        for _ in 0..self.cfg.eval_episodes {
            let stats = run_episode(&mut learner, self.scenario, &mut source, EpisodeMode::Greedy, &mut ledger)
                .map_err(train_err)?;
            eval_rewards.push(stats.cumulative_reward);
            sat.iter_mut().zip(&stats.mean_satisfaction).for_each(|(a, b)| *a += b);
        }
        let satisfaction = self
            .scenario
            .slices
            .iter()
            .zip(sat)
            .map(|(s, total)| SliceSatisfaction {
                slice_id: s.id,
                class: s.traffic,
                priority: s.priority,
                mean_satisfaction: total / f64::from(self.cfg.eval_episodes),
            })
            .collect();
        Ok(SeedSummary {
            seed,
            reward_curve,
            eval_rewards,
            satisfaction,
            messages_total: ledger.cumulative_messages,
            messages_per_step: ledger.messages_this_step,
            reduction_pct: reduction_pct(graph, n),
        })
    }

    fn run_seed(&self, seed: u64) -> Result<SeedSummary, RunError> {
        match self.cfg.train.algo {
            Algo::GcnAttention => self.run(seed, |shape, rng| Ok(DgnNetwork::new(shape, rng)?)),
            Algo::CoopMarl => self.run(seed, |shape, rng| Ok(CoopNetwork::new(shape, rng))),
        }
    }
}

/// Recorded in every summary.
fn assumptions(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = vec![
        "k-NN communication graph is rebuilt from the current observations at every step".to_owned(),
        "the two attention layers have separate parameters".to_owned(),
        "one network is trained centrally and shared by all agents".to_owned(),
        "training hyperparameters are assumed defaults unless set in the config".to_owned(),
    ];
    if cfg.trace.is_some() {
        out.push("the trace is replayed from its first timestep in every episode".to_owned());
    }
    out
}

/// Messages each agent receives per step under `graph`.
pub fn neighbours(graph: GraphMode, n: usize) -> usize {
    match graph {
        GraphMode::Full => n.saturating_sub(1),
        GraphMode::Knn(k) => k,
    }
}

/// Reported saving against all-to-all communication, two decimals.
pub fn reduction_pct(graph: GraphMode, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    round_percent(overhead_reduction(n, neighbours(graph, n)), 2)
}

#[derive(Serialize)]
struct Timing {
    total_seconds: f64,
    seeds: Vec<SeedTiming>,
}

#[derive(Serialize)]
struct SeedTiming {
    seed: u64,
    seconds: f64,
}

fn run_all(ctx: &SeedContext<'_>, threads: usize) -> Vec<(Result<SeedSummary, RunError>, Duration)> {
    let seeds = &ctx.cfg.seeds;
    let timed = |seed| {
        let t = Instant::now();
        let r = ctx.run_seed(seed);
        (r, t.elapsed())
    };
    if threads <= 1 || seeds.len() == 1 {
        return seeds.iter().map(|&s| timed(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(Result<SeedSummary, RunError>, Duration)>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let out = timed(seed);
                slots.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("result slots poisoned").into_iter().map(|s| s.expect("every seed ran")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("summary types serialize");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn finish(cfg: &ExperimentConfig, summary: &RunSummary, timing: &Timing) -> Result<(), RunError> {
    let dir = &cfg.output_dir;
    metrics::merge_reward_parts(dir, &cfg.seeds).map_err(io_err(&dir.join(metrics::REWARD_CURVE)))?;
    metrics::write_satisfaction(dir, summary).map_err(io_err(&dir.join(metrics::SATISFACTION)))?;
    metrics::write_overhead(dir, summary).map_err(io_err(&dir.join(metrics::OVERHEAD)))?;
    write_json(&dir.join(metrics::SUMMARY), summary)?;
    write_json(&dir.join(metrics::TIMING), timing)
}

/// Trains (unless evaluating a checkpoint) and evaluates every seed, then
/// writes the CSVs, `summary.json` and `timing.json` to the output
/// directory. On failure the files this run wrote are removed; outputs of
/// an earlier run in the same directory are left alone unless merging had
/// already started.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let started = Instant::now();
    let scenario = cfg.validate()?;
    let trace = match &cfg.trace {
        Some(path) => {
            let file = File::open(path).map_err(|e| RunError::Trace { path: path.clone(), source: e.into() })?;
            let records = parse_trace(file).map_err(|source| RunError::Trace { path: path.clone(), source })?;
            Some(TraceSource::new(&records, &scenario).map_err(RunError::TraceScenario)?)
        }
        None => None,
    };
    let checkpoint = match &opts.eval_checkpoint {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| RunError::Checkpoint { path: path.clone(), source: e.into() })?;
            let expected = match cfg.train.algo {
                Algo::GcnAttention => ModelKind::Attention,
                Algo::CoopMarl => ModelKind::Baseline,
            };
            let found = peek_kind(&bytes).map_err(|source| RunError::Checkpoint { path: path.clone(), source })?;
            if found != expected {
                let source = CheckpointError::WrongKind { expected, found };
                return Err(RunError::Checkpoint { path: path.clone(), source });
            }
            Some((path.clone(), bytes))
        }
        None => None,
    };
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ctx = SeedContext { cfg, scenario: &scenario, trace: trace.as_ref(), checkpoint: checkpoint.as_ref(), dir };

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut timing = Timing { total_seconds: 0.0, seeds: Vec::new() };
    for ((result, elapsed), &seed) in run_all(&ctx, opts.threads).into_iter().zip(&cfg.seeds) {
        match result {
            Ok(s) => seeds.push(s),
            Err(e) => {
                metrics::remove_partial(dir, &cfg.seeds, checkpoint.is_none());
                return Err(e);
            }
        }
        timing.seeds.push(SeedTiming { seed, seconds: elapsed.as_secs_f64() });
    }
    let graph = cfg.effective_graph();
    let n = scenario.n_slices();
    let summary = RunSummary {
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        algo: cfg.train.algo,
        n_slices: n,
        graph,
        neighbours: neighbours(graph, n),
        eval_only: checkpoint.is_some(),
        assumptions: assumptions(cfg),
        config: cfg.clone(),
        seeds,
    };
    timing.total_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = finish(cfg, &summary, &timing) {
        metrics::remove_outputs(dir, &cfg.seeds, checkpoint.is_none());
        return Err(e);
    }
    Ok(summary)
}

pub fn load_summary(path: &Path) -> Result<RunSummary, anyhow::Error> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
}
