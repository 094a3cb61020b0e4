//! CSV outputs. Every value written here also appears in `summary.json`.
//!
//! Reward rows are appended to a per-seed part file and flushed after every
//! episode, so an interrupted run leaves its progress on disk. Part files
//! are merged in seed order once all seeds finish.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::summary::RunSummary;

pub const REWARD_CURVE: &str = "reward_curve.csv";
pub const SATISFACTION: &str = "satisfaction.csv";
pub const OVERHEAD: &str = "overhead.csv";
pub const SUMMARY: &str = "summary.json";
pub const TIMING: &str = "timing.json";

pub const REWARD_HEADER: &str = "episode,seed,cumulative_reward";
pub const SATISFACTION_HEADER: &str = "seed,slice_id,class,priority,mean_satisfaction";
pub const OVERHEAD_HEADER: &str = "seed,algo,n,k,messages_per_step,reduction_pct";

pub fn reward_part_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("reward_curve.seed-{seed}.part.csv"))
}

/// Per-seed reward rows without a header.
pub struct RewardPart {
    seed: u64,
    out: BufWriter<File>,
}

impl RewardPart {
    pub fn create(dir: &Path, seed: u64) -> std::io::Result<Self> {
        Ok(Self { seed, out: BufWriter::new(File::create(reward_part_path(dir, seed))?) })
    }

    pub fn episode(&mut self, episode: usize, reward: f64) -> std::io::Result<()> {
        writeln!(self.out, "{episode},{},{reward}", self.seed)?;
        self.out.flush()
    }
}

/// Concatenates the part files under one header and deletes them.
pub fn merge_reward_parts(dir: &Path, seeds: &[u64]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(REWARD_CURVE))?);
    writeln!(out, "{REWARD_HEADER}")?;
    for &seed in seeds {
        let part = reward_part_path(dir, seed);
        out.write_all(&fs::read(&part)?)?;
    }
    out.flush()?;
    for &seed in seeds {
        fs::remove_file(reward_part_path(dir, seed))?;
    }
    Ok(())
}

pub fn write_satisfaction(dir: &Path, summary: &RunSummary) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(SATISFACTION))?);
    writeln!(out, "{SATISFACTION_HEADER}")?;
    for s in &summary.seeds {
        for sl in &s.satisfaction {
            writeln!(out, "{},{},{},{},{}", s.seed, sl.slice_id, sl.class, sl.priority, sl.mean_satisfaction)?;
        }
    }
    out.flush()
}

pub fn write_overhead(dir: &Path, summary: &RunSummary) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(OVERHEAD))?);
    writeln!(out, "{OVERHEAD_HEADER}")?;
    for s in &summary.seeds {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.seed,
            summary.algo.as_str(),
            summary.n_slices,
            summary.neighbours,
            s.messages_per_step,
            s.reduction_pct
        )?;
    }
    out.flush()
}

/// Removes the per-seed files of an unfinished run: reward parts and, when
/// the run was training, the checkpoints it wrote.
pub fn remove_partial(dir: &Path, seeds: &[u64], checkpoints: bool) {
    for &seed in seeds {
        let _ = fs::remove_file(reward_part_path(dir, seed));
        if checkpoints {
            let _ = fs::remove_file(crate::runner::checkpoint_path(dir, seed));
        }
    }
}

/// [`remove_partial`] plus the merged outputs.
pub fn remove_outputs(dir: &Path, seeds: &[u64], checkpoints: bool) {
    for name in [REWARD_CURVE, SATISFACTION, OVERHEAD, SUMMARY, TIMING] {
        let _ = fs::remove_file(dir.join(name));
    }
    remove_partial(dir, seeds, checkpoints);
}
