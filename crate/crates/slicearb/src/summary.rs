//! Run results as written to `summary.json`, and side-by-side comparison of
//! two runs.

use std::fmt;

use serde::{Deserialize, Serialize};
use slicearb_core::domain::TrafficClass;
use slicearb_core::graph::GraphMode;
use slicearb_core::trainer::Algo;
use thiserror::Error;

use crate::config::ExperimentConfig;

/// Satisfaction threshold used when counting well-served slices.
pub const SERVED_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSatisfaction {
    pub slice_id: u32,
    pub class: TrafficClass,
    pub priority: u8,
    /// Clamped allocated/requested PRB ratio, averaged over timesteps and
    /// evaluation episodes.
    pub mean_satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Cumulative reward of each training episode.
    pub reward_curve: Vec<f64>,
    /// Cumulative reward of each greedy evaluation episode.
    pub eval_rewards: Vec<f64>,
    pub satisfaction: Vec<SliceSatisfaction>,
    /// Over training and evaluation.
    pub messages_total: u64,
    pub messages_per_step: u64,
    pub reduction_pct: f64,
}

impl SeedSummary {
    pub fn min_satisfaction(&self) -> f64 {
        self.satisfaction.iter().map(|s| s.mean_satisfaction).fold(f64::INFINITY, f64::min)
    }

    pub fn mean_satisfaction(&self) -> f64 {
        self.satisfaction.iter().map(|s| s.mean_satisfaction).sum::<f64>() / self.satisfaction.len() as f64
    }

    pub fn slices_at_least(&self, threshold: f64) -> usize {
        self.satisfaction.iter().filter(|s| s.mean_satisfaction >= threshold).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub code_version: String,
    pub algo: Algo,
    pub n_slices: usize,
    /// Graph actually used for communication.
    pub graph: GraphMode,
    /// Messages each agent receives per step.
    pub neighbours: usize,
    pub eval_only: bool,
    /// Modelling choices that are not configurable, in plain words.
    pub assumptions: Vec<String>,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedSummary>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("runs are not comparable: {0}")]
    ScenarioMismatch(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceComparison {
    pub slice_id: u32,
    pub class: TrafficClass,
    pub a: f64,
    pub b: f64,
}

impl SliceComparison {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

/// Figures of one run as used in a comparison, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunFigures {
    pub slices_served: usize,
    pub min_slice: f64,
    pub mean: f64,
    pub messages_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub algo_a: Algo,
    pub algo_b: Algo,
    pub slices: Vec<SliceComparison>,
    pub a: RunFigures,
    pub b: RunFigures,
}

impl Comparison {
    pub fn messages_delta(&self) -> i128 {
        i128::from(self.b.messages_total) - i128::from(self.a.messages_total)
    }
}

/// Per-slice satisfaction averaged over seeds.
fn seed_mean(s: &RunSummary) -> Vec<f64> {
    let n = s.n_slices;
    let mut out = vec![0.0; n];
    for seed in &s.seeds {
        for (o, sl) in out.iter_mut().zip(&seed.satisfaction) {
            *o += sl.mean_satisfaction;
        }
    }
    out.iter_mut().for_each(|x| *x /= s.seeds.len() as f64);
    out
}

fn figures(s: &RunSummary, per_slice: &[f64]) -> RunFigures {
    RunFigures {
        slices_served: per_slice.iter().filter(|&&x| x >= SERVED_THRESHOLD).count(),
        min_slice: per_slice.iter().copied().fold(f64::INFINITY, f64::min),
        mean: per_slice.iter().sum::<f64>() / per_slice.len() as f64,
        messages_total: s.seeds.iter().map(|x| x.messages_total).sum(),
    }
}

/// Side-by-side figures of two runs over the same scenario and seeds.
pub fn compare(a: &RunSummary, b: &RunSummary) -> Result<Comparison, CompareError> {
    if a.config.scenario != b.config.scenario || a.config.trace != b.config.trace {
        return Err(CompareError::ScenarioMismatch("scenarios differ"));
    }
    let seeds = |s: &RunSummary| s.seeds.iter().map(|x| x.seed).collect::<Vec<_>>();
    if seeds(a) != seeds(b) {
        return Err(CompareError::ScenarioMismatch("seed lists differ"));
    }
    if a.seeds.is_empty() {
        return Err(CompareError::ScenarioMismatch("no seeds to compare"));
    }
    let (ma, mb) = (seed_mean(a), seed_mean(b));
    let slices = a.seeds[0]
        .satisfaction
        .iter()
        .zip(ma.iter().zip(&mb))
        .map(|(sl, (&x, &y))| SliceComparison { slice_id: sl.slice_id, class: sl.class, a: x, b: y })
        .collect();
    Ok(Comparison { algo_a: a.algo, algo_b: b.algo, slices, a: figures(a, &ma), b: figures(b, &mb) })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (na, nb) = (self.algo_a.as_str(), self.algo_b.as_str());
        writeln!(f, "{:>5} {:>6} {:>9} {:>9} {:>9}", "slice", "class", na, nb, "delta")?;
        for s in &self.slices {
            writeln!(f, "{:>5} {:>6} {:>9.4} {:>9.4} {:>+9.4}", s.slice_id, s.class.as_str(), s.a, s.b, s.delta())?;
        }
        writeln!(f)?;
        writeln!(f, "{:<24} {:>12} {:>12} {:>12}", "", na, nb, "delta")?;
        let served = format!("slices >= {SERVED_THRESHOLD}");
        writeln!(
            f,
            "{served:<24} {:>12} {:>12} {:>+12}",
            self.a.slices_served,
            self.b.slices_served,
            self.b.slices_served as i64 - self.a.slices_served as i64
        )?;
        writeln!(
            f,
            "{:<24} {:>12.4} {:>12.4} {:>+12.4}",
            "min-slice satisfaction",
            self.a.min_slice,
            self.b.min_slice,
            self.b.min_slice - self.a.min_slice
        )?;
        writeln!(
            f,
            "{:<24} {:>12.4} {:>12.4} {:>+12.4}",
            "mean satisfaction",
            self.a.mean,
            self.b.mean,
            self.b.mean - self.a.mean
        )?;
        writeln!(
            f,
            "{:<24} {:>12} {:>12} {:>+12}",
            "messages total",
            self.a.messages_total,
            self.b.messages_total,
            self.messages_delta()
        )
    }
}
