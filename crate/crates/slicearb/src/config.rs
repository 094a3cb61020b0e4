//! Experiment configuration files (TOML).
//!
//! ```toml
//! seeds = [1, 2, 3]
//! eval_episodes = 50
//! output_dir = "runs/slices10"
//!
//! [scenario]
//! preset = "slices-10"   # or "slices-20"; any other key overrides the preset
//! horizon = 10
//!
//! [train]
//! algo = "gcn"
//! episodes = 1000
//!
//! [graph]
//! mode = "knn"
//! k = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slicearb_core::domain::{validate_scenario, RewardMode, ScenarioConfig, ScenarioError, ValidatedScenario};
use slicearb_core::graph::GraphMode;
use slicearb_core::ingest::{build_paper_scenario, build_paper_scenario_20};
use slicearb_core::trainer::{Algo, TrainConfig, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("unknown scenario preset `{0}` (expected slices-10 or slices-20)")]
    UnknownPreset(String),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("seed {0} is listed twice")]
    DuplicateSeed(u64),
    #[error("knn graph needs k <= n - 1 = {max}, got k = {k}")]
    KTooLarge { k: usize, max: usize },
    #[error("eval_episodes must be at least 1")]
    NoEvalEpisodes,
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
}

fn default_eval_episodes() -> u32 {
    50
}

fn default_graph() -> GraphMode {
    GraphMode::Knn(3)
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Replaces synthetic demand and CQI with a recorded series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Ignored by the all-to-all baseline, which always uses the full graph.
    #[serde(default = "default_graph")]
    pub graph: GraphMode,
    /// Not echoed into run summaries, so identical runs written to
    /// different directories produce identical summaries.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u32,
    pub seeds: Vec<u64>,
}

/// Command-line values that replace their config counterparts.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub algo: Option<Algo>,
    pub k: Option<usize>,
    pub episodes: Option<u32>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub reward_mode: Option<RewardMode>,
}

fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    match name {
        "slices-10" => Ok(build_paper_scenario()),
        "slices-20" => Ok(build_paper_scenario_20()),
        other => Err(ConfigError::UnknownPreset(other.to_owned())),
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(toml::Value::Table(scenario)) = doc.get_mut("scenario") {
            if let Some(name) = scenario.remove("preset") {
                let name =
                    name.as_str().ok_or_else(|| ConfigError::Parse("scenario.preset must be a string".into()))?;
                let mut base = toml::Table::try_from(preset(name)?).map_err(|e| ConfigError::Parse(e.to_string()))?;
                merge(&mut base, std::mem::take(scenario));
                *scenario = base;
            }
        }
        doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file; a relative `trace` path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(trace), Some(dir)) = (cfg.trace.as_mut(), path.parent()) {
            if trace.is_relative() {
                *trace = dir.join(&*trace);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(algo) = o.algo {
            self.train.algo = algo;
        }
        if let Some(k) = o.k {
            self.graph = GraphMode::Knn(k);
        }
        if let Some(e) = o.episodes {
            self.train.episodes = e;
        }
        if !o.seeds.is_empty() {
            self.seeds.clone_from(&o.seeds);
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir.clone_from(dir);
        }
        if let Some(mode) = o.reward_mode {
            self.scenario.reward_mode = mode;
        }
    }

    pub fn validate(&self) -> Result<ValidatedScenario, ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(ConfigError::DuplicateSeed(*s));
            }
        }
        if self.eval_episodes == 0 {
            return Err(ConfigError::NoEvalEpisodes);
        }
        let scenario = validate_scenario(self.scenario.clone())?;
        if let GraphMode::Knn(k) = self.graph {
            let max = scenario.n_slices().saturating_sub(1);
            if k > max {
                return Err(ConfigError::KTooLarge { k, max });
            }
        }
        self.train.check()?;
        if !self.train.hidden.is_multiple_of(self.train.heads.max(1)) || self.train.heads == 0 {
            return Err(TrainError::Config("heads must divide hidden").into());
        }
        Ok(scenario)
    }

    /// The graph the chosen algorithm actually communicates over.
    pub fn effective_graph(&self) -> GraphMode {
        match self.train.algo {
            Algo::CoopMarl => GraphMode::Full,
            Algo::GcnAttention => self.graph,
        }
    }
}
