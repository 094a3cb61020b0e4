//! Vocabulary shared by every module: slices, scenarios, observations and
//! allocation decisions.

use alloc::vec::Vec;
use core::ops::Deref;

use thiserror::Error;

use crate::ingest::{ChannelModel, TrafficModel};

/// Length of [`FeatureVector`]. The component order is part of the external
/// contract: available PRBs, CQI, MCS, required throughput, priority, last
/// allocation.
pub const FEATURE_LEN: usize = 6;

/// Normalised observation, every component in `[0, 1]`.
pub type FeatureVector = [f64; FEATURE_LEN];

pub const MAX_CQI: u8 = 15;
pub const MAX_MCS: u8 = 28;

/// Spectral efficiency in bits/symbol for CQI 0..=15 (4-bit CQI table, QPSK
/// up to 64QAM).
pub const DEFAULT_CQI_TABLE: [f64; 16] = [
    0.0, 0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234,
    5.1152, 5.5547,
];

/// MCS index used for each CQI index.
const CQI_TO_MCS: [u8; 16] = [0, 0, 1, 3, 5, 7, 9, 11, 13, 15, 18, 20, 22, 24, 26, 28];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TrafficClass {
    Embb,
    Mmtc,
    Urllc,
}

impl TrafficClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Embb => "embb",
            TrafficClass::Mmtc => "mmtc",
            TrafficClass::Urllc => "urllc",
        }
    }
}

impl core::fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static description of one slice, managed by one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceSpec {
    pub id: u32,
    pub traffic: TrafficClass,
    /// 1 = low, 2 = medium, 3 = high.
    pub priority: u8,
    pub ue_count: u32,
}

/// How the throughput ratio enters the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RewardMode {
    /// `min(T_req / T_alloc, 1)`; saturates for any under-allocation.
    #[default]
    AsWritten,
    /// `min(T_alloc / T_req, 1)`; grows with the fraction of demand served.
    Satisfaction,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::AsWritten => "as-written",
            RewardMode::Satisfaction => "satisfaction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScenarioConfig {
    pub slices: Vec<SliceSpec>,
    pub total_prbs: u32,
    /// Informational only; the PRB count drives the physics.
    pub bandwidth_mhz: f64,
    /// Timesteps per episode.
    pub horizon: u32,
    /// Bits/symbol per CQI index.
    pub cqi_table: Vec<f64>,
    pub seed: u64,
    /// Throughput (Mbps) that maps to feature value 1.0.
    pub throughput_scale: f64,
    /// Multiplier on the over-allocation penalty (Mbps).
    pub penalty_scale: f64,
    pub reward_mode: RewardMode,
    pub traffic: TrafficModel,
    pub channel: ChannelModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            slices: Vec::new(),
            total_prbs: 50,
            bandwidth_mhz: 10.0,
            horizon: 20,
            cqi_table: DEFAULT_CQI_TABLE.to_vec(),
            seed: 0,
            throughput_scale: 10.0,
            penalty_scale: 1.0,
            reward_mode: RewardMode::AsWritten,
            traffic: TrafficModel::default(),
            channel: ChannelModel::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("slices: no slices configured")]
    NoSlices,
    #[error("slices: id {0} appears more than once")]
    DuplicateSliceId(u32),
    #[error("slices[id={id}].priority: {priority} is not one of 1, 2, 3")]
    BadPriority { id: u32, priority: u8 },
    #[error("slices[id={0}].ue_count: must be at least 1")]
    ZeroUeCount(u32),
    #[error("cqi_table: empty")]
    EmptyCqiTable,
    #[error("cqi_table: expected 16 entries, got {0}")]
    CqiTableLength(usize),
    #[error("cqi_table[0]: must be 0, got {0}")]
    CqiTableOrigin(f64),
    #[error("cqi_table[{index}]: entries must be finite, non-negative and nondecreasing")]
    NonMonotoneCqiTable { index: usize },
    #[error("total_prbs: must be positive")]
    ZeroBudget,
    #[error("horizon: must be positive")]
    ZeroHorizon,
    #[error("{field}: must be finite and positive")]
    BadScale { field: &'static str },
    #[error("{field}: {reason}")]
    BadModel { field: &'static str, reason: &'static str },
}

/// A [`ScenarioConfig`] whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScenario(ScenarioConfig);

impl ValidatedScenario {
    pub fn into_inner(self) -> ScenarioConfig {
        self.0
    }

    /// Position of the slice with `id`.
    pub fn slice_index(&self, id: u32) -> Option<usize> {
        self.0.slices.iter().position(|s| s.id == id)
    }
}

impl Deref for ValidatedScenario {
    type Target = ScenarioConfig;

    fn deref(&self) -> &ScenarioConfig {
        &self.0
    }
}

pub fn validate_scenario(cfg: ScenarioConfig) -> Result<ValidatedScenario, ScenarioError> {
    if cfg.slices.is_empty() {
        return Err(ScenarioError::NoSlices);
    }
    let mut ids: Vec<u32> = cfg.slices.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(ScenarioError::DuplicateSliceId(w[0]));
    }
    for s in &cfg.slices {
        if !(1..=3).contains(&s.priority) {
            return Err(ScenarioError::BadPriority { id: s.id, priority: s.priority });
        }
        if s.ue_count == 0 {
            return Err(ScenarioError::ZeroUeCount(s.id));
        }
    }
    match cfg.cqi_table.len() {
        0 => return Err(ScenarioError::EmptyCqiTable),
        16 => {}
        len => return Err(ScenarioError::CqiTableLength(len)),
    }
    if cfg.cqi_table[0] != 0.0 {
        return Err(ScenarioError::CqiTableOrigin(cfg.cqi_table[0]));
    }
    for (index, w) in cfg.cqi_table.windows(2).enumerate() {
        if !w[1].is_finite() || w[1] < w[0] {
            return Err(ScenarioError::NonMonotoneCqiTable { index: index + 1 });
        }
    }
    if cfg.total_prbs == 0 {
        return Err(ScenarioError::ZeroBudget);
    }
    if cfg.horizon == 0 {
        return Err(ScenarioError::ZeroHorizon);
    }
    if !(cfg.throughput_scale.is_finite() && cfg.throughput_scale > 0.0) {
        return Err(ScenarioError::BadScale { field: "throughput_scale" });
    }
    if !(cfg.penalty_scale.is_finite() && cfg.penalty_scale >= 0.0) {
        return Err(ScenarioError::BadScale { field: "penalty_scale" });
    }
    cfg.traffic.check()?;
    cfg.channel.check()?;
    Ok(ValidatedScenario(cfg))
}

/// What one agent sees at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// PRBs not held by the other slices after the previous step.
    pub available_prbs: u32,
    pub cqi: u8,
    pub mcs: u8,
    pub required_throughput: f64,
    pub priority: u8,
    pub last_alloc_prbs: u32,
}

pub fn mcs_for_cqi(cqi: u8) -> u8 {
    CQI_TO_MCS[usize::from(cqi.min(MAX_CQI))]
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn normalize_observation(o: &Observation, cfg: &ScenarioConfig) -> FeatureVector {
    let total = f64::from(cfg.total_prbs);
    [
        unit(f64::from(o.available_prbs) / total),
        unit(f64::from(o.cqi) / f64::from(MAX_CQI)),
        unit(f64::from(o.mcs) / f64::from(MAX_MCS)),
        unit(o.required_throughput / cfg.throughput_scale),
        unit((f64::from(o.priority) - 1.0) / 2.0),
        unit(f64::from(o.last_alloc_prbs) / total),
    ]
}

/// PRBs one agent claims for its slice this timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationDecision {
    pub slice_id: u32,
    pub prbs_claimed: u32,
}
