//! Traffic demand and channel evolution.
//!
//! Slices draw demand from their traffic class (constant bit rate for eMBB,
//! Poisson packet arrivals for mMTC and URLLC) and their CQI follows a
//! bounded ±1 random walk. Recorded traces can be replayed instead through
//! the same [`DemandSource`] interface.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::domain::{ScenarioConfig, ScenarioError, SliceSpec, TrafficClass, ValidatedScenario};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrafficModel {
    pub embb_mbps_per_ue: f64,
    pub mmtc_packets_per_s: f64,
    pub urllc_packets_per_s: f64,
    pub packet_bytes: f64,
    /// Seconds per timestep.
    pub dt_s: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self {
            embb_mbps_per_ue: 4.0,
            mmtc_packets_per_s: 30.0,
            urllc_packets_per_s: 10.0,
            packet_bytes: 125.0,
            dt_s: 1.0,
        }
    }
}

impl TrafficModel {
    pub(crate) fn check(&self) -> Result<(), ScenarioError> {
        let rates = [self.embb_mbps_per_ue, self.mmtc_packets_per_s, self.urllc_packets_per_s, self.packet_bytes];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(ScenarioError::BadModel { field: "traffic", reason: "rates must be finite and >= 0" });
        }
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(ScenarioError::BadModel { field: "traffic.dt_s", reason: "must be positive" });
        }
        Ok(())
    }

    /// Mean demand in Mbps for `ue_count` users of `class`.
    pub fn mean_demand(&self, class: TrafficClass, ue_count: u32) -> f64 {
        let ues = f64::from(ue_count);
        match class {
            TrafficClass::Embb => self.embb_mbps_per_ue * ues,
            TrafficClass::Mmtc => self.mmtc_packets_per_s * self.packet_bytes * 8.0 * ues / 1e6,
            TrafficClass::Urllc => self.urllc_packets_per_s * self.packet_bytes * 8.0 * ues / 1e6,
        }
    }
}

/// Draw one timestep of demand (Mbps).
pub fn demand_at<R: Rng + ?Sized>(model: &TrafficModel, class: TrafficClass, ue_count: u32, rng: &mut R) -> f64 {
    let packets_per_s = match class {
        TrafficClass::Embb => return model.embb_mbps_per_ue * f64::from(ue_count),
        TrafficClass::Mmtc => model.mmtc_packets_per_s,
        TrafficClass::Urllc => model.urllc_packets_per_s,
    };
    let lambda = packets_per_s * f64::from(ue_count) * model.dt_s;
    if lambda <= 0.0 {
        return 0.0;
    }
    let arrivals: f64 = Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0);
    arrivals * model.packet_bytes * 8.0 / model.dt_s / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ChannelModel {
    pub initial_cqi: u8,
    /// Probability of a -1 step.
    pub p_down: f64,
    /// Probability of a +1 step.
    pub p_up: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self { initial_cqi: 9, p_down: 0.2, p_up: 0.2 }
    }
}

pub const MIN_WALK_CQI: u8 = 1;
pub const MAX_WALK_CQI: u8 = 15;

impl ChannelModel {
    pub(crate) fn check(&self) -> Result<(), ScenarioError> {
        if !(MIN_WALK_CQI..=MAX_WALK_CQI).contains(&self.initial_cqi) {
            return Err(ScenarioError::BadModel { field: "channel.initial_cqi", reason: "must be in 1..=15" });
        }
        let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !ok(self.p_down) || !ok(self.p_up) || self.p_down + self.p_up > 1.0 {
            return Err(ScenarioError::BadModel {
                field: "channel",
                reason: "step probabilities must form a distribution",
            });
        }
        Ok(())
    }
}

pub fn apply_cqi_step(current: u8, step: i8) -> u8 {
    let next = i16::from(current) + i16::from(step);
    next.clamp(i16::from(MIN_WALK_CQI), i16::from(MAX_WALK_CQI)) as u8
}

pub fn draw_cqi_step<R: Rng + ?Sized>(model: &ChannelModel, rng: &mut R) -> i8 {
    let u: f64 = rng.random();
    if u < model.p_down {
        -1
    } else if u < 1.0 - model.p_up {
        0
    } else {
        1
    }
}

pub fn advance_cqi<R: Rng + ?Sized>(current: u8, model: &ChannelModel, rng: &mut R) -> u8 {
    apply_cqi_step(current, draw_cqi_step(model, rng))
}

/// Demand and channel of one slice at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceChannel {
    pub required_throughput: f64,
    pub cqi: u8,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("trace has {trace} slices but the scenario has {scenario}")]
    SliceCountMismatch { trace: usize, scenario: usize },
    #[error("trace slice id {0} is not in the scenario")]
    UnknownSlice(u32),
    #[error("trace covers {len} timesteps, horizon needs {horizon}")]
    TraceTooShort { len: u32, horizon: u32 },
    #[error("no demand recorded for timestep {0}")]
    NoData(u32),
}

/// Where per-step demand and channel state come from. The environment cannot
/// tell a synthetic generator from a replayed trace.
pub trait DemandSource {
    /// Channels of every slice (scenario order) at timestep `t`. `prev` holds
    /// the channels at `t - 1` and is `None` at the start of an episode.
    fn sample(
        &mut self,
        t: u32,
        prev: Option<&[SliceChannel]>,
        scenario: &ValidatedScenario,
    ) -> Result<Vec<SliceChannel>, IngestError>;
}

impl<S: DemandSource + ?Sized> DemandSource for &mut S {
    fn sample(
        &mut self,
        t: u32,
        prev: Option<&[SliceChannel]>,
        scenario: &ValidatedScenario,
    ) -> Result<Vec<SliceChannel>, IngestError> {
        (**self).sample(t, prev, scenario)
    }
}

/// Generator with one independent random stream per slice.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    streams: Vec<SimRng>,
}

impl SyntheticSource {
    pub fn new(scenario: &ScenarioConfig, seed: u64) -> Self {
        let streams = scenario.slices.iter().map(|s| rng::stream(seed, u64::from(s.id))).collect();
        Self { streams }
    }
}

impl DemandSource for SyntheticSource {
    fn sample(
        &mut self,
        _t: u32,
        prev: Option<&[SliceChannel]>,
        scenario: &ValidatedScenario,
    ) -> Result<Vec<SliceChannel>, IngestError> {
        let out = scenario
            .slices
            .iter()
            .zip(self.streams.iter_mut())
            .enumerate()
            .map(|(i, (slice, rng))| {
                let cqi = match prev {
                    Some(p) => advance_cqi(p[i].cqi, &scenario.channel, rng),
                    None => scenario.channel.initial_cqi,
                };
                let required_throughput = demand_at(&scenario.traffic, slice.traffic, slice.ue_count, rng);
                SliceChannel { required_throughput, cqi }
            })
            .collect();
        Ok(out)
    }
}

/// One row of a demand trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: u32,
    pub slice_id: u32,
    pub required_throughput: f64,
    pub cqi: u8,
}

/// A trace row with the 1-based line it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub line: usize,
    pub record: TraceRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: missing column `{column}`")]
    MissingColumn { column: &'static str, line: usize },
    #[error("line {line}: field `{column}` is not a valid number")]
    NonNumericField { column: &'static str, line: usize },
    #[error("line {line}: duplicate row for t={t}, slice_id={slice_id}")]
    DuplicateKey { t: u32, slice_id: u32, line: usize },
    #[error("line {line}: no row for t={t}, slice_id={slice_id}")]
    GapAt { t: u32, slice_id: u32, line: usize },
    #[error("line {line}: cqi {cqi} outside 1..=15")]
    CqiOutOfRange { cqi: i64, line: usize },
    #[error("line {line}: required throughput must be finite and >= 0")]
    BadThroughput { line: usize },
    #[error("trace has no rows")]
    Empty,
}

/// Checks a parsed trace and returns its records sorted by `(t, slice_id)`.
///
/// The slice set is the set of ids seen anywhere in the trace; every timestep
/// from 0 to the largest `t` must carry exactly one row per slice.
pub fn validate_trace(mut rows: Vec<TraceRow>) -> Result<Vec<TraceRecord>, TraceError> {
    if rows.is_empty() {
        return Err(TraceError::Empty);
    }
    for row in &rows {
        let r = row.record;
        if !(MIN_WALK_CQI..=MAX_WALK_CQI).contains(&r.cqi) {
            return Err(TraceError::CqiOutOfRange { cqi: i64::from(r.cqi), line: row.line });
        }
        if !(r.required_throughput.is_finite() && r.required_throughput >= 0.0) {
            return Err(TraceError::BadThroughput { line: row.line });
        }
    }
    // Stable sort keeps file order among equal keys, so the duplicate reported is the later line.
    rows.sort_by_key(|r| (r.record.t, r.record.slice_id));
    for w in rows.windows(2) {
        let (a, b) = (w[0].record, w[1].record);
        if (a.t, a.slice_id) == (b.t, b.slice_id) {
            return Err(TraceError::DuplicateKey { t: b.t, slice_id: b.slice_id, line: w[1].line });
        }
    }
    let mut ids: Vec<u32> = rows.iter().map(|r| r.record.slice_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let steps = rows.last().map_or(0, |r| r.record.t + 1);
    let mut cursor = 0usize;
    for t in 0..steps {
        for &slice_id in &ids {
            match rows.get(cursor) {
                Some(row) if (row.record.t, row.record.slice_id) == (t, slice_id) => cursor += 1,
                next => {
                    let line = next.map_or(rows[rows.len() - 1].line, |r| r.line);
                    return Err(TraceError::GapAt { t, slice_id, line });
                }
            }
        }
    }
    Ok(rows.into_iter().map(|r| r.record).collect())
}

/// Replays a validated trace.
#[derive(Debug, Clone)]
pub struct TraceSource {
    /// `steps[t][i]` is the channel of scenario slice `i` at `t`.
    steps: Vec<Vec<SliceChannel>>,
}

impl TraceSource {
    pub fn new(records: &[TraceRecord], scenario: &ValidatedScenario) -> Result<Self, IngestError> {
        let n = scenario.n_slices();
        let len = records.last().map_or(0, |r| r.t + 1);
        let per_step = if len == 0 { 0 } else { records.len() / len as usize };
        if per_step != n {
            return Err(IngestError::SliceCountMismatch { trace: per_step, scenario: n });
        }
        if len < scenario.horizon {
            return Err(IngestError::TraceTooShort { len, horizon: scenario.horizon });
        }
        let placeholder = SliceChannel { required_throughput: 0.0, cqi: MIN_WALK_CQI };
        let mut steps = alloc::vec![alloc::vec![placeholder; n]; len as usize];
        for r in records {
            let i = scenario.slice_index(r.slice_id).ok_or(IngestError::UnknownSlice(r.slice_id))?;
            steps[r.t as usize][i] = SliceChannel { required_throughput: r.required_throughput, cqi: r.cqi };
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl DemandSource for TraceSource {
    fn sample(
        &mut self,
        t: u32,
        _prev: Option<&[SliceChannel]>,
        _scenario: &ValidatedScenario,
    ) -> Result<Vec<SliceChannel>, IngestError> {
        self.steps.get(t as usize).cloned().ok_or(IngestError::NoData(t))
    }
}

pub fn default_priority(class: TrafficClass) -> u8 {
    match class {
        TrafficClass::Urllc => 3,
        TrafficClass::Embb => 2,
        TrafficClass::Mmtc => 1,
    }
}

/// Scenario with the given class mix, ids assigned eMBB first, then mMTC,
/// then URLLC.
pub fn scenario_with_mix(embb: u32, mmtc: u32, urllc: u32) -> ScenarioConfig {
    let classes = core::iter::repeat_n(TrafficClass::Embb, embb as usize)
        .chain(core::iter::repeat_n(TrafficClass::Mmtc, mmtc as usize))
        .chain(core::iter::repeat_n(TrafficClass::Urllc, urllc as usize));
    let slices = classes
        .enumerate()
        .map(|(id, traffic)| SliceSpec { id: id as u32, traffic, priority: default_priority(traffic), ue_count: 1 })
        .collect();
    ScenarioConfig { slices, ..ScenarioConfig::default() }
}

/// 10 slices (4 eMBB, 3 mMTC, 3 URLLC) sharing 50 PRBs.
pub fn build_paper_scenario() -> ScenarioConfig {
    scenario_with_mix(4, 3, 3)
}

/// 20-slice variant with the same class proportions (8/6/6).
pub fn build_paper_scenario_20() -> ScenarioConfig {
    scenario_with_mix(8, 6, 6)
}
