//! The slicing environment: PRB physics, contention, reward and the step
//! function.

use alloc::vec::Vec;

use thiserror::Error;

use crate::domain::{
    mcs_for_cqi, AllocationDecision, Observation, RewardMode, ScenarioConfig, ValidatedScenario, MAX_CQI,
};
use crate::ingest::{DemandSource, IngestError, SliceChannel};

/// Resource elements per PRB per 1 ms slot: 12 subcarriers x 14 symbols.
pub const SYMBOLS_PER_PRB_MS: f64 = 168.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("cqi {0} outside 0..=15")]
    CqiOutOfRange(u8),
    #[error("demand is unsatisfiable at cqi 0; capped at {cap} PRBs")]
    UnsatisfiableAtCqiZero { cap: u32 },
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("action {index} is for slice {got}, expected slice {expected}")]
    ActionOrder { index: usize, expected: u32, got: u32 },
    #[error("slice {slice_id} claims {claimed} PRBs, budget is {budget}")]
    ClaimExceedsBudget { slice_id: u32, claimed: u32, budget: u32 },
    #[error("episode already finished")]
    StepAfterDone,
    #[error(transparent)]
    Source(#[from] IngestError),
}

/// Throughput in Mbps of `prbs` PRBs at `cqi`.
pub fn prb_to_throughput(prbs: u32, cqi: u8, cfg: &ScenarioConfig) -> Result<f64, EnvError> {
    let efficiency = cfg.cqi_table.get(usize::from(cqi)).filter(|_| cqi <= MAX_CQI);
    let efficiency = efficiency.ok_or(EnvError::CqiOutOfRange(cqi))?;
    let bits_per_s = f64::from(prbs) * SYMBOLS_PER_PRB_MS * efficiency * 1000.0;
    Ok(bits_per_s / 1e6)
}

/// Smallest PRB count whose throughput covers the demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrbDemand {
    pub prbs: u32,
    /// The demand needs more than `total_prbs`; `prbs` is the cap.
    pub capped: bool,
}

pub fn required_prbs(required_throughput: f64, cqi: u8, cfg: &ScenarioConfig) -> Result<PrbDemand, EnvError> {
    let cap = cfg.total_prbs;
    let per_prb = prb_to_throughput(1, cqi, cfg)?;
    if required_throughput <= 0.0 {
        return Ok(PrbDemand { prbs: 0, capped: false });
    }
    if per_prb <= 0.0 {
        return Err(EnvError::UnsatisfiableAtCqiZero { cap });
    }
    if prb_to_throughput(cap, cqi, cfg)? < required_throughput {
        return Ok(PrbDemand { prbs: cap, capped: true });
    }
    // Start from the division estimate and settle on the exact boundary, so
    // the answer agrees with prb_to_throughput's own rounding.
    let guess = libm::ceil(required_throughput / per_prb).clamp(0.0, f64::from(cap)) as u32;
    let mut p = guess;
    while p < cap && prb_to_throughput(p, cqi, cfg)? < required_throughput {
        p += 1;
    }
    while p > 0 && prb_to_throughput(p - 1, cqi, cfg)? >= required_throughput {
        p -= 1;
    }
    Ok(PrbDemand { prbs: p, capped: false })
}

/// Arbitrates claims against the PRB budget.
///
/// Claims that fit are granted unchanged. Otherwise each slice receives
/// `floor(budget * claim / total_claimed)` and the leftover PRBs go one at a
/// time by descending remainder, then descending priority, then ascending id.
/// `priorities[i]` belongs to `claims[i]`.
pub fn resolve_contention(claims: &[AllocationDecision], priorities: &[u8], budget: u32) -> Vec<AllocationDecision> {
    let total: u64 = claims.iter().map(|c| u64::from(c.prbs_claimed)).sum();
    if total <= u64::from(budget) {
        return claims.to_vec();
    }
    let budget = u64::from(budget);
    let mut grants: Vec<AllocationDecision> = Vec::with_capacity(claims.len());
    let mut order: Vec<(u64, u8, u32, usize)> = Vec::with_capacity(claims.len());
    let mut granted = 0u64;
    for (i, c) in claims.iter().enumerate() {
        let scaled = budget * u64::from(c.prbs_claimed);
        let floor = scaled / total;
        granted += floor;
        grants.push(AllocationDecision { slice_id: c.slice_id, prbs_claimed: floor as u32 });
        order.push((scaled % total, priorities.get(i).copied().unwrap_or(0), c.slice_id, i));
    }
    order.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, _, i) in order.iter().take((budget - granted) as usize) {
        grants[i].prbs_claimed += 1;
    }
    grants
}

/// Per-slice reward for serving `t_alloc` Mbps against a demand of `t_req`.
///
/// In [`RewardMode::AsWritten`] a zero allocation earns 0 (the ratio is
/// undefined there). In [`RewardMode::Satisfaction`] a zero demand counts as
/// fully satisfied.
pub fn compute_reward(t_req: f64, t_alloc: f64, priority: u8, mode: RewardMode, penalty_scale: f64) -> f64 {
    let ratio = match mode {
        RewardMode::AsWritten => {
            if t_alloc == 0.0 {
                return 0.0;
            }
            t_req / t_alloc
        }
        RewardMode::Satisfaction => {
            if t_req == 0.0 {
                1.0
            } else {
                t_alloc / t_req
            }
        }
    };
    ratio.min(1.0) * f64::from(priority) - penalty_scale * (t_alloc - t_req).max(0.0)
}

/// Allocated over requested PRBs; 1 when nothing is requested.
pub fn satisfaction(alloc_prbs: u32, req_prbs: u32) -> f64 {
    if req_prbs == 0 {
        1.0
    } else {
        f64::from(alloc_prbs) / f64::from(req_prbs)
    }
}

/// [`satisfaction`] clamped to `[0, 1]`; over-allocation does not count.
pub fn reported_satisfaction(alloc_prbs: u32, req_prbs: u32) -> f64 {
    satisfaction(alloc_prbs, req_prbs).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceState {
    pub channel: SliceChannel,
    pub last_alloc_prbs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub t: u32,
    pub horizon: u32,
    pub slices: Vec<SliceState>,
}

impl EnvState {
    pub fn is_done(&self) -> bool {
        self.t >= self.horizon
    }

    pub fn remaining(&self) -> u32 {
        self.horizon.saturating_sub(self.t)
    }

    fn channels(&self) -> Vec<SliceChannel> {
        self.slices.iter().map(|s| s.channel).collect()
    }

    pub fn observations(&self, cfg: &ScenarioConfig) -> Vec<Observation> {
        let held: u32 = self.slices.iter().map(|s| s.last_alloc_prbs).sum();
        self.slices
            .iter()
            .zip(&cfg.slices)
            .map(|(s, spec)| Observation {
                available_prbs: cfg.total_prbs.saturating_sub(held - s.last_alloc_prbs),
                cqi: s.channel.cqi,
                mcs: mcs_for_cqi(s.channel.cqi),
                required_throughput: s.channel.required_throughput,
                priority: spec.priority,
                last_alloc_prbs: s.last_alloc_prbs,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Observations of the next state.
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    /// Grants after contention.
    pub allocations: Vec<AllocationDecision>,
    /// Clamped to `[0, 1]`.
    pub satisfactions: Vec<f64>,
    pub done: bool,
}

/// Initial state of an episode and its observations.
pub fn reset<S: DemandSource>(
    scenario: &ValidatedScenario,
    source: &mut S,
) -> Result<(EnvState, Vec<Observation>), EnvError> {
    let channels = source.sample(0, None, scenario)?;
    let state = EnvState {
        t: 0,
        horizon: scenario.horizon,
        slices: channels.into_iter().map(|channel| SliceState { channel, last_alloc_prbs: 0 }).collect(),
    };
    let obs = state.observations(scenario);
    Ok((state, obs))
}

/// Advances one timestep. `actions[i]` must be the claim of scenario slice `i`.
pub fn step<S: DemandSource>(
    state: &EnvState,
    actions: &[AllocationDecision],
    scenario: &ValidatedScenario,
    source: &mut S,
) -> Result<(EnvState, StepOutcome), EnvError> {
    if state.is_done() {
        return Err(EnvError::StepAfterDone);
    }
    let n = scenario.n_slices();
    if actions.len() != n || state.slices.len() != n {
        return Err(EnvError::ActionCountMismatch { expected: n, got: actions.len() });
    }
    for (index, (a, spec)) in actions.iter().zip(&scenario.slices).enumerate() {
        if a.slice_id != spec.id {
            return Err(EnvError::ActionOrder { index, expected: spec.id, got: a.slice_id });
        }
        if a.prbs_claimed > scenario.total_prbs {
            return Err(EnvError::ClaimExceedsBudget {
                slice_id: a.slice_id,
                claimed: a.prbs_claimed,
                budget: scenario.total_prbs,
            });
        }
    }
    let priorities: Vec<u8> = scenario.slices.iter().map(|s| s.priority).collect();
    let grants = resolve_contention(actions, &priorities, scenario.total_prbs);

    let mut rewards = Vec::with_capacity(n);
    let mut satisfactions = Vec::with_capacity(n);
    for ((slice, grant), spec) in state.slices.iter().zip(&grants).zip(&scenario.slices) {
        let ch = slice.channel;
        let t_alloc = prb_to_throughput(grant.prbs_claimed, ch.cqi, scenario)?;
        rewards.push(compute_reward(
            ch.required_throughput,
            t_alloc,
            spec.priority,
            scenario.reward_mode,
            scenario.penalty_scale,
        ));
        let req = match required_prbs(ch.required_throughput, ch.cqi, scenario) {
            Ok(d) => d.prbs,
            Err(EnvError::UnsatisfiableAtCqiZero { cap }) => cap,
            Err(e) => return Err(e),
        };
        satisfactions.push(reported_satisfaction(grant.prbs_claimed, req));
    }

    let t = state.t + 1;
    let done = t == state.horizon;
    let channels = if done { state.channels() } else { source.sample(t, Some(&state.channels()), scenario)? };
    let next = EnvState {
        t,
        horizon: state.horizon,
        slices: channels
            .into_iter()
            .zip(&grants)
            .map(|(channel, g)| SliceState { channel, last_alloc_prbs: g.prbs_claimed })
            .collect(),
    };
    let observations = next.observations(scenario);
    Ok((next, StepOutcome { observations, rewards, allocations: grants, satisfactions, done }))
}
