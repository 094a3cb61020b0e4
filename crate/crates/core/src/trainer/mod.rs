//! Deep Q-learning for both learners: replay, target network,
//! epsilon-greedy exploration and the TD + attention-KL loss.

mod coop;
pub mod loss;
mod policy;
mod replay;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::domain::{normalize_observation, AllocationDecision, FeatureVector, ValidatedScenario, FEATURE_LEN};
use crate::env::{self, EnvError};
use crate::graph::{build_full, build_knn, AdjacencyGraph, GraphError, GraphMode, OverheadLedger};
use crate::ingest::DemandSource;
use crate::nn::{AttentionRecord, DgnNetwork, NetShape, NnError, Parameterized, Tape};
use crate::rng::SimRng;

pub use coop::{coop_forward, CoopNetwork};
pub use loss::{attention_kl, attention_kl_grad, td_target};
pub use policy::{argmax, epsilon_at, select_actions};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("attention records differ in layer/agent/head structure")]
    StructureMismatch,
    #[error("invalid training config: {0}")]
    Config(&'static str),
    /// The loss or gradient of a step was not finite. The step is not
    /// applied.
    #[error("training diverged at gradient step {step}: loss or gradient is not finite")]
    Diverged { step: u64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Algo {
    /// All-to-all communication baseline.
    #[cfg_attr(feature = "serde", serde(rename = "coop"))]
    CoopMarl,
    /// Attention convolutions over a k-nearest-neighbour graph.
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "gcn"))]
    GcnAttention,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::CoopMarl => "coop",
            Algo::GcnAttention => "gcn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub algo: Algo,
    pub episodes: u32,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before the first gradient step; `None` means
    /// `max(batch_size, 500)`.
    pub warmup: Option<usize>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    /// Gradient steps between hard target-network copies.
    pub target_update_period: u64,
    /// Weight of the attention KL term.
    pub kl_lambda: f64,
    /// PRB step between adjacent actions.
    pub action_granularity: u32,
    pub hidden: usize,
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::GcnAttention,
            episodes: 5000,
            gamma: 0.95,
            learning_rate: 1e-3,
            batch_size: 32,
            buffer_capacity: 50_000,
            warmup: None,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            target_update_period: 200,
            kl_lambda: 0.03,
            action_granularity: 2,
            hidden: 128,
            heads: 4,
        }
    }
}

impl TrainConfig {
    pub fn warmup_steps(&self) -> usize {
        self.warmup.unwrap_or(self.batch_size.max(500))
    }

    pub fn check(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TrainError::Config("gamma must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || self.epsilon_end > self.epsilon_start
        {
            return Err(TrainError::Config("need 0 <= epsilon_end <= epsilon_start <= 1"));
        }
        if !(self.kl_lambda >= 0.0 && self.kl_lambda.is_finite()) {
            return Err(TrainError::Config("kl_lambda must be >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(TrainError::Config("need 0 < batch_size <= buffer_capacity"));
        }
        if self.target_update_period == 0 || self.action_granularity == 0 {
            return Err(TrainError::Config("target_update_period and action_granularity must be positive"));
        }
        Ok(())
    }

    pub fn net_shape(&self, actions: &ActionSpace) -> NetShape {
        NetShape { inputs: FEATURE_LEN, hidden: self.hidden, heads: self.heads, actions: actions.len() }
    }
}

/// Discrete PRB claims `0, g, 2g, ...` up to and including the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    claims: Vec<u32>,
}

impl ActionSpace {
    pub fn new(total_prbs: u32, granularity: u32) -> Self {
        let g = granularity.max(1);
        let mut claims: Vec<u32> = (0..=total_prbs).step_by(g as usize).collect();
        if claims.last() != Some(&total_prbs) {
            claims.push(total_prbs);
        }
        Self { claims }
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn claim(&self, action: usize) -> u32 {
        self.claims[action]
    }
}

/// A Q-network the trainer can drive.
pub trait QModel: Clone + Parameterized {
    type Tape: Default;

    fn action_count(&self) -> usize;

    /// Q values per agent and the attention record (empty for models
    /// without attention).
    fn evaluate(
        &self,
        features: &[FeatureVector],
        graph: &AdjacencyGraph,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError>;

    fn evaluate_taped(
        &self,
        features: &[FeatureVector],
        graph: &AdjacencyGraph,
        tape: &mut Self::Tape,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError>;

    fn backward_into(
        &self,
        tape: &Self::Tape,
        dq: &[Vec<f64>],
        datt: Option<&AttentionRecord>,
        grads: &mut Self,
    ) -> Result<(), NnError>;

    fn zeros_like(&self) -> Self;
}

impl QModel for DgnNetwork {
    type Tape = Tape;

    fn action_count(&self) -> usize {
        self.q_head.outputs()
    }

    fn evaluate(
        &self,
        features: &[FeatureVector],
        graph: &AdjacencyGraph,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError> {
        crate::nn::forward(features, graph, self)
    }

    fn evaluate_taped(
        &self,
        features: &[FeatureVector],
        graph: &AdjacencyGraph,
        tape: &mut Tape,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError> {
        self.forward_taped(features, graph, tape)
    }

    fn backward_into(
        &self,
        tape: &Tape,
        dq: &[Vec<f64>],
        datt: Option<&AttentionRecord>,
        grads: &mut Self,
    ) -> Result<(), NnError> {
        DgnNetwork::backward_into(self, tape, dq, datt, grads)
    }

    fn zeros_like(&self) -> Self {
        DgnNetwork::zeros_like(self)
    }
}

/// Recorded activations of the baseline network.
#[derive(Debug, Clone, Default)]
pub struct CoopTape(Option<coop::CoopCache>);

impl QModel for CoopNetwork {
    type Tape = CoopTape;

    fn action_count(&self) -> usize {
        self.out.outputs()
    }

    fn evaluate(
        &self,
        features: &[FeatureVector],
        _graph: &AdjacencyGraph,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError> {
        Ok((coop_forward(features, self)?, AttentionRecord::default()))
    }

    fn evaluate_taped(
        &self,
        features: &[FeatureVector],
        _graph: &AdjacencyGraph,
        tape: &mut CoopTape,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError> {
        let cache = self.forward_cached(features)?;
        let q = cache.q.clone();
        tape.0 = Some(cache);
        Ok((q, AttentionRecord::default()))
    }

    fn backward_into(
        &self,
        tape: &CoopTape,
        dq: &[Vec<f64>],
        _datt: Option<&AttentionRecord>,
        grads: &mut Self,
    ) -> Result<(), NnError> {
        let cache = tape.0.as_ref().ok_or(NnError::MissingCache)?;
        self.backward_cached(cache, dq, grads)
    }

    fn zeros_like(&self) -> Self {
        CoopNetwork::zeros_like(self)
    }
}

/// Per-agent TD targets for one transition, plus the target network's
/// attention on the next state.
pub fn td_targets<M: QModel>(
    t: &Transition,
    target_net: &M,
    gamma: f64,
) -> Result<(Vec<f64>, AttentionRecord), NnError> {
    let (next_q, record) = target_net.evaluate(&t.next_features, &t.next_graph)?;
    let ys = t.rewards.iter().zip(&next_q).map(|(&r, q)| td_target(r, loss::max_q(q), t.done, gamma)).collect();
    Ok((ys, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// Mean squared TD error over agents and batch.
    pub td: f64,
    /// Mean attention KL over the batch.
    pub kl: f64,
    pub total: f64,
}

/// One gradient-descent update of `online` on a sampled batch.
/// `grad_steps` counts updates; `target` is overwritten with `online` every
/// `target_update_period` of them.
pub fn train_step<M: QModel>(
    online: &mut M,
    target: &mut M,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    grad_steps: &mut u64,
    rng: &mut SimRng,
) -> Result<LossParts, TrainError> {
    let batch = buffer.sample_indices(cfg.batch_size, rng)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = online.zeros_like();
    let mut tape = M::Tape::default();
    let (mut td_sum, mut kl_sum) = (0.0, 0.0);
    for &idx in &batch {
        let t = buffer.get(idx);
        let (ys, target_att) = td_targets(t, target, cfg.gamma)?;
        let (q, att) = online.evaluate_taped(&t.features, &t.graph, &mut tape)?;
        let n = q.len() as f64;
        let mut dq: Vec<Vec<f64>> = q.iter().map(|row| vec![0.0; row.len()]).collect();
        for (i, (&a, y)) in t.actions.iter().zip(&ys).enumerate() {
            let err = q[i][a] - y;
            td_sum += err * err / n;
            dq[i][a] = 2.0 * err / n * scale;
        }
        let (kl, mut datt) = attention_kl_grad(&target_att, &att)?;
        kl_sum += kl;
        let datt = if cfg.kl_lambda > 0.0 && !att.layers.is_empty() {
            for row in datt.layers.iter_mut().flat_map(|l| l.agents.iter_mut()).flat_map(|a| a.heads.iter_mut()) {
                row.iter_mut().for_each(|g| *g *= cfg.kl_lambda * scale);
            }
            Some(datt)
        } else {
            None
        };
        online.backward_into(&tape, &dq, datt.as_ref(), &mut grads)?;
    }
    let td = td_sum * scale;
    let kl = kl_sum * scale;
    let finite = |m: &M| m.tensors().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()));
    if !(td + kl).is_finite() || !finite(&grads) {
        return Err(TrainError::Diverged { step: *grad_steps + 1 });
    }
    online.sgd_step(&grads, cfg.learning_rate);
    *grad_steps += 1;
    if grad_steps.is_multiple_of(cfg.target_update_period) {
        *target = online.clone();
    }
    Ok(LossParts { td, kl, total: td + cfg.kl_lambda * kl })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    /// Epsilon-greedy with replay and gradient updates.
    Train,
    /// Greedy, no learning.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    /// Sum of rewards over agents and steps.
    pub cumulative_reward: f64,
    /// Per slice, mean clamped satisfaction over the episode.
    pub mean_satisfaction: Vec<f64>,
    pub messages: u64,
    pub steps: u32,
    pub gradient_steps: u32,
    /// Mean over this episode's gradient steps (0 if none).
    pub td_loss: f64,
    pub kl_loss: f64,
}

/// Online and target networks with their replay buffer and counters.
#[derive(Debug, Clone)]
pub struct Learner<M: QModel> {
    pub online: M,
    pub target: M,
    pub buffer: ReplayBuffer,
    pub cfg: TrainConfig,
    pub graph_mode: GraphMode,
    pub actions: ActionSpace,
    pub rng: SimRng,
    pub env_steps: u64,
    pub grad_steps: u64,
}

impl<M: QModel> Learner<M> {
    pub fn new(
        online: M,
        cfg: TrainConfig,
        graph_mode: GraphMode,
        actions: ActionSpace,
        rng: SimRng,
    ) -> Result<Self, TrainError> {
        cfg.check()?;
        if online.action_count() != actions.len() {
            return Err(TrainError::Config("network output width differs from the action space"));
        }
        Ok(Self {
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            graph_mode,
            actions,
            rng,
            env_steps: 0,
            grad_steps: 0,
        })
    }

    pub fn graph_for(&self, features: &[FeatureVector]) -> Result<AdjacencyGraph, GraphError> {
        match self.graph_mode {
            GraphMode::Full => Ok(build_full(features.len())),
            GraphMode::Knn(k) => build_knn(features, k),
        }
    }

    pub fn train_step(&mut self) -> Result<LossParts, TrainError> {
        train_step(&mut self.online, &mut self.target, &self.buffer, &self.cfg, &mut self.grad_steps, &mut self.rng)
    }
}

fn features_of(obs: &[crate::domain::Observation], scenario: &ValidatedScenario) -> Vec<FeatureVector> {
    obs.iter().map(|o| normalize_observation(o, scenario)).collect()
}

/// Plays one episode. In [`EpisodeMode::Train`] every step is stored and,
/// once the buffer holds the warmup amount, followed by one gradient step.
pub fn run_episode<M: QModel, S: DemandSource>(
    learner: &mut Learner<M>,
    scenario: &ValidatedScenario,
    source: &mut S,
    mode: EpisodeMode,
    ledger: &mut OverheadLedger,
) -> Result<EpisodeStats, TrainError> {
    let n = scenario.n_slices();
    let (mut state, obs) = env::reset(scenario, source)?;
    let mut features = features_of(&obs, scenario);
    let mut graph = learner.graph_for(&features)?;
    let mut stats = EpisodeStats {
        cumulative_reward: 0.0,
        mean_satisfaction: vec![0.0; n],
        messages: 0,
        steps: 0,
        gradient_steps: 0,
        td_loss: 0.0,
        kl_loss: 0.0,
    };
    loop {
        ledger.record(&graph);
        stats.messages += ledger.messages_this_step;
        let (q, _) = learner.online.evaluate(&features, &graph)?;
        let epsilon = match mode {
            EpisodeMode::Train => epsilon_at(learner.env_steps, &learner.cfg),
            EpisodeMode::Greedy => 0.0,
        };
        let actions = select_actions(&q, epsilon, &mut learner.rng);
        let claims: Vec<AllocationDecision> = actions
            .iter()
            .zip(&scenario.slices)
            .map(|(&a, s)| AllocationDecision { slice_id: s.id, prbs_claimed: learner.actions.claim(a) })
            .collect();
        let (next_state, out) = env::step(&state, &claims, scenario, source)?;
        let next_features = features_of(&out.observations, scenario);
        let next_graph = learner.graph_for(&next_features)?;

        stats.cumulative_reward += out.rewards.iter().sum::<f64>();
        for (m, s) in stats.mean_satisfaction.iter_mut().zip(&out.satisfactions) {
            *m += s;
        }
        stats.steps += 1;

        if mode == EpisodeMode::Train {
            learner.buffer.push(Transition {
                features: core::mem::take(&mut features),
                graph: core::mem::replace(&mut graph, next_graph.clone()),
                actions,
                rewards: out.rewards.clone(),
                next_features: next_features.clone(),
                next_graph,
                done: out.done,
            });
            learner.env_steps += 1;
            if learner.buffer.len() >= learner.cfg.warmup_steps().max(learner.cfg.batch_size) {
                let l = learner.train_step()?;
                stats.td_loss += l.td;
                stats.kl_loss += l.kl;
                stats.gradient_steps += 1;
            }
        } else {
            graph = next_graph;
        }
        features = next_features;
        state = next_state;
        if out.done {
            break;
        }
    }
    let steps = f64::from(stats.steps);
    stats.mean_satisfaction.iter_mut().for_each(|m| *m /= steps);
    if stats.gradient_steps > 0 {
        stats.td_loss /= f64::from(stats.gradient_steps);
        stats.kl_loss /= f64::from(stats.gradient_steps);
    }
    Ok(stats)
}
