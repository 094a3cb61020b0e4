//! Graph-attention Q-network.
//!
//! Each agent's features are encoded by a two-layer MLP, mixed with its
//! neighbours' encodings by two graph convolutions with multi-head
//! scaled dot-product attention, and the concatenation of all three latent
//! vectors is mapped to one Q value per action. One parameter set is shared
//! by every agent. Gradients are derived by hand for this architecture.

mod gradcheck;
pub mod tensor;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::graph::AdjacencyGraph;
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, GradSample, GRAD_CHECK_TOLERANCE};
use tensor::{dot, relu_backward, relu_in_place, softmax};
pub use tensor::{Affine, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("graph has no agents")]
    EmptyGraph,
    #[error("{heads} heads do not divide hidden width {hidden}")]
    HeadsDoNotDivide { heads: usize, hidden: usize },
    #[error("backward called without a recorded forward pass")]
    MissingCache,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { what, expected, got })
    }
}

/// Layer widths of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: usize,
    pub heads: usize,
    pub actions: usize,
}

impl NetShape {
    pub fn check(&self) -> Result<(), NnError> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(NnError::HeadsDoNotDivide { heads: self.heads, hidden: self.hidden });
        }
        Ok(())
    }
}

/// Anything made of named parameter tensors.
pub trait Parameterized {
    /// Tensors in a fixed order with stable names.
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    /// Same order as [`Parameterized::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    fn zero(&mut self) {
        self.tensors_mut().into_iter().for_each(|m| m.fill(0.0));
    }

    /// Plain gradient descent: `p -= lr * g`.
    fn sgd_step(&mut self, grads: &Self, lr: f64)
    where
        Self: Sized,
    {
        let gs = grads.tensors();
        for (p, (_, g)) in self.tensors_mut().into_iter().zip(gs) {
            for (w, d) in p.data.iter_mut().zip(&g.data) {
                *w -= lr * d;
            }
        }
    }
}

/// Two-layer rectifier MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub l1: Affine,
    pub l2: Affine,
}

impl MlpParams {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Self { l1: Affine::new(inputs, hidden, rng), l2: Affine::new(hidden, hidden, rng) }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self { l1: Affine::zeros(inputs, hidden), l2: Affine::zeros(hidden, hidden) }
    }

    pub(crate) fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.l1.weight"), &self.l1.weight));
        out.push((format!("{prefix}.l1.bias"), &self.l1.bias));
        out.push((format!("{prefix}.l2.weight"), &self.l2.weight));
        out.push((format!("{prefix}.l2.bias"), &self.l2.bias));
    }

    pub(crate) fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        out.extend([&mut self.l1.weight, &mut self.l1.bias, &mut self.l2.weight, &mut self.l2.bias]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderCache {
    pub(crate) x: Vec<f64>,
    pub(crate) pre1: Vec<f64>,
    pub(crate) h1: Vec<f64>,
    pub(crate) pre2: Vec<f64>,
    pub(crate) out: Vec<f64>,
}

pub(crate) fn encode_cached(features: &[f64], p: &MlpParams) -> Result<EncoderCache, NnError> {
    check_len("encoder input", p.l1.inputs(), features.len())?;
    let pre1 = p.l1.apply(features);
    let mut h1 = pre1.clone();
    relu_in_place(&mut h1);
    let pre2 = p.l2.apply(&h1);
    let mut out = pre2.clone();
    relu_in_place(&mut out);
    Ok(EncoderCache { x: features.to_vec(), pre1, h1, pre2, out })
}

/// `relu(W2 relu(W1 x + b1) + b2)`.
pub fn encode(features: &[f64], p: &MlpParams) -> Result<Vec<f64>, NnError> {
    encode_cached(features, p).map(|c| c.out)
}

pub(crate) fn encoder_backward(p: &MlpParams, cache: &EncoderCache, dout: &[f64], grads: &mut MlpParams) {
    let mut dpre2 = dout.to_vec();
    relu_backward(&cache.pre2, &mut dpre2);
    let mut dh1 = vec![0.0; cache.h1.len()];
    p.l2.backward(&cache.h1, &dpre2, &mut grads.l2, &mut dh1);
    relu_backward(&cache.pre1, &mut dh1);
    let mut dx = vec![0.0; cache.x.len()];
    p.l1.backward(&cache.x, &dh1, &mut grads.l1, &mut dx);
}

/// Projections of one multi-head attention convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayerParams {
    /// Per head, `d_h x H`.
    pub query: Vec<Matrix>,
    pub key: Vec<Matrix>,
    pub value: Vec<Matrix>,
    /// Maps the concatenated heads back to `H`.
    pub out: Affine,
}

impl AttentionLayerParams {
    pub fn new<R: Rng + ?Sized>(hidden: usize, heads: usize, rng: &mut R) -> Self {
        let d = hidden / heads;
        let proj = |rng: &mut R| (0..heads).map(|_| Matrix::xavier(d, hidden, rng)).collect::<Vec<_>>();
        let query = proj(rng);
        let key = proj(rng);
        let value = proj(rng);
        Self { query, key, value, out: Affine::new(hidden, hidden, rng) }
    }

    pub fn zeros(hidden: usize, heads: usize) -> Self {
        let d = hidden / heads;
        let proj = || vec![Matrix::zeros(d, hidden); heads];
        Self { query: proj(), key: proj(), value: proj(), out: Affine::zeros(hidden, hidden) }
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn hidden(&self) -> usize {
        self.out.outputs()
    }

    pub fn head_dim(&self) -> usize {
        self.query.first().map_or(0, |m| m.rows)
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        for (m, ((q, k), v)) in self.query.iter().zip(&self.key).zip(&self.value).enumerate() {
            out.push((format!("{prefix}.head{m}.query"), q));
            out.push((format!("{prefix}.head{m}.key"), k));
            out.push((format!("{prefix}.head{m}.value"), v));
        }
        out.push((format!("{prefix}.out.weight"), &self.out.weight));
        out.push((format!("{prefix}.out.bias"), &self.out.bias));
    }

    fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        for ((q, k), v) in self.query.iter_mut().zip(self.key.iter_mut()).zip(self.value.iter_mut()) {
            out.extend([q, k, v]);
        }
        out.extend([&mut self.out.weight, &mut self.out.bias]);
    }
}

/// Attention of one agent in one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentAttention {
    /// The agent itself, then its neighbours in graph order.
    pub support: Vec<usize>,
    /// One probability vector over `support` per head.
    pub heads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerAttention {
    pub agents: Vec<AgentAttention>,
}

/// Attention weights of every layer, agent and head. The same structure
/// carries gradients with respect to those weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionRecord {
    pub layers: Vec<LayerAttention>,
}

impl AttentionRecord {
    /// Same structure, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerAttention {
                agents: l
                    .agents
                    .iter()
                    .map(|a| AgentAttention {
                        support: a.support.clone(),
                        heads: a.heads.iter().map(|h| vec![0.0; h.len()]).collect(),
                    })
                    .collect(),
            })
            .collect();
        Self { layers }
    }

    /// Every (layer, agent, head) distribution.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.layers.iter().flat_map(|l| l.agents.iter().flat_map(|a| a.heads.iter().map(Vec::as_slice)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerCache {
    input: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attention: LayerAttention,
    concat: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub(crate) output: Vec<Vec<f64>>,
}

fn project_heads(mats: &[Matrix], h: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; mats.len() * d];
    for (m, w) in mats.iter().enumerate() {
        w.matvec_into(h, &mut out[m * d..(m + 1) * d]);
    }
    out
}

fn attention_cached(latents: &[Vec<f64>], g: &AdjacencyGraph, p: &AttentionLayerParams) -> Result<LayerCache, NnError> {
    if g.n == 0 {
        return Err(NnError::EmptyGraph);
    }
    check_len("latents", g.n, latents.len())?;
    let hidden = p.hidden();
    for h in latents {
        check_len("latent width", hidden, h.len())?;
    }
    let d = p.head_dim();
    let scale = 1.0 / libm::sqrt(d as f64);
    let q: Vec<Vec<f64>> = latents.iter().map(|h| project_heads(&p.query, h, d)).collect();
    let k: Vec<Vec<f64>> = latents.iter().map(|h| project_heads(&p.key, h, d)).collect();
    let v: Vec<Vec<f64>> = latents.iter().map(|h| project_heads(&p.value, h, d)).collect();

    let mut agents = Vec::with_capacity(g.n);
    let mut concat = Vec::with_capacity(g.n);
    for i in 0..g.n {
        let support: Vec<usize> = g.support(i).collect();
        let mut heads = Vec::with_capacity(p.heads());
        let mut c = vec![0.0; hidden];
        for m in 0..p.heads() {
            let span = m * d..(m + 1) * d;
            let qi = &q[i][span.clone()];
            let scores: Vec<f64> = support.iter().map(|&j| dot(qi, &k[j][span.clone()]) * scale).collect();
            let alpha = softmax(&scores);
            let out = &mut c[span.clone()];
            for (&j, a) in support.iter().zip(&alpha) {
                for (o, x) in out.iter_mut().zip(&v[j][span.clone()]) {
                    *o += a * x;
                }
            }
            heads.push(alpha);
        }
        agents.push(AgentAttention { support, heads });
        concat.push(c);
    }
    let pre: Vec<Vec<f64>> = concat.iter().map(|c| p.out.apply(c)).collect();
    let output =
        latents.iter().zip(&pre).map(|(h, z)| h.iter().zip(z).map(|(x, y)| x + y.max(0.0)).collect()).collect();
    Ok(LayerCache { input: latents.to_vec(), q, k, v, attention: LayerAttention { agents }, concat, pre, output })
}

/// One graph convolution: per agent and head, softmax-weighted sum of the
/// values of the agent and its neighbours, output-projected, rectified and
/// added to the input latent.
pub fn attention_conv(
    latents: &[Vec<f64>],
    g: &AdjacencyGraph,
    p: &AttentionLayerParams,
) -> Result<(Vec<Vec<f64>>, LayerAttention), NnError> {
    let cache = attention_cached(latents, g, p)?;
    Ok((cache.output, cache.attention))
}

/// Returns the gradient with respect to the layer input.
fn attention_backward(
    p: &AttentionLayerParams,
    cache: &LayerCache,
    dout: &[Vec<f64>],
    datt: Option<&LayerAttention>,
    grads: &mut AttentionLayerParams,
) -> Vec<Vec<f64>> {
    let n = cache.input.len();
    let hidden = p.hidden();
    let d = p.head_dim();
    let scale = 1.0 / libm::sqrt(d as f64);
    let mut dinput: Vec<Vec<f64>> = dout.to_vec();
    let mut dq = vec![vec![0.0; hidden]; n];
    let mut dk = vec![vec![0.0; hidden]; n];
    let mut dv = vec![vec![0.0; hidden]; n];
    let mut dconcat = vec![0.0; hidden];
    for i in 0..n {
        let mut dpre = dout[i].clone();
        relu_backward(&cache.pre[i], &mut dpre);
        dconcat.iter_mut().for_each(|x| *x = 0.0);
        p.out.backward(&cache.concat[i], &dpre, &mut grads.out, &mut dconcat);
        let agent = &cache.attention.agents[i];
        for (m, alpha) in agent.heads.iter().enumerate() {
            let span = m * d..(m + 1) * d;
            let du = &dconcat[span.clone()];
            let mut dalpha: Vec<f64> = agent.support.iter().map(|&j| dot(du, &cache.v[j][span.clone()])).collect();
            if let Some(ext) = datt {
                for (a, e) in dalpha.iter_mut().zip(&ext.agents[i].heads[m]) {
                    *a += e;
                }
            }
            for (&j, a) in agent.support.iter().zip(alpha) {
                for (g, u) in dv[j][span.clone()].iter_mut().zip(du) {
                    *g += a * u;
                }
            }
            let mean = dot(alpha, &dalpha);
            for ((&j, a), da) in agent.support.iter().zip(alpha).zip(&dalpha) {
                let ds = a * (da - mean) * scale;
                if ds == 0.0 {
                    continue;
                }
                for (g, x) in dq[i][span.clone()].iter_mut().zip(&cache.k[j][span.clone()]) {
                    *g += ds * x;
                }
                for (g, x) in dk[j][span.clone()].iter_mut().zip(&cache.q[i][span.clone()]) {
                    *g += ds * x;
                }
            }
        }
    }
    for j in 0..n {
        let h = &cache.input[j];
        for m in 0..p.heads() {
            let span = m * d..(m + 1) * d;
            for (w, gw, dx) in [
                (&p.query[m], &mut grads.query[m], &dq[j]),
                (&p.key[m], &mut grads.key[m], &dk[j]),
                (&p.value[m], &mut grads.value[m], &dv[j]),
            ] {
                let dy = &dx[span.clone()];
                gw.add_outer(dy, h);
                w.add_matvec_t(dy, &mut dinput[j]);
            }
        }
    }
    dinput
}

/// Encoder, two attention convolutions and a dense-connected Q head.
#[derive(Debug, Clone, PartialEq)]
pub struct DgnNetwork {
    pub encoder: MlpParams,
    pub conv1: AttentionLayerParams,
    pub conv2: AttentionLayerParams,
    /// Affine map from `3H` (encoder, conv1, conv2 outputs) to action values.
    pub q_head: Affine,
}

/// Parameter-shaped gradient container.
pub type Gradients = DgnNetwork;

impl DgnNetwork {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self, NnError> {
        shape.check()?;
        Ok(Self {
            encoder: MlpParams::new(shape.inputs, shape.hidden, rng),
            conv1: AttentionLayerParams::new(shape.hidden, shape.heads, rng),
            conv2: AttentionLayerParams::new(shape.hidden, shape.heads, rng),
            q_head: Affine::new(3 * shape.hidden, shape.actions, rng),
        })
    }

    pub fn zeros(shape: NetShape) -> Result<Self, NnError> {
        shape.check()?;
        Ok(Self {
            encoder: MlpParams::zeros(shape.inputs, shape.hidden),
            conv1: AttentionLayerParams::zeros(shape.hidden, shape.heads),
            conv2: AttentionLayerParams::zeros(shape.hidden, shape.heads),
            q_head: Affine::zeros(3 * shape.hidden, shape.actions),
        })
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            inputs: self.encoder.l1.inputs(),
            hidden: self.encoder.l2.outputs(),
            heads: self.conv1.heads(),
            actions: self.q_head.outputs(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn forward_cached<F: AsRef<[f64]>>(&self, features: &[F], g: &AdjacencyGraph) -> Result<ForwardCache, NnError> {
        check_len("features", g.n, features.len())?;
        let enc = features.iter().map(|f| encode_cached(f.as_ref(), &self.encoder)).collect::<Result<Vec<_>, _>>()?;
        let h0: Vec<Vec<f64>> = enc.iter().map(|c| c.out.clone()).collect();
        let conv1 = attention_cached(&h0, g, &self.conv1)?;
        let conv2 = attention_cached(&conv1.output, g, &self.conv2)?;
        let z: Vec<Vec<f64>> =
            (0..g.n).map(|i| [h0[i].as_slice(), &conv1.output[i], &conv2.output[i]].concat()).collect();
        let q = z.iter().map(|zi| self.q_head.apply(zi)).collect();
        Ok(ForwardCache { enc, conv1, conv2, z, q })
    }

    /// Like [`forward`], recording activations on `tape` for [`DgnNetwork::backward`].
    pub fn forward_taped<F: AsRef<[f64]>>(
        &self,
        features: &[F],
        g: &AdjacencyGraph,
        tape: &mut Tape,
    ) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError> {
        let cache = self.forward_cached(features, g)?;
        let out = (cache.q.clone(), cache.record());
        tape.cache = Some(cache);
        Ok(out)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives are
    /// `dq` (per agent, per action) and optionally `datt` (per attention
    /// weight).
    pub fn backward_into(
        &self,
        tape: &Tape,
        dq: &[Vec<f64>],
        datt: Option<&AttentionRecord>,
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        let cache = tape.cache.as_ref().ok_or(NnError::MissingCache)?;
        let n = cache.z.len();
        check_len("dq", n, dq.len())?;
        let hidden = self.encoder.l2.outputs();
        let mut dh0 = vec![vec![0.0; hidden]; n];
        let mut dh1 = vec![vec![0.0; hidden]; n];
        let mut dh2 = vec![vec![0.0; hidden]; n];
        let mut dz = vec![0.0; 3 * hidden];
        for i in 0..n {
            check_len("dq row", self.q_head.outputs(), dq[i].len())?;
            dz.iter_mut().for_each(|x| *x = 0.0);
            self.q_head.backward(&cache.z[i], &dq[i], &mut grads.q_head, &mut dz);
            dh0[i].copy_from_slice(&dz[..hidden]);
            dh1[i].copy_from_slice(&dz[hidden..2 * hidden]);
            dh2[i].copy_from_slice(&dz[2 * hidden..]);
        }
        let att = |l: usize| datt.and_then(|r| r.layers.get(l));
        let from2 = attention_backward(&self.conv2, &cache.conv2, &dh2, att(1), &mut grads.conv2);
        for (a, b) in dh1.iter_mut().zip(&from2) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let from1 = attention_backward(&self.conv1, &cache.conv1, &dh1, att(0), &mut grads.conv1);
        for (a, b) in dh0.iter_mut().zip(&from1) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (c, d) in cache.enc.iter().zip(&dh0) {
            encoder_backward(&self.encoder, c, d, &mut grads.encoder);
        }
        Ok(())
    }

    /// Fresh gradients for one recorded forward pass.
    pub fn backward(&self, tape: &Tape, dq: &[Vec<f64>], datt: Option<&AttentionRecord>) -> Result<Gradients, NnError> {
        let mut grads = self.zeros_like();
        self.backward_into(tape, dq, datt, &mut grads)?;
        Ok(grads)
    }
}

impl Parameterized for DgnNetwork {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.encoder.push_tensors("encoder", &mut out);
        self.conv1.push_tensors("conv1", &mut out);
        self.conv2.push_tensors("conv2", &mut out);
        out.push((String::from("q_head.weight"), &self.q_head.weight));
        out.push((String::from("q_head.bias"), &self.q_head.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        self.encoder.push_tensors_mut(&mut out);
        self.conv1.push_tensors_mut(&mut out);
        self.conv2.push_tensors_mut(&mut out);
        out.extend([&mut self.q_head.weight, &mut self.q_head.bias]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ForwardCache {
    enc: Vec<EncoderCache>,
    conv1: LayerCache,
    conv2: LayerCache,
    z: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
}

impl ForwardCache {
    fn record(&self) -> AttentionRecord {
        AttentionRecord { layers: vec![self.conv1.attention.clone(), self.conv2.attention.clone()] }
    }
}

/// Activations of the most recent taped forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    cache: Option<ForwardCache>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_none()
    }
}

/// Q values of every agent plus the attention of both layers.
pub fn forward<F: AsRef<[f64]>>(
    features: &[F],
    g: &AdjacencyGraph,
    net: &DgnNetwork,
) -> Result<(Vec<Vec<f64>>, AttentionRecord), NnError> {
    let cache = net.forward_cached(features, g)?;
    let record = cache.record();
    Ok((cache.q, record))
}
