//! Central finite-difference check of [`DgnNetwork::backward`].

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{forward, DgnNetwork, Gradients, NnError, Parameterized, Tape};
use crate::graph::AdjacencyGraph;
use crate::trainer::loss::{attention_kl, attention_kl_grad};

/// Maximum accepted relative error.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Central difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
const SCALE_FLOOR: f64 = 1e-6;

/// Inputs and loss definition for a gradient check.
///
/// The loss is `0.5 * Σ (Q[i][a] - q_targets[i][a])² + kl_weight * KL(attention_target ‖ attention)`.
#[derive(Debug, Clone)]
pub struct GradSample {
    pub features: Vec<Vec<f64>>,
    pub graph: AdjacencyGraph,
    pub q_targets: Vec<Vec<f64>>,
    pub attention_target: Option<crate::nn::AttentionRecord>,
    pub kl_weight: f64,
}

impl GradSample {
    /// Random features, Q targets and attention targets (random distributions
    /// over the network's own attention supports).
    pub fn random<R: Rng + ?Sized>(net: &DgnNetwork, graph: AdjacencyGraph, rng: &mut R) -> Result<Self, NnError> {
        let shape = net.shape();
        let features: Vec<Vec<f64>> =
            (0..graph.n).map(|_| (0..shape.inputs).map(|_| rng.random::<f64>()).collect()).collect();
        let q_targets =
            (0..graph.n).map(|_| (0..shape.actions).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (_, record) = forward(&features, &graph, net)?;
        let mut target = record.zeros_like();
        for layer in &mut target.layers {
            for agent in &mut layer.agents {
                for head in &mut agent.heads {
                    head.iter_mut().for_each(|p| *p = rng.random_range(0.05..1.0));
                    let s: f64 = head.iter().sum();
                    head.iter_mut().for_each(|p| *p /= s);
                }
            }
        }
        Ok(Self { features, graph, q_targets, attention_target: Some(target), kl_weight: 0.5 })
    }

    pub fn loss(&self, net: &DgnNetwork) -> Result<f64, NnError> {
        let (q, record) = forward(&self.features, &self.graph, net)?;
        let mut loss = 0.0;
        for (qi, yi) in q.iter().zip(&self.q_targets) {
            for (a, b) in qi.iter().zip(yi) {
                loss += 0.5 * (a - b) * (a - b);
            }
        }
        if let Some(target) = &self.attention_target {
            loss += self.kl_weight * attention_kl(target, &record).map_err(|_| NnError::EmptyGraph)?;
        }
        Ok(loss)
    }

    /// Analytic gradient of [`GradSample::loss`].
    pub fn gradient(&self, net: &DgnNetwork) -> Result<Gradients, NnError> {
        let mut tape = Tape::new();
        let (q, record) = net.forward_taped(&self.features, &self.graph, &mut tape)?;
        let dq: Vec<Vec<f64>> =
            q.iter().zip(&self.q_targets).map(|(qi, yi)| qi.iter().zip(yi).map(|(a, b)| a - b).collect()).collect();
        let datt = match &self.attention_target {
            Some(target) => {
                let (_, mut g) = attention_kl_grad(target, &record).map_err(|_| NnError::EmptyGraph)?;
                for row in g.layers.iter_mut().flat_map(|l| l.agents.iter_mut()).flat_map(|a| a.heads.iter_mut()) {
                    row.iter_mut().for_each(|x| *x *= self.kl_weight);
                }
                Some(g)
            }
            None => None,
        };
        net.backward(&tape, &dq, datt.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the network's analytic gradients with central differences on
/// every parameter.
pub fn grad_check(net: &DgnNetwork, sample: &GradSample) -> Result<GradCheckReport, NnError> {
    grad_check_with(net, sample, |n, s| s.gradient(n))
}

/// [`grad_check`] against a caller-supplied analytic gradient.
pub fn grad_check_with<F>(net: &DgnNetwork, sample: &GradSample, analytic: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&DgnNetwork, &GradSample) -> Result<Gradients, NnError>,
{
    let grads = analytic(net, sample)?;
    let names: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic_values: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, m)| m.data.clone()).collect();
    let mut probe = net.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (String::new(), 0), checked: 0, passed: true };
    for (t, name) in names.iter().enumerate() {
        for idx in 0..analytic_values[t].len() {
            let original = probe.tensors_mut()[t].data[idx];
            probe.tensors_mut()[t].data[idx] = original + FD_STEP;
            let plus = sample.loss(&probe)?;
            probe.tensors_mut()[t].data[idx] = original - FD_STEP;
            let minus = sample.loss(&probe)?;
            probe.tensors_mut()[t].data[idx] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic_values[t][idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (name.clone(), idx);
            }
        }
    }
    report.passed = report.max_rel_error <= GRAD_CHECK_TOLERANCE;
    Ok(report)
}
