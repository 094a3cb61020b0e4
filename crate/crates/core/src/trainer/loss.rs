//! TD targets and the attention KL regulariser.

use alloc::vec::Vec;

use super::TrainError;
use crate::nn::AttentionRecord;

/// Online probabilities below this are floored inside the logarithm.
pub const KL_FLOOR: f64 = 1e-12;

/// `r` if the transition ended the episode, else `r + gamma * max_next`.
pub fn td_target(reward: f64, max_next_q: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

pub fn max_q(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_structure(target: &AttentionRecord, online: &AttentionRecord) -> Result<usize, TrainError> {
    if target.layers.len() != online.layers.len() {
        return Err(TrainError::StructureMismatch);
    }
    let mut rows = 0;
    for (lt, lo) in target.layers.iter().zip(&online.layers) {
        if lt.agents.len() != lo.agents.len() {
            return Err(TrainError::StructureMismatch);
        }
        for (at, ao) in lt.agents.iter().zip(&lo.agents) {
            if at.heads.len() != ao.heads.len()
                || at.heads.iter().any(|h| h.len() != at.support.len())
                || ao.heads.iter().any(|h| h.len() != ao.support.len())
            {
                return Err(TrainError::StructureMismatch);
            }
            rows += at.heads.len();
        }
    }
    Ok(rows)
}

/// Visits every (layer, agent, head) pair of distributions as
/// `(target support, target probs, online support, online probs, row index)`.
fn for_each_row<F>(target: &AttentionRecord, online: &AttentionRecord, mut f: F)
where
    F: FnMut(&[usize], &[f64], &[usize], &[f64], (usize, usize, usize)),
{
    for (l, (lt, lo)) in target.layers.iter().zip(&online.layers).enumerate() {
        for (i, (at, ao)) in lt.agents.iter().zip(&lo.agents).enumerate() {
            for (m, (pt, po)) in at.heads.iter().zip(&ao.heads).enumerate() {
                f(&at.support, pt, &ao.support, po, (l, i, m));
            }
        }
    }
}

/// `KL(p ‖ q)` over the union of both supports; entries missing from the
/// online support count as [`KL_FLOOR`].
fn row_kl(ts: &[usize], p: &[f64], os: &[usize], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&j, &pj) in ts.iter().zip(p) {
        if pj <= 0.0 {
            continue;
        }
        let qj = os.iter().position(|&o| o == j).map_or(KL_FLOOR, |pos| q[pos]).max(KL_FLOOR);
        kl += pj * libm::log(pj / qj);
    }
    kl
}

/// Mean over layers, agents and heads of `KL(target ‖ online)`.
pub fn attention_kl(target: &AttentionRecord, online: &AttentionRecord) -> Result<f64, TrainError> {
    let rows = check_structure(target, online)?;
    if rows == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for_each_row(target, online, |ts, p, os, q, _| total += row_kl(ts, p, os, q));
    Ok(total / rows as f64)
}

/// [`attention_kl`] and its gradient with respect to the online weights.
/// The target is treated as a constant.
pub fn attention_kl_grad(
    target: &AttentionRecord,
    online: &AttentionRecord,
) -> Result<(f64, AttentionRecord), TrainError> {
    let rows = check_structure(target, online)?;
    let mut grad = online.zeros_like();
    if rows == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    for_each_row(target, online, |ts, p, os, q, (l, i, m)| {
        total += row_kl(ts, p, os, q);
        let g: &mut Vec<f64> = &mut grad.layers[l].agents[i].heads[m];
        for (pos, &j) in os.iter().enumerate() {
            let pj = ts.iter().position(|&t| t == j).map_or(0.0, |k| p[k]);
            if pj > 0.0 && q[pos] >= KL_FLOOR {
                g[pos] = -pj / q[pos] * scale;
            }
        }
    });
    Ok((total * scale, grad))
}
