use alloc::vec::Vec;

use rand::Rng;

use super::TrainConfig;

/// Index of the largest value, lowest index on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy, independently per agent.
pub fn select_actions<R: Rng + ?Sized>(qvalues: &[Vec<f64>], epsilon: f64, rng: &mut R) -> Vec<usize> {
    qvalues
        .iter()
        .map(|q| if epsilon > 0.0 && rng.random::<f64>() < epsilon { rng.random_range(0..q.len()) } else { argmax(q) })
        .collect()
}

/// Linear decay from `epsilon_start` to `epsilon_end` over
/// `epsilon_decay_steps` environment steps.
pub fn epsilon_at(step: u64, cfg: &TrainConfig) -> f64 {
    if step >= cfg.epsilon_decay_steps {
        return cfg.epsilon_end;
    }
    let frac = step as f64 / cfg.epsilon_decay_steps as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}
