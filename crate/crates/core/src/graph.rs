//! Who talks to whom: all-to-all and k-nearest-neighbour communication
//! graphs, plus message accounting.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", content = "k", rename_all = "lowercase"))]
pub enum GraphMode {
    Full,
    Knn(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("k = {k} exceeds n - 1 = {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("feature vectors have unequal lengths")]
    RaggedFeatures,
}

/// Directed communication graph for one timestep.
///
/// `neighbors[i]` lists the agents whose messages agent `i` receives. Agents
/// never list themselves; aggregation adds the self-loop implicitly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    pub n: usize,
    pub neighbors: Vec<Vec<usize>>,
    pub mode: GraphMode,
}

impl AdjacencyGraph {
    /// Builds a graph from explicit lists; used for hand-made topologies.
    pub fn from_lists(neighbors: Vec<Vec<usize>>, mode: GraphMode) -> Self {
        Self { n: neighbors.len(), neighbors, mode }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// The agent itself followed by its neighbours: the attention support.
    pub fn support(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        core::iter::once(i).chain(self.neighbors[i].iter().copied())
    }

    pub fn is_well_formed(&self) -> bool {
        self.neighbors.len() == self.n
            && self.neighbors.iter().enumerate().all(|(i, ns)| ns.iter().all(|&j| j != i && j < self.n))
    }
}

pub fn build_full(n: usize) -> AdjacencyGraph {
    let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
    AdjacencyGraph { n, neighbors, mode: GraphMode::Full }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Each agent listens to the `k` agents whose features are closest in
/// Euclidean distance, ties broken by ascending id.
pub fn build_knn<F: AsRef<[f64]>>(features: &[F], k: usize) -> Result<AdjacencyGraph, GraphError> {
    let n = features.len();
    let max = n.saturating_sub(1);
    if k > max {
        return Err(GraphError::KTooLarge { k, max });
    }
    if let Some(first) = features.first() {
        let len = first.as_ref().len();
        if features.iter().any(|f| f.as_ref().len() != len) {
            return Err(GraphError::RaggedFeatures);
        }
    }
    let neighbors = (0..n)
        .map(|i| {
            let me = features[i].as_ref();
            let mut others: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (squared_distance(me, features[j].as_ref()), j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    Ok(AdjacencyGraph { n, neighbors, mode: GraphMode::Knn(k) })
}

/// Messages exchanged in one timestep: one per directed edge.
pub fn message_count(g: &AdjacencyGraph) -> u64 {
    g.neighbors.iter().map(|ns| ns.len() as u64).sum()
}

/// Percentage of all-to-all messages saved by talking to `k` neighbours:
/// `((n - 1 - k) / (n - 1)) * 100`. The numerator is formed in integers so
/// the only rounding is the final division.
pub fn overhead_reduction(n: usize, k: usize) -> f64 {
    assert!(n >= 2 && k < n, "overhead_reduction needs n >= 2 and k <= n - 1");
    ((n - 1 - k) as f64 * 100.0) / (n - 1) as f64
}

/// Rounds a percentage to `decimals` places for reporting.
pub fn round_percent(x: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, f64::from(decimals));
    libm::round(x * scale) / scale
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverheadLedger {
    pub messages_this_step: u64,
    pub cumulative_messages: u64,
    pub steps: u64,
}

impl OverheadLedger {
    pub fn record(&mut self, g: &AdjacencyGraph) {
        self.messages_this_step = message_count(g);
        self.cumulative_messages += self.messages_this_step;
        self.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_graph_counts() {
        assert_eq!(message_count(&build_full(1)), 0);
        assert_eq!(message_count(&build_full(10)), 90);
        assert_eq!(message_count(&build_full(20)), 380);
        assert_eq!(build_full(4).neighbors[2], [0, 1, 3]);
        for n in 1..=64usize {
            assert_eq!(message_count(&build_full(n)), (n * (n - 1)) as u64);
        }
    }

    #[test]
    fn knn_examples() {
        let f = [[0.0], [0.1], [0.5], [0.9]];
        let g = build_knn(&f, 1).unwrap();
        assert_eq!(g.neighbors, vec![vec![1], vec![0], vec![1], vec![2]]);
        assert!(g.is_well_formed());

        let full = build_knn(&f, 3).unwrap();
        assert_eq!(full.neighbors[3], [2, 1, 0]);
        for (mut a, b) in full.neighbors.into_iter().zip(build_full(4).neighbors) {
            a.sort_unstable();
            assert_eq!(a, b);
        }
        assert_eq!(message_count(&build_knn(&f, 0).unwrap()), 0);
        assert_eq!(build_knn(&f, 4), Err(GraphError::KTooLarge { k: 4, max: 3 }));
    }

    #[test]
    fn knn_brute_force_oracle() {
        // Independent check: rank by absolute difference, which orders 1-D
        // points the same way as squared Euclidean distance.
        let pts = [0.3, 0.8, 0.1, 0.75, 0.5, 0.52];
        let f: Vec<[f64; 1]> = pts.iter().map(|&x| [x]).collect();
        let g = build_knn(&f, 2).unwrap();
        for i in 0..pts.len() {
            let mut cand: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
            cand.sort_by(|&a, &b| {
                let da = (pts[a] - pts[i]).abs();
                let db = (pts[b] - pts[i]).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            assert_eq!(g.neighbors[i], cand[..2]);
        }
    }

    #[test]
    fn identical_features_fall_back_to_id_order() {
        let f = vec![[0.5, 0.5]; 5];
        let g = build_knn(&f, 2).unwrap();
        assert_eq!(g.neighbors[0], [1, 2]);
        assert_eq!(g.neighbors[3], [0, 1]);
        assert_eq!(g, build_knn(&f, 2).unwrap());
    }

    #[test]
    fn overhead_figures() {
        let g = build_knn(&[[0.0]; 10], 3).unwrap();
        assert_eq!(message_count(&g), 30);
        let r = overhead_reduction(10, 3);
        assert_eq!(round_percent(r, 2), 66.67);
        assert_eq!(libm::floor(r), 66.0);
        assert_eq!(overhead_reduction(10, 9), 0.0);
        assert_eq!(overhead_reduction(10, 0), 100.0);
    }

    #[test]
    fn ledger_accumulates() {
        let mut l = OverheadLedger::default();
        let g = build_full(10);
        for _ in 0..100 {
            l.record(&g);
        }
        assert_eq!(l.messages_this_step, 90);
        assert_eq!(l.cumulative_messages, 9000);
    }

    proptest! {
        #[test]
        fn knn_counts_and_identity(n in 2usize..=24, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = ((n - 1) as f64 * k_frac) as usize;
            let mut s = seed;
            let f: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    let mut v = [0.0; 3];
                    for x in &mut v {
                        s = crate::rng::mix(s);
                        *x = (s >> 11) as f64 / (1u64 << 53) as f64;
                    }
                    v
                })
                .collect();
            let g = build_knn(&f, k).unwrap();
            prop_assert!(g.is_well_formed());
            prop_assert!(g.neighbors.iter().all(|ns| ns.len() == k));
            prop_assert_eq!(message_count(&g), (n * k) as u64);
            let share = 100.0 * (n * k) as f64 / (n * (n - 1)) as f64;
            prop_assert!((overhead_reduction(n, k) + share - 100.0).abs() < 1e-9);
        }
    }
}
