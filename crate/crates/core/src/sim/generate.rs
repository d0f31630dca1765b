//! Topology builders for tests and quick experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeSpec, NodeSpec, Topology};

pub fn node_id(i: usize) -> String {
    format!("n{i}")
}

fn nodes(n: usize) -> Vec<NodeSpec> {
    (0..n).map(|i| NodeSpec::new(node_id(i))).collect()
}

/// `n0 - n1 - ... - n{n-1}`.
pub fn path(n: usize) -> Topology {
    Topology {
        nodes: nodes(n),
        edges: (1..n).map(|i| EdgeSpec::new(node_id(i - 1), node_id(i))).collect(),
    }
}

pub fn ring(n: usize) -> Topology {
    let mut t = path(n);
    if n > 2 {
        t.edges.push(EdgeSpec::new(node_id(n - 1), node_id(0)));
    }
    t
}

/// Random spanning tree over `n` nodes plus each remaining pair with
/// probability `extra_edge_prob`. Always connected.
pub fn random_connected(n: usize, extra_edge_prob: f64, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut present = std::collections::BTreeSet::new();
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        let child = order[i];
        present.insert((parent.min(child), parent.max(child)));
    }
    for a in 0..n {
        for b in a + 1..n {
            if !present.contains(&(a, b)) && rng.gen_bool(extra_edge_prob) {
                present.insert((a, b));
            }
        }
    }
    Topology {
        nodes: nodes(n),
        edges: present
            .into_iter()
            .map(|(a, b)| EdgeSpec::new(node_id(a), node_id(b)))
            .collect(),
    }
}
