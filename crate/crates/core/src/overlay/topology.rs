//! Static topologies used by the baseline protocols. Every generator returns
//! a symmetric graph over nodes `0..n`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::{DirectedGraph, NodeId};
use crate::error::{Error, Result};
use crate::rng;

const KREGULAR_ATTEMPTS: usize = 200;

fn empty(n: usize) -> DirectedGraph {
    DirectedGraph::with_nodes((0..n as u64).map(NodeId))
}

fn id(i: usize) -> NodeId {
    NodeId(i as u64)
}

/// Node 0 linked to every other node.
pub fn gen_star(n: usize) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::config("a star needs at least 2 nodes"));
    }
    let mut g = empty(n);
    for i in 1..n {
        g.add_undirected_edge(id(0), id(i));
    }
    Ok(g)
}

/// Servers `0..servers` form a clique; every remaining node `i` attaches to
/// server `(i - servers) % servers`.
pub fn gen_multistar(n: usize, servers: usize) -> Result<DirectedGraph> {
    if servers == 0 || n <= servers {
        return Err(Error::config(format!(
            "a multi-star needs 1 <= servers < n (got n={n}, servers={servers})"
        )));
    }
    let mut g = empty(n);
    for a in 0..servers {
        for b in a + 1..servers {
            g.add_undirected_edge(id(a), id(b));
        }
    }
    for i in servers..n {
        g.add_undirected_edge(id(i), id((i - servers) % servers));
    }
    Ok(g)
}

pub fn gen_ring(n: usize) -> Result<DirectedGraph> {
    if n < 3 {
        return Err(Error::config("a ring needs at least 3 nodes"));
    }
    let mut g = empty(n);
    for i in 0..n {
        g.add_undirected_edge(id(i), id((i + 1) % n));
    }
    Ok(g)
}

/// Chord-style fingers: node `i` links to `(i + 2^j) mod n` for every
/// `2^j < n` (`j = 0` is the successor), closed under symmetry.
pub fn gen_chord(n: usize) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::config("a chord ring needs at least 2 nodes"));
    }
    let mut g = empty(n);
    for i in 0..n {
        let mut step = 1;
        while step < n {
            g.add_undirected_edge(id(i), id((i + step) % n));
            step *= 2;
        }
    }
    Ok(g)
}

pub fn gen_complete(n: usize) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::config("a complete graph needs at least 2 nodes"));
    }
    let mut g = empty(n);
    for a in 0..n {
        for b in a + 1..n {
            g.add_undirected_edge(id(a), id(b));
        }
    }
    Ok(g)
}

/// Uniform-ish random `k`-regular graph: repeated random stub pairing that
/// keeps valid pairs and re-pairs the rest, restarting when the leftover
/// stubs admit no valid pair. Disconnected results are regenerated.
pub fn gen_kregular(n: usize, k: usize, seed: u64) -> Result<DirectedGraph> {
    if k == 0 || k >= n || (n * k) % 2 != 0 {
        return Err(Error::config(format!(
            "a {k}-regular graph on {n} nodes needs 0 < k < n and n*k even"
        )));
    }
    for attempt in 0..KREGULAR_ATTEMPTS {
        let mut rng = rng::stream(seed, "kregular", &[attempt as u64]);
        if let Some(edges) = try_pairing(n, k, &mut rng) {
            let mut g = empty(n);
            for (a, b) in edges {
                g.add_undirected_edge(id(a), id(b));
            }
            if g.is_connected() {
                return Ok(g);
            }
        }
    }
    Err(Error::config(format!(
        "failed to build a connected {k}-regular graph on {n} nodes"
    )))
}

fn try_pairing(n: usize, k: usize, rng: &mut rng::SimRng) -> Option<BTreeSet<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, k)).collect();
    while !stubs.is_empty() {
        stubs.shuffle(rng);
        let mut leftover: BTreeMap<usize, usize> = BTreeMap::new();
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && edges.insert((a, b)) {
                continue;
            }
            *leftover.entry(a).or_default() += 1;
            *leftover.entry(b).or_default() += 1;
        }
        let pending: Vec<usize> = leftover.keys().copied().collect();
        let pairable = pending
            .iter()
            .enumerate()
            .any(|(i, &a)| pending[i + 1..].iter().any(|&b| !edges.contains(&(a, b))));
        if !leftover.is_empty() && !pairable {
            return None;
        }
        stubs = leftover
            .into_iter()
            .flat_map(|(v, c)| std::iter::repeat_n(v, c))
            .collect();
    }
    Some(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{graph_diameter, Diameter};

    fn degrees(g: &DirectedGraph) -> Vec<usize> {
        g.nodes().map(|n| g.out_degree(n)).collect()
    }

    #[test]
    fn ring_degrees_and_diameter() {
        let g = gen_ring(6).unwrap();
        assert!(degrees(&g).iter().all(|&d| d == 2));
        assert_eq!(graph_diameter(&g), Diameter::Finite(3));
    }

    #[test]
    fn multistar_layout() {
        let g = gen_multistar(100, 5).unwrap();
        let deg = degrees(&g);
        assert_eq!(deg.iter().filter(|&&d| d == 23).count(), 5);
        assert_eq!(deg.iter().filter(|&&d| d == 1).count(), 95);
        assert!(g.has_edge(NodeId(5), NodeId(0)) && g.has_edge(NodeId(9), NodeId(4)) && g.has_edge(NodeId(10), NodeId(0)));
        assert!(gen_multistar(5, 5).is_err());
    }

    #[test]
    fn kregular_is_regular_and_connected() {
        for seed in 0..5 {
            let g = gen_kregular(100, 20, seed).unwrap();
            assert!(g.is_symmetric());
            assert!(degrees(&g).iter().all(|&d| d == 20));
            assert!(g.is_connected());
        }
        assert_eq!(gen_kregular(100, 20, 3).unwrap(), gen_kregular(100, 20, 3).unwrap());
        assert!(gen_kregular(5, 3, 0).is_err());
        assert!(gen_kregular(5, 5, 0).is_err());
    }

    #[test]
    fn chord_fingers() {
        let g = gen_chord(16).unwrap();
        // i +/- {1, 2, 4, 8}, with +8 and -8 coinciding.
        assert!(degrees(&g).iter().all(|&d| d == 7));
        assert!(g.has_edge(NodeId(0), NodeId(8)) && g.has_edge(NodeId(3), NodeId(15)));
        assert!(g.is_symmetric());
        let g100 = gen_chord(100).unwrap();
        assert!(g100.has_edge(NodeId(99), NodeId(0)));
        assert!(g100.has_edge(NodeId(10), NodeId(74)));
    }

    #[test]
    fn star_and_complete() {
        let s = gen_star(6).unwrap();
        assert_eq!(s.out_degree(NodeId(0)), 5);
        assert_eq!(s.edge_count(), 10);
        let c = gen_complete(5).unwrap();
        assert_eq!(c.edge_count(), 20);
        assert!(gen_star(1).is_err() && gen_ring(2).is_err());
    }
}
