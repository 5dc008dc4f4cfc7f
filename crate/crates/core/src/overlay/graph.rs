use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::NodeId;
use crate::error::{Error, Result};

/// Default in-degree fraction (of `live - 1`) above which a node counts as a hub.
pub const DEFAULT_HUB_FRACTION: f64 = 0.9;

/// Directed graph over live nodes. An edge `u -> v` means `v` is in `u`'s
/// view. Self-loops are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectedGraph {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl DirectedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_nodes(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            adj: nodes.into_iter().map(|n| (n, BTreeSet::new())).collect(),
        }
    }

    pub fn add_node(&mut self, n: NodeId) {
        self.adj.entry(n).or_default();
    }

    /// Removes `n` together with every edge that touches it.
    pub fn remove_node(&mut self, n: NodeId) {
        if self.adj.remove(&n).is_some() {
            for out in self.adj.values_mut() {
                out.remove(&n);
            }
        }
    }

    /// Adds `u -> v`, creating missing endpoints. Self-loops are ignored.
    pub fn add_edge(&mut self, u: NodeId, v: NodeId) {
        if u == v {
            return;
        }
        self.add_node(v);
        self.adj.entry(u).or_default().insert(v);
    }

    pub fn add_undirected_edge(&mut self, u: NodeId, v: NodeId) {
        self.add_edge(u, v);
        self.add_edge(v, u);
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adj.contains_key(&n)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj.get(&u).is_some_and(|s| s.contains(&v))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum()
    }

    pub fn out_neighbors(&self, u: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&u).into_iter().flatten().copied()
    }

    pub fn out_degree(&self, u: NodeId) -> usize {
        self.adj.get(&u).map_or(0, BTreeSet::len)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj.iter().flat_map(|(&u, out)| out.iter().map(move |&v| (u, v)))
    }

    pub fn in_degrees(&self) -> BTreeMap<NodeId, usize> {
        let mut deg: BTreeMap<NodeId, usize> = self.adj.keys().map(|&n| (n, 0)).collect();
        for (_, v) in self.edges() {
            *deg.entry(v).or_default() += 1;
        }
        deg
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(u, v)| self.has_edge(v, u))
    }

    /// Whether the undirected closure is connected.
    pub fn is_connected(&self) -> bool {
        let und = to_undirected(self);
        let Some(start) = und.nodes().next() else {
            return true;
        };
        bfs_distances(&und, start).len() == und.node_count()
    }

    /// `u v` per line, in ascending `(u, v)` order.
    pub fn to_edge_list(&self) -> String {
        self.edges().map(|(u, v)| format!("{u} {v}\n")).collect()
    }

    /// Parses the [`to_edge_list`](Self::to_edge_list) format. Isolated
    /// nodes are not represented in that format, so callers may add them.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = |column| -> Result<NodeId> {
                parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .map(NodeId)
                    .ok_or_else(|| Error::Parse {
                        row: i + 1,
                        column,
                        message: format!("malformed edge line {line:?}"),
                    })
            };
            let (u, v) = (next(1)?, next(2)?);
            g.add_edge(u, v);
        }
        Ok(g)
    }
}

/// Symmetric closure: `(u, v)` is present iff `u -> v` or `v -> u` was.
pub fn to_undirected(graph: &DirectedGraph) -> DirectedGraph {
    let mut out = graph.clone();
    for (u, v) in graph.edges() {
        out.add_edge(v, u);
    }
    out
}

fn bfs_distances(graph: &DirectedGraph, start: NodeId) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::from([(start, 0)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for v in graph.out_neighbors(u) {
            dist.entry(v).or_insert_with(|| {
                queue.push_back(v);
                d + 1
            });
        }
    }
    dist
}

/// Longest shortest path, or the unreachable marker for a disconnected graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diameter {
    Finite(usize),
    Unreachable,
}

impl fmt::Display for Diameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diameter::Finite(d) => write!(f, "{d}"),
            Diameter::Unreachable => f.write_str("inf"),
        }
    }
}

/// Diameter of the undirected closure, via BFS from every node.
pub fn graph_diameter(graph: &DirectedGraph) -> Diameter {
    let index: BTreeMap<NodeId, usize> = graph.nodes().enumerate().map(|(i, n)| (n, i)).collect();
    let n = index.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, v) in graph.edges() {
        let (a, b) = (index[&u], index[&v]);
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::with_capacity(n);
    let mut best = 0;
    for s in 0..n {
        dist.fill(usize::MAX);
        dist[s] = 0;
        queue.push_back(s);
        let mut seen = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    seen += 1;
                    queue.push_back(v);
                }
            }
        }
        if seen < n {
            return Diameter::Unreachable;
        }
    }
    Diameter::Finite(best)
}

/// Nodes whose in-degree is at least `fraction * (live - 1)`, ordered by
/// in-degree descending then id ascending.
pub fn detect_hubs(graph: &DirectedGraph, fraction: f64) -> Vec<NodeId> {
    let live = graph.node_count();
    if live < 2 {
        return Vec::new();
    }
    let threshold = fraction * (live - 1) as f64;
    let mut hubs: Vec<(usize, NodeId)> = graph
        .in_degrees()
        .into_iter()
        .filter(|&(_, d)| d as f64 >= threshold)
        .map(|(n, d)| (d, n))
        .collect();
    hubs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    hubs.into_iter().map(|(_, n)| n).collect()
}

/// Metadata written next to an exported edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub cycle: usize,
    pub nodes: Vec<NodeId>,
    pub hubs: Vec<NodeId>,
    pub diameter: Diameter,
}

impl GraphSnapshot {
    pub fn capture(cycle: usize, graph: &DirectedGraph, hub_fraction: f64) -> Self {
        Self {
            cycle,
            nodes: graph.nodes().collect(),
            hubs: detect_hubs(graph, hub_fraction),
            diameter: graph_diameter(graph),
        }
    }
}
