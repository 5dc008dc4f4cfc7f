//! Elevator: a peer-sampling protocol whose caches converge to `h` hubs that
//! every node points at, plus `c - h` random links.
//!
//! Each cycle, every live node
//! 1. gathers the caches of its cache entries (two-hop neighbourhood),
//! 2. counts occurrences into a frequency map,
//! 3. contacts the `c` most frequent peers (its preferred peers); each one
//!    answers with its backward list and records the caller in it,
//! 4. rebuilds its cache from the `h` most frequent reachable peers plus
//!    random picks from the union of the received backward lists.
//!
//! Nodes are processed in ascending id order, either in place (each node
//! sees the updates of lower ids) or against a start-of-cycle snapshot.
//! Both schedules are deterministic for a given seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{DirectedGraph, NodeId};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{self, SimRng};

/// How the per-node steps of one cycle see each other's updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Nodes run one after another in ascending id order; each sees the
    /// caches and backward lists already rewritten by lower ids.
    #[default]
    InPlace,
    /// Every node plans against the start-of-cycle state; plans are then
    /// committed in ascending id order. Planning may run in parallel.
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElevatorParams {
    /// Number of hubs to elect.
    pub h: usize,
    /// Cache capacity.
    pub c: usize,
    pub schedule: Schedule,
}

impl ElevatorParams {
    pub fn new(h: usize, c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::config("cache size c must be positive"));
        }
        if h > c {
            return Err(Error::config(format!("hub count h={h} exceeds cache size c={c}")));
        }
        Ok(Self {
            h,
            c,
            schedule: Schedule::default(),
        })
    }

    pub fn with_schedule(self, schedule: Schedule) -> Self {
        Self { schedule, ..self }
    }
}

/// One node's overlay state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlayState {
    pub cache: Vec<NodeId>,
    /// Live peers that picked this node as preferred at least once.
    pub backward: BTreeSet<NodeId>,
    /// This node's view of the hubs: the `h` most frequent peers that
    /// answered during the last cycle.
    pub hubs: Vec<NodeId>,
}

/// Peer occurrence counts ordered by count descending, then id ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyMap {
    entries: Vec<(NodeId, usize)>,
}

impl FrequencyMap {
    pub fn entries(&self) -> &[(NodeId, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|&(n, _)| n)
    }

    /// Keeps only entries accepted by `keep`, preserving order.
    pub fn retain(&mut self, mut keep: impl FnMut(NodeId) -> bool) {
        self.entries.retain(|&(n, _)| keep(n));
    }
}

/// Caches of `node`'s cache entries. Crashed entries (absent from `states`)
/// contribute nothing.
pub fn collect_two_hop(node: NodeId, states: &BTreeMap<NodeId, OverlayState>) -> Vec<Vec<NodeId>> {
    let Some(own) = states.get(&node) else {
        return Vec::new();
    };
    own.cache
        .iter()
        .filter_map(|v| states.get(v))
        .map(|s| s.cache.clone())
        .collect()
}

pub fn build_frequency_map(neighbor_lists: &[Vec<NodeId>], self_id: NodeId) -> FrequencyMap {
    let mut ids: Vec<NodeId> = neighbor_lists.iter().flatten().copied().filter(|&id| id != self_id).collect();
    ids.sort_unstable();
    let mut entries: Vec<(NodeId, usize)> = Vec::new();
    for id in ids {
        match entries.last_mut() {
            Some((last, k)) if *last == id => *k += 1,
            _ => entries.push((id, 1)),
        }
    }
    entries.sort_by(|a, b| b.1.cmp(&a.1));
    FrequencyMap { entries }
}

/// The first `min(c, |freq|)` ids of the frequency map.
pub fn select_preferred(freq: &FrequencyMap, c: usize) -> Vec<NodeId> {
    freq.ids().take(c).collect()
}

/// Replies gathered from the preferred peers of one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exchange {
    /// `(peer, its backward list)` for every preferred peer that answered.
    pub replies: Vec<(NodeId, Vec<NodeId>)>,
}

impl Exchange {
    pub fn reached(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.replies.iter().map(|(p, _)| *p)
    }

    /// All received ids, with multiplicity.
    pub fn backward_union(&self) -> Vec<NodeId> {
        self.replies.iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    /// Distinct received ids in ascending order.
    pub fn backward_pool(&self) -> Vec<NodeId> {
        let mut pool: Vec<NodeId> = Vec::new();
        for (_, list) in &self.replies {
            pool = merge_sorted(&pool, list.iter().copied());
        }
        pool
    }

    /// Records `node` in the backward list of every peer that answered.
    pub fn commit(&self, node: NodeId, states: &mut BTreeMap<NodeId, OverlayState>) {
        for p in self.reached() {
            if let Some(state) = states.get_mut(&p) {
                state.backward.insert(node);
            }
        }
    }
}

fn merge_sorted(a: &[NodeId], b: impl IntoIterator<Item = NodeId>) -> Vec<NodeId> {
    let mut out = Vec::with_capacity(a.len());
    let mut rest = a.iter().copied().peekable();
    for x in b {
        while let Some(&y) = rest.peek() {
            if y > x {
                break;
            }
            if y < x {
                out.push(y);
            }
            rest.next();
        }
        out.push(x);
    }
    out.extend(rest);
    out
}

/// Contacts each preferred peer. Live peers answer with a copy of their
/// backward list (sorted, holding only live ids); crashed peers time out
/// silently.
/// The caller's insertion into the peers' lists happens in
/// [`Exchange::commit`].
pub fn exchange_with_preferred(preferred: &[NodeId], states: &BTreeMap<NodeId, OverlayState>) -> Exchange {
    let replies = preferred
        .iter()
        .filter_map(|p| {
            states
                .get(p)
                .map(|s| (*p, s.backward.iter().copied().collect()))
        })
        .collect();
    Exchange { replies }
}

/// New cache: the first `h` ids of `freq`, then ids drawn uniformly without
/// replacement from the distinct members of `backward_union` (excluding
/// `self_id` and ids already chosen) until the cache holds `c` entries or
/// the pool runs dry.
pub fn refill_cache(
    freq: &FrequencyMap,
    backward_union: &[NodeId],
    self_id: NodeId,
    h: usize,
    c: usize,
    rng: &mut SimRng,
) -> Vec<NodeId> {
    let mut cache: Vec<NodeId> = freq.ids().filter(|&n| n != self_id).take(h.min(c)).collect();
    let mut pool = backward_union.to_vec();
    pool.sort_unstable();
    pool.dedup();
    pool.retain(|n| *n != self_id && !cache.contains(n));
    let want = c.saturating_sub(cache.len()).min(pool.len());
    cache.extend(index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]));
    cache
}

struct Plan {
    node: NodeId,
    cache: Vec<NodeId>,
    hubs: Vec<NodeId>,
    reached: Vec<NodeId>,
}

/// The Elevator overlay over the set of live nodes.
#[derive(Debug, Clone)]
pub struct Elevator {
    params: ElevatorParams,
    states: BTreeMap<NodeId, OverlayState>,
}

impl Elevator {
    /// Bootstraps caches from a graph's out-neighbours (e.g. a random
    /// regular graph). Caches longer than `c` are truncated.
    pub fn from_graph(graph: &DirectedGraph, params: ElevatorParams) -> Self {
        let states = graph
            .nodes()
            .map(|n| {
                let cache = graph.out_neighbors(n).take(params.c).collect();
                (n, OverlayState { cache, ..Default::default() })
            })
            .collect();
        Self { params, states }
    }

    pub fn params(&self) -> ElevatorParams {
        self.params
    }

    pub fn states(&self) -> &BTreeMap<NodeId, OverlayState> {
        &self.states
    }

    pub fn state(&self, n: NodeId) -> Option<&OverlayState> {
        self.states.get(&n)
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.states.contains_key(&n)
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.states.keys().copied()
    }

    /// The node's current hub view (empty before its first cycle).
    pub fn hubs_of(&self, n: NodeId) -> &[NodeId] {
        self.states.get(&n).map_or(&[], |s| &s.hubs)
    }

    /// Crash-stop removal. Cache references held by other nodes go stale
    /// and are dropped at their owners' next cycle; backward lists are
    /// purged immediately.
    pub fn remove_node(&mut self, n: NodeId) {
        if self.states.remove(&n).is_some() {
            for s in self.states.values_mut() {
                s.backward.remove(&n);
            }
        }
    }

    /// Joins a fresh node whose cache is seeded with `peers`.
    pub fn add_node(&mut self, n: NodeId, peers: impl IntoIterator<Item = NodeId>) {
        let cache: Vec<NodeId> = peers
            .into_iter()
            .filter(|&p| p != n)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .take(self.params.c)
            .collect();
        self.states.insert(n, OverlayState { cache, ..Default::default() });
    }

    /// Current topology: `u -> v` for every live `v` in `u`'s cache.
    pub fn graph(&self) -> DirectedGraph {
        let mut g = DirectedGraph::with_nodes(self.states.keys().copied());
        for (&u, s) in &self.states {
            for &v in &s.cache {
                if self.states.contains_key(&v) {
                    g.add_edge(u, v);
                }
            }
        }
        g
    }

    fn plan(&self, node: NodeId, seed: u64, cycle: u64) -> Plan {
        let lists = collect_two_hop(node, &self.states);
        let mut freq = build_frequency_map(&lists, node);
        let preferred = select_preferred(&freq, self.params.c);
        let mut reached = Vec::with_capacity(preferred.len());
        let mut pool: Vec<NodeId> = Vec::new();
        for p in preferred {
            if let Some(s) = self.states.get(&p) {
                reached.push(p);
                pool = merge_sorted(&pool, s.backward.iter().copied());
            }
        }
        // Top slots and hub view come from peers that answered; entries past
        // the contacted prefix were never checked and may be crashed.
        let answered: BTreeSet<NodeId> = reached.iter().copied().collect();
        freq.retain(|n| answered.contains(&n));
        let mut rng = rng::stream(seed, "elevator", &[cycle, node.0]);
        let cache = refill_cache(&freq, &pool, node, self.params.h, self.params.c, &mut rng);
        let hubs = freq.ids().take(self.params.h).collect();
        Plan {
            node,
            cache,
            hubs,
            reached,
        }
    }

    fn apply(&mut self, plan: Plan) {
        for p in &plan.reached {
            if let Some(s) = self.states.get_mut(p) {
                s.backward.insert(plan.node);
            }
        }
        let state = self.states.get_mut(&plan.node).expect("planned nodes are live");
        state.cache = plan.cache;
        state.hubs = plan.hubs;
    }

    /// Runs one cycle for every live node, in ascending id order.
    pub fn cycle(&mut self, seed: u64, cycle: u64, exec: &Exec) {
        let ids: Vec<NodeId> = self.states.keys().copied().collect();
        match self.params.schedule {
            Schedule::InPlace => {
                for n in ids {
                    let plan = self.plan(n, seed, cycle);
                    self.apply(plan);
                }
            }
            Schedule::Snapshot => {
                let plans = exec.map(&ids, |&n| self.plan(n, seed, cycle));
                for plan in plans {
                    self.apply(plan);
                }
            }
        }
    }
}
