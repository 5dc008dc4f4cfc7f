//! Gaia: statically assigned aggregation servers that average their
//! workers, then average among themselves.

use std::collections::{BTreeMap, BTreeSet};

use super::{ensure_nonempty, live_set, send, train_nodes, CycleStats, Context, MessageKind, Nodes};
use crate::error::{Error, Result};
use crate::models;
use crate::overlay::{DirectedGraph, NodeId};

/// Server set and worker-to-server map, fixed at start-up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaiaLayout {
    servers: Vec<NodeId>,
    assignment: BTreeMap<NodeId, NodeId>,
}

impl GaiaLayout {
    /// Each non-server node is assigned to its lowest-id server neighbour.
    pub fn from_graph(graph: &DirectedGraph, servers: &[NodeId]) -> Result<Self> {
        if servers.is_empty() {
            return Err(Error::config("gaia needs at least one server"));
        }
        let mut layout = Self {
            servers: servers.to_vec(),
            assignment: BTreeMap::new(),
        };
        for n in graph.nodes() {
            if !layout.servers.contains(&n) {
                layout.attach(n, graph);
                if !layout.assignment.contains_key(&n) {
                    return Err(Error::config(format!("worker {n} is not attached to any server")));
                }
            }
        }
        Ok(layout)
    }

    pub fn servers(&self) -> &[NodeId] {
        &self.servers
    }

    pub fn server_of(&self, worker: NodeId) -> Option<NodeId> {
        self.assignment.get(&worker).copied()
    }

    /// Assigns a (possibly new) worker to its lowest-id server neighbour.
    /// Workers without one stay unassigned and train alone.
    pub fn attach(&mut self, worker: NodeId, graph: &DirectedGraph) {
        if let Some(s) = graph.out_neighbors(worker).find(|v| self.servers.contains(v)) {
            self.assignment.insert(worker, s);
        }
    }
}

/// One Gaia round. Workers of a crashed server keep training; their uploads
/// are lost.
pub fn gaia_round(nodes: &mut Nodes, ctx: &Context, layout: &GaiaLayout) -> Result<CycleStats> {
    ensure_nonempty(nodes)?;
    let live = live_set(nodes);
    let servers: BTreeSet<NodeId> = layout.servers.iter().copied().filter(|s| live.contains(s)).collect();
    let workers: Vec<NodeId> = live.iter().copied().filter(|n| !layout.servers.contains(n)).collect();
    train_nodes(nodes, &workers, ctx)?;
    let mut stats = CycleStats::default();

    let mut outbox = Vec::new();
    for &w in &workers {
        if let Some(s) = layout.server_of(w) {
            send(&mut outbox, MessageKind::ClientModel, w, s, &nodes[&w].model, 1, ctx.cycle);
        }
    }
    let d = super::deliver_messages(outbox, |m| servers.contains(&m.to));
    stats.absorb(&d);
    let uploads = d.inboxes;

    let mut aggregates = BTreeMap::new();
    let mut outbox = Vec::new();
    for &s in &servers {
        let Some(inbox) = uploads.get(&s) else { continue };
        let avg = models::average_models(inbox.iter().map(|m| &m.payload))?;
        for &peer in layout.servers.iter().filter(|&&p| p != s) {
            send(&mut outbox, MessageKind::HubAggregate, s, peer, &avg, inbox.len(), ctx.cycle);
        }
        aggregates.insert(s, avg);
    }
    let d = super::deliver_messages(outbox, |m| servers.contains(&m.to));
    stats.absorb(&d);

    let mut outbox = Vec::new();
    for &s in &servers {
        let mut pool: Vec<(NodeId, &models::ModelParams)> = d
            .inboxes
            .get(&s)
            .into_iter()
            .flatten()
            .map(|m| (m.from, &m.payload))
            .collect();
        if let Some(own) = aggregates.get(&s) {
            pool.push((s, own));
        }
        if pool.is_empty() {
            continue;
        }
        pool.sort_by_key(|(src, _)| *src);
        let global = models::average_models(pool.into_iter().map(|(_, m)| m))?;
        for m in uploads.get(&s).into_iter().flatten() {
            send(&mut outbox, MessageKind::GlobalModel, s, m.from, &global, 1, ctx.cycle);
        }
        nodes.get_mut(&s).expect("server is live").model = global;
    }
    let d = super::deliver_messages(outbox, |m| live.contains(&m.to));
    stats.absorb(&d);
    for (n, inbox) in d.inboxes {
        nodes.get_mut(&n).expect("worker is live").model = inbox[0].payload.clone();
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{gen_multistar, gen_star};
    use crate::protocols::fedavg_round;
    use crate::protocols::testutil::fixture;

    #[test]
    fn layout_of_five_servers() {
        let g = gen_multistar(100, 5).unwrap();
        let servers: Vec<NodeId> = (0..5).map(NodeId).collect();
        let layout = GaiaLayout::from_graph(&g, &servers).unwrap();
        for s in &servers {
            let workers = (5..100).filter(|&w| layout.server_of(NodeId(w)) == Some(*s)).count();
            assert_eq!(workers, 19);
        }
    }

    #[test]
    fn single_server_equals_fedavg() {
        let f = fixture(8, 1);
        let g = gen_star(8).unwrap();
        let layout = GaiaLayout::from_graph(&g, &[NodeId(0)]).unwrap();
        let mut a = f.nodes.clone();
        let mut b = f.nodes.clone();
        for cycle in 0..5 {
            gaia_round(&mut a, &f.ctx(cycle, &g, &[]), &layout).unwrap();
            fedavg_round(&mut b, &f.ctx(cycle, &g, &[]), NodeId(0)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn orphaned_workers_leave_the_global_trajectory() {
        let f = fixture(20, 2);
        let g = gen_multistar(20, 2).unwrap();
        let layout = GaiaLayout::from_graph(&g, &[NodeId(0), NodeId(1)]).unwrap();
        let orphans: Vec<NodeId> = (2..20).map(NodeId).filter(|&w| layout.server_of(w) == Some(NodeId(1))).collect();

        // Perturbing the orphans' models must not move server 0's global.
        let run = |shift: f64| {
            let mut nodes = f.nodes.clone();
            nodes.remove(&NodeId(1));
            for o in &orphans {
                nodes.get_mut(o).unwrap().model.values.iter_mut().for_each(|v| *v += shift);
            }
            for cycle in 0..4 {
                gaia_round(&mut nodes, &f.ctx(cycle, &g, &[]), &layout).unwrap();
            }
            nodes[&NodeId(0)].model.clone()
        };
        assert_eq!(run(0.0), run(0.5));
    }
}
