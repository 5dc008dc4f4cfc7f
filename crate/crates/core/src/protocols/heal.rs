//! HEAL: clients train and push to `s` hubs; hubs average their clients,
//! average across hubs and return the global model to their clients.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{ensure_nonempty, live_set, send, train_nodes, CycleStats, Context, Message, MessageKind, Nodes};
use crate::error::Result;
use crate::models::{self, ModelParams};
use crate::overlay::NodeId;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealParams {
    /// Number of hubs the overlay maintains.
    pub h: usize,
    /// Number of hubs each client sends to.
    pub s: usize,
    /// Weight hub aggregates by client count instead of the plain mean.
    pub weighted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HubPhase {
    Collect,
    InterHub,
    Distribute,
}

/// One hub's working state for the current cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct HubRoundState {
    pub collected_models: Vec<ModelParams>,
    /// Senders of `collected_models`, index-aligned.
    pub backwards_list: Vec<NodeId>,
    /// `(source hub, aggregate, client count)`.
    pub hub_aggregates: Vec<(NodeId, ModelParams, usize)>,
    pub phase: HubPhase,
}

impl HubRoundState {
    fn collect(inbox: &[Message]) -> Self {
        let mut st = HubRoundState {
            collected_models: Vec::with_capacity(inbox.len()),
            backwards_list: Vec::with_capacity(inbox.len()),
            hub_aggregates: Vec::new(),
            phase: HubPhase::Collect,
        };
        for m in inbox.iter().filter(|m| m.kind == MessageKind::ClientModel) {
            st.collected_models.push(m.payload.clone());
            st.backwards_list.push(m.from);
        }
        st
    }

    /// Mean of the collected client models; `None` for an empty window.
    pub fn average_model(&self) -> Result<Option<ModelParams>> {
        if self.collected_models.is_empty() {
            return Ok(None);
        }
        models::average_models(&self.collected_models).map(Some)
    }

    /// Mean over all hub aggregates, taken in ascending source order so every
    /// hub holding the same aggregates computes the same bits.
    pub fn global_model(&mut self, weighted: bool) -> Result<Option<ModelParams>> {
        self.phase = HubPhase::Distribute;
        if self.hub_aggregates.is_empty() {
            return Ok(None);
        }
        self.hub_aggregates.sort_by_key(|(src, _, _)| *src);
        let g = if weighted {
            models::weighted_average(self.hub_aggregates.iter().map(|(_, m, k)| (m, *k as f64)))?
        } else {
            models::average_models(self.hub_aggregates.iter().map(|(_, m, _)| m))?
        };
        Ok(Some(g))
    }
}

/// One client's hub choice for the current cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRoundState {
    pub chosen_hubs: Vec<NodeId>,
}

impl ClientRoundState {
    /// `min(s, |view|)` distinct hubs drawn uniformly from `view`.
    pub fn choose(node: NodeId, view: &[NodeId], s: usize, seed: u64, cycle: u64) -> Self {
        let mut r = rng::stream(seed, "choose", &[cycle, node.0]);
        let chosen_hubs = index::sample(&mut r, view.len(), s.min(view.len()))
            .into_iter()
            .map(|i| view[i])
            .collect();
        Self { chosen_hubs }
    }
}

/// One HEAL cycle. Live nodes among `ctx.hubs` act as hubs and do not train.
/// Messages addressed to a node that is not currently a hub are lost.
pub fn heal_round(nodes: &mut Nodes, ctx: &Context, p: &HealParams) -> Result<CycleStats> {
    ensure_nonempty(nodes)?;
    let live = live_set(nodes);
    let hubs: BTreeSet<NodeId> = ctx.hubs.iter().copied().filter(|h| live.contains(h)).collect();
    let clients: Vec<NodeId> = live.iter().copied().filter(|n| !hubs.contains(n)).collect();
    train_nodes(nodes, &clients, ctx)?;
    let mut stats = CycleStats::default();

    let mut outbox = Vec::new();
    for &c in &clients {
        let choice = ClientRoundState::choose(c, ctx.view(c), p.s, ctx.seed, ctx.cycle);
        for hub in choice.chosen_hubs {
            send(&mut outbox, MessageKind::ClientModel, c, hub, &nodes[&c].model, 1, ctx.cycle);
        }
    }
    let d = super::deliver_messages(outbox, |m| hubs.contains(&m.to));
    stats.absorb(&d);
    let mut rounds: BTreeMap<NodeId, HubRoundState> = hubs
        .iter()
        .map(|&h| (h, HubRoundState::collect(d.inboxes.get(&h).map_or(&[], Vec::as_slice))))
        .collect();

    let mut outbox = Vec::new();
    for (&hub, st) in rounds.iter_mut() {
        st.phase = HubPhase::InterHub;
        let Some(avg) = st.average_model()? else { continue };
        let k = st.collected_models.len();
        let peers = ctx.view(hub).iter().copied().filter(|&v| v != hub).take(p.h.saturating_sub(1));
        for peer in peers {
            send(&mut outbox, MessageKind::HubAggregate, hub, peer, &avg, k, ctx.cycle);
        }
        st.hub_aggregates.push((hub, avg, k));
    }
    let d = super::deliver_messages(outbox, |m| hubs.contains(&m.to));
    stats.absorb(&d);

    let mut outbox = Vec::new();
    for (&hub, st) in rounds.iter_mut() {
        for m in d.inboxes.get(&hub).into_iter().flatten() {
            st.hub_aggregates.push((m.from, m.payload.clone(), m.weight));
        }
        let Some(global) = st.global_model(p.weighted)? else { continue };
        for &c in &st.backwards_list {
            send(&mut outbox, MessageKind::GlobalModel, hub, c, &global, 1, ctx.cycle);
        }
        nodes.get_mut(&hub).expect("hub is live").model = global;
    }
    let d = super::deliver_messages(outbox, |m| live.contains(&m.to));
    stats.absorb(&d);

    for (n, inbox) in &d.inboxes {
        let model = models::average_models(inbox.iter().map(|m| &m.payload))?;
        nodes.get_mut(n).expect("recipient is live").model = model;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::overlay::{gen_complete, DirectedGraph};
    use crate::protocols::testutil::{constant, fixture};

    fn params(h: usize, s: usize, weighted: bool) -> HealParams {
        HealParams { h, s, weighted }
    }

    #[test]
    fn single_hub_single_client() {
        let mut f = fixture(2, 1);
        let hubs = [NodeId(0)];
        f.hub_views.insert(NodeId(1), vec![NodeId(0)]);
        let g = gen_complete(2).unwrap();
        let mut nodes = f.nodes.clone();
        let stats = heal_round(&mut nodes, &f.ctx(0, &g, &hubs), &params(1, 1, false)).unwrap();
        assert_eq!(nodes[&NodeId(1)].model, nodes[&NodeId(0)].model);
        assert_ne!(nodes[&NodeId(1)].model, f.nodes[&NodeId(1)].model);
        assert_eq!(stats, CycleStats { sent: 2, dropped: 0 });
    }

    /// Hub A (0) collects [0] and [2], hub B (1) collects [4].
    fn two_hub_setup(weighted: bool) -> Nodes {
        let mut f = fixture(5, 2);
        f.hyper.learning_rate = 0.0;
        f.hyper.weight_decay = 0.0;
        let spec = ModelSpec::binary(4);
        for (id, v) in [(2, 0.0), (3, 2.0), (4, 4.0)] {
            f.nodes.get_mut(&NodeId(id)).unwrap().model = constant(spec, v);
        }
        let (a, b) = (NodeId(0), NodeId(1));
        f.hub_views = BTreeMap::from([
            (a, vec![b]),
            (b, vec![a]),
            (NodeId(2), vec![a]),
            (NodeId(3), vec![a]),
            (NodeId(4), vec![b]),
        ]);
        let hubs = [a, b];
        let g = DirectedGraph::new();
        let mut nodes = f.nodes.clone();
        heal_round(&mut nodes, &f.ctx(0, &g, &hubs), &params(2, 1, weighted)).unwrap();
        nodes
    }

    #[test]
    fn unweighted_average_of_averages() {
        let nodes = two_hub_setup(false);
        let spec = ModelSpec::binary(4);
        for id in 0..5 {
            assert_eq!(nodes[&NodeId(id)].model, constant(spec, 2.5), "node {id}");
        }
    }

    #[test]
    fn weighted_variant_recovers_global_mean() {
        let nodes = two_hub_setup(true);
        assert_eq!(nodes[&NodeId(0)].model, constant(ModelSpec::binary(4), 2.0));
    }

    #[test]
    fn identical_inputs_give_identical_globals() {
        let mut f = fixture(4, 3);
        f.hyper.learning_rate = 0.0;
        let m = constant(ModelSpec::binary(4), 0.3);
        for node in f.nodes.values_mut() {
            node.model = m.clone();
        }
        let (a, b) = (NodeId(0), NodeId(1));
        f.hub_views = BTreeMap::from([(a, vec![b]), (b, vec![a]), (NodeId(2), vec![a, b]), (NodeId(3), vec![a, b])]);
        let g = DirectedGraph::new();
        let mut nodes = f.nodes.clone();
        heal_round(&mut nodes, &f.ctx(0, &g, &[a, b]), &params(2, 2, false)).unwrap();
        assert!(nodes.values().all(|n| n.model == m));
    }

    #[test]
    fn client_models_reach_exactly_one_hub_each() {
        let mut f = fixture(20, 4);
        let hubs = [NodeId(0), NodeId(1), NodeId(2)];
        for i in 0..20 {
            let view: Vec<NodeId> = hubs.iter().copied().filter(|&h| h != NodeId(i)).collect();
            f.hub_views.insert(NodeId(i), view);
        }
        let g = DirectedGraph::new();
        let mut nodes = f.nodes.clone();
        let stats = heal_round(&mut nodes, &f.ctx(3, &g, &hubs), &params(3, 1, false)).unwrap();
        // 17 client models, 3*2 hub aggregates, 17 globals.
        assert_eq!(stats, CycleStats { sent: 17 + 6 + 17, dropped: 0 });
        let g0 = &nodes[&NodeId(0)].model;
        assert!(hubs.iter().all(|h| &nodes[h].model == g0));
    }

    #[test]
    fn stale_hub_and_empty_view() {
        let mut f = fixture(4, 5);
        // Node 3 still points at node 2, which is not a hub any more.
        f.hub_views = BTreeMap::from([(NodeId(1), vec![NodeId(0)]), (NodeId(3), vec![NodeId(2)])]);
        let g = DirectedGraph::new();
        let mut nodes = f.nodes.clone();
        let stats = heal_round(&mut nodes, &f.ctx(0, &g, &[NodeId(0)]), &params(1, 1, false)).unwrap();
        assert_eq!(stats.dropped, 1);
        assert_eq!(nodes[&NodeId(1)].model, nodes[&NodeId(0)].model);
        // Node 2 had no view and trained alone; node 3 kept its trained model.
        assert_ne!(nodes[&NodeId(2)].model, nodes[&NodeId(0)].model);
        assert_ne!(nodes[&NodeId(3)].model, f.nodes[&NodeId(3)].model);
    }

    #[test]
    fn client_choice_is_distinct_and_bounded() {
        let view: Vec<NodeId> = (0..7).map(NodeId).collect();
        for cycle in 0..50 {
            let c = ClientRoundState::choose(NodeId(99), &view, 3, 1, cycle);
            let set: BTreeSet<_> = c.chosen_hubs.iter().collect();
            assert_eq!(set.len(), 3);
        }
        assert_eq!(ClientRoundState::choose(NodeId(1), &view[..2], 5, 1, 0).chosen_hubs.len(), 2);
    }
}
