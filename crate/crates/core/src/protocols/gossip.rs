//! Peer-to-peer baselines: every node trains, then pushes its model to one
//! random neighbour (gossip) or to all neighbours (epidemic).

use rand::Rng;

use super::{ensure_nonempty, send, train_nodes, CycleStats, Context, MessageKind, Nodes};
use crate::error::Result;
use crate::models;
use crate::overlay::NodeId;
use crate::rng;

fn train_all(nodes: &mut Nodes, ctx: &Context) -> Result<Vec<NodeId>> {
    ensure_nonempty(nodes)?;
    let ids: Vec<NodeId> = nodes.keys().copied().collect();
    train_nodes(nodes, &ids, ctx)?;
    Ok(ids)
}

fn live_neighbors(n: NodeId, nodes: &Nodes, ctx: &Context) -> Vec<NodeId> {
    ctx.graph.out_neighbors(n).filter(|v| nodes.contains_key(v)).collect()
}

/// Each node pushes to one uniformly chosen live neighbour; a receiver folds
/// each incoming model into its own by a pairwise mean, in inbox order.
pub fn gossip_step(nodes: &mut Nodes, ctx: &Context) -> Result<CycleStats> {
    let ids = train_all(nodes, ctx)?;
    let mut outbox = Vec::new();
    for &n in &ids {
        let peers = live_neighbors(n, nodes, ctx);
        if peers.is_empty() {
            continue;
        }
        let mut r = rng::stream(ctx.seed, "gossip", &[ctx.cycle, n.0]);
        let to = peers[r.random_range(0..peers.len())];
        send(&mut outbox, MessageKind::GossipPush, n, to, &nodes[&n].model, 1, ctx.cycle);
    }
    let d = super::deliver_messages(outbox, |m| nodes.contains_key(&m.to));
    let mut stats = CycleStats::default();
    stats.absorb(&d);
    for (n, inbox) in d.inboxes {
        let node = nodes.get_mut(&n).expect("recipient is live");
        for m in inbox {
            node.model = models::average_models([&node.model, &m.payload])?;
        }
    }
    Ok(stats)
}

/// Each node pushes to every live neighbour and then replaces its model by
/// the mean of its own and everything it received.
pub fn epidemic_step(nodes: &mut Nodes, ctx: &Context) -> Result<CycleStats> {
    let ids = train_all(nodes, ctx)?;
    let mut outbox = Vec::new();
    for &n in &ids {
        for to in live_neighbors(n, nodes, ctx) {
            send(&mut outbox, MessageKind::GossipPush, n, to, &nodes[&n].model, 1, ctx.cycle);
        }
    }
    let d = super::deliver_messages(outbox, |m| nodes.contains_key(&m.to));
    let mut stats = CycleStats::default();
    stats.absorb(&d);
    let merged = {
        let view: &Nodes = nodes;
        let inboxes: Vec<_> = d.inboxes.iter().collect();
        ctx.exec.map(&inboxes, |(n, inbox)| {
            let own = &view[*n].model;
            models::average_models(std::iter::once(own).chain(inbox.iter().map(|m| &m.payload)))
        })
    };
    for ((n, _), model) in d.inboxes.iter().zip(merged) {
        nodes.get_mut(n).expect("recipient is live").model = model?;
    }
    Ok(stats)
}
