use super::{ensure_nonempty, send, train_nodes, CycleStats, Context, MessageKind, Nodes};
use crate::error::Result;
use crate::models;
use crate::overlay::NodeId;

/// One federated round: every live client trains and uploads, the server
/// averages in client id order and broadcasts the result back. Once the
/// server is gone the protocol does nothing at all.
pub fn fedavg_round(nodes: &mut Nodes, ctx: &Context, server: NodeId) -> Result<CycleStats> {
    ensure_nonempty(nodes)?;
    if !nodes.contains_key(&server) {
        return Ok(CycleStats::default());
    }
    let clients: Vec<NodeId> = nodes.keys().copied().filter(|&n| n != server).collect();
    train_nodes(nodes, &clients, ctx)?;
    let mut stats = CycleStats::default();
    if clients.is_empty() {
        return Ok(stats);
    }

    let mut outbox = Vec::new();
    for &c in &clients {
        send(&mut outbox, MessageKind::ClientModel, c, server, &nodes[&c].model, 1, ctx.cycle);
    }
    let d = super::deliver_messages(outbox, |m| m.to == server);
    stats.absorb(&d);
    let global = models::average_models(d.inboxes[&server].iter().map(|m| &m.payload))?;

    let mut outbox = Vec::new();
    for &c in &clients {
        send(&mut outbox, MessageKind::GlobalModel, server, c, &global, 1, ctx.cycle);
    }
    let d = super::deliver_messages(outbox, |_| true);
    stats.absorb(&d);
    for (n, inbox) in d.inboxes {
        nodes.get_mut(&n).expect("client is live").model = inbox[0].payload.clone();
    }
    nodes.get_mut(&server).expect("server is live").model = global;
    Ok(stats)
}
