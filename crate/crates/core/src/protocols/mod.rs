//! Learning protocols as per-cycle state machines over a set of live nodes.
//!
//! A cycle is split into phases. Messages emitted in one phase are delivered
//! between phases, so no message is consumed in the phase that produced it.
//! Every protocol finishes its exchange within the cycle; metrics sampled
//! after [`ProtocolState::step`] see the post-aggregation models.

mod fedavg;
mod gaia;
mod gossip;
mod heal;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datasets::DataShard;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{self, Hyperparams, ModelParams};
use crate::overlay::{DirectedGraph, NodeId};
use crate::rng;

pub use fedavg::fedavg_round;
pub use gaia::{gaia_round, GaiaLayout};
pub use gossip::{epidemic_step, gossip_step};
pub use heal::{heal_round, ClientRoundState, HealParams, HubRoundState, HubPhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Heal,
    Fedavg,
    Gaia,
    Gossip,
    Epidemic,
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProtocolKind::Heal => "heal",
            ProtocolKind::Fedavg => "fedavg",
            ProtocolKind::Gaia => "gaia",
            ProtocolKind::Gossip => "gossip",
            ProtocolKind::Epidemic => "epidemic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ClientModel,
    HubAggregate,
    GlobalModel,
    GossipPush,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: ModelParams,
    /// Number of client models folded into the payload.
    pub weight: usize,
    pub cycle_sent: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Hub,
    Client,
}

/// `Hub` iff `node` is among the detected hubs of the current graph.
pub fn role_assignment(node: NodeId, hubs: &[NodeId]) -> Role {
    if hubs.contains(&node) {
        Role::Hub
    } else {
        Role::Client
    }
}

/// Message counters for one cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleStats {
    pub sent: u64,
    pub dropped: u64,
}

impl CycleStats {
    fn absorb(&mut self, d: &Delivery) {
        self.sent += d.sent;
        self.dropped += d.dropped;
    }
}

/// Result of one delivery round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Delivery {
    pub inboxes: BTreeMap<NodeId, Vec<Message>>,
    pub sent: u64,
    pub dropped: u64,
}

/// Routes `outbox` to recipients accepted by `accept`; everything else is
/// dropped and counted. Each inbox is ordered by sender id, then emission
/// index.
pub fn deliver_messages(outbox: Vec<Message>, accept: impl Fn(&Message) -> bool) -> Delivery {
    let mut out = Delivery {
        sent: outbox.len() as u64,
        ..Default::default()
    };
    for m in outbox {
        if accept(&m) {
            out.inboxes.entry(m.to).or_default().push(m);
        } else {
            out.dropped += 1;
        }
    }
    for inbox in out.inboxes.values_mut() {
        inbox.sort_by_key(|m| m.from);
    }
    out
}

/// A live participant: its current model and local data.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningNode {
    pub model: ModelParams,
    pub shard: DataShard,
}

pub type Nodes = BTreeMap<NodeId, LearningNode>;

/// Everything a protocol may read during one cycle.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub cycle: u64,
    /// Per-repetition seed.
    pub seed: u64,
    pub hyper: &'a Hyperparams,
    pub exec: &'a Exec,
    /// Current topology over live nodes.
    pub graph: &'a DirectedGraph,
    /// Hubs detected on `graph`.
    pub hubs: &'a [NodeId],
    /// Each node's own view of the hubs (its overlay's hub list).
    pub hub_views: &'a BTreeMap<NodeId, Vec<NodeId>>,
}

impl Context<'_> {
    fn view(&self, n: NodeId) -> &[NodeId] {
        self.hub_views.get(&n).map_or(&[], Vec::as_slice)
    }
}

/// Trains every listed node for one local epoch, in parallel when the
/// context's executor allows, and stores the results. The random stream of
/// node `n` depends only on `(seed, cycle, n)`.
pub fn train_nodes(nodes: &mut Nodes, ids: &[NodeId], ctx: &Context) -> Result<()> {
    let trained = {
        let view: &Nodes = nodes;
        ctx.exec.map(ids, |&n| {
            let node = &view[&n];
            let mut r = rng::stream(ctx.seed, "train", &[ctx.cycle, n.0]);
            models::train_step(&node.model, &node.shard, ctx.hyper, &mut r)
        })
    };
    for (&n, model) in ids.iter().zip(trained) {
        nodes.get_mut(&n).expect("trained node is live").model = model?;
    }
    Ok(())
}

fn send(outbox: &mut Vec<Message>, kind: MessageKind, from: NodeId, to: NodeId, payload: &ModelParams, weight: usize, cycle: u64) {
    outbox.push(Message {
        kind,
        from,
        to,
        payload: payload.clone(),
        weight,
        cycle_sent: cycle,
    });
}

/// Protocol-specific state carried across cycles.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolState {
    Heal(HealParams),
    Fedavg { server: NodeId },
    Gaia(GaiaLayout),
    Gossip,
    Epidemic,
}

impl ProtocolState {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            ProtocolState::Heal(_) => ProtocolKind::Heal,
            ProtocolState::Fedavg { .. } => ProtocolKind::Fedavg,
            ProtocolState::Gaia(_) => ProtocolKind::Gaia,
            ProtocolState::Gossip => ProtocolKind::Gossip,
            ProtocolState::Epidemic => ProtocolKind::Epidemic,
        }
    }

    /// Runs one full protocol cycle over the live `nodes`.
    pub fn step(&mut self, nodes: &mut Nodes, ctx: &Context) -> Result<CycleStats> {
        match self {
            ProtocolState::Heal(p) => heal_round(nodes, ctx, p),
            ProtocolState::Fedavg { server } => fedavg_round(nodes, ctx, *server),
            ProtocolState::Gaia(layout) => gaia_round(nodes, ctx, layout),
            ProtocolState::Gossip => gossip_step(nodes, ctx),
            ProtocolState::Epidemic => epidemic_step(nodes, ctx),
        }
    }

    /// Registers a node that joined mid-run (churn).
    pub fn on_join(&mut self, node: NodeId, graph: &DirectedGraph) {
        if let ProtocolState::Gaia(layout) = self {
            layout.attach(node, graph);
        }
    }
}

fn live_set(nodes: &Nodes) -> BTreeSet<NodeId> {
    nodes.keys().copied().collect()
}

fn ensure_nonempty(nodes: &Nodes) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::precondition("no live nodes"));
    }
    Ok(())
}
