//! Mutable simulation state for one repetition.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::config::{ExperimentConfig, FaultEvent, TopologyConfig};
use super::metrics::MetricsRecord;
use crate::datasets::{partition_iid, split_train_test, DataShard, Dataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{self, Hyperparams, ModelParams, ModelSpec};
use crate::overlay::{
    detect_hubs, gen_chord, gen_complete, gen_kregular, gen_multistar, gen_ring, gen_star, graph_diameter, Diameter,
    DirectedGraph, Elevator, ElevatorParams, NodeId,
};
use crate::protocols::{Context, CycleStats, GaiaLayout, HealParams, LearningNode, Nodes, ProtocolKind, ProtocolState};
use crate::rng::{self, SimRng};

/// The overlay under the learning layer.
#[derive(Debug, Clone)]
pub enum Topology {
    Dynamic(Elevator),
    Static(DirectedGraph),
}

impl Topology {
    pub fn graph(&self) -> DirectedGraph {
        match self {
            Topology::Dynamic(e) => e.graph(),
            Topology::Static(g) => g.clone(),
        }
    }

    fn remove(&mut self, n: NodeId) {
        match self {
            Topology::Dynamic(e) => e.remove_node(n),
            Topology::Static(g) => g.remove_node(n),
        }
    }

    fn join(&mut self, n: NodeId, peers: &[NodeId]) {
        match self {
            Topology::Dynamic(e) => e.add_node(n, peers.iter().copied()),
            Topology::Static(g) => {
                g.add_node(n);
                for &p in peers {
                    g.add_undirected_edge(n, p);
                }
            }
        }
    }
}

/// Rows handed to joining nodes: drawn without replacement while they
/// last, then with replacement.
#[derive(Debug, Clone)]
struct Reserve {
    data: Dataset,
    order: Vec<usize>,
    cursor: usize,
}

impl Reserve {
    fn draw(&mut self, k: usize, rng: &mut SimRng) -> Option<Dataset> {
        if self.data.is_empty() || k == 0 {
            return None;
        }
        let mut rows = Vec::with_capacity(k);
        while rows.len() < k && self.cursor < self.order.len() {
            rows.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        while rows.len() < k {
            rows.push(rng.random_range(0..self.data.len()));
        }
        Some(self.data.subset(&rows))
    }
}

/// Counts of nodes leaving and joining during one cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Turnover {
    pub crashed: usize,
    pub churned_out: usize,
    pub churned_in: usize,
}

pub struct World {
    pub cycle: usize,
    pub seed: u64,
    pub nodes: Nodes,
    pub topology: Topology,
    pub protocol: ProtocolState,
    pub test: Dataset,
    spec: ModelSpec,
    hyper: Hyperparams,
    h: usize,
    hub_threshold: f64,
    reserve: Reserve,
    shard_size: usize,
    next_id: u64,
    /// Hubs detected on the current graph; refreshed after every change.
    hubs: Vec<NodeId>,
    graph: DirectedGraph,
    last_stats: CycleStats,
}

impl World {
    /// Builds the repetition's world from an already validated config and a
    /// loaded (not yet split) dataset.
    pub fn build(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Self> {
        let (train, test) = split_train_test(data, cfg.test_fraction, rng::derive_seed(seed, "split", &[]))?;
        let (train, test) = if cfg.normalize {
            let (train, st) = crate::datasets::normalize(&train)?;
            let test = st.apply(&test)?;
            (train, test)
        } else {
            (train, test)
        };
        let (train, reserve) = if cfg.reserve_fraction > 0.0 {
            split_train_test(&train, cfg.reserve_fraction, rng::derive_seed(seed, "reserve", &[]))?
        } else {
            let empty = train.subset(&[]);
            (train, empty)
        };
        if train.len() < cfg.n_nodes {
            return Err(Error::config(format!(
                "field `n_nodes`: {} nodes but only {} training rows after the test split and reserve",
                cfg.n_nodes,
                train.len()
            )));
        }
        let spec = match cfg.model {
            None => ModelSpec::for_dataset(&train),
            Some(models::ModelKind::BinaryLogistic) => ModelSpec::binary(train.dim()),
            Some(models::ModelKind::MultinomialLogistic) => ModelSpec::multinomial(train.dim(), train.num_classes()),
        };
        spec.validate()?;
        let shard_size = train.len() / cfg.n_nodes;
        let shards = partition_iid(&train, cfg.n_nodes, rng::derive_seed(seed, "partition", &[]))?;
        let mut nodes = Nodes::new();
        for shard in shards {
            let model = init_params(spec, seed, shard.owner)?;
            nodes.insert(shard.owner, LearningNode { model, shard });
        }

        let n = cfg.n_nodes;
        let topo_seed = rng::derive_seed(seed, "topology", &[]);
        let topo = cfg.topology();
        let topology = match topo {
            TopologyConfig::Elevator => {
                let boot = gen_kregular(n, cfg.elevator.bootstrap_degree, topo_seed)?;
                let params = ElevatorParams::new(cfg.h, cfg.elevator.cache_size_for(cfg.h))?.with_schedule(cfg.elevator.schedule);
                Topology::Dynamic(Elevator::from_graph(&boot, params))
            }
            TopologyConfig::Star => Topology::Static(gen_star(n)?),
            TopologyConfig::Multistar { servers } => Topology::Static(gen_multistar(n, servers)?),
            TopologyConfig::Ring => Topology::Static(gen_ring(n)?),
            TopologyConfig::Kregular { k } => Topology::Static(gen_kregular(n, k, topo_seed)?),
            TopologyConfig::Chord => Topology::Static(gen_chord(n)?),
            TopologyConfig::Complete => Topology::Static(gen_complete(n)?),
        };
        let graph = topology.graph();
        let protocol = match cfg.protocol {
            ProtocolKind::Heal => ProtocolState::Heal(HealParams {
                h: cfg.h,
                s: cfg.s,
                weighted: cfg.weighted_hub_average,
            }),
            ProtocolKind::Fedavg => ProtocolState::Fedavg { server: NodeId(0) },
            ProtocolKind::Gaia => {
                let TopologyConfig::Multistar { servers } = topo else {
                    return Err(Error::config("field `topology`: gaia runs on a multistar"));
                };
                let ids: Vec<NodeId> = (0..servers as u64).map(NodeId).collect();
                ProtocolState::Gaia(GaiaLayout::from_graph(&graph, &ids)?)
            }
            ProtocolKind::Gossip => ProtocolState::Gossip,
            ProtocolKind::Epidemic => ProtocolState::Epidemic,
        };
        let mut order: Vec<usize> = (0..reserve.len()).collect();
        order.shuffle(&mut rng::stream(seed, "reserve-order", &[]));
        let mut world = Self {
            cycle: 0,
            seed,
            nodes,
            topology,
            protocol,
            test,
            spec,
            hyper: cfg.hyperparams(),
            h: cfg.h,
            hub_threshold: cfg.hub_threshold,
            reserve: Reserve {
                data: reserve,
                order,
                cursor: 0,
            },
            shard_size: shard_size.max(1),
            next_id: n as u64,
            hubs: Vec::new(),
            graph,
            last_stats: CycleStats::default(),
        };
        world.refresh();
        Ok(world)
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn hubs(&self) -> &[NodeId] {
        &self.hubs
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn live_count(&self) -> usize {
        self.nodes.len()
    }

    fn refresh(&mut self) {
        self.graph = self.topology.graph();
        self.hubs = detect_hubs(&self.graph, self.hub_threshold);
    }

    /// Advances the overlay (dynamic topologies only).
    pub fn overlay_step(&mut self, rounds: usize, exec: &Exec) {
        if let Topology::Dynamic(e) = &mut self.topology {
            for r in 0..rounds {
                let tick = (self.cycle * rounds + r) as u64;
                e.cycle(rng::derive_seed(self.seed, "elevator", &[]), tick, exec);
            }
            self.refresh();
        }
    }

    fn crash(&mut self, victims: &[NodeId]) -> usize {
        let mut count = 0;
        for v in victims {
            if self.nodes.remove(v).is_some() {
                self.topology.remove(*v);
                count += 1;
            }
        }
        count
    }

    /// Applies one fault event scheduled for the current cycle.
    pub fn apply_fault_event(&mut self, ev: &FaultEvent) -> Result<Turnover> {
        let mut r = rng::stream(self.seed, "faults", &[self.cycle as u64]);
        let live: Vec<NodeId> = self.nodes.keys().copied().collect();
        let mut t = Turnover::default();
        match ev {
            FaultEvent::CrashFraction { fraction, include, .. } => {
                let k = (fraction * live.len() as f64).ceil() as usize;
                let mut victims: Vec<NodeId> = include.iter().copied().filter(|n| self.nodes.contains_key(n)).collect();
                victims.truncate(k);
                let chosen: BTreeSet<NodeId> = victims.iter().copied().collect();
                let rest: Vec<NodeId> = live.iter().copied().filter(|n| !chosen.contains(n)).collect();
                let extra = k.saturating_sub(victims.len()).min(rest.len());
                victims.extend(index::sample(&mut r, rest.len(), extra).into_iter().map(|i| rest[i]));
                t.crashed = self.crash(&victims);
            }
            FaultEvent::CrashNodes { nodes, .. } => {
                let missing = nodes.iter().filter(|n| !self.nodes.contains_key(n)).count();
                if missing > 0 {
                    warn!("cycle {}: {missing} listed node(s) already absent", self.cycle);
                }
                t.crashed = self.crash(nodes);
            }
            FaultEvent::CrashHubs { count, .. } => {
                let hubs = self.hubs.clone();
                if *count > hubs.len() {
                    warn!("cycle {}: asked to crash {count} hubs, only {} present", self.cycle, hubs.len());
                }
                let k = (*count).min(hubs.len());
                let victims: Vec<NodeId> = index::sample(&mut r, hubs.len(), k).into_iter().map(|i| hubs[i]).collect();
                t.crashed = self.crash(&victims);
            }
            FaultEvent::CrashAllHubs { .. } => {
                let hubs = self.hubs.clone();
                t.crashed = self.crash(&hubs);
            }
            FaultEvent::Churn {
                rate, new_node_degree, ..
            } => {
                let k = (rate * live.len() as f64).ceil() as usize;
                if k > live.len() {
                    warn!("cycle {}: churn wants {k} nodes, only {} live", self.cycle, live.len());
                }
                let k = k.min(live.len());
                let victims: Vec<NodeId> = index::sample(&mut r, live.len(), k).into_iter().map(|i| live[i]).collect();
                t.churned_out = self.crash(&victims);
                for _ in 0..k {
                    self.join(*new_node_degree, &mut r)?;
                    t.churned_in += 1;
                }
            }
        }
        if t.crashed + t.churned_out > 0 && self.nodes.is_empty() {
            warn!("cycle {}: no live nodes left", self.cycle);
        }
        self.refresh();
        Ok(t)
    }

    fn join(&mut self, degree: usize, r: &mut SimRng) -> Result<()> {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let live: Vec<NodeId> = self.nodes.keys().copied().collect();
        if live.len() < degree {
            warn!("cycle {}: joining node {id} sees only {} live peers", self.cycle, live.len());
        }
        let peers: Vec<NodeId> = index::sample(r, live.len(), degree.min(live.len()))
            .into_iter()
            .map(|i| live[i])
            .collect();
        let data = match self.reserve.draw(self.shard_size, r) {
            Some(d) => d,
            None => return Err(Error::precondition("churn needs a non-empty reserve (reserve_fraction > 0)")),
        };
        let model = init_params(self.spec, self.seed, id)?;
        self.topology.join(id, &peers);
        self.nodes.insert(
            id,
            LearningNode {
                model,
                shard: DataShard { owner: id, data },
            },
        );
        let graph = self.topology.graph();
        self.protocol.on_join(id, &graph);
        Ok(())
    }

    fn hub_views(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        match &self.topology {
            Topology::Dynamic(e) => self.nodes.keys().map(|&n| (n, e.hubs_of(n).to_vec())).collect(),
            Topology::Static(_) => {
                let view: Vec<NodeId> = self.hubs.iter().copied().take(self.h).collect();
                self.nodes.keys().map(|&n| (n, view.clone())).collect()
            }
        }
    }

    /// Runs the learning protocol for the current cycle.
    pub fn protocol_step(&mut self, exec: &Exec) -> Result<CycleStats> {
        let views = self.hub_views();
        let ctx = Context {
            cycle: self.cycle as u64,
            seed: self.seed,
            hyper: &self.hyper,
            exec,
            graph: &self.graph,
            hubs: &self.hubs,
            hub_views: &views,
        };
        let stats = if self.nodes.is_empty() {
            CycleStats::default()
        } else {
            self.protocol.step(&mut self.nodes, &ctx)?
        };
        self.last_stats = stats;
        Ok(stats)
    }

    /// Evaluates every live model on the test set and records the cycle.
    pub fn sample_metrics(&self, exec: &Exec, with_diameter: bool) -> Result<MetricsRecord> {
        let accuracy = mean_accuracy(self.nodes.values().map(|n| &n.model), &self.test, exec)?;
        Ok(MetricsRecord {
            cycle: self.cycle,
            accuracy,
            live_nodes: self.nodes.len(),
            hub_count: self.hubs.len(),
            msgs_sent: self.last_stats.sent,
            msgs_dropped: self.last_stats.dropped,
            diameter: with_diameter.then(|| {
                if self.graph.node_count() == 0 {
                    Diameter::Unreachable
                } else {
                    graph_diameter(&self.graph)
                }
            }),
        })
    }
}

fn init_params(spec: ModelSpec, seed: u64, id: NodeId) -> Result<ModelParams> {
    models::init_params(spec, rng::derive_seed(seed, "init", &[id.0]))
}

/// Mean test accuracy over `models`; 0 when there are none. Models with
/// identical parameters are evaluated once.
pub fn mean_accuracy<'a>(models: impl Iterator<Item = &'a ModelParams>, test: &Dataset, exec: &Exec) -> Result<f64> {
    let mut distinct: Vec<&ModelParams> = Vec::new();
    let mut slot: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut which: Vec<usize> = Vec::new();
    for m in models {
        let key: Vec<u64> = m.values.iter().map(|v| v.to_bits()).collect();
        let next = distinct.len();
        let i = *slot.entry(key).or_insert(next);
        if i == next {
            distinct.push(m);
        }
        which.push(i);
    }
    if which.is_empty() {
        return Ok(0.0);
    }
    let scores = exec.map(&distinct, |m| models::evaluate(m, test));
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    Ok(which.iter().map(|&i| scores[i]).sum::<f64>() / which.len() as f64)
}
