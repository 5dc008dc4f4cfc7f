//! Overlay layer: the Elevator hub-forming peer-sampling protocol, static
//! topology generators for the baselines, and graph analytics.

mod elevator;
mod graph;
mod topology;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use elevator::{
    build_frequency_map, collect_two_hop, exchange_with_preferred, refill_cache, select_preferred, Elevator,
    ElevatorParams, Exchange, FrequencyMap, OverlayState, Schedule,
};
pub use graph::{detect_hubs, graph_diameter, to_undirected, Diameter, DirectedGraph, GraphSnapshot, DEFAULT_HUB_FRACTION};
pub use topology::{gen_chord, gen_complete, gen_kregular, gen_multistar, gen_ring, gen_star};

/// Node identifier. Ids are handed out by a monotone counter and never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
