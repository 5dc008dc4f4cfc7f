use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BatchSize, Hyperparams, ModelKind};
use crate::overlay::{NodeId, Schedule, DEFAULT_HUB_FRACTION};
use crate::protocols::ProtocolKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    /// Dynamic Elevator overlay.
    Elevator,
    Star,
    Multistar { servers: usize },
    Ring,
    Kregular { k: usize },
    Chord,
    Complete,
}

impl TopologyConfig {
    pub fn is_dynamic(&self) -> bool {
        matches!(self, TopologyConfig::Elevator)
    }

    pub fn default_for(protocol: ProtocolKind) -> Self {
        match protocol {
            ProtocolKind::Heal => TopologyConfig::Elevator,
            ProtocolKind::Fedavg => TopologyConfig::Star,
            ProtocolKind::Gaia => TopologyConfig::Multistar { servers: 5 },
            ProtocolKind::Gossip | ProtocolKind::Epidemic => TopologyConfig::Kregular { k: 20 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElevatorConfig {
    /// Cache capacity; `None` means `max(20, 2h)`.
    pub cache_size: Option<usize>,
    /// Degree of the random regular graph that seeds the caches.
    pub bootstrap_degree: usize,
    pub schedule: Schedule,
    /// Overlay cycles run before each learning cycle.
    pub cycles_per_learning_cycle: usize,
}

impl Default for ElevatorConfig {
    fn default() -> Self {
        Self {
            cache_size: None,
            bootstrap_degree: 20,
            schedule: Schedule::InPlace,
            cycles_per_learning_cycle: 1,
        }
    }
}

impl ElevatorConfig {
    pub fn cache_size_for(&self, h: usize) -> usize {
        self.cache_size.unwrap_or(20.max(2 * h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Csv {
        /// Relative paths resolve against the data directory.
        path: PathBuf,
        /// Zero-based label column; the last column when absent.
        #[serde(default)]
        label_column: Option<usize>,
        #[serde(default)]
        header: bool,
    },
    Synthetic {
        samples: usize,
        features: usize,
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_separation() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultEvent {
    /// Crashes `ceil(fraction * live)` nodes: the listed ones first, the
    /// rest uniformly among the remaining live nodes.
    CrashFraction {
        cycle: usize,
        fraction: f64,
        #[serde(default)]
        include: Vec<NodeId>,
    },
    CrashNodes { cycle: usize, nodes: Vec<NodeId> },
    /// Crashes `count` hubs chosen uniformly among the detected ones.
    CrashHubs { cycle: usize, count: usize },
    CrashAllHubs { cycle: usize },
    /// Every cycle in `start_cycle..=end_cycle`, replaces `ceil(rate * live)`
    /// random nodes by fresh ones linked to `new_node_degree` random peers.
    Churn {
        start_cycle: usize,
        end_cycle: usize,
        rate: f64,
        #[serde(default = "default_new_node_degree")]
        new_node_degree: usize,
    },
}

fn default_new_node_degree() -> usize {
    20
}

impl FaultEvent {
    pub fn applies_at(&self, cycle: usize) -> bool {
        match self {
            FaultEvent::CrashFraction { cycle: c, .. }
            | FaultEvent::CrashNodes { cycle: c, .. }
            | FaultEvent::CrashHubs { cycle: c, .. }
            | FaultEvent::CrashAllHubs { cycle: c } => *c == cycle,
            FaultEvent::Churn {
                start_cycle, end_cycle, ..
            } => (*start_cycle..=*end_cycle).contains(&cycle),
        }
    }
}

fn default_n_nodes() -> usize {
    100
}
fn default_h() -> usize {
    5
}
fn default_one() -> usize {
    1
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_reserve_fraction() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_diameter_every() -> usize {
    10
}
fn default_hub_threshold() -> f64 {
    DEFAULT_HUB_FRACTION
}
fn default_learning_rate() -> f64 {
    Hyperparams::default().learning_rate
}
fn default_weight_decay() -> f64 {
    Hyperparams::default().weight_decay
}

/// One experiment: protocol, topology, data, schedule and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub protocol: ProtocolKind,
    /// Defaults per protocol: elevator, star, multistar(5), kregular(20).
    #[serde(default)]
    pub topology: Option<TopologyConfig>,
    #[serde(default = "default_n_nodes")]
    pub n_nodes: usize,
    /// Hub count (HEAL).
    #[serde(default = "default_h")]
    pub h: usize,
    /// Hubs each client sends to (HEAL).
    #[serde(default = "default_one")]
    pub s: usize,
    #[serde(default)]
    pub weighted_hub_average: bool,
    #[serde(default)]
    pub elevator: ElevatorConfig,
    pub cycles: usize,
    /// Inferred from the dataset when absent.
    #[serde(default)]
    pub model: Option<ModelKind>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub batch_size: BatchSize,
    pub dataset: DatasetConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Training rows held back to give joining nodes data.
    #[serde(default = "default_reserve_fraction")]
    pub reserve_fraction: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default = "default_one")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Diameter sampling period in cycles; 0 disables it.
    #[serde(default = "default_diameter_every")]
    pub diameter_every: usize,
    #[serde(default = "default_hub_threshold")]
    pub hub_threshold: f64,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{name}`: {msg}"))
}

fn check(ok: bool, name: &str, msg: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(field(name, msg))
    }
}

/// Largest `k <= want` with `k < n` and `n * k` even.
fn fit_degree(want: usize, n: usize) -> usize {
    let k = want.min(n.saturating_sub(1)).max(1);
    if (n * k) % 2 == 1 && k > 1 {
        k - 1
    } else {
        k
    }
}

impl ExperimentConfig {
    /// A minimal configuration for `protocol` on a synthetic task. Regular
    /// degrees are lowered from 20 when `n_nodes` is too small to carry them.
    pub fn synthetic(name: &str, protocol: ProtocolKind, n_nodes: usize, cycles: usize) -> Self {
        let k = fit_degree(20, n_nodes);
        let topology = match protocol {
            ProtocolKind::Gossip | ProtocolKind::Epidemic if k != 20 => Some(TopologyConfig::Kregular { k }),
            _ => None,
        };
        Self {
            name: name.to_string(),
            protocol,
            topology,
            n_nodes,
            h: default_h(),
            s: 1,
            weighted_hub_average: false,
            elevator: ElevatorConfig {
                bootstrap_degree: k,
                ..ElevatorConfig::default()
            },
            cycles,
            model: None,
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            batch_size: BatchSize::Full,
            dataset: DatasetConfig::Synthetic {
                samples: 40 * n_nodes,
                features: 8,
                classes: 2,
                separation: default_separation(),
                seed: 0,
            },
            test_fraction: default_test_fraction(),
            reserve_fraction: default_reserve_fraction(),
            normalize: true,
            faults: Vec::new(),
            repetitions: 1,
            master_seed: 0,
            diameter_every: default_diameter_every(),
            hub_threshold: DEFAULT_HUB_FRACTION,
        }
    }

    pub fn topology(&self) -> TopologyConfig {
        self.topology.unwrap_or_else(|| TopologyConfig::default_for(self.protocol))
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        check(!self.name.trim().is_empty(), "name", "must not be empty")?;
        let n = self.n_nodes;
        check(n >= 2, "n_nodes", format!("must be at least 2 (got {n})"))?;
        check(self.cycles >= 1, "cycles", "must be at least 1")?;
        check(self.repetitions >= 1, "repetitions", "must be at least 1")?;
        self.hyperparams().validate().map_err(|e| field("learning_rate/weight_decay/batch_size", e))?;
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "test_fraction",
            format!("must lie in (0, 1) (got {})", self.test_fraction),
        )?;
        check(
            (0.0..1.0).contains(&self.reserve_fraction),
            "reserve_fraction",
            format!("must lie in [0, 1) (got {})", self.reserve_fraction),
        )?;
        check(
            self.hub_threshold > 0.0 && self.hub_threshold <= 1.0,
            "hub_threshold",
            format!("must lie in (0, 1] (got {})", self.hub_threshold),
        )?;
        if self.protocol == ProtocolKind::Heal {
            check(self.h >= 1 && self.h < n, "h", format!("must satisfy 1 <= h < n_nodes (got h={}, n_nodes={n})", self.h))?;
            check(
                self.s >= 1 && self.s <= self.h,
                "s",
                format!("must satisfy 1 <= s <= h (got s={}, h={})", self.s, self.h),
            )?;
        }
        self.validate_topology()?;
        self.validate_dataset()?;
        for (i, ev) in self.faults.iter().enumerate() {
            self.validate_fault(ev).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("faults[{i}]: {m}")),
                other => other,
            })?;
        }
        Ok(())
    }

    fn validate_topology(&self) -> Result<()> {
        let n = self.n_nodes;
        let topo = self.topology();
        match (self.protocol, topo) {
            (ProtocolKind::Fedavg, TopologyConfig::Star) => {}
            (ProtocolKind::Fedavg, _) => return Err(field("topology", "fedavg runs on a star")),
            (ProtocolKind::Gaia, TopologyConfig::Multistar { .. }) => {}
            (ProtocolKind::Gaia, _) => return Err(field("topology", "gaia runs on a multistar")),
            _ => {}
        }
        match topo {
            TopologyConfig::Elevator => {
                let c = self.elevator.cache_size_for(self.h);
                check(c >= 1 && c >= self.h, "elevator.cache_size", format!("must be at least h={} (got {c})", self.h))?;
                let k = self.elevator.bootstrap_degree;
                check(
                    k >= 1 && k < n && (n * k) % 2 == 0,
                    "elevator.bootstrap_degree",
                    format!("needs 1 <= k < n_nodes and n_nodes*k even (got k={k}, n_nodes={n})"),
                )?;
                check(
                    self.elevator.cycles_per_learning_cycle >= 1,
                    "elevator.cycles_per_learning_cycle",
                    "must be at least 1",
                )?;
            }
            TopologyConfig::Multistar { servers } => {
                check(servers >= 1 && servers < n, "topology.servers", format!("must satisfy 1 <= servers < n_nodes (got {servers})"))?;
            }
            TopologyConfig::Kregular { k } => {
                check(
                    k >= 1 && k < n && (n * k) % 2 == 0,
                    "topology.k",
                    format!("needs 1 <= k < n_nodes and n_nodes*k even (got k={k}, n_nodes={n})"),
                )?;
            }
            TopologyConfig::Ring => check(n >= 3, "n_nodes", "a ring needs at least 3 nodes")?,
            TopologyConfig::Star | TopologyConfig::Chord | TopologyConfig::Complete => {}
        }
        Ok(())
    }

    fn validate_dataset(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Csv { path, .. } => check(!path.as_os_str().is_empty(), "dataset.path", "must not be empty"),
            DatasetConfig::Synthetic {
                samples,
                features,
                classes,
                separation,
                ..
            } => {
                check(*features >= 1, "dataset.features", "must be at least 1")?;
                check(*classes >= 2, "dataset.classes", "must be at least 2")?;
                check(separation.is_finite(), "dataset.separation", "must be finite")?;
                check(
                    *samples >= 2 * self.n_nodes,
                    "dataset.samples",
                    format!("must be at least 2 * n_nodes = {} (got {samples})", 2 * self.n_nodes),
                )
            }
        }
    }

    fn validate_fault(&self, ev: &FaultEvent) -> Result<()> {
        let in_range = |c: usize, name: &str| check(c <= self.cycles, name, format!("must lie in [0, cycles={}] (got {c})", self.cycles));
        match ev {
            FaultEvent::CrashFraction { cycle, fraction, .. } => {
                in_range(*cycle, "cycle")?;
                check(*fraction > 0.0 && *fraction <= 1.0, "fraction", format!("must lie in (0, 1] (got {fraction})"))
            }
            FaultEvent::CrashNodes { cycle, .. } | FaultEvent::CrashAllHubs { cycle } => in_range(*cycle, "cycle"),
            FaultEvent::CrashHubs { cycle, count } => {
                in_range(*cycle, "cycle")?;
                check(*count >= 1, "count", "must be at least 1")
            }
            FaultEvent::Churn {
                start_cycle,
                end_cycle,
                rate,
                new_node_degree,
            } => {
                in_range(*start_cycle, "start_cycle")?;
                in_range(*end_cycle, "end_cycle")?;
                check(start_cycle <= end_cycle, "end_cycle", "must not precede start_cycle")?;
                check(*rate > 0.0 && *rate <= 1.0, "rate", format!("must lie in (0, 1] (got {rate})"))?;
                check(*new_node_degree >= 1, "new_node_degree", "must be at least 1")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heal() -> ExperimentConfig {
        ExperimentConfig::synthetic("t", ProtocolKind::Heal, 20, 5)
    }

    fn err_of(c: &ExperimentConfig) -> String {
        c.validate().unwrap_err().to_string()
    }

    #[test]
    fn defaults_validate() {
        for p in [ProtocolKind::Heal, ProtocolKind::Fedavg, ProtocolKind::Gaia, ProtocolKind::Gossip, ProtocolKind::Epidemic] {
            let mut c = ExperimentConfig::synthetic("t", p, 100, 3);
            c.faults.push(FaultEvent::CrashFraction {
                cycle: 1,
                fraction: 0.2,
                include: vec![],
            });
            c.validate().unwrap();
        }
    }

    #[test]
    fn rejections_name_the_field() {
        let mut c = heal();
        c.cycles = 0;
        assert!(err_of(&c).contains("`cycles`"));
        let mut c = heal();
        c.s = 6;
        assert!(err_of(&c).contains("`s`"));
        let mut c = heal();
        c.repetitions = 0;
        assert!(err_of(&c).contains("`repetitions`"));
        let mut c = heal();
        c.faults.push(FaultEvent::CrashFraction {
            cycle: 2,
            fraction: 1.5,
            include: vec![],
        });
        assert!(err_of(&c).contains("faults[0]: field `fraction`"));
        let mut c = ExperimentConfig::synthetic("t", ProtocolKind::Fedavg, 10, 3);
        c.topology = Some(TopologyConfig::Ring);
        assert!(err_of(&c).contains("`topology`"));
        let mut c = heal();
        c.topology = Some(TopologyConfig::Kregular { k: 3 });
        c.n_nodes = 21;
        assert!(err_of(&c).contains("`topology.k`"));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = heal();
        c.faults.push(FaultEvent::Churn {
            start_cycle: 1,
            end_cycle: 3,
            rate: 0.1,
            new_node_degree: 20,
        });
        c.batch_size = BatchSize::Size(8);
        let text = toml::to_string(&c).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), c);
    }

    #[test]
    fn cache_size_grows_with_h() {
        let e = ElevatorConfig::default();
        assert_eq!(e.cache_size_for(5), 20);
        assert_eq!(e.cache_size_for(25), 50);
    }
}
