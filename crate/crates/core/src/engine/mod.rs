//! Cycle-driven orchestration. Each cycle runs, in order: the overlay step
//! (dynamic topologies), the fault events scheduled for that cycle, the
//! protocol step, and metric sampling.

mod config;
mod metrics;
mod world;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{generate_synthetic, load_csv, Dataset, LabelColumn};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::overlay::{gen_kregular, DirectedGraph, Elevator, ElevatorParams, GraphSnapshot};
use crate::rng;

pub use config::{DatasetConfig, ElevatorConfig, ExperimentConfig, FaultEvent, TopologyConfig};
pub use metrics::{write_mean_csv, write_metrics_csv, MeanRecord, MetricsRecord, MetricsSeries, RunResult, CSV_COLUMNS};
pub use world::{mean_accuracy, Topology, Turnover, World};

/// Environment variable naming the directory relative dataset paths resolve against.
pub const DATA_DIR_ENV: &str = "HEALSIM_DATA_DIR";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub exec: Exec,
    /// Overrides [`DATA_DIR_ENV`].
    pub data_dir: Option<PathBuf>,
}

/// Absolute paths are kept; relative ones are joined to the explicit data
/// directory, else to `$HEALSIM_DATA_DIR`, else left relative to the
/// working directory.
pub fn resolve_data_path(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match data_dir {
        Some(d) => d.join(path),
        None => match std::env::var_os(DATA_DIR_ENV) {
            Some(d) => PathBuf::from(d).join(path),
            None => path.to_path_buf(),
        },
    }
}

pub fn load_dataset(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetConfig::Csv {
            path,
            label_column,
            header,
        } => {
            let label = label_column.map_or(LabelColumn::Last, LabelColumn::Index);
            load_csv(&resolve_data_path(path, data_dir), label, *header)
        }
        DatasetConfig::Synthetic {
            samples,
            features,
            classes,
            separation,
            seed,
        } => generate_synthetic(*samples, *features, *classes, *separation, *seed),
    }
}

pub fn repetition_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.repetitions as u64)
        .map(|r| rng::derive_seed(cfg.master_seed, "repetition", &[r]))
        .collect()
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one repetition on an already loaded dataset.
pub fn run_repetition(cfg: &ExperimentConfig, data: &Dataset, repetition: usize, seed: u64, exec: &Exec) -> Result<MetricsSeries> {
    let mut world = World::build(cfg, data, seed)?;
    let mut records = Vec::with_capacity(cfg.cycles);
    for t in 0..cfg.cycles {
        world.cycle = t;
        world.overlay_step(cfg.elevator.cycles_per_learning_cycle, exec);
        for ev in cfg.faults.iter().filter(|e| e.applies_at(t)) {
            world.apply_fault_event(ev)?;
        }
        world.protocol_step(exec)?;
        let with_diameter = cfg.diameter_every > 0 && t % cfg.diameter_every == 0;
        records.push(world.sample_metrics(exec, with_diameter)?);
    }
    Ok(MetricsSeries {
        repetition,
        seed,
        records,
    })
}

/// Validates `cfg`, loads its data and runs every repetition.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let data = load_dataset(cfg, opts.data_dir.as_deref())?;
    run_experiment_on(cfg, &data, opts)
}

/// As [`run_experiment`], with the dataset supplied by the caller.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &Dataset, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let seeds = repetition_seeds(cfg);
    let reps: Vec<usize> = (0..cfg.repetitions).collect();
    let series = opts
        .exec
        .map(&reps, |&r| run_repetition(cfg, data, r, seeds[r], &opts.exec));
    RunResult::from_series(series.into_iter().collect::<Result<_>>()?)
}

/// Runs the dynamic overlay alone for `cycles` cycles, with the bootstrap
/// graph and random streams of repetition 0, and returns the graph after
/// each cycle. Static topologies are rejected.
pub fn overlay_trace(cfg: &ExperimentConfig, cycles: usize, exec: &Exec) -> Result<Vec<(DirectedGraph, GraphSnapshot)>> {
    cfg.validate()?;
    if !cfg.topology().is_dynamic() {
        return Err(Error::config(format!(
            "field `topology`: overlay inspection needs a dynamic overlay (got {:?})",
            cfg.topology()
        )));
    }
    let seed = repetition_seeds(cfg)[0];
    let boot = gen_kregular(cfg.n_nodes, cfg.elevator.bootstrap_degree, rng::derive_seed(seed, "topology", &[]))?;
    let params = ElevatorParams::new(cfg.h, cfg.elevator.cache_size_for(cfg.h))?.with_schedule(cfg.elevator.schedule);
    let mut overlay = Elevator::from_graph(&boot, params);
    let elevator_seed = rng::derive_seed(seed, "elevator", &[]);
    let mut out = Vec::with_capacity(cycles);
    for t in 0..cycles {
        overlay.cycle(elevator_seed, t as u64, exec);
        let g = overlay.graph();
        let snap = GraphSnapshot::capture(t, &g, cfg.hub_threshold);
        out.push((g, snap));
    }
    Ok(out)
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub repetition_seeds: Vec<u64>,
    /// Resolved dataset file, when the data came from disk.
    pub data_file: Option<PathBuf>,
    pub jobs: usize,
    pub wall_time_secs: f64,
    pub final_mean_accuracy: f64,
    pub versions: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, result: &RunResult, opts: &RunOptions, wall_time_secs: f64) -> Self {
        let data_file = match &cfg.dataset {
            DatasetConfig::Csv { path, .. } => Some(resolve_data_path(path, opts.data_dir.as_deref())),
            DatasetConfig::Synthetic { .. } => None,
        };
        Self {
            name: cfg.name.clone(),
            config: cfg.clone(),
            config_hash: config_hash(cfg),
            master_seed: cfg.master_seed,
            repetition_seeds: repetition_seeds(cfg),
            data_file,
            jobs: opts.exec.jobs(),
            wall_time_secs,
            final_mean_accuracy: result.final_mean_accuracy(),
            versions: BTreeMap::from([
                ("healsim-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("manifest-format".to_string(), "1".to_string()),
            ]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Shape(format!("manifest: {e}")))
    }
}
