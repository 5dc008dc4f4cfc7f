//! `healsim`: run seeded experiment matrices, parameter sweeps and overlay
//! inspections, writing tidy CSV and JSON.

mod experiment_file;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use healsim_core::engine::{
    self, load_dataset, overlay_trace, write_mean_csv, write_metrics_csv, ExperimentConfig, Manifest, RunOptions, RunResult,
    CSV_COLUMNS, DATA_DIR_ENV,
};
use healsim_core::exec::Exec;
use healsim_core::overlay::to_undirected;

#[derive(Parser)]
#[command(name = "healsim", version, about = "Hub-based decentralized learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML) or run manifest (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides every entry's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs the sequential reference path.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment entry.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run one entry once per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Entry to sweep; the first one when absent.
        #[arg(long)]
        name: Option<String>,
    },
    /// Run the dynamic overlay alone and dump each cycle's graph.
    InspectOverlay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cycles: usize,
        /// Entry to inspect; the first one when absent.
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SweepParam {
    H,
    S,
    NNodes,
    Cycles,
    LearningRate,
}

impl SweepParam {
    fn label(self) -> &'static str {
        match self {
            SweepParam::H => "h",
            SweepParam::S => "s",
            SweepParam::NNodes => "n_nodes",
            SweepParam::Cycles => "cycles",
            SweepParam::LearningRate => "learning_rate",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, raw: &str) -> Result<()> {
        let int = || raw.trim().parse::<usize>().with_context(|| format!("`{raw}` is not a non-negative integer"));
        match self {
            SweepParam::H => cfg.h = int()?,
            SweepParam::S => cfg.s = int()?,
            SweepParam::NNodes => cfg.n_nodes = int()?,
            SweepParam::Cycles => cfg.cycles = int()?,
            SweepParam::LearningRate => {
                cfg.learning_rate = raw.trim().parse().with_context(|| format!("`{raw}` is not a number"))?
            }
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { common } => cmd_run(&common),
        Command::Sweep {
            common,
            param,
            values,
            name,
        } => cmd_sweep(&common, param, &values, name.as_deref()),
        Command::InspectOverlay { common, cycles, name } => cmd_inspect_overlay(&common, cycles, name.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

impl Common {
    fn entries(&self) -> Result<Vec<ExperimentConfig>> {
        let mut entries = experiment_file::load(&self.config)?;
        if let Some(seed) = self.seed {
            for e in &mut entries {
                e.master_seed = seed;
            }
        }
        Ok(entries)
    }

    /// `$HEALSIM_DATA_DIR` when set, else the config file's directory.
    fn options(&self) -> RunOptions {
        let data_dir = match std::env::var_os(DATA_DIR_ENV) {
            Some(d) => PathBuf::from(d),
            None => self.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        RunOptions {
            exec: Exec::with_jobs(self.jobs),
            data_dir: Some(data_dir),
        }
    }

    fn claim(&self, files: &[PathBuf]) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        if !self.force {
            if let Some(f) = files.iter().find(|f| f.exists()) {
                bail!("{} already exists; pass --force to overwrite", f.display());
            }
        }
        Ok(())
    }
}

fn pick<'a>(entries: &'a [ExperimentConfig], name: Option<&str>) -> Result<&'a ExperimentConfig> {
    match name {
        None => Ok(&entries[0]),
        Some(n) => entries.iter().find(|e| e.name == n).with_context(|| format!("no experiment named `{n}`")),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run_one(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(RunResult, f64)> {
    let start = Instant::now();
    let data = load_dataset(cfg, opts.data_dir.as_deref()).with_context(|| format!("experiment `{}`", cfg.name))?;
    let result = engine::run_experiment_on(cfg, &data, opts).with_context(|| format!("experiment `{}`", cfg.name))?;
    Ok((result, start.elapsed().as_secs_f64()))
}

fn cmd_run(common: &Common) -> Result<bool> {
    let entries = common.entries()?;
    let opts = common.options();
    let files = |name: &str| {
        ["metrics.csv", "manifest.json", "mean.csv"].map(|suffix| common.out.join(format!("{name}.{suffix}")))
    };
    common.claim(&entries.iter().flat_map(|e| files(&e.name)).collect::<Vec<_>>())?;
    for cfg in &entries {
        log::info!("running `{}` ({} x {} cycles)", cfg.name, cfg.repetitions, cfg.cycles);
        let (result, secs) = run_one(cfg, &opts)?;
        let [metrics, manifest, mean] = files(&cfg.name);
        let mut buf = Vec::new();
        write_metrics_csv(&result, &mut buf)?;
        write_file(&metrics, &buf)?;
        buf.clear();
        write_mean_csv(&result, &mut buf)?;
        write_file(&mean, &buf)?;
        write_file(&manifest, Manifest::new(cfg, &result, &opts, secs).to_json()?.as_bytes())?;
        log::info!("`{}`: final mean accuracy {:.4} in {secs:.1}s", cfg.name, result.final_mean_accuracy());
    }
    Ok(true)
}

fn cmd_sweep(common: &Common, param: SweepParam, values: &[String], name: Option<&str>) -> Result<bool> {
    let entries = common.entries()?;
    let base = pick(&entries, name)?;
    let opts = common.options();
    let label = param.label();
    let target = common.out.join(format!("{}.sweep_{label}.csv", base.name));
    common.claim(std::slice::from_ref(&target))?;

    let mut all_valid = true;
    let mut runs = Vec::new();
    for raw in values {
        let mut cfg = base.clone();
        let checked = param.apply(&mut cfg, raw).and_then(|()| {
            cfg.name = format!("{}_{label}_{}", base.name, raw.trim());
            cfg.validate().map_err(anyhow::Error::from)
        });
        match checked {
            Ok(()) => runs.push((raw.trim().to_string(), cfg)),
            Err(e) => {
                eprintln!("skipping {label}={raw}: {e:#}");
                all_valid = false;
            }
        }
    }

    let mut out = Vec::new();
    writeln!(out, "param,value,{}", CSV_COLUMNS.join(","))?;
    for (value, cfg) in &runs {
        log::info!("sweep {label}={value}");
        let (result, _) = run_one(cfg, &opts)?;
        let mut buf = Vec::new();
        write_metrics_csv(&result, &mut buf)?;
        write_mean_csv(&result, &mut buf)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        for line in text.lines().filter(|l| !l.starts_with("cycle,")) {
            writeln!(out, "{label},{value},{line}")?;
        }
    }
    write_file(&target, &out)?;
    Ok(all_valid)
}

fn cmd_inspect_overlay(common: &Common, cycles: usize, name: Option<&str>) -> Result<bool> {
    let entries = common.entries()?;
    let cfg = pick(&entries, name)?;
    let dir = common.out.join(format!("{}.overlay", cfg.name));
    let summary = common.out.join(format!("{}.overlay.json", cfg.name));
    common.claim(&[dir.clone(), summary.clone()])?;
    let trace = overlay_trace(cfg, cycles, &common.options().exec).with_context(|| format!("experiment `{}`", cfg.name))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut snaps = Vec::with_capacity(trace.len());
    for (graph, snap) in trace {
        write_file(&dir.join(format!("cycle_{:04}.edges", snap.cycle)), graph.to_edge_list().as_bytes())?;
        log::info!(
            "cycle {}: {} hubs, undirected diameter {}, {} undirected edges",
            snap.cycle,
            snap.hubs.len(),
            snap.diameter,
            to_undirected(&graph).edge_count() / 2
        );
        snaps.push(snap);
    }
    write_file(&summary, serde_json::to_string_pretty(&snaps)?.as_bytes())?;
    Ok(true)
}
