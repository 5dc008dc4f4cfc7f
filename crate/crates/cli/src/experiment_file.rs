//! Experiment documents: a TOML file with an optional `[defaults]` table and
//! one `[[experiment]]` table per run, or a JSON run manifest.
//!
//! Defaults merge key by key at the top level of each entry; a key present in
//! the entry replaces the default value whole, nested tables included.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use healsim_core::engine::{ExperimentConfig, Manifest};

pub fn load(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let entries = if is_json { parse_json(&text)? } else { parse_toml(&text)? };
    check_all(&entries)?;
    Ok(entries)
}

/// A manifest, or a bare config, as written by `run`.
pub fn parse_json(text: &str) -> Result<Vec<ExperimentConfig>> {
    if let Ok(m) = serde_json::from_str::<Manifest>(text) {
        return Ok(vec![m.config]);
    }
    let cfg: ExperimentConfig = serde_json::from_str(text).context("JSON is neither a run manifest nor an experiment config")?;
    Ok(vec![cfg])
}

pub fn parse_toml(text: &str) -> Result<Vec<ExperimentConfig>> {
    let mut doc: toml::Table = text.parse().context("parsing TOML")?;
    let defaults = match doc.remove("defaults") {
        None => toml::Table::new(),
        Some(toml::Value::Table(t)) => t,
        Some(_) => bail!("`defaults` must be a table"),
    };
    let entries = match doc.remove("experiment") {
        Some(toml::Value::Array(a)) => a,
        Some(_) => bail!("`experiment` must be an array of tables ([[experiment]])"),
        None => bail!("no [[experiment]] entries"),
    };
    if let Some(key) = doc.keys().next() {
        bail!("unknown top-level key `{key}`; expected `defaults` and `experiment`");
    }
    entries
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let toml::Value::Table(entry) = v else {
                bail!("experiment #{i} is not a table");
            };
            let mut merged = defaults.clone();
            merged.extend(entry);
            let label = merged.get("name").and_then(|n| n.as_str()).map_or(format!("#{i}"), |n| format!("#{i} `{n}`"));
            toml::Value::Table(merged)
                .try_into::<ExperimentConfig>()
                .with_context(|| format!("experiment {label}"))
        })
        .collect()
}

/// Validates every entry and rejects duplicate names, before anything runs.
pub fn check_all(entries: &[ExperimentConfig]) -> Result<()> {
    let mut names = BTreeSet::new();
    for (i, cfg) in entries.iter().enumerate() {
        cfg.validate().with_context(|| format!("experiment #{i} `{}`", cfg.name))?;
        if !names.insert(cfg.name.as_str()) {
            bail!("experiment #{i}: duplicate name `{}`", cfg.name);
        }
    }
    Ok(())
}
