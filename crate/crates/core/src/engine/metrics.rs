use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlay::Diameter;

/// Column order of every metrics CSV.
pub const CSV_COLUMNS: [&str; 8] = [
    "cycle",
    "repetition",
    "accuracy",
    "live_nodes",
    "hub_count",
    "msgs_sent",
    "msgs_dropped",
    "diameter",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cycle: usize,
    /// Mean test accuracy over live nodes.
    pub accuracy: f64,
    pub live_nodes: usize,
    pub hub_count: usize,
    pub msgs_sent: u64,
    pub msgs_dropped: u64,
    /// `None` on cycles where the diameter was not sampled.
    pub diameter: Option<Diameter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub repetition: usize,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

impl MetricsSeries {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.accuracy)
    }
}

/// Pointwise mean over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRecord {
    pub cycle: usize,
    pub accuracy: f64,
    pub live_nodes: f64,
    pub hub_count: f64,
    pub msgs_sent: f64,
    pub msgs_dropped: f64,
    /// Mean finite diameter, `Some(None)` if any repetition was disconnected.
    pub diameter: Option<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub series: Vec<MetricsSeries>,
    pub mean: Vec<MeanRecord>,
}

impl RunResult {
    pub fn from_series(series: Vec<MetricsSeries>) -> Result<Self> {
        let Some(first) = series.first() else {
            return Err(Error::precondition("a run needs at least one repetition"));
        };
        let len = first.records.len();
        if series.iter().any(|s| s.records.len() != len) {
            return Err(Error::shape("repetitions have different lengths"));
        }
        let k = series.len() as f64;
        let mean = (0..len)
            .map(|i| {
                let rows: Vec<&MetricsRecord> = series.iter().map(|s| &s.records[i]).collect();
                let avg = |f: &dyn Fn(&MetricsRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
                let diameter = if rows.iter().all(|r| r.diameter.is_none()) {
                    None
                } else {
                    let finite: Option<Vec<f64>> = rows
                        .iter()
                        .map(|r| match r.diameter {
                            Some(Diameter::Finite(d)) => Some(d as f64),
                            _ => None,
                        })
                        .collect();
                    Some(finite.map(|v| v.iter().sum::<f64>() / k))
                };
                MeanRecord {
                    cycle: rows[0].cycle,
                    accuracy: avg(&|r| r.accuracy),
                    live_nodes: avg(&|r| r.live_nodes as f64),
                    hub_count: avg(&|r| r.hub_count as f64),
                    msgs_sent: avg(&|r| r.msgs_sent as f64),
                    msgs_dropped: avg(&|r| r.msgs_dropped as f64),
                    diameter,
                }
            })
            .collect();
        Ok(Self { series, mean })
    }

    pub fn mean_accuracies(&self) -> Vec<f64> {
        self.mean.iter().map(|r| r.accuracy).collect()
    }

    pub fn final_mean_accuracy(&self) -> f64 {
        self.mean.last().map_or(0.0, |r| r.accuracy)
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<metrics csv>".into(),
            source,
        },
        other => Error::Shape(format!("csv: {other:?}")),
    }
}

fn diameter_cell(d: Option<Diameter>) -> String {
    d.map(|d| d.to_string()).unwrap_or_default()
}

/// Per-repetition rows, repetition-major.
pub fn write_metrics_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_error)?;
    for s in &result.series {
        for r in &s.records {
            w.write_record([
                r.cycle.to_string(),
                s.repetition.to_string(),
                r.accuracy.to_string(),
                r.live_nodes.to_string(),
                r.hub_count.to_string(),
                r.msgs_sent.to_string(),
                r.msgs_dropped.to_string(),
                diameter_cell(r.diameter),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<metrics csv>".into(),
        source,
    })
}

/// The pointwise mean series; the repetition column reads `mean`.
pub fn write_mean_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_error)?;
    for r in &result.mean {
        let diameter = match r.diameter {
            None => String::new(),
            Some(None) => Diameter::Unreachable.to_string(),
            Some(Some(d)) => d.to_string(),
        };
        w.write_record([
            r.cycle.to_string(),
            "mean".to_string(),
            r.accuracy.to_string(),
            r.live_nodes.to_string(),
            r.hub_count.to_string(),
            r.msgs_sent.to_string(),
            r.msgs_dropped.to_string(),
            diameter,
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<metrics csv>".into(),
        source,
    })
}
