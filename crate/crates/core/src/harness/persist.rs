use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::experiment::{ExperimentConfig, RoundRecord, RunLog};
use super::metrics::SummaryRecord;
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 9] = [
    "repeat",
    "round",
    "cumulative_cost",
    "elpp",
    "mse",
    "n_lf_queries",
    "n_hf_queries",
    "mean_repeats",
    "wall_ms",
];

/// SHA-256 of the config's JSON serialization, hex encoded.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
    seed: u64,
    failures: Vec<(usize, &'a str)>,
}

/// Writes one row per (repeat, round) to `path` and the resolved config to
/// `path` with a `.json` extension. Returns the sidecar path.
pub fn write_run_csv(path: &Path, runs: &[RunLog], config: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = create_writer(path)?;
    w.write_record(CSV_COLUMNS).map_err(|e| csv_err(path, e))?;
    for run in runs {
        for r in &run.records {
            w.write_record([
                run.repeat.to_string(),
                r.round.to_string(),
                r.cumulative_cost.to_string(),
                r.elpp.to_string(),
                opt(r.mse),
                r.n_lf_queries.to_string(),
                r.n_hf_queries.to_string(),
                r.mean_repeats.to_string(),
                r.wall_ms.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar_path = path.with_extension("json");
    let sidecar = Sidecar {
        config,
        config_hash: config_hash(config)?,
        seed: config.seed,
        failures: runs
            .iter()
            .filter_map(|r| r.failure.as_deref().map(|f| (r.repeat, f)))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&sidecar_path, json).map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(sidecar_path)
}

/// Reads a CSV written by [`write_run_csv`] back into per-repeat logs
/// (records only).
pub fn read_run_csv(path: &Path) -> Result<Vec<RunLog>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {headers:?}"),
        });
    }
    let mut runs: Vec<RunLog> = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |field: &str| Error::Parse {
            path: path.to_path_buf(),
            message: format!("row {}: bad {field}", line + 2),
        };
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i]));
        let int = |i: usize| row[i].parse::<usize>().map_err(|_| bad(CSV_COLUMNS[i]));
        let repeat = int(0)?;
        let record = RoundRecord {
            round: int(1)?,
            cumulative_cost: num(2)?,
            elpp: num(3)?,
            mse: if row[4].is_empty() { None } else { Some(num(4)?) },
            n_lf_queries: int(5)?,
            n_hf_queries: int(6)?,
            mean_repeats: num(7)?,
            wall_ms: row[8].parse().map_err(|_| bad("wall_ms"))?,
        };
        match runs.iter_mut().find(|r| r.repeat == repeat) {
            Some(run) => run.records.push(record),
            None => runs.push(RunLog {
                repeat,
                records: vec![record],
                ..RunLog::default()
            }),
        }
    }
    Ok(runs)
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRecord]) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record([
        "round",
        "count",
        "cumulative_cost_mean",
        "elpp_mean",
        "elpp_std",
        "mse_mean",
        "mse_std",
    ])
    .map_err(|e| csv_err(path, e))?;
    for s in summary {
        w.write_record([
            s.round.to_string(),
            s.count.to_string(),
            s.cumulative_cost_mean.to_string(),
            s.elpp_mean.to_string(),
            s.elpp_std.to_string(),
            opt(s.mse_mean),
            opt(s.mse_std),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
