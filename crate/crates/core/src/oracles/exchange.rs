//! File drop protocol for simulators that run outside this process.
//!
//! For round `k` the tool writes `round_<k>.requests.json`; the external
//! workflow answers with `round_<k>.results.json`. Both files are JSON
//! arrays, one record per simulation (repeats already expanded).

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};

use crate::acquisition::QueryBatch;
use crate::domain::Fidelity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestRecord {
    pub query_id: String,
    pub x: Vec<f64>,
    pub fidelity: Fidelity,
}

fn binary_label<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u8, D::Error> {
    let v = u64::deserialize(d)?;
    match v {
        0 | 1 => Ok(v as u8),
        other => Err(de::Error::invalid_value(
            de::Unexpected::Unsigned(other),
            &"a binary label 0 or 1",
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub query_id: String,
    #[serde(deserialize_with = "binary_label")]
    pub y: u8,
}

pub fn requests_path(exchange_dir: &Path, round_id: u64) -> PathBuf {
    exchange_dir.join(format!("round_{round_id}.requests.json"))
}

pub fn results_path(exchange_dir: &Path, round_id: u64) -> PathBuf {
    exchange_dir.join(format!("round_{round_id}.results.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("records serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("{e} (line {}: {:?})", e.line(), text.lines().nth(e.line().saturating_sub(1)).unwrap_or("")),
    })
}

/// Writes one request per repeat of every query in `batch`.
pub fn emit_requests(batch: &QueryBatch, exchange_dir: &Path, round_id: u64) -> Result<PathBuf> {
    let mut records = Vec::new();
    for (qi, q) in batch.queries.iter().enumerate() {
        for (k, x) in q.samples.iter().enumerate() {
            records.push(RequestRecord {
                query_id: format!("r{round_id}-q{qi}-s{k}"),
                x: x.clone(),
                fidelity: q.fidelity,
            });
        }
    }
    let path = requests_path(exchange_dir, round_id);
    write_json(&path, &records)?;
    Ok(path)
}

pub fn read_requests(exchange_dir: &Path, round_id: u64) -> Result<Vec<RequestRecord>> {
    read_json(&requests_path(exchange_dir, round_id))
}

/// Helper for tests and synthetic drivers: writes a results file.
pub fn write_results(exchange_dir: &Path, round_id: u64, results: &[ResultRecord]) -> Result<PathBuf> {
    let path = results_path(exchange_dir, round_id);
    write_json(&path, &results)?;
    Ok(path)
}

/// Parses and validates the results of a round against its requests.
///
/// Unknown or duplicated ids are always rejected; missing ids are rejected
/// unless `accept_partial` is set.
pub fn ingest_results(exchange_dir: &Path, round_id: u64, accept_partial: bool) -> Result<Vec<(String, u8)>> {
    let requests = read_requests(exchange_dir, round_id)?;
    let results: Vec<ResultRecord> = read_json(&results_path(exchange_dir, round_id))?;
    let expected: HashMap<&str, ()> = requests.iter().map(|r| (r.query_id.as_str(), ())).collect();

    let mut seen = BTreeSet::new();
    let mut unknown = Vec::new();
    let mut duplicated = Vec::new();
    for r in &results {
        if !expected.contains_key(r.query_id.as_str()) {
            unknown.push(r.query_id.clone());
        } else if !seen.insert(r.query_id.clone()) {
            duplicated.push(r.query_id.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Validation(format!("unknown query ids: {}", unknown.join(", "))));
    }
    if !duplicated.is_empty() {
        return Err(Error::Validation(format!("duplicated query ids: {}", duplicated.join(", "))));
    }
    let missing: Vec<&str> = requests
        .iter()
        .map(|r| r.query_id.as_str())
        .filter(|id| !seen.contains(*id))
        .collect();
    if !missing.is_empty() && !accept_partial {
        return Err(Error::Validation(format!("missing results for query ids: {}", missing.join(", "))));
    }
    Ok(results.into_iter().map(|r| (r.query_id, r.y)).collect())
}
