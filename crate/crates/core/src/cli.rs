//! `bpmi` command-line interface. Exit codes: 0 success, 1 runtime or I/O
//! failure, 2 usage or validation failure.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::acquisition::greedy_batch;
use crate::bfgpc::{check_major_version, fit, predict_proba, BfgpcModel, LabeledDataset, Observation};
use crate::domain::Fidelity;
use crate::error::{Error, Result};
use crate::harness::{run_experiment, summarize, write_run_csv, write_summary_csv, ExperimentConfig};
use crate::oracles::{emit_requests, ingest_results, read_requests, results_path};

pub const DATASET_FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Parser)]
#[command(name = "bpmi", version, about = "Bi-fidelity GP classification with batch active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a toy-problem experiment and write metrics CSVs.
    RunToy {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a dataset (or load a model) and emit a request file.
    Suggest {
        /// Labeled dataset JSON to train on.
        #[arg(long, required_unless_present = "model")]
        dataset: Option<PathBuf>,
        /// Trained model document; skips training.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        exchange_dir: PathBuf,
        #[arg(long)]
        round: u64,
    },
    /// Merge a round's results into a dataset file.
    Ingest {
        #[arg(long)]
        exchange_dir: PathBuf,
        #[arg(long)]
        round: u64,
        #[arg(long)]
        dataset: PathBuf,
        /// Merge the answered subset when some requests have no result.
        #[arg(long)]
        accept_partial: bool,
    },
    /// Evaluate a model on a regular grid; writes CSV and a PGM image.
    PredictGrid {
        #[arg(long)]
        model: PathBuf,
        /// Points per axis (at least 2).
        #[arg(long)]
        resolution: usize,
        /// L or H.
        #[arg(long, default_value = "H")]
        fidelity: Fidelity,
        /// CSV path; the image goes next to it with a .pgm extension.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Experiment config plus an optional output directory, parsed strictly.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfigFile {
    pub experiment: ExperimentConfig,
    pub out_dir: Option<PathBuf>,
}

impl CliConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        let out_dir = match value.as_object_mut() {
            Some(obj) => match obj.remove("out_dir") {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::String(s)) => Some(PathBuf::from(s)),
                Some(other) => return Err(Error::Config(format!("out_dir must be a string, got {other}"))),
            },
            None => return Err(Error::Config("config must be a JSON object".into())),
        };
        let experiment: ExperimentConfig = serde_json::from_value(value).map_err(parse_err)?;
        experiment.validate()?;
        Ok(Self { experiment, out_dir })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub x: Vec<f64>,
    pub y: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
}

/// Labeled data on disk, with optional provenance per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub format_version: String,
    pub lf: Vec<DatasetEntry>,
    pub hf: Vec<DatasetEntry>,
}

impl Default for DatasetFile {
    fn default() -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION.into(),
            lf: Vec::new(),
            hf: Vec::new(),
        }
    }
}

impl DatasetFile {
    pub fn from_dataset(data: &LabeledDataset) -> Self {
        let entries = |obs: &[Observation]| {
            obs.iter()
                .map(|o| DatasetEntry {
                    x: o.x.clone(),
                    y: o.y,
                    round_id: None,
                    query_id: None,
                })
                .collect()
        };
        Self {
            lf: entries(&data.lf),
            hf: entries(&data.hf),
            ..Self::default()
        }
    }

    pub fn to_dataset(&self) -> LabeledDataset {
        let obs = |e: &[DatasetEntry]| e.iter().map(|d| Observation::new(d.x.clone(), d.y)).collect();
        LabeledDataset {
            lf: obs(&self.lf),
            hf: obs(&self.hf),
        }
    }

    pub fn len(&self) -> usize {
        self.lf.len() + self.hf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        check_major_version(&file.format_version, DATASET_FORMAT_VERSION)?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::NumericalFailure { .. } | Error::TrainingFailure(_) => 1,
        Error::InvalidArgument(_)
        | Error::Unsupported(_)
        | Error::Config(_)
        | Error::Validation(_)
        | Error::Parse { .. } => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::RunToy { config, out: out_dir } => cmd_run_toy(&config, out_dir.as_deref(), out),
        Command::Suggest {
            dataset,
            model,
            config,
            exchange_dir,
            round,
        } => cmd_suggest(dataset.as_deref(), model.as_deref(), &config, &exchange_dir, round, out),
        Command::Ingest {
            exchange_dir,
            round,
            dataset,
            accept_partial,
        } => cmd_ingest(&exchange_dir, round, &dataset, accept_partial, out),
        Command::PredictGrid {
            model,
            resolution,
            fidelity,
            out: path,
        } => cmd_predict_grid(&model, resolution, fidelity, &path, out),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) {
    let _ = writeln!(out, "{msg}");
}

pub fn cmd_run_toy(config_path: &Path, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let file = CliConfigFile::load(config_path)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or(file.out_dir)
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))?;
    let config = file.experiment;
    if !config.oracle.is_toy() {
        return Err(Error::Config("run-toy needs a toy oracle".into()));
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let runs = run_experiment(&config)?;
    let stem = format!("runs_{}", config.strategy.as_str().to_lowercase());
    let csv_path = dir.join(format!("{stem}.csv"));
    write_run_csv(&csv_path, &runs, &config)?;
    let summary = summarize(&runs);
    write_summary_csv(&dir.join(format!("{stem}.summary.csv")), &summary)?;
    let failed = runs.iter().filter(|r| r.failed()).count();
    say(out, format_args!("wrote {} ({} repeats, {failed} failed)", csv_path.display(), runs.len()));
    if let Some(last) = summary.last() {
        say(
            out,
            format_args!("final round {}: elpp {:.5} ± {:.5}", last.round, last.elpp_mean, last.elpp_std),
        );
    }
    Ok(())
}

pub fn model_path(exchange_dir: &Path, round_id: u64) -> PathBuf {
    exchange_dir.join(format!("round_{round_id}.model.json"))
}

pub fn cmd_suggest(
    dataset: Option<&Path>,
    model: Option<&Path>,
    config_path: &Path,
    exchange_dir: &Path,
    round_id: u64,
    out: &mut dyn Write,
) -> Result<()> {
    let config = CliConfigFile::load(config_path)?.experiment;
    let results = results_path(exchange_dir, round_id);
    if results.exists() {
        return Err(Error::Validation(format!(
            "round {round_id} already has results at {}; refusing to overwrite",
            results.display()
        )));
    }
    let model = match (model, dataset) {
        (Some(path), _) => BfgpcModel::load(path)?,
        (None, Some(path)) => {
            let data = DatasetFile::load(path)?.to_dataset();
            if data.is_empty() {
                return Err(Error::invalid("dataset is empty; cannot train"));
            }
            fit(&config.oracle.domain(), &data, &config.training_for(0, round_id as usize))?.model
        }
        (None, None) => return Err(Error::invalid("pass --dataset or --model")),
    };
    fs::create_dir_all(exchange_dir).map_err(|e| Error::io(exchange_dir, e))?;
    let batch = greedy_batch(&model, config.strategy, &config.acquisition_for(0, round_id as usize))?;
    let requests = emit_requests(&batch, exchange_dir, round_id)?;
    let model_out = model_path(exchange_dir, round_id);
    model.save(&model_out)?;
    say(
        out,
        format_args!(
            "round {round_id}: {} LF, {} HF queries ({} samples), total cost {}",
            batch.count(Fidelity::Low),
            batch.count(Fidelity::High),
            batch.num_samples(),
            batch.total_cost
        ),
    );
    say(out, format_args!("requests: {}", requests.display()));
    say(out, format_args!("model: {}", model_out.display()));
    Ok(())
}

pub fn cmd_ingest(
    exchange_dir: &Path,
    round_id: u64,
    dataset_path: &Path,
    accept_partial: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let mut dataset = DatasetFile::load(dataset_path)?;
    let requests = read_requests(exchange_dir, round_id)?;
    let results = ingest_results(exchange_dir, round_id, accept_partial)?;
    let known: HashSet<&str> = dataset
        .lf
        .iter()
        .chain(&dataset.hf)
        .filter_map(|e| e.query_id.as_deref())
        .collect();
    let dupes: Vec<&str> = results
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| known.contains(id))
        .collect();
    if !dupes.is_empty() {
        return Err(Error::Validation(format!(
            "{} query ids already in the dataset (round already ingested?): {}",
            dupes.len(),
            dupes.join(", ")
        )));
    }
    let (mut n_lf, mut n_hf) = (0, 0);
    for (id, y) in results {
        let req = requests
            .iter()
            .find(|r| r.query_id == id)
            .ok_or_else(|| Error::Validation(format!("result {id} has no matching request")))?;
        let entry = DatasetEntry {
            x: req.x.clone(),
            y,
            round_id: Some(round_id),
            query_id: Some(id),
        };
        match req.fidelity {
            Fidelity::Low => {
                dataset.lf.push(entry);
                n_lf += 1;
            }
            Fidelity::High => {
                dataset.hf.push(entry);
                n_hf += 1;
            }
        }
    }
    dataset.save(dataset_path)?;
    say(
        out,
        format_args!("merged {n_lf} LF and {n_hf} HF results; dataset now {} entries", dataset.len()),
    );
    Ok(())
}

/// Grid points in row-major image order: the first row is the top of the
/// domain (largest x2), x1 increases along each row.
pub fn grid_points(model: &BfgpcModel, resolution: usize) -> Result<Vec<Vec<f64>>> {
    if resolution < 2 {
        return Err(Error::invalid("resolution must be >= 2"));
    }
    if model.input_dim() != 2 {
        return Err(Error::Unsupported(format!(
            "grid rendering needs a 2-D domain, model has {}",
            model.input_dim()
        )));
    }
    let b = model.domain.bounds();
    let coord = |k: usize, i: usize| b[k][0] + (b[k][1] - b[k][0]) * i as f64 / (resolution - 1) as f64;
    let mut pts = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let x2 = coord(1, resolution - 1 - row);
        for col in 0..resolution {
            pts.push(vec![coord(0, col), x2]);
        }
    }
    Ok(pts)
}

/// 8-bit binary PGM, p = 0 black, p = 1 white.
pub fn encode_pgm(probs: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(probs.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    bytes
}

pub fn cmd_predict_grid(
    model_path: &Path,
    resolution: usize,
    fidelity: Fidelity,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let model = BfgpcModel::load(model_path)?;
    let points = grid_points(&model, resolution)?;
    let probs = predict_proba(&model, &points, fidelity)?;
    let mut csv = String::from("x1,x2,p\n");
    for (x, p) in points.iter().zip(&probs) {
        csv.push_str(&format!("{},{},{}\n", x[0], x[1], p));
    }
    fs::write(out_path, csv).map_err(|e| Error::io(out_path, e))?;
    let pgm = out_path.with_extension("pgm");
    fs::write(&pgm, encode_pgm(&probs, resolution, resolution)).map_err(|e| Error::io(&pgm, e))?;
    say(out, format_args!("wrote {} and {}", out_path.display(), pgm.display()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_is_strict() {
        let p = Path::new("c.json");
        let ok = CliConfigFile::parse(r#"{"rounds": 2, "out_dir": "o"}"#, p).unwrap();
        assert_eq!(ok.experiment.rounds, 2);
        assert_eq!(ok.out_dir, Some(PathBuf::from("o")));
        assert!(matches!(CliConfigFile::parse(r#"{"roundz": 2}"#, p), Err(Error::Parse { .. })));
        assert!(matches!(
            CliConfigFile::parse(r#"{"training": {"stepz": 1}}"#, p),
            Err(Error::Parse { .. })
        ));
        assert!(CliConfigFile::parse(r#"{"rounds": 0}"#, p).is_err());
    }

    #[test]
    fn pgm_encoding() {
        let img = encode_pgm(&[0.0, 1.0, 0.5, 0.2], 2, 2);
        assert_eq!(&img[..11], b"P5\n2 2\n255\n");
        assert_eq!(&img[11..], &[0, 255, 128, 51]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::TrainingFailure("x".into())), 1);
        assert_eq!(run(["bpmi", "--help"]), 0);
        assert_eq!(run(["bpmi", "no-such-command"]), 2);
        assert_eq!(run(["bpmi", "predict-grid", "-m", "x"]), 2);
    }
}
