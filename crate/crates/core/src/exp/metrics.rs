//! CSV metrics rows.
//!
//! Every file starts with a header row, even when it has no data rows.
//! Optional values are written as empty fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ExpError;

/// Version of the column layout below; echoed into each run's summary.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub trait MetricsRow: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub run_id: String,
    pub seed: u64,
    pub episode: usize,
    pub agent: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub smoothed_return: f64,
}

impl MetricsRow for ReturnRow {
    const HEADER: &'static [&'static str] = &["run_id", "seed", "episode", "agent", "return", "smoothed_return"];
}

/// One conformal model version: fit statistics at its update plus the size
/// and coverage of the sets it produced while deployed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalRow {
    pub run_id: String,
    pub seed: u64,
    pub update: usize,
    pub model_agent: usize,
    pub mean_set_size: Option<f64>,
    pub coverage: Option<f64>,
    pub cls_accuracy: f64,
    pub cls_loss: f64,
    pub lambda: Option<f64>,
    pub k_reg: Option<usize>,
    pub tau: Option<f64>,
}

impl MetricsRow for ConformalRow {
    const HEADER: &'static [&'static str] = &[
        "run_id",
        "seed",
        "update",
        "model_agent",
        "mean_set_size",
        "coverage",
        "cls_accuracy",
        "cls_loss",
        "lambda",
        "k_reg",
        "tau",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoRow {
    pub run_id: String,
    pub seed: u64,
    pub update: usize,
    pub agent: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl MetricsRow for PpoRow {
    const HEADER: &'static [&'static str] = &[
        "run_id",
        "seed",
        "update",
        "agent",
        "policy_loss",
        "value_loss",
        "entropy",
        "clip_fraction",
    ];
}

pub fn write_rows<W: Write, T: MetricsRow>(out: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read, T: MetricsRow>(input: R) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_csv<T: MetricsRow>(path: &Path, rows: &[T]) -> Result<(), ExpError> {
    let file = File::create(path).map_err(|e| ExpError::io(path, e))?;
    write_rows(BufWriter::new(file), rows).map_err(|e| ExpError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_csv<T: MetricsRow>(path: &Path) -> Result<Vec<T>, ExpError> {
    let file = File::open(path).map_err(|e| ExpError::io(path, e))?;
    read_rows(std::io::BufReader::new(file)).map_err(|e| ExpError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
