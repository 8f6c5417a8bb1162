//! Seed sweeps and run-directory layout.
//!
//! ```text
//! <out>/<run_id>/
//!   config.json          effective config, defaults filled in
//!   summary.json         completed seeds, failures, schema versions
//!   returns.csv
//!   conformal.csv
//!   ppo.csv
//!   checkpoints/seed-<s>-episode-<e>.json
//!   trajectories/seed-<s>.jsonl   final episode of each seed
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OUTPUT_ROOT_VAR, SCHEMA_VERSION};
use super::metrics::{write_csv, ConformalRow, PpoRow, ReturnRow, METRICS_SCHEMA_VERSION};
use super::stats::{smooth, SMOOTHING_WINDOW};
use super::ExpError;
use crate::env::trajectory::write_jsonl;
use crate::par;
use crate::train::{train, TrainRunArtifacts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub config_schema_version: u32,
    pub metrics_schema_version: u32,
    pub completed: Vec<u64>,
    pub failures: Vec<SeedFailure>,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Output root: the explicit override, else `$CAMMARL_OUTPUT_ROOT`, else the
/// config's `output_dir`.
pub fn output_root(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&config.output_dir),
    }
}

/// Trains every seed (in parallel when enabled) and writes the run
/// directory. A failing seed is recorded in the summary; the others still
/// complete and are written.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunSummary, ExpError> {
    config.validate()?;
    let run_id = config.run_id();
    let run_dir = out_root.join(&run_id);
    for dir in [run_dir.clone(), run_dir.join("checkpoints"), run_dir.join("trajectories")] {
        fs::create_dir_all(&dir).map_err(|e| ExpError::io(&dir, e))?;
    }
    write_text(&run_dir.join("config.json"), &config.to_json())?;

    let train_config = config.train_config();
    let results = par::map(&config.seeds, |&seed| train(&train_config, seed));

    let mut returns = Vec::new();
    let mut conformal = Vec::new();
    let mut ppo = Vec::new();
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (&seed, result) in config.seeds.iter().zip(results) {
        match result {
            Ok(art) => {
                returns.extend(return_rows(&run_id, &art)?);
                conformal.extend(conformal_rows(&run_id, &art));
                ppo.extend(ppo_rows(&run_id, &art));
                write_seed_files(&run_dir, &art)?;
                completed.push(seed);
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    write_csv(&run_dir.join("returns.csv"), &returns)?;
    write_csv(&run_dir.join("conformal.csv"), &conformal)?;
    write_csv(&run_dir.join("ppo.csv"), &ppo)?;

    let summary = RunSummary {
        run_id,
        run_dir: run_dir.clone(),
        config_schema_version: SCHEMA_VERSION,
        metrics_schema_version: METRICS_SCHEMA_VERSION,
        completed,
        failures,
    };
    let mut stored = summary.clone();
    stored.run_dir = PathBuf::from(".");
    write_text(
        &run_dir.join("summary.json"),
        &serde_json::to_string_pretty(&stored).expect("summary serialises"),
    )?;
    Ok(summary)
}

fn write_text(path: &Path, text: &str) -> Result<(), ExpError> {
    fs::write(path, format!("{text}\n")).map_err(|e| ExpError::io(path, e))
}

fn write_seed_files(run_dir: &Path, art: &TrainRunArtifacts) -> Result<(), ExpError> {
    for ckpt in &art.checkpoints {
        let path = run_dir
            .join("checkpoints")
            .join(format!("seed-{}-episode-{}.json", art.seed, ckpt.episode));
        write_text(&path, &serde_json::to_string(ckpt).expect("checkpoint serialises"))?;
    }
    let path = run_dir.join("trajectories").join(format!("seed-{}.jsonl", art.seed));
    let file = fs::File::create(&path).map_err(|e| ExpError::io(&path, e))?;
    write_jsonl(BufWriter::new(file), &art.trajectory).map_err(|e| ExpError::io(&path, e))
}

pub fn return_rows(run_id: &str, art: &TrainRunArtifacts) -> Result<Vec<ReturnRow>, ExpError> {
    let agents = art.returns.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(art.returns.len() * agents);
    let smoothed: Vec<Vec<f64>> = (0..agents)
        .map(|i| smooth(&art.agent_returns(i), SMOOTHING_WINDOW))
        .collect::<Result<_, _>>()?;
    for (e, per_agent) in art.returns.iter().enumerate() {
        for (agent, &ret) in per_agent.iter().enumerate() {
            rows.push(ReturnRow {
                run_id: run_id.to_string(),
                seed: art.seed,
                episode: e + 1,
                agent,
                ret,
                smoothed_return: smoothed[agent][e],
            });
        }
    }
    Ok(rows)
}

pub fn conformal_rows(run_id: &str, art: &TrainRunArtifacts) -> Vec<ConformalRow> {
    let mut records = art.conformal.clone();
    records.sort_by_key(|r| (r.update, r.model_agent));
    records
        .into_iter()
        .map(|r| ConformalRow {
            run_id: run_id.to_string(),
            seed: art.seed,
            update: r.update,
            model_agent: r.model_agent,
            mean_set_size: r.mean_set_size,
            coverage: r.coverage,
            cls_accuracy: r.classifier.accuracy,
            cls_loss: r.classifier.loss,
            lambda: r.calibration.map(|c| c.lambda),
            k_reg: r.calibration.map(|c| c.k_reg),
            tau: r.calibration.map(|c| c.tau),
        })
        .collect()
}

pub fn ppo_rows(run_id: &str, art: &TrainRunArtifacts) -> Vec<PpoRow> {
    art.ppo
        .iter()
        .map(|r| PpoRow {
            run_id: run_id.to_string(),
            seed: art.seed,
            update: r.update,
            agent: r.agent,
            policy_loss: r.stats.policy_loss,
            value_loss: r.stats.value_loss,
            entropy: r.stats.entropy,
            clip_fraction: r.stats.clip_fraction,
        })
        .collect()
}
