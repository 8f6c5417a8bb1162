//! Final-window comparison of modeling modes.
//!
//! Each run's agent-0 returns are smoothed per seed; the score of a seed is
//! the mean smoothed return over the last 10% of episodes. Modes are ranked
//! by the mean score over seeds. Two modes tie when their means differ by at
//! most one pooled standard deviation, `sqrt((s1^2 + s2^2) / 2)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{read_csv, ReturnRow};
use super::stats::{mean, sample_std, smooth, SMOOTHING_WINDOW};
use super::ExpError;
use crate::cammarl::ModelingMode;

/// Fraction of episodes forming the final window.
pub const FINAL_FRACTION: f64 = 0.1;

/// Mean of the smoothed series over the last `FINAL_FRACTION` of episodes.
pub fn final_window_score(returns: &[f64]) -> Result<f64, ExpError> {
    let smoothed = smooth(returns, SMOOTHING_WINDOW)?;
    let w = ((returns.len() as f64 * FINAL_FRACTION).ceil() as usize).max(1);
    Ok(mean(&smoothed[smoothed.len() - w..]))
}

pub fn pooled_std(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / 2.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub label: String,
    pub mode: ModelingMode,
    pub env: String,
    pub episodes: usize,
    /// Per-seed final-window scores, `(seed, score)`.
    pub seed_scores: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl ModeSummary {
    pub fn from_scores(label: String, mode: ModelingMode, env: String, episodes: usize, seed_scores: Vec<(u64, f64)>) -> Self {
        let scores: Vec<f64> = seed_scores.iter().map(|s| s.1).collect();
        Self {
            label,
            mode,
            env,
            episodes,
            mean: mean(&scores),
            std: sample_std(&scores),
            seed_scores,
        }
    }

    /// Reads `config.json` and `returns.csv` from a run directory.
    pub fn load(run_dir: &Path) -> Result<Self, ExpError> {
        let config: ExperimentConfig = {
            let path = run_dir.join("config.json");
            let text = std::fs::read_to_string(&path).map_err(|e| ExpError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| ExpError::io(&path, e))?
        };
        let rows: Vec<ReturnRow> = read_csv(&run_dir.join("returns.csv"))?;
        let mut per_seed: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.agent == 0) {
            per_seed.entry(r.seed).or_default().push((r.episode, r.ret));
        }
        if per_seed.is_empty() {
            return Err(ExpError::Incompatible(format!("{} has no completed seeds", run_dir.display())));
        }
        let mut seed_scores = Vec::with_capacity(per_seed.len());
        for (seed, mut eps) in per_seed {
            eps.sort_by_key(|e| e.0);
            let series: Vec<f64> = eps.into_iter().map(|e| e.1).collect();
            seed_scores.push((seed, final_window_score(&series)?));
        }
        Ok(Self::from_scores(
            config.run_id(),
            config.mode,
            config.env.name().to_string(),
            config.episodes,
            seed_scores,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Above,
    Tie,
    Below,
}

/// How `a` relates to `b` at one pooled standard deviation.
pub fn relate(a: &ModeSummary, b: &ModeSummary) -> Relation {
    let diff = a.mean - b.mean;
    let pooled = pooled_std(a.std, b.std);
    if diff.abs() <= pooled {
        Relation::Tie
    } else if diff > 0.0 {
        Relation::Above
    } else {
        Relation::Below
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub higher: String,
    pub lower: String,
    pub difference: f64,
    pub pooled_std: f64,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub giam_vs_cammarl: PairCheck,
    pub cammarl_vs_noam: PairCheck,
    /// GIAM is not below CAMMARL beyond one pooled std, and CAMMARL is above
    /// NOAM by more than one pooled std.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub env: String,
    pub episodes: usize,
    /// Ranked by mean final-window return, best first.
    pub rows: Vec<ModeSummary>,
    /// Adjacent ranked pairs whose means differ by at most one pooled std.
    pub ties: Vec<(String, String)>,
    pub ordering: Option<OrderingCheck>,
}

fn pair(a: &ModeSummary, b: &ModeSummary) -> PairCheck {
    PairCheck {
        higher: a.label.clone(),
        lower: b.label.clone(),
        difference: a.mean - b.mean,
        pooled_std: pooled_std(a.std, b.std),
        relation: relate(a, b),
    }
}

pub fn compare_summaries(mut rows: Vec<ModeSummary>) -> Result<ComparisonReport, ExpError> {
    let first = rows.first().ok_or_else(|| ExpError::Incompatible("no runs given".into()))?.clone();
    if let Some(r) = rows.iter().find(|r| r.env != first.env || r.episodes != first.episodes) {
        return Err(ExpError::Incompatible(format!(
            "{} is {} with {} episodes but {} is {} with {} episodes",
            r.label, r.env, r.episodes, first.label, first.env, first.episodes
        )));
    }
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.label.cmp(&b.label)));
    let ties = rows
        .windows(2)
        .filter(|w| relate(&w[0], &w[1]) == Relation::Tie)
        .map(|w| (w[0].label.clone(), w[1].label.clone()))
        .collect();
    let find = |pred: &dyn Fn(ModelingMode) -> bool| rows.iter().find(|r| pred(r.mode));
    let ordering = match (
        find(&|m| m == ModelingMode::Giam),
        find(&|m| matches!(m, ModelingMode::Cammarl(_))),
        find(&|m| m == ModelingMode::Noam),
    ) {
        (Some(g), Some(c), Some(n)) => {
            let giam_vs_cammarl = pair(g, c);
            let cammarl_vs_noam = pair(c, n);
            let holds = giam_vs_cammarl.relation != Relation::Below && cammarl_vs_noam.relation == Relation::Above;
            Some(OrderingCheck {
                giam_vs_cammarl,
                cammarl_vs_noam,
                holds,
            })
        }
        _ => None,
    };
    Ok(ComparisonReport {
        env: first.env,
        episodes: first.episodes,
        rows,
        ties,
        ordering,
    })
}

/// Loads and compares run directories.
pub fn compare_modes(run_dirs: &[PathBuf]) -> Result<ComparisonReport, ExpError> {
    let rows = run_dirs.iter().map(|d| ModeSummary::load(d)).collect::<Result<Vec<_>, _>>()?;
    compare_summaries(rows)
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "env {} | {} episodes | final window = last {:.0}%", self.env, self.episodes, FINAL_FRACTION * 100.0)?;
        writeln!(f, "{:<5} {:<32} {:<20} {:>12} {:>10} {:>6}", "rank", "run", "mode", "mean", "std", "seeds")?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                f,
                "{:<5} {:<32} {:<20} {:>12.4} {:>10.4} {:>6}",
                i + 1,
                r.label,
                r.mode.to_string(),
                r.mean,
                r.std,
                r.seed_scores.len()
            )?;
        }
        for (a, b) in &self.ties {
            writeln!(f, "tie: {a} ~ {b} (within 1 pooled std)")?;
        }
        if let Some(o) = &self.ordering {
            for p in [&o.giam_vs_cammarl, &o.cammarl_vs_noam] {
                writeln!(
                    f,
                    "{} - {} = {:.4} (pooled std {:.4}): {:?}",
                    p.higher, p.lower, p.difference, p.pooled_std, p.relation
                )?;
            }
            writeln!(f, "GIAM >= CAMMARL > NOAM: {}", if o.holds { "holds" } else { "does not hold" })?;
        }
        Ok(())
    }
}
