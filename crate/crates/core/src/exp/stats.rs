//! Series statistics for learning curves.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series is empty")]
    Empty,
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub const SMOOTHING_WINDOW: usize = 100;

/// Trailing moving average; the first `window - 1` entries average the
/// available prefix.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>, StatsError> {
    if series.is_empty() {
        return Err(StatsError::Empty);
    }
    if window == 0 {
        return Err(StatsError::ZeroWindow);
    }
    Ok((0..series.len())
        .map(|i| {
            let part = &series[(i + 1).saturating_sub(window)..=i];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    /// Sample standard deviation; all zero when only one seed is present.
    pub std: Vec<f64>,
    pub single_seed: bool,
}

/// Element-wise mean and sample standard deviation across seeds.
pub fn aggregate_seeds(runs: &[Vec<f64>]) -> Result<Aggregate, StatsError> {
    let first = runs.first().ok_or(StatsError::Empty)?;
    if let Some(r) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(StatsError::LengthMismatch(first.len(), r.len()));
    }
    let n = runs.len() as f64;
    let mut mean = vec![0.0; first.len()];
    let mut std = vec![0.0; first.len()];
    for t in 0..first.len() {
        mean[t] = runs.iter().map(|r| r[t]).sum::<f64>() / n;
        if runs.len() > 1 {
            let ss: f64 = runs.iter().map(|r| (r[t] - mean[t]).powi(2)).sum();
            std[t] = (ss / (n - 1.0)).sqrt();
        }
    }
    Ok(Aggregate {
        mean,
        std,
        single_seed: runs.len() == 1,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation, `0` for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when undefined (fewer than two points
/// or a constant input).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
