//! Regularized adaptive prediction sets over another agent's actions.
//!
//! A classifier `f: obs -> logits` is fitted on observed `(o_other, a_other)`
//! pairs. For class probabilities `p`, write `rank(a)` for the 1-based
//! position of `a` in descending-probability order (ties by ascending id) and
//! `mass(a)` for the total probability ranked before `a`. The generalised
//! score of action `a` is
//!
//! ```text
//! s(a) = mass(a) + p[a] * u + lambda * max(rank(a) - k_reg, 0)
//! ```
//!
//! with `u ~ U[0, 1]`. The threshold `tau` is the `ceil((n + 1)(1 - alpha))`-th
//! smallest calibration score of the true labels, and the prediction set is
//! every action with `s(a) <= tau`. Empty sets are replaced by the top-1
//! action.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{batch_from_rows, softmax, softmax_cross_entropy, Activation, AdamConfig, Mlp, NnError};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),
    #[error("label {label} out of range for {classes} actions")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("calibration split has {0} records, at least 2 are needed")]
    CalibrationTooSmall(usize),
    #[error("model has not been calibrated")]
    Uncalibrated,
    #[error("no training records")]
    EmptyBuffer,
    #[error("no labeled pairs to evaluate")]
    EmptyInput,
    #[error("invalid classifier setting `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
}

const PROB_TOLERANCE: f64 = 1e-6;

pub fn validate_probs(probs: &[f64]) -> Result<(), ConformalError> {
    if probs.is_empty() {
        return Err(ConformalError::InvalidProbs("empty".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(ConformalError::InvalidProbs(format!("entry {p} is not a non-negative number")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(ConformalError::InvalidProbs(format!("sums to {sum}")));
    }
    Ok(())
}

/// Action ids by descending probability, ties broken by ascending id.
pub fn rank_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// 1-based rank of `label` under [`rank_order`].
pub fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    1 + probs
        .iter()
        .enumerate()
        .filter(|&(a, &q)| q > p || (q == p && a < label))
        .count()
}

fn penalty(lambda: f64, rank: usize, k_reg: usize) -> f64 {
    lambda * rank.saturating_sub(k_reg) as f64
}

pub fn generalized_score(probs: &[f64], label: usize, u: f64, lambda: f64, k_reg: usize) -> Result<f64, ConformalError> {
    validate_probs(probs)?;
    if label >= probs.len() {
        return Err(ConformalError::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let order = rank_order(probs);
    let mut mass = 0.0;
    for (i, &a) in order.iter().enumerate() {
        if a == label {
            return Ok(mass + probs[label] * u + penalty(lambda, i + 1, k_reg));
        }
        mass += probs[a];
    }
    unreachable!("label is a valid index")
}

/// Calibration score of `label` for the sets `predict_set` actually returns.
///
/// The top-ranked action is always in the returned set (an empty set falls
/// back to it), so it is covered at every threshold and scores 0. Any other
/// label keeps its `generalized_score`. Calibrating on the raw score instead
/// over-covers whenever the fallback fires.
pub fn deployed_score(probs: &[f64], label: usize, u: f64, lambda: f64, k_reg: usize) -> Result<f64, ConformalError> {
    let score = generalized_score(probs, label, u, lambda, k_reg)?;
    Ok(if rank_order(probs)[0] == label { 0.0 } else { score })
}

/// Conformal quantile: the `ceil((n + 1)(1 - alpha))`-th smallest score, or
/// `+inf` when that index exceeds `n`.
pub fn calibrate_tau(cal_scores: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    if cal_scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    let n = cal_scores.len();
    let k = quantile_index(n, alpha);
    if k > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = cal_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// `ceil((n + 1)(1 - alpha))`, guarded against representation error.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    (x - 1e-9).ceil().max(1.0) as usize
}

/// Smallest `k` such that at least a `1 - alpha` fraction of `ranks` is `<= k`.
pub fn adaptive_k_reg(ranks: &[usize], alpha: f64) -> usize {
    if ranks.is_empty() {
        return 1;
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let need = ((1.0 - alpha) * ranks.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[need.min(sorted.len()) - 1]
}

/// A prediction set, ranked by descending classifier probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalSet {
    pub actions: Vec<usize>,
    pub tau: f64,
    pub lambda: f64,
    pub k_reg: usize,
    pub u: f64,
}

impl ConformalSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, action: usize) -> bool {
        self.actions.contains(&action)
    }
}

pub fn predict_set(probs: &[f64], tau: f64, lambda: f64, k_reg: usize, u: f64) -> Result<ConformalSet, ConformalError> {
    validate_probs(probs)?;
    let order = rank_order(probs);
    let mut mass = 0.0;
    let mut actions = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        let score = mass + probs[a] * u + penalty(lambda, i + 1, k_reg);
        if score <= tau {
            actions.push(a);
        }
        mass += probs[a];
    }
    if actions.is_empty() {
        actions.push(order[0]);
    }
    Ok(ConformalSet {
        actions,
        tau,
        lambda,
        k_reg,
        u,
    })
}

/// Classifier training knobs and buffer policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub minibatch: usize,
    /// Passes over the train split per conformal update.
    pub epochs: usize,
    pub train_fraction: f64,
    /// Sliding-window size of the labeled observation buffer.
    pub buffer_capacity: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 1e-3,
            minibatch: 64,
            epochs: 1,
            train_fraction: 0.8,
            buffer_capacity: 50_000,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ConformalError> {
        let bad = |field, message: &str| {
            Err(ConformalError::InvalidConfig {
                field,
                message: message.to_string(),
            })
        };
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "needs at least one positive layer width");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.minibatch == 0 {
            return bad("minibatch", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", "must lie in (0, 1)");
        }
        if self.buffer_capacity < 2 {
            return bad("buffer_capacity", "must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObs {
    pub obs: Vec<f64>,
    pub action: usize,
}

/// Borrowed `(observation, true action)` pair.
pub type Labeled<'a> = (&'a [f64], usize);

/// Sliding window of the most recent `(o_other, a_other)` pairs.
#[derive(Debug, Clone)]
pub struct LabeledObsBuffer {
    records: VecDeque<LabeledObs>,
    capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
}

impl LabeledObsBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, obs: Vec<f64>, action: usize) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(LabeledObs { obs, action });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&LabeledObs> {
        self.records.get(i)
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut LabeledObs> {
        self.records.get_mut(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledObs> {
        self.records.iter()
    }

    pub fn select(&self, idx: &[usize]) -> Vec<Labeled<'_>> {
        idx.iter()
            .map(|&i| {
                let r = &self.records[i];
                (r.obs.as_slice(), r.action)
            })
            .collect()
    }

    /// Fresh random train/calibration partition of the current records.
    pub fn split<R: Rng + ?Sized>(&self, train_fraction: f64, rng: &mut R) -> Split {
        let n = self.records.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut n_train = (n as f64 * train_fraction).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        } else {
            n_train = n;
        }
        let calibration = idx.split_off(n_train);
        Split { train: idx, calibration }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierStats {
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub lambda: f64,
    pub k_reg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub calibration: Calibration,
    /// Mean tuning-half set size for every candidate lambda, in grid order.
    pub mean_sizes: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalUpdate {
    pub update: usize,
    pub classifier: ClassifierStats,
    pub calibration: Option<Calibration>,
    pub train_size: usize,
    pub calibration_size: usize,
}

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.001, 0.01, 0.1, 0.2, 0.5];

#[derive(Debug, Clone)]
pub struct ConformalModel {
    pub classifier: Mlp,
    pub calibration: Option<Calibration>,
    pub alpha: f64,
    pub lambda_grid: Vec<f64>,
    pub config: ClassifierConfig,
    pub update_count: usize,
}

const EVAL_CHUNK: usize = 1024;

impl ConformalModel {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_count: usize,
        alpha: f64,
        lambda_grid: Vec<f64>,
        config: ClassifierConfig,
        rng: &mut R,
    ) -> Result<Self, ConformalError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ConformalError::InvalidAlpha(alpha));
        }
        if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(ConformalError::InvalidConfig {
                field: "lambda_grid",
                message: "needs at least one non-negative value".into(),
            });
        }
        config.validate()?;
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(action_count);
        let classifier = Mlp::init_with(&dims, Activation::Relu, rng)?;
        Ok(Self {
            classifier,
            calibration: None,
            alpha,
            lambda_grid,
            config,
            update_count: 0,
        })
    }

    pub fn action_count(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibration.is_some()
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>, ConformalError> {
        Ok(softmax(&self.classifier.predict_one(obs)?))
    }

    /// Class probabilities for many rows; chunks are evaluated in parallel
    /// when the `parallel` feature is on.
    pub fn probs_batch(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>, ConformalError> {
        let chunks: Vec<&[&[f64]]> = rows.chunks(EVAL_CHUNK).collect();
        let parts = par::map(&chunks, |chunk| -> Result<Vec<Vec<f64>>, ConformalError> {
            let x = batch_from_rows(chunk.iter().copied(), self.obs_dim());
            let logits = self.classifier.predict(&x)?;
            Ok(logits.rows().into_iter().map(|r| softmax(r.as_slice().expect("standard layout"))).collect())
        });
        let mut out = Vec::with_capacity(rows.len());
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }

    /// Fits the classifier by softmax cross-entropy on `train` only; returns
    /// accuracy and mean loss on `train` after fitting.
    pub fn train_classifier<R: Rng + ?Sized>(
        &mut self,
        train: &[Labeled<'_>],
        epochs: usize,
        rng: &mut R,
    ) -> Result<ClassifierStats, ConformalError> {
        if train.is_empty() {
            return Err(ConformalError::EmptyBuffer);
        }
        let classes = self.action_count();
        if let Some(&(_, a)) = train.iter().find(|(_, a)| *a >= classes) {
            return Err(ConformalError::LabelOutOfRange { label: a, classes });
        }
        let adam = AdamConfig::with_lr(self.config.lr);
        let mut idx: Vec<usize> = (0..train.len()).collect();
        for _ in 0..epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(self.config.minibatch) {
                let m = chunk.len() as f64;
                let x = batch_from_rows(chunk.iter().map(|&i| train[i].0), self.obs_dim());
                let (logits, cache) = self.classifier.forward(&x)?;
                let mut grad = Array2::zeros(logits.dim());
                for (r, &i) in chunk.iter().enumerate() {
                    let row = logits.row(r);
                    let (_, g) = softmax_cross_entropy(row.as_slice().expect("standard layout"), train[i].1)?;
                    for (k, gk) in g.into_iter().enumerate() {
                        grad[[r, k]] = gk / m;
                    }
                }
                let grads = self.classifier.backward(&cache, &grad)?;
                self.classifier.adam_step(&grads, &adam);
            }
        }
        self.update_count += 1;
        self.evaluate(train)
    }

    /// Accuracy and mean cross-entropy on `data`.
    pub fn evaluate(&self, data: &[Labeled<'_>]) -> Result<ClassifierStats, ConformalError> {
        if data.is_empty() {
            return Err(ConformalError::EmptyInput);
        }
        let rows: Vec<&[f64]> = data.iter().map(|d| d.0).collect();
        let probs = self.probs_batch(&rows)?;
        let (mut correct, mut loss) = (0usize, 0.0);
        for (p, &(_, a)) in probs.iter().zip(data) {
            if rank_order(p)[0] == a {
                correct += 1;
            }
            loss -= p[a].max(f64::MIN_POSITIVE).ln();
        }
        let n = data.len() as f64;
        Ok(ClassifierStats {
            accuracy: correct as f64 / n,
            loss: loss / n,
        })
    }

    fn scores(probs: &[Vec<f64>], labels: &[usize], us: &[f64], lambda: f64, k_reg: usize) -> Result<Vec<f64>, ConformalError> {
        probs
            .iter()
            .zip(labels)
            .zip(us)
            .map(|((p, &a), &u)| deployed_score(p, a, u, lambda, k_reg))
            .collect()
    }

    /// Calibrates `tau` for a fixed `lambda`, choosing `k_reg` from the
    /// calibration ranks.
    pub fn calibrate_fixed<R: Rng + ?Sized>(&mut self, cal: &[Labeled<'_>], lambda: f64, rng: &mut R) -> Result<Calibration, ConformalError> {
        if cal.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        let rows: Vec<&[f64]> = cal.iter().map(|d| d.0).collect();
        let labels: Vec<usize> = cal.iter().map(|d| d.1).collect();
        let probs = self.probs_batch(&rows)?;
        let ranks: Vec<usize> = probs.iter().zip(&labels).map(|(p, &a)| rank_of(p, a)).collect();
        let k_reg = adaptive_k_reg(&ranks, self.alpha);
        let us: Vec<f64> = (0..cal.len()).map(|_| rng.random()).collect();
        let scores = Self::scores(&probs, &labels, &us, lambda, k_reg)?;
        let calibration = Calibration {
            tau: calibrate_tau(&scores, self.alpha)?,
            lambda,
            k_reg,
        };
        self.calibration = Some(calibration);
        Ok(calibration)
    }

    /// Chooses `k_reg` from the calibration ranks and `lambda` from the grid by
    /// smallest mean set size on a held-back half, then recalibrates `tau` on
    /// the whole calibration split.
    pub fn select_regularization<R: Rng + ?Sized>(&mut self, cal: &[Labeled<'_>], rng: &mut R) -> Result<RegularizationReport, ConformalError> {
        if cal.len() < 2 {
            return Err(ConformalError::CalibrationTooSmall(cal.len()));
        }
        let rows: Vec<&[f64]> = cal.iter().map(|d| d.0).collect();
        let labels: Vec<usize> = cal.iter().map(|d| d.1).collect();
        let probs = self.probs_batch(&rows)?;
        let ranks: Vec<usize> = probs.iter().zip(&labels).map(|(p, &a)| rank_of(p, a)).collect();
        let k_reg = adaptive_k_reg(&ranks, self.alpha);

        let half = cal.len() / 2;
        let fit_u: Vec<f64> = (0..half).map(|_| rng.random()).collect();
        let tune_u: Vec<f64> = (half..cal.len()).map(|_| rng.random()).collect();
        let mut mean_sizes = Vec::with_capacity(self.lambda_grid.len());
        let mut best: Option<(f64, f64)> = None;
        for &lambda in &self.lambda_grid {
            let scores = Self::scores(&probs[..half], &labels[..half], &fit_u, lambda, k_reg)?;
            let tau = calibrate_tau(&scores, self.alpha)?;
            let mut total = 0usize;
            for (p, &u) in probs[half..].iter().zip(&tune_u) {
                total += predict_set(p, tau, lambda, k_reg, u)?.len();
            }
            let mean = total as f64 / (cal.len() - half) as f64;
            mean_sizes.push((lambda, mean));
            if best.is_none_or(|(_, m)| mean < m) {
                best = Some((lambda, mean));
            }
        }
        let lambda = best.expect("grid is non-empty").0;
        let us: Vec<f64> = (0..cal.len()).map(|_| rng.random()).collect();
        let scores = Self::scores(&probs, &labels, &us, lambda, k_reg)?;
        let calibration = Calibration {
            tau: calibrate_tau(&scores, self.alpha)?,
            lambda,
            k_reg,
        };
        self.calibration = Some(calibration);
        Ok(RegularizationReport {
            calibration,
            mean_sizes,
        })
    }

    /// One full conformal update: fresh split, classifier fit on the train
    /// part, regularisation selection and calibration on the rest.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &LabeledObsBuffer, rng: &mut R) -> Result<ConformalUpdate, ConformalError> {
        if buffer.is_empty() {
            return Err(ConformalError::EmptyBuffer);
        }
        let split = buffer.split(self.config.train_fraction, rng);
        let train = buffer.select(&split.train);
        let cal = buffer.select(&split.calibration);
        let classifier = self.train_classifier(&train, self.config.epochs, rng)?;
        let calibration = if cal.len() >= 2 {
            Some(self.select_regularization(&cal, rng)?.calibration)
        } else {
            None
        };
        Ok(ConformalUpdate {
            update: self.update_count,
            classifier,
            calibration,
            train_size: train.len(),
            calibration_size: cal.len(),
        })
    }

    /// Set for one observation. Before the first calibration every action is
    /// included (ranked by the untrained classifier).
    pub fn predict_for_agent<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<ConformalSet, ConformalError> {
        let probs = self.probs(obs)?;
        self.set_from_probs(&probs, rng.random())
    }

    pub fn set_from_probs(&self, probs: &[f64], u: f64) -> Result<ConformalSet, ConformalError> {
        match self.calibration {
            Some(c) => predict_set(probs, c.tau, c.lambda, c.k_reg, u),
            None => predict_set(probs, f64::INFINITY, 0.0, 0, u),
        }
    }

    /// Fraction of `pairs` whose action lies in the predicted set.
    pub fn empirical_coverage<R: Rng + ?Sized>(&self, pairs: &[Labeled<'_>], rng: &mut R) -> Result<f64, ConformalError> {
        Ok(self.coverage_and_size(pairs, rng)?.0)
    }

    /// Coverage and mean set size over `pairs`.
    pub fn coverage_and_size<R: Rng + ?Sized>(&self, pairs: &[Labeled<'_>], rng: &mut R) -> Result<(f64, f64), ConformalError> {
        if pairs.is_empty() {
            return Err(ConformalError::EmptyInput);
        }
        let rows: Vec<&[f64]> = pairs.iter().map(|d| d.0).collect();
        let probs = self.probs_batch(&rows)?;
        let (mut hit, mut size) = (0usize, 0usize);
        for (p, &(_, a)) in probs.iter().zip(pairs) {
            let set = self.set_from_probs(p, rng.random())?;
            hit += usize::from(set.contains(a));
            size += set.len();
        }
        let n = pairs.len() as f64;
        Ok((hit as f64 / n, size as f64 / n))
    }

    /// Last hidden-layer activations of the classifier.
    pub fn penultimate_embedding(&self, obs: &[f64]) -> Result<Vec<f64>, ConformalError> {
        Ok(self.classifier.hidden_one(obs)?)
    }

    pub fn embedding_dim(&self) -> usize {
        self.classifier.dims()[self.classifier.dims().len() - 2]
    }
}
