//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use cammarl::nn::{batch_from_rows, softmax_cross_entropy, Activation, Mlp};
use cammarl::rng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Summed cross-entropy of `net` on `(x, labels)`.
pub fn ce_loss(net: &Mlp, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let out = net.predict(x).unwrap();
    labels
        .iter()
        .enumerate()
        .map(|(r, &y)| softmax_cross_entropy(out.row(r).as_slice().unwrap(), y).unwrap().0)
        .sum()
}

/// Largest relative error between backprop and central differences with
/// step `h`, over every parameter of a random net with `dims`.
pub fn gradient_check(dims: &[usize], activation: Activation, seed: u64, h: f64) -> f64 {
    let mut r = rng::seeded(seed);
    let net = Mlp::init_with(dims, activation, &mut r).unwrap();
    let batch = 4;
    let rows: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..dims[0]).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let x = batch_from_rows(rows.iter().map(Vec::as_slice), dims[0]);
    let out_dim = *dims.last().unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| r.random_range(0..out_dim)).collect();

    let (out, cache) = net.forward(&x).unwrap();
    let mut g = Array2::zeros(out.dim());
    for (row, &y) in labels.iter().enumerate() {
        let (_, grad) = softmax_cross_entropy(out.row(row).as_slice().unwrap(), y).unwrap();
        for (k, v) in grad.into_iter().enumerate() {
            g[[row, k]] = v;
        }
    }
    let analytic = net.backward(&cache, &g).unwrap().flatten();

    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat_params(&p).unwrap();
        let up = ce_loss(&probe, &x, &labels);
        p[i] = base[i] - h;
        probe.set_flat_params(&p).unwrap();
        let down = ce_loss(&probe, &x, &labels);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Prediction set by direct evaluation of the score inequality for every
/// action, without sharing code with the library.
pub fn brute_force_set(probs: &[f64], tau: f64, lambda: f64, k_reg: usize, u: f64) -> Vec<usize> {
    let n = probs.len();
    let before = |b: usize, a: usize| probs[b] > probs[a] || (probs[b] == probs[a] && b < a);
    let mut members: Vec<usize> = (0..n)
        .filter(|&a| {
            let mass: f64 = (0..n).filter(|&b| before(b, a)).map(|b| probs[b]).sum();
            let rank = 1 + (0..n).filter(|&b| before(b, a)).count();
            let penalty = lambda * (rank as f64 - k_reg as f64).max(0.0);
            mass + probs[a] * u + penalty <= tau
        })
        .collect();
    if members.is_empty() {
        let top = (0..n).find(|&a| (0..n).all(|b| !before(b, a))).unwrap();
        members.push(top);
    }
    members.sort_unstable();
    members
}

/// Random probability vector; with `ties` some entries are duplicated.
pub fn random_probs<R: Rng>(r: &mut R, n: usize, ties: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0f64).powi(3)).collect();
    if ties && n > 1 {
        let i = r.random_range(1..n);
        w[i] = w[0];
    }
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    w.iter().map(|x| x / s).collect()
}

/// Ten isotropic Gaussian classes with means `spread * e_k` in 10 dims.
pub struct Clusters {
    pub spread: f64,
}

impl Clusters {
    pub const CLASSES: usize = 10;

    pub fn sample<R: Rng>(&self, r: &mut R, n: usize) -> Vec<(Vec<f64>, usize)> {
        (0..n)
            .map(|_| {
                let y = r.random_range(0..Self::CLASSES);
                let x = (0..Self::CLASSES)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(r);
                        z + if k == y { self.spread } else { 0.0 }
                    })
                    .collect();
                (x, y)
            })
            .collect()
    }

    /// Bayes rule for equal priors and identity covariance: nearest mean,
    /// i.e. the largest coordinate.
    pub fn bayes(x: &[f64]) -> usize {
        (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap()
    }

    pub fn bayes_accuracy(&self, seed: u64, n: usize) -> f64 {
        let mut r = rng::seeded(seed);
        let data = self.sample(&mut r, n);
        data.iter().filter(|(x, y)| Self::bayes(x) == *y).count() as f64 / n as f64
    }

    /// Spread whose Bayes accuracy is `target`, by bisection on a Monte
    /// Carlo estimate with fixed draws.
    pub fn with_bayes_accuracy(target: f64) -> Self {
        let (mut lo, mut hi) = (0.0, 6.0);
        for _ in 0..30 {
            let mid = (lo + hi) / 2.0;
            if (Clusters { spread: mid }).bayes_accuracy(99, 20_000) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Clusters { spread: (lo + hi) / 2.0 }
    }
}

/// Classifier fitted on fresh cluster samples, not yet calibrated.
pub fn fit_cluster_model(
    clusters: &Clusters,
    n_train: usize,
    epochs: usize,
    alpha: f64,
    seed: u64,
) -> cammarl::conformal::ConformalModel {
    use cammarl::conformal::{ClassifierConfig, ConformalModel, DEFAULT_LAMBDA_GRID};
    let mut r = rng::seeded(seed);
    let mut model = ConformalModel::new(
        Clusters::CLASSES,
        Clusters::CLASSES,
        alpha,
        DEFAULT_LAMBDA_GRID.to_vec(),
        ClassifierConfig::default(),
        &mut r,
    )
    .unwrap();
    let data = clusters.sample(&mut r, n_train);
    let train: Vec<(&[f64], usize)> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
    model.train_classifier(&train, epochs, &mut r).unwrap();
    model
}

pub fn as_labeled(data: &[(Vec<f64>, usize)]) -> Vec<(&[f64], usize)> {
    data.iter().map(|(x, y)| (x.as_slice(), *y)).collect()
}

/// Two-armed Bernoulli bandit (arm 1 pays with probability 0.8, arm 0 with
/// 0.2) seen through a constant observation. Returns the number of updates
/// after which the policy first puts more than 0.9 on arm 1.
pub fn bandit_updates_to_converge(seed: u64, max_updates: usize) -> Option<usize> {
    use cammarl::ppo::{PpoAgent, PpoConfig, RolloutBuffer};
    let mut r = rng::seeded(seed);
    let mut agent = PpoAgent::new(1, 2, PpoConfig::default(), &mut r).unwrap();
    let obs = [1.0];
    let mut buffer = RolloutBuffer::with_capacity(64);
    for u in 1..=max_updates {
        for _ in 0..64 {
            let (a, lp, v) = agent.sample_action(&obs, &mut r).unwrap();
            let p = if a == 1 { 0.8 } else { 0.2 };
            let reward = f64::from(u8::from(r.random_bool(p)));
            buffer.push(obs.to_vec(), a, lp, v, reward, true);
        }
        agent.update(&mut buffer, 0.0, &mut r).unwrap();
        if agent.action_probs(&obs).unwrap()[1] > 0.9 {
            return Some(u);
        }
    }
    None
}

/// Mean of the first and last 100 episode returns of agent 0.
pub fn first_last_100(returns: &[f64]) -> (f64, f64) {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&returns[..100]), mean(&returns[returns.len() - 100..]))
}

/// Relative gain of a negative-return series, `(last - first) / |first|`.
pub fn improvement(returns: &[f64]) -> f64 {
    let (first, last) = first_last_100(returns);
    (last - first) / first.abs()
}

/// Spearman correlation computed from scratch: Pearson on average ranks.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
