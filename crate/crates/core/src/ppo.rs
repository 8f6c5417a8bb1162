//! Independent PPO learners: separate actor and critic networks per agent,
//! clipped surrogate objective, GAE advantages.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{batch_from_rows, log_softmax, softmax, Activation, AdamConfig, Mlp, NnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("sequence lengths differ: {0}")]
    LengthMismatch(String),
    #[error("invalid hyperparameter `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm cap per network; `0` disables clipping.
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    /// Divide rewards by a running std of the discounted return.
    pub scale_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            scale_rewards: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |field, message: String| Err(PpoError::InvalidConfig { field, message });
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", format!("must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", format!("must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad("clip_eps", format!("must be positive, got {}", self.clip_eps));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.minibatch == 0 {
            return bad("minibatch", "must be at least 1".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer widths must be positive".into());
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("entropy_coef", "coefficients must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-agent experience since the last update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl RolloutBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            observations: Vec::with_capacity(capacity),
            actions: Vec::with_capacity(capacity),
            log_probs: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, obs: Vec<f64>, action: usize, log_prob: f64, value: f64, reward: f64, done: bool) {
        self.observations.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
    }
}

/// Generalised advantage estimates and bootstrapped returns.
///
/// `bootstrap_value` is `V(s_T)` for the state after the last record; it is
/// ignored when that record is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(PpoError::LengthMismatch(format!(
            "rewards {}, values {}, dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * gae_lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to mean 0 and scales to unit (population) std. Left alone for n < 2.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Draws from the categorical distribution given by `probs`.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Running variance of the discounted return, used to put rewards on a unit
/// scale before advantage estimation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardScaler {
    discounted: f64,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardScaler {
    pub fn observe(&mut self, reward: f64, done: bool, gamma: f64) {
        self.discounted = self.discounted * gamma + reward;
        self.count += 1.0;
        let delta = self.discounted - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (self.discounted - self.mean);
        if done {
            self.discounted = 0.0;
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        let std = (self.m2 / self.count).sqrt();
        if std > 1e-8 {
            std
        } else {
            1.0
        }
    }
}

const POLICY_HEAD_SCALE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub config: PpoConfig,
    pub reward_scaler: RewardScaler,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_count: usize, config: PpoConfig, rng: &mut R) -> Result<Self, PpoError> {
        config.validate()?;
        let dims = |out: usize| {
            let mut d = vec![obs_dim];
            d.extend_from_slice(&config.hidden);
            d.push(out);
            d
        };
        let mut actor = Mlp::init_with(&dims(action_count), Activation::Tanh, rng)?;
        // near-uniform initial policy
        if let Some(head) = actor.layers_mut().last_mut() {
            head.weight *= POLICY_HEAD_SCALE;
        }
        let critic = Mlp::init_with(&dims(1), Activation::Tanh, rng)?;
        Ok(Self {
            actor,
            critic,
            config,
            reward_scaler: RewardScaler::default(),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn action_probs(&self, obs: &[f64]) -> Result<Vec<f64>, PpoError> {
        Ok(softmax(&self.actor.predict_one(obs)?))
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> Result<f64, PpoError> {
        Ok(log_softmax(&self.actor.predict_one(obs)?)[action])
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, PpoError> {
        Ok(self.critic.predict_one(obs)?[0])
    }

    /// Samples `a ~ softmax(actor(obs))`; returns `(a, log pi(a), V(obs))`.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(usize, f64, f64), PpoError> {
        let logits = self.actor.predict_one(obs)?;
        let logp = log_softmax(&logits);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let action = sample_categorical(&probs, rng);
        let value = self.value(obs)?;
        Ok((action, logp[action], value))
    }

    /// Clipped-surrogate update over the whole buffer, which is then cleared.
    /// The buffer must end on a terminal step or `bootstrap_value` must hold
    /// the value of the state that follows it.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut RolloutBuffer,
        bootstrap_value: f64,
        rng: &mut R,
    ) -> Result<UpdateStats, PpoError> {
        if buffer.is_empty() {
            return Err(PpoError::EmptyBuffer);
        }
        let cfg = self.config.clone();
        let rewards: Vec<f64> = if cfg.scale_rewards {
            for (&r, &d) in buffer.rewards.iter().zip(&buffer.dones) {
                self.reward_scaler.observe(r, d, cfg.gamma);
            }
            let std = self.reward_scaler.std();
            buffer.rewards.iter().map(|r| r / std).collect()
        } else {
            buffer.rewards.clone()
        };
        let (mut adv, returns) = compute_gae(
            &rewards,
            &buffer.values,
            &buffer.dones,
            bootstrap_value,
            cfg.gamma,
            cfg.gae_lambda,
        )?;
        normalize_advantages(&mut adv);

        let n = buffer.len();
        let obs_dim = self.obs_dim();
        let adam = AdamConfig::with_lr(cfg.lr);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut totals = UpdateStats::default();
        let mut batches = 0usize;

        for _ in 0..cfg.epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.minibatch) {
                let m = chunk.len() as f64;
                let x: Array2<f64> = batch_from_rows(chunk.iter().map(|&i| buffer.observations[i].as_slice()), obs_dim);

                let (logits, actor_cache) = self.actor.forward(&x)?;
                let mut logit_grad = Array2::zeros(logits.dim());
                let (mut pl, mut ent, mut clipped) = (0.0, 0.0, 0.0);
                for (r, &i) in chunk.iter().enumerate() {
                    let row: Vec<f64> = logits.row(r).to_vec();
                    let logp = log_softmax(&row);
                    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                    let a = buffer.actions[i];
                    let ratio = (logp[a] - buffer.log_probs[i]).exp();
                    let a_hat = adv[i];
                    let unclipped = ratio * a_hat;
                    let clipped_obj = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a_hat;
                    pl -= unclipped.min(clipped_obj);
                    if (ratio - 1.0).abs() > cfg.clip_eps {
                        clipped += 1.0;
                    }
                    let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
                    ent += h;

                    // d(-min(...))/dz: active only when the unclipped branch is selected
                    let surrogate_active = unclipped <= clipped_obj;
                    for k in 0..row.len() {
                        let onehot = if k == a { 1.0 } else { 0.0 };
                        let mut g = 0.0;
                        if surrogate_active {
                            g -= a_hat * ratio * (onehot - probs[k]);
                        }
                        // d(-c H)/dz_k = c p_k (log p_k + H)
                        g += cfg.entropy_coef * probs[k] * (logp[k] + h);
                        logit_grad[[r, k]] = g / m;
                    }
                }
                let mut actor_grads = self.actor.backward(&actor_cache, &logit_grad)?;
                if cfg.max_grad_norm > 0.0 {
                    actor_grads.clip_norm(cfg.max_grad_norm);
                }
                self.actor.adam_step(&actor_grads, &adam);

                let (values, critic_cache) = self.critic.forward(&x)?;
                let mut value_grad = Array2::zeros(values.dim());
                let mut vl = 0.0;
                for (r, &i) in chunk.iter().enumerate() {
                    let err = values[[r, 0]] - returns[i];
                    vl += err * err;
                    value_grad[[r, 0]] = cfg.value_coef * 2.0 * err / m;
                }
                let mut critic_grads = self.critic.backward(&critic_cache, &value_grad)?;
                if cfg.max_grad_norm > 0.0 {
                    critic_grads.clip_norm(cfg.max_grad_norm);
                }
                self.critic.adam_step(&critic_grads, &adam);

                totals.policy_loss += pl / m;
                totals.value_loss += vl / m;
                totals.entropy += ent / m;
                totals.clip_fraction += clipped / m;
                batches += 1;
            }
        }
        buffer.clear();
        let b = batches as f64;
        Ok(UpdateStats {
            policy_loss: totals.policy_loss / b,
            value_loss: totals.value_loss / b,
            entropy: totals.entropy / b,
            clip_fraction: totals.clip_fraction / b,
        })
    }
}
