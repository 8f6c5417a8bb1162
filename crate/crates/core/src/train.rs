//! The multi-agent training loop.
//!
//! Agent 0 is the learner whose observation is augmented according to the
//! modeling mode; agents `1..K` act on their own observations only. Each
//! step the other agents sample first, then agent 0 acts on its augmented
//! input, and the joint action is applied. Updates happen at episode
//! boundaries once at least `update_interval` steps have accumulated:
//! every conformal model is refitted and recalibrated, then every agent
//! takes a PPO update on its own rollout.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cammarl::{augment_observation, augmented_dim, ModelingError, ModelingMode, OtherInfo};
use crate::conformal::{ClassifierConfig, ClassifierStats, Calibration, ConformalError, ConformalModel, LabeledObsBuffer, DEFAULT_LAMBDA_GRID};
use crate::env::trajectory::StepRecord;
use crate::env::{make_env, AgentId, EnvError, EnvSpec, Environment, JointAction};
use crate::nn::MlpCheckpoint;
use crate::ppo::{PpoAgent, PpoConfig, PpoError, RolloutBuffer, UpdateStats};
use crate::rng::{stream, Stream, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Modeling(#[from] ModelingError),
    #[error("invalid training setting `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("agent {agent} policy input has length {got}, expected {expected}")]
    DimensionMismatch { agent: usize, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub mode: ModelingMode,
    pub alpha: f64,
    pub lambda_grid: Vec<f64>,
    pub episodes: usize,
    /// Minimum environment steps between updates.
    pub update_interval: usize,
    pub ppo: PpoConfig,
    pub classifier: ClassifierConfig,
    /// Snapshot every this many episodes; `0` keeps only the final one.
    pub checkpoint_interval: usize,
}

impl TrainConfig {
    pub fn new(env: EnvSpec, mode: ModelingMode, episodes: usize) -> Self {
        Self {
            env,
            mode,
            alpha: 0.1,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            episodes,
            update_interval: 2048,
            ppo: PpoConfig::default(),
            classifier: ClassifierConfig::default(),
            checkpoint_interval: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.classifier.validate()?;
        let bad = |field, message: &str| {
            Err(TrainError::InvalidConfig {
                field,
                message: message.to_string(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambda_grid", "needs at least one non-negative value");
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1");
        }
        if self.update_interval == 0 {
            return bad("update_interval", "must be at least 1");
        }
        Ok(())
    }
}

/// Fit statistics and deployment performance of one conformal model version.
///
/// `update` is the update that produced the version; set size and coverage
/// are measured on the live sets it produced until the next update, against
/// the other agent's actual action, and are `None` if it was never deployed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalRecord {
    pub update: usize,
    pub model_agent: usize,
    pub mean_set_size: Option<f64>,
    pub coverage: Option<f64>,
    pub classifier: ClassifierStats,
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoRecord {
    pub update: usize,
    pub agent: usize,
    pub stats: UpdateStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub actor: MlpCheckpoint,
    pub critic: MlpCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: usize,
    pub agents: Vec<AgentCheckpoint>,
    /// Classifiers, `models[j - 1]` for agent `j`.
    pub models: Vec<MlpCheckpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunArtifacts {
    pub seed: u64,
    pub config: TrainConfig,
    /// `returns[episode][agent]`.
    pub returns: Vec<Vec<f64>>,
    pub episode_lengths: Vec<usize>,
    pub conformal: Vec<ConformalRecord>,
    pub ppo: Vec<PpoRecord>,
    pub checkpoints: Vec<Checkpoint>,
    /// Steps of the final episode.
    pub trajectory: Vec<StepRecord>,
    pub model_count: usize,
    pub policy_input_dims: Vec<usize>,
}

impl TrainRunArtifacts {
    pub fn agent_returns(&self, agent: usize) -> Vec<f64> {
        self.returns.iter().map(|r| r[agent]).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Deployment {
    steps: usize,
    hits: usize,
    size_sum: usize,
}

#[derive(Debug, Clone)]
struct LiveVersion {
    update: usize,
    classifier: ClassifierStats,
    calibration: Option<Calibration>,
    deployment: Deployment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub returns: Vec<f64>,
    pub steps: usize,
    pub trajectory: Option<Vec<StepRecord>>,
}

struct Rngs {
    placement: StreamRng,
    policy: StreamRng,
    conformal_u: StreamRng,
    shuffle: StreamRng,
    split: StreamRng,
}

pub struct Trainer {
    config: TrainConfig,
    seed: u64,
    env: Box<dyn Environment>,
    agents: Vec<PpoAgent>,
    models: Vec<ConformalModel>,
    labeled: Vec<LabeledObsBuffer>,
    rollouts: Vec<RolloutBuffer>,
    live: Vec<Option<LiveVersion>>,
    rngs: Rngs,
    input_dims: Vec<usize>,
    steps_since_update: usize,
    updates: usize,
    conformal_rows: Vec<ConformalRecord>,
    ppo_rows: Vec<PpoRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let env = make_env(&config.env)?;
        let k = env.agent_count();
        let mut init = stream(seed, Stream::Init);
        let input_dims: Vec<usize> = (0..k).map(|i| augmented_dim(config.mode, env.as_ref(), AgentId(i))).collect();
        let agents = (0..k)
            .map(|i| PpoAgent::new(input_dims[i], env.action_count(AgentId(i)), config.ppo.clone(), &mut init))
            .collect::<Result<Vec<_>, _>>()?;
        let (models, labeled) = if config.mode.uses_models() {
            let models = (1..k)
                .map(|j| {
                    ConformalModel::new(
                        env.obs_dim(AgentId(j)),
                        env.action_count(AgentId(j)),
                        config.alpha,
                        config.lambda_grid.clone(),
                        config.classifier.clone(),
                        &mut init,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let labeled = (1..k).map(|_| LabeledObsBuffer::new(config.classifier.buffer_capacity)).collect();
            (models, labeled)
        } else {
            (Vec::new(), Vec::new())
        };
        let live = vec![None; models.len()];
        let rngs = Rngs {
            placement: stream(seed, Stream::Placement),
            policy: stream(seed, Stream::Policy),
            conformal_u: stream(seed, Stream::ConformalU),
            shuffle: stream(seed, Stream::PpoShuffle),
            split: stream(seed, Stream::ConformalSplit),
        };
        Ok(Self {
            rollouts: (0..k).map(|_| RolloutBuffer::with_capacity(config.update_interval + env.horizon())).collect(),
            config,
            seed,
            env,
            agents,
            models,
            labeled,
            live,
            rngs,
            input_dims,
            steps_since_update: 0,
            updates: 0,
            conformal_rows: Vec::new(),
            ppo_rows: Vec::new(),
        })
    }

    pub fn agents(&self) -> &[PpoAgent] {
        &self.agents
    }

    pub fn models(&self) -> &[ConformalModel] {
        &self.models
    }

    pub fn labeled_buffers(&self) -> &[LabeledObsBuffer] {
        &self.labeled
    }

    pub fn policy_input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Plays one episode, storing experience for the next update.
    pub fn run_episode(&mut self, record: bool) -> Result<EpisodeResult, TrainError> {
        let k = self.env.agent_count();
        let mode = self.config.mode;
        let mut obs = self.env.reset(self.rngs.placement.random());
        let mut returns = vec![0.0; k];
        let mut trajectory = record.then(Vec::new);
        let mut steps = 0;
        loop {
            let mut actions = vec![0usize; k];
            let mut log_probs = vec![0.0; k];
            let mut values = vec![0.0; k];
            for j in 1..k {
                let (a, lp, v) = self.agents[j].sample_action(&obs[j].values, &mut self.rngs.policy)?;
                (actions[j], log_probs[j], values[j]) = (a, lp, v);
            }
            let others: Vec<OtherInfo<'_>> = (1..k)
                .map(|j| OtherInfo {
                    obs: &obs[j].values,
                    action: mode.needs_other_actions().then_some(actions[j]),
                    action_count: self.env.action_count(AgentId(j)),
                })
                .collect();
            let aug = augment_observation(mode, &obs[0].values, &others, &self.models, &mut self.rngs.conformal_u)?;
            if aug.values.len() != self.input_dims[0] {
                return Err(TrainError::DimensionMismatch {
                    agent: 0,
                    expected: self.input_dims[0],
                    got: aug.values.len(),
                });
            }
            let (a0, lp0, v0) = self.agents[0].sample_action(&aug.values, &mut self.rngs.policy)?;
            (actions[0], log_probs[0], values[0]) = (a0, lp0, v0);
            for (m, set) in aug.sets.iter().enumerate() {
                if let Some(live) = self.live[m].as_mut() {
                    live.deployment.steps += 1;
                    live.deployment.hits += usize::from(set.contains(actions[m + 1]));
                    live.deployment.size_sum += set.len();
                }
            }

            let joint = JointAction::new(actions.clone());
            let outcome = self.env.step(&joint)?;
            steps += 1;
            let mut inputs = Some(aug.values);
            for i in 0..k {
                let input = if i == 0 {
                    inputs.take().expect("taken once")
                } else {
                    obs[i].values.clone()
                };
                self.rollouts[i].push(input, actions[i], log_probs[i], values[i], outcome.rewards[i], outcome.done);
                returns[i] += outcome.rewards[i];
            }
            for (m, buffer) in self.labeled.iter_mut().enumerate() {
                buffer.push(obs[m + 1].values.clone(), actions[m + 1]);
            }
            if let Some(t) = trajectory.as_mut() {
                t.push(StepRecord::new(self.env.clock(), &joint, &outcome));
            }
            let done = outcome.done;
            obs = outcome.observations;
            if done {
                break;
            }
        }
        self.steps_since_update += steps;
        Ok(EpisodeResult {
            returns,
            steps,
            trajectory,
        })
    }

    /// Runs the update if enough steps have accumulated.
    pub fn maybe_update(&mut self) -> Result<bool, TrainError> {
        if self.steps_since_update < self.config.update_interval {
            return Ok(false);
        }
        self.update()?;
        Ok(true)
    }

    /// Refits every conformal model, then takes a PPO step for every agent.
    pub fn update(&mut self) -> Result<(), TrainError> {
        self.updates += 1;
        for m in 0..self.models.len() {
            self.retire(m);
            let fit = self.models[m].update(&self.labeled[m], &mut self.rngs.split)?;
            self.live[m] = Some(LiveVersion {
                update: self.updates,
                classifier: fit.classifier,
                calibration: fit.calibration,
                deployment: Deployment::default(),
            });
        }
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if self.rollouts[i].is_empty() {
                continue;
            }
            let stats = agent.update(&mut self.rollouts[i], 0.0, &mut self.rngs.shuffle)?;
            self.ppo_rows.push(PpoRecord {
                update: self.updates,
                agent: i,
                stats,
            });
        }
        self.steps_since_update = 0;
        Ok(())
    }

    fn retire(&mut self, m: usize) {
        if let Some(v) = self.live[m].take() {
            let d = v.deployment;
            let per_step = |x: usize| (d.steps > 0).then(|| x as f64 / d.steps as f64);
            self.conformal_rows.push(ConformalRecord {
                update: v.update,
                model_agent: m + 1,
                mean_set_size: per_step(d.size_sum),
                coverage: per_step(d.hits),
                classifier: v.classifier,
                calibration: v.calibration,
            });
        }
    }

    pub fn checkpoint(&self, episode: usize) -> Checkpoint {
        Checkpoint {
            episode,
            agents: self
                .agents
                .iter()
                .map(|a| AgentCheckpoint {
                    actor: a.actor.checkpoint(),
                    critic: a.critic.checkpoint(),
                })
                .collect(),
            models: self.models.iter().map(|m| m.classifier.checkpoint()).collect(),
        }
    }

    /// Plays every configured episode and collects the run's artifacts.
    pub fn run(mut self) -> Result<TrainRunArtifacts, TrainError> {
        let episodes = self.config.episodes;
        let mut returns = Vec::with_capacity(episodes);
        let mut lengths = Vec::with_capacity(episodes);
        let mut checkpoints = Vec::new();
        let mut trajectory = Vec::new();
        for e in 1..=episodes {
            let result = self.run_episode(e == episodes)?;
            returns.push(result.returns);
            lengths.push(result.steps);
            if let Some(t) = result.trajectory {
                trajectory = t;
            }
            self.maybe_update()?;
            let every = self.config.checkpoint_interval;
            if (every > 0 && e % every == 0) || e == episodes {
                checkpoints.push(self.checkpoint(e));
            }
        }
        for m in 0..self.models.len() {
            self.retire(m);
        }
        Ok(TrainRunArtifacts {
            seed: self.seed,
            model_count: self.models.len(),
            policy_input_dims: self.input_dims.clone(),
            config: self.config,
            returns,
            episode_lengths: lengths,
            conformal: self.conformal_rows,
            ppo: self.ppo_rows,
            checkpoints,
            trajectory,
        })
    }
}

pub fn train(config: &TrainConfig, seed: u64) -> Result<TrainRunArtifacts, TrainError> {
    Trainer::new(config.clone(), seed)?.run()
}
