//! Modeling modes: how agent 0's policy input is augmented with information
//! about the other agents.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{rank_order, ConformalError, ConformalModel, ConformalSet};
use crate::env::{AgentId, Environment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelingError {
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("unknown modeling mode `{given}`; valid modes: {}", ModelingMode::NAMES.join(", "))]
    UnknownMode { given: String },
    #[error("mode {mode} needs the current action of other agent {other}")]
    MissingAction { mode: ModelingMode, other: usize },
    #[error("mode {mode} expects {expected} conformal models, got {got}")]
    ModelCount { mode: ModelingMode, expected: usize, got: usize },
    #[error("action id {id} out of range for {count} actions")]
    ActionOutOfRange { id: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CammarlVariant {
    Binary,
    Padding,
    Penultimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelingMode {
    /// No access to the other agents.
    Noam,
    /// True current actions, one-hot.
    Taam,
    /// Raw observations of the other agents.
    Toam,
    /// Observations and true actions.
    Giam,
    /// One-hot of the classifier's argmax prediction.
    Eap,
    /// The classifier's full probability vector.
    Apu,
    /// Conformal action sets, encoded per variant.
    Cammarl(CammarlVariant),
}

impl ModelingMode {
    pub const ALL: [ModelingMode; 9] = [
        ModelingMode::Noam,
        ModelingMode::Taam,
        ModelingMode::Toam,
        ModelingMode::Giam,
        ModelingMode::Eap,
        ModelingMode::Apu,
        ModelingMode::Cammarl(CammarlVariant::Binary),
        ModelingMode::Cammarl(CammarlVariant::Padding),
        ModelingMode::Cammarl(CammarlVariant::Penultimate),
    ];

    pub const NAMES: [&'static str; 9] = [
        "noam",
        "taam",
        "toam",
        "giam",
        "eap",
        "apu",
        "cammarl-binary",
        "cammarl-padding",
        "cammarl-penultimate",
    ];

    pub fn name(self) -> &'static str {
        let i = Self::ALL.iter().position(|&m| m == self).expect("ALL lists every mode");
        Self::NAMES[i]
    }

    /// Whether a classifier is trained for each other agent.
    pub fn uses_models(self) -> bool {
        matches!(self, Self::Eap | Self::Apu | Self::Cammarl(_))
    }

    pub fn needs_other_actions(self) -> bool {
        matches!(self, Self::Taam | Self::Giam)
    }
}

impl fmt::Display for ModelingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelingMode {
    type Err = ModelingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::NAMES
            .iter()
            .position(|&n| n == key)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| ModelingError::UnknownMode { given: s.to_string() })
    }
}

impl TryFrom<String> for ModelingMode {
    type Error = ModelingError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelingMode> for String {
    fn from(m: ModelingMode) -> Self {
        m.name().to_string()
    }
}

fn check_ids(actions: &[usize], action_count: usize) -> Result<(), ModelingError> {
    match actions.iter().find(|&&a| a >= action_count) {
        Some(&id) => Err(ModelingError::ActionOutOfRange { id, count: action_count }),
        None => Ok(()),
    }
}

/// Indicator vector of the set members.
pub fn encode_binary(actions: &[usize], action_count: usize) -> Result<Vec<f64>, ModelingError> {
    check_ids(actions, action_count)?;
    let mut bits = vec![0.0; action_count];
    for &a in actions {
        bits[a] = 1.0;
    }
    Ok(bits)
}

/// Ranked ids shifted to 1-based, right-padded with zeros.
pub fn encode_padded(ranked: &[usize], action_count: usize) -> Result<Vec<f64>, ModelingError> {
    check_ids(ranked, action_count)?;
    let mut out = vec![0.0; action_count];
    for (slot, &a) in out.iter_mut().zip(ranked) {
        *slot = (a + 1) as f64;
    }
    Ok(out)
}

pub fn one_hot(action: usize, action_count: usize) -> Result<Vec<f64>, ModelingError> {
    encode_binary(&[action], action_count)
}

/// Width of the classifier's last hidden layer, which the penultimate
/// variant shares with the policy.
pub const EMBEDDING_DIM: usize = 64;

/// Length of agent `agent`'s policy input under `mode`. Only agent 0 is
/// augmented; other agents always see their own observation.
pub fn augmented_dim(mode: ModelingMode, env: &dyn Environment, agent: AgentId) -> usize {
    let own = env.obs_dim(agent);
    if !agent.is_self() {
        return own;
    }
    let others: Vec<(usize, usize)> = (1..env.agent_count())
        .map(|j| (env.obs_dim(AgentId(j)), env.action_count(AgentId(j))))
        .collect();
    augmented_dim_from(mode, own, &others, EMBEDDING_DIM)
}

/// `others` holds `(obs_dim, action_count)` per other agent.
pub fn augmented_dim_from(mode: ModelingMode, own: usize, others: &[(usize, usize)], embedding: usize) -> usize {
    let block: usize = others
        .iter()
        .map(|&(d, a)| match mode {
            ModelingMode::Noam => 0,
            ModelingMode::Toam => d,
            ModelingMode::Giam => d + a,
            ModelingMode::Cammarl(CammarlVariant::Penultimate) => embedding,
            ModelingMode::Taam | ModelingMode::Eap | ModelingMode::Apu | ModelingMode::Cammarl(_) => a,
        })
        .sum();
    own + block
}

/// What agent 0 may learn about another agent at the current step.
#[derive(Debug, Clone, Copy)]
pub struct OtherInfo<'a> {
    pub obs: &'a [f64],
    /// This step's action, already sampled; needed by TAAM and GIAM only.
    pub action: Option<usize>,
    pub action_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub values: Vec<f64>,
    /// One prediction set per other agent when the mode carries models.
    pub sets: Vec<ConformalSet>,
}

/// Builds agent 0's policy input: `o_self` followed by one block per other
/// agent in ascending id. `models[j - 1]` models agent `j`.
pub fn augment_observation<R: Rng + ?Sized>(
    mode: ModelingMode,
    own: &[f64],
    others: &[OtherInfo<'_>],
    models: &[ConformalModel],
    rng: &mut R,
) -> Result<Augmented, ModelingError> {
    let expected = if mode.uses_models() { others.len() } else { 0 };
    if models.len() != expected {
        return Err(ModelingError::ModelCount {
            mode,
            expected,
            got: models.len(),
        });
    }
    let mut values = own.to_vec();
    let mut sets = Vec::with_capacity(expected);
    for (j, info) in others.iter().enumerate() {
        let action = || {
            info.action.ok_or(ModelingError::MissingAction { mode, other: j + 1 })
        };
        match mode {
            ModelingMode::Noam => {}
            ModelingMode::Taam => values.extend(one_hot(action()?, info.action_count)?),
            ModelingMode::Toam => values.extend_from_slice(info.obs),
            ModelingMode::Giam => {
                let a = action()?;
                values.extend_from_slice(info.obs);
                values.extend(one_hot(a, info.action_count)?);
            }
            ModelingMode::Eap | ModelingMode::Apu | ModelingMode::Cammarl(_) => {
                let model = &models[j];
                let probs = model.probs(info.obs)?;
                let set = model.set_from_probs(&probs, rng.random())?;
                match mode {
                    ModelingMode::Eap => values.extend(one_hot(rank_order(&probs)[0], info.action_count)?),
                    ModelingMode::Apu => values.extend_from_slice(&probs),
                    ModelingMode::Cammarl(CammarlVariant::Binary) => {
                        values.extend(encode_binary(&set.actions, info.action_count)?)
                    }
                    ModelingMode::Cammarl(CammarlVariant::Padding) => {
                        values.extend(encode_padded(&set.actions, info.action_count)?)
                    }
                    ModelingMode::Cammarl(CammarlVariant::Penultimate) => {
                        values.extend(model.penultimate_embedding(info.obs)?)
                    }
                    _ => unreachable!("outer arm covers model modes only"),
                }
                sets.push(set);
            }
        }
    }
    Ok(Augmented { values, sets })
}
