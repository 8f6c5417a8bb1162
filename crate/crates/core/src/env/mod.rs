//! Simultaneous-move, partially observable multi-agent environments.
//!
//! Agent 0 is always the learning ("self") agent; agents `1..K` are the
//! modeled others. Every environment is deterministic in the seed passed to
//! [`Environment::reset`] and the joint actions passed to
//! [`Environment::step`].

pub mod cn;
pub mod lbf;
pub mod pressure_plate;
pub mod trajectory;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cn::{CnParams, CnWorld, CooperativeNavigation};
pub use lbf::{LbfParams, LbfWorld, LevelBasedForaging};
pub use pressure_plate::{PpParams, PpWorld, PressurePlate};

/// Index of an agent inside an environment, `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub usize);

impl AgentId {
    pub const SELF: AgentId = AgentId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_self(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies the documented feature layout of an observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// `[vel(2), pos(2), landmarks rel(2L), others rel pos(2(K-1)), others vel(2(K-1))]`
    Cn,
    /// `[self(row, col, level), foods(row, col, level) x F, others(row, col, level) x (K-1)]`
    Lbf,
    /// `[5x5 crop x {agents, plates, closed doors, goal}, row, col]`
    PressurePlate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl Observation {
    pub fn new(values: Vec<f64>, layout: Layout) -> Self {
        Self { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub actions: Vec<usize>,
}

impl JointAction {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions }
    }
}

impl From<Vec<usize>> for JointAction {
    fn from(actions: Vec<usize>) -> Self {
        Self { actions }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    /// Diagnostic counters, e.g. `collisions`.
    pub info: BTreeMap<String, f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}` (expected one of: cn, lbf, pressure_plate)")]
    UnknownEnv(String),
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: &'static str, message: String },
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("joint action has {got} entries, expected {expected}")]
    JointLength { expected: usize, got: usize },
    #[error("agent {agent} chose action {action}, but only {count} actions exist")]
    ActionOutOfRange { agent: usize, action: usize, count: usize },
    #[error("agent index {0} out of range")]
    AgentOutOfRange(usize),
    #[error("food index {index} out of range ({count} foods)")]
    FoodOutOfRange { index: usize, count: usize },
    #[error("food {0} has already been collected")]
    FoodGone(usize),
    #[error("agent {agent} is not adjacent to food {food}")]
    NotAdjacent { agent: usize, food: usize },
    #[error("at least one landmark is required")]
    NoLandmarks,
    #[error("at least one loader is required")]
    NoLoaders,
}

pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> EnvError {
    EnvError::InvalidParameter {
        field,
        message: message.into(),
    }
}

/// Episodic multi-agent environment with simultaneous moves.
pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn agent_count(&self) -> usize;
    fn obs_dim(&self, agent: AgentId) -> usize;
    fn action_count(&self, agent: AgentId) -> usize;
    fn horizon(&self) -> usize;
    /// Current timestep within the episode.
    fn clock(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Observation>;
    fn step(&mut self, joint: &JointAction) -> Result<StepOutcome, EnvError>;
}

/// Declarative environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvSpec {
    Cn(CnParams),
    Lbf(LbfParams),
    PressurePlate(PpParams),
}

impl EnvSpec {
    /// Default spec for a registered environment name.
    pub fn by_name(name: &str) -> Result<Self, EnvError> {
        match name {
            "cn" => Ok(EnvSpec::Cn(CnParams::default())),
            "lbf" => Ok(EnvSpec::Lbf(LbfParams::default())),
            "pressure_plate" | "pp" => Ok(EnvSpec::PressurePlate(PpParams::default())),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Cn(_) => "cn",
            EnvSpec::Lbf(_) => "lbf",
            EnvSpec::PressurePlate(_) => "pressure_plate",
        }
    }

    pub fn agent_count(&self) -> usize {
        match self {
            EnvSpec::Cn(p) => p.agents,
            EnvSpec::Lbf(p) => p.agents,
            EnvSpec::PressurePlate(_) => pressure_plate::AGENTS,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvSpec::Cn(p) => p.validate(),
            EnvSpec::Lbf(p) => p.validate(),
            EnvSpec::PressurePlate(p) => p.validate(),
        }
    }
}

/// Instantiates the environment described by `spec`.
pub fn make_env(spec: &EnvSpec) -> Result<Box<dyn Environment>, EnvError> {
    Ok(match spec {
        EnvSpec::Cn(p) => Box::new(CooperativeNavigation::new(p.clone())?),
        EnvSpec::Lbf(p) => Box::new(LevelBasedForaging::new(p.clone())?),
        EnvSpec::PressurePlate(p) => Box::new(PressurePlate::new(p.clone())?),
    })
}

pub(crate) fn check_joint(
    joint: &JointAction,
    agents: usize,
    action_count: impl Fn(usize) -> usize,
) -> Result<(), EnvError> {
    if joint.actions.len() != agents {
        return Err(EnvError::JointLength {
            expected: agents,
            got: joint.actions.len(),
        });
    }
    for (agent, &action) in joint.actions.iter().enumerate() {
        let count = action_count(agent);
        if action >= count {
            return Err(EnvError::ActionOutOfRange {
                agent,
                action,
                count,
            });
        }
    }
    Ok(())
}
