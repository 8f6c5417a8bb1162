//! Cooperative Navigation: K point agents must cover L landmarks without
//! colliding. Team reward, discrete acceleration actions, damped Euler
//! physics on the arena `[-1, 1]^2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_joint, invalid, AgentId, EnvError, Environment, JointAction, Layout, Observation, StepOutcome};
use crate::rng;

pub const ACTIONS: usize = 5;
pub const STAY: usize = 0;
pub const LEFT: usize = 1;
pub const RIGHT: usize = 2;
pub const DOWN: usize = 3;
pub const UP: usize = 4;

const ARENA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnParams {
    pub agents: usize,
    pub landmarks: usize,
    pub horizon: usize,
    pub dt: f64,
    pub damping: f64,
    pub accel: f64,
    pub max_speed: f64,
    pub radius: f64,
}

impl Default for CnParams {
    fn default() -> Self {
        Self {
            agents: 2,
            landmarks: 2,
            horizon: 25,
            dt: 0.1,
            damping: 0.25,
            accel: 5.0,
            max_speed: 1.0,
            radius: 0.15,
        }
    }
}

impl CnParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.agents == 0 {
            return Err(invalid("agents", "must be at least 1"));
        }
        if self.landmarks == 0 {
            return Err(invalid("landmarks", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        for (field, v) in [("dt", self.dt), ("accel", self.accel), ("max_speed", self.max_speed), ("radius", self.radius)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be a positive finite number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid("damping", format!("must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }

    /// `4 + 2L + 4(K-1)`
    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.landmarks + 4 * (self.agents - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnWorld {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub landmarks: Vec<[f64; 2]>,
    pub radius: f64,
    pub clock: usize,
    /// Pairwise collisions detected by the most recent integration step.
    pub collisions: usize,
}

impl CnWorld {
    pub fn at_rest(positions: Vec<[f64; 2]>, landmarks: Vec<[f64; 2]>, radius: f64) -> Self {
        let velocities = vec![[0.0; 2]; positions.len()];
        Self {
            positions,
            velocities,
            landmarks,
            radius,
            clock: 0,
            collisions: 0,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.positions.len()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Team reward: `-sum_l min_n dist(n, l) - collisions`.
pub fn cn_reward(agent_positions: &[[f64; 2]], landmark_positions: &[[f64; 2]], collision_count: usize) -> Result<f64, EnvError> {
    if landmark_positions.is_empty() {
        return Err(EnvError::NoLandmarks);
    }
    let cover: f64 = landmark_positions
        .iter()
        .map(|&l| agent_positions.iter().map(|&p| dist(p, l)).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(-cover - collision_count as f64)
}

/// Unordered agent pairs closer than two radii.
pub fn count_collisions(positions: &[[f64; 2]], radius: f64) -> usize {
    let mut count = 0;
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if dist(positions[i], positions[j]) < 2.0 * radius {
                count += 1;
            }
        }
    }
    count
}

fn direction(action: usize) -> [f64; 2] {
    match action {
        LEFT => [-1.0, 0.0],
        RIGHT => [1.0, 0.0],
        DOWN => [0.0, -1.0],
        UP => [0.0, 1.0],
        _ => [0.0, 0.0],
    }
}

/// One damped Euler step for every agent at once.
pub fn cn_integrate(world: &CnWorld, joint: &JointAction, params: &CnParams) -> Result<CnWorld, EnvError> {
    check_joint(joint, world.agent_count(), |_| ACTIONS)?;
    let mut next = world.clone();
    for (i, &action) in joint.actions.iter().enumerate() {
        let dir = direction(action);
        let mut v = [0.0; 2];
        for axis in 0..2 {
            v[axis] = (1.0 - params.damping) * world.velocities[i][axis] + params.accel * dir[axis] * params.dt;
        }
        let speed = v[0].hypot(v[1]);
        if speed > params.max_speed {
            let scale = params.max_speed / speed;
            v = [v[0] * scale, v[1] * scale];
        }
        let mut p = world.positions[i];
        for axis in 0..2 {
            p[axis] = (p[axis] + v[axis] * params.dt).clamp(-ARENA, ARENA);
        }
        next.velocities[i] = v;
        next.positions[i] = p;
    }
    next.collisions = count_collisions(&next.positions, world.radius);
    next.clock = world.clock + 1;
    Ok(next)
}

/// Egocentric observation for `agent`.
pub fn cn_observe(world: &CnWorld, agent: AgentId) -> Result<Observation, EnvError> {
    let i = agent.index();
    if i >= world.agent_count() {
        return Err(EnvError::AgentOutOfRange(i));
    }
    let me = world.positions[i];
    let k = world.agent_count();
    let mut values = Vec::with_capacity(4 + 2 * world.landmarks.len() + 4 * (k - 1));
    values.extend_from_slice(&world.velocities[i]);
    values.extend_from_slice(&me);
    for l in &world.landmarks {
        values.push(l[0] - me[0]);
        values.push(l[1] - me[1]);
    }
    for j in (0..k).filter(|&j| j != i) {
        values.push(world.positions[j][0] - me[0]);
        values.push(world.positions[j][1] - me[1]);
    }
    for j in (0..k).filter(|&j| j != i) {
        values.extend_from_slice(&world.velocities[j]);
    }
    Ok(Observation::new(values, Layout::Cn))
}

#[derive(Debug, Clone)]
pub struct CooperativeNavigation {
    params: CnParams,
    world: CnWorld,
    done: bool,
    started: bool,
}

impl CooperativeNavigation {
    pub fn new(params: CnParams) -> Result<Self, EnvError> {
        params.validate()?;
        let world = CnWorld::at_rest(vec![[0.0; 2]; params.agents], vec![[0.0; 2]; params.landmarks], params.radius);
        Ok(Self {
            params,
            world,
            done: false,
            started: false,
        })
    }

    pub fn params(&self) -> &CnParams {
        &self.params
    }

    pub fn world(&self) -> &CnWorld {
        &self.world
    }

    /// Replaces the world state, e.g. to script a test scenario.
    pub fn set_world(&mut self, world: CnWorld) {
        self.done = world.clock >= self.params.horizon;
        self.world = world;
        self.started = true;
    }

    fn observe_all(&self) -> Vec<Observation> {
        (0..self.params.agents)
            .map(|i| cn_observe(&self.world, AgentId(i)).expect("agent in range"))
            .collect()
    }
}

impl Environment for CooperativeNavigation {
    fn name(&self) -> &'static str {
        "cn"
    }

    fn agent_count(&self) -> usize {
        self.params.agents
    }

    fn obs_dim(&self, _agent: AgentId) -> usize {
        self.params.obs_dim()
    }

    fn action_count(&self, _agent: AgentId) -> usize {
        ACTIONS
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn clock(&self) -> usize {
        self.world.clock
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let mut rng = rng::seeded(seed);
        let mut draw = |n: usize| -> Vec<[f64; 2]> {
            (0..n)
                .map(|_| [rng.random_range(-ARENA..ARENA), rng.random_range(-ARENA..ARENA)])
                .collect()
        };
        let positions = draw(self.params.agents);
        let landmarks = draw(self.params.landmarks);
        self.world = CnWorld::at_rest(positions, landmarks, self.params.radius);
        self.done = false;
        self.started = true;
        self.observe_all()
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepOutcome, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        self.world = cn_integrate(&self.world, joint, &self.params)?;
        let reward = cn_reward(&self.world.positions, &self.world.landmarks, self.world.collisions)?;
        self.done = self.world.clock >= self.params.horizon;
        let mut info = std::collections::BTreeMap::new();
        info.insert("collisions".to_string(), self.world.collisions as f64);
        Ok(StepOutcome {
            observations: self.observe_all(),
            rewards: vec![reward; self.params.agents],
            done: self.done,
            info,
        })
    }
}
