//! Level-Based Foraging on a square grid.
//!
//! Agents and foods carry integer levels. A group of agents standing next to
//! a food and issuing `LOAD` in the same step collects it when the sum of
//! their levels reaches the food level. Each loader is paid its share of the
//! food level, proportional to its own level, normalised by the total food
//! level spawned in the episode so that an agent's return lies in `[0, 1]`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_joint, invalid, AgentId, EnvError, Environment, JointAction, Layout, Observation, StepOutcome};
use crate::rng;

pub const ACTIONS: usize = 6;
pub const NONE: usize = 0;
pub const NORTH: usize = 1;
pub const SOUTH: usize = 2;
pub const WEST: usize = 3;
pub const EAST: usize = 4;
pub const LOAD: usize = 5;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfParams {
    pub agents: usize,
    pub grid: usize,
    pub foods: usize,
    pub max_agent_level: u32,
    /// When set, every food needs the combined level of all agents.
    pub cooperative: bool,
    pub horizon: usize,
}

impl Default for LbfParams {
    fn default() -> Self {
        Self {
            agents: 2,
            grid: 12,
            foods: 4,
            max_agent_level: 3,
            cooperative: true,
            horizon: 50,
        }
    }
}

impl LbfParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.agents == 0 {
            return Err(invalid("agents", "must be at least 1"));
        }
        if self.foods == 0 {
            return Err(invalid("foods", "must be at least 1"));
        }
        if self.grid < 3 {
            return Err(invalid("grid", "must be at least 3"));
        }
        if self.max_agent_level == 0 {
            return Err(invalid("max_agent_level", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        // foods sit in the interior with a free ring around each one
        let interior = (self.grid - 2) * (self.grid - 2);
        if 9 * self.foods > interior || self.foods + self.agents > self.grid * self.grid / 2 {
            return Err(invalid(
                "foods",
                format!("{} foods and {} agents do not fit on a {}x{} grid", self.foods, self.agents, self.grid, self.grid),
            ));
        }
        Ok(())
    }

    /// `3 (F + K)`
    pub fn obs_dim(&self) -> usize {
        3 * (self.foods + self.agents)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfWorld {
    pub grid: usize,
    pub agent_cells: Vec<Cell>,
    pub agent_levels: Vec<u32>,
    pub food_cells: Vec<Cell>,
    pub food_levels: Vec<u32>,
    pub food_alive: Vec<bool>,
    pub cooperative: bool,
    pub clock: usize,
    /// Sum of all food levels spawned at reset; reward normaliser.
    pub total_food_level: u32,
}

impl LbfWorld {
    pub fn food_at(&self, cell: Cell) -> Option<usize> {
        (0..self.food_cells.len()).find(|&f| self.food_alive[f] && self.food_cells[f] == cell)
    }

    pub fn agent_at(&self, cell: Cell) -> Option<usize> {
        self.agent_cells.iter().position(|&c| c == cell)
    }

    pub fn foods_remaining(&self) -> usize {
        self.food_alive.iter().filter(|&&a| a).count()
    }

    /// Alive food with the smallest index in the 4-neighbourhood of `cell`.
    pub fn adjacent_food(&self, cell: Cell) -> Option<usize> {
        (0..self.food_cells.len()).find(|&f| self.food_alive[f] && adjacent(cell, self.food_cells[f]))
    }
}

pub fn adjacent(a: Cell, b: Cell) -> bool {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOutcome {
    pub success: bool,
    pub level_sum: u32,
    pub food_level: u32,
}

/// Resolves one pooled load attempt on `food`. Clears the food on success.
pub fn lbf_attempt_load(world: &mut LbfWorld, loaders: &[AgentId], food: usize) -> Result<LoadOutcome, EnvError> {
    if food >= world.food_cells.len() {
        return Err(EnvError::FoodOutOfRange {
            index: food,
            count: world.food_cells.len(),
        });
    }
    if !world.food_alive[food] {
        return Err(EnvError::FoodGone(food));
    }
    if loaders.is_empty() {
        return Err(EnvError::NoLoaders);
    }
    let mut level_sum = 0;
    for a in loaders {
        let cell = *world.agent_cells.get(a.index()).ok_or(EnvError::AgentOutOfRange(a.index()))?;
        if !adjacent(cell, world.food_cells[food]) {
            return Err(EnvError::NotAdjacent {
                agent: a.index(),
                food,
            });
        }
        level_sum += world.agent_levels[a.index()];
    }
    let food_level = world.food_levels[food];
    let success = level_sum >= food_level;
    if success {
        world.food_alive[food] = false;
    }
    Ok(LoadOutcome {
        success,
        level_sum,
        food_level,
    })
}

/// Unnormalised payout: `food_level * level_i / sum_j level_j`.
pub fn lbf_shares(food_level: u32, loader_levels: &[u32]) -> Result<Vec<f64>, EnvError> {
    if loader_levels.is_empty() {
        return Err(EnvError::NoLoaders);
    }
    let total: u32 = loader_levels.iter().sum();
    Ok(loader_levels
        .iter()
        .map(|&l| food_level as f64 * l as f64 / total as f64)
        .collect())
}

/// Payout normalised by the episode's total spawned food level.
pub fn lbf_reward(food_level: u32, loader_levels: &[u32], total_food_level: u32) -> Result<Vec<f64>, EnvError> {
    if total_food_level == 0 {
        return Err(invalid("total_food_level", "must be positive"));
    }
    Ok(lbf_shares(food_level, loader_levels)?
        .into_iter()
        .map(|s| s / total_food_level as f64)
        .collect())
}

fn target(cell: Cell, action: usize, grid: usize) -> Option<Cell> {
    let (r, c) = cell;
    match action {
        NORTH if r > 0 => Some((r - 1, c)),
        SOUTH if r + 1 < grid => Some((r + 1, c)),
        WEST if c > 0 => Some((r, c - 1)),
        EAST if c + 1 < grid => Some((r, c + 1)),
        _ => None,
    }
}

/// Applies one joint action and returns per-agent rewards.
///
/// Moves are resolved against the pre-step state: a move succeeds when its
/// target is inside the grid, holds neither a food nor an agent, and no other
/// agent targets the same cell. Loads are then resolved food by food in index
/// order, each loader committing to its lowest-index adjacent food.
pub fn lbf_transition(world: &mut LbfWorld, joint: &JointAction) -> Result<Vec<f64>, EnvError> {
    check_joint(joint, world.agent_cells.len(), |_| ACTIONS)?;
    let k = world.agent_cells.len();

    let targets: Vec<Option<Cell>> = (0..k)
        .map(|i| {
            target(world.agent_cells[i], joint.actions[i], world.grid)
                .filter(|&t| world.food_at(t).is_none() && world.agent_at(t).is_none())
        })
        .collect();
    let mut loaders_by_food: BTreeMap<usize, Vec<AgentId>> = BTreeMap::new();
    for i in 0..k {
        if joint.actions[i] == LOAD {
            if let Some(f) = world.adjacent_food(world.agent_cells[i]) {
                loaders_by_food.entry(f).or_default().push(AgentId(i));
            }
        }
    }
    for i in 0..k {
        if let Some(t) = targets[i] {
            let contested = (0..k).any(|j| j != i && targets[j] == Some(t));
            if !contested {
                world.agent_cells[i] = t;
            }
        }
    }

    let mut rewards = vec![0.0; k];
    for (food, loaders) in loaders_by_food {
        let outcome = lbf_attempt_load(world, &loaders, food)?;
        if outcome.success {
            let levels: Vec<u32> = loaders.iter().map(|a| world.agent_levels[a.index()]).collect();
            let pay = lbf_reward(outcome.food_level, &levels, world.total_food_level)?;
            for (a, r) in loaders.iter().zip(pay) {
                rewards[a.index()] += r;
            }
        }
    }
    world.clock += 1;
    Ok(rewards)
}

pub fn lbf_observe(world: &LbfWorld, agent: AgentId, max_agent_level: u32) -> Result<Observation, EnvError> {
    let i = agent.index();
    if i >= world.agent_cells.len() {
        return Err(EnvError::AgentOutOfRange(i));
    }
    let span = (world.grid - 1) as f64;
    let max_food = max_agent_level as f64 * world.agent_cells.len() as f64;
    let mut values = Vec::with_capacity(3 * (world.food_cells.len() + world.agent_cells.len()));
    let push = |values: &mut Vec<f64>, cell: Cell, level: f64| {
        values.extend_from_slice(&[cell.0 as f64 / span, cell.1 as f64 / span, level]);
    };
    push(&mut values, world.agent_cells[i], world.agent_levels[i] as f64 / max_agent_level as f64);
    for f in 0..world.food_cells.len() {
        if world.food_alive[f] {
            push(&mut values, world.food_cells[f], world.food_levels[f] as f64 / max_food);
        } else {
            values.extend_from_slice(&[-1.0, -1.0, 0.0]);
        }
    }
    for j in (0..world.agent_cells.len()).filter(|&j| j != i) {
        push(&mut values, world.agent_cells[j], world.agent_levels[j] as f64 / max_agent_level as f64);
    }
    Ok(Observation::new(values, Layout::Lbf))
}

#[derive(Debug, Clone)]
pub struct LevelBasedForaging {
    params: LbfParams,
    world: Option<LbfWorld>,
    done: bool,
}

impl LevelBasedForaging {
    pub fn new(params: LbfParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(Self {
            params,
            world: None,
            done: false,
        })
    }

    pub fn params(&self) -> &LbfParams {
        &self.params
    }

    pub fn world(&self) -> Option<&LbfWorld> {
        self.world.as_ref()
    }

    pub fn set_world(&mut self, world: LbfWorld) {
        self.done = world.clock >= self.params.horizon || world.foods_remaining() == 0;
        self.world = Some(world);
    }

    fn spawn(&self, seed: u64) -> LbfWorld {
        let p = &self.params;
        let mut rng = rng::seeded(seed);
        let agent_levels: Vec<u32> = (0..p.agents).map(|_| rng.random_range(1..=p.max_agent_level)).collect();
        let team_level: u32 = agent_levels.iter().sum();

        let mut food_cells: Vec<Cell> = Vec::with_capacity(p.foods);
        while food_cells.len() < p.foods {
            let cell = (rng.random_range(1..p.grid - 1), rng.random_range(1..p.grid - 1));
            let crowded = food_cells
                .iter()
                .any(|&f| f.0.abs_diff(cell.0) <= 1 && f.1.abs_diff(cell.1) <= 1);
            if !crowded {
                food_cells.push(cell);
            }
        }
        let food_levels: Vec<u32> = (0..p.foods)
            .map(|_| {
                if p.cooperative {
                    team_level
                } else {
                    rng.random_range(1..=team_level)
                }
            })
            .collect();

        let mut agent_cells: Vec<Cell> = Vec::with_capacity(p.agents);
        while agent_cells.len() < p.agents {
            let cell = (rng.random_range(0..p.grid), rng.random_range(0..p.grid));
            if !food_cells.contains(&cell) && !agent_cells.contains(&cell) {
                agent_cells.push(cell);
            }
        }
        let total_food_level = food_levels.iter().sum();
        LbfWorld {
            grid: p.grid,
            agent_cells,
            agent_levels,
            food_cells,
            food_alive: vec![true; p.foods],
            food_levels,
            cooperative: p.cooperative,
            clock: 0,
            total_food_level,
        }
    }

    fn observe_all(&self, world: &LbfWorld) -> Vec<Observation> {
        (0..self.params.agents)
            .map(|i| lbf_observe(world, AgentId(i), self.params.max_agent_level).expect("agent in range"))
            .collect()
    }
}

impl Environment for LevelBasedForaging {
    fn name(&self) -> &'static str {
        "lbf"
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
        self.world.as_ref().map_or(0, |w| w.clock)
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let world = self.spawn(seed);
        let obs = self.observe_all(&world);
        self.world = Some(world);
        self.done = false;
        obs
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let mut world = self.world.take().ok_or(EnvError::NotReset)?;
        let result = lbf_transition(&mut world, joint);
        let rewards = match result {
            Ok(r) => r,
            Err(e) => {
                self.world = Some(world);
                return Err(e);
            }
        };
        self.done = world.clock >= self.params.horizon || world.foods_remaining() == 0;
        let mut info = BTreeMap::new();
        info.insert("foods_remaining".to_string(), world.foods_remaining() as f64);
        if world.cooperative {
            info.insert("team_reward".to_string(), rewards.iter().sum());
        }
        let observations = self.observe_all(&world);
        self.world = Some(world);
        Ok(StepOutcome {
            observations,
            rewards,
            done: self.done,
            info,
        })
    }
}
