//! Pressure Plate, fixed four-agent linear map.
//!
//! ```text
//! 19 rows x 9 columns; four rooms of four rows each, separated by wall rows.
//!
//!   rows  0..=3   room 0 (start)   plate 0 at (3, 1)
//!   row   4       wall, door 0 at (4, 4)
//!   rows  5..=8   room 1           plate 1 at (8, 7)
//!   row   9       wall, door 1 at (9, 4)
//!   rows 10..=13  room 2           plate 2 at (13, 1)
//!   row  14       wall, door 2 at (14, 4)
//!   rows 15..=18  room 3 (goal)    goal at (18, 4)
//! ```
//!
//! Agent `j < 3` owns plate `j` and door `j`; door `j` is open exactly while
//! some agent stands on plate `j`. Agent 3 owns the goal. Agent `j`'s desired
//! room is room `j`. A door cell counts as part of the room below it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_joint, invalid, AgentId, EnvError, Environment, JointAction, Layout, Observation, StepOutcome};
use crate::rng;

pub const AGENTS: usize = 4;
pub const ROOMS: usize = 4;
pub const ROWS: usize = ROOMS * 5 - 1;
pub const COLS: usize = 9;
pub const ACTIONS: usize = 5;
pub const NONE: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;

const CROP: usize = 5;
const CHANNELS: usize = 4;
pub const OBS_DIM: usize = CHANNELS * CROP * CROP + 2;

pub type Cell = (usize, usize);

pub const PLATES: [Cell; ROOMS - 1] = [(3, 1), (8, 7), (13, 1)];
pub const DOORS: [Cell; ROOMS - 1] = [(4, 4), (9, 4), (14, 4)];
pub const GOAL: Cell = (18, 4);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpParams {
    pub horizon: usize,
}

impl Default for PpParams {
    fn default() -> Self {
        Self { horizon: 150 }
    }
}

impl PpParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn room_of(cell: Cell) -> usize {
    (cell.0 + 1) / 5
}

fn is_wall_row(row: usize) -> bool {
    row % 5 == 4
}

pub fn is_door(cell: Cell) -> Option<usize> {
    DOORS.iter().position(|&d| d == cell)
}

/// Cells an agent may stand on, ignoring door state.
pub fn is_floor(cell: Cell) -> bool {
    cell.0 < ROWS && cell.1 < COLS && (!is_wall_row(cell.0) || is_door(cell).is_some())
}

/// The plate (or, for the last agent, the goal) an agent is paid to approach.
pub fn target_of(agent: AgentId) -> Cell {
    PLATES.get(agent.index()).copied().unwrap_or(GOAL)
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

fn room_cells(room: usize) -> impl Iterator<Item = Cell> {
    (0..ROWS)
        .flat_map(|r| (0..COLS).map(move |c| (r, c)))
        .filter(move |&c| is_floor(c) && room_of(c) == room)
}

/// Largest Manhattan distance from `target` to any floor cell of its room.
pub fn max_room_distance(target: Cell) -> usize {
    room_cells(room_of(target)).map(|c| manhattan(c, target)).max().unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpWorld {
    pub agent_cells: Vec<Cell>,
    pub clock: usize,
}

impl PpWorld {
    pub fn new(agent_cells: Vec<Cell>) -> Self {
        Self { agent_cells, clock: 0 }
    }

    pub fn occupied(&self, cell: Cell) -> bool {
        self.agent_cells.contains(&cell)
    }
}

pub fn pp_door_state(world: &PpWorld) -> [bool; ROOMS - 1] {
    let mut open = [false; ROOMS - 1];
    for (d, plate) in PLATES.iter().enumerate() {
        open[d] = world.occupied(*plate);
    }
    open
}

pub fn pp_reward(world: &PpWorld, agent: AgentId) -> Result<f64, EnvError> {
    let cell = *world
        .agent_cells
        .get(agent.index())
        .ok_or(EnvError::AgentOutOfRange(agent.index()))?;
    let target = target_of(agent);
    let desired = agent.index();
    let room = room_of(cell);
    if room == desired {
        Ok(-(manhattan(cell, target) as f64) / max_room_distance(target) as f64)
    } else {
        Ok(-(room.abs_diff(desired) as f64))
    }
}

fn step_target(cell: Cell, action: usize) -> Option<Cell> {
    let (r, c) = cell;
    match action {
        UP if r > 0 => Some((r - 1, c)),
        DOWN if r + 1 < ROWS => Some((r + 1, c)),
        LEFT if c > 0 => Some((r, c - 1)),
        RIGHT if c + 1 < COLS => Some((r, c + 1)),
        _ => None,
    }
}

/// Moves every agent at once against the pre-step door state.
pub fn pp_transition(world: &mut PpWorld, joint: &JointAction) -> Result<(), EnvError> {
    check_joint(joint, world.agent_cells.len(), |_| ACTIONS)?;
    let open = pp_door_state(world);
    let k = world.agent_cells.len();
    let targets: Vec<Option<Cell>> = (0..k)
        .map(|i| {
            step_target(world.agent_cells[i], joint.actions[i]).filter(|&t| {
                is_floor(t) && is_door(t).map_or(true, |d| open[d]) && !world.occupied(t)
            })
        })
        .collect();
    for i in 0..k {
        if let Some(t) = targets[i] {
            if !(0..k).any(|j| j != i && targets[j] == Some(t)) {
                world.agent_cells[i] = t;
            }
        }
    }
    world.clock += 1;
    Ok(())
}

pub fn pp_observe(world: &PpWorld, agent: AgentId) -> Result<Observation, EnvError> {
    let me = *world
        .agent_cells
        .get(agent.index())
        .ok_or(EnvError::AgentOutOfRange(agent.index()))?;
    let open = pp_door_state(world);
    let half = (CROP / 2) as isize;
    let mut values = vec![0.0; OBS_DIM];
    for dr in -half..=half {
        for dc in -half..=half {
            let r = me.0 as isize + dr;
            let c = me.1 as isize + dc;
            if r < 0 || c < 0 || r >= ROWS as isize || c >= COLS as isize {
                continue;
            }
            let cell = (r as usize, c as usize);
            let idx = ((dr + half) as usize) * CROP + (dc + half) as usize;
            let plane = CROP * CROP;
            if world.occupied(cell) {
                values[idx] = 1.0;
            }
            if PLATES.contains(&cell) {
                values[plane + idx] = 1.0;
            }
            if is_door(cell).is_some_and(|d| !open[d]) {
                values[2 * plane + idx] = 1.0;
            }
            if cell == GOAL {
                values[3 * plane + idx] = 1.0;
            }
        }
    }
    values[OBS_DIM - 2] = me.0 as f64 / ROWS as f64;
    values[OBS_DIM - 1] = me.1 as f64 / COLS as f64;
    Ok(Observation::new(values, Layout::PressurePlate))
}

#[derive(Debug, Clone)]
pub struct PressurePlate {
    params: PpParams,
    world: Option<PpWorld>,
    done: bool,
}

impl PressurePlate {
    pub fn new(params: PpParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(Self {
            params,
            world: None,
            done: false,
        })
    }

    pub fn world(&self) -> Option<&PpWorld> {
        self.world.as_ref()
    }

    pub fn set_world(&mut self, world: PpWorld) {
        self.done = world.clock >= self.params.horizon || world.agent_cells[AGENTS - 1] == GOAL;
        self.world = Some(world);
    }

    fn observe_all(world: &PpWorld) -> Vec<Observation> {
        (0..AGENTS)
            .map(|i| pp_observe(world, AgentId(i)).expect("agent in range"))
            .collect()
    }
}

impl Environment for PressurePlate {
    fn name(&self) -> &'static str {
        "pressure_plate"
    }

    fn agent_count(&self) -> usize {
        AGENTS
    }

    fn obs_dim(&self, _agent: AgentId) -> usize {
        OBS_DIM
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
        let mut rng = rng::seeded(seed);
        let mut start: Vec<Cell> = room_cells(0).filter(|&c| c != PLATES[0]).collect();
        start.shuffle(&mut rng);
        start.truncate(AGENTS);
        let world = PpWorld::new(start);
        let obs = Self::observe_all(&world);
        self.world = Some(world);
        self.done = false;
        obs
    }

    fn step(&mut self, joint: &JointAction) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let world = self.world.as_mut().ok_or(EnvError::NotReset)?;
        pp_transition(world, joint)?;
        let rewards = (0..AGENTS)
            .map(|i| pp_reward(world, AgentId(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let goal = world.agent_cells[AGENTS - 1] == GOAL;
        self.done = goal || world.clock >= self.params.horizon;
        let mut info = BTreeMap::new();
        info.insert("doors_open".to_string(), pp_door_state(world).iter().filter(|&&o| o).count() as f64);
        info.insert("goal_reached".to_string(), if goal { 1.0 } else { 0.0 });
        Ok(StepOutcome {
            observations: Self::observe_all(world),
            rewards,
            done: self.done,
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_shape() {
        assert_eq!(ROWS, 19);
        assert_eq!(OBS_DIM, 102);
        for (j, &p) in PLATES.iter().enumerate() {
            assert_eq!(room_of(p), j);
            assert!(is_floor(p));
        }
        for (j, &d) in DOORS.iter().enumerate() {
            assert_eq!(room_of(d), j + 1);
        }
        assert_eq!(room_of(GOAL), 3);
        assert!(!is_floor((4, 0)));
    }

    #[test]
    fn reward_branches() {
        let w = PpWorld::new(vec![PLATES[0], (0, 0), (0, 8), (1, 1)]);
        assert_eq!(pp_reward(&w, AgentId(0)).unwrap(), 0.0);
        // agent 2 wants room 2, stands in room 0
        assert_eq!(pp_reward(&w, AgentId(2)).unwrap(), -2.0);
        assert_eq!(pp_reward(&w, AgentId(3)).unwrap(), -3.0);

        // farthest cell of room 0 from plate (3, 1) is (0, 8): 3 + 7 = 10
        assert_eq!(max_room_distance(PLATES[0]), 10);
        let w = PpWorld::new(vec![(0, 8), (0, 0), (1, 0), (1, 1)]);
        assert_eq!(pp_reward(&w, AgentId(0)).unwrap(), -1.0);
    }

    #[test]
    fn doors_follow_plates() {
        let w = PpWorld::new(vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert_eq!(pp_door_state(&w), [false, false, false]);
        let w = PpWorld::new(vec![(0, 0), PLATES[1], (0, 2), (0, 3)]);
        assert_eq!(pp_door_state(&w), [false, true, false]);
    }

    #[test]
    fn crop_edges_are_zero_padded() {
        let w = PpWorld::new(vec![(0, 0), (2, 6), (2, 7), (1, 1)]);
        let o = pp_observe(&w, AgentId(0)).unwrap();
        // crop rows -2 and -1 are outside the grid
        assert!(o.values[0..10].iter().all(|&v| v == 0.0));
        assert_eq!(o.values[12], 1.0);
        // agent 3 at (+1, +1)
        assert_eq!(o.values[3 * 5 + 3], 1.0);
    }

    #[test]
    fn closed_door_blocks() {
        let mut w = PpWorld::new(vec![(3, 4), (0, 0), (0, 8), (1, 1)]);
        pp_transition(&mut w, &JointAction::new(vec![DOWN, NONE, NONE, NONE])).unwrap();
        assert_eq!(w.agent_cells[0], (3, 4));
        let mut w = PpWorld::new(vec![(3, 4), PLATES[0], (0, 8), (1, 1)]);
        pp_transition(&mut w, &JointAction::new(vec![DOWN, NONE, NONE, NONE])).unwrap();
        assert_eq!(w.agent_cells[0], DOORS[0]);
    }
}
