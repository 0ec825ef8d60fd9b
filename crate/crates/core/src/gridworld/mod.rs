//! Two-room pixel gridworld with switches, a door, a pushable block and
//! noisy cells, plus exhaustive enumeration of its reachable states.

mod layout;
mod observation;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use layout::{Cell, Layout, LayoutError, Tile, COMPACT_LAYOUT, STANDARD_LAYOUT, TINY_LAYOUT};
pub use observation::{Observation, Palette, Rgb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Toggle,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Toggle];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> Option<(isize, isize)> {
        match self {
            Action::Up => Some((-1, 0)),
            Action::Down => Some((1, 0)),
            Action::Left => Some((0, -1)),
            Action::Right => Some((0, 1)),
            Action::Toggle => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Latent world configuration that a frame is rendered from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub agent_cell: Cell,
    pub block_cell: Cell,
    pub door_open: bool,
    pub step_count: u64,
}

/// Placement part of a state, ignoring the step counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub agent: Cell,
    pub block: Cell,
    pub door_open: bool,
}

impl EnvState {
    pub fn key(&self) -> StateKey {
        StateKey {
            agent: self.agent_cell,
            block: self.block_cell,
            door_open: self.door_open,
        }
    }

    fn from_key(key: StateKey) -> Self {
        Self {
            agent_cell: key.agent,
            block_cell: key.block,
            door_open: key.door_open,
            step_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartMode {
    /// Layout start placement with the door closed.
    Fixed,
    /// Uniform over the enumerated feasible states.
    RandomFeasible,
}

/// Which random outcome a step takes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Branch {
    /// Replacement move on a noisy cell, if the noise fires.
    pub slip: Option<Action>,
    /// Whether an open door shuts after the move.
    pub door_closes: bool,
}

/// Probabilities of the two noise sources.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    pub slip_prob: f64,
    pub door_close_prob: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            slip_prob: 0.5,
            door_close_prob: 0.01,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("toggle is only available on a switch (agent at {0})")]
    IllegalToggle(Cell),
    #[error("state is not feasible: {0}")]
    Infeasible(String),
}

struct Feasible {
    states: Vec<EnvState>,
    index: HashMap<StateKey, usize>,
}

/// A layout together with its dynamics and cached feasible set.
pub struct World {
    layout: Layout,
    palette: Palette,
    dynamics: Dynamics,
    feasible: OnceLock<Feasible>,
}

impl Clone for World {
    fn clone(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            palette: self.palette,
            dynamics: self.dynamics,
            feasible: OnceLock::new(),
        }
    }
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("rows", &self.layout.rows())
            .field("cols", &self.layout.cols())
            .field("dynamics", &self.dynamics)
            .finish()
    }
}

impl World {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            palette: Palette::default(),
            dynamics: Dynamics::default(),
            feasible: OnceLock::new(),
        }
    }

    pub fn with_dynamics(mut self, dynamics: Dynamics) -> Self {
        self.dynamics = dynamics;
        self.feasible = OnceLock::new();
        self
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    /// `[rows, cols, channels]` of rendered frames.
    pub fn observation_shape(&self) -> [usize; 3] {
        [self.layout.rows(), self.layout.cols(), Observation::CHANNELS]
    }

    pub fn canonical_start(&self) -> EnvState {
        EnvState {
            agent_cell: self.layout.agent_start(),
            block_cell: self.layout.block_start(),
            door_open: false,
            step_count: 0,
        }
    }

    pub fn reset(&self, rng: &mut impl Rng, mode: StartMode) -> EnvState {
        match mode {
            StartMode::Fixed => self.canonical_start(),
            StartMode::RandomFeasible => {
                let states = self.feasible_states();
                states[rng.random_range(0..states.len())]
            }
        }
    }

    pub fn reset_seeded(&self, seed: u64, mode: StartMode) -> EnvState {
        self.reset(&mut ChaCha8Rng::seed_from_u64(seed), mode)
    }

    pub fn toggle_available(&self, state: &EnvState) -> bool {
        self.layout.tile(state.agent_cell) == Tile::Switch
    }

    pub fn legal_actions(&self, state: &EnvState) -> &'static [Action] {
        if self.toggle_available(state) {
            &Action::ALL
        } else {
            &Action::MOVES
        }
    }

    /// Checks the placement rules every reachable state obeys.
    pub fn check_state(&self, state: &EnvState) -> Result<(), StepError> {
        let l = &self.layout;
        let in_grid = |c: Cell| c.row < l.rows() && c.col < l.cols();
        if !in_grid(state.agent_cell) || !in_grid(state.block_cell) {
            return Err(StepError::Infeasible("cell outside the grid".into()));
        }
        let agent_tile = l.tile(state.agent_cell);
        if !agent_tile.walkable() || (agent_tile == Tile::Door && !state.door_open) {
            return Err(StepError::Infeasible(format!("agent on {agent_tile:?}")));
        }
        if !l.block_can_occupy(state.block_cell) {
            return Err(StepError::Infeasible(format!(
                "block on {:?}",
                l.tile(state.block_cell)
            )));
        }
        if state.agent_cell == state.block_cell {
            return Err(StepError::Infeasible("agent and block overlap".into()));
        }
        Ok(())
    }

    /// Samples the noise for one step and applies it.
    ///
    /// Draw order: slip coin then slip direction (noisy cells only), then
    /// the door-close coin if the door is open after the move.
    pub fn step(&self, state: &EnvState, action: Action, rng: &mut impl Rng) -> Result<EnvState, StepError> {
        self.check_action(state, action)?;
        let mut branch = Branch::default();
        if action != Action::Toggle
            && self.layout.tile(state.agent_cell) == Tile::Stochastic
            && rng.random_bool(self.dynamics.slip_prob)
        {
            branch.slip = Some(Action::MOVES[rng.random_range(0..4)]);
        }
        let moved = self.apply_action(state, action, branch.slip);
        if self.door_may_close(&moved) {
            branch.door_closes = rng.random_bool(self.dynamics.door_close_prob);
        }
        Ok(self.finish(moved, branch.door_closes))
    }

    /// Deterministic step along a chosen noise branch.
    pub fn step_branch(&self, state: &EnvState, action: Action, branch: Branch) -> Result<EnvState, StepError> {
        self.check_action(state, action)?;
        let noisy = self.layout.tile(state.agent_cell) == Tile::Stochastic;
        let slip = branch.slip.filter(|_| noisy && action != Action::Toggle);
        let moved = self.apply_action(state, action, slip);
        let closes = branch.door_closes && self.door_may_close(&moved);
        Ok(self.finish(moved, closes))
    }

    /// Full next-state distribution; probabilities of equal successors are
    /// merged and the list is sorted by successor key.
    pub fn outcomes(&self, state: &EnvState, action: Action) -> Result<Vec<(EnvState, f64)>, StepError> {
        self.check_action(state, action)?;
        let Dynamics {
            slip_prob,
            door_close_prob,
        } = self.dynamics;
        let mut moves = vec![(None, 1.0)];
        if action != Action::Toggle && self.layout.tile(state.agent_cell) == Tile::Stochastic {
            moves = vec![(None, 1.0 - slip_prob)];
            moves.extend(Action::MOVES.iter().map(|&m| (Some(m), slip_prob / 4.0)));
        }
        let mut merged: Vec<(EnvState, f64)> = Vec::new();
        let mut push = |s: EnvState, p: f64| {
            if p <= 0.0 {
                return;
            }
            match merged.iter_mut().find(|(t, _)| t.key() == s.key()) {
                Some(entry) => entry.1 += p,
                None => merged.push((s, p)),
            }
        };
        for (slip, p) in moves {
            let moved = self.apply_action(state, action, slip);
            if self.door_may_close(&moved) {
                push(self.finish(moved, false), p * (1.0 - door_close_prob));
                push(self.finish(moved, true), p * door_close_prob);
            } else {
                push(self.finish(moved, false), p);
            }
        }
        merged.sort_by_key(|(s, _)| s.key());
        Ok(merged)
    }

    fn check_action(&self, state: &EnvState, action: Action) -> Result<(), StepError> {
        if action == Action::Toggle && !self.toggle_available(state) {
            return Err(StepError::IllegalToggle(state.agent_cell));
        }
        Ok(())
    }

    fn passable(&self, cell: Cell, door_open: bool) -> bool {
        match self.layout.tile(cell) {
            Tile::Wall => false,
            Tile::Door => door_open,
            _ => true,
        }
    }

    fn apply_action(&self, state: &EnvState, action: Action, slip: Option<Action>) -> EnvState {
        let mut next = *state;
        if action == Action::Toggle {
            next.door_open = !state.door_open;
            return next;
        }
        let executed = slip.unwrap_or(action);
        let (dr, dc) = executed.delta().expect("moves have a direction");
        let Some(target) = self.layout.offset(state.agent_cell, dr, dc) else {
            return next;
        };
        if !self.passable(target, state.door_open) {
            return next;
        }
        if target == state.block_cell {
            match self.layout.offset(target, dr, dc) {
                Some(beyond) if self.layout.block_can_occupy(beyond) => {
                    next.block_cell = beyond;
                    next.agent_cell = target;
                }
                _ => {}
            }
            return next;
        }
        next.agent_cell = target;
        next
    }

    /// An open door only shuts while nothing stands in the doorway.
    fn door_may_close(&self, moved: &EnvState) -> bool {
        moved.door_open && Some(moved.agent_cell) != self.layout.door()
    }

    fn finish(&self, mut moved: EnvState, closes: bool) -> EnvState {
        if closes {
            moved.door_open = false;
        }
        moved.step_count += 1;
        moved
    }

    pub fn render(&self, state: &EnvState) -> Observation {
        let (rows, cols) = (self.layout.rows(), self.layout.cols());
        let p = &self.palette;
        let mut pixels = Vec::with_capacity(rows * cols * 3);
        for cell in self.layout.cells() {
            let colour = if cell == state.agent_cell {
                p.agent
            } else if cell == state.block_cell {
                p.block
            } else {
                match self.layout.tile(cell) {
                    Tile::Wall => p.wall,
                    Tile::Floor => p.floor,
                    Tile::Switch => p.switch,
                    Tile::Stochastic => p.stochastic,
                    Tile::Door if state.door_open => p.door_open,
                    Tile::Door => p.door_closed,
                }
            };
            pixels.extend_from_slice(&colour);
        }
        Observation::from_pixels(rows, cols, pixels)
    }

    /// Breadth-first closure from the canonical start over every legal
    /// action and every noise branch. Sorted by key; computed once.
    pub fn feasible_states(&self) -> &[EnvState] {
        &self.feasible().states
    }

    /// Position of a state in [`World::feasible_states`].
    pub fn state_id(&self, state: &EnvState) -> Option<usize> {
        self.feasible().index.get(&state.key()).copied()
    }

    pub fn state_by_id(&self, id: usize) -> Option<EnvState> {
        self.feasible().states.get(id).copied()
    }

    fn feasible(&self) -> &Feasible {
        self.feasible.get_or_init(|| {
            let mut states = enumerate_feasible_states(self);
            states.sort_by_key(EnvState::key);
            let index = states.iter().enumerate().map(|(i, s)| (s.key(), i)).collect();
            Feasible { states, index }
        })
    }
}

/// Exhaustive reachable set, in discovery order, with step counters zeroed.
pub fn enumerate_feasible_states(world: &World) -> Vec<EnvState> {
    let start = world.canonical_start();
    let mut seen: HashMap<StateKey, ()> = HashMap::from([(start.key(), ())]);
    let mut order = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(state) = queue.pop_front() {
        for &action in world.legal_actions(&state) {
            let next = world.outcomes(&state, action).expect("legal actions always step");
            for (succ, _) in next {
                let succ = EnvState::from_key(succ.key());
                if seen.insert(succ.key(), ()).is_none() {
                    order.push(succ);
                    queue.push_back(succ);
                }
            }
        }
    }
    order
}

/// Environment instance: a state plus its private noise stream.
#[derive(Clone, Debug)]
pub struct Env<'w> {
    world: &'w World,
    state: EnvState,
    rng: ChaCha8Rng,
}

impl<'w> Env<'w> {
    pub fn new(world: &'w World, rng: ChaCha8Rng, mode: StartMode) -> Self {
        let mut rng = rng;
        let state = world.reset(&mut rng, mode);
        Self { world, state, rng }
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observe(&self) -> Observation {
        self.world.render(&self.state)
    }

    pub fn reset(&mut self, mode: StartMode) -> EnvState {
        self.state = self.world.reset(&mut self.rng, mode);
        self.state
    }

    pub fn legal_actions(&self) -> &'static [Action] {
        self.world.legal_actions(&self.state)
    }

    pub fn step(&mut self, action: Action) -> Result<EnvState, StepError> {
        self.state = self.world.step(&self.state, action, &mut self.rng)?;
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compact() -> World {
        World::new(Layout::compact())
    }

    fn state(agent: (usize, usize), block: (usize, usize), door_open: bool) -> EnvState {
        EnvState {
            agent_cell: Cell::new(agent.0, agent.1),
            block_cell: Cell::new(block.0, block.1),
            door_open,
            step_count: 0,
        }
    }

    #[test]
    fn fixed_reset_is_deterministic() {
        let world = World::new(Layout::standard());
        assert_eq!(
            world.reset_seeded(7, StartMode::Fixed),
            world.reset_seeded(7, StartMode::Fixed)
        );
        assert_eq!(
            world.reset_seeded(7, StartMode::RandomFeasible),
            world.reset_seeded(7, StartMode::RandomFeasible)
        );
    }

    #[test]
    fn random_reset_satisfies_invariants() {
        let world = World::new(Layout::standard());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = world.reset(&mut rng, StartMode::RandomFeasible);
            world.check_state(&s).unwrap();
        }
    }

    #[test]
    fn wall_blocks_movement() {
        let world = compact();
        let s = state((2, 1), (1, 2), false);
        let next = world.step_branch(&s, Action::Left, Branch::default()).unwrap();
        assert_eq!(next.agent_cell, s.agent_cell);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn closed_door_blocks_and_open_door_admits() {
        let world = compact();
        let s = state((3, 4), (1, 2), false);
        let blocked = world.step_branch(&s, Action::Right, Branch::default()).unwrap();
        assert_eq!(blocked.agent_cell, Cell::new(3, 4));
        let open = EnvState { door_open: true, ..s };
        let through = world.step_branch(&open, Action::Right, Branch::default()).unwrap();
        assert_eq!(through.agent_cell, Cell::new(3, 5));
    }

    #[test]
    fn toggle_opens_door_on_switch_and_is_rejected_elsewhere() {
        let world = compact();
        let on_switch = state((1, 1), (1, 2), false);
        let next = world
            .step_branch(&on_switch, Action::Toggle, Branch::default())
            .unwrap();
        assert!(next.door_open);
        let off = state((2, 2), (1, 2), false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            world.step(&off, Action::Toggle, &mut rng),
            Err(StepError::IllegalToggle(Cell::new(2, 2)))
        );
    }

    #[test]
    fn toggle_twice_restores_door_without_closing_noise() {
        let world = compact().with_dynamics(Dynamics {
            slip_prob: 0.5,
            door_close_prob: 0.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = state((6, 6), (1, 2), false);
        let once = world.step(&s, Action::Toggle, &mut rng).unwrap();
        let twice = world.step(&once, Action::Toggle, &mut rng).unwrap();
        assert!(once.door_open);
        assert_eq!(twice.door_open, s.door_open);
    }

    #[test]
    fn forced_close_branch_shuts_door() {
        let world = compact();
        let s = state((4, 2), (1, 2), true);
        let forced = Branch {
            slip: None,
            door_closes: true,
        };
        let next = world.step_branch(&s, Action::Up, forced).unwrap();
        assert!(!next.door_open);
    }

    #[test]
    fn occupied_doorway_stays_open() {
        let world = compact();
        let s = state((3, 4), (1, 2), true);
        let forced = Branch {
            slip: None,
            door_closes: true,
        };
        let next = world.step_branch(&s, Action::Right, forced).unwrap();
        assert_eq!(next.agent_cell, Cell::new(3, 5));
        assert!(next.door_open);
    }

    #[test]
    fn push_moves_block_and_agent() {
        let world = compact();
        let s = state((1, 1), (1, 2), false);
        let next = world.step_branch(&s, Action::Right, Branch::default()).unwrap();
        assert_eq!(next.agent_cell, Cell::new(1, 2));
        assert_eq!(next.block_cell, Cell::new(1, 3));
    }

    #[test]
    fn push_into_non_floor_moves_nothing() {
        let world = compact();
        // Block at (1,3), beyond it the noisy cell (1,4).
        let s = state((1, 2), (1, 3), false);
        let next = world.step_branch(&s, Action::Right, Branch::default()).unwrap();
        assert_eq!(next.agent_cell, s.agent_cell);
        assert_eq!(next.block_cell, s.block_cell);
        // Upward push runs into the border wall.
        let under = state((2, 2), (1, 2), false);
        let next = world.step_branch(&under, Action::Up, Branch::default()).unwrap();
        assert_eq!((next.agent_cell, next.block_cell), (under.agent_cell, under.block_cell));
    }

    #[test]
    fn slip_replaces_move_on_noisy_cell() {
        let world = compact();
        let s = state((5, 6), (1, 2), false);
        let slipped = Branch {
            slip: Some(Action::Up),
            door_closes: false,
        };
        let next = world.step_branch(&s, Action::Down, slipped).unwrap();
        assert_eq!(next.agent_cell, Cell::new(4, 6));
        let outcomes = world.outcomes(&s, Action::Down).unwrap();
        let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let down = outcomes.iter().find(|(t, _)| t.agent_cell == Cell::new(6, 6)).unwrap();
        assert!((down.1 - 0.625).abs() < 1e-12);
    }

    #[test]
    fn render_marks_agent_and_block() {
        let world = World::new(Layout::standard());
        let s = state((2, 3), (6, 2), false);
        let obs = world.render(&s);
        let p = world.palette();
        assert_eq!(obs.pixel(2, 3), p.agent);
        assert_eq!(obs.pixel(6, 2), p.block);
        assert_eq!(obs.pixel(4, 5), p.door_closed);
        assert_eq!(obs.pixel(8, 3), p.stochastic);
        assert_eq!(obs, world.render(&s));
        let agents = (0..10)
            .flat_map(|r| (0..10).map(move |c| (r, c)))
            .filter(|&(r, c)| obs.pixel(r, c) == p.agent)
            .count();
        assert_eq!(agents, 1);
    }

    #[test]
    fn seeded_replay_is_bit_identical() {
        let world = World::new(Layout::standard());
        let run = || {
            let mut env = Env::new(&world, ChaCha8Rng::seed_from_u64(11), StartMode::RandomFeasible);
            let mut pick = ChaCha8Rng::seed_from_u64(12);
            let mut trace = Vec::new();
            for _ in 0..300 {
                let legal = env.legal_actions();
                let a = legal[pick.random_range(0..legal.len())];
                env.step(a).unwrap();
                trace.push((*env.state(), env.observe()));
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
