//! Toroidal predator-prey world.
//!
//! `K` predators and one prey live on a `G x G` torus. Each step every agent
//! picks one of five moves; moves are applied one agent at a time in a random
//! priority order and an agent whose target cell is occupied stays put. The
//! predators win when the four orthogonal neighbours of the prey are all
//! predator-occupied.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_GRID_SIDE: i32 = 10;
pub const DEFAULT_PREDATORS: usize = 4;
pub const DEFAULT_EPISODE_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub x: i32,
    pub y: i32,
}

impl GridPos {
    pub const fn new(x: i32, y: i32) -> Self {
        GridPos { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32, grid_side: i32) -> Self {
        GridPos {
            x: (self.x + dx).rem_euclid(grid_side),
            y: (self.y + dy).rem_euclid(grid_side),
        }
    }

    pub fn is_valid(self, grid_side: i32) -> bool {
        (0..grid_side).contains(&self.x) && (0..grid_side).contains(&self.y)
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Wraps a single coordinate difference into `[-floor(G/2), ceil(G/2))`.
pub fn wrap_coord(d: i32, grid_side: i32) -> i32 {
    let lo = -(grid_side / 2);
    (d - lo).rem_euclid(grid_side) + lo
}

/// Minimal signed displacement from `a` to `b` on the torus.
pub fn wrap_delta(a: GridPos, b: GridPos, grid_side: i32) -> (i32, i32) {
    (
        wrap_coord(b.x - a.x, grid_side),
        wrap_coord(b.y - a.y, grid_side),
    )
}

/// The five moves. North is `+y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    #[serde(rename = "N")]
    North,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "E")]
    East,
    #[serde(rename = "W")]
    West,
    #[serde(rename = "X")]
    Stay,
}

impl Move {
    /// Fixed precedence order, also used for argmax tie-breaking.
    pub const ALL: [Move; 5] = [Move::North, Move::South, Move::East, Move::West, Move::Stay];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::North => (0, 1),
            Move::South => (0, -1),
            Move::East => (1, 0),
            Move::West => (-1, 0),
            Move::Stay => (0, 0),
        }
    }

    pub fn inverse(self) -> Move {
        match self {
            Move::North => Move::South,
            Move::South => Move::North,
            Move::East => Move::West,
            Move::West => Move::East,
            Move::Stay => Move::Stay,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }

    pub fn code(self) -> char {
        match self {
            Move::North => 'N',
            Move::South => 'S',
            Move::East => 'E',
            Move::West => 'W',
            Move::Stay => 'X',
        }
    }

    pub fn from_code(c: char) -> Option<Move> {
        Move::ALL.into_iter().find(|m| m.code() == c)
    }

    pub fn apply(self, pos: GridPos, grid_side: i32) -> GridPos {
        let (dx, dy) = self.delta();
        pos.offset(dx, dy, grid_side)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub predators: Vec<GridPos>,
    pub prey: GridPos,
    pub grid_side: i32,
}

impl WorldState {
    pub fn new(predators: Vec<GridPos>, prey: GridPos, grid_side: i32) -> Result<Self> {
        let state = WorldState {
            predators,
            prey,
            grid_side,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn num_predators(&self) -> usize {
        self.predators.len()
    }

    /// All agent positions, predators first and the prey last.
    pub fn positions(&self) -> impl Iterator<Item = GridPos> + '_ {
        self.predators
            .iter()
            .copied()
            .chain(std::iter::once(self.prey))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_side < 3 {
            return Err(Error::InvalidState(format!(
                "grid side {} < 3",
                self.grid_side
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for p in self.positions() {
            if !p.is_valid(self.grid_side) {
                return Err(Error::InvalidState(format!(
                    "{p} outside {0}x{0} grid",
                    self.grid_side
                )));
            }
            if !seen.insert(p) {
                return Err(Error::InvalidState(format!("two agents share cell {p}")));
            }
        }
        Ok(())
    }

    pub fn is_occupied(&self, cell: GridPos) -> bool {
        self.positions().any(|p| p == cell)
    }

    /// Uniformly random placement with all agents on distinct cells, rejecting
    /// already-captured configurations.
    pub fn random(num_predators: usize, grid_side: i32, rng: &mut impl rand::Rng) -> Result<Self> {
        let cells = (grid_side * grid_side) as usize;
        if num_predators + 1 > cells {
            return Err(Error::param("num_predators", "more agents than cells"));
        }
        loop {
            let picks = rand::seq::index::sample(rng, cells, num_predators + 1);
            let mut pos: Vec<GridPos> = picks
                .iter()
                .map(|i| GridPos::new(i as i32 % grid_side, i as i32 / grid_side))
                .collect();
            let prey = pos.pop().expect("at least one agent");
            let state = WorldState {
                predators: pos,
                prey,
                grid_side,
            };
            if num_predators != 4 || !is_capture(&state)? {
                return Ok(state);
            }
        }
    }

    /// Applies a global toroidal translation to every agent.
    pub fn translated(&self, dx: i32, dy: i32) -> Self {
        WorldState {
            predators: self
                .predators
                .iter()
                .map(|p| p.offset(dx, dy, self.grid_side))
                .collect(),
            prey: self.prey.offset(dx, dy, self.grid_side),
            grid_side: self.grid_side,
        }
    }
}

/// Applies all moves in `priority` order. Agent index `K` is the prey.
///
/// An agent whose target cell is occupied at its turn (by an agent that has
/// already moved there, or one that has not yet left) keeps its cell.
pub fn step(
    state: &WorldState,
    moves: &[Move],
    prey_move: Move,
    priority: &[usize],
) -> Result<WorldState> {
    let k = state.num_predators();
    if moves.len() != k {
        return Err(Error::WrongMoveCount {
            expected: k,
            got: moves.len(),
        });
    }
    check_priority(priority, k + 1)?;

    let g = state.grid_side;
    let mut positions: Vec<GridPos> = state.positions().collect();
    for &agent in priority {
        let mv = if agent == k { prey_move } else { moves[agent] };
        if mv == Move::Stay {
            continue;
        }
        let target = mv.apply(positions[agent], g);
        if !positions.contains(&target) {
            positions[agent] = target;
        }
    }
    let prey = positions.pop().expect("prey slot");
    Ok(WorldState {
        predators: positions,
        prey,
        grid_side: g,
    })
}

fn check_priority(priority: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if priority.len() != n {
        return Err(Error::InvalidState(format!(
            "priority has {} entries, need {n}",
            priority.len()
        )));
    }
    for &a in priority {
        if a >= n || std::mem::replace(&mut seen[a], true) {
            return Err(Error::InvalidState(format!(
                "priority {priority:?} is not a permutation"
            )));
        }
    }
    Ok(())
}

/// Random move order over the `K + 1` agents. With `prey_last` the prey always
/// moves after every predator.
pub fn draw_priority(
    num_predators: usize,
    prey_last: bool,
    rng: &mut impl rand::Rng,
) -> Vec<usize> {
    if prey_last {
        let mut order: Vec<usize> = (0..num_predators).collect();
        order.shuffle(rng);
        order.push(num_predators);
        order
    } else {
        let mut order: Vec<usize> = (0..=num_predators).collect();
        order.shuffle(rng);
        order
    }
}

/// Offsets (predator minus prey) of the four capture cells.
pub const CAPTURE_OFFSETS: [(i32, i32); 4] = [(0, 1), (0, -1), (1, 0), (-1, 0)];

pub fn is_capture(state: &WorldState) -> Result<bool> {
    if state.num_predators() != 4 {
        return Err(Error::UnsupportedAgentCount(state.num_predators()));
    }
    Ok(CAPTURE_OFFSETS.iter().all(|&(dx, dy)| {
        let cell = state.prey.offset(dx, dy, state.grid_side);
        state.predators.contains(&cell)
    }))
}

/// Uniform over moves into free cells; Stay is always legal.
pub fn prey_policy(state: &WorldState, rng: &mut impl rand::Rng) -> Move {
    let legal: Vec<Move> = Move::ALL
        .into_iter()
        .filter(|&m| m == Move::Stay || !state.is_occupied(m.apply(state.prey, state.grid_side)))
        .collect();
    legal[rng.gen_range(0..legal.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameConfig {
    pub episode_cap: usize,
    pub prey_last: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            episode_cap: DEFAULT_EPISODE_CAP,
            prey_last: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<WorldState>,
    pub joint_actions: Vec<Vec<Move>>,
    pub prey_moves: Vec<Move>,
    pub priorities: Vec<Vec<usize>>,
    pub capture: bool,
    /// `permutation[slot]` is the role of the predator stored in `slot`.
    pub permutation: Vec<usize>,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.joint_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_actions.is_empty()
    }

    pub fn grid_side(&self) -> i32 {
        self.states[0].grid_side
    }

    pub fn num_predators(&self) -> usize {
        self.states[0].num_predators()
    }

    /// Positions of one predator over the whole episode.
    pub fn predator_path(&self, slot: usize) -> Vec<GridPos> {
        self.states.iter().map(|s| s.predators[slot]).collect()
    }

    pub fn prey_path(&self) -> Vec<GridPos> {
        self.states.iter().map(|s| s.prey).collect()
    }

    /// Reorders predators so that new slot `j` holds the predator previously in
    /// slot `order[j]`. The recorded permutation is composed accordingly.
    pub fn reindexed(&self, order: &[usize]) -> Episode {
        let k = self.num_predators();
        assert_eq!(order.len(), k, "order must cover every predator");
        // agent index map for priorities: old index -> new index
        let mut new_of_old = vec![0; k + 1];
        for (new, &old) in order.iter().enumerate() {
            new_of_old[old] = new;
        }
        new_of_old[k] = k;
        Episode {
            states: self
                .states
                .iter()
                .map(|s| WorldState {
                    predators: order.iter().map(|&o| s.predators[o]).collect(),
                    prey: s.prey,
                    grid_side: s.grid_side,
                })
                .collect(),
            joint_actions: self
                .joint_actions
                .iter()
                .map(|a| order.iter().map(|&o| a[o]).collect())
                .collect(),
            prey_moves: self.prey_moves.clone(),
            priorities: self
                .priorities
                .iter()
                .map(|p| p.iter().map(|&a| new_of_old[a]).collect())
                .collect(),
            capture: self.capture,
            permutation: order.iter().map(|&o| self.permutation[o]).collect(),
            seed: self.seed,
        }
    }

    /// Predators back in role order, undoing the recorded shuffle.
    pub fn role_sorted(&self) -> Episode {
        let mut order = vec![0; self.permutation.len()];
        for (slot, &role) in self.permutation.iter().enumerate() {
            order[role] = slot;
        }
        self.reindexed(&order)
    }

    /// Re-simulates the episode from its first state and recorded draws.
    pub fn replay(&self) -> Result<Vec<WorldState>> {
        let mut out = vec![self.states[0].clone()];
        for t in 0..self.len() {
            let next = step(
                &out[t],
                &self.joint_actions[t],
                self.prey_moves[t],
                &self.priorities[t],
            )?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn to_record(&self) -> EpisodeRecord {
        EpisodeRecord {
            grid_side: self.grid_side(),
            states: self
                .states
                .iter()
                .map(|s| s.positions().map(|p| [p.x, p.y]).collect())
                .collect(),
            actions: self
                .joint_actions
                .iter()
                .map(|a| a.iter().map(|m| m.code().to_string()).collect())
                .collect(),
            capture: self.capture,
            permutation: self.permutation.clone(),
            seed: self.seed,
            prey_actions: self
                .prey_moves
                .iter()
                .map(|m| m.code().to_string())
                .collect(),
            priorities: self.priorities.clone(),
        }
    }

    pub fn from_record(rec: EpisodeRecord) -> Result<Episode> {
        let parse = |code: &str| -> Result<Move> {
            let mut chars = code.chars();
            match (chars.next().and_then(Move::from_code), chars.next()) {
                (Some(m), None) => Ok(m),
                _ => Err(Error::InvalidState(format!("unknown move code {code:?}"))),
            }
        };
        let states = rec
            .states
            .iter()
            .map(|cells| {
                let mut pos: Vec<GridPos> =
                    cells.iter().map(|c| GridPos::new(c[0], c[1])).collect();
                let prey = pos
                    .pop()
                    .ok_or_else(|| Error::InvalidState("empty state".into()))?;
                WorldState::new(pos, prey, rec.grid_side)
            })
            .collect::<Result<Vec<_>>>()?;
        if states.is_empty() || states.len() != rec.actions.len() + 1 {
            return Err(Error::InvalidState(format!(
                "{} states for {} action steps",
                states.len(),
                rec.actions.len()
            )));
        }
        let joint_actions = rec
            .actions
            .iter()
            .map(|a| a.iter().map(|c| parse(c)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let prey_moves = rec
            .prey_actions
            .iter()
            .map(|c| parse(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Episode {
            states,
            joint_actions,
            prey_moves,
            priorities: rec.priorities,
            capture: rec.capture,
            permutation: rec.permutation,
            seed: rec.seed,
        })
    }
}

/// One line of an episode file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub grid_side: i32,
    /// Per time step: `K` predator cells followed by the prey cell.
    pub states: Vec<Vec<[i32; 2]>>,
    pub actions: Vec<Vec<String>>,
    pub capture: bool,
    pub permutation: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub prey_actions: Vec<String>,
    #[serde(default)]
    pub priorities: Vec<Vec<usize>>,
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ep in episodes {
        let line = serde_json::to_string(&ep.to_record()).map_err(|e| Error::json("episode", e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut episodes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        episodes.push(Episode::from_record(rec)?);
    }
    Ok(episodes)
}

/// Plays one game from `start`. `predators` picks the joint predator move for
/// the current state; the prey follows [`prey_policy`]. Stops on capture or
/// after `config.episode_cap` steps.
pub fn play(
    start: WorldState,
    config: GameConfig,
    rng: &mut impl rand::Rng,
    mut predators: impl FnMut(&WorldState, &mut dyn rand::RngCore) -> Vec<Move>,
) -> Result<Episode> {
    let k = start.num_predators();
    let mut states = vec![start];
    let mut joint_actions = Vec::new();
    let mut prey_moves = Vec::new();
    let mut priorities = Vec::new();
    let mut capture = k == 4 && is_capture(&states[0])?;
    while !capture && joint_actions.len() < config.episode_cap {
        let current = states.last().expect("non-empty");
        let moves = predators(current, rng);
        let prey_move = prey_policy(current, rng);
        let priority = draw_priority(k, config.prey_last, rng);
        let next = step(current, &moves, prey_move, &priority)?;
        capture = k == 4 && is_capture(&next)?;
        states.push(next);
        joint_actions.push(moves);
        prey_moves.push(prey_move);
        priorities.push(priority);
    }
    Ok(Episode {
        states,
        joint_actions,
        prey_moves,
        priorities,
        capture,
        permutation: (0..k).collect(),
        seed: 0,
    })
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn random_move(rng: &mut (impl rand::Rng + ?Sized)) -> Move {
    Move::ALL[rng.gen_range(0..5)]
}
