//! The food-source grid-world: map geometry, the 12-task distribution, state
//! encoding, and the stochastic single-step dynamics.
//!
//! Two food sources sit in two corners of the map; exactly one is full at any
//! time. Stepping onto the full source eats the food (net reward +99), empties
//! it, and refills the other corner. Movement needs the same primitive action
//! twice in a row, and even then fails with probability 0.1. An episode ends
//! after 500 primitive steps or once 3 foods have been eaten.
//!
//! RNG draw discipline (relied on by the trajectory-identity tests):
//! `reset` draws exactly one `u32` range sample for the initial last-action;
//! `step` draws exactly one `f64` when the action matches the state's
//! last-action (the slip roll, drawn even when the move is wall-blocked) and
//! nothing otherwise.

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Primitive steps after which an episode is cut off.
pub const EPISODE_STEP_CAP: u32 = 500;
/// Foods after which an episode terminates.
pub const FOODS_PER_EPISODE: u8 = 3;
/// Probability that a correctly repeated action actually moves the agent.
pub const MOVE_SUCCESS_PROB: f64 = 0.9;
/// Reward collected on every primitive step.
pub const STEP_REWARD: f64 = -1.0;
/// Extra reward for eating a food (net reward on the step is `99`).
pub const FOOD_REWARD: f64 = 100.0;
/// Number of tasks in the distribution: ordered pairs of distinct corners.
pub const TASK_COUNT: usize = 12;

/// Cell index into the grid, row-major over all `width * height` positions.
pub type Cell = u16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("map is empty")]
    Empty,
    #[error("map is not rectangular: row {row} has width {got}, expected {expected}")]
    NotRectangular { row: usize, got: usize, expected: usize },
    #[error("invalid map character {ch:?} at row {row}, column {col}")]
    BadChar { ch: char, row: usize, col: usize },
    #[error("corner cell at row {row}, column {col} is a wall; food sources must be placeable")]
    CornerBlocked { row: usize, col: usize },
    #[error("free region is disconnected: {reachable} of {free} free cells reachable")]
    Disconnected { reachable: usize, free: usize },
    #[error("cell {cell} is a wall")]
    WallCell { cell: Cell },
    #[error("state index {index} out of range {range}")]
    IndexOutOfRange { index: usize, range: usize },
}

/// The four primitive actions, in the fixed order used for all indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PrimitiveAction {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl PrimitiveAction {
    pub const ALL: [PrimitiveAction; 4] = [
        PrimitiveAction::North,
        PrimitiveAction::East,
        PrimitiveAction::South,
        PrimitiveAction::West,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// (row delta, column delta) with row 0 at the top of the map.
    fn delta(self) -> (i32, i32) {
        match self {
            PrimitiveAction::North => (-1, 0),
            PrimitiveAction::East => (0, 1),
            PrimitiveAction::South => (1, 0),
            PrimitiveAction::West => (0, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveAction::North => "north",
            PrimitiveAction::East => "east",
            PrimitiveAction::South => "south",
            PrimitiveAction::West => "west",
        }
    }
}

/// Static world geometry. Immutable after construction and freely shareable.
#[derive(Debug, Clone)]
pub struct GridMap {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    free: Vec<Cell>,
    corners: [Cell; 4],
    doorways: Vec<Cell>,
    /// `neighbors[cell][action]`: target cell of a successful move, if not
    /// blocked by a wall or the boundary.
    neighbors: Vec<[Option<Cell>; 4]>,
    text: String,
}

/// The canonical 7x7 four-room layout: 39 free cells, 3 doorways, all four
/// geometric corners free.
pub const DEFAULT_MAP_TEXT: &str = "\
...#...
...#...
...#...
#D###D#
...#...
...D...
...#...
";

/// Parses and validates an ASCII map document.
///
/// `'#'` is a wall, `'.'` a free cell, `'D'` a free doorway cell. Rows are
/// newline-separated; a trailing newline is optional.
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    GridMap::parse(text)
}

impl GridMap {
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let rows: Vec<&str> = text.lines().collect();
        if rows.is_empty() || rows.iter().all(|r| r.is_empty()) {
            return Err(MapError::Empty);
        }
        let width = rows[0].chars().count();
        if width == 0 {
            return Err(MapError::Empty);
        }
        let height = rows.len();
        let mut walls = vec![false; width * height];
        let mut doorways = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let got = row.chars().count();
            if got != width {
                return Err(MapError::NotRectangular { row: r, got, expected: width });
            }
            for (c, ch) in row.chars().enumerate() {
                let cell = (r * width + c) as Cell;
                match ch {
                    '#' => walls[cell as usize] = true,
                    '.' => {}
                    'D' => doorways.push(cell),
                    _ => return Err(MapError::BadChar { ch, row: r, col: c }),
                }
            }
        }

        // Corner order is NW, NE, SW, SE.
        let corner_coords = [
            (0usize, 0usize),
            (0, width - 1),
            (height - 1, 0),
            (height - 1, width - 1),
        ];
        let mut corners = [0 as Cell; 4];
        for (i, &(r, c)) in corner_coords.iter().enumerate() {
            let cell = (r * width + c) as Cell;
            if walls[cell as usize] {
                return Err(MapError::CornerBlocked { row: r, col: c });
            }
            corners[i] = cell;
        }

        let free: Vec<Cell> = (0..width * height)
            .filter(|&i| !walls[i])
            .map(|i| i as Cell)
            .collect();

        let mut neighbors = vec![[None; 4]; width * height];
        for &cell in &free {
            let (r, c) = (cell as usize / width, cell as usize % width);
            for action in PrimitiveAction::ALL {
                let (dr, dc) = action.delta();
                let (nr, nc) = (r as i32 + dr, c as i32 + dc);
                if nr < 0 || nr >= height as i32 || nc < 0 || nc >= width as i32 {
                    continue;
                }
                let target = nr as usize * width + nc as usize;
                if !walls[target] {
                    neighbors[cell as usize][action.index()] = Some(target as Cell);
                }
            }
        }

        // Breadth-first search over 4-neighbour adjacency from the NW corner.
        let mut seen = vec![false; width * height];
        let mut queue = std::collections::VecDeque::new();
        seen[corners[0] as usize] = true;
        queue.push_back(corners[0]);
        let mut reachable = 0usize;
        while let Some(cell) = queue.pop_front() {
            reachable += 1;
            for next in neighbors[cell as usize].into_iter().flatten() {
                if !seen[next as usize] {
                    seen[next as usize] = true;
                    queue.push_back(next);
                }
            }
        }
        if reachable != free.len() {
            return Err(MapError::Disconnected { reachable, free: free.len() });
        }

        // Canonical text: rows joined by '\n' with a trailing newline.
        let mut canonical = rows.join("\n");
        canonical.push('\n');

        Ok(GridMap {
            width,
            height,
            walls,
            free,
            corners,
            doorways,
            neighbors,
            text: canonical,
        })
    }

    pub fn default_rooms() -> Self {
        Self::parse(DEFAULT_MAP_TEXT).expect("embedded default map is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// All grid positions, including walls (the paper-facing position count).
    pub fn position_count(&self) -> usize {
        self.width * self.height
    }

    /// Size of the full state space: positions x 2 source flags x 4 actions.
    pub fn state_count(&self) -> usize {
        self.position_count() * 2 * 4
    }

    pub fn free_cells(&self) -> &[Cell] {
        &self.free
    }

    #[inline]
    pub fn is_free(&self, cell: Cell) -> bool {
        !self.walls[cell as usize]
    }

    /// The four geometric corner cells in NW, NE, SW, SE order.
    pub fn corners(&self) -> [Cell; 4] {
        self.corners
    }

    pub fn doorways(&self) -> &[Cell] {
        self.doorways
    }

    #[inline]
    pub fn neighbor(&self, cell: Cell, action: PrimitiveAction) -> Option<Cell> {
        self.neighbors[cell as usize][action.index()]
    }

    pub fn cell_at(&self, row: usize, col: usize) -> Cell {
        debug_assert!(row < self.height && col < self.width);
        (row * self.width + col) as Cell
    }

    pub fn row_col(&self, cell: Cell) -> (usize, usize) {
        (cell as usize / self.width, cell as usize % self.width)
    }

    /// Canonical map text (rows joined by `\n`, trailing newline).
    pub fn text(&self) -> &str {
        &self.text
    }

    /// SHA-256 of the canonical map text, hex-encoded.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short map hash for file names.
    pub fn hash_short(&self) -> String {
        self.hash_hex()[..16].to_string()
    }

    /// Wall-respecting breadth-first distances from `from`, over free cells.
    /// Unreachable or wall cells get `u32::MAX`.
    pub fn bfs_distances(&self, from: Cell) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.position_count()];
        if !self.is_free(from) {
            return dist;
        }
        let mut queue = std::collections::VecDeque::new();
        dist[from as usize] = 0;
        queue.push_back(from);
        while let Some(cell) = queue.pop_front() {
            for next in self.neighbors[cell as usize].into_iter().flatten() {
                if dist[next as usize] == u32::MAX {
                    dist[next as usize] = dist[cell as usize] + 1;
                    queue.push_back(next);
                }
            }
        }
        dist
    }
}

/// One food-source configuration: which corner starts full and which empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Task {
    pub id: u8,
    pub full_corner: u8,
    pub empty_corner: u8,
}

/// The 12 ordered pairs of distinct corners, sorted by id.
///
/// `id = 3 * full_corner + rank of empty_corner among the remaining corners`.
pub fn enumerate_tasks(map: &GridMap) -> Vec<Task> {
    let _ = map.corners(); // corners guaranteed by GridMap invariants
    let mut tasks = Vec::with_capacity(TASK_COUNT);
    for full in 0..4u8 {
        let mut rank = 0u8;
        for empty in 0..4u8 {
            if empty == full {
                continue;
            }
            tasks.push(Task {
                id: 3 * full + rank,
                full_corner: full,
                empty_corner: empty,
            });
            rank += 1;
        }
    }
    tasks
}

/// Which of the task's two sources is currently full.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ActiveSource {
    /// The source at the task's `full_corner` is full (the initial state).
    FullCorner = 0,
    /// The source at the task's `empty_corner` has been refilled.
    EmptyCorner = 1,
}

impl ActiveSource {
    #[inline]
    pub fn flag(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn toggled(self) -> Self {
        match self {
            ActiveSource::FullCorner => ActiveSource::EmptyCorner,
            ActiveSource::EmptyCorner => ActiveSource::FullCorner,
        }
    }

    pub fn from_flag(flag: usize) -> Option<Self> {
        match flag {
            0 => Some(ActiveSource::FullCorner),
            1 => Some(ActiveSource::EmptyCorner),
            _ => None,
        }
    }
}

/// Full agent state: position, which source is full, last primitive action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub position: Cell,
    pub active_source: ActiveSource,
    pub last_action: PrimitiveAction,
}

impl State {
    /// Raw state index; assumes `position` is valid for the map in use.
    #[inline]
    pub fn raw_index(&self) -> usize {
        (self.position as usize * 2 + self.active_source.flag()) * 4
            + self.last_action.index()
    }
}

/// Encodes a state as an integer in `[0, positions * 2 * 4)`.
///
/// Indexing runs over all grid positions including walls, so the default map
/// encodes onto `[0, 392)`.
pub fn state_index(state: &State, map: &GridMap) -> Result<usize, MapError> {
    if !map.is_free(state.position) {
        return Err(MapError::WallCell { cell: state.position });
    }
    Ok(state.raw_index())
}

/// Inverse of [`state_index`].
pub fn state_from_index(index: usize, map: &GridMap) -> Result<State, MapError> {
    if index >= map.state_count() {
        return Err(MapError::IndexOutOfRange { index, range: map.state_count() });
    }
    let last_action = PrimitiveAction::from_index(index % 4).unwrap();
    let rest = index / 4;
    let active_source = ActiveSource::from_flag(rest % 2).unwrap();
    let position = (rest / 2) as Cell;
    if !map.is_free(position) {
        return Err(MapError::WallCell { cell: position });
    }
    Ok(State { position, active_source, last_action })
}

/// Result of one primitive step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub ate_food: bool,
    pub moved: bool,
}

/// The cell of the currently full food source.
#[inline]
pub fn full_source_cell(task: &Task, source: ActiveSource, map: &GridMap) -> Cell {
    let corners = map.corners();
    match source {
        ActiveSource::FullCorner => corners[task.full_corner as usize],
        ActiveSource::EmptyCorner => corners[task.empty_corner as usize],
    }
}

/// Starts an episode: `active_source` is the task's full corner, the initial
/// last-action is drawn uniformly (the state space has no "none" value).
pub fn reset(
    task: &Task,
    start_cell: Cell,
    map: &GridMap,
    rng: &mut impl Rng,
) -> Result<State, MapError> {
    let _ = task;
    if !map.is_free(start_cell) {
        return Err(MapError::WallCell { cell: start_cell });
    }
    let last_action = PrimitiveAction::from_index(rng.random_range(0..4)).unwrap();
    Ok(State {
        position: start_cell,
        active_source: ActiveSource::FullCorner,
        last_action,
    })
}

/// Movement resolution shared by the task dynamics and option pretraining.
///
/// Moves only if `action` matches `last_action`; a matched attempt consumes
/// exactly one `f64` draw (the slip roll) and succeeds with probability 0.9
/// unless blocked, in which case the agent stays. Mismatched actions consume
/// no randomness and never move.
#[inline]
pub(crate) fn resolve_move(
    position: Cell,
    last_action: PrimitiveAction,
    action: PrimitiveAction,
    map: &GridMap,
    rng: &mut impl Rng,
) -> Cell {
    if action != last_action {
        return position;
    }
    let roll: f64 = rng.random();
    if roll < MOVE_SUCCESS_PROB {
        map.neighbor(position, action).unwrap_or(position)
    } else {
        position
    }
}

/// One primitive step of the food-source dynamics.
pub fn step(
    state: &State,
    action: PrimitiveAction,
    task: &Task,
    map: &GridMap,
    rng: &mut impl Rng,
) -> StepOutcome {
    let next_position = resolve_move(state.position, state.last_action, action, map, rng);
    let moved = next_position != state.position;
    let food_cell = full_source_cell(task, state.active_source, map);
    let (reward, ate_food, next_source) = if next_position == food_cell {
        (STEP_REWARD + FOOD_REWARD, true, state.active_source.toggled())
    } else {
        (STEP_REWARD, false, state.active_source)
    };
    StepOutcome {
        next_state: State {
            position: next_position,
            active_source: next_source,
            last_action: action,
        },
        reward,
        ate_food,
        moved,
    }
}

/// Per-episode progress: primitive steps taken and foods eaten.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeState {
    pub steps_taken: u32,
    pub foods_eaten: u8,
    step_cap: u32,
}

impl EpisodeState {
    pub fn new(step_cap: u32) -> Self {
        EpisodeState { steps_taken: 0, foods_eaten: 0, step_cap }
    }

    pub fn with_default_cap() -> Self {
        Self::new(EPISODE_STEP_CAP)
    }

    pub fn record(&mut self, outcome: &StepOutcome) {
        self.steps_taken += 1;
        if outcome.ate_food {
            self.foods_eaten += 1;
        }
    }

    #[inline]
    pub fn terminal(&self) -> bool {
        self.terminal_by_foods() || self.terminal_by_steps()
    }

    #[inline]
    pub fn terminal_by_foods(&self) -> bool {
        self.foods_eaten >= FOODS_PER_EPISODE
    }

    #[inline]
    pub fn terminal_by_steps(&self) -> bool {
        self.steps_taken >= self.step_cap
    }

    #[inline]
    pub fn steps_remaining(&self) -> u32 {
        self.step_cap - self.steps_taken
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams;
    use rand::RngCore;

    /// Emits a fixed `u64` forever; `u64::MAX` maps to a `f64` draw of
    /// ~0.99999..., `0` to exactly 0.0.
    struct ConstRng(u64);

    impl RngCore for ConstRng {
        fn next_u32(&mut self) -> u32 {
            self.0 as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            for b in dest {
                *b = 0;
            }
        }
    }

    /// Panics if any randomness is requested.
    struct PanicRng;

    impl RngCore for PanicRng {
        fn next_u32(&mut self) -> u32 {
            panic!("unexpected rng draw");
        }
        fn next_u64(&mut self) -> u64 {
            panic!("unexpected rng draw");
        }
        fn fill_bytes(&mut self, _dest: &mut [u8]) {
            panic!("unexpected rng draw");
        }
    }

    const SLIP_FAIL: u64 = u64::MAX;
    const SLIP_OK: u64 = 0;

    fn default_map() -> GridMap {
        GridMap::default_rooms()
    }

    #[test]
    fn default_map_counts() {
        let map = default_map();
        assert_eq!(map.width(), 7);
        assert_eq!(map.height(), 7);
        assert_eq!(map.free_cells().len(), 39);
        assert_eq!(map.position_count(), 49);
        assert_eq!(map.state_count(), 392);
        assert_eq!(map.doorways().len(), 3);
        let d: Vec<(usize, usize)> = map.doorways().iter().map(|&c| map.row_col(c)).collect();
        assert_eq!(d, vec![(3, 1), (3, 5), (5, 3)]);
        assert_eq!(map.corners(), [0, 6, 42, 48]);
    }

    #[test]
    fn one_by_one_map() {
        let map = GridMap::parse(".").unwrap();
        assert_eq!(map.free_cells().len(), 1);
        assert_eq!(map.doorways().len(), 0);
        assert_eq!(map.state_count(), 8);
    }

    #[test]
    fn corner_wall_is_rejected() {
        let err = GridMap::parse("#..\n...\n...").unwrap_err();
        assert_eq!(err, MapError::CornerBlocked { row: 0, col: 0 });
    }

    #[test]
    fn non_rectangular_is_rejected() {
        let err = GridMap::parse("...\n..\n...").unwrap_err();
        assert!(matches!(err, MapError::NotRectangular { row: 1, .. }));
    }

    #[test]
    fn empty_and_bad_chars_are_rejected() {
        assert_eq!(GridMap::parse("").unwrap_err(), MapError::Empty);
        assert!(matches!(
            GridMap::parse("..\n.x").unwrap_err(),
            MapError::BadChar { ch: 'x', row: 1, col: 1 }
        ));
    }

    #[test]
    fn disconnected_free_region_is_rejected() {
        // Walls split the free cells into two diagonal islands.
        let err = GridMap::parse("..#\n.##\n#..").unwrap_err();
        assert!(matches!(err, MapError::Disconnected { .. }));
    }

    #[test]
    fn trailing_newline_is_optional() {
        let a = GridMap::parse("..\n..").unwrap();
        let b = GridMap::parse("..\n..\n").unwrap();
        assert_eq!(a.text(), b.text());
        assert_eq!(a.hash_hex(), b.hash_hex());
    }

    #[test]
    fn twelve_tasks_with_distinct_corners() {
        let map = default_map();
        let tasks = enumerate_tasks(&map);
        assert_eq!(tasks.len(), 12);
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.id as usize, i);
            assert_ne!(t.full_corner, t.empty_corner);
        }
        // id 0 pairs corner 0 (NW) with corner 1 (NE).
        assert_eq!(tasks[0].full_corner, 0);
        assert_eq!(tasks[0].empty_corner, 1);
    }

    #[test]
    fn state_index_examples() {
        let map = default_map();
        let s = State {
            position: 0,
            active_source: ActiveSource::FullCorner,
            last_action: PrimitiveAction::North,
        };
        assert_eq!(state_index(&s, &map).unwrap(), 0);
        let s = State {
            position: 48,
            active_source: ActiveSource::EmptyCorner,
            last_action: PrimitiveAction::West,
        };
        assert_eq!(state_index(&s, &map).unwrap(), 391);
        let s = State {
            position: 10,
            active_source: ActiveSource::EmptyCorner,
            last_action: PrimitiveAction::South,
        };
        assert_eq!(state_index(&s, &map).unwrap(), 86);
    }

    #[test]
    fn state_index_rejects_walls() {
        let map = default_map();
        let wall = map.cell_at(0, 3);
        let s = State {
            position: wall,
            active_source: ActiveSource::FullCorner,
            last_action: PrimitiveAction::North,
        };
        assert_eq!(state_index(&s, &map), Err(MapError::WallCell { cell: wall }));
    }

    #[test]
    fn state_index_round_trips_over_all_free_states() {
        let map = default_map();
        let mut seen = vec![false; map.state_count()];
        let mut count = 0usize;
        for &cell in map.free_cells() {
            for flag in 0..2 {
                for a in 0..4 {
                    let s = State {
                        position: cell,
                        active_source: ActiveSource::from_flag(flag).unwrap(),
                        last_action: PrimitiveAction::from_index(a).unwrap(),
                    };
                    let ix = state_index(&s, &map).unwrap();
                    assert!(ix < map.state_count());
                    assert!(!seen[ix], "index {ix} hit twice");
                    seen[ix] = true;
                    assert_eq!(state_from_index(ix, &map).unwrap(), s);
                    count += 1;
                }
            }
        }
        assert_eq!(count, 39 * 8);
    }

    #[test]
    fn reset_distribution_and_determinism() {
        let map = default_map();
        let task = enumerate_tasks(&map)[0];
        let mut counts = [0u32; 4];
        let mut rng = streams::stream(11, "reset-test", &[]);
        for _ in 0..4000 {
            let s = reset(&task, map.corners()[2], &map, &mut rng).unwrap();
            assert_eq!(s.active_source, ActiveSource::FullCorner);
            counts[s.last_action.index()] += 1;
        }
        // Binomial(4000, 1/4): mean 1000, sigma = sqrt(4000 * 0.25 * 0.75) ~ 27.4.
        for &c in &counts {
            assert!((c as f64 - 1000.0).abs() < 3.0 * 27.386, "counts {counts:?}");
        }
        let mut a = streams::stream(5, "reset-det", &[]);
        let mut b = streams::stream(5, "reset-det", &[]);
        for _ in 0..32 {
            assert_eq!(
                reset(&task, 8, &map, &mut a).unwrap(),
                reset(&task, 8, &map, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn reset_rejects_wall_start() {
        let map = default_map();
        let task = enumerate_tasks(&map)[0];
        let wall = map.cell_at(0, 3);
        let mut rng = ConstRng(0);
        assert!(reset(&task, wall, &map, &mut rng).is_err());
    }

    #[test]
    fn mismatched_action_never_moves() {
        let map = default_map();
        let task = enumerate_tasks(&map)[5];
        for &cell in map.free_cells() {
            for last in PrimitiveAction::ALL {
                for action in PrimitiveAction::ALL {
                    if action == last {
                        continue;
                    }
                    for flag in 0..2 {
                        let s = State {
                            position: cell,
                            active_source: ActiveSource::from_flag(flag).unwrap(),
                            last_action: last,
                        };
                        // Mismatched steps must consume no randomness at all.
                        let out = step(&s, action, &task, &map, &mut PanicRng);
                        assert_eq!(out.next_state.position, cell);
                        assert!(!out.moved);
                        assert_eq!(out.next_state.last_action, action);
                    }
                }
            }
        }
    }

    #[test]
    fn matched_action_moves_or_slips() {
        let map = default_map();
        let task = enumerate_tasks(&map)[0];
        // (0,1) facing east: successful roll moves to (0,2).
        let s = State {
            position: map.cell_at(0, 1),
            active_source: ActiveSource::FullCorner,
            last_action: PrimitiveAction::East,
        };
        let out = step(&s, PrimitiveAction::East, &task, &map, &mut ConstRng(SLIP_OK));
        assert_eq!(out.next_state.position, map.cell_at(0, 2));
        assert!(out.moved);
        assert_eq!(out.reward, -1.0);
        // Slip: stays put.
        let out = step(&s, PrimitiveAction::East, &task, &map, &mut ConstRng(SLIP_FAIL));
        assert_eq!(out.next_state.position, s.position);
        assert!(!out.moved);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn walls_and_boundary_absorb_movement() {
        let map = default_map();
        let task = enumerate_tasks(&map)[0];
        // (0,2) facing east into the wall at (0,3): successful roll stays.
        let s = State {
            position: map.cell_at(0, 2),
            active_source: ActiveSource::FullCorner,
            last_action: PrimitiveAction::East,
        };
        let out = step(&s, PrimitiveAction::East, &task, &map, &mut ConstRng(SLIP_OK));
        assert_eq!(out.next_state.position, s.position);
        assert!(!out.moved);
        // (0,0) facing north off the grid.
        let s = State {
            position: map.cell_at(0, 0),
            active_source: ActiveSource::EmptyCorner,
            last_action: PrimitiveAction::North,
        };
        let out = step(&s, PrimitiveAction::North, &task, &map, &mut ConstRng(SLIP_OK));
        assert_eq!(out.next_state.position, s.position);
    }

    #[test]
    fn eating_toggles_the_sources() {
        let map = default_map();
        let task = enumerate_tasks(&map)[0]; // full at NW corner (cell 0)
        let s = State {
            position: map.cell_at(0, 1),
            active_source: ActiveSource::FullCorner,
            last_action: PrimitiveAction::West,
        };
        let out = step(&s, PrimitiveAction::West, &task, &map, &mut ConstRng(SLIP_OK));
        assert_eq!(out.next_state.position, map.corners()[0]);
        assert!(out.ate_food);
        assert_eq!(out.reward, 99.0);
        assert_eq!(out.next_state.active_source, ActiveSource::EmptyCorner);
        // Standing on the now-empty source eats nothing.
        let s2 = State {
            position: out.next_state.position,
            active_source: out.next_state.active_source,
            last_action: PrimitiveAction::North,
        };
        let out2 = step(&s2, PrimitiveAction::East, &task, &map, &mut PanicRng);
        assert!(!out2.ate_food);
        assert_eq!(out2.reward, -1.0);
    }

    #[test]
    fn slip_rate_matches_binomial_statistics() {
        let map = default_map();
        let task = enumerate_tasks(&map)[3];
        let mut rng = streams::stream(99, "slip-test", &[]);
        // Matched, unblocked move attempts from the middle of the NW room.
        let s = State {
            position: map.cell_at(1, 1),
            active_source: ActiveSource::FullCorner,
            last_action: PrimitiveAction::East,
        };
        let n = 20_000u32;
        let mut moves = 0u32;
        for _ in 0..n {
            let out = step(&s, PrimitiveAction::East, &task, &map, &mut rng);
            if out.moved {
                moves += 1;
            }
        }
        let mean = n as f64 * MOVE_SUCCESS_PROB;
        let sigma = (n as f64 * MOVE_SUCCESS_PROB * (1.0 - MOVE_SUCCESS_PROB)).sqrt();
        assert!(
            (moves as f64 - mean).abs() < 3.0 * sigma,
            "moves {moves} outside 3 sigma of {mean}"
        );
    }

    #[test]
    fn one_source_full_and_foods_track_rewards_along_trajectories() {
        let map = default_map();
        let task = enumerate_tasks(&map)[7];
        let mut rng = streams::stream(4, "traj-test", &[]);
        let mut state = reset(&task, map.free_cells()[10], &map, &mut rng).unwrap();
        let mut episode = EpisodeState::with_default_cap();
        let mut foods = 0u8;
        while !episode.terminal() {
            let action = PrimitiveAction::from_index(rng.random_range(0..4)).unwrap();
            let out = step(&state, action, &task, &map, &mut rng);
            episode.record(&out);
            if out.reward == 99.0 {
                foods += 1;
                assert!(out.ate_food);
            } else {
                assert_eq!(out.reward, -1.0);
                assert!(!out.ate_food);
            }
            state = out.next_state;
        }
        assert_eq!(foods, episode.foods_eaten);
        assert!(episode.terminal_by_foods() || episode.terminal_by_steps());
    }

    #[test]
    fn episode_terminates_at_cap_or_three_foods() {
        let mut e = EpisodeState::new(2);
        assert!(!e.terminal());
        let dummy = StepOutcome {
            next_state: State {
                position: 0,
                active_source: ActiveSource::FullCorner,
                last_action: PrimitiveAction::North,
            },
            reward: -1.0,
            ate_food: false,
            moved: false,
        };
        e.record(&dummy);
        assert!(!e.terminal());
        e.record(&dummy);
        assert!(e.terminal_by_steps());

        let mut e = EpisodeState::new(500);
        let ate = StepOutcome { ate_food: true, reward: 99.0, ..dummy };
        e.record(&ate);
        e.record(&ate);
        assert!(!e.terminal());
        e.record(&ate);
        assert!(e.terminal_by_foods());
    }
}
