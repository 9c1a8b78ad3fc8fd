//! The option space: fixed two-step low-level options, goal-reaching options
//! pretrained with Q-learning, the doorway/bottleneck baseline set, and a
//! dynamic-programming oracle for expected steps-to-goal.
//!
//! Goal options navigate over the reduced state `(position, last_action)`
//! only — reaching a cell is independent of the food configuration, so one
//! pretraining per map serves every task. Policies are plain tables and can
//! be cached to disk as tabular text, one file per goal cell.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gridworld::{resolve_move, Cell, GridMap, PrimitiveAction, MOVE_SUCCESS_PROB};
use crate::streams;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("goal cell {goal} is a wall")]
    WallGoal { goal: Cell },
    #[error("map declares no doorway cells")]
    NoDoorways,
    #[error(
        "training budget exhausted without total policy coverage: \
         {uncovered} of {total} start states cannot reach goal {goal}"
    )]
    IncompleteCoverage { goal: Cell, uncovered: usize, total: usize },
    #[error("expected-steps value iteration did not converge for goal {goal} (unreachable?)")]
    NonConvergence { goal: Cell },
    #[error("policy cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy cache file {file}: {reason}")]
    BadCacheFile { file: String, reason: String },
}

/// Pretraining hyperparameters for goal options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub exploration: f64,
    pub episode_cap: u32,
    pub step_cap: u32,
    /// Stop early once the greedy policy is unchanged for this many
    /// consecutive episodes.
    pub stable_window: u32,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 0.5,
            exploration: 0.1,
            episode_cap: 20_000,
            step_cap: 500,
            stable_window: 1_000,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(format!("learning_rate {} not in (0,1]", self.learning_rate));
        }
        if !(self.exploration > 0.0 && self.exploration <= 1.0) {
            return Err(format!("exploration {} not in (0,1]", self.exploration));
        }
        if self.episode_cap == 0 || self.step_cap == 0 || self.stable_window == 0 {
            return Err("episode/step caps and stable window must be positive".into());
        }
        Ok(())
    }
}

/// Greedy navigation policy of a goal option: a total table over
/// `(position, last_action)` for all free positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalPolicy {
    goal: Cell,
    /// Indexed by `position * 4 + last_action`; wall rows are never executed.
    actions: Vec<PrimitiveAction>,
}

impl GoalPolicy {
    pub fn goal(&self) -> Cell {
        self.goal
    }

    #[inline]
    pub fn action(&self, position: Cell, last_action: PrimitiveAction) -> PrimitiveAction {
        self.actions[position as usize * 4 + last_action.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptionKind {
    /// Issues one primitive action twice.
    LowLevel { action: PrimitiveAction },
    /// Follows a pretrained policy until the goal cell is reached.
    Goal { policy: GoalPolicy },
}

/// A temporally extended action available to the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionDef {
    pub kind: OptionKind,
}

impl OptionDef {
    pub fn low_level(action: PrimitiveAction) -> Self {
        OptionDef { kind: OptionKind::LowLevel { action } }
    }

    /// Stable identifier, usable in file names and logs.
    pub fn id(&self, map: &GridMap) -> String {
        match &self.kind {
            OptionKind::LowLevel { action } => format!("ll-{}", action.name()),
            OptionKind::Goal { policy } => {
                let (r, c) = map.row_col(policy.goal());
                format!("goal-{r}:{c}")
            }
        }
    }

    pub fn goal_cell(&self) -> Option<Cell> {
        match &self.kind {
            OptionKind::LowLevel { .. } => None,
            OptionKind::Goal { policy } => Some(policy.goal()),
        }
    }

    pub fn is_low_level(&self) -> bool {
        matches!(self.kind, OptionKind::LowLevel { .. })
    }
}

/// An option set as searched over: 0, 1, or 2 goal options with distinct
/// goals. The four low-level options and the four primitives are always
/// available to the learner alongside it.
#[derive(Debug, Clone)]
pub struct OptionSet {
    pub goal_options: Vec<Arc<OptionDef>>,
}

impl OptionSet {
    pub fn new(goal_options: Vec<Arc<OptionDef>>) -> Self {
        debug_assert!(goal_options.len() <= 2);
        OptionSet { goal_options }
    }

    pub fn omega(&self) -> usize {
        self.goal_options.len()
    }

    /// Goal cells, in option order.
    pub fn goals(&self) -> Vec<Cell> {
        self.goal_options.iter().filter_map(|o| o.goal_cell()).collect()
    }
}

/// The four fixed two-step options, one per primitive action in N, E, S, W
/// order.
pub fn make_lowlevel_options() -> [OptionDef; 4] {
    [
        OptionDef::low_level(PrimitiveAction::North),
        OptionDef::low_level(PrimitiveAction::East),
        OptionDef::low_level(PrimitiveAction::South),
        OptionDef::low_level(PrimitiveAction::West),
    ]
}

/// Reduced navigation state: `(position, last_action)`.
#[inline]
fn nav_index(position: Cell, last_action: PrimitiveAction) -> usize {
    position as usize * 4 + last_action.index()
}

fn greedy_nav_action(q: &[f64], nav: usize) -> PrimitiveAction {
    let row = &q[nav * 4..nav * 4 + 4];
    let mut best = 0usize;
    for a in 1..4 {
        if row[a] > row[best] {
            best = a;
        }
    }
    PrimitiveAction::from_index(best).unwrap()
}

/// Trains a goal-reaching option with tabular Q-learning on the reduced MDP
/// (`-1` per step, terminal at the goal, discount 1).
///
/// The returned greedy policy is checked for total coverage: from every free
/// `(position, last_action)` the policy's Markov chain must reach the goal
/// with probability 1 under slip dynamics.
pub fn train_goal_option(
    map: &GridMap,
    goal: Cell,
    cfg: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<OptionDef, TrainError> {
    if !map.is_free(goal) {
        return Err(TrainError::WallGoal { goal });
    }
    let n_nav = map.position_count() * 4;
    let mut q = vec![0.0f64; n_nav * 4];
    let free = map.free_cells();

    let mut prev_policy: Option<Vec<PrimitiveAction>> = None;
    let mut stable = 0u32;
    for _episode in 0..cfg.episode_cap {
        let mut position = free[rng.random_range(0..free.len())];
        let mut last = PrimitiveAction::from_index(rng.random_range(0..4)).unwrap();
        let mut steps = 0u32;
        while position != goal && steps < cfg.step_cap {
            let nav = nav_index(position, last);
            let action = if rng.random::<f64>() < cfg.exploration {
                PrimitiveAction::from_index(rng.random_range(0..4)).unwrap()
            } else {
                greedy_nav_action(&q, nav)
            };
            let next_position = resolve_move(position, last, action, map, rng);
            let terminal = next_position == goal;
            let bootstrap = if terminal {
                0.0
            } else {
                let next_nav = nav_index(next_position, action);
                q[next_nav * 4..next_nav * 4 + 4]
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            };
            let entry = &mut q[nav * 4 + action.index()];
            *entry += cfg.learning_rate * (-1.0 + bootstrap - *entry);
            position = next_position;
            last = action;
            steps += 1;
        }

        let policy: Vec<PrimitiveAction> =
            (0..n_nav).map(|nav| greedy_nav_action(&q, nav)).collect();
        if prev_policy.as_ref() == Some(&policy) {
            stable += 1;
            if stable >= cfg.stable_window {
                break;
            }
        } else {
            stable = 0;
            prev_policy = Some(policy);
        }
    }

    let actions: Vec<PrimitiveAction> =
        (0..n_nav).map(|nav| greedy_nav_action(&q, nav)).collect();
    let policy = GoalPolicy { goal, actions };
    check_coverage(map, &policy)?;
    Ok(OptionDef { kind: OptionKind::Goal { policy } })
}

/// Verifies that the policy's Markov chain absorbs at the goal from every
/// free `(position, last_action)` start. In a finite chain this holds exactly
/// when every state has a positive-probability path to the goal, so a
/// backward reachability sweep suffices.
fn check_coverage(map: &GridMap, policy: &GoalPolicy) -> Result<(), TrainError> {
    let n_nav = map.position_count() * 4;
    let goal = policy.goal();
    // Forward edges under the policy: matched action yields a success edge
    // and a self-loop, mismatched a deterministic re-aim edge.
    let mut reverse: Vec<Vec<u32>> = vec![Vec::new(); n_nav];
    let mut is_free_nav = vec![false; n_nav];
    for &cell in map.free_cells() {
        for last in PrimitiveAction::ALL {
            let nav = nav_index(cell, last);
            is_free_nav[nav] = true;
            if cell == goal {
                continue;
            }
            let action = policy.action(cell, last);
            let stay = nav_index(cell, action);
            if stay != nav {
                reverse[stay].push(nav as u32);
            }
            if action == last {
                if let Some(next) = map.neighbor(cell, action) {
                    reverse[nav_index(next, action)].push(nav as u32);
                }
            }
        }
    }
    let mut reached = vec![false; n_nav];
    let mut queue = VecDeque::new();
    for last in PrimitiveAction::ALL {
        let nav = nav_index(goal, last);
        reached[nav] = true;
        queue.push_back(nav);
    }
    while let Some(nav) = queue.pop_front() {
        for &prev in &reverse[nav] {
            if !reached[prev as usize] {
                reached[prev as usize] = true;
                queue.push_back(prev as usize);
            }
        }
    }
    let uncovered = (0..n_nav).filter(|&nav| is_free_nav[nav] && !reached[nav]).count();
    if uncovered > 0 {
        return Err(TrainError::IncompleteCoverage {
            goal,
            uncovered,
            total: map.free_cells().len() * 4,
        });
    }
    Ok(())
}

const ORACLE_TOLERANCE: f64 = 1e-10;
const ORACLE_ITERATION_CAP: usize = 1_000_000;

/// Optimal expected steps-to-goal for every `(position, last_action)` pair,
/// solved by value iteration under the 0.9/0.1 slip dynamics to fixed-point
/// tolerance 1e-10.
///
/// Returns a table indexed by `position * 4 + last_action`; wall positions
/// hold `f64::INFINITY`.
pub fn expected_steps_oracle(map: &GridMap, goal: Cell) -> Result<Vec<f64>, TrainError> {
    if !map.is_free(goal) {
        return Err(TrainError::WallGoal { goal });
    }
    let n_nav = map.position_count() * 4;
    let mut values = vec![f64::INFINITY; n_nav];
    for &cell in map.free_cells() {
        for last in PrimitiveAction::ALL {
            values[nav_index(cell, last)] = 0.0;
        }
    }
    for _ in 0..ORACLE_ITERATION_CAP {
        let mut delta = 0.0f64;
        for &cell in map.free_cells() {
            if cell == goal {
                continue;
            }
            for last in PrimitiveAction::ALL {
                let nav = nav_index(cell, last);
                let mut best = f64::INFINITY;
                for action in PrimitiveAction::ALL {
                    // A matched, unblocked attempt moves with probability 0.9
                    // and slips in place otherwise; everything else leaves the
                    // position unchanged and only re-aims the last action.
                    let value = if action == last {
                        match map.neighbor(cell, action) {
                            Some(next) => {
                                MOVE_SUCCESS_PROB * values[nav_index(next, action)]
                                    + (1.0 - MOVE_SUCCESS_PROB) * values[nav_index(cell, action)]
                            }
                            None => values[nav_index(cell, action)],
                        }
                    } else {
                        values[nav_index(cell, action)]
                    };
                    best = best.min(value);
                }
                let updated = 1.0 + best;
                delta = delta.max((updated - values[nav]).abs());
                values[nav] = updated;
            }
        }
        if delta < ORACLE_TOLERANCE {
            return Ok(values);
        }
    }
    Err(TrainError::NonConvergence { goal })
}

/// One pretrained goal option per doorway cell, in doorway order.
pub fn make_bottleneck_options(
    map: &GridMap,
    cfg: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<OptionDef>, TrainError> {
    if map.doorways().is_empty() {
        return Err(TrainError::NoDoorways);
    }
    // Child seeds are drawn up front so each goal trains on its own stream.
    let seeds: Vec<u64> = map.doorways().iter().map(|_| rng.random()).collect();
    map.doorways()
        .iter()
        .zip(seeds)
        .map(|(&goal, seed)| {
            let mut stream = streams::stream(seed, "pretrain-goal", &[goal as u64]);
            train_goal_option(map, goal, cfg, &mut stream)
        })
        .collect()
}

/// Cache file name for a goal policy; encodes the map hash and the goal cell.
pub fn cache_file_name(map: &GridMap, goal: Cell) -> String {
    let (r, c) = map.row_col(goal);
    format!("goal-{r}x{c}-{}.policy", map.hash_short())
}

/// Serializes a goal option as tabular text rows `position,last_action,action`
/// over all free positions. Returns the written path.
pub fn save_policy(dir: &Path, map: &GridMap, option: &OptionDef) -> Result<PathBuf, TrainError> {
    let OptionKind::Goal { policy } = &option.kind else {
        return Err(TrainError::BadCacheFile {
            file: String::new(),
            reason: "only goal options are cached".into(),
        });
    };
    let mut text = String::from("position,last_action,action\n");
    for &cell in map.free_cells() {
        for last in PrimitiveAction::ALL {
            let action = policy.action(cell, last);
            writeln!(text, "{},{},{}", cell, last.index(), action.index()).unwrap();
        }
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join(cache_file_name(map, policy.goal()));
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Loads a cached goal policy, if present. Returns `Ok(None)` when no cache
/// file exists for this map/goal pair.
pub fn load_policy(
    dir: &Path,
    map: &GridMap,
    goal: Cell,
) -> Result<Option<OptionDef>, TrainError> {
    let path = dir.join(cache_file_name(map, goal));
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let file = path.display().to_string();
    let bad = |reason: &str| TrainError::BadCacheFile { file: file.clone(), reason: reason.into() };
    let mut actions = vec![None as Option<PrimitiveAction>; map.position_count() * 4];
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == "position,last_action,action" {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(p), Some(l), Some(a), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(&format!("malformed row {}", i + 1)));
        };
        let position: usize = p.parse().map_err(|_| bad(&format!("bad position in row {}", i + 1)))?;
        let last: usize = l.parse().map_err(|_| bad(&format!("bad last_action in row {}", i + 1)))?;
        let action: usize = a.parse().map_err(|_| bad(&format!("bad action in row {}", i + 1)))?;
        if position >= map.position_count() || !map.is_free(position as Cell) {
            return Err(bad(&format!("position {position} is not a free cell")));
        }
        let (Some(_), Some(action)) =
            (PrimitiveAction::from_index(last), PrimitiveAction::from_index(action))
        else {
            return Err(bad(&format!("action index out of range in row {}", i + 1)));
        };
        actions[position * 4 + last] = Some(action);
    }
    let mut table = vec![PrimitiveAction::North; map.position_count() * 4];
    for &cell in map.free_cells() {
        for last in PrimitiveAction::ALL {
            let nav = nav_index(cell, last);
            table[nav] = actions[nav].ok_or_else(|| {
                let (r, c) = map.row_col(cell);
                bad(&format!("missing row for position {r}:{c} last_action {}", last.index()))
            })?;
        }
    }
    let policy = GoalPolicy { goal, actions: table };
    check_coverage(map, &policy).map_err(|_| bad("cached policy does not reach its goal"))?;
    Ok(Some(OptionDef { kind: OptionKind::Goal { policy } }))
}

/// Result of a bulk pretraining pass.
#[derive(Debug)]
pub struct PretrainOutcome {
    /// One option per requested goal, in request order.
    pub options: Vec<Arc<OptionDef>>,
    pub trained: usize,
    pub loaded: usize,
}

/// Trains (or loads from `cache_dir`) one goal option per requested goal.
///
/// Training runs in parallel; each goal derives its own stream from
/// `(master_seed, goal cell)`, so the outcome is independent of scheduling,
/// and retraining is skipped for goals already cached for this map.
pub fn pretrain_all(
    map: &GridMap,
    goals: &[Cell],
    cfg: &PretrainConfig,
    cache_dir: Option<&Path>,
    master_seed: u64,
) -> Result<PretrainOutcome, TrainError> {
    for &goal in goals {
        if !map.is_free(goal) {
            return Err(TrainError::WallGoal { goal });
        }
    }
    let results: Vec<Result<(Arc<OptionDef>, bool), TrainError>> = goals
        .par_iter()
        .map(|&goal| {
            if let Some(dir) = cache_dir {
                if let Some(option) = load_policy(dir, map, goal)? {
                    return Ok((Arc::new(option), false));
                }
            }
            let mut rng = streams::stream(master_seed, "pretrain-goal", &[goal as u64]);
            let option = train_goal_option(map, goal, cfg, &mut rng)?;
            if let Some(dir) = cache_dir {
                save_policy(dir, map, &option)?;
            }
            Ok((Arc::new(option), true))
        })
        .collect();
    let mut options = Vec::with_capacity(goals.len());
    let mut trained = 0;
    let mut loaded = 0;
    for result in results {
        let (option, was_trained) = result?;
        if was_trained {
            trained += 1;
        } else {
            loaded += 1;
        }
        options.push(option);
    }
    Ok(PretrainOutcome { options, trained, loaded })
}
