//! Benchmark environments: ASCII gridworlds and River Swim.
//!
//! Every environment compiles down to an [`EnvDynamics`] table. Gridworld
//! layouts live in `maps/*.map` and use this legend:
//!
//! | glyph | cell |
//! |-------|------|
//! | `#` | wall |
//! | `.` | floor |
//! | `S` | start (floor) |
//! | `g` | gold: `STAY` ends the episode with reward 0.1 |
//! | `T` | treasure: `STAY` ends the episode with reward 1 |
//! | `x` | snake: any move landing here gives -10 |
//! | `b` | never-observable cell: its reward is hidden by every monitor except Full; landing here gives -10 |
//! | `o` | hole: a move only takes effect 10% of the time |
//! | `<` `v` `>` `^` | one-way cell: moves in its own direction whatever the action |
//! | `B` | button: not walkable, bumping into it toggles a Button monitor |
//!
//! Lines starting with `;` are comments. Rows must all have the same width;
//! cells outside the grid count as walls.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, MapError, Result};

pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;
pub const STAY: usize = 4;

pub const GRID_ACTION_NAMES: [&str; 5] = ["LEFT", "DOWN", "RIGHT", "UP", "STAY"];
pub const RIVER_ACTION_NAMES: [&str; 2] = ["LEFT", "RIGHT"];

const GOLD_REWARD: f64 = 0.1;
const TREASURE_REWARD: f64 = 1.0;
const HAZARD_REWARD: f64 = -10.0;
const HOLE_ESCAPE: f64 = 0.1;
const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Down,
    Right,
    Up,
}

impl Direction {
    fn from_action(action: usize) -> Option<Direction> {
        match action {
            LEFT => Some(Direction::Left),
            DOWN => Some(Direction::Down),
            RIGHT => Some(Direction::Right),
            UP => Some(Direction::Up),
            _ => None,
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::Left => (0, -1),
            Direction::Down => (1, 0),
            Direction::Right => (0, 1),
            Direction::Up => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Floor,
    Wall,
    Start,
    Gold,
    Treasure,
    Snake,
    NeverObservable,
    Hole,
    OneWay(Direction),
    Button,
}

impl Cell {
    fn from_glyph(glyph: char) -> Option<Cell> {
        Some(match glyph {
            '#' => Cell::Wall,
            '.' => Cell::Floor,
            'S' => Cell::Start,
            'g' => Cell::Gold,
            'T' => Cell::Treasure,
            'x' => Cell::Snake,
            'b' => Cell::NeverObservable,
            'o' => Cell::Hole,
            '<' => Cell::OneWay(Direction::Left),
            'v' => Cell::OneWay(Direction::Down),
            '>' => Cell::OneWay(Direction::Right),
            '^' => Cell::OneWay(Direction::Up),
            'B' => Cell::Button,
            _ => return None,
        })
    }

    pub fn glyph(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Start => 'S',
            Cell::Gold => 'g',
            Cell::Treasure => 'T',
            Cell::Snake => 'x',
            Cell::NeverObservable => 'b',
            Cell::Hole => 'o',
            Cell::OneWay(Direction::Left) => '<',
            Cell::OneWay(Direction::Down) => 'v',
            Cell::OneWay(Direction::Right) => '>',
            Cell::OneWay(Direction::Up) => '^',
            Cell::Button => 'B',
        }
    }

    /// Whether the agent can occupy the cell.
    pub fn passable(self) -> bool {
        !matches!(self, Cell::Wall | Cell::Button)
    }

    fn hazardous(self) -> bool {
        matches!(self, Cell::Snake | Cell::NeverObservable)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
}

impl GridMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    fn neighbor(&self, (r, c): (usize, usize), dir: Direction) -> Option<(usize, usize)> {
        let (dr, dc) = dir.delta();
        let r = r.checked_add_signed(dr)?;
        let c = c.checked_add_signed(dc)?;
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    /// Where a move in `dir` ends up: the neighbor if it is passable,
    /// otherwise the current cell.
    fn destination(&self, from: (usize, usize), dir: Direction) -> (usize, usize) {
        match self.neighbor(from, dir) {
            Some((r, c)) if self.cell(r, c).passable() => (r, c),
            _ => from,
        }
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: String = (0..self.cols).map(|c| self.cell(r, c).glyph()).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Parse an ASCII map. Errors name the offending cell as `(row, col)` within
/// the grid, comment lines excluded.
pub fn load_map(text: &str) -> std::result::Result<GridMap, MapError> {
    let lines: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.starts_with(';') && !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(MapError::Empty);
    }
    let cols = lines[0].chars().count();
    let mut cells = Vec::with_capacity(lines.len() * cols);
    let mut start = None;
    for (row, line) in lines.iter().enumerate() {
        let len = line.chars().count();
        if len != cols {
            return Err(MapError::Ragged {
                row,
                len,
                expected: cols,
            });
        }
        for (col, glyph) in line.chars().enumerate() {
            let cell = Cell::from_glyph(glyph).ok_or(MapError::UnknownGlyph { row, col, glyph })?;
            if cell == Cell::Start {
                if let Some(first) = start {
                    return Err(MapError::MultipleStarts {
                        first,
                        second: (row, col),
                    });
                }
                start = Some((row, col));
            }
            cells.push(cell);
        }
    }
    let map = GridMap {
        rows: lines.len(),
        cols,
        cells,
        start: start.ok_or(MapError::NoStart)?,
    };

    let mut seen = vec![false; map.cells.len()];
    let mut queue = VecDeque::from([map.start]);
    seen[map.start.0 * cols + map.start.1] = true;
    while let Some(pos) = queue.pop_front() {
        for dir in [Direction::Left, Direction::Down, Direction::Right, Direction::Up] {
            if let Some((r, c)) = map.neighbor(pos, dir) {
                let i = r * cols + c;
                if !seen[i] && map.cells[i].passable() {
                    seen[i] = true;
                    queue.push_back((r, c));
                }
            }
        }
    }
    let mut treasures = 0;
    for (i, &cell) in map.cells.iter().enumerate() {
        if cell == Cell::Treasure {
            treasures += 1;
            if !seen[i] {
                return Err(MapError::UnreachableTreasure {
                    row: i / cols,
                    col: i % cols,
                });
            }
        }
    }
    if treasures == 0 {
        return Err(MapError::NoTreasure);
    }
    Ok(map)
}

/// One possible result of taking an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    pub terminal: bool,
}

/// A compiled tabular environment.
#[derive(Debug, Clone)]
pub struct EnvDynamics {
    name: String,
    n_states: usize,
    n_actions: usize,
    start: usize,
    horizon: usize,
    outcomes: Vec<Vec<Outcome>>,
    never_observable: Vec<bool>,
    button_bump: Vec<bool>,
    goal_states: Vec<bool>,
    bot_states: Vec<bool>,
    reward_min: f64,
    reward_max: f64,
    /// Grid coordinates per state, for gridworlds.
    coords: Option<Vec<(usize, usize)>>,
    map: Option<GridMap>,
}

impl EnvDynamics {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: String,
        n_states: usize,
        n_actions: usize,
        start: usize,
        horizon: usize,
        outcomes: Vec<Vec<Outcome>>,
        never_observable: Vec<bool>,
        button_bump: Vec<bool>,
        goal_states: Vec<bool>,
        bot_states: Vec<bool>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        let mut reward_min = f64::INFINITY;
        let mut reward_max = f64::NEG_INFINITY;
        for (i, row) in outcomes.iter().enumerate() {
            let total: f64 = row.iter().map(|o| o.prob).sum();
            if row.is_empty() || (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Config(format!(
                    "{name}: transition row for state {} action {} sums to {total}",
                    i / n_actions,
                    i % n_actions
                )));
            }
            for o in row {
                if o.next >= n_states || !o.prob.is_finite() || o.prob < 0.0 || !o.reward.is_finite()
                {
                    return Err(Error::Config(format!("{name}: malformed outcome {o:?}")));
                }
                reward_min = reward_min.min(o.reward);
                reward_max = reward_max.max(o.reward);
            }
        }
        Ok(EnvDynamics {
            name,
            n_states,
            n_actions,
            start,
            horizon,
            outcomes,
            never_observable,
            button_bump,
            goal_states,
            bot_states,
            reward_min,
            reward_max,
            coords: None,
            map: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        (self.reward_min, self.reward_max)
    }

    pub fn outcomes(&self, state: usize, action: usize) -> &[Outcome] {
        &self.outcomes[state * self.n_actions + action]
    }

    pub fn mean_reward(&self, state: usize, action: usize) -> f64 {
        self.outcomes(state, action)
            .iter()
            .map(|o| o.prob * o.reward)
            .sum()
    }

    /// Pairs whose reward no monitor (other than Full) ever reveals.
    pub fn never_observable(&self, state: usize, action: usize) -> bool {
        self.never_observable[state * self.n_actions + action]
    }

    pub fn has_never_observable(&self) -> bool {
        self.never_observable.iter().any(|&m| m)
    }

    /// Pairs that bump into the button cell.
    pub fn bumps_button(&self, state: usize, action: usize) -> bool {
        self.button_bump[state * self.n_actions + action]
    }

    pub fn is_goal(&self, state: usize) -> bool {
        self.goal_states[state]
    }

    pub fn is_bot(&self, state: usize) -> bool {
        self.bot_states[state]
    }

    pub fn coords(&self, state: usize) -> Option<(usize, usize)> {
        self.coords.as_ref().map(|c| c[state])
    }

    pub fn map(&self) -> Option<&GridMap> {
        self.map.as_ref()
    }

    pub fn action_names(&self) -> Vec<String> {
        let names: &[&str] = if self.n_actions == GRID_ACTION_NAMES.len() {
            &GRID_ACTION_NAMES
        } else if self.n_actions == RIVER_ACTION_NAMES.len() {
            &RIVER_ACTION_NAMES
        } else {
            &[]
        };
        (0..self.n_actions)
            .map(|a| names.get(a).map_or_else(|| a.to_string(), |s| s.to_string()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Outcome {
        let row = self.outcomes(state, action);
        if row.len() == 1 {
            return row[0];
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in row {
            acc += o.prob;
            if u < acc {
                return *o;
            }
        }
        row[row.len() - 1]
    }

    /// Clear the never-observable mask, keeping rewards as they are.
    pub fn make_all_observable(&mut self) {
        self.never_observable.iter_mut().for_each(|m| *m = false);
    }
}

/// Compile a parsed map into dynamics. States are the passable cells in
/// row-major order; actions are LEFT, DOWN, RIGHT, UP, STAY.
pub fn compile_gridworld(name: &str, map: &GridMap, horizon: usize) -> Result<EnvDynamics> {
    let mut index = vec![usize::MAX; map.rows * map.cols];
    let mut coords = Vec::new();
    for r in 0..map.rows {
        for c in 0..map.cols {
            if map.cell(r, c).passable() {
                index[r * map.cols + c] = coords.len();
                coords.push((r, c));
            }
        }
    }
    let n_states = coords.len();
    let n_actions = GRID_ACTION_NAMES.len();
    let state_of = |(r, c): (usize, usize)| index[r * map.cols + c];

    let mut outcomes = Vec::with_capacity(n_states * n_actions);
    let mut never_observable = Vec::with_capacity(n_states * n_actions);
    let mut button_bump = Vec::with_capacity(n_states * n_actions);
    for &pos in &coords {
        let here = map.cell(pos.0, pos.1);
        for action in 0..n_actions {
            let landing = |dest: (usize, usize), prob: f64| {
                let cell = map.cell(dest.0, dest.1);
                Outcome {
                    next: state_of(dest),
                    prob,
                    reward: if cell.hazardous() { HAZARD_REWARD } else { 0.0 },
                    terminal: false,
                }
            };
            let mut row = match (here, Direction::from_action(action)) {
                (Cell::OneWay(dir), _) => vec![landing(map.destination(pos, dir), 1.0)],
                (Cell::Gold, None) => vec![Outcome {
                    next: state_of(pos),
                    prob: 1.0,
                    reward: GOLD_REWARD,
                    terminal: true,
                }],
                (Cell::Treasure, None) => vec![Outcome {
                    next: state_of(pos),
                    prob: 1.0,
                    reward: TREASURE_REWARD,
                    terminal: true,
                }],
                (_, None) => vec![landing(pos, 1.0)],
                (Cell::Hole, Some(dir)) => vec![
                    landing(pos, 1.0 - HOLE_ESCAPE),
                    landing(map.destination(pos, dir), HOLE_ESCAPE),
                ],
                (_, Some(dir)) => vec![landing(map.destination(pos, dir), 1.0)],
            };
            merge_outcomes(&mut row);
            never_observable.push(row.iter().any(|o| {
                let (r, c) = coords[o.next];
                o.prob > 0.0 && map.cell(r, c) == Cell::NeverObservable
            }));
            let bump = match (here, Direction::from_action(action)) {
                (Cell::OneWay(_), _) | (_, None) => false,
                (_, Some(dir)) => map
                    .neighbor(pos, dir)
                    .is_some_and(|(r, c)| map.cell(r, c) == Cell::Button),
            };
            button_bump.push(bump);
            outcomes.push(row);
        }
    }
    let goal_states = coords
        .iter()
        .map(|&(r, c)| map.cell(r, c) == Cell::Treasure)
        .collect();
    let bot_states = coords
        .iter()
        .map(|&(r, c)| map.cell(r, c) == Cell::NeverObservable)
        .collect();
    let mut env = EnvDynamics::assemble(
        name.to_string(),
        n_states,
        n_actions,
        state_of(map.start),
        horizon,
        outcomes,
        never_observable,
        button_bump,
        goal_states,
        bot_states,
    )?;
    env.coords = Some(coords);
    env.map = Some(map.clone());
    Ok(env)
}

fn merge_outcomes(row: &mut Vec<Outcome>) {
    let mut merged: Vec<Outcome> = Vec::with_capacity(row.len());
    for o in row.drain(..) {
        match merged
            .iter_mut()
            .find(|m| m.next == o.next && m.reward == o.reward && m.terminal == o.terminal)
        {
            Some(m) => m.prob += o.prob,
            None => merged.push(o),
        }
    }
    *row = merged;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiverSwimParams {
    pub n_states: usize,
    /// RIGHT moves one cell right.
    pub p_advance: f64,
    /// RIGHT leaves the agent in place.
    pub p_stay: f64,
    /// RIGHT is swept one cell left.
    pub p_slip: f64,
    pub left_reward: f64,
    pub right_reward: f64,
}

impl Default for RiverSwimParams {
    fn default() -> Self {
        RiverSwimParams {
            n_states: 6,
            p_advance: 0.3,
            p_stay: 0.6,
            p_slip: 0.1,
            left_reward: 0.01,
            right_reward: 1.0,
        }
    }
}

/// River Swim with actions LEFT and RIGHT. LEFT always succeeds and pays
/// `left_reward` at the leftmost cell. RIGHT fights the current: in the
/// middle it advances, stays or slips back; at the leftmost cell a slip
/// becomes a stay; at the rightmost cell it pays `right_reward` whenever the
/// agent is not swept back.
pub fn compile_riverswim(params: &RiverSwimParams, horizon: usize) -> Result<EnvDynamics> {
    let n = params.n_states;
    if n < 2 {
        return Err(Error::Config(format!(
            "river swim needs at least 2 states, got {n}"
        )));
    }
    let probs = [params.p_advance, params.p_stay, params.p_slip];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p))
        || (probs.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE
    {
        return Err(Error::Config(format!(
            "river swim probabilities {probs:?} do not form a distribution"
        )));
    }
    let step = |next, prob, reward| Outcome {
        next,
        prob,
        reward,
        terminal: false,
    };
    let mut outcomes = Vec::with_capacity(2 * n);
    for s in 0..n {
        let left_reward = if s == 0 { params.left_reward } else { 0.0 };
        outcomes.push(vec![step(s.saturating_sub(1), 1.0, left_reward)]);
        let mut right = if s + 1 == n {
            vec![
                step(s, params.p_advance + params.p_stay, params.right_reward),
                step(s - 1, params.p_slip, 0.0),
            ]
        } else if s == 0 {
            vec![
                step(1, params.p_advance, 0.0),
                step(0, params.p_stay + params.p_slip, 0.0),
            ]
        } else {
            vec![
                step(s + 1, params.p_advance, 0.0),
                step(s, params.p_stay, 0.0),
                step(s - 1, params.p_slip, 0.0),
            ]
        };
        right.retain(|o| o.prob > 0.0);
        merge_outcomes(&mut right);
        outcomes.push(right);
    }
    let mut button_bump = vec![false; 2 * n];
    button_bump[0] = true;
    let mut goal_states = vec![false; n];
    goal_states[n - 1] = true;
    EnvDynamics::assemble(
        "river-swim".into(),
        n,
        2,
        0,
        horizon,
        outcomes,
        vec![false; 2 * n],
        button_bump,
        goal_states,
        vec![false; n],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    Empty,
    Hazard,
    Bottleneck,
    Loop,
    RiverSwim,
    OneWay,
    Corridor,
    TwoRoom3x5,
    TwoRoom2x11,
}

impl EnvId {
    pub const ALL: [EnvId; 9] = [
        EnvId::Empty,
        EnvId::Hazard,
        EnvId::Bottleneck,
        EnvId::Loop,
        EnvId::RiverSwim,
        EnvId::OneWay,
        EnvId::Corridor,
        EnvId::TwoRoom3x5,
        EnvId::TwoRoom2x11,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Empty => "empty",
            EnvId::Hazard => "hazard",
            EnvId::Bottleneck => "bottleneck",
            EnvId::Loop => "loop",
            EnvId::RiverSwim => "river-swim",
            EnvId::OneWay => "one-way",
            EnvId::Corridor => "corridor",
            EnvId::TwoRoom3x5 => "two-room-3x5",
            EnvId::TwoRoom2x11 => "two-room-2x11",
        }
    }

    pub fn default_horizon(self) -> usize {
        match self {
            EnvId::RiverSwim | EnvId::Corridor | EnvId::TwoRoom2x11 => 200,
            _ => 50,
        }
    }

    /// The shipped layout, or `None` for River Swim.
    pub fn builtin_map(self) -> Option<&'static str> {
        Some(match self {
            EnvId::Empty => include_str!("../maps/empty.map"),
            EnvId::Hazard => include_str!("../maps/hazard.map"),
            EnvId::Bottleneck => include_str!("../maps/bottleneck.map"),
            EnvId::Loop => include_str!("../maps/loop.map"),
            EnvId::OneWay => include_str!("../maps/one-way.map"),
            EnvId::Corridor => include_str!("../maps/corridor.map"),
            EnvId::TwoRoom3x5 => include_str!("../maps/two-room-3x5.map"),
            EnvId::TwoRoom2x11 => include_str!("../maps/two-room-2x11.map"),
            EnvId::RiverSwim => return None,
        })
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOptions {
    /// Map text replacing the shipped layout.
    pub map: Option<String>,
    pub horizon: Option<usize>,
    /// Lift the never-observable mask so the Mon-MDP becomes solvable.
    pub observable_bot_cells: bool,
    pub river_swim: RiverSwimParams,
}

pub fn build(id: EnvId, options: &EnvOptions) -> Result<EnvDynamics> {
    let horizon = options.horizon.unwrap_or_else(|| id.default_horizon());
    let mut env = match id.builtin_map() {
        None => {
            if options.map.is_some() {
                return Err(Error::Config("river-swim does not take a map".into()));
            }
            compile_riverswim(&options.river_swim, horizon)?
        }
        Some(builtin) => {
            let text = options.map.as_deref().unwrap_or(builtin);
            compile_gridworld(id.as_str(), &load_map(text)?, horizon)?
        }
    };
    if options.observable_bot_cells {
        env.make_all_observable();
    }
    Ok(env)
}
