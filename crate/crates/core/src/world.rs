//! Grid-world substrate: poses, the four-action interface, egocentric
//! occupancy observations and template-compiled instructions.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle;
use crate::rng;

pub type Cell = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    N = 0,
    E = 1,
    S = 2,
    W = 3,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    /// Unit displacement; y grows southward.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    /// Compass angle in degrees, N = 0, clockwise.
    pub fn degrees(self) -> f64 {
        90.0 * self.index() as f64
    }

    pub fn as_char(self) -> char {
        ['N', 'E', 'S', 'W'][self.index()]
    }

    pub fn from_char(c: char) -> Option<Heading> {
        match c {
            'N' => Some(Heading::N),
            'E' => Some(Heading::E),
            'S' => Some(Heading::S),
            'W' => Some(Heading::W),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: i32, y: i32, heading: Heading) -> Self {
        Self { x, y, heading }
    }

    pub fn cell(&self) -> Cell {
        (self.x, self.y)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.heading.as_char())
    }
}

/// Discrete action; the integer encoding 0..=3 is part of every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    Stop = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn short(self) -> char {
        ['F', 'L', 'R', 'S'][self.index()]
    }
}

/// Egocentric k×k occupancy patch, row-major, agent at the center facing up.
/// 1 marks blocked or out-of-bounds cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub k: usize,
    pub cells: Vec<u8>,
}

impl Observation {
    pub fn zeros(k: usize) -> Self {
        Self { k, cells: vec![0; k * k] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.k + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub width: usize,
    pub height: usize,
    pub obstacle_density: f64,
    pub cell_size: f64,
    pub max_retries: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self { width: 12, height: 12, obstacle_density: 0.2, cell_size: 1.0, max_retries: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    blocked: Vec<bool>,
    pub cell_size: f64,
    pub seed: u64,
}

pub const MAX_DIM: usize = 64;

impl GridWorld {
    /// Builds a world from an explicit occupancy grid (`rows[y][x]`, true = blocked).
    pub fn from_rows(rows: &[Vec<bool>], cell_size: f64, seed: u64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
            return Err(Error::GenerationFailed(format!("bad dimensions {width}x{height}")));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parse("ragged occupancy rows".into()));
        }
        let blocked = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self { width, height, blocked, cell_size, seed })
    }

    /// Parses `.`/`#` rows.
    pub fn from_ascii(rows: &[&str], cell_size: f64, seed: u64) -> Result<Self> {
        let grid: Vec<Vec<bool>> = rows
            .iter()
            .map(|r| {
                r.chars()
                    .map(|c| match c {
                        '.' => Ok(false),
                        '#' => Ok(true),
                        other => Err(Error::Parse(format!("bad map glyph {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Self::from_rows(&grid, cell_size, seed)
    }

    pub fn open(width: usize, height: usize) -> Self {
        Self { width, height, blocked: vec![false; width * height], cell_size: 1.0, seed: 0 }
    }

    pub fn in_bounds(&self, (x, y): Cell) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        y as usize * self.width + x as usize
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.blocked[self.index(c)]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_blocked(c)
    }

    pub fn set_blocked(&mut self, c: Cell, blocked: bool) {
        let i = self.index(c);
        self.blocked[i] = blocked;
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                if self.is_free((x, y)) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn neighbors(&self, (x, y): Cell) -> impl Iterator<Item = Cell> + '_ {
        Heading::ALL
            .into_iter()
            .map(move |h| {
                let (dx, dy) = h.delta();
                (x + dx, y + dy)
            })
            .filter(|&c| self.is_free(c))
    }

    /// True when every free cell is reachable from every other.
    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&first) = free.first() else {
            return false;
        };
        let mut seen = vec![false; self.width * self.height];
        let mut queue = VecDeque::from([first]);
        seen[self.index(first)] = true;
        let mut count = 1;
        while let Some(c) = queue.pop_front() {
            for n in self.neighbors(c) {
                let i = self.index(n);
                if !seen[i] {
                    seen[i] = true;
                    count += 1;
                    queue.push_back(n);
                }
            }
        }
        count == free.len()
    }

    pub fn ascii_rows(&self) -> Vec<String> {
        (0..self.height as i32)
            .map(|y| {
                (0..self.width as i32)
                    .map(|x| if self.is_blocked((x, y)) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    pub fn distance_m(&self, a: Cell, b: Cell) -> f64 {
        let dx = f64::from(a.0 - b.0);
        let dy = f64::from(a.1 - b.1);
        dx.hypot(dy) * self.cell_size
    }
}

/// Deterministic transition. Bumping into a wall leaves the pose unchanged.
pub fn step(world: &GridWorld, pose: Pose, action: Action) -> Pose {
    match action {
        Action::Forward => {
            let (dx, dy) = pose.heading.delta();
            let target = (pose.x + dx, pose.y + dy);
            if world.is_free(target) {
                Pose { x: target.0, y: target.1, ..pose }
            } else {
                pose
            }
        }
        Action::TurnLeft => Pose { heading: pose.heading.left(), ..pose },
        Action::TurnRight => Pose { heading: pose.heading.right(), ..pose },
        Action::Stop => pose,
    }
}

/// k×k egocentric patch around `pose`, rotated so the agent faces up.
pub fn observe(world: &GridWorld, pose: Pose, k: usize) -> Observation {
    let half = (k / 2) as i32;
    let (fx, fy) = pose.heading.delta();
    let (rx, ry) = pose.heading.right().delta();
    let mut cells = vec![0u8; k * k];
    for row in 0..k as i32 {
        let ahead = half - row;
        for col in 0..k as i32 {
            let side = col - half;
            let c = (pose.x + ahead * fx + side * rx, pose.y + ahead * fy + side * ry);
            cells[(row * k as i32 + col) as usize] = u8::from(world.is_blocked(c));
        }
    }
    Observation { k, cells }
}

/// Samples a connected world; resamples the whole occupancy grid on failure.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<GridWorld> {
    if !(0.0..=0.35).contains(&params.obstacle_density) {
        return Err(Error::GenerationFailed(format!(
            "obstacle density {} outside [0, 0.35]",
            params.obstacle_density
        )));
    }
    if params.width == 0 || params.height == 0 || params.width > MAX_DIM || params.height > MAX_DIM {
        return Err(Error::GenerationFailed(format!("bad dimensions {}x{}", params.width, params.height)));
    }
    let mut rng = rng::stream(seed, "world", &[]);
    for _ in 0..params.max_retries.max(1) {
        let blocked: Vec<bool> = (0..params.width * params.height)
            .map(|_| rng.random::<f64>() < params.obstacle_density)
            .collect();
        let world = GridWorld {
            width: params.width,
            height: params.height,
            blocked,
            cell_size: params.cell_size,
            seed,
        };
        if world.is_connected() {
            return Ok(world);
        }
    }
    Err(Error::GenerationFailed(format!(
        "no connected world after {} retries (density {})",
        params.max_retries, params.obstacle_density
    )))
}

/// Instruction vocabulary. Ids: LEFT=0, RIGHT=1, STOP_AT_GOAL=2, FWD(n)=2+n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstructionToken {
    Fwd(u32),
    Left,
    Right,
    StopAtGoal,
}

impl InstructionToken {
    pub fn id(self) -> u32 {
        match self {
            InstructionToken::Left => 0,
            InstructionToken::Right => 1,
            InstructionToken::StopAtGoal => 2,
            InstructionToken::Fwd(n) => 2 + n,
        }
    }

    pub fn from_id(id: u32, max_run: u32) -> Result<Self> {
        match id {
            0 => Ok(InstructionToken::Left),
            1 => Ok(InstructionToken::Right),
            2 => Ok(InstructionToken::StopAtGoal),
            n if n >= 3 && n - 2 <= max_run => Ok(InstructionToken::Fwd(n - 2)),
            _ => Err(Error::UnknownToken(id)),
        }
    }

    pub fn vocab_size(max_run: u32) -> usize {
        3 + max_run as usize
    }

    /// Action sequence this token stands for.
    pub fn expand(self) -> Vec<Action> {
        match self {
            InstructionToken::Fwd(n) => vec![Action::Forward; n as usize],
            InstructionToken::Left => vec![Action::TurnLeft],
            InstructionToken::Right => vec![Action::TurnRight],
            InstructionToken::StopAtGoal => vec![Action::Stop],
        }
    }
}

/// Run-length encodes an oracle action sequence into instruction tokens.
pub fn compile_instruction(actions: &[Action], max_run: u32) -> Result<Vec<InstructionToken>> {
    assert!(max_run >= 1, "max_run must be positive");
    if let Some(pos) = actions.iter().position(|&a| a == Action::Stop) {
        if pos + 1 != actions.len() {
            return Err(Error::MalformedPlan(pos));
        }
    } else {
        return Err(Error::Parse("plan does not end with STOP".into()));
    }
    let mut out = Vec::new();
    let mut run = 0u32;
    let flush = |run: &mut u32, out: &mut Vec<InstructionToken>| {
        while *run > 0 {
            let n = (*run).min(max_run);
            out.push(InstructionToken::Fwd(n));
            *run -= n;
        }
    };
    for &a in actions {
        match a {
            Action::Forward => run += 1,
            Action::TurnLeft => {
                flush(&mut run, &mut out);
                out.push(InstructionToken::Left);
            }
            Action::TurnRight => {
                flush(&mut run, &mut out);
                out.push(InstructionToken::Right);
            }
            Action::Stop => {
                flush(&mut run, &mut out);
                out.push(InstructionToken::StopAtGoal);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub min_episode_length: f64,
    pub goal_radius: f64,
    pub max_run: u32,
    pub max_retries: usize,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self { min_episode_length: 6.0, goal_radius: 3.0, max_run: 5, max_retries: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub world: Arc<GridWorld>,
    pub episode_seed: u64,
    pub start: Pose,
    pub goal: Cell,
    pub reference_path: Vec<Pose>,
    pub reference_waypoints: Vec<Cell>,
    pub instruction: Vec<InstructionToken>,
    pub goal_radius: f64,
    pub max_run: u32,
    /// Geodesic distances to `goal`.
    pub goal_field: Arc<oracle::GeodesicField>,
}

impl Episode {
    /// Geodesic start-to-goal distance in meters.
    pub fn geodesic_length(&self) -> f64 {
        self.goal_field.at(self.start.cell())
    }

    pub fn reference_actions(&self) -> Vec<Action> {
        self.instruction.iter().flat_map(|t| t.expand()).collect()
    }

    pub fn goal_distance(&self, c: Cell) -> f64 {
        self.world.distance_m(c, self.goal)
    }

    pub fn in_goal_zone(&self, c: Cell) -> bool {
        self.goal_distance(c) <= self.goal_radius
    }
}

/// Consecutive-deduplicated positions of a pose sequence.
pub fn dedup_positions(poses: &[Pose]) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::with_capacity(poses.len());
    for p in poses {
        if out.last() != Some(&p.cell()) {
            out.push(p.cell());
        }
    }
    out
}

/// Assembles an episode from a start pose and goal by planning the reference.
pub fn build_episode(
    id: u64,
    world: Arc<GridWorld>,
    episode_seed: u64,
    start: Pose,
    goal: Cell,
    params: &EpisodeParams,
) -> Result<Episode> {
    let goal_field = Arc::new(oracle::geodesic_field(&world, goal)?);
    let plan = oracle::plan(&world, start, goal, params.goal_radius)?;
    let instruction = compile_instruction(&plan.actions, params.max_run)?;
    let reference_waypoints = dedup_positions(&plan.poses);
    Ok(Episode {
        id,
        world,
        episode_seed,
        start,
        goal,
        reference_path: plan.poses,
        reference_waypoints,
        instruction,
        goal_radius: params.goal_radius,
        max_run: params.max_run,
        goal_field,
    })
}

/// Samples a start pose and a goal at least `min_episode_length` apart.
pub fn generate_episode(world: Arc<GridWorld>, seed: u64, id: u64, params: &EpisodeParams) -> Result<Episode> {
    let free = world.free_cells();
    if free.len() < 2 {
        return Err(Error::GenerationFailed("world has fewer than two free cells".into()));
    }
    let mut rng = rng::stream(seed, "episode", &[world.seed]);
    for _ in 0..params.max_retries.max(1) {
        let s = free[rng.random_range(0..free.len())];
        let heading = Heading::from_index(rng.random_range(0..4));
        let g = free[rng.random_range(0..free.len())];
        let field = oracle::geodesic_field(&world, g)?;
        let d = field.at(s);
        if d.is_finite() && d >= params.min_episode_length {
            return build_episode(id, world, seed, Pose::new(s.0, s.1, heading), g, params);
        }
    }
    Err(Error::GenerationFailed(format!(
        "no start/goal pair with geodesic >= {} m after {} retries",
        params.min_episode_length, params.max_retries
    )))
}
