//! Exact planning over the pose graph and geodesic distance fields.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::world::{step, Action, Cell, GridWorld, Heading, Pose};

/// Per-cell geodesic distance to a goal, in meters. Unreachable and blocked
/// cells hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicField {
    width: usize,
    height: usize,
    pub goal: Cell,
    dist: Vec<f64>,
}

impl GeodesicField {
    pub fn at(&self, (x, y): Cell) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return f64::INFINITY;
        }
        self.dist[y as usize * self.width + x as usize]
    }
}

/// 4-connected BFS distances from `goal`, scaled by the cell size.
pub fn geodesic_field(world: &GridWorld, goal: Cell) -> Result<GeodesicField> {
    if world.is_blocked(goal) {
        return Err(Error::InvalidGoal(goal.0, goal.1));
    }
    let mut steps = vec![u32::MAX; world.width * world.height];
    steps[world.index(goal)] = 0;
    let mut queue = VecDeque::from([goal]);
    while let Some(c) = queue.pop_front() {
        let d = steps[world.index(c)];
        for n in world.neighbors(c) {
            let i = world.index(n);
            if steps[i] == u32::MAX {
                steps[i] = d + 1;
                queue.push_back(n);
            }
        }
    }
    let dist = steps
        .into_iter()
        .map(|s| if s == u32::MAX { f64::INFINITY } else { f64::from(s) * world.cell_size })
        .collect();
    Ok(GeodesicField { width: world.width, height: world.height, goal, dist })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePlan {
    /// Ends with STOP.
    pub actions: Vec<Action>,
    /// Start pose followed by the pose after each motion action.
    pub poses: Vec<Pose>,
}

impl OraclePlan {
    /// Number of actions excluding the final STOP.
    pub fn cost(&self) -> usize {
        self.actions.len() - 1
    }
}

fn state_index(world: &GridWorld, p: Pose) -> usize {
    world.index(p.cell()) * 4 + p.heading.index()
}

/// Minimum-action plan from `start` until the agent is within `goal_radius`
/// (Euclidean) of `goal`, then STOP.
///
/// Successors are expanded FORWARD, TURN_LEFT, TURN_RIGHT; equal-cost
/// frontier states pop in (y, x, heading) order.
pub fn plan(world: &GridWorld, start: Pose, goal: Cell, goal_radius: f64) -> Result<OraclePlan> {
    if world.is_blocked(goal) {
        return Err(Error::InvalidGoal(goal.0, goal.1));
    }
    if world.is_blocked(start.cell()) {
        return Err(Error::Unreachable(start.x, start.y));
    }
    let in_zone = |p: Pose| world.distance_m(p.cell(), goal) <= goal_radius;
    let n = world.width * world.height * 4;
    let mut cost = vec![usize::MAX; n];
    let mut parent: Vec<Option<(Pose, Action)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let key = |c: usize, p: Pose| Reverse((c, p.y, p.x, p.heading.index()));
    cost[state_index(world, start)] = 0;
    heap.push(key(0, start));

    let mut reached = None;
    while let Some(Reverse((c, y, x, h))) = heap.pop() {
        let pose = Pose::new(x, y, Heading::from_index(h));
        let si = state_index(world, pose);
        if done[si] {
            continue;
        }
        done[si] = true;
        if in_zone(pose) {
            reached = Some(pose);
            break;
        }
        for action in [Action::Forward, Action::TurnLeft, Action::TurnRight] {
            let next = step(world, pose, action);
            if next == pose {
                continue;
            }
            let ni = state_index(world, next);
            if c + 1 < cost[ni] {
                cost[ni] = c + 1;
                parent[ni] = Some((pose, action));
                heap.push(key(c + 1, next));
            }
        }
    }
    let end = reached.ok_or(Error::Unreachable(start.x, start.y))?;

    let mut actions = vec![Action::Stop];
    let mut poses = vec![end];
    let mut cur = end;
    while let Some((prev, a)) = parent[state_index(world, cur)] {
        actions.push(a);
        poses.push(prev);
        cur = prev;
    }
    actions.reverse();
    poses.reverse();
    Ok(OraclePlan { actions, poses })
}

/// Largest index `j` such that waypoints `0..=j` were visited in order, or -1.
pub fn progress_index(positions: &[Cell], waypoints: &[Cell], visit_radius: f64, cell_size: f64) -> i64 {
    let mut tracker = ProgressTracker::new(visit_radius, cell_size);
    for &p in positions {
        tracker.observe(p, waypoints);
    }
    tracker.index
}

/// Same as [`progress_index`], but waypoint `j` counts as soon as it is
/// visited, regardless of whether earlier waypoints were.
pub fn furthest_visited_index(positions: &[Cell], waypoints: &[Cell], visit_radius: f64, cell_size: f64) -> i64 {
    let mut best = -1i64;
    for &p in positions {
        for (j, &w) in waypoints.iter().enumerate() {
            if cell_distance(p, w, cell_size) <= visit_radius {
                best = best.max(j as i64);
            }
        }
    }
    best
}

fn cell_distance(a: Cell, b: Cell, cell_size: f64) -> f64 {
    f64::from(a.0 - b.0).hypot(f64::from(a.1 - b.1)) * cell_size
}

/// Incremental, order-respecting waypoint progress.
#[derive(Debug, Clone, Copy)]
pub struct ProgressTracker {
    pub index: i64,
    visit_radius: f64,
    cell_size: f64,
}

impl ProgressTracker {
    pub fn new(visit_radius: f64, cell_size: f64) -> Self {
        Self { index: -1, visit_radius, cell_size }
    }

    /// Returns true if the position advanced progress.
    pub fn observe(&mut self, pos: Cell, waypoints: &[Cell]) -> bool {
        let before = self.index;
        while let Some(&w) = waypoints.get((self.index + 1) as usize) {
            if cell_distance(pos, w, self.cell_size) <= self.visit_radius {
                self.index += 1;
            } else {
                break;
            }
        }
        self.index > before
    }
}

/// Distance to the nearest reference cell and heading error against the
/// bearing to the next unvisited waypoint (the last waypoint once all are
/// visited). Heading error is 0 when the agent stands on that waypoint.
pub fn path_deviation(pose: Pose, waypoints: &[Cell], progress: i64, cell_size: f64) -> (f64, f64) {
    let pos = pose.cell();
    let dist = waypoints
        .iter()
        .map(|&w| cell_distance(pos, w, cell_size))
        .fold(f64::INFINITY, f64::min);
    let next_idx = ((progress + 1).max(0) as usize).min(waypoints.len() - 1);
    let target = waypoints[next_idx];
    (dist, heading_error_deg(pose, target))
}

pub fn heading_error_deg(pose: Pose, target: Cell) -> f64 {
    let dx = f64::from(target.0 - pose.x);
    let dy = f64::from(target.1 - pose.y);
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    // compass bearing: north (negative y) is 0, east is 90
    let bearing = dx.atan2(-dy).to_degrees();
    let mut diff = (bearing - pose.heading.degrees()).rem_euclid(360.0);
    if diff > 180.0 {
        diff = 360.0 - diff;
    }
    diff
}
