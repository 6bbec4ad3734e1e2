//! Navigation metrics (SR, SPL, OSR, NE, nDTW) and held-out evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grpo;
use crate::rollout::{self, Policy, RolloutConfig, Trajectory};
use crate::world::{dedup_positions, Cell, Episode};

/// Geodesic distance from the stopping point to the goal.
pub fn navigation_error(traj: &Trajectory, episode: &Episode) -> f64 {
    grpo::remaining_distance(traj, episode)
}

/// Whether any visited position satisfied the success distance check, so
/// that every success is also an oracle success.
pub fn oracle_success(traj: &Trajectory, episode: &Episode) -> bool {
    traj.positions().into_iter().any(|c| episode.in_goal_zone(c))
}

fn euclid(a: Cell, b: Cell, cell_size: f64) -> f64 {
    f64::from(a.0 - b.0).hypot(f64::from(a.1 - b.1)) * cell_size
}

/// Dynamic time warping cost under Euclidean point distance.
pub fn dtw(a: &[Cell], b: &[Cell], cell_size: f64) -> f64 {
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = euclid(p, b[j - 1], cell_size) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// exp(−DTW(P, R) / (|R| · threshold))
pub fn ndtw(traj: &[Cell], reference: &[Cell], threshold: f64, cell_size: f64) -> f64 {
    assert!(!traj.is_empty() && !reference.is_empty(), "nDTW needs nonempty paths");
    (-dtw(traj, reference, cell_size) / (reference.len() as f64 * threshold)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub success: bool,
    pub ne_m: f64,
    pub spl: f64,
    pub osr: bool,
    pub ndtw: f64,
    pub path_length_m: f64,
    pub steps: usize,
}

pub fn episode_result(traj: &Trajectory, episode: &Episode) -> EpisodeResult {
    let traj_cells = dedup_positions(&traj.poses());
    EpisodeResult {
        episode_id: episode.id,
        success: traj.success,
        ne_m: navigation_error(traj, episode),
        spl: grpo::spl(traj, episode),
        osr: oracle_success(traj, episode),
        ndtw: ndtw(&traj_cells, &episode.reference_waypoints, episode.goal_radius, episode.world.cell_size),
        path_length_m: traj.path_length,
        steps: traj.steps.len(),
    }
}

/// Episode means; SR, SPL, OSR and nDTW in percent, NE in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    pub osr: f64,
    pub ne: f64,
    pub ndtw: f64,
}

impl MetricsReport {
    pub fn aggregate(results: &[EpisodeResult]) -> Self {
        let n = results.len();
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                results.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n,
            sr: 100.0 * mean(&|r| f64::from(u8::from(r.success))),
            spl: 100.0 * mean(&|r| r.spl),
            osr: 100.0 * mean(&|r| f64::from(u8::from(r.osr))),
            ne: mean(&|r| r.ne_m),
            ndtw: 100.0 * mean(&|r| r.ndtw),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub results: Vec<EpisodeResult>,
    pub trajectories: Vec<Trajectory>,
}

/// Free-running greedy evaluation: only the goal-zone grace check and the
/// step cap may end an episode early.
pub fn evaluate(policy: &dyn Policy, episodes: &[Episode], cfg: &RolloutConfig) -> Result<Evaluation> {
    let eval_cfg = cfg.for_evaluation();
    let trajectories: Vec<Trajectory> = episodes
        .par_iter()
        .map(|ep| rollout::run_greedy(policy, ep, &eval_cfg))
        .collect::<Result<_>>()?;
    let results: Vec<EpisodeResult> = trajectories.iter().zip(episodes).map(|(t, e)| episode_result(t, e)).collect();
    Ok(Evaluation { report: MetricsReport::aggregate(&results), results, trajectories })
}
