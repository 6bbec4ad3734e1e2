//! Greedy probes and temperature-sampled rollouts with online failure triggers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::{self, ProgressTracker};
use crate::policy::{self, HistoryBuilder, HistoryWindow, PolicyParams, PolicySnapshot, N_ACTIONS};
use crate::rng;
use crate::world::{observe, step, Action, Cell, Episode, Observation, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerKind {
    OffTrack,
    ProgressStall,
    PrematureStop,
    ForcedStop,
}

impl TriggerKind {
    pub fn name(self) -> &'static str {
        match self {
            TriggerKind::OffTrack => "off_track",
            TriggerKind::ProgressStall => "progress_stall",
            TriggerKind::PrematureStop => "premature_stop",
            TriggerKind::ForcedStop => "forced_stop",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::OffTrack, Self::ProgressStall, Self::PrematureStop, Self::ForcedStop]
            .into_iter()
            .find(|t| t.name() == s)
    }
}

/// Which triggers may terminate a rollout. Evaluation runs free: only the
/// goal-zone grace check and the step cap apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerMode {
    #[default]
    Training,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub off_track_m: f64,
    pub heading_error_deg: f64,
    pub stall_limit: usize,
    pub premature_stop_m: f64,
    pub grace_period: usize,
    pub visit_radius: f64,
    pub max_steps_factor: usize,
    pub max_steps_floor: usize,
    #[serde(skip)]
    pub triggers: TriggerMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            off_track_m: 3.0,
            heading_error_deg: 120.0,
            stall_limit: 60,
            premature_stop_m: 3.0,
            grace_period: 10,
            visit_radius: 0.5,
            max_steps_factor: 4,
            max_steps_floor: 50,
            triggers: TriggerMode::Training,
        }
    }
}

impl RolloutConfig {
    pub fn max_steps(&self, episode: &Episode) -> usize {
        (self.max_steps_factor * episode.reference_actions().len()).max(self.max_steps_floor)
    }

    pub fn for_evaluation(&self) -> Self {
        Self { triggers: TriggerMode::Evaluation, ..*self }
    }
}

/// Anything that maps a decision context to four action logits.
pub trait Policy: Sync {
    /// (history window length, observation patch size)
    fn history_shape(&self) -> (usize, usize);
    fn logits(&self, episode: &Episode, pose: Pose, window: &HistoryWindow) -> Result<[f64; N_ACTIONS]>;
}

impl Policy for PolicyParams {
    fn history_shape(&self) -> (usize, usize) {
        (self.config.window, self.config.obs_k)
    }

    fn logits(&self, episode: &Episode, _pose: Pose, window: &HistoryWindow) -> Result<[f64; N_ACTIONS]> {
        Ok(policy::evaluate(self, &episode.instruction, window)?.logits)
    }
}

impl Policy for PolicySnapshot {
    fn history_shape(&self) -> (usize, usize) {
        self.params().history_shape()
    }

    fn logits(&self, episode: &Episode, pose: Pose, window: &HistoryWindow) -> Result<[f64; N_ACTIONS]> {
        self.params().logits(episode, pose, window)
    }
}

/// Re-plans from the current pose each step and puts all mass on the first
/// oracle action.
#[derive(Debug, Clone, Copy)]
pub struct OraclePolicy {
    pub window: usize,
    pub obs_k: usize,
}

impl Policy for OraclePolicy {
    fn history_shape(&self) -> (usize, usize) {
        (self.window, self.obs_k)
    }

    fn logits(&self, episode: &Episode, pose: Pose, _window: &HistoryWindow) -> Result<[f64; N_ACTIONS]> {
        let plan = oracle::plan(&episode.world, pose, episode.goal, episode.goal_radius)?;
        let mut l = [-30.0; N_ACTIONS];
        l[plan.actions[0].index()] = 30.0;
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    pub pose_before: Pose,
    pub observation: Observation,
    pub action: Action,
    pub logits: [f64; N_ACTIONS],
    pub window: HistoryWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutMode {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_id: u64,
    pub steps: Vec<TrajectoryStep>,
    pub final_pose: Pose,
    pub stopped: bool,
    pub success: bool,
    /// Trigger kind and the index of the step after which it fired.
    pub trigger: Option<(TriggerKind, usize)>,
    pub path_length: f64,
    pub mode: RolloutMode,
    pub rng_stream_id: Option<u64>,
}

impl Trajectory {
    /// Pose before every step followed by the final pose.
    pub fn poses(&self) -> Vec<Pose> {
        let mut v: Vec<Pose> = self.steps.iter().map(|s| s.pose_before).collect();
        v.push(self.final_pose);
        v
    }

    pub fn positions(&self) -> Vec<Cell> {
        self.poses().iter().map(Pose::cell).collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn issued_stop(&self) -> bool {
        self.steps.last().is_some_and(|s| s.action == Action::Stop)
    }

    pub fn trigger_kind(&self) -> Option<TriggerKind> {
        self.trigger.map(|(k, _)| k)
    }
}

/// Online monitoring state after an executed action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerState {
    pub pose: Pose,
    pub t: usize,
    pub progress: i64,
    pub steps_since_progress: usize,
    /// The action just executed was STOP.
    pub stopped: bool,
    /// Consecutive steps spent inside the goal zone without stopping.
    pub zone_steps: usize,
}

/// Deviation beyond `off_track_m` or heading error beyond
/// `heading_error_deg`; both bounds are strict.
pub fn is_off_track(dist_m: f64, heading_err_deg: f64, cfg: &RolloutConfig) -> bool {
    dist_m > cfg.off_track_m || heading_err_deg > cfg.heading_error_deg
}

pub fn is_stalled(steps_since_progress: usize, cfg: &RolloutConfig) -> bool {
    steps_since_progress >= cfg.stall_limit
}

/// STOP executed strictly farther than `premature_stop_m` from the goal.
pub fn is_premature_stop(goal_dist_m: f64, cfg: &RolloutConfig) -> bool {
    goal_dist_m > cfg.premature_stop_m
}

/// More than `grace_period` consecutive steps inside the goal zone.
pub fn is_forced_stop(zone_steps: usize, cfg: &RolloutConfig) -> bool {
    zone_steps > cfg.grace_period
}

/// First trigger that fires, checked in the order OffTrack, ProgressStall,
/// PrematureStop, ForcedStop. A STOP ends the episode, so only the
/// premature-stop rule applies to it.
pub fn check_triggers(state: &TriggerState, episode: &Episode, cfg: &RolloutConfig) -> Option<TriggerKind> {
    let training = cfg.triggers == TriggerMode::Training;
    if state.stopped {
        let far = is_premature_stop(episode.goal_distance(state.pose.cell()), cfg);
        return (training && far).then_some(TriggerKind::PrematureStop);
    }
    if training {
        let (dist, heading_err) = oracle::path_deviation(
            state.pose,
            &episode.reference_waypoints,
            state.progress,
            episode.world.cell_size,
        );
        if is_off_track(dist, heading_err, cfg) {
            return Some(TriggerKind::OffTrack);
        }
        if is_stalled(state.steps_since_progress, cfg) {
            return Some(TriggerKind::ProgressStall);
        }
    }
    is_forced_stop(state.zone_steps, cfg).then_some(TriggerKind::ForcedStop)
}

/// STOP issued within the goal radius, with no trigger recorded.
pub fn is_success(traj: &Trajectory, episode: &Episode) -> bool {
    traj.issued_stop()
        && !matches!(traj.trigger_kind(), Some(TriggerKind::ForcedStop))
        && episode.goal_distance(traj.final_pose.cell()) <= episode.goal_radius
}

enum Selector {
    Greedy,
    Sampled { temperature: f64, rng: rng::StreamRng },
}

/// Inverse-CDF draw from `probs` with `u` uniform in [0, 1).
pub fn sample_action(probs: &[f64; N_ACTIONS], u: f64) -> Action {
    let mut cum = 0.0;
    let mut last = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = a;
        }
        cum += p;
        if u < cum {
            return Action::ALL[a];
        }
    }
    Action::ALL[last]
}

fn rollout(
    policy: &dyn Policy,
    episode: &Episode,
    cfg: &RolloutConfig,
    mut selector: Selector,
    stream_id: Option<u64>,
) -> Result<Trajectory> {
    let world = &episode.world;
    let (window_len, k) = policy.history_shape();
    let max_steps = cfg.max_steps(episode);
    let mut history = HistoryBuilder::new(window_len, k);
    let mut pose = episode.start;
    let mut progress = ProgressTracker::new(cfg.visit_radius, world.cell_size);
    progress.observe(pose.cell(), &episode.reference_waypoints);
    let mut steps_since_progress = 0;
    let mut zone_steps = 0;
    let mut steps = Vec::new();
    let mut path_length = 0.0;
    let mut trigger = None;
    let mut stopped = false;

    for t in 0..max_steps {
        let obs = observe(world, pose, k);
        let window = history.window(&obs);
        let logits = policy.logits(episode, pose, &window)?;
        let action = match &mut selector {
            Selector::Greedy => policy::greedy_action(&logits),
            Selector::Sampled { temperature, rng } => {
                let dist = policy::action_dist(&logits, *temperature);
                sample_action(&dist.probs, rng.random::<f64>())
            }
        };
        let next = step(world, pose, action);
        if action == Action::Forward && next != pose {
            path_length += world.cell_size;
        }
        history.commit(obs.clone(), action);
        steps.push(TrajectoryStep { t, pose_before: pose, observation: obs, action, logits, window });
        pose = next;

        if action == Action::Stop {
            stopped = true;
        } else {
            if progress.observe(pose.cell(), &episode.reference_waypoints) {
                steps_since_progress = 0;
            } else {
                steps_since_progress += 1;
            }
            zone_steps = if episode.in_goal_zone(pose.cell()) { zone_steps + 1 } else { 0 };
        }
        let state = TriggerState {
            pose,
            t,
            progress: progress.index,
            steps_since_progress,
            stopped,
            zone_steps,
        };
        if let Some(kind) = check_triggers(&state, episode, cfg) {
            trigger = Some((kind, t));
            break;
        }
        if stopped {
            break;
        }
    }
    if !stopped && trigger.is_none() {
        // step cap reached: forced termination
        stopped = true;
    }
    let mode = match selector {
        Selector::Greedy => RolloutMode::Greedy,
        Selector::Sampled { .. } => RolloutMode::Sampled,
    };
    let mut traj = Trajectory {
        episode_id: episode.id,
        steps,
        final_pose: pose,
        stopped,
        success: false,
        trigger,
        path_length,
        mode,
        rng_stream_id: stream_id,
    };
    traj.success = traj.trigger.is_none() && is_success(&traj, episode);
    Ok(traj)
}

/// Deterministic argmax rollout.
pub fn run_greedy(policy: &dyn Policy, episode: &Episode, cfg: &RolloutConfig) -> Result<Trajectory> {
    rollout(policy, episode, cfg, Selector::Greedy, None)
}

/// Temperature-sampled rollout driven by the stream `stream_id`.
pub fn run_sampled(
    policy: &dyn Policy,
    episode: &Episode,
    cfg: &RolloutConfig,
    temperature: f64,
    stream_id: u64,
) -> Result<Trajectory> {
    assert!(temperature > 0.0, "temperature must be positive");
    let selector = Selector::Sampled { temperature, rng: rng::rng_from_key(stream_id) };
    rollout(policy, episode, cfg, selector, Some(stream_id))
}

/// Stream id for the `index`-th rollout of an episode.
pub fn rollout_stream_id(run_seed: u64, episode_id: u64, index: u64) -> u64 {
    rng::hash64(&[run_seed, episode_id, index])
}
