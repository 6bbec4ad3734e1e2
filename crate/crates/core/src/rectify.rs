//! Failure pathway: roll a failed probe back to its furthest validly reached
//! reference waypoint, keep the agent's own history up to that point, and
//! supervise the oracle continuation with exponentially decaying weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{self, ProgressTracker};
use crate::policy::{self, HistoryBuilder, HistoryWindow, PolicyParams, N_ACTIONS};
use crate::rollout::{Trajectory, TrajectoryStep, TriggerKind};
use crate::world::{observe, step, Action, Episode, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressMode {
    /// Waypoint j counts only after waypoints 0..j were visited in order.
    Ordered,
    /// Furthest waypoint visited at all.
    Furthest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectConfig {
    pub decay_gamma: f64,
    pub alpha: f64,
    /// Softmax temperature of the supervised log-likelihood.
    pub temperature: f64,
    pub progress_mode: ProgressMode,
    pub visit_radius: f64,
}

impl Default for RectConfig {
    fn default() -> Self {
        Self {
            decay_gamma: 0.95,
            alpha: 1.0,
            temperature: 1.0,
            progress_mode: ProgressMode::Ordered,
            visit_radius: 0.5,
        }
    }
}

impl RectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::Config(format!("decay_gamma {} outside (0, 1]", self.decay_gamma)));
        }
        if self.temperature <= 0.0 || self.alpha < 0.0 {
            return Err(Error::Config("rect temperature must be positive and alpha non-negative".into()));
        }
        Ok(())
    }
}

/// Supervision pair: the retained own-history prefix and the oracle tokens
/// to imitate from the anchor pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RectificationDemo {
    pub episode_id: u64,
    /// Index into the probe's pose sequence (`Trajectory::poses`).
    pub anchor_step: usize,
    pub anchor_pose: Pose,
    /// Probe steps taken before reaching the anchor, verbatim.
    pub retained_prefix: Vec<TrajectoryStep>,
    pub oracle_actions: Vec<Action>,
    pub weights: Vec<f64>,
}

impl RectificationDemo {
    /// Full action sequence from the episode start: prefix then oracle tokens.
    pub fn replay_actions(&self) -> Vec<Action> {
        self.retained_prefix.iter().map(|s| s.action).chain(self.oracle_actions.iter().copied()).collect()
    }
}

/// w_t = γ^t for t in 0..n
pub fn decay_weights(n: usize, gamma: f64) -> Vec<f64> {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    let mut w = Vec::with_capacity(n);
    let mut cur = 1.0;
    for _ in 0..n {
        w.push(cur);
        cur *= gamma;
    }
    w
}

/// Rollback point of a failed probe: the first arrival at the furthest
/// reference waypoint reached, or the start pose if none was.
pub fn find_anchor(probe: &Trajectory, episode: &Episode, cfg: &RectConfig) -> Result<(usize, Pose)> {
    if probe.trigger.is_none() && probe.success {
        return Err(Error::NotAFailure);
    }
    let poses = probe.poses();
    if probe.trigger_kind() == Some(TriggerKind::ForcedStop) {
        let last = poses.len() - 1;
        return Ok((last, poses[last]));
    }
    let wps = &episode.reference_waypoints;
    let cell_size = episode.world.cell_size;
    match cfg.progress_mode {
        ProgressMode::Ordered => {
            let mut tracker = ProgressTracker::new(cfg.visit_radius, cell_size);
            let mut best: Option<(i64, usize)> = None;
            for (t, p) in poses.iter().enumerate() {
                if tracker.observe(p.cell(), wps) {
                    best = Some((tracker.index, t));
                }
            }
            Ok(best.map_or((0, episode.start), |(_, t)| (t, poses[t])))
        }
        ProgressMode::Furthest => {
            let positions: Vec<_> = poses.iter().map(Pose::cell).collect();
            let j = oracle::furthest_visited_index(&positions, wps, cfg.visit_radius, cell_size);
            if j < 0 {
                return Ok((0, episode.start));
            }
            let w = wps[j as usize];
            let t = positions
                .iter()
                .position(|&c| {
                    f64::from(c.0 - w.0).hypot(f64::from(c.1 - w.1)) * cell_size <= cfg.visit_radius
                })
                .expect("furthest waypoint was visited");
            Ok((t, poses[t]))
        }
    }
}

/// Builds the demo from an explicit rollback point. `anchor_step` indexes the
/// probe's pose sequence; the steps before it are retained.
pub fn demo_from_state(
    probe: &Trajectory,
    episode: &Episode,
    anchor_step: usize,
    anchor_pose: Pose,
    cfg: &RectConfig,
) -> Result<RectificationDemo> {
    let plan = oracle::plan(&episode.world, anchor_pose, episode.goal, episode.goal_radius)?;
    let weights = decay_weights(plan.actions.len(), cfg.decay_gamma);
    Ok(RectificationDemo {
        episode_id: episode.id,
        anchor_step,
        anchor_pose,
        retained_prefix: probe.steps[..anchor_step].to_vec(),
        oracle_actions: plan.actions,
        weights,
    })
}

/// Anchor identification, valid-context retention and oracle completion.
pub fn synthesize_demo(probe: &Trajectory, episode: &Episode, cfg: &RectConfig) -> Result<RectificationDemo> {
    let (anchor_step, anchor_pose) = find_anchor(probe, episode, cfg)?;
    demo_from_state(probe, episode, anchor_step, anchor_pose, cfg)
}

/// Teacher-forcing demo on the reference plan from the start.
pub fn reference_demo(episode: &Episode, gamma: f64) -> RectificationDemo {
    let actions = episode.reference_actions();
    RectificationDemo {
        episode_id: episode.id,
        anchor_step: 0,
        anchor_pose: episode.start,
        retained_prefix: Vec::new(),
        weights: decay_weights(actions.len(), gamma),
        oracle_actions: actions,
    }
}

/// History windows the policy sees at each oracle token: the retained prefix
/// is replayed verbatim, then the oracle actions are executed from the anchor.
pub fn demo_windows(episode: &Episode, demo: &RectificationDemo, window: usize, obs_k: usize) -> Vec<(HistoryWindow, Pose)> {
    let mut history = HistoryBuilder::new(window, obs_k);
    let mut pose = episode.start;
    for s in &demo.retained_prefix {
        history.commit(s.observation.clone(), s.action);
        pose = step(&episode.world, pose, s.action);
    }
    debug_assert_eq!(pose, demo.anchor_pose);
    let mut pose = demo.anchor_pose;
    let mut out = Vec::with_capacity(demo.oracle_actions.len());
    for &a in &demo.oracle_actions {
        let obs = observe(&episode.world, pose, obs_k);
        out.push((history.window(&obs), pose));
        history.commit(obs, a);
        pose = step(&episode.world, pose, a);
    }
    out
}

#[derive(Debug, Clone)]
pub struct RectOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// loss = −α Σ_t w_t log π_θ(a*_t | H_anchor, a*_<t)
pub fn rect_loss_and_grad(
    params: &PolicyParams,
    demo: &RectificationDemo,
    episode: &Episode,
    cfg: &RectConfig,
) -> Result<RectOutput> {
    if demo.weights.len() != demo.oracle_actions.len() {
        return Err(Error::DimensionMismatch { expected: demo.oracle_actions.len(), got: demo.weights.len() });
    }
    let pc = &params.config;
    let windows = demo_windows(episode, demo, pc.window, pc.obs_k);
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for ((window, _), (&a, &w)) in windows.iter().zip(demo.oracle_actions.iter().zip(&demo.weights)) {
        let pass = policy::evaluate(params, &episode.instruction, window)?;
        let dist = policy::action_dist(&pass.logits, cfg.temperature);
        let logp = dist.log_prob(a);
        loss -= cfg.alpha * w * logp;
        let mut dlogits = [0.0; N_ACTIONS];
        for (k, d) in dlogits.iter_mut().enumerate() {
            let onehot = if k == a.index() { 1.0 } else { 0.0 };
            *d = -cfg.alpha * w * (onehot - dist.probs[k]) / cfg.temperature;
        }
        policy::backward(params, &episode.instruction, window, &pass, &dlogits, &mut grad);
    }
    Ok(RectOutput { loss, grad })
}
