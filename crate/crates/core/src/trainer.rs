//! Behavior-cloning pretraining, greedy-probe routing between the GRPO and
//! rectification pathways, the DAgger and teacher-forcing comparators, and
//! the outer training loop with periodic held-out evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::AblationVariant;
use crate::error::{Error, Result};
use crate::grpo::{self, GrpoConfig, RewardConfig, RolloutGroup};
use crate::metrics::{self, MetricsReport};
use crate::optim::{adamw_update, AdamWConfig, OptimizerState};
use crate::policy::{PolicyConfig, PolicyParams, PolicySnapshot, SnapshotRole};
use crate::rectify::{self, RectConfig, RectificationDemo};
use crate::rng;
use crate::rollout::{self, RolloutConfig, Trajectory, TriggerKind};
use crate::world::Episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub run_seed: u64,
    pub variant: AblationVariant,
    pub optim: AdamWConfig,
    /// Learning rate of the behavior-cloning phase.
    pub pretrain_lr: f64,
    pub grpo: GrpoConfig,
    pub rect: RectConfig,
    pub reward: RewardConfig,
    pub rollout: RolloutConfig,
    pub pretrain_episodes: usize,
    pub train_episodes: usize,
    pub eval_every: usize,
    /// Episodes whose gradients are summed into one optimizer step.
    pub batch_episodes: usize,
    pub early_stop: bool,
    pub early_stop_window: usize,
    pub early_stop_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            run_seed: 0,
            variant: AblationVariant::Full,
            optim: AdamWConfig::default(),
            pretrain_lr: 3e-3,
            grpo: GrpoConfig::default(),
            rect: RectConfig::default(),
            reward: RewardConfig::default(),
            rollout: RolloutConfig::default(),
            pretrain_episodes: 2000,
            train_episodes: 2000,
            eval_every: 500,
            batch_episodes: 1,
            early_stop: false,
            early_stop_window: 5,
            early_stop_min_delta: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optim.lr > 0.0 && self.pretrain_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_episodes == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_episodes and eval_every must be at least 1".into()));
        }
        if self.rect.visit_radius != self.rollout.visit_radius {
            return Err(Error::Config("rect.visit_radius must equal rollout.visit_radius".into()));
        }
        self.grpo.validate()?;
        self.rect.validate()
    }

    /// Supervision settings for teacher forcing on reference plans.
    pub fn teacher_rect(&self) -> RectConfig {
        RectConfig { decay_gamma: 1.0, alpha: 1.0, ..self.rect }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Grpo,
    Rect,
    /// Teacher forcing on the reference plan.
    Teacher,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Grpo => "grpo",
            Route::Rect => "rect",
            Route::Teacher => "teacher",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub episode_id: u64,
    pub route: Route,
    pub probe_success: bool,
    /// Policy rollouts executed, probe included.
    pub rollouts_used: usize,
    pub stochastic_rollouts: usize,
    pub env_steps_used: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub trigger: Option<TriggerKind>,
    /// False when the variant disables the selected pathway.
    pub applied: bool,
}

/// What the episode's loss was computed from.
#[derive(Debug, Clone)]
pub enum Supervision {
    Group(Box<RolloutGroup>),
    Demo(Box<RectificationDemo>),
    Skipped,
}

#[derive(Debug, Clone)]
pub struct EpisodeUpdate {
    pub report: UpdateReport,
    pub grad: Vec<f64>,
    pub probe: Option<Trajectory>,
    pub supervision: Supervision,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Probe {
    traj: Trajectory,
    success: bool,
}

fn run_probe(params: &PolicyParams, episode: &Episode, cfg: &TrainConfig) -> Result<Probe> {
    let traj = rollout::run_greedy(params, episode, &cfg.rollout)?;
    let success = traj.success && traj.trigger.is_none();
    Ok(Probe { traj, success })
}

fn demo_update(
    params: &PolicyParams,
    episode: &Episode,
    demo: RectificationDemo,
    rect: &RectConfig,
    route: Route,
    probe: Option<Probe>,
) -> Result<EpisodeUpdate> {
    let out = rectify::rect_loss_and_grad(params, &demo, episode, rect)?;
    let (probe_success, trigger, steps, rollouts) = match &probe {
        Some(p) => (p.success, p.traj.trigger_kind(), p.traj.steps.len(), 1),
        None => (false, None, 0, 0),
    };
    Ok(EpisodeUpdate {
        report: UpdateReport {
            episode_id: episode.id,
            route,
            probe_success,
            rollouts_used: rollouts,
            stochastic_rollouts: 0,
            env_steps_used: steps,
            loss: out.loss,
            grad_norm: norm(&out.grad),
            trigger,
            applied: true,
        },
        grad: out.grad,
        probe: probe.map(|p| p.traj),
        supervision: Supervision::Demo(Box::new(demo)),
    })
}

fn skipped(params: &PolicyParams, episode: &Episode, route: Route, probe: Probe) -> EpisodeUpdate {
    EpisodeUpdate {
        report: UpdateReport {
            episode_id: episode.id,
            route,
            probe_success: probe.success,
            rollouts_used: 1,
            stochastic_rollouts: 0,
            env_steps_used: probe.traj.steps.len(),
            loss: 0.0,
            grad_norm: 0.0,
            trigger: probe.traj.trigger_kind(),
            applied: false,
        },
        grad: vec![0.0; params.len()],
        probe: Some(probe.traj),
        supervision: Supervision::Skipped,
    }
}

/// Samples the G−1 stochastic companions of a successful probe.
pub fn sample_group(
    params: &PolicyParams,
    episode: &Episode,
    probe: Trajectory,
    cfg: &TrainConfig,
    visit: u64,
) -> Result<RolloutGroup> {
    let g = cfg.grpo.group_size as u64;
    let mut trajectories = Vec::with_capacity(cfg.grpo.group_size);
    trajectories.push(probe);
    for i in 1..g {
        let id = rollout::rollout_stream_id(cfg.run_seed, episode.id, visit * g + i);
        trajectories.push(rollout::run_sampled(params, episode, &cfg.rollout, cfg.grpo.temperature, id)?);
    }
    let old = PolicySnapshot::new(params, SnapshotRole::Old);
    RolloutGroup::new(trajectories, episode, old, &cfg.reward, &cfg.grpo)
}

/// Routed gradient for one episode at the current parameters: a successful
/// probe opens the GRPO pathway, anything else the rectification pathway.
/// Exactly one of the two losses contributes.
pub fn routed_update(
    params: &PolicyParams,
    episode: &Episode,
    reference: &PolicySnapshot,
    cfg: &TrainConfig,
    visit: u64,
) -> Result<EpisodeUpdate> {
    let probe = run_probe(params, episode, cfg)?;
    let variant = if cfg.variant.is_routed() { cfg.variant } else { AblationVariant::Full };
    if probe.success {
        if !variant.grpo_enabled() {
            return Ok(skipped(params, episode, Route::Grpo, probe));
        }
        let group = sample_group(params, episode, probe.traj.clone(), cfg, visit)?;
        let out = grpo::grpo_loss_and_grad(params, &group, episode, reference, &cfg.grpo)?;
        Ok(EpisodeUpdate {
            report: UpdateReport {
                episode_id: episode.id,
                route: Route::Grpo,
                probe_success: true,
                rollouts_used: group.trajectories.len(),
                stochastic_rollouts: group.trajectories.len() - 1,
                env_steps_used: group.env_steps(),
                loss: out.loss,
                grad_norm: norm(&out.grad),
                trigger: None,
                applied: true,
            },
            grad: out.grad,
            probe: Some(probe.traj),
            supervision: Supervision::Group(Box::new(group)),
        })
    } else {
        if !variant.rect_enabled() {
            return Ok(skipped(params, episode, Route::Rect, probe));
        }
        let demo = rectify::synthesize_demo(&probe.traj, episode, &cfg.rect)?;
        demo_update(params, episode, demo, &cfg.rect, Route::Rect, Some(probe))
    }
}

/// DAgger comparator: same probe and triggers, but a failure is corrected by
/// planning from the error state and conditioning on the whole erroneous
/// history. Successful probes fall back to teacher forcing.
pub fn dagger_update(params: &PolicyParams, episode: &Episode, cfg: &TrainConfig) -> Result<EpisodeUpdate> {
    let probe = run_probe(params, episode, cfg)?;
    if probe.success {
        let demo = rectify::reference_demo(episode, 1.0);
        return demo_update(params, episode, demo, &cfg.teacher_rect(), Route::Teacher, Some(probe));
    }
    let n = probe.traj.steps.len();
    let demo = rectify::demo_from_state(&probe.traj, episode, n, probe.traj.final_pose, &cfg.rect)?;
    demo_update(params, episode, demo, &cfg.rect, Route::Rect, Some(probe))
}

/// Teacher forcing on the reference plan (no rollouts).
pub fn teacher_update(params: &PolicyParams, episode: &Episode, cfg: &TrainConfig) -> Result<EpisodeUpdate> {
    let demo = rectify::reference_demo(episode, 1.0);
    demo_update(params, episode, demo, &cfg.teacher_rect(), Route::Teacher, None)
}

/// The variant's per-episode update at the current parameters.
pub fn episode_update(
    params: &PolicyParams,
    episode: &Episode,
    reference: &PolicySnapshot,
    cfg: &TrainConfig,
    visit: u64,
) -> Result<EpisodeUpdate> {
    match cfg.variant {
        AblationVariant::Bc => teacher_update(params, episode, cfg),
        AblationVariant::Dagger => dagger_update(params, episode, cfg),
        _ => routed_update(params, episode, reference, cfg, visit),
    }
}

/// Extra GRPO epochs reuse the recorded group and its old snapshot.
fn apply_updates(
    params: &mut PolicyParams,
    opt: &mut OptimizerState,
    episodes: &[&Episode],
    updates: &[EpisodeUpdate],
    reference: &PolicySnapshot,
    cfg: &TrainConfig,
    hyper: &AdamWConfig,
) -> Result<()> {
    let mut grad = vec![0.0; params.len()];
    let mut any = false;
    for u in updates.iter().filter(|u| u.report.applied) {
        any = true;
        grad.iter_mut().zip(&u.grad).for_each(|(g, d)| *g += d);
    }
    if !any {
        return Ok(());
    }
    adamw_update(&mut params.data, &grad, opt, hyper)?;
    for _ in 1..cfg.grpo.inner_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut any = false;
        for (ep, u) in episodes.iter().zip(updates) {
            if let (true, Supervision::Group(group)) = (u.report.applied, &u.supervision) {
                let out = grpo::grpo_loss_and_grad(params, group, ep, reference, &cfg.grpo)?;
                grad.iter_mut().zip(&out.grad).for_each(|(g, d)| *g += d);
                any = true;
            }
        }
        if any {
            adamw_update(&mut params.data, &grad, opt, hyper)?;
        }
    }
    Ok(())
}

/// One routed update on a single episode, applied with AdamW.
pub fn gro_step(
    params: &mut PolicyParams,
    opt: &mut OptimizerState,
    episode: &Episode,
    reference: &PolicySnapshot,
    cfg: &TrainConfig,
    visit: u64,
) -> Result<EpisodeUpdate> {
    let u = routed_update(params, episode, reference, cfg, visit)?;
    apply_updates(params, opt, &[episode], std::slice::from_ref(&u), reference, cfg, &cfg.optim)?;
    Ok(u)
}

pub fn dagger_step(
    params: &mut PolicyParams,
    opt: &mut OptimizerState,
    episode: &Episode,
    cfg: &TrainConfig,
) -> Result<EpisodeUpdate> {
    let u = dagger_update(params, episode, cfg)?;
    adamw_update(&mut params.data, &u.grad, opt, &cfg.optim)?;
    Ok(u)
}

/// Seeded visiting order over `n` episodes: consecutive shuffled passes,
/// each entry paired with its pass number.
pub fn episode_stream(run_seed: u64, purpose: &str, n: usize, len: usize) -> Vec<(usize, u64)> {
    assert!(n > 0 || len == 0, "episode stream over an empty pool");
    let mut out = Vec::with_capacity(len);
    let mut pass = 0u64;
    while out.len() < len {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(run_seed, purpose, &[pass]));
        out.extend(order.into_iter().take(len - out.len()).map(|i| (i, pass)));
        pass += 1;
    }
    out
}

pub fn init_params(config: PolicyConfig, run_seed: u64) -> PolicyParams {
    PolicyParams::init(config, &mut rng::stream(run_seed, "policy-init", &[]))
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: PolicyParams,
    pub reference: PolicySnapshot,
    /// Mean supervised loss of each optimizer step.
    pub losses: Vec<f64>,
}

/// Teacher forcing on reference plans for `cfg.pretrain_episodes` episodes.
/// The result doubles as the frozen reference policy.
pub fn pretrain_bc(params: &PolicyParams, episodes: &[Episode], cfg: &TrainConfig) -> Result<PretrainOutput> {
    let mut params = params.clone();
    let mut opt = OptimizerState::new(params.len());
    let hyper = AdamWConfig { lr: cfg.pretrain_lr, ..cfg.optim };
    let mut losses = Vec::new();
    if cfg.pretrain_episodes > 0 && episodes.is_empty() {
        return Err(Error::Config("pretraining needs at least one episode".into()));
    }
    let stream = episode_stream(cfg.run_seed, "pretrain-stream", episodes.len(), cfg.pretrain_episodes);
    for chunk in stream.chunks(cfg.batch_episodes) {
        let updates: Vec<EpisodeUpdate> = chunk
            .par_iter()
            .map(|&(i, _)| teacher_update(&params, &episodes[i], cfg))
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; params.len()];
        for u in &updates {
            grad.iter_mut().zip(&u.grad).for_each(|(g, d)| *g += d);
        }
        losses.push(updates.iter().map(|u| u.report.loss).sum::<f64>() / updates.len() as f64);
        adamw_update(&mut params.data, &grad, &mut opt, &hyper)?;
    }
    let reference = PolicySnapshot::new(&params, SnapshotRole::Ref);
    Ok(PretrainOutput { params, reference, losses })
}

pub const CSV_HEADER: &str = "step,n,sr,spl,osr,ne,ndtw,route_grpo_frac,env_steps_total";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Training episodes processed so far.
    pub step: usize,
    pub report: MetricsReport,
    /// Share of GRPO routes among the updates since the previous row.
    pub route_grpo_frac: f64,
    pub env_steps_total: usize,
}

impl EvalRow {
    pub fn csv_line(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{:.1},{:.1},{:.1},{:.2},{:.1},{:.3},{}",
            self.step, r.n, r.sr, r.spl, r.osr, r.ne, r.ndtw, self.route_grpo_frac, self.env_steps_total
        )
    }
}

pub fn metrics_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Cost accounting over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTotals {
    pub episodes: usize,
    pub grpo_routes: usize,
    pub rect_routes: usize,
    pub teacher_routes: usize,
    pub skipped: usize,
    pub rollouts: usize,
    pub stochastic_rollouts: usize,
    /// Stochastic rollouts spent on episodes routed to rectification.
    pub hard_stochastic_rollouts: usize,
    pub env_steps: usize,
}

impl CostTotals {
    pub fn add(&mut self, r: &UpdateReport) {
        self.episodes += 1;
        match r.route {
            Route::Grpo => self.grpo_routes += 1,
            Route::Rect => {
                self.rect_routes += 1;
                self.hard_stochastic_rollouts += r.stochastic_rollouts;
            }
            Route::Teacher => self.teacher_routes += 1,
        }
        self.skipped += usize::from(!r.applied);
        self.rollouts += r.rollouts_used;
        self.stochastic_rollouts += r.stochastic_rollouts;
        self.env_steps += r.env_steps_used;
    }

    pub fn env_steps_per_episode(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.env_steps as f64 / self.episodes as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// BC-pretrained parameters, also the reference policy.
    pub pretrained: PolicyParams,
    pub params: PolicyParams,
    pub rows: Vec<EvalRow>,
    pub reports: Vec<UpdateReport>,
    pub totals: CostTotals,
    pub stopped_early: bool,
}

fn plateaued(rows: &[EvalRow], window: usize, min_delta: f64) -> bool {
    if window == 0 || rows.len() <= window {
        return false;
    }
    let (before, recent) = rows.split_at(rows.len() - window);
    let best_before = before.iter().map(|r| r.report.sr).fold(f64::NEG_INFINITY, f64::max);
    let best_recent = recent.iter().map(|r| r.report.sr).fold(f64::NEG_INFINITY, f64::max);
    best_recent < best_before + min_delta
}

/// Training after pretraining: the variant's updates over a seeded episode
/// stream with held-out evaluation every `eval_every` episodes (and at the
/// start and end).
pub fn finetune(
    cfg: &TrainConfig,
    pretrained: &PolicyParams,
    train_episodes: &[Episode],
    eval_episodes: &[Episode],
    on_row: &mut dyn FnMut(&EvalRow),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.train_episodes > 0 && train_episodes.is_empty() {
        return Err(Error::Config("training needs at least one episode".into()));
    }
    let reference = PolicySnapshot::new(pretrained, SnapshotRole::Ref);
    let mut params = pretrained.clone();
    let mut opt = OptimizerState::new(params.len());
    let stream = episode_stream(cfg.run_seed, "train-stream", train_episodes.len(), cfg.train_episodes);
    let mut rows = Vec::new();
    let mut reports: Vec<UpdateReport> = Vec::with_capacity(stream.len());
    let mut totals = CostTotals::default();
    let mut since_eval = (0usize, 0usize);
    let mut stopped_early = false;

    let mut record = |params: &PolicyParams, step: usize, totals: &CostTotals, since: &mut (usize, usize)| -> Result<EvalRow> {
        let eval = metrics::evaluate(params, eval_episodes, &cfg.rollout)?;
        let frac = if since.1 == 0 { 0.0 } else { since.0 as f64 / since.1 as f64 };
        *since = (0, 0);
        let row = EvalRow { step, report: eval.report, route_grpo_frac: frac, env_steps_total: totals.env_steps };
        on_row(&row);
        Ok(row)
    };
    rows.push(record(&params, 0, &totals, &mut since_eval)?);

    let mut done = 0;
    for chunk in stream.chunks(cfg.batch_episodes) {
        let updates: Vec<EpisodeUpdate> = chunk
            .par_iter()
            .map(|&(i, visit)| episode_update(&params, &train_episodes[i], &reference, cfg, visit))
            .collect::<Result<_>>()?;
        let eps: Vec<&Episode> = chunk.iter().map(|&(i, _)| &train_episodes[i]).collect();
        apply_updates(&mut params, &mut opt, &eps, &updates, &reference, cfg, &cfg.optim)?;
        for u in updates {
            totals.add(&u.report);
            since_eval.0 += usize::from(u.report.route == Route::Grpo);
            since_eval.1 += 1;
            reports.push(u.report);
        }
        let before = done;
        done += chunk.len();
        if done / cfg.eval_every > before / cfg.eval_every || done == stream.len() {
            rows.push(record(&params, done, &totals, &mut since_eval)?);
            log::info!(
                "{} step {done}: sr {:.1} spl {:.1}",
                cfg.variant,
                rows.last().unwrap().report.sr,
                rows.last().unwrap().report.spl
            );
            if cfg.early_stop && plateaued(&rows, cfg.early_stop_window, cfg.early_stop_min_delta) {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutput { pretrained: pretrained.clone(), params, rows, reports, totals, stopped_early })
}

/// Full run: seeded initialization, behavior-cloning pretraining, then
/// [`finetune`].
pub fn train(
    cfg: &TrainConfig,
    policy: PolicyConfig,
    train_episodes: &[Episode],
    eval_episodes: &[Episode],
    on_row: &mut dyn FnMut(&EvalRow),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let init = init_params(policy, cfg.run_seed);
    let pre = pretrain_bc(&init, train_episodes, cfg)?;
    finetune(cfg, &pre.params, train_episodes, eval_episodes, on_row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_covers_each_pass() {
        let s = episode_stream(7, "x", 5, 12);
        assert_eq!(s.len(), 12);
        let mut first: Vec<usize> = s[..5].iter().map(|p| p.0).collect();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert!(s[..5].iter().all(|p| p.1 == 0));
        assert!(s[5..10].iter().all(|p| p.1 == 1));
        assert_eq!(s, episode_stream(7, "x", 5, 12));
    }

    #[test]
    fn plateau_detection() {
        let row = |sr| EvalRow {
            step: 0,
            report: MetricsReport { n: 1, sr, spl: 0.0, osr: 0.0, ne: 0.0, ndtw: 0.0 },
            route_grpo_frac: 0.0,
            env_steps_total: 0,
        };
        let rows: Vec<EvalRow> = [10.0, 20.0, 20.0, 20.2, 19.0, 20.1, 20.0].iter().map(|&v| row(v)).collect();
        assert!(plateaued(&rows, 5, 0.5));
        let rows: Vec<EvalRow> = [10.0, 20.0, 20.0, 20.2, 21.0, 20.1, 20.0].iter().map(|&v| row(v)).collect();
        assert!(!plateaued(&rows, 5, 0.5));
        assert!(!plateaued(&rows[..5], 5, 0.5));
    }

    #[test]
    fn csv_formatting() {
        let r = EvalRow {
            step: 100,
            report: MetricsReport { n: 200, sr: 41.26, spl: 30.0, osr: 55.5, ne: 2.346, ndtw: 60.04 },
            route_grpo_frac: 0.5,
            env_steps_total: 1234,
        };
        assert_eq!(r.csv_line(), "100,200,41.3,30.0,55.5,2.35,60.0,0.500,1234");
    }
}
