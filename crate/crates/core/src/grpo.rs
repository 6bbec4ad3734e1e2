//! Proficiency pathway: SPL-shaped trajectory reward, group-relative
//! advantages and the clipped surrogate objective with a KL penalty toward
//! the reference policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{self, log_softmax, PolicyParams, PolicySnapshot, N_ACTIONS};
use crate::rollout::Trajectory;
use crate::world::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub c_succ: f64,
    pub lambda: f64,
    pub c_dist: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { c_succ: 2.0, lambda: 1.0, c_dist: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub adv_epsilon: f64,
    pub inner_epochs: usize,
    /// Sampling temperature; ratios and KL are taken at this temperature.
    pub temperature: f64,
    /// Population (true) or sample standard deviation in the advantage.
    pub population_std: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            adv_epsilon: 1e-8,
            inner_epochs: 1,
            temperature: 0.4,
            population_std: true,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!("clip_epsilon {} outside (0, 1)", self.clip_epsilon)));
        }
        if self.kl_beta < 0.0 || self.temperature <= 0.0 || self.inner_epochs == 0 {
            return Err(Error::Config("kl_beta >= 0, temperature > 0 and inner_epochs >= 1 required".into()));
        }
        Ok(())
    }
}

/// Success weighted by path length, in [0, 1].
pub fn spl(traj: &Trajectory, episode: &Episode) -> f64 {
    if !traj.success {
        return 0.0;
    }
    let l_geo = episode.geodesic_length();
    let l_traj = traj.path_length;
    if l_traj == 0.0 || l_geo == 0.0 {
        return 1.0;
    }
    l_geo / l_geo.max(l_traj)
}

/// Geodesic distance from the final position to the goal; falls back to the
/// straight-line distance if the goal is unreachable from there.
pub fn remaining_distance(traj: &Trajectory, episode: &Episode) -> f64 {
    let cell = traj.final_pose.cell();
    let d = episode.goal_field.at(cell);
    if d.is_finite() {
        d
    } else {
        log::warn!("episode {}: final cell {:?} disconnected from goal, using straight-line distance", episode.id, cell);
        episode.goal_distance(cell)
    }
}

/// R = 1[success]·(c_succ + λ·SPL) − c_dist·d_remain
pub fn reward(traj: &Trajectory, episode: &Episode, cfg: &RewardConfig) -> f64 {
    let bonus = if traj.success { cfg.c_succ + cfg.lambda * spl(traj, episode) } else { 0.0 };
    bonus - cfg.c_dist * remaining_distance(traj, episode)
}

/// A_i = (R_i − mean) / (std + adv_epsilon)
pub fn group_advantages(rewards: &[f64], adv_epsilon: f64, population_std: bool) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    // exact zeros even when the rounded mean differs from the common value
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let ss: f64 = rewards.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = if population_std { g as f64 } else { (g - 1) as f64 };
    let std = (ss / denom).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + adv_epsilon)).collect())
}

#[derive(Debug, Clone)]
pub struct RolloutGroup {
    /// Index 0 is the greedy probe.
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub snapshot_old: PolicySnapshot,
}

impl RolloutGroup {
    pub fn new(
        trajectories: Vec<Trajectory>,
        episode: &Episode,
        snapshot_old: PolicySnapshot,
        reward_cfg: &RewardConfig,
        cfg: &GrpoConfig,
    ) -> Result<Self> {
        let rewards: Vec<f64> = trajectories.iter().map(|t| reward(t, episode, reward_cfg)).collect();
        let advantages = group_advantages(&rewards, cfg.adv_epsilon, cfg.population_std)?;
        Ok(Self { trajectories, rewards, advantages, snapshot_old })
    }

    pub fn env_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct GrpoOutput {
    /// −J
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
}

/// Per-step clipped surrogate `min(ρA, clip(ρ)A)` and whether the gradient
/// flows through ρ (it does not when the clipped branch is selected).
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// loss = −(1/G) Σ_i (1/T_i) Σ_t [min(ρA_i, clip(ρ)A_i) − β·KL(π_θ ‖ π_ref)]
/// and its exact gradient.
pub fn grpo_loss_and_grad(
    params: &PolicyParams,
    group: &RolloutGroup,
    episode: &Episode,
    snapshot_ref: &PolicySnapshot,
    cfg: &GrpoConfig,
) -> Result<GrpoOutput> {
    let g = group.trajectories.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let temp = cfg.temperature;
    let instr = &episode.instruction;
    let mut grad = vec![0.0; params.len()];
    let mut objective = 0.0;
    let (mut ratio_sum, mut clipped, mut kl_sum, mut n_steps) = (0.0, 0usize, 0.0, 0usize);

    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        let t_len = traj.steps.len();
        if t_len == 0 {
            continue;
        }
        let scale = 1.0 / (g as f64 * t_len as f64);
        for step in &traj.steps {
            let old = policy::evaluate(group.snapshot_old.params(), instr, &step.window)?;
            let drift = old
                .logits
                .iter()
                .zip(&step.logits)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if drift > 1e-9 {
                return Err(Error::SnapshotMismatch(drift));
            }
            let pass = policy::evaluate(params, instr, &step.window)?;
            let reference = policy::evaluate(snapshot_ref.params(), instr, &step.window)?;

            let logp = log_softmax(&pass.logits, temp);
            let logp_old = log_softmax(&old.logits, temp);
            let logq = log_softmax(&reference.logits, temp);
            let p = logp.map(f64::exp);
            let a = step.action.index();

            let ratio = (logp[a] - logp_old[a]).exp();
            let (surrogate, active) = clipped_surrogate(ratio, adv, cfg.clip_epsilon);
            let (log_q_floored, tracks) = policy::floored_ref_logprobs(&logp, &logq);
            let kl: f64 = (0..N_ACTIONS).map(|k| p[k] * (logp[k] - log_q_floored[k])).sum();
            objective += scale * (surrogate - cfg.kl_beta * kl);
            // mass on actions whose floored reference follows log p
            let tracked: f64 = (0..N_ACTIONS).filter(|&k| tracks[k]).map(|k| p[k]).sum();

            // d(-term)/d logits, with d/dz = (d/dlogits) * T
            let mut dlogits = [0.0; N_ACTIONS];
            for k in 0..N_ACTIONS {
                let onehot = if k == a { 1.0 } else { 0.0 };
                let d_surr = if active { adv * ratio * (onehot - p[k]) } else { 0.0 };
                let own = if tracks[k] { 1.0 } else { 0.0 };
                let d_kl = p[k] * (logp[k] - log_q_floored[k] - kl) + p[k] * (tracked - own);
                dlogits[k] = -scale * (d_surr - cfg.kl_beta * d_kl) / temp;
            }
            policy::backward(params, instr, &step.window, &pass, &dlogits, &mut grad);

            ratio_sum += ratio;
            kl_sum += kl;
            clipped += usize::from(!active);
            n_steps += 1;
        }
    }
    let n = n_steps.max(1) as f64;
    Ok(GrpoOutput {
        loss: -objective,
        grad,
        mean_ratio: ratio_sum / n,
        clip_fraction: clipped as f64 / n,
        mean_kl: kl_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn symmetric_pair() {
        let a = group_advantages(&[1.0, 3.0], 1e-8, true).unwrap();
        assert!(close(&a, &[-1.0, 1.0], 1e-7));
    }

    #[test]
    fn zero_variance_gives_zero_advantages() {
        let a = group_advantages(&[2.5; 4], 1e-8, true).unwrap();
        assert_eq!(a, vec![0.0; 4]);
    }

    #[test]
    fn one_outlier_group() {
        // mean 1, population std sqrt(3)
        let a = group_advantages(&[0.0, 0.0, 0.0, 4.0], 1e-8, true).unwrap();
        let s = 3f64.sqrt();
        assert!(close(&a, &[-1.0 / s, -1.0 / s, -1.0 / s, 3.0 / s], 1e-7));
        assert!((a[0] + 0.577_350_269).abs() < 1e-7);
        assert!((a[3] - 1.732_050_807).abs() < 1e-7);
    }

    #[test]
    fn group_too_small() {
        assert_eq!(group_advantages(&[1.0], 1e-8, true), Err(Error::GroupTooSmall(1)));
    }

    #[test]
    fn clip_examples() {
        let (v, active) = clipped_surrogate(1.5, 2.0, 0.2);
        assert!((v - 1.2 * 2.0).abs() < 1e-15);
        assert!(!active);
        let (v, active) = clipped_surrogate(1.5, -2.0, 0.2);
        assert_eq!(v, -3.0);
        assert!(active);
        let (v, active) = clipped_surrogate(0.5, -2.0, 0.2);
        assert!((v + 1.6).abs() < 1e-15);
        assert!(!active);
        assert_eq!(clipped_surrogate(1.1, 1.0, 0.2), (1.1, true));
    }

    #[test]
    fn surrogate_pessimism_by_region() {
        for &ratio in &[0.1, 0.79, 0.8, 0.95, 1.0, 1.1, 1.2, 1.21, 3.0] {
            for &adv in &[-2.0, -0.5, 0.0, 0.5, 2.0] {
                let (s, _) = clipped_surrogate(ratio, adv, 0.2);
                let clip_val = ratio.clamp(0.8, 1.2) * adv;
                assert!(s <= ratio * adv + 1e-12);
                assert!(s <= clip_val + 1e-12);
            }
        }
    }
}
