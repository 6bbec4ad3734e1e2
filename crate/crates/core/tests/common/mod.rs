#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use budnav_core::oracle;
use budnav_core::policy::{HistoryWindow, PolicyConfig, PolicyParams, N_ACTIONS};
use budnav_core::rng::{self, StreamRng};
use budnav_core::world::{generate_episode, generate_world};
use budnav_core::{Action, Episode, EpisodeParams, GridWorld, InstructionToken, Observation, Pose, WorldParams};
use budnav_core::{Policy, Result};
use rand::Rng;

pub fn small_cfg() -> PolicyConfig {
    PolicyConfig { vocab: 8, obs_k: 3, d_embed: 3, d_obs: 2, d_act: 2, d_hidden: 5, window: 3 }
}

pub fn world(seed: u64, width: usize, height: usize, density: f64) -> GridWorld {
    let p = WorldParams { width, height, obstacle_density: density, ..WorldParams::default() };
    generate_world(seed, &p).expect("world")
}

/// Seeded episode on a default-sized world; retries until one exists.
pub fn episode(seed: u64, density: f64) -> Episode {
    episode_in(seed, 12, 12, density, 6.0)
}

pub fn episode_in(seed: u64, width: usize, height: usize, density: f64, min_len: f64) -> Episode {
    let ep = EpisodeParams { min_episode_length: min_len, ..EpisodeParams::default() };
    for attempt in 0.. {
        let w = world(rng::hash64(&[seed, attempt]), width, height, density);
        if let Ok(e) = generate_episode(Arc::new(w), seed, seed, &ep) {
            return e;
        }
    }
    unreachable!()
}

/// Initialized parameters with every entry scaled by `scale`, so logits
/// are far from uniform.
pub fn params(cfg: PolicyConfig, seed: u64, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::init(cfg, &mut rng::stream(seed, "test-params", &[]));
    p.data.iter_mut().for_each(|v| *v *= scale);
    p
}

pub fn random_window(cfg: &PolicyConfig, r: &mut StreamRng) -> HistoryWindow {
    let slots = (0..cfg.window)
        .map(|_| {
            let cells = (0..cfg.obs_k * cfg.obs_k).map(|_| u8::from(r.random_bool(0.3))).collect();
            (Observation { k: cfg.obs_k, cells }, Action::from_index(r.random_range(0..N_ACTIONS + 1)))
        })
        .collect();
    HistoryWindow { slots }
}

pub fn random_instruction(max_run: u32, r: &mut StreamRng) -> Vec<InstructionToken> {
    let n = r.random_range(1..6);
    (0..n)
        .map(|_| match r.random_range(0..3) {
            0 => InstructionToken::Left,
            1 => InstructionToken::Right,
            _ => InstructionToken::Fwd(r.random_range(1..=max_run)),
        })
        .chain(std::iter::once(InstructionToken::StopAtGoal))
        .collect()
}

fn one_hot(a: Action) -> [f64; N_ACTIONS] {
    let mut l = [-20.0; N_ACTIONS];
    l[a.index()] = 20.0;
    l
}

/// Plays a fixed action list, then repeats the last action.
pub struct Scripted {
    pub actions: Vec<Action>,
    next: Mutex<usize>,
}

impl Scripted {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, next: Mutex::new(0) }
    }
}

impl Policy for Scripted {
    fn history_shape(&self) -> (usize, usize) {
        (3, 3)
    }

    fn logits(&self, _: &Episode, _: Pose, _: &HistoryWindow) -> Result<[f64; N_ACTIONS]> {
        let mut i = self.next.lock().unwrap();
        let a = self.actions[(*i).min(self.actions.len() - 1)];
        *i += 1;
        Ok(one_hot(a))
    }
}

pub struct Constant(pub Action);

impl Policy for Constant {
    fn history_shape(&self) -> (usize, usize) {
        (3, 3)
    }

    fn logits(&self, _: &Episode, _: Pose, _: &HistoryWindow) -> Result<[f64; N_ACTIONS]> {
        Ok(one_hot(self.0))
    }
}

/// Follows the oracle but takes a random action with probability `noise`.
pub struct NoisyOracle {
    pub noise: f64,
    rng: Mutex<StreamRng>,
}

impl NoisyOracle {
    pub fn new(noise: f64, seed: u64) -> Self {
        Self { noise, rng: Mutex::new(rng::stream(seed, "noisy-oracle", &[])) }
    }
}

impl Policy for NoisyOracle {
    fn history_shape(&self) -> (usize, usize) {
        (3, 3)
    }

    fn logits(&self, ep: &Episode, pose: Pose, _: &HistoryWindow) -> Result<[f64; N_ACTIONS]> {
        let mut r = self.rng.lock().unwrap();
        if r.random_bool(self.noise) {
            return Ok(one_hot(Action::ALL[r.random_range(0..3)]));
        }
        let plan = oracle::plan(&ep.world, pose, ep.goal, ep.goal_radius)?;
        Ok(one_hot(plan.actions[0]))
    }
}

/// max |a - b| / max(|a|, |b|, floor)
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
