//! History-conditioned categorical policy with hand-written backpropagation.
//!
//! The network is instruction embedding (mean-pooled) ++ K history slots of
//! (projected occupancy patch, previous-action embedding), followed by a
//! tanh hidden layer and a 4-way linear head. All parameters live in one
//! flat buffer in canonical block order so optimizers and gradient checks
//! can treat them as a single vector.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::world::{Action, InstructionToken, Observation};

pub const N_ACTIONS: usize = Action::COUNT;
/// Previous-action rows: the four actions plus "no previous action".
pub const N_PREV_ACTIONS: usize = N_ACTIONS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab: usize,
    pub obs_k: usize,
    pub d_embed: usize,
    pub d_obs: usize,
    pub d_act: usize,
    pub d_hidden: usize,
    pub window: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { vocab: 8, obs_k: 5, d_embed: 16, d_obs: 16, d_act: 8, d_hidden: 64, window: 8 }
    }
}

/// Named parameter block with its row-major shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    instr: usize,
    obs: usize,
    act: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl PolicyConfig {
    pub fn slot_dim(&self) -> usize {
        self.d_obs + self.d_act
    }

    pub fn feature_dim(&self) -> usize {
        self.d_embed + self.window * self.slot_dim()
    }

    pub fn patch_len(&self) -> usize {
        self.obs_k * self.obs_k
    }

    /// Blocks in canonical (declaration) order.
    pub fn blocks(&self) -> Vec<Block> {
        let shapes = [
            ("instr_embed", self.vocab, self.d_embed),
            ("obs_proj", self.patch_len(), self.d_obs),
            ("act_embed", N_PREV_ACTIONS, self.d_act),
            ("w1", self.feature_dim(), self.d_hidden),
            ("b1", 1, self.d_hidden),
            ("w2", self.d_hidden, N_ACTIONS),
            ("b2", 1, N_ACTIONS),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let b = Block { name, rows, cols, offset };
                offset += rows * cols;
                b
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(Block::len).sum()
    }

    fn layout(&self) -> Layout {
        let b = self.blocks();
        Layout {
            instr: b[0].offset,
            obs: b[1].offset,
            act: b[2].offset,
            w1: b[3].offset,
            b1: b[4].offset,
            w2: b[5].offset,
            b2: b[6].offset,
            total: b[6].offset + b[6].len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(config: PolicyConfig) -> Self {
        Self { config, data: vec![0.0; config.param_count()] }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for tables and weight
    /// matrices, where fan_in is the row count; zero biases.
    pub fn init(config: PolicyConfig, rng: &mut StreamRng) -> Self {
        let mut p = Self::zeros(config);
        for block in config.blocks() {
            if block.name.starts_with('b') {
                continue;
            }
            let s = 1.0 / (block.rows as f64).sqrt();
            for v in &mut p.data[block.range()] {
                *v = rng.random_range(-s..s);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.config.blocks().into_iter().find(|b| b.name == name).map(|b| &self.data[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.config.blocks().into_iter().find(|b| b.name == name)?;
        Some(&mut self.data[b.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnapshotRole {
    Old,
    Ref,
}

/// Frozen, shareable copy of the parameters.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    pub role: SnapshotRole,
    params: Arc<PolicyParams>,
}

impl PolicySnapshot {
    pub fn new(params: &PolicyParams, role: SnapshotRole) -> Self {
        Self { role, params: Arc::new(params.clone()) }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

/// The last `K` (observation, previous action) slots, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryWindow {
    pub slots: Vec<(Observation, Option<Action>)>,
}

/// Builds windows incrementally along a trajectory.
#[derive(Debug, Clone)]
pub struct HistoryBuilder {
    window: usize,
    k: usize,
    past: VecDeque<(Observation, Option<Action>)>,
    last_action: Option<Action>,
}

impl HistoryBuilder {
    pub fn new(window: usize, obs_k: usize) -> Self {
        Self { window, k: obs_k, past: VecDeque::with_capacity(window), last_action: None }
    }

    /// Window for a decision taken while observing `obs`.
    pub fn window(&self, obs: &Observation) -> HistoryWindow {
        let keep = self.window.saturating_sub(1).min(self.past.len());
        let pad = self.window - keep - 1;
        let mut slots = Vec::with_capacity(self.window);
        slots.extend((0..pad).map(|_| (Observation::zeros(self.k), None)));
        slots.extend(self.past.iter().skip(self.past.len() - keep).cloned());
        slots.push((obs.clone(), self.last_action));
        HistoryWindow { slots }
    }

    /// Records that `action` was taken while observing `obs`.
    pub fn commit(&mut self, obs: Observation, action: Action) {
        if self.window > 1 {
            if self.past.len() == self.window - 1 {
                self.past.pop_front();
            }
            self.past.push_back((obs, self.last_action));
        }
        self.last_action = Some(action);
    }
}

fn prev_row(a: Option<Action>) -> usize {
    a.map_or(N_ACTIONS, Action::index)
}

/// Feature vector for a history: mean-pooled instruction embedding followed
/// by one (projected patch, previous-action embedding) pair per slot.
pub fn featurize(params: &PolicyParams, instruction: &[InstructionToken], window: &HistoryWindow) -> Result<Vec<f64>> {
    let cfg = &params.config;
    let lay = cfg.layout();
    if window.slots.len() != cfg.window {
        return Err(Error::DimensionMismatch { expected: cfg.window, got: window.slots.len() });
    }
    let mut f = vec![0.0; cfg.feature_dim()];
    if !instruction.is_empty() {
        let scale = 1.0 / instruction.len() as f64;
        for tok in instruction {
            let id = tok.id() as usize;
            if id >= cfg.vocab {
                return Err(Error::UnknownToken(tok.id()));
            }
            let row = &params.data[lay.instr + id * cfg.d_embed..][..cfg.d_embed];
            for (fi, &e) in f[..cfg.d_embed].iter_mut().zip(row) {
                *fi += scale * e;
            }
        }
    }
    let proj = &params.data[lay.obs..lay.act];
    for (s, (obs, prev)) in window.slots.iter().enumerate() {
        if obs.cells.len() != cfg.patch_len() {
            return Err(Error::DimensionMismatch { expected: cfg.patch_len(), got: obs.cells.len() });
        }
        let base = cfg.d_embed + s * cfg.slot_dim();
        let out = &mut f[base..base + cfg.d_obs];
        for (i, &c) in obs.cells.iter().enumerate() {
            if c != 0 {
                let row = &proj[i * cfg.d_obs..][..cfg.d_obs];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += w;
                }
            }
        }
        let emb = &params.data[lay.act + prev_row(*prev) * cfg.d_act..][..cfg.d_act];
        f[base + cfg.d_obs..base + cfg.slot_dim()].copy_from_slice(emb);
    }
    Ok(f)
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: [f64; N_ACTIONS],
}

/// logits = W2ᵀ tanh(W1ᵀ x + b1) + b2
pub fn forward(params: &PolicyParams, features: &[f64]) -> Result<ForwardPass> {
    let cfg = &params.config;
    let lay = cfg.layout();
    let fd = cfg.feature_dim();
    if features.len() != fd {
        return Err(Error::DimensionMismatch { expected: fd, got: features.len() });
    }
    let dh = cfg.d_hidden;
    let mut pre = params.data[lay.b1..lay.b1 + dh].to_vec();
    let w1 = &params.data[lay.w1..lay.b1];
    for (i, &x) in features.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &w1[i * dh..][..dh];
        for (p, &w) in pre.iter_mut().zip(row) {
            *p += x * w;
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
    let mut logits = [0.0; N_ACTIONS];
    logits.copy_from_slice(&params.data[lay.b2..lay.b2 + N_ACTIONS]);
    let w2 = &params.data[lay.w2..lay.b2];
    for (j, &h) in hidden.iter().enumerate() {
        for (a, l) in logits.iter_mut().enumerate() {
            *l += h * w2[j * N_ACTIONS + a];
        }
    }
    Ok(ForwardPass { features: features.to_vec(), hidden, logits })
}

/// Featurize + forward in one call.
pub fn evaluate(params: &PolicyParams, instruction: &[InstructionToken], window: &HistoryWindow) -> Result<ForwardPass> {
    let f = featurize(params, instruction, window)?;
    forward(params, &f)
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d logits`.
pub fn backward(
    params: &PolicyParams,
    instruction: &[InstructionToken],
    window: &HistoryWindow,
    pass: &ForwardPass,
    dlogits: &[f64; N_ACTIONS],
    grad: &mut [f64],
) {
    let cfg = &params.config;
    let lay = cfg.layout();
    debug_assert_eq!(grad.len(), lay.total);
    let dh = cfg.d_hidden;

    for (g, &d) in grad[lay.b2..lay.b2 + N_ACTIONS].iter_mut().zip(dlogits) {
        *g += d;
    }
    let w2 = &params.data[lay.w2..lay.b2];
    let mut dpre = vec![0.0; dh];
    for j in 0..dh {
        let h = pass.hidden[j];
        let mut dhj = 0.0;
        for a in 0..N_ACTIONS {
            grad[lay.w2 + j * N_ACTIONS + a] += h * dlogits[a];
            dhj += w2[j * N_ACTIONS + a] * dlogits[a];
        }
        dpre[j] = dhj * (1.0 - h * h);
    }
    for (g, &d) in grad[lay.b1..lay.b1 + dh].iter_mut().zip(&dpre) {
        *g += d;
    }
    let w1 = &params.data[lay.w1..lay.b1];
    let mut dfeat = vec![0.0; cfg.feature_dim()];
    for (i, &x) in pass.features.iter().enumerate() {
        let row = &w1[i * dh..][..dh];
        let grow = &mut grad[lay.w1 + i * dh..][..dh];
        let mut acc = 0.0;
        for j in 0..dh {
            grow[j] += x * dpre[j];
            acc += row[j] * dpre[j];
        }
        dfeat[i] = acc;
    }

    if !instruction.is_empty() {
        let scale = 1.0 / instruction.len() as f64;
        for tok in instruction {
            let id = tok.id() as usize;
            let g = &mut grad[lay.instr + id * cfg.d_embed..][..cfg.d_embed];
            for (gi, &d) in g.iter_mut().zip(&dfeat[..cfg.d_embed]) {
                *gi += scale * d;
            }
        }
    }
    for (s, (obs, prev)) in window.slots.iter().enumerate() {
        let base = cfg.d_embed + s * cfg.slot_dim();
        let dobs = &dfeat[base..base + cfg.d_obs];
        for (i, &c) in obs.cells.iter().enumerate() {
            if c != 0 {
                let g = &mut grad[lay.obs + i * cfg.d_obs..][..cfg.d_obs];
                for (gi, &d) in g.iter_mut().zip(dobs) {
                    *gi += d;
                }
            }
        }
        let dact = &dfeat[base + cfg.d_obs..base + cfg.slot_dim()];
        let g = &mut grad[lay.act + prev_row(*prev) * cfg.d_act..][..cfg.d_act];
        for (gi, &d) in g.iter_mut().zip(dact) {
            *gi += d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub probs: [f64; N_ACTIONS],
    pub logits: [f64; N_ACTIONS],
    pub temperature: f64,
}

impl ActionDistribution {
    pub fn log_prob(&self, a: Action) -> f64 {
        log_softmax(&self.logits, self.temperature)[a.index()]
    }
}

pub fn log_softmax(logits: &[f64; N_ACTIONS], temperature: f64) -> [f64; N_ACTIONS] {
    let z = logits.map(|l| l / temperature);
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.map(|v| v - lse)
}

/// softmax(logits / temperature).
pub fn action_dist(logits: &[f64; N_ACTIONS], temperature: f64) -> ActionDistribution {
    assert!(temperature > 0.0, "temperature must be positive");
    let z = logits.map(|l| l / temperature);
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    ActionDistribution { probs: e.map(|v| v / s), logits: *logits, temperature }
}

/// Argmax of the raw logits; ties go to the lowest action index.
pub fn greedy_action(logits: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for a in 1..N_ACTIONS {
        if logits[a] > logits[best] {
            best = a;
        }
    }
    Action::ALL[best]
}

pub const KL_FLOOR: f64 = 1e-12;

/// Reference log-probabilities floored at ln(1e-12), but never above the
/// policy's own log-probability, so KL(p, p) is exactly 0. The mask marks
/// actions whose floored value is log p itself.
pub fn floored_ref_logprobs(logp: &[f64; N_ACTIONS], logq: &[f64; N_ACTIONS]) -> ([f64; N_ACTIONS], [bool; N_ACTIONS]) {
    let c = KL_FLOOR.ln();
    let mut out = *logq;
    let mut tracks = [false; N_ACTIONS];
    for i in 0..N_ACTIONS {
        let floor = logp[i].min(c);
        if floor > logq[i] {
            out[i] = floor;
            tracks[i] = logp[i] < c;
        }
    }
    (out, tracks)
}

/// Exact categorical KL(p ‖ q) with q floored as in [`floored_ref_logprobs`].
pub fn kl_divergence(p: &ActionDistribution, q: &ActionDistribution) -> f64 {
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(pi.min(KL_FLOOR)).ln()))
        .sum();
    // the floor can lift q above a unit mass by at most 4e-12
    kl.max(0.0)
}

/// log π(action | history) at `temperature` and its full parameter gradient.
pub fn logprob_and_grad(
    params: &PolicyParams,
    instruction: &[InstructionToken],
    window: &HistoryWindow,
    action: Action,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let pass = evaluate(params, instruction, window)?;
    let dist = action_dist(&pass.logits, temperature);
    let logp = dist.log_prob(action);
    let mut dlogits = [0.0; N_ACTIONS];
    for (a, d) in dlogits.iter_mut().enumerate() {
        let onehot = if a == action.index() { 1.0 } else { 0.0 };
        *d = (onehot - dist.probs[a]) / temperature;
    }
    let mut grad = vec![0.0; params.len()];
    backward(params, instruction, window, &pass, &dlogits, &mut grad);
    Ok((logp, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::world::{GridWorld, Heading, Pose};

    fn small_cfg() -> PolicyConfig {
        PolicyConfig { vocab: 8, obs_k: 3, d_embed: 3, d_obs: 2, d_act: 2, d_hidden: 5, window: 3 }
    }

    fn sample_window(cfg: &PolicyConfig, seed: u64) -> HistoryWindow {
        let mut r = rng::stream(seed, "window", &[]);
        let slots = (0..cfg.window)
            .map(|_| {
                let cells = (0..cfg.patch_len()).map(|_| u8::from(r.random::<bool>())).collect();
                let prev = Action::from_index(r.random_range(0..5));
                (Observation { k: cfg.obs_k, cells }, prev)
            })
            .collect();
        HistoryWindow { slots }
    }

    fn instr() -> Vec<InstructionToken> {
        vec![InstructionToken::Fwd(3), InstructionToken::Left, InstructionToken::Fwd(3), InstructionToken::StopAtGoal]
    }

    #[test]
    fn block_layout_is_canonical() {
        let cfg = PolicyConfig::default();
        let names: Vec<_> = cfg.blocks().iter().map(|b| b.name).collect();
        assert_eq!(names, ["instr_embed", "obs_proj", "act_embed", "w1", "b1", "w2", "b2"]);
        assert_eq!(cfg.feature_dim(), 16 + 8 * 24);
        assert_eq!(cfg.param_count(), 8 * 16 + 25 * 16 + 5 * 8 + 208 * 64 + 64 + 64 * 4 + 4);
    }

    #[test]
    fn zero_params_give_zero_logits_and_uniform_logprob() {
        let cfg = small_cfg();
        let p = PolicyParams::zeros(cfg);
        let w = sample_window(&cfg, 1);
        let pass = evaluate(&p, &instr(), &w).unwrap();
        assert_eq!(pass.logits, [0.0; 4]);
        for a in Action::ALL {
            let (lp, _) = logprob_and_grad(&p, &instr(), &w, a, 0.4).unwrap();
            assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_only_params() {
        let cfg = small_cfg();
        let mut p = PolicyParams::zeros(cfg);
        p.block_mut("b2").unwrap()[0] = 1.0;
        let pass = evaluate(&p, &instr(), &sample_window(&cfg, 2)).unwrap();
        assert_eq!(pass.logits, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_history_is_padded_and_finite() {
        let cfg = PolicyConfig::default();
        let p = PolicyParams::init(cfg, &mut rng::stream(0, "init", &[]));
        let world = GridWorld::open(9, 9);
        let b = HistoryBuilder::new(cfg.window, cfg.obs_k);
        let w = b.window(&crate::world::observe(&world, Pose::new(4, 4, Heading::N), cfg.obs_k));
        assert_eq!(w.slots.len(), cfg.window);
        assert!(w.slots[..cfg.window - 1].iter().all(|(o, a)| o.cells.iter().all(|&c| c == 0) && a.is_none()));
        let f = featurize(&p, &instr(), &w).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn builder_keeps_last_k_slots() {
        let mut b = HistoryBuilder::new(3, 1);
        let o = |v: u8| Observation { k: 1, cells: vec![v] };
        b.commit(o(1), Action::Forward);
        b.commit(o(0), Action::TurnLeft);
        b.commit(o(1), Action::TurnRight);
        let w = b.window(&o(0));
        assert_eq!(
            w.slots,
            vec![(o(0), Some(Action::Forward)), (o(1), Some(Action::TurnLeft)), (o(0), Some(Action::TurnRight))]
        );
    }

    #[test]
    fn unknown_token_and_dimension_errors() {
        let cfg = small_cfg();
        let p = PolicyParams::zeros(cfg);
        let w = sample_window(&cfg, 3);
        assert_eq!(featurize(&p, &[InstructionToken::Fwd(9)], &w), Err(Error::UnknownToken(11)));
        assert!(matches!(forward(&p, &[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn action_dist_examples() {
        let d = action_dist(&[0.3; 4], 0.4);
        assert!(d.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let d = action_dist(&[2.0, 0.0, 0.0, 0.0], 1.0);
        let e2 = 2f64.exp();
        assert!((d.probs[0] - e2 / (e2 + 3.0)).abs() < 1e-15);
        assert!((d.probs[1] - 1.0 / (e2 + 3.0)).abs() < 1e-15);
        let d = action_dist(&[0.5, 0.3, 0.1, 0.2], 0.01);
        assert!(d.probs[0] > 1.0 - 1e-6);
        assert_eq!(greedy_action(&[1.0, 1.0, 0.0, 1.0]), Action::Forward);
        assert_eq!(greedy_action(&[0.0, 1.0, 1.0, 0.0]), Action::TurnLeft);
    }

    #[test]
    fn kl_examples() {
        let p = action_dist(&[0.1, 0.7, -0.3, 0.2], 0.4);
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let one = ActionDistribution { probs: [1.0, 0.0, 0.0, 0.0], logits: [0.0; 4], temperature: 1.0 };
        let uni = action_dist(&[0.0; 4], 1.0);
        assert!((kl_divergence(&one, &uni) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn score_function_identity() {
        let cfg = small_cfg();
        let p = PolicyParams::init(cfg, &mut rng::stream(4, "init", &[]));
        let w = sample_window(&cfg, 5);
        let t = 0.7;
        let probs = action_dist(&evaluate(&p, &instr(), &w).unwrap().logits, t).probs;
        let mut acc = vec![0.0; p.len()];
        for a in Action::ALL {
            let (_, g) = logprob_and_grad(&p, &instr(), &w, a, t).unwrap();
            for (s, gi) in acc.iter_mut().zip(g) {
                *s += probs[a.index()] * gi;
            }
        }
        assert!(acc.iter().all(|v| v.abs() < 1e-9));
    }
}
