mod common;

use std::sync::OnceLock;

use budnav_core::grpo::grpo_loss_and_grad;
use budnav_core::metrics::evaluate;
use budnav_core::rectify::rect_loss_and_grad;
use budnav_core::trainer::{
    dagger_step, episode_stream, finetune, gro_step, init_params, metrics_csv, pretrain_bc, routed_update, train,
    PretrainOutput, Supervision,
};
use budnav_core::{
    variant_config, AblationVariant, AdamWConfig, Episode, EpisodeParams, OptimizerState, PolicyConfig, PolicyParams,
    PolicySnapshot, Route, SnapshotRole, Split, SuiteParams, TrainConfig, WorldParams,
};

struct Fixture {
    train: Vec<Episode>,
    heldout: Vec<Episode>,
    cfg: TrainConfig,
    pre: PretrainOutput,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let suite = budnav_core::BenchmarkSuite::generate(
            "test",
            &SuiteParams { seed: 4, train_worlds: 30, train_episodes_per_world: 10, heldout_worlds: 20, heldout_episodes_per_world: 4 },
            &WorldParams { obstacle_density: 0.1, ..WorldParams::default() },
            &EpisodeParams::default(),
        )
        .unwrap();
        let train = suite.materialize(Split::Train).unwrap();
        let heldout = suite.materialize(Split::Heldout).unwrap();
        let cfg = TrainConfig { pretrain_episodes: 1500, train_episodes: 300, eval_every: 100, ..TrainConfig::default() };
        let pre = pretrain_bc(&init_params(PolicyConfig::default(), 0), &train, &cfg).unwrap();
        Fixture { train, heldout, cfg, pre }
    })
}

fn bits(p: &PolicyParams) -> Vec<u64> {
    p.data.iter().map(|v| v.to_bits()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Textbook AdamW, written independently of the library.
struct RefAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl RefAdam {
    fn step(&mut self, p: &[f64], g: &[f64], h: &AdamWConfig) -> Vec<f64> {
        self.t += 1;
        let mut out = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - h.beta1.powi(self.t));
            let vh = self.v[i] / (1.0 - h.beta2.powi(self.t));
            let decayed = p[i] * (1.0 - h.lr * h.weight_decay);
            out.push(decayed - h.lr * mh / (vh.sqrt() + h.eps));
        }
        out
    }
}

#[test]
fn routed_steps_apply_exactly_one_standalone_gradient() {
    let f = fixture();
    let cfg = &f.cfg;
    let mut params = f.pre.params.clone();
    let reference = &f.pre.reference;
    let ref_bits = bits(reference.params());
    let mut opt = OptimizerState::new(params.len());
    let mut adam = RefAdam { m: vec![0.0; params.len()], v: vec![0.0; params.len()], t: 0 };
    let (mut grpo, mut rect) = (0, 0);
    for (i, visit) in episode_stream(cfg.run_seed, "test-stream", f.train.len(), 300) {
        let ep = &f.train[i];
        let before = params.clone();
        let u = gro_step(&mut params, &mut opt, ep, reference, cfg, visit).unwrap();
        let r = &u.report;
        assert!(r.applied);
        let standalone = match (&u.supervision, r.route) {
            (Supervision::Group(g), Route::Grpo) => {
                grpo += 1;
                assert!(r.probe_success && r.trigger.is_none());
                assert_eq!((r.rollouts_used, r.stochastic_rollouts), (cfg.grpo.group_size, cfg.grpo.group_size - 1));
                assert_eq!(g.trajectories[0], *u.probe.as_ref().unwrap());
                grpo_loss_and_grad(&before, g, ep, reference, &cfg.grpo).unwrap().grad
            }
            (Supervision::Demo(d), Route::Rect) => {
                rect += 1;
                assert!(!r.probe_success);
                assert_eq!((r.rollouts_used, r.stochastic_rollouts), (1, 0));
                assert_eq!(r.env_steps_used, u.probe.as_ref().unwrap().steps.len());
                rect_loss_and_grad(&before, d, ep, &cfg.rect).unwrap().grad
            }
            other => panic!("unexpected route {:?}", other.1),
        };
        assert!(max_abs_diff(&u.grad, &standalone) <= 1e-12);
        let expected = adam.step(&before.data, &u.grad, &cfg.optim);
        assert!(max_abs_diff(&params.data, &expected) <= 1e-12);
    }
    assert!(grpo > 20 && rect > 20, "route mix {grpo}/{rect}");
    assert_eq!(bits(reference.params()), ref_bits);
}

#[test]
fn variants_split_the_routes() {
    let f = fixture();
    let p = &f.pre.params;
    let (mut seen_success, mut seen_failure) = (false, false);
    for ep in f.train.iter().take(60) {
        let at = |v| routed_update(p, ep, &f.pre.reference, &variant_config(&f.cfg, v), 0).unwrap();
        let full = at(AblationVariant::Full);
        let rect_only = at(AblationVariant::RectOnly);
        let grpo_only = at(AblationVariant::GrpoOnly);
        if full.report.probe_success {
            seen_success = true;
            assert!(!rect_only.report.applied && rect_only.grad.iter().all(|&g| g == 0.0));
            assert_eq!(rect_only.report.rollouts_used, 1);
        } else {
            seen_failure = true;
            assert!(!grpo_only.report.applied && grpo_only.grad.iter().all(|&g| g == 0.0));
            assert_eq!(grpo_only.report.rollouts_used, 1);
        }
        // at shared parameters the two ablations add up to the full update
        let sum: Vec<f64> = rect_only.grad.iter().zip(&grpo_only.grad).map(|(a, b)| a + b).collect();
        assert_eq!(sum, full.grad);
    }
    assert!(seen_success && seen_failure);
}

#[test]
fn dagger_corrects_from_the_error_state() {
    let f = fixture();
    let cfg = variant_config(&f.cfg, AblationVariant::Dagger);
    let mut params = f.pre.params.clone();
    let mut opt = OptimizerState::new(params.len());
    let (mut fails, mut wins) = (0, 0);
    for ep in f.train.iter().take(80) {
        let u = dagger_step(&mut params, &mut opt, ep, &cfg).unwrap();
        let probe = u.probe.as_ref().unwrap();
        let Supervision::Demo(d) = &u.supervision else { panic!("dagger always imitates") };
        if u.report.probe_success {
            wins += 1;
            assert_eq!(u.report.route, Route::Teacher);
            assert_eq!(d.oracle_actions, ep.reference_actions());
        } else {
            fails += 1;
            assert_eq!(u.report.route, Route::Rect);
            assert_eq!(d.anchor_pose, probe.final_pose);
            assert_eq!(d.retained_prefix, probe.steps);
        }
        assert_eq!(u.report.stochastic_rollouts, 0);
    }
    assert!(fails > 0 && wins > 0);
}

#[test]
fn pretraining_learns_and_zero_budget_is_a_no_op() {
    let f = fixture();
    let init = init_params(PolicyConfig::default(), 0);
    let cfg = TrainConfig { pretrain_episodes: 0, ..f.cfg.clone() };
    let none = pretrain_bc(&init, &f.train, &cfg).unwrap();
    assert_eq!(bits(&none.params), bits(&init));
    assert!(none.losses.is_empty());

    let l = &f.pre.losses;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&l[l.len() - 200..]) < 0.7 * mean(&l[..200]));
    let rc = &f.cfg.rollout;
    let random = evaluate(&init, &f.heldout, rc).unwrap().report;
    let bc = evaluate(&f.pre.params, &f.heldout, rc).unwrap().report;
    assert!(bc.sr > random.sr, "bc {} vs random {}", bc.sr, random.sr);
}

#[test]
fn training_is_deterministic_and_leaves_the_reference_alone() {
    let f = fixture();
    let cfg = TrainConfig { pretrain_episodes: 200, train_episodes: 150, eval_every: 50, run_seed: 3, ..f.cfg.clone() };
    let run = || train(&cfg, PolicyConfig::default(), &f.train, &f.heldout[..40], &mut |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(metrics_csv(&a.rows), metrics_csv(&b.rows));
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.rows.len(), 4);
    assert_ne!(bits(&a.params), bits(&a.pretrained));

    let before = bits(&f.pre.params);
    let out = finetune(&cfg, &f.pre.params, &f.train, &f.heldout[..10], &mut |_| {}).unwrap();
    assert_eq!(bits(&out.pretrained), before);
    assert_eq!(bits(&f.pre.params), before);
    assert_eq!(out.totals.hard_stochastic_rollouts, 0);
    assert_eq!(out.totals.episodes, 150);
}

#[test]
fn updates_do_not_depend_on_visit_order() {
    let f = fixture();
    let p = &f.pre.params;
    let eps: Vec<&Episode> = f.train.iter().take(12).collect();
    let forward: Vec<_> = eps.iter().map(|ep| routed_update(p, ep, &f.pre.reference, &f.cfg, 1).unwrap()).collect();
    let backward: Vec<_> = eps.iter().rev().map(|ep| routed_update(p, ep, &f.pre.reference, &f.cfg, 1).unwrap()).collect();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(a.report, b.report);
        assert_eq!(a.grad, b.grad);
    }
}

#[test]
fn snapshot_is_a_frozen_copy() {
    let f = fixture();
    let mut p = f.pre.params.clone();
    let snap = PolicySnapshot::new(&p, SnapshotRole::Ref);
    p.data[0] += 1.0;
    assert_eq!(snap.params().data[0] + 1.0, p.data[0]);
}
