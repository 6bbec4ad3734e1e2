use std::hint::black_box;
use std::sync::Arc;

use budnav_core::grpo::grpo_loss_and_grad;
use budnav_core::oracle::{geodesic_field, plan};
use budnav_core::policy::{evaluate, logprob_and_grad};
use budnav_core::rollout::{rollout_stream_id, run_greedy, run_sampled};
use budnav_core::trainer::init_params;
use budnav_core::world::{generate_episode, generate_world};
use budnav_core::{
    Action, EpisodeParams, GrpoConfig, HistoryWindow, PolicyConfig, PolicySnapshot, RewardConfig, RolloutConfig, RolloutGroup,
    SnapshotRole, WorldParams,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn episode(seed: u64) -> budnav_core::Episode {
    let world = Arc::new(generate_world(seed, &WorldParams::default()).unwrap());
    generate_episode(world, seed, 0, &EpisodeParams::default()).unwrap()
}

fn oracle(c: &mut Criterion) {
    let ep = episode(3);
    c.bench_function("geodesic_field 12x12", |b| b.iter(|| geodesic_field(&ep.world, black_box(ep.goal)).unwrap()));
    c.bench_function("plan 12x12", |b| b.iter(|| plan(&ep.world, black_box(ep.start), ep.goal, ep.goal_radius).unwrap()));
}

fn policy(c: &mut Criterion) {
    let ep = episode(5);
    let cfg = PolicyConfig::default();
    let params = init_params(cfg, 1);
    let traj = run_greedy(&params, &ep, &RolloutConfig::default()).unwrap();
    let window: HistoryWindow = traj.steps[0].window.clone();
    c.bench_function("policy forward", |b| b.iter(|| evaluate(&params, &ep.instruction, black_box(&window)).unwrap()));
    c.bench_function("policy forward+backward", |b| {
        b.iter(|| logprob_and_grad(&params, &ep.instruction, black_box(&window), Action::Forward, 1.0).unwrap())
    });
}

fn rollouts(c: &mut Criterion) {
    let ep = episode(7);
    let params = init_params(PolicyConfig::default(), 2);
    let rc = RolloutConfig::default();
    c.bench_function("greedy rollout", |b| b.iter(|| run_greedy(&params, black_box(&ep), &rc).unwrap()));

    let gcfg = GrpoConfig::default();
    let mut trajs = vec![run_greedy(&params, &ep, &rc).unwrap()];
    for k in 1..gcfg.group_size as u64 {
        trajs.push(run_sampled(&params, &ep, &rc, gcfg.temperature, rollout_stream_id(0, ep.id, k)).unwrap());
    }
    let old = PolicySnapshot::new(&params, SnapshotRole::Old);
    let group = RolloutGroup::new(trajs, &ep, old, &RewardConfig::default(), &gcfg).unwrap();
    let reference = PolicySnapshot::new(&params, SnapshotRole::Ref);
    c.bench_function("grpo loss and gradient (G=4)", |b| {
        b.iter(|| grpo_loss_and_grad(&params, black_box(&group), &ep, &reference, &gcfg).unwrap())
    });
}

criterion_group!(benches, oracle, policy, rollouts);
criterion_main!(benches);
