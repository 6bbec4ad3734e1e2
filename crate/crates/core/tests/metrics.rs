mod common;

use std::collections::VecDeque;

use budnav_core::metrics::{dtw, episode_result, evaluate, navigation_error, ndtw};
use budnav_core::rng;
use budnav_core::rollout::{run_greedy, run_sampled, rollout_stream_id};
use budnav_core::{Action, Cell, Episode, GridWorld, OraclePolicy, RolloutConfig};
use common::Constant;
use rand::Rng;

fn brute_dtw(a: &[Cell], b: &[Cell], i: usize, j: usize) -> f64 {
    let d = f64::from(a[i].0 - b[j].0).hypot(f64::from(a[i].1 - b[j].1));
    if i == 0 && j == 0 {
        return d;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(brute_dtw(a, b, i - 1, j));
    }
    if j > 0 {
        best = best.min(brute_dtw(a, b, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(brute_dtw(a, b, i - 1, j - 1));
    }
    d + best
}

fn random_path(r: &mut impl Rng) -> Vec<Cell> {
    let n = r.random_range(1..=6);
    (0..n).map(|_| (r.random_range(-4..5), r.random_range(-4..5))).collect()
}

#[test]
fn dtw_matches_exhaustive_alignment() {
    for i in 0..3000u64 {
        let mut r = rng::stream(8, "dtw", &[i]);
        let (a, b) = (random_path(&mut r), random_path(&mut r));
        let dp = dtw(&a, &b, 1.0);
        let brute = brute_dtw(&a, &b, a.len() - 1, b.len() - 1);
        assert!((dp - brute).abs() <= 1e-12 * brute.max(1.0), "{a:?} {b:?}: {dp} vs {brute}");
    }
}

#[test]
fn reference_scores_exactly_one() {
    for i in 0..200 {
        let ep = common::episode(i, 0.2);
        assert_eq!(ndtw(&ep.reference_waypoints, &ep.reference_waypoints, 3.0, 1.0), 1.0);
    }
}

fn bfs_steps(w: &GridWorld, from: Cell, to: Cell) -> Option<usize> {
    let mut seen = std::collections::HashSet::from([from]);
    let mut q = VecDeque::from([(from, 0)]);
    while let Some((c, d)) = q.pop_front() {
        if c == to {
            return Some(d);
        }
        for n in w.neighbors(c) {
            if seen.insert(n) {
                q.push_back((n, d + 1));
            }
        }
    }
    None
}

fn random_trajectories() -> Vec<(Episode, budnav_core::Trajectory)> {
    let rc = RolloutConfig::default();
    (0..150u64)
        .map(|i| {
            let ep = common::episode(i, 0.25);
            let p = common::params(common::small_cfg(), i, 3.0);
            let t = if i % 2 == 0 {
                run_greedy(&p, &ep, &rc.for_evaluation()).unwrap()
            } else {
                run_sampled(&p, &ep, &rc, 1.0, rollout_stream_id(0, i, 0)).unwrap()
            };
            (ep, t)
        })
        .collect()
}

#[test]
fn navigation_error_is_bfs_distance() {
    for (ep, t) in random_trajectories() {
        let steps = bfs_steps(&ep.world, t.final_pose.cell(), ep.goal).unwrap();
        assert_eq!(navigation_error(&t, &ep), steps as f64 * ep.world.cell_size);
    }
}

#[test]
fn per_episode_metric_ordering() {
    let mut osr_only = 0;
    for (ep, t) in random_trajectories() {
        let r = episode_result(&t, &ep);
        assert!((0.0..=1.0).contains(&r.spl));
        assert!(r.spl <= f64::from(u8::from(r.success)));
        assert!(r.osr || !r.success);
        assert!(r.ndtw > 0.0 && r.ndtw <= 1.0);
        osr_only += usize::from(r.osr && !r.success);
    }
    assert!(osr_only > 0);
}

#[test]
fn oracle_policy_is_perfect_and_stop_policy_is_not() {
    let eps: Vec<Episode> = (0..60).map(|i| common::episode(i, 0.2)).collect();
    let oracle = OraclePolicy { window: 3, obs_k: 3 };
    let rep = evaluate(&oracle, &eps, &RolloutConfig::default()).unwrap().report;
    assert_eq!((rep.sr, rep.spl, rep.osr), (100.0, 100.0, 100.0));
    assert!(rep.ndtw > 90.0);
    let far: Vec<Episode> = eps.into_iter().filter(|e| e.goal_distance(e.start.cell()) > 3.0).collect();
    let rep = evaluate(&Constant(Action::Stop), &far, &RolloutConfig::default()).unwrap().report;
    assert_eq!((rep.sr, rep.osr, rep.spl), (0.0, 0.0, 0.0));
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let eps: Vec<Episode> = (0..30).map(|i| common::episode(i, 0.2)).collect();
    let p = common::params(common::small_cfg(), 4, 2.0);
    let before: Vec<u64> = p.data.iter().map(|v| v.to_bits()).collect();
    let ev = evaluate(&p, &eps, &RolloutConfig::default()).unwrap();
    assert_eq!(before, p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let r = ev.report;
    assert!(r.spl <= r.sr && r.osr >= r.sr);
    assert!(ev.trajectories.iter().all(|t| t.trigger.is_none() || t.trigger_kind() == Some(budnav_core::TriggerKind::ForcedStop)));
}
