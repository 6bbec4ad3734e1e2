mod common;

use budnav_core::oracle::{plan, progress_index};
use budnav_core::rectify::{demo_windows, find_anchor, synthesize_demo, RectConfig};
use budnav_core::rollout::{run_greedy, Policy};
use budnav_core::world::step;
use budnav_core::{Action, Episode, Error, RolloutConfig, Trajectory, TriggerKind};
use common::NoisyOracle;

/// Seeded failing probes from noisy oracles and random networks.
fn failures(n: usize) -> Vec<(Episode, Trajectory)> {
    let mut out = Vec::new();
    let rc = RolloutConfig::default();
    for i in 0u64.. {
        if out.len() == n {
            break;
        }
        let ep = common::episode(i, [0.0, 0.1, 0.2, 0.3][i as usize % 4]);
        let policy: Box<dyn Policy> = if i % 3 == 2 {
            Box::new(common::params(common::small_cfg(), i, 2.0))
        } else {
            Box::new(NoisyOracle::new([0.1, 0.3][i as usize % 2], i))
        };
        let probe = run_greedy(policy.as_ref(), &ep, &rc).unwrap();
        if !probe.success {
            out.push((ep, probe));
        }
    }
    out
}

#[test]
fn five_hundred_demos_keep_progress_and_reach_the_goal() {
    let cfg = RectConfig::default();
    let mut kinds = std::collections::HashMap::new();
    let mut nonzero_anchor = 0;
    for (ep, probe) in failures(500) {
        *kinds.entry(probe.trigger_kind()).or_insert(0) += 1;
        let demo = synthesize_demo(&probe, &ep, &cfg).unwrap();
        nonzero_anchor += usize::from(demo.anchor_step > 0);
        assert_eq!(demo.retained_prefix, probe.steps[..demo.anchor_step]);

        let mut pose = ep.start;
        let mut positions = vec![pose.cell()];
        let actions = demo.replay_actions();
        for (t, &a) in actions.iter().enumerate() {
            if t == demo.anchor_step {
                assert_eq!(pose, demo.anchor_pose);
            }
            pose = step(&ep.world, pose, a);
            positions.push(pose.cell());
        }
        assert_eq!(actions.last(), Some(&Action::Stop));
        assert!(ep.in_goal_zone(pose.cell()), "episode {}: replay ends outside the goal zone", ep.id);

        let wps = &ep.reference_waypoints;
        let cs = ep.world.cell_size;
        let mut last = -1;
        for t in 1..=positions.len() {
            let p = progress_index(&positions[..t], wps, cfg.visit_radius, cs);
            assert!(p >= last);
            last = p;
        }

        // the anchor is the first arrival at the furthest ordered waypoint
        let probe_cells: Vec<_> = probe.poses().iter().map(|p| p.cell()).collect();
        let best = progress_index(&probe_cells, wps, cfg.visit_radius, cs);
        if probe.trigger_kind() != Some(TriggerKind::ForcedStop) {
            let at = progress_index(&probe_cells[..=demo.anchor_step], wps, cfg.visit_radius, cs);
            assert_eq!(at, best.max(0));
            if demo.anchor_step > 0 {
                assert!(progress_index(&probe_cells[..demo.anchor_step], wps, cfg.visit_radius, cs) < best);
            }
        }
        let oracle = plan(&ep.world, demo.anchor_pose, ep.goal, ep.goal_radius).unwrap();
        assert_eq!(demo.oracle_actions, oracle.actions);
        assert_eq!(demo.weights.len(), demo.oracle_actions.len());
    }
    assert!(nonzero_anchor > 150, "only {nonzero_anchor} demos kept a prefix");
    assert!(kinds.len() >= 3, "trigger mix {kinds:?}");
}

#[test]
fn successful_probe_is_not_a_failure() {
    let ep = common::episode(3, 0.1);
    let oracle = budnav_core::OraclePolicy { window: 3, obs_k: 3 };
    let probe = run_greedy(&oracle, &ep, &RolloutConfig::default()).unwrap();
    assert!(probe.success);
    assert_eq!(find_anchor(&probe, &ep, &RectConfig::default()), Err(Error::NotAFailure));
}

#[test]
fn windows_replay_the_prefix_then_the_oracle() {
    for (ep, probe) in failures(40) {
        let demo = synthesize_demo(&probe, &ep, &RectConfig::default()).unwrap();
        let windows = demo_windows(&ep, &demo, 3, 3);
        assert_eq!(windows.len(), demo.oracle_actions.len());
        assert_eq!(windows[0].1, demo.anchor_pose);
        if let Some(s) = probe.steps.get(demo.anchor_step) {
            // the first supervised context is the one the probe saw at the anchor
            assert_eq!(windows[0].0, s.window);
        }
    }
}
