mod common;

use budnav_core::io::{
    read_checkpoint, read_episode, read_suite, read_trace, render_map, verify_trace, write_checkpoint, write_episode,
    write_manifest, write_suite, write_trace, Checkpoint, TraceRecord,
};
use budnav_core::rectify::{synthesize_demo, RectConfig};
use budnav_core::rollout::{rollout_stream_id, run_greedy, run_sampled};
use budnav_core::{Error, ExperimentConfig, RolloutConfig, SuiteParams};
use common::NoisyOracle;

fn records() -> Vec<TraceRecord> {
    let rc = RolloutConfig::default();
    let mut out = Vec::new();
    for i in 0..12u64 {
        let ep = common::episode(i, 0.2);
        let p = common::params(common::small_cfg(), i, 2.0);
        out.push(TraceRecord::new(&ep, &run_sampled(&p, &ep, &rc, 0.4, rollout_stream_id(0, i, 1)).unwrap(), None));
        let probe = run_greedy(&NoisyOracle::new(0.3, i), &ep, &rc).unwrap();
        let demo = synthesize_demo(&probe, &ep, &RectConfig::default()).ok();
        out.push(TraceRecord::new(&ep, &probe, demo.as_ref()));
    }
    out
}

#[test]
fn traces_round_trip_and_replay() {
    let recs = records();
    assert!(recs.iter().any(|r| r.rect.is_some()));
    let text = write_trace(&recs);
    let back = read_trace(&text).unwrap();
    assert_eq!(back, recs);
    assert_eq!(write_trace(&back), text);
    for r in &back {
        verify_trace(r).unwrap();
    }
}

#[test]
fn edited_action_is_reported_at_the_next_step() {
    let recs = records();
    let (idx, rec) = recs.iter().enumerate().find(|(_, r)| r.steps.len() > 6).unwrap();
    let id = rec.episode.id;
    let text = write_trace(&recs[idx..=idx]);
    let target = format!("step {id} 3 ");
    let edited: String = text
        .lines()
        .map(|l| {
            if l.starts_with(&target) {
                let mut f: Vec<String> = l.split(' ').map(String::from).collect();
                // swap FORWARD with a turn (or a turn with FORWARD)
                f[4] = if f[4] == "F" { "L".into() } else { "F".into() };
                f.join(" ")
            } else {
                l.to_string()
            }
        })
        .map(|l| l + "\n")
        .collect();
    assert_ne!(edited, text);
    let back = read_trace(&edited).unwrap();
    let d = verify_trace(&back[0]).unwrap_err();
    assert_eq!(d.step, 4);
    assert!(d.to_string().contains("step 4"));
}

#[test]
fn rect_records_render_an_anchor() {
    let recs = records();
    let rec = recs.iter().find(|r| r.rect.as_ref().is_some_and(|x| x.anchor_step > 0)).unwrap();
    let map = render_map(rec);
    let rect = rec.rect.as_ref().unwrap();
    let anchor = rect.anchor_pose.cell();
    let ch = map[anchor.1 as usize].chars().nth(anchor.0 as usize).unwrap();
    assert!(ch == 'A' || ch == 'S' || ch == 'G', "anchor glyph {ch}");
    let all: String = map.concat();
    assert!(all.contains('S') && all.contains('G'));
    assert_eq!(map.len(), rec.episode.world.height);
}

#[test]
fn bad_anchor_is_a_divergence() {
    let mut recs = records();
    let rec = recs.iter_mut().find(|r| r.rect.is_some()).unwrap();
    let rect = rec.rect.as_mut().unwrap();
    rect.anchor_pose.x += 1;
    assert_eq!(verify_trace(rec).unwrap_err().detail, "anchor mismatch");
}

#[test]
fn episodes_and_suites_round_trip() {
    for i in 0..20 {
        let ep = common::episode(i, 0.3);
        let text = write_episode(&ep);
        assert_eq!(read_episode(&text).unwrap(), ep);
    }
    let cfg = ExperimentConfig {
        suite: SuiteParams { train_worlds: 5, train_episodes_per_world: 3, heldout_worlds: 4, heldout_episodes_per_world: 2, seed: 9 },
        ..ExperimentConfig::default()
    };
    let suite = cfg.build_suite().unwrap();
    let text = write_suite(&suite);
    let back = read_suite(&text).unwrap();
    assert_eq!(back, suite);
    assert_eq!(write_suite(&back), text);
}

#[test]
fn corrupted_episode_text_is_rejected() {
    let ep = common::episode(2, 0.2);
    let text = write_episode(&ep);
    let broken = text.replacen("goal_radius 3", "goal_radius x", 1);
    assert!(matches!(read_episode(&broken), Err(Error::Parse(_))));
}

#[test]
fn checkpoint_corruption_kinds() {
    let p = common::params(budnav_core::PolicyConfig::default(), 1, 1.0);
    let ck = Checkpoint { config_hash: "h".into(), params: p };
    let bytes = write_checkpoint(&ck);
    assert_eq!(read_checkpoint(&bytes).unwrap(), ck);
    let mut payload = bytes.clone();
    let n = payload.len();
    payload[n / 2 + 200] ^= 0x10;
    assert_eq!(read_checkpoint(&payload), Err(Error::Checksum));
    assert!(matches!(read_checkpoint(&bytes[..40]), Err(Error::Parse(_))));
    assert!(matches!(read_checkpoint(b"budnav-ckpt v2\n"), Err(Error::Parse(_))));
}

#[test]
fn manifest_lists_config_and_overrides() {
    let cfg = ExperimentConfig::parse("run.seed=4\ngrpo.kl_beta=0.05").unwrap();
    let m = write_manifest(&cfg, &[("metrics", "out/metrics.csv".into())], "t0");
    assert!(m.starts_with("budnav-manifest v1\n"));
    assert!(m.contains("override.grpo.kl_beta 0.05\n"));
    assert!(m.contains("config.optim.lr 0.0003\n"));
    assert!(m.contains(&format!("world.hash {}\n", cfg.world_hash())));
    assert!(m.contains("output.metrics out/metrics.csv\n"));
}
