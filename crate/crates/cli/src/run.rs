//! Single-run commands: train, eval, replay and gen-suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use budnav_core::io::{self, Checkpoint, TraceRecord};
use budnav_core::rectify::synthesize_demo;
use budnav_core::rollout::run_greedy;
use budnav_core::trainer::{self, metrics_csv, TrainOutput};
use budnav_core::{metrics, AblationVariant, BenchmarkSuite, Episode, Error, ExperimentConfig, PolicyParams, RolloutConfig};
use budnav_core::suite::Split;
use serde_json::json;

use crate::{coded, core_code, emit, Algo, SplitArg};

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| coded(2, format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn parse_sets(set: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| coded(2, format!("--set expects key=value, got {s:?}")))
        })
        .collect()
}

/// Reads a config file and applies `--set` overrides; every failure exits 2.
pub fn load_config(path: &Path, set: &[String]) -> anyhow::Result<ExperimentConfig> {
    let text = read_text(path)?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| coded(2, format!("{}: {e}", path.display())))?;
    cfg.with_overrides(&parse_sets(set)?).map_err(|e| coded(2, format!("{}: {e}", path.display())))
}

pub fn apply_algo(cfg: &mut ExperimentConfig, algo: Option<Algo>) {
    cfg.trainer.variant = match algo {
        None => cfg.trainer.variant,
        Some(Algo::Gro) if cfg.trainer.variant.is_routed() => cfg.trainer.variant,
        Some(Algo::Gro) => AblationVariant::Full,
        Some(Algo::Dagger) => AblationVariant::Dagger,
        Some(Algo::Bc) => AblationVariant::Bc,
    };
}

pub fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("unix:{secs}")
}

/// Train and held-out episodes of a config's suite; the held-out list is cut
/// to `trainer.eval_episodes` when that is nonzero.
pub struct Episodes {
    pub suite: BenchmarkSuite,
    pub train: Vec<Episode>,
    pub heldout: Vec<Episode>,
}

impl Episodes {
    pub fn build(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        let suite = cfg.build_suite()?;
        let train = suite.materialize(Split::Train)?;
        let mut heldout = suite.materialize(Split::Heldout)?;
        if cfg.trainer.eval_episodes > 0 {
            heldout.truncate(cfg.trainer.eval_episodes);
        }
        Ok(Self { suite, train, heldout })
    }
}

/// Greedy probes of `params` on the first `n` training episodes, with the
/// rectification demo attached to each failure.
pub fn trace_samples(params: &PolicyParams, cfg: &ExperimentConfig, episodes: &[Episode], n: usize) -> anyhow::Result<Vec<TraceRecord>> {
    episodes
        .iter()
        .take(n)
        .map(|ep| {
            let traj = run_greedy(params, ep, &cfg.rollout)?;
            let demo = match synthesize_demo(&traj, ep, &cfg.rect) {
                Ok(d) => Some(d),
                Err(Error::NotAFailure) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(TraceRecord::new(ep, &traj, demo.as_ref()))
        })
        .collect()
}

pub const OUTPUTS: [(&str, &str); 7] = [
    ("config", "config.cfg"),
    ("suite", "suite.txt"),
    ("metrics", "metrics.csv"),
    ("pretrained", "pretrained.ckpt"),
    ("checkpoint", "final.ckpt"),
    ("traces", "traces.txt"),
    ("summary", "summary.json"),
];

fn out_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(OUTPUTS.iter().find(|o| o.0 == key).expect("known output").1)
}

/// Writes the manifest, config and suite of a run directory. The manifest
/// goes first and is not touched again.
pub fn prepare_run_dir(dir: &Path, cfg: &ExperimentConfig, eps: &Episodes) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let outputs: Vec<(&str, String)> = OUTPUTS.iter().map(|&(k, f)| (k, f.to_string())).collect();
    write(&dir.join("manifest.txt"), io::write_manifest(cfg, &outputs, &timestamp()))?;
    write(&out_path(dir, "config"), cfg.to_kv_text())?;
    write(&out_path(dir, "suite"), io::write_suite(&eps.suite))
}

/// Writes everything a finished run produced.
pub fn write_run_outputs(dir: &Path, cfg: &ExperimentConfig, eps: &Episodes, out: &TrainOutput) -> anyhow::Result<()> {
    let ckpt = |params: &PolicyParams| io::write_checkpoint(&Checkpoint { config_hash: cfg.hash(), params: params.clone() });
    write(&out_path(dir, "metrics"), metrics_csv(&out.rows))?;
    write(&out_path(dir, "pretrained"), ckpt(&out.pretrained))?;
    write(&out_path(dir, "checkpoint"), ckpt(&out.params))?;
    let traces = trace_samples(&out.params, cfg, &eps.train, cfg.trainer.trace_samples)?;
    write(&out_path(dir, "traces"), io::write_trace(&traces))?;
    let summary = json!({
        "variant": cfg.trainer.variant.name(),
        "seed": cfg.run.seed,
        "baseline": out.rows.first().map(|r| r.report),
        "final": out.rows.last().map(|r| r.report),
        "totals": out.totals,
        "env_steps_per_episode": out.totals.env_steps_per_episode(),
        "stopped_early": out.stopped_early,
    });
    write(&out_path(dir, "summary"), serde_json::to_string_pretty(&summary)? + "\n")
}

pub fn train(config: &Path, out: &Path, algo: Option<Algo>, set: &[String]) -> anyhow::Result<()> {
    let mut cfg = load_config(config, set)?;
    apply_algo(&mut cfg, algo);
    let eps = Episodes::build(&cfg)?;
    prepare_run_dir(out, &cfg, &eps)?;
    log::info!(
        "{}: seed {}, {} train / {} held-out episodes",
        cfg.trainer.variant,
        cfg.run.seed,
        eps.train.len(),
        eps.heldout.len()
    );
    let result = trainer::train(&cfg.train_config(), cfg.policy, &eps.train, &eps.heldout, &mut |_| {})?;
    write_run_outputs(out, &cfg, &eps, &result)?;
    let (first, last) = (result.rows[0].report, result.rows[result.rows.len() - 1].report);
    println!(
        "{} seed {}: SR {:.1} -> {:.1}, SPL {:.1} -> {:.1}, env steps {}",
        cfg.trainer.variant, cfg.run.seed, first.sr, last.sr, first.spl, last.spl, result.totals.env_steps
    );
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| coded(2, format!("cannot read {}: {e}", path.display())))?;
    io::read_checkpoint(&bytes).map_err(|e| match e {
        Error::Checksum => coded(4, format!("{}: checksum mismatch", path.display())),
        e => coded(4, format!("{}: corrupt checkpoint: {e}", path.display())),
    })
}

pub fn eval(
    ckpt: &Path,
    suite: &Path,
    split: SplitArg,
    config: Option<&Path>,
    out: Option<&Path>,
    traces: usize,
    as_json: bool,
) -> anyhow::Result<()> {
    let checkpoint = read_checkpoint(ckpt)?;
    let suite_text = read_text(suite)?;
    let suite = io::read_suite(&suite_text).map_err(|e| coded(2, format!("{}: {e}", suite.display())))?;
    let rollout = match config {
        Some(p) => load_config(p, &[])?.rollout,
        None => RolloutConfig::default(),
    };
    let (split, split_name) = match split {
        SplitArg::Train => (Split::Train, "train"),
        SplitArg::Heldout => (Split::Heldout, "heldout"),
    };
    let episodes = suite.materialize(split)?;
    let evaluation = metrics::evaluate(&checkpoint.params, &episodes, &rollout).map_err(|e| {
        let code = core_code(&e);
        coded(if code == 1 { 2 } else { code }, format!("checkpoint does not fit the suite: {e}"))
    })?;
    let r = evaluation.report;

    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => ckpt.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write(
        &dir.join("eval.csv"),
        format!("split,n,sr,spl,osr,ne,ndtw\n{split_name},{},{:.1},{:.1},{:.1},{:.2},{:.1}\n", r.n, r.sr, r.spl, r.osr, r.ne, r.ndtw),
    )?;
    let mut per_episode = String::from("episode_id,success,spl,osr,ne,ndtw,path_length,steps\n");
    for e in &evaluation.results {
        per_episode.push_str(&format!(
            "{},{},{:.4},{},{:.4},{:.4},{:.1},{}\n",
            e.episode_id,
            u8::from(e.success),
            e.spl,
            u8::from(e.osr),
            e.ne_m,
            e.ndtw,
            e.path_length_m,
            e.steps
        ));
    }
    write(&dir.join("eval_episodes.csv"), per_episode)?;
    let records: Vec<TraceRecord> = episodes
        .iter()
        .zip(&evaluation.trajectories)
        .take(traces)
        .map(|(ep, t)| TraceRecord::new(ep, t, None))
        .collect();
    write(&dir.join("eval_trace.txt"), io::write_trace(&records))?;

    if as_json {
        let doc = json!({ "suite": suite.name, "split": split_name, "config_hash": checkpoint.config_hash, "report": r });
        emit(&(serde_json::to_string_pretty(&doc)? + "\n"));
    } else {
        emit(&format!(
            "suite {} ({split_name}, {} episodes)\nSR {}  SPL {}  OSR {}  NE {}  nDTW {}\n",
            suite.name, r.n, r.sr, r.spl, r.osr, r.ne, r.ndtw
        ));
    }
    Ok(())
}

pub fn replay(trace: &Path, quiet: bool) -> anyhow::Result<()> {
    let text = read_text(trace)?;
    let records = io::read_trace(&text).map_err(|e| coded(5, format!("{}: corrupt trace: {e}", trace.display())))?;
    let mut text = String::new();
    for rec in &records {
        if let Err(d) = io::verify_trace(rec) {
            emit(&text);
            return Err(coded(5, format!("replay diverged: {d}")));
        }
        text.push_str(&format!(
            "episode {}: {} steps, {}",
            rec.episode.id,
            rec.steps.len(),
            if rec.end.success { "success" } else { "failure" }
        ));
        if let Some((kind, t)) = rec.trigger() {
            text.push_str(&format!(", {kind:?} at t={t}"));
        }
        if let Some(rect) = &rec.rect {
            text.push_str(&format!(", anchor at step {} ({})", rect.anchor_step, rect.anchor_pose));
        }
        text.push('\n');
        if !quiet {
            for row in io::render_map(rec) {
                text.push_str(&format!("  {row}\n"));
            }
        }
    }
    if !quiet {
        text.push_str("legend: S start, G goal, o reference, * executed, + both, X trigger, A anchor, # wall\n");
    }
    text.push_str(&format!("{} episode(s) replayed consistently\n", records.len()));
    emit(&text);
    Ok(())
}

pub fn gen_suite(config: &Path, out: &Path, set: &[String]) -> anyhow::Result<()> {
    let cfg = load_config(config, set)?;
    let suite = cfg.build_suite()?;
    write(out, io::write_suite(&suite))?;
    println!("{}: {} train / {} held-out episodes -> {}", suite.name, suite.train.len(), suite.heldout.len(), out.display());
    Ok(())
}
