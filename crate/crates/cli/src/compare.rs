//! `compare`: every config trained on every seed, evaluated on the shared
//! held-out split, tabulated as means over seeds with cost totals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use budnav_core::trainer::{finetune, init_params, pretrain_bc, TrainConfig, TrainOutput};
use budnav_core::{metrics, AblationVariant, CostTotals, ExperimentConfig, MetricsReport, PolicyParams};
use serde::Serialize;
use serde_json::json;

use crate::run::{load_config, prepare_run_dir, write_run_outputs, Episodes};
use crate::{coded, emit, Coded};

#[derive(Debug, Clone, Serialize)]
struct RunResult {
    config: String,
    seed: u64,
    variant: String,
    /// The BC-pretrained policy this run started from.
    baseline: MetricsReport,
    #[serde(rename = "final")]
    report: MetricsReport,
    totals: CostTotals,
    env_steps_per_episode: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RunFailure {
    config: String,
    seed: u64,
    code: u8,
    error: String,
}

/// Everything pretraining depends on, so runs that only differ in the
/// fine-tuning stage share one pretrained policy.
fn pretrain_key(cfg: &ExperimentConfig, tc: &TrainConfig) -> String {
    let tc = TrainConfig {
        variant: AblationVariant::Full,
        train_episodes: 0,
        eval_every: 1,
        early_stop: false,
        early_stop_window: 0,
        early_stop_min_delta: 0.0,
        ..tc.clone()
    };
    json!({ "train": tc, "policy": cfg.policy, "world": cfg.world_hash() }).to_string()
}

fn display_name(path: &Path, taken: &[String]) -> String {
    let stem = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let mut name = stem.clone();
    let mut k = 2;
    while taken.contains(&name) {
        name = format!("{stem}-{k}");
        k += 1;
    }
    name
}

struct Pretrained {
    params: PolicyParams,
    baseline: MetricsReport,
}

fn run_one(
    cfg: &ExperimentConfig,
    eps: &Episodes,
    cache: &mut HashMap<String, Pretrained>,
    out_dir: Option<&Path>,
) -> anyhow::Result<RunResult> {
    let tc = cfg.train_config();
    let key = pretrain_key(cfg, &tc);
    if !cache.contains_key(&key) {
        let init = init_params(cfg.policy, cfg.run.seed);
        let pre = pretrain_bc(&init, &eps.train, &tc)?;
        let baseline = metrics::evaluate(&pre.params, &eps.heldout, &tc.rollout)?.report;
        cache.insert(key.clone(), Pretrained { params: pre.params, baseline });
    }
    let pre = &cache[&key];
    let periodic = match cfg.trainer.eval_episodes {
        0 => &eps.heldout[..],
        n => &eps.heldout[..n.min(eps.heldout.len())],
    };
    if let Some(dir) = out_dir {
        prepare_run_dir(dir, cfg, eps)?;
    }
    let out: TrainOutput = finetune(&tc, &pre.params, &eps.train, periodic, &mut |_| {})?;
    let report = if periodic.len() == eps.heldout.len() {
        out.rows.last().expect("final row").report
    } else {
        metrics::evaluate(&out.params, &eps.heldout, &tc.rollout)?.report
    };
    if let Some(dir) = out_dir {
        write_run_outputs(dir, cfg, eps, &out)?;
    }
    Ok(RunResult {
        config: String::new(),
        seed: cfg.run.seed,
        variant: cfg.trainer.variant.name().to_string(),
        baseline: pre.baseline,
        report,
        totals: out.totals,
        env_steps_per_episode: out.totals.env_steps_per_episode(),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn metric_cells(rs: &[&MetricsReport]) -> String {
    format!(
        "{:>6.1} {:>6.1} {:>6.1} {:>6.2} {:>6.1}",
        mean(rs.iter().map(|r| r.sr)),
        mean(rs.iter().map(|r| r.spl)),
        mean(rs.iter().map(|r| r.osr)),
        mean(rs.iter().map(|r| r.ne)),
        mean(rs.iter().map(|r| r.ndtw))
    )
}

fn render_table(names: &[String], seeds: &[u64], defaulted: bool, runs: &[RunResult], failures: &[RunFailure]) -> String {
    let mut s = String::new();
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let _ = write!(s, "seeds: {}", seed_list.join(" "));
    if defaulted {
        s.push_str(" (default: no --seeds given)");
    }
    s.push('\n');
    let width = names.iter().map(String::len).max().unwrap_or(0).max("pretrained (bc)".len());
    let _ = writeln!(
        s,
        "{:<width$} {:>6} {:>6} {:>6} {:>6} {:>6} {:>11} {:>9} {:>10} {:>10}",
        "config", "SR", "SPL", "OSR", "NE", "nDTW", "env_steps", "steps/ep", "stoch_roll", "hard_stoch"
    );
    if let Some(first) = names.first() {
        let base: Vec<&MetricsReport> = runs.iter().filter(|r| &r.config == first).map(|r| &r.baseline).collect();
        if !base.is_empty() {
            let _ = writeln!(s, "{:<width$} {} {:>11} {:>9} {:>10} {:>10}", "pretrained (bc)", metric_cells(&base), "-", "-", "-", "-");
        }
    }
    for name in names {
        let rows: Vec<&RunResult> = runs.iter().filter(|r| &r.config == name).collect();
        let failed = failures.iter().filter(|f| &f.config == name).count();
        let label = if failed > 0 { format!("{name} (partial: {}/{} seeds)", rows.len(), seeds.len()) } else { name.clone() };
        if rows.is_empty() {
            let _ = writeln!(s, "{label:<width$} failed");
            continue;
        }
        let reports: Vec<&MetricsReport> = rows.iter().map(|r| &r.report).collect();
        let _ = writeln!(
            s,
            "{label:<width$} {} {:>11.0} {:>9.1} {:>10.0} {:>10.0}",
            metric_cells(&reports),
            mean(rows.iter().map(|r| r.totals.env_steps as f64)),
            mean(rows.iter().map(|r| r.env_steps_per_episode)),
            mean(rows.iter().map(|r| r.totals.stochastic_rollouts as f64)),
            mean(rows.iter().map(|r| r.totals.hard_stochastic_rollouts as f64)),
        );
    }
    s.push_str("\nper seed (pretrained -> final SR/SPL):\n");
    for r in runs {
        let _ = writeln!(
            s,
            "  {:<width$} seed {}: {:.1}/{:.1} -> {:.1}/{:.1}",
            r.config, r.seed, r.baseline.sr, r.baseline.spl, r.report.sr, r.report.spl
        );
    }
    for f in failures {
        let _ = writeln!(s, "  {:<width$} seed {}: FAILED ({})", f.config, f.seed, f.error);
    }
    s
}

fn csv(runs: &[RunResult]) -> String {
    let mut s = String::from(
        "config,seed,variant,base_sr,base_spl,sr,spl,osr,ne,ndtw,env_steps,env_steps_per_episode,stochastic_rollouts,hard_stochastic_rollouts\n",
    );
    for r in runs {
        let (b, f) = (&r.baseline, &r.report);
        let _ = writeln!(
            s,
            "{},{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.2},{:.1},{},{:.2},{},{}",
            r.config,
            r.seed,
            r.variant,
            b.sr,
            b.spl,
            f.sr,
            f.spl,
            f.osr,
            f.ne,
            f.ndtw,
            r.totals.env_steps,
            r.env_steps_per_episode,
            r.totals.stochastic_rollouts,
            r.totals.hard_stochastic_rollouts
        );
    }
    s
}

pub fn compare(paths: &[std::path::PathBuf], seeds: &[u64], out: Option<&Path>, as_json: bool) -> anyhow::Result<()> {
    let defaulted = seeds.is_empty();
    let seeds = if defaulted { vec![0] } else { seeds.to_vec() };
    let mut names: Vec<String> = Vec::new();
    let mut configs = Vec::new();
    for p in paths {
        configs.push(load_config(p, &[])?);
        names.push(display_name(p, &names));
    }
    let world = configs[0].world_hash();
    if let Some(i) = configs.iter().position(|c| c.world_hash() != world) {
        return Err(coded(2, format!("{} describes a different suite than {}", paths[i].display(), paths[0].display())));
    }
    let mut shared = configs[0].clone();
    shared.trainer.eval_episodes = 0;
    let eps = Episodes::build(&shared)?;
    log::info!("{} train / {} held-out episodes, {} runs", eps.train.len(), eps.heldout.len(), seeds.len() * configs.len());

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &seeds {
        let mut cache = HashMap::new();
        for (name, base) in names.iter().zip(&configs) {
            let mut cfg = base.clone();
            cfg.run.seed = seed;
            let dir = out.map(|d| d.join(name).join(format!("seed{seed}")));
            match run_one(&cfg, &eps, &mut cache, dir.as_deref()) {
                Ok(mut r) => {
                    log::info!("{name} seed {seed}: SR {:.1} -> {:.1}", r.baseline.sr, r.report.sr);
                    r.config = name.clone();
                    runs.push(r);
                }
                Err(e) => {
                    let code = crate::exit_code(&e).max(1);
                    log::error!("{name} seed {seed}: {e:#}");
                    failures.push(RunFailure { config: name.clone(), seed, code, error: format!("{e:#}") });
                }
            }
        }
    }

    let table = render_table(&names, &seeds, defaulted, &runs, &failures);
    let doc = json!({ "seeds": seeds, "seeds_defaulted": defaulted, "configs": names, "runs": runs, "failures": failures });
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        fs::write(dir.join("compare.csv"), csv(&runs))?;
        fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        fs::write(dir.join("compare.txt"), &table)?;
    }
    if as_json {
        emit(&(serde_json::to_string_pretty(&doc)? + "\n"));
    } else {
        emit(&table);
    }
    match failures.first() {
        None => Ok(()),
        Some(f) => Err(Coded { code: f.code, msg: format!("{} of {} runs failed", failures.len(), seeds.len() * names.len()) }.into()),
    }
}
