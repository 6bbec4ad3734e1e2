//! Text and binary file formats: episodes, suites, traces, checkpoints and
//! run manifests. Every writer is deterministic and every reader accepts
//! exactly what the writer produces, so write → read → write is identity.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{apply_kv, sha256_hex, to_kv, ExperimentConfig};
use crate::error::{Error, Result};
use crate::policy::{PolicyConfig, PolicyParams, N_ACTIONS};
use crate::rectify::RectificationDemo;
use crate::rollout::{RolloutMode, Trajectory, TriggerKind};
use crate::suite::BenchmarkSuite;
use crate::world::{build_episode, step, Action, Episode, EpisodeParams, GridWorld, Heading, InstructionToken, Pose, WorldParams};

pub const EPISODE_MAGIC: &str = "budnav-episode v1";
pub const SUITE_MAGIC: &str = "budnav-suite v1";
pub const TRACE_MAGIC: &str = "budnav-trace v1";
pub const CKPT_MAGIC: &str = "budnav-ckpt v1";
pub const MANIFEST_MAGIC: &str = "budnav-manifest v1";

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| perr(format!("bad {what}: {s:?}")))
}

pub fn format_pose(p: Pose) -> String {
    p.to_string()
}

pub fn parse_pose(s: &str) -> Result<Pose> {
    let mut it = s.split(',');
    let (Some(x), Some(y), Some(h), None) = (it.next(), it.next(), it.next(), it.next()) else {
        return Err(perr(format!("bad pose {s:?}")));
    };
    let mut hc = h.chars();
    let heading = match (hc.next(), hc.next()) {
        (Some(c), None) => Heading::from_char(c),
        _ => None,
    }
    .ok_or_else(|| perr(format!("bad heading in {s:?}")))?;
    Ok(Pose::new(num(x, "x")?, num(y, "y")?, heading))
}

pub fn action_from_char(c: char) -> Result<Action> {
    Action::ALL.into_iter().find(|a| a.short() == c).ok_or_else(|| perr(format!("bad action {c:?}")))
}

fn parse_actions(s: &str) -> Result<Vec<Action>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.chars().map(action_from_char).collect()
}

fn format_actions(actions: &[Action]) -> String {
    if actions.is_empty() {
        "-".into()
    } else {
        actions.iter().map(|a| a.short()).collect()
    }
}

/// Line cursor with keyword-checked reads.
struct Lines<'a> {
    it: std::iter::Peekable<std::str::Lines<'a>>,
    n: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { it: text.lines().peekable(), n: 0 }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.n += 1;
        self.it.next().ok_or_else(|| perr(format!("unexpected end of input at line {}", self.n)))
    }

    fn peek(&mut self) -> Option<&'a str> {
        self.it.peek().copied()
    }

    /// Reads `keyword rest` and returns the rest.
    fn field(&mut self, keyword: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == keyword => Ok(rest),
            _ if line == keyword => Ok(""),
            _ => Err(perr(format!("line {}: expected {keyword:?}, found {line:?}", self.n))),
        }
    }

    fn exact(&mut self, want: &str) -> Result<()> {
        let line = self.next()?;
        if line == want {
            Ok(())
        } else {
            Err(perr(format!("line {}: expected {want:?}, found {line:?}", self.n)))
        }
    }
}

fn write_episode_body(ep: &Episode, out: &mut String) {
    let w = &ep.world;
    let _ = writeln!(out, "id {}", ep.id);
    let _ = writeln!(out, "size {} {}", w.width, w.height);
    let _ = writeln!(out, "cell_size {}", w.cell_size);
    let _ = writeln!(out, "world_seed {}", w.seed);
    let _ = writeln!(out, "episode_seed {}", ep.episode_seed);
    let _ = writeln!(out, "goal_radius {}", ep.goal_radius);
    let _ = writeln!(out, "max_run {}", ep.max_run);
    for row in w.ascii_rows() {
        let _ = writeln!(out, "row {row}");
    }
    let _ = writeln!(out, "start {}", ep.start);
    let _ = writeln!(out, "goal {},{}", ep.goal.0, ep.goal.1);
    let path: Vec<String> = ep.reference_path.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(out, "path {}", path.join(" "));
    let ids: Vec<String> = ep.instruction.iter().map(|t| t.id().to_string()).collect();
    let _ = writeln!(out, "instruction {}", ids.join(" "));
}

fn read_episode_body(lines: &mut Lines) -> Result<Episode> {
    let id: u64 = num(lines.field("id")?, "id")?;
    let size = lines.field("size")?;
    let (w, h) = size.split_once(' ').ok_or_else(|| perr("bad size"))?;
    let (w, h): (usize, usize) = (num(w, "width")?, num(h, "height")?);
    let cell_size: f64 = num(lines.field("cell_size")?, "cell_size")?;
    let world_seed: u64 = num(lines.field("world_seed")?, "world_seed")?;
    let episode_seed: u64 = num(lines.field("episode_seed")?, "episode_seed")?;
    let goal_radius: f64 = num(lines.field("goal_radius")?, "goal_radius")?;
    let max_run: u32 = num(lines.field("max_run")?, "max_run")?;
    if max_run == 0 {
        return Err(perr("max_run must be positive"));
    }
    let mut rows = Vec::with_capacity(h);
    for _ in 0..h {
        rows.push(lines.field("row")?);
    }
    if rows.iter().any(|r| r.len() != w) {
        return Err(perr("row width does not match size"));
    }
    let world = Arc::new(GridWorld::from_ascii(&rows, cell_size, world_seed)?);
    let start = parse_pose(lines.field("start")?)?;
    let goal_s = lines.field("goal")?;
    let (gx, gy) = goal_s.split_once(',').ok_or_else(|| perr("bad goal"))?;
    let goal = (num(gx, "goal x")?, num(gy, "goal y")?);
    let path: Vec<Pose> = lines.field("path")?.split(' ').map(parse_pose).collect::<Result<_>>()?;
    let instruction: Vec<InstructionToken> = lines
        .field("instruction")?
        .split(' ')
        .map(|s| InstructionToken::from_id(num(s, "token")?, max_run))
        .collect::<Result<_>>()?;
    if !world.is_free(start.cell()) || !world.is_free(goal) {
        return Err(perr("start or goal is not a free cell"));
    }
    let params = EpisodeParams { goal_radius, max_run, ..EpisodeParams::default() };
    let ep = build_episode(id, world, episode_seed, start, goal, &params)?;
    if ep.reference_path != path || ep.instruction != instruction {
        return Err(perr(format!("episode {id}: stored reference does not match the oracle plan")));
    }
    Ok(ep)
}

pub fn write_episode(ep: &Episode) -> String {
    let mut s = format!("{EPISODE_MAGIC}\n");
    write_episode_body(ep, &mut s);
    s
}

pub fn read_episode(text: &str) -> Result<Episode> {
    let mut lines = Lines::new(text);
    lines.exact(EPISODE_MAGIC)?;
    let ep = read_episode_body(&mut lines)?;
    if lines.peek().is_some() {
        return Err(perr("trailing content after episode"));
    }
    Ok(ep)
}

#[derive(Serialize, Deserialize)]
struct SuiteGenerator {
    world: WorldParams,
    episode: EpisodeParams,
}

pub fn write_suite(suite: &BenchmarkSuite) -> String {
    let mut s = format!("{SUITE_MAGIC}\nname {}\n", suite.name);
    let generator = SuiteGenerator { world: suite.world, episode: suite.episode };
    for (k, v) in to_kv(&generator).expect("serializes") {
        let _ = writeln!(s, "param {k} {v}");
    }
    for (tag, pairs) in [("train", &suite.train), ("heldout", &suite.heldout)] {
        for (w, e) in pairs {
            let _ = writeln!(s, "{tag} {w} {e}");
        }
    }
    s
}

pub fn read_suite(text: &str) -> Result<BenchmarkSuite> {
    let mut lines = Lines::new(text);
    lines.exact(SUITE_MAGIC)?;
    let name = lines.field("name")?.to_string();
    let mut kv = Vec::new();
    while lines.peek().is_some_and(|l| l.starts_with("param ")) {
        let rest = lines.field("param")?;
        let (k, v) = rest.split_once(' ').ok_or_else(|| perr("bad param line"))?;
        kv.push((k.to_string(), v.to_string()));
    }
    let defaults = SuiteGenerator { world: WorldParams::default(), episode: EpisodeParams::default() };
    let SuiteGenerator { world, episode } = apply_kv(&defaults, &kv).map_err(|e| perr(e.to_string()))?;
    let mut suite = BenchmarkSuite { name, world, episode, train: Vec::new(), heldout: Vec::new() };
    while let Some(line) = lines.peek() {
        let _ = lines.next()?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [tag, w, e] = parts[..] else {
            return Err(perr(format!("bad suite line {line:?}")));
        };
        let pair = (num(w, "world seed")?, num(e, "episode seed")?);
        match tag {
            "train" => suite.train.push(pair),
            "heldout" => suite.heldout.push(pair),
            _ => return Err(perr(format!("bad suite line {line:?}"))),
        }
    }
    suite.check_disjoint()?;
    Ok(suite)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub pose: Pose,
    pub action: Action,
    pub logits: [f64; N_ACTIONS],
    /// Set on the step after which a trigger fired.
    pub trigger: Option<TriggerKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEnd {
    pub final_pose: Pose,
    pub stopped: bool,
    pub success: bool,
    pub path_length: f64,
    pub mode: RolloutMode,
    pub stream: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectRecord {
    /// Index into the pose sequence (step poses then the final pose).
    pub anchor_step: usize,
    pub anchor_pose: Pose,
    pub oracle_actions: Vec<Action>,
}

/// One traced episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub episode: Episode,
    pub steps: Vec<TraceStep>,
    pub end: TraceEnd,
    pub rect: Option<RectRecord>,
}

impl TraceRecord {
    pub fn new(episode: &Episode, traj: &Trajectory, demo: Option<&RectificationDemo>) -> Self {
        let steps = traj
            .steps
            .iter()
            .map(|s| TraceStep {
                t: s.t,
                pose: s.pose_before,
                action: s.action,
                logits: s.logits,
                trigger: traj.trigger.filter(|&(_, t)| t == s.t).map(|(k, _)| k),
            })
            .collect();
        Self {
            episode: episode.clone(),
            steps,
            end: TraceEnd {
                final_pose: traj.final_pose,
                stopped: traj.stopped,
                success: traj.success,
                path_length: traj.path_length,
                mode: traj.mode,
                stream: traj.rng_stream_id,
            },
            rect: demo.map(|d| RectRecord {
                anchor_step: d.anchor_step,
                anchor_pose: d.anchor_pose,
                oracle_actions: d.oracle_actions.clone(),
            }),
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.steps.iter().map(|s| s.pose).chain(std::iter::once(self.end.final_pose)).collect()
    }

    pub fn trigger(&self) -> Option<(TriggerKind, usize)> {
        self.steps.iter().find_map(|s| s.trigger.map(|k| (k, s.t)))
    }
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut s = format!("{TRACE_MAGIC}\n");
    for r in records {
        s.push_str("episode\n");
        write_episode_body(&r.episode, &mut s);
        let id = r.episode.id;
        for st in &r.steps {
            let logits: Vec<String> = st.logits.iter().map(|v| v.to_string()).collect();
            let trig = st.trigger.map_or("-", |k| k.name());
            let _ = writeln!(s, "step {id} {} {} {} {} {trig}", st.t, st.pose, st.action.short(), logits.join(","));
        }
        let e = &r.end;
        let mode = match e.mode {
            RolloutMode::Greedy => "greedy",
            RolloutMode::Sampled => "sampled",
        };
        let stream = e.stream.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "end {id} {} {} {} {} {mode} {stream}",
            e.final_pose,
            u8::from(e.stopped),
            u8::from(e.success),
            e.path_length
        );
        if let Some(rect) = &r.rect {
            let _ = writeln!(
                s,
                "rect {id} {} {} {}",
                rect.anchor_step,
                rect.anchor_pose,
                format_actions(&rect.oracle_actions)
            );
        }
    }
    s
}

fn parse_flag(s: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(perr(format!("bad flag {s:?}"))),
    }
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = Lines::new(text);
    lines.exact(TRACE_MAGIC)?;
    let mut out = Vec::new();
    while lines.peek().is_some() {
        lines.exact("episode")?;
        let episode = read_episode_body(&mut lines)?;
        let id = episode.id.to_string();
        let mut steps = Vec::new();
        while lines.peek().is_some_and(|l| l.starts_with("step ")) {
            let n = lines.n + 1;
            let rest = lines.field("step")?;
            let parts: Vec<&str> = rest.split(' ').collect();
            let [eid, t, pose, action, logits, trig] = parts[..] else {
                return Err(perr(format!("line {n}: malformed step record")));
            };
            if eid != id {
                return Err(perr(format!("line {n}: step belongs to episode {eid}, expected {id}")));
            }
            let mut chars = action.chars();
            let action = match (chars.next(), chars.next()) {
                (Some(c), None) => action_from_char(c)?,
                _ => return Err(perr(format!("line {n}: bad action {action:?}"))),
            };
            let lv: Vec<f64> = logits.split(',').map(|v| num(v, "logit")).collect::<Result<_>>()?;
            let logits: [f64; N_ACTIONS] = lv.try_into().map_err(|_| perr(format!("line {n}: need 4 logits")))?;
            let trigger = match trig {
                "-" => None,
                k => Some(TriggerKind::from_name(k).ok_or_else(|| perr(format!("line {n}: bad trigger {k:?}")))?),
            };
            let t: usize = num(t, "t")?;
            if t != steps.len() {
                return Err(perr(format!("line {n}: step index {t} out of order")));
            }
            steps.push(TraceStep { t, pose: parse_pose(pose)?, action, logits, trigger });
        }
        let rest = lines.field("end")?;
        let parts: Vec<&str> = rest.split(' ').collect();
        let [eid, pose, stopped, success, path_length, mode, stream] = parts[..] else {
            return Err(perr("malformed end record"));
        };
        if eid != id {
            return Err(perr(format!("end record belongs to episode {eid}, expected {id}")));
        }
        let end = TraceEnd {
            final_pose: parse_pose(pose)?,
            stopped: parse_flag(stopped)?,
            success: parse_flag(success)?,
            path_length: num(path_length, "path length")?,
            mode: match mode {
                "greedy" => RolloutMode::Greedy,
                "sampled" => RolloutMode::Sampled,
                m => return Err(perr(format!("bad mode {m:?}"))),
            },
            stream: if stream == "-" { None } else { Some(num(stream, "stream")?) },
        };
        let mut rect = None;
        if lines.peek().is_some_and(|l| l.starts_with("rect ")) {
            let rest = lines.field("rect")?;
            let parts: Vec<&str> = rest.split(' ').collect();
            let [eid, anchor, pose, actions] = parts[..] else {
                return Err(perr("malformed rect record"));
            };
            if eid != id {
                return Err(perr(format!("rect record belongs to episode {eid}, expected {id}")));
            }
            rect = Some(RectRecord {
                anchor_step: num(anchor, "anchor step")?,
                anchor_pose: parse_pose(pose)?,
                oracle_actions: parse_actions(actions)?,
            });
        }
        out.push(TraceRecord { episode, steps, end, rect });
    }
    Ok(out)
}

/// Replay failure: the recorded pose at `step` disagrees with re-execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub episode_id: u64,
    /// Index into the pose sequence; equal to the step count for the final pose.
    pub step: usize,
    pub expected: Pose,
    pub recorded: Pose,
    pub detail: &'static str,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "episode {}: {} at step {} (replayed {}, recorded {})",
            self.episode_id, self.detail, self.step, self.expected, self.recorded
        )
    }
}

/// Re-executes the recorded actions against the serialized world.
pub fn verify_trace(record: &TraceRecord) -> std::result::Result<(), Divergence> {
    let ep = &record.episode;
    let mut pose = ep.start;
    let div = |step, expected, recorded, detail| Divergence { episode_id: ep.id, step, expected, recorded, detail };
    for (i, s) in record.steps.iter().enumerate() {
        if s.pose != pose {
            return Err(div(i, pose, s.pose, "pose mismatch"));
        }
        pose = step(&ep.world, pose, s.action);
    }
    if record.end.final_pose != pose {
        return Err(div(record.steps.len(), pose, record.end.final_pose, "final pose mismatch"));
    }
    if let Some(rect) = &record.rect {
        let poses = record.poses();
        let at = poses.get(rect.anchor_step).copied().unwrap_or(record.end.final_pose);
        if rect.anchor_step >= poses.len() || at != rect.anchor_pose {
            return Err(div(rect.anchor_step, at, rect.anchor_pose, "anchor mismatch"));
        }
        let mut p = rect.anchor_pose;
        for &a in &rect.oracle_actions {
            p = step(&ep.world, p, a);
        }
        if rect.oracle_actions.last() != Some(&Action::Stop) || !ep.in_goal_zone(p.cell()) {
            return Err(div(rect.anchor_step, p, rect.anchor_pose, "oracle continuation misses the goal"));
        }
    }
    Ok(())
}

/// ASCII map: `#` wall, `o` reference, `*` executed, `+` both, `S` start,
/// `G` goal, `A` anchor, `X` trigger position.
pub fn render_map(record: &TraceRecord) -> Vec<String> {
    let ep = &record.episode;
    let w = &ep.world;
    let mut grid: Vec<Vec<char>> = w.ascii_rows().iter().map(|r| r.chars().collect()).collect();
    let put = |c: (i32, i32), ch: char, grid: &mut Vec<Vec<char>>| {
        if w.in_bounds(c) {
            grid[c.1 as usize][c.0 as usize] = ch;
        }
    };
    for &c in &ep.reference_waypoints {
        put(c, 'o', &mut grid);
    }
    for p in record.poses() {
        let c = p.cell();
        let cur = grid[c.1 as usize][c.0 as usize];
        put(c, if cur == 'o' || cur == '+' { '+' } else { '*' }, &mut grid);
    }
    if let Some((_, t)) = record.trigger() {
        let poses = record.poses();
        put(poses[(t + 1).min(poses.len() - 1)].cell(), 'X', &mut grid);
    }
    if let Some(rect) = &record.rect {
        put(rect.anchor_pose.cell(), 'A', &mut grid);
    }
    put(ep.start.cell(), 'S', &mut grid);
    put(ep.goal, 'G', &mut grid);
    grid.into_iter().map(|r| r.into_iter().collect()).collect()
}

/// A parameter vector tagged with the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: PolicyParams,
}

fn dims_line(c: &PolicyConfig) -> String {
    format!(
        "vocab={} obs_k={} d_embed={} d_obs={} d_act={} d_hidden={} window={}",
        c.vocab, c.obs_k, c.d_embed, c.d_obs, c.d_act, c.d_hidden, c.window
    )
}

fn parse_dims(s: &str) -> Result<PolicyConfig> {
    let kv: Vec<(String, String)> = s
        .split(' ')
        .map(|p| p.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| perr("bad dims")))
        .collect::<Result<_>>()?;
    if kv.len() != 7 {
        return Err(perr("bad dims"));
    }
    apply_kv(&PolicyConfig::default(), &kv).map_err(|e| perr(e.to_string()))
}

fn ckpt_payload(params: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8 + 256);
    for b in params.config.blocks() {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.rows as u32).to_le_bytes());
        out.extend_from_slice(&(b.cols as u32).to_le_bytes());
        for v in &params.data[b.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let payload = ckpt_payload(&ckpt.params);
    let mut out = format!(
        "{CKPT_MAGIC}\nconfig-hash {}\nparams {}\ndims {}\nchecksum {}\ndata\n",
        ckpt.config_hash,
        ckpt.params.len(),
        dims_line(&ckpt.params.config),
        sha256_hex(&payload)
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Header problems are [`Error::Parse`]; a payload that fails the stored
/// digest is [`Error::Checksum`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let marker = b"\ndata\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| perr("checkpoint header not terminated"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| perr("checkpoint header is not text"))?;
    let payload = &bytes[split + marker.len()..];
    let mut lines = Lines::new(header);
    lines.exact(CKPT_MAGIC)?;
    let config_hash = lines.field("config-hash")?.to_string();
    let count: usize = num(lines.field("params")?, "parameter count")?;
    let config = parse_dims(lines.field("dims")?)?;
    let checksum = lines.field("checksum")?.to_string();
    if lines.peek().is_some() {
        return Err(perr("unexpected checkpoint header line"));
    }
    if count != config.param_count() {
        return Err(perr(format!("parameter count {count} does not match dims ({})", config.param_count())));
    }
    if sha256_hex(payload) != checksum {
        return Err(Error::Checksum);
    }
    let mut params = PolicyParams::zeros(config);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = payload.get(pos..pos + n).ok_or_else(|| perr("truncated checkpoint payload"))?;
        pos += n;
        Ok(s)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    for b in config.blocks() {
        let name_len = u32_at(take(4)?);
        let name = take(name_len)?;
        let rows = u32_at(take(4)?);
        let cols = u32_at(take(4)?);
        if name != b.name.as_bytes() || rows != b.rows || cols != b.cols {
            return Err(perr(format!("unexpected block (expected {} {}x{})", b.name, b.rows, b.cols)));
        }
        for v in &mut params.data[b.range()] {
            *v = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
    }
    if pos != payload.len() {
        return Err(perr("trailing bytes after checkpoint blocks"));
    }
    Ok(Checkpoint { config_hash, params })
}

/// Key-value run manifest. `start_timestamp` is the only non-deterministic
/// field.
pub fn write_manifest(cfg: &ExperimentConfig, outputs: &[(&str, String)], start_timestamp: &str) -> String {
    let mut s = format!("{MANIFEST_MAGIC}\n");
    let _ = writeln!(s, "tool.version {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "run.seed {}", cfg.run.seed);
    let _ = writeln!(s, "start_timestamp {start_timestamp}");
    let _ = writeln!(s, "config.hash {}", cfg.hash());
    let _ = writeln!(s, "world.hash {}", cfg.world_hash());
    for (name, path) in outputs {
        let _ = writeln!(s, "output.{name} {path}");
    }
    for (k, v) in cfg.overrides() {
        let _ = writeln!(s, "override.{k} {v}");
    }
    for line in cfg.to_kv_text().lines() {
        let (k, v) = line.split_once('=').expect("kv line");
        let _ = writeln!(s, "config.{k} {v}");
    }
    s
}
