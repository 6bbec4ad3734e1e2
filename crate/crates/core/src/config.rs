//! Flat `section.key=value` experiment configuration.
//!
//! Values are applied on top of the defaults through their serde
//! representation, so every key must already exist and keeps its type.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::baselines::AblationVariant;
use crate::error::{Error, Result};
use crate::grpo::{GrpoConfig, RewardConfig};
use crate::optim::AdamWConfig;
use crate::policy::PolicyConfig;
use crate::rectify::RectConfig;
use crate::rollout::RolloutConfig;
use crate::suite::{BenchmarkSuite, SuiteParams};
use crate::trainer::TrainConfig;
use crate::world::{EpisodeParams, InstructionToken, WorldParams};

fn flatten_into(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Sorted `(dotted key, value)` pairs of a serializable value.
pub fn to_kv<T: Serialize>(value: &T) -> Result<Vec<(String, String)>> {
    let v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    flatten_into("", &v, &mut out);
    Ok(out)
}

fn parse_leaf(key: &str, old: &Value, raw: &str) -> Result<Value> {
    let bad = || Error::Config(format!("{key}: cannot parse {raw:?}"));
    Ok(match old {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let f: f64 = raw.parse().map_err(|_| bad())?;
            Value::Number(serde_json::Number::from_f64(f).ok_or_else(bad)?)
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => return Err(Error::Config(format!("{key} is not a settable value"))),
    })
}

/// Applies dotted-key overrides to `base`. Unknown keys are rejected.
pub fn apply_kv<T: Serialize + DeserializeOwned>(base: &T, pairs: &[(String, String)]) -> Result<T> {
    let mut root = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    for (key, raw) in pairs {
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m: &mut Map<String, Value>| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
        }
        *node = parse_leaf(key, node, raw)?;
    }
    serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSection {
    pub variant: AblationVariant,
    pub pretrain_episodes: usize,
    pub pretrain_lr: f64,
    pub train_episodes: usize,
    pub eval_every: usize,
    pub batch_episodes: usize,
    /// Held-out episodes used for periodic evaluation (0 = all).
    pub eval_episodes: usize,
    pub early_stop: bool,
    pub early_stop_window: usize,
    pub early_stop_min_delta: f64,
    /// Training episodes whose traces are written as samples.
    pub trace_samples: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            variant: t.variant,
            pretrain_episodes: t.pretrain_episodes,
            pretrain_lr: t.pretrain_lr,
            train_episodes: t.train_episodes,
            eval_every: t.eval_every,
            batch_episodes: t.batch_episodes,
            eval_episodes: 0,
            early_stop: t.early_stop,
            early_stop_window: t.early_stop_window,
            early_stop_min_delta: t.early_stop_min_delta,
            trace_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub world: WorldParams,
    pub episode: EpisodeParams,
    pub suite: SuiteParams,
    pub policy: PolicyConfig,
    pub rollout: RolloutConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub rect: RectConfig,
    pub optim: AdamWConfig,
    pub trainer: TrainerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunSection { seed: 0, name: "default".into() },
            world: WorldParams::default(),
            episode: EpisodeParams::default(),
            suite: SuiteParams::default(),
            policy: PolicyConfig::default(),
            rollout: RolloutConfig::default(),
            grpo: GrpoConfig::default(),
            reward: RewardConfig::default(),
            rect: RectConfig::default(),
            optim: AdamWConfig::default(),
            trainer: TrainerSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = apply_kv(&Self::default(), &parse_kv_lines(text)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let cfg = apply_kv(self, pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = InstructionToken::vocab_size(self.episode.max_run);
        if self.policy.vocab != vocab {
            return Err(Error::Config(format!(
                "policy.vocab is {} but episode.max_run={} needs {vocab}",
                self.policy.vocab, self.episode.max_run
            )));
        }
        if self.policy.window == 0 || self.policy.obs_k == 0 {
            return Err(Error::Config("policy.window and policy.obs_k must be positive".into()));
        }
        self.train_config().validate()
    }

    /// Canonical text form: one sorted `key=value` line per field.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in to_kv(self).expect("config serializes") {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Fields that differ from the defaults.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let defaults = to_kv(&Self::default()).expect("config serializes");
        to_kv(self)
            .expect("config serializes")
            .into_iter()
            .zip(defaults)
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a)
            .collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_kv_text().as_bytes())
    }

    /// Content hash of the world generator settings.
    pub fn world_hash(&self) -> String {
        let mut s = String::new();
        let generator = serde_json::json!({ "world": self.world, "episode": self.episode, "suite": self.suite });
        for (k, v) in to_kv(&generator).expect("serializes") {
            s.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(s.as_bytes())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            run_seed: self.run.seed,
            variant: self.trainer.variant,
            optim: self.optim,
            pretrain_lr: self.trainer.pretrain_lr,
            grpo: self.grpo,
            rect: self.rect,
            reward: self.reward,
            rollout: self.rollout,
            pretrain_episodes: self.trainer.pretrain_episodes,
            train_episodes: self.trainer.train_episodes,
            eval_every: self.trainer.eval_every,
            batch_episodes: self.trainer.batch_episodes,
            early_stop: self.trainer.early_stop,
            early_stop_window: self.trainer.early_stop_window,
            early_stop_min_delta: self.trainer.early_stop_min_delta,
        }
    }

    pub fn build_suite(&self) -> Result<BenchmarkSuite> {
        BenchmarkSuite::generate(&self.run.name, &self.suite, &self.world, &self.episode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_kv_text();
        assert!(text.contains("grpo.clip_epsilon=0.2\n"));
        assert!(text.contains("trainer.variant=full\n"));
        assert!(!text.contains("triggers"));
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_kv_text(), text);
    }

    #[test]
    fn overrides_keep_types() {
        let cfg = ExperimentConfig::parse("# comment\ngrpo.clip_epsilon = 0.3\nrun.seed=7\ntrainer.variant=dagger\n\nrect.progress_mode=furthest\n")
            .unwrap();
        assert_eq!(cfg.grpo.clip_epsilon, 0.3);
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.trainer.variant, AblationVariant::Dagger);
        assert_eq!(cfg.rect.progress_mode, crate::rectify::ProgressMode::Furthest);
        let o = cfg.overrides();
        assert_eq!(o.len(), 4);
        assert!(o.contains(&("run.seed".into(), "7".into())));
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(ExperimentConfig::parse("grpo.nope=1").is_err());
        assert!(ExperimentConfig::parse("grpo=1").is_err());
        assert!(ExperimentConfig::parse("run.seed=-1").is_err());
        assert!(ExperimentConfig::parse("run.seed").is_err());
        assert!(ExperimentConfig::parse("run.seed=1\nrun.seed=2").is_err());
        assert!(ExperimentConfig::parse("trainer.variant=ppo").is_err());
        assert!(ExperimentConfig::parse("grpo.group_size=1").is_err());
        assert!(ExperimentConfig::parse("episode.max_run=4").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::parse("optim.lr=0.001").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
    }
}
