//! Greedy-routed policy optimization for instruction-following navigation on
//! a grid world: a geodesic oracle, a history-conditioned softmax policy with
//! analytic gradients, GRPO on proficient episodes and history-aware
//! rectification on failed ones, plus DAgger and behavior-cloning baselines.

pub mod baselines;
pub mod config;
pub mod error;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rectify;
pub mod rng;
pub mod rollout;
pub mod suite;
pub mod trainer;
pub mod world;

pub use baselines::{variant_config, AblationVariant};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use grpo::{GrpoConfig, RewardConfig, RolloutGroup};
pub use metrics::{EpisodeResult, MetricsReport};
pub use optim::{AdamWConfig, OptimizerState};
pub use oracle::{GeodesicField, OraclePlan};
pub use policy::{ActionDistribution, HistoryWindow, PolicyConfig, PolicyParams, PolicySnapshot, SnapshotRole};
pub use rectify::{ProgressMode, RectConfig, RectificationDemo};
pub use rollout::{OraclePolicy, Policy, RolloutConfig, Trajectory, TriggerKind, TriggerMode};
pub use suite::{BenchmarkSuite, Split, SuiteParams};
pub use trainer::{CostTotals, EvalRow, Route, TrainConfig, TrainOutput, UpdateReport};
pub use world::{Action, Cell, Episode, EpisodeParams, GridWorld, Heading, InstructionToken, Observation, Pose, WorldParams};
