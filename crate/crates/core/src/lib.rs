//! Simulation core for human-in-the-loop robot learning.
//!
//! A deployed policy runs a 2-D pick-and-insert task while a scripted
//! operator watches and takes over when things go wrong. Collected
//! trajectories are relabeled, reweighted by class and used to retrain the
//! policy with behavioral cloning. A bounded memory buffer decides which
//! trajectories survive between rounds.

pub mod adam;
pub mod data;
pub mod deploy;
pub mod env;
mod error;
pub mod experiments;
pub mod labeling;
pub mod memory;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod seeding;
pub mod trainer;
pub mod weighting;

pub use data::{ClassDistribution, ClassLabel, Dataset, Sample, Source, Trajectory};
pub use deploy::{run, Intervenor, RoundRecord, RunConfig, RunResult};
pub use env::{EnvAction, EnvState, Episode, TaskConfig};
pub use error::{Error, Result};
pub use labeling::{relabel_preintv, LabelingConfig};
pub use memory::{MemoryBuffer, Strategy};
pub use oracle::{InterventionModel, Monitor, ScriptedOperator};
pub use policy::{PolicyArch, PolicyParams};
pub use trainer::{evaluate, train, TrainConfig};
pub use weighting::{Ablation, SchemeKind, WeightingScheme};
