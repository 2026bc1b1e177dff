//! Deployment-learning loop.
//!
//! Round structure: warm-start π_1 on the demos (𝒟^0), deploy π_1 to build
//! 𝒟^1, then for i = 1..=X train π_{i+1} on a frozen snapshot of 𝒟^i while
//! π_i is deployed to build 𝒟^{i+1}. Both activities of an iteration only
//! read data that existed before it started, so running them concurrently
//! or one after the other gives the same bits.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    class_counts, write_dataset, write_json, ClassCounts, ClassLabel, Dataset, Sample, Source, Trajectory,
};
use crate::env::{EnvAction, EnvState, Episode, TaskConfig};
use crate::error::{Error, Result};
use crate::labeling::{relabel_preintv, LabelingConfig};
use crate::memory::{MemoryBuffer, Strategy};
use crate::metrics::{timeline_rows, workload, TimelineRow, WorkloadMetrics};
use crate::oracle::{generate_demo, InterventionModel, ScriptedOperator};
use crate::policy::{PolicyArch, PolicyParams};
use crate::seeding::derive;
use crate::trainer::{top_k_checkpoint_average, train, TrainConfig, TrainOutcome, TrainingLog};
use crate::weighting::WeightingScheme;

/// Checkpoints averaged for the reported success of a policy.
pub const TOP_K: usize = 3;

/// One step of the team policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: EnvAction,
    pub label: ClassLabel,
}

/// Whoever may take control away from the robot during deployment.
pub trait Intervenor {
    fn source(&self) -> Source;

    fn begin_episode(&mut self, _episode_seed: u64, _initial: &EnvState) -> Result<()> {
        Ok(())
    }

    /// Executed action and its label for the current step.
    fn decide(&mut self, state: &EnvState, robot_action: EnvAction, task: &TaskConfig) -> Result<Decision>;

    fn end_episode(&mut self, _traj: &Trajectory) -> Result<()> {
        Ok(())
    }
}

/// The scripted operator: monitor plus human-gated arbitration.
#[derive(Debug, Clone)]
pub struct ScriptedIntervenor {
    op: ScriptedOperator,
}

impl ScriptedIntervenor {
    pub fn new(model: InterventionModel) -> Self {
        ScriptedIntervenor {
            op: ScriptedOperator::new(model),
        }
    }
}

impl Intervenor for ScriptedIntervenor {
    fn source(&self) -> Source {
        Source::ScriptedOracle
    }

    fn begin_episode(&mut self, _episode_seed: u64, _initial: &EnvState) -> Result<()> {
        self.op.reset();
        Ok(())
    }

    fn decide(&mut self, state: &EnvState, robot_action: EnvAction, task: &TaskConfig) -> Result<Decision> {
        let (action, label) = self.op.step(state, robot_action, task);
        Ok(Decision { action, label })
    }
}

/// One deployment episode under the team policy. Robot actions are sampled
/// from the policy with an rng keyed by the episode seed. Labels are raw
/// (not yet relabeled).
pub fn rollout(
    policy: &PolicyParams,
    task: &TaskConfig,
    intervenor: &mut dyn Intervenor,
    episode_seed: u64,
    round: u32,
) -> Result<Trajectory> {
    let mut ep = Episode::new(task, episode_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive(episode_seed, "robot-action", 0));
    intervenor.begin_episode(episode_seed, ep.state())?;
    let mut samples = Vec::with_capacity(task.horizon as usize);
    let mut success = false;
    while !ep.is_done() {
        let state = *ep.state();
        let obs = state.observation();
        let robot_action = policy.sample_action(&obs, &mut rng, false);
        let d = intervenor.decide(&state, robot_action, task)?;
        let out = ep.step(&d.action)?;
        samples.push(Sample {
            t: state.t,
            state: obs.to_vec(),
            action: d.action.to_array().to_vec(),
            reward: out.reward,
            label: d.label,
        });
        success = out.success;
    }
    let traj = Trajectory::new(samples, round, episode_seed, success, intervenor.source())?;
    intervenor.end_episode(&traj)?;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stochastic stream is derived from it.
    pub seed: u64,
    pub task: TaskConfig,
    /// Initial demonstrations (M).
    #[serde(alias = "M")]
    pub demos: usize,
    /// Deployment-learning iterations (X).
    #[serde(alias = "X")]
    pub rounds: usize,
    /// Intervention samples per deployment round; defaults to a third of the demo samples.
    pub quota: Option<usize>,
    /// Buffer capacity in trajectories (L); `None` keeps everything.
    #[serde(alias = "L")]
    pub capacity: Option<usize>,
    pub strategy: Strategy,
    pub protect_demos: bool,
    pub max_episodes_per_round: usize,
    pub parallel: bool,
    pub weighting: WeightingScheme,
    pub labeling: LabelingConfig,
    pub oracle: InterventionModel,
    pub train: TrainConfig,
    pub policy: PolicyArch,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: TaskConfig::default().noisy(),
            demos: 50,
            rounds: 3,
            quota: None,
            capacity: None,
            strategy: Strategy::Lfi,
            protect_demos: true,
            max_episodes_per_round: 200,
            parallel: true,
            weighting: WeightingScheme::sirius(),
            labeling: LabelingConfig::default(),
            oracle: InterventionModel::default(),
            train: TrainConfig::default(),
            policy: PolicyArch::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: RunConfig = crate::data::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.demos == 0 {
            return Err(Error::Config("demos (M) must be >= 1".into()));
        }
        if self.quota == Some(0) {
            return Err(Error::Config("quota must be >= 1".into()));
        }
        if self.max_episodes_per_round == 0 {
            return Err(Error::Config("max_episodes_per_round must be >= 1".into()));
        }
        if self.capacity.is_some_and(|l| self.protect_demos && l < self.demos) {
            return Err(Error::Config(format!(
                "capacity {} cannot hold the {} protected demos",
                self.capacity.unwrap(),
                self.demos
            )));
        }
        self.task.validate()?;
        self.weighting.validate()?;
        self.oracle.validate()?;
        self.train.validate()?;
        self.policy.validate()
    }

    /// Per-round intervention quota for a given demo sample count.
    pub fn quota_for(&self, demo_samples: usize) -> usize {
        self.quota.unwrap_or(demo_samples.div_ceil(3)).max(1)
    }

    /// Training config for π_{policy_index}, with its own derived seed.
    pub fn train_config(&self, policy_index: usize) -> TrainConfig {
        TrainConfig {
            seed: derive(self.seed, "train", policy_index as u64),
            ..self.train.clone()
        }
    }

    pub fn demo_seed(&self, j: usize) -> u64 {
        derive(self.seed, "demo", j as u64)
    }

    pub fn episode_seed(&self, round: u32, k: usize) -> u64 {
        derive(derive(self.seed, "deploy", round as u64), "episode", k as u64)
    }
}

/// Result of one deployment round.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub round: u32,
    /// Relabeled trajectories in collection order.
    pub trajectories: Vec<Trajectory>,
    pub intv_samples: usize,
    pub quota: usize,
}

impl Deployment {
    pub fn quota_reached(&self) -> bool {
        self.intv_samples >= self.quota
    }
}

/// Runs episodes until the intervention quota is met or the episode cap is
/// hit. Fails with `QuotaUnreachable` only if the cap is hit without a
/// single intervention.
pub fn deploy_round(
    policy: &PolicyParams,
    cfg: &RunConfig,
    round: u32,
    quota: usize,
    intervenor: &mut dyn Intervenor,
) -> Result<Deployment> {
    let mut trajectories = Vec::new();
    let mut intv = 0usize;
    for k in 0..cfg.max_episodes_per_round {
        if intv >= quota {
            break;
        }
        let raw = rollout(policy, &cfg.task, intervenor, cfg.episode_seed(round, k), round)?;
        let traj = relabel_preintv(&raw, cfg.labeling)?;
        intv += traj.count(ClassLabel::Intv);
        trajectories.push(traj);
    }
    if intv == 0 {
        return Err(Error::QuotaUnreachable {
            episodes: trajectories.len(),
        });
    }
    if intv < quota {
        log::warn!(
            "round {round}: episode cap {} hit with {intv}/{quota} intervention samples",
            cfg.max_episodes_per_round
        );
    }
    Ok(Deployment {
        round,
        trajectories,
        intv_samples: intv,
        quota,
    })
}

/// Demonstrations for a run, in seed order.
pub fn collect_demos(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    (0..cfg.demos)
        .map(|j| generate_demo(&cfg.task, cfg.demo_seed(j)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub trajectories: usize,
    pub samples: usize,
    pub intv_samples: usize,
    pub evicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    /// π index: the policy trained on this round's dataset.
    pub index: usize,
    pub top3_success: f64,
    pub best_success: Option<f64>,
    pub best_epoch: Option<usize>,
    pub class_dist: [f64; 4],
    pub target_dist: [f64; 4],
    pub weights: [f64; 4],
    pub degraded: Vec<ClassLabel>,
    pub checkpoint: String,
}

/// Bookkeeping for round `round`: the data collected in it and the policy
/// trained on the resulting dataset 𝒟^round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub episodes: usize,
    pub counts: ClassCounts,
    pub quota: Option<usize>,
    pub quota_reached: Option<bool>,
    pub workload: Option<WorkloadMetrics>,
    pub buffer: BufferStats,
    pub policy: PolicySummary,
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    /// Data collected by the deployment of the last iteration; no policy is trained on it.
    pub final_deployment: Option<Vec<Trajectory>>,
    /// π_1..π_{X+1}, best checkpoints.
    pub policies: Vec<PolicyParams>,
    pub training_logs: Vec<TrainingLog>,
    /// Every collected trajectory by round (index 0: demos).
    pub rounds: Vec<Vec<Arc<Trajectory>>>,
}

impl RunResult {
    pub fn success_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.policy.top3_success).collect()
    }
}

fn policy_summary(index: usize, out: &TrainOutcome) -> PolicySummary {
    PolicySummary {
        index,
        top3_success: top_k_checkpoint_average(&out.log, TOP_K)
            .unwrap_or_else(|_| out.log.evals().map(|(_, s)| s).fold(0.0, f64::max)),
        best_success: out.log.evals().map(|(_, s)| s).reduce(f64::max),
        best_epoch: out.best_epoch,
        class_dist: out.class_dist.as_array(),
        target_dist: out.target_dist.as_array(),
        weights: out.weights.as_array(),
        degraded: out.degraded.clone(),
        checkpoint: format!("policy_{index}.bin"),
    }
}

fn buffer_stats(buf: &MemoryBuffer, evicted: usize) -> BufferStats {
    BufferStats {
        trajectories: buf.len(),
        samples: buf.trajectories().map(|t| t.len()).sum(),
        intv_samples: buf.total_interventions(),
        evicted,
    }
}

/// Runs the full loop with the scripted operator.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    run_with(cfg, &mut ScriptedIntervenor::new(cfg.oracle.clone()))
}

/// Runs the full loop with a caller-provided intervenor.
pub fn run_with(cfg: &RunConfig, intervenor: &mut dyn Intervenor) -> Result<RunResult> {
    cfg.validate()?;
    let task_id = cfg.task.task_id.clone();
    let mut buffer = MemoryBuffer::new(cfg.capacity, cfg.strategy, derive(cfg.seed, "buffer", 0))
        .with_protect_demos(cfg.protect_demos);

    let demos = collect_demos(cfg).map_err(|e| e.in_round(0))?;
    let demo_samples: usize = demos.iter().map(|t| t.len()).sum();
    let quota = cfg.quota_for(demo_samples);
    let demos: Vec<Arc<Trajectory>> = demos.into_iter().map(Arc::new).collect();
    let evicted = buffer
        .insert_many(demos.iter().cloned())
        .map_err(|e| e.in_round(0))?
        .len();
    let d0 = buffer.snapshot(&task_id);
    let stats0 = buffer_stats(&buffer, evicted);

    let warm = train(
        &d0,
        &WeightingScheme::unweighted(),
        &cfg.policy,
        &cfg.train_config(1),
        &cfg.task,
    )
    .map_err(|e| e.in_round(0))?;
    log::info!(
        "warm-start policy: top-{TOP_K} success {:.3}",
        policy_summary(1, &warm).top3_success
    );

    let mut records = vec![RoundRecord {
        round: 0,
        episodes: demos.len(),
        counts: class_counts(&d0),
        quota: None,
        quota_reached: None,
        workload: None,
        buffer: stats0,
        policy: policy_summary(1, &warm),
    }];
    let mut policies = vec![warm.best.clone()];
    let mut training_logs = vec![warm.log.clone()];
    let mut rounds = vec![demos];

    // Initial deployment of π_1 builds 𝒟^1.
    let dep = deploy_round(&policies[0], cfg, 1, quota, intervenor).map_err(|e| e.in_round(1))?;
    let mut pending = Some(dep);
    let mut final_deployment = None;

    for i in 1..=cfg.rounds {
        // Fold in the data collected for 𝒟^i, then freeze it.
        let dep = pending.take().expect("deployment for this round");
        let new: Vec<Arc<Trajectory>> = dep.trajectories.iter().cloned().map(Arc::new).collect();
        let evicted = buffer
            .insert_many(new.iter().cloned())
            .map_err(|e| e.in_round(i))?
            .len();
        let snapshot = buffer.snapshot(&task_id);
        let stats = buffer_stats(&buffer, evicted);
        let round_trajs: Vec<&Trajectory> = new.iter().map(|t| t.as_ref()).collect();
        let workload = workload(round_trajs.iter().copied()).ok();
        let counts = ClassCounts::of_trajectories(round_trajs.iter().copied());
        let (episodes, quota_reached) = (new.len(), dep.quota_reached());
        rounds.push(new);

        // Train π_{i+1} on 𝒟^i while π_i builds 𝒟^{i+1}.
        let deploy_policy = &policies[i - 1];
        let train_cfg = cfg.train_config(i + 1);
        let learn = || train(&snapshot, &cfg.weighting, &cfg.policy, &train_cfg, &cfg.task);
        let next_round = i as u32 + 1;
        let (trained, deployed) = if cfg.parallel {
            std::thread::scope(|s| {
                let handle = s.spawn(learn);
                let deployed = deploy_round(deploy_policy, cfg, next_round, quota, intervenor);
                (handle.join().expect("learning thread panicked"), deployed)
            })
        } else {
            let trained = learn();
            (trained, deploy_round(deploy_policy, cfg, next_round, quota, intervenor))
        };
        let trained = trained.map_err(|e| e.in_round(i))?;
        let deployed = deployed.map_err(|e| e.in_round(i + 1))?;
        log::info!(
            "round {i}: {episodes} episodes, policy {} top-{TOP_K} success {:.3}",
            i + 1,
            policy_summary(i + 1, &trained).top3_success
        );

        records.push(RoundRecord {
            round: i,
            episodes,
            counts,
            quota: Some(quota),
            quota_reached: Some(quota_reached),
            workload,
            buffer: stats,
            policy: policy_summary(i + 1, &trained),
        });
        policies.push(trained.best);
        training_logs.push(trained.log);
        if i == cfg.rounds {
            final_deployment = Some(deployed.trajectories);
        } else {
            pending = Some(deployed);
        }
    }

    Ok(RunResult {
        records,
        final_deployment,
        policies,
        training_logs,
        rounds,
    })
}

pub const RECORDS_FILE: &str = "rounds.json";
pub const CONFIG_FILE: &str = "config.json";

/// Writes the run directory: config copy, per-round trajectories, checkpoints,
/// training logs, round records, workload CSV and ownership timeline.
pub fn write_run_dir(dir: &Path, cfg: &RunConfig, result: &RunResult) -> Result<()> {
    let mk = |p: &PathBuf| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mk(&dir.to_path_buf())?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let task_id = &cfg.task.task_id;

    let traj_dir = dir.join("trajectories");
    let mut all_rounds: Vec<Vec<Arc<Trajectory>>> = result.rounds.clone();
    if let Some(fd) = &result.final_deployment {
        all_rounds.push(fd.iter().cloned().map(Arc::new).collect());
    }
    let mut timeline: Vec<TimelineRow> = Vec::new();
    for (r, trajs) in all_rounds.iter().enumerate() {
        let ds = Dataset {
            task_id: task_id.clone(),
            trajectories: trajs.clone(),
        };
        write_dataset(&traj_dir.join(format!("round_{r:02}")), &ds)?;
        if r > 0 {
            for (k, t) in trajs.iter().enumerate() {
                timeline.extend(timeline_rows(&format!("r{r}_e{k}"), t));
            }
        }
    }

    let ckpt = dir.join("checkpoints");
    mk(&ckpt)?;
    let logs = dir.join("training_logs");
    mk(&logs)?;
    for (i, (p, log)) in result.policies.iter().zip(&result.training_logs).enumerate() {
        p.save(&ckpt.join(format!("policy_{}.bin", i + 1)))?;
        log.save_csv(&logs.join(format!("policy_{}.csv", i + 1)))?;
    }
    write_json(&dir.join(RECORDS_FILE), &result.records)?;
    crate::metrics::write_round_csv(&dir.join("metrics.csv"), &result.records)?;
    crate::metrics::write_timeline_csv(&dir.join("timeline.csv"), &timeline)?;
    Ok(())
}
