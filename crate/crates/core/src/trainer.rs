//! Weighted behavioral cloning and policy evaluation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::data::{class_distribution, ClassDistribution, ClassLabel, Dataset};
use crate::env::{EnvAction, EnvState, Episode, TaskConfig};
use crate::error::{Error, Result};
use crate::oracle::expert_action;
use crate::policy::{BatchItem, ObsNormalizer, PolicyArch, PolicyParams, Scratch};
use crate::seeding::derive;
use crate::weighting::{target_distribution_with_fallback, WeightTable, WeightingScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub eval_interval_epochs: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps_per_epoch: 500,
            epochs: 50,
            lr: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            eval_interval_epochs: 5,
            eval_episodes: 100,
            seed: 0,
            eval_seed: 1_000_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.steps_per_epoch == 0
            || self.eval_interval_epochs == 0
            || self.eval_episodes == 0
        {
            return Err(Error::Config("train: sizes and intervals must be positive".into()));
        }
        if !(self.lr > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("train: lr and eps must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps a state to an action without randomness.
pub trait Controller {
    fn act(&self, state: &EnvState) -> EnvAction;
}

impl Controller for PolicyParams {
    fn act(&self, state: &EnvState) -> EnvAction {
        self.mode_action(&state.observation())
    }
}

/// The scripted expert as a controller.
#[derive(Debug, Clone, Copy)]
pub struct ExpertController<'a>(pub &'a TaskConfig);

impl Controller for ExpertController<'_> {
    fn act(&self, state: &EnvState) -> EnvAction {
        expert_action(state, self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_episode_len: f64,
}

/// Rollouts on episode seeds `seed..seed + n`.
pub fn evaluate(controller: &impl Controller, config: &TaskConfig, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluate: n_episodes must be >= 1".into()));
    }
    let mut successes = 0usize;
    let mut total_len = 0usize;
    for i in 0..n_episodes as u64 {
        let mut ep = Episode::new(config, seed + i);
        let mut success = false;
        while !ep.is_done() {
            let a = controller.act(ep.state());
            success = ep.step(&a)?.success;
        }
        successes += success as usize;
        total_len += ep.state().t as usize;
    }
    Ok(EvalReport {
        success_rate: successes as f64 / n_episodes as f64,
        mean_episode_len: total_len as f64 / n_episodes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_success: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn evals(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().filter_map(|e| e.eval_success.map(|s| (e.epoch, s)))
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.mean_loss).collect()
    }

    /// CSV with columns `epoch,mean_loss,eval_success,wall_ms`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "mean_loss", "eval_success", "wall_ms"])?;
        for e in &self.entries {
            wtr.write_record([
                e.epoch.to_string(),
                crate::data::fmt_f64(e.mean_loss),
                e.eval_success.map(|s| s.to_string()).unwrap_or_default(),
                e.wall_ms.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.into()))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            epoch: usize,
            mean_loss: f64,
            eval_success: Option<f64>,
            wall_ms: u64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let entries = rdr
            .deserialize::<Row>()
            .map(|r| {
                r.map(|r| EpochLog {
                    epoch: r.epoch,
                    mean_loss: r.mean_loss,
                    eval_success: r.eval_success,
                    wall_ms: r.wall_ms,
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainingLog { entries })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

/// Mean of the `k` best evaluated success rates.
pub fn top_k_checkpoint_average(log: &TrainingLog, k: usize) -> Result<f64> {
    let mut evals: Vec<f64> = log.evals().map(|(_, s)| s).collect();
    if k == 0 || evals.len() < k {
        return Err(Error::InsufficientCheckpoints {
            needed: k.max(1),
            available: evals.len(),
        });
    }
    evals.sort_by(|a, b| b.total_cmp(a));
    Ok(evals[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best evaluated success (earliest on ties), or the
    /// final parameters when nothing was evaluated.
    pub best: PolicyParams,
    pub best_epoch: Option<usize>,
    pub log: TrainingLog,
    pub class_dist: ClassDistribution,
    pub target_dist: ClassDistribution,
    pub weights: WeightTable,
    /// Classes whose target could not be honoured and fell back to observed mass.
    pub degraded: Vec<ClassLabel>,
}

/// Resolved per-class weights for `dataset` under `scheme`.
pub fn class_weights(
    dataset: &Dataset,
    scheme: &WeightingScheme,
) -> Result<(ClassDistribution, ClassDistribution, WeightTable, Vec<ClassLabel>)> {
    let p = class_distribution(dataset)?;
    let (p_star, degraded) = target_distribution_with_fallback(&p, scheme)?;
    if !degraded.is_empty() {
        log::warn!(
            "weighting: no samples for {:?}; using observed mass for those classes",
            degraded
        );
    }
    let w = WeightTable::new(&p, &p_star)?;
    Ok((p, p_star, w, degraded))
}

/// Flattened training set.
struct FlatData {
    obs: Vec<f64>,
    actions: Vec<f64>,
    weights: Vec<f64>,
    obs_dim: usize,
    action_dim: usize,
}

impl FlatData {
    fn new(dataset: &Dataset, weights: &WeightTable, arch: &PolicyArch) -> Result<Self> {
        let n = dataset.num_samples();
        let mut d = FlatData {
            obs: Vec::with_capacity(n * arch.input_dim),
            actions: Vec::with_capacity(n * arch.action_dim),
            weights: Vec::with_capacity(n),
            obs_dim: arch.input_dim,
            action_dim: arch.action_dim,
        };
        for s in dataset.samples() {
            if s.state.len() != arch.input_dim || s.action.len() != arch.action_dim {
                return Err(Error::Config(format!(
                    "sample dims ({}, {}) do not match policy ({}, {})",
                    s.state.len(),
                    s.action.len(),
                    arch.input_dim,
                    arch.action_dim
                )));
            }
            d.obs.extend(&s.state);
            d.actions.extend(&s.action);
            d.weights.push(weights.get(s.label));
        }
        Ok(d)
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn item(&self, i: usize) -> BatchItem<'_> {
        BatchItem {
            obs: &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim],
            action: &self.actions[i * self.action_dim..(i + 1) * self.action_dim],
            weight: self.weights[i],
        }
    }
}

/// Trains a freshly initialised policy on `dataset` with per-class weights.
pub fn train(
    dataset: &Dataset,
    scheme: &WeightingScheme,
    arch: &PolicyArch,
    cfg: &TrainConfig,
    task: &TaskConfig,
) -> Result<TrainOutcome> {
    arch.validate()?;
    cfg.validate()?;
    let (p, p_star, weights, degraded) = class_weights(dataset, scheme)?;
    let data = FlatData::new(dataset, &weights, arch)?;
    let norm = ObsNormalizer::fit(arch.input_dim, data.obs.chunks_exact(arch.input_dim));
    let mut params = PolicyParams::init(arch, derive(cfg.seed, "policy-init", 0)).with_normalizer(norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, "minibatch", 0));
    let mut opt = Adam::new(params.theta().len(), cfg.lr, cfg.betas, cfg.eps);
    let mut scratch = Scratch::new(arch);
    let mut grad = vec![0.0; params.theta().len()];
    let mut batch_idx = vec![0usize; cfg.batch_size];
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, PolicyParams)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            for idx in batch_idx.iter_mut() {
                *idx = rng.random_range(0..data.len());
            }
            let batch: Vec<BatchItem<'_>> = batch_idx.iter().map(|&i| data.item(i)).collect();
            let loss = params.weighted_nll_into(&batch, &mut scratch, &mut grad);
            if !loss.is_finite() {
                log::error!("non-finite loss at epoch {epoch} step {step}; batch sample indices {batch_idx:?}");
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss;
            opt.step(params.theta_mut(), &grad);
        }
        let eval_success = if epoch % cfg.eval_interval_epochs == 0 {
            let report = evaluate(&params, task, cfg.eval_episodes, cfg.eval_seed)?;
            if best.as_ref().is_none_or(|(s, _, _)| report.success_rate > *s) {
                best = Some((report.success_rate, epoch, params.clone()));
            }
            Some(report.success_rate)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / cfg.steps_per_epoch as f64,
            eval_success,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} eval {:?}",
            entry.mean_loss,
            entry.eval_success
        );
        log.entries.push(entry);
    }

    let (best, best_epoch) = match best {
        Some((_, epoch, params)) => (params, Some(epoch)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        log,
        class_dist: p,
        target_dist: p_star,
        weights,
        degraded,
    })
}
