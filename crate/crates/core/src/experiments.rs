//! Experiment harnesses built on the deployment loop: method comparison on a
//! run's final data, class-removal and intervention-ratio ablations on
//! Round-1 data, and the memory-strategy bench.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{class_distribution, Dataset, Trajectory};
use crate::deploy::{collect_demos, deploy_round, RunConfig, RunResult, ScriptedIntervenor, TOP_K};
use crate::error::{Error, Result};
use crate::memory::{MemoryBuffer, Strategy};
use crate::metrics::convergence_epochs;
use crate::seeding::derive;
use crate::trainer::{top_k_checkpoint_average, train, TrainOutcome, TrainingLog};
use crate::weighting::{intv_ratio_grid, Ablation, SchemeKind, WeightingScheme};

/// Success level that counts as converged.
pub const CONVERGENCE_TARGET: f64 = 0.9;

/// Outcome of training one policy under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub top3_success: f64,
    pub best_success: f64,
    pub convergence_epoch: Option<usize>,
}

impl Score {
    pub fn from_log(log: &TrainingLog) -> Self {
        let best = log.evals().map(|(_, s)| s).fold(0.0, f64::max);
        Score {
            top3_success: top_k_checkpoint_average(log, TOP_K).unwrap_or(best),
            best_success: best,
            convergence_epoch: convergence_epochs(log, CONVERGENCE_TARGET),
        }
    }

    fn of(out: &TrainOutcome) -> Self {
        Self::from_log(&out.log)
    }
}

fn buffer_for(cfg: &RunConfig, capacity: Option<usize>, strategy: Strategy) -> MemoryBuffer {
    MemoryBuffer::new(capacity, strategy, derive(cfg.seed, "buffer", 0)).with_protect_demos(cfg.protect_demos)
}

/// Replays `rounds[0..=upto]` through a buffer with the given capacity and
/// strategy, one `insert_many` per round, as the loop does.
fn replay(
    cfg: &RunConfig,
    rounds: &[Vec<Arc<Trajectory>>],
    upto: usize,
    capacity: Option<usize>,
    strategy: Strategy,
) -> Result<MemoryBuffer> {
    let mut buf = buffer_for(cfg, capacity, strategy);
    for round in rounds.iter().take(upto + 1) {
        buf.insert_many(round.iter().cloned())?;
    }
    Ok(buf)
}

/// The frozen dataset 𝒟^round that π_{round+1} was trained on.
pub fn snapshot_after(cfg: &RunConfig, result: &RunResult, round: usize) -> Result<Dataset> {
    if round >= result.rounds.len() {
        return Err(Error::Config(format!(
            "run has {} rounds of data, asked for round {round}",
            result.rounds.len()
        )));
    }
    let buf = replay(cfg, &result.rounds, round, cfg.capacity, cfg.strategy)?;
    Ok(buf.snapshot(&cfg.task.task_id))
}

/// Rebuilds 𝒟^1 exactly as the loop would: demos, warm-start π_1, one
/// scripted deployment round.
pub fn round_one_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let demos = collect_demos(cfg)?;
    let quota = cfg.quota_for(demos.iter().map(|t| t.len()).sum());
    let mut buf = buffer_for(cfg, cfg.capacity, cfg.strategy);
    buf.insert_many(demos)?;
    let d0 = buf.snapshot(&cfg.task.task_id);
    let warm = train(
        &d0,
        &WeightingScheme::unweighted(),
        &cfg.policy,
        &cfg.train_config(1),
        &cfg.task,
    )?;
    let mut op = ScriptedIntervenor::new(cfg.oracle.clone());
    let dep = deploy_round(&warm.best, cfg, 1, quota, &mut op)?;
    buf.insert_many(dep.trajectories)?;
    Ok(buf.snapshot(&cfg.task.task_id))
}

fn train_score(cfg: &RunConfig, data: &Dataset, scheme: &WeightingScheme, policy_index: usize) -> Result<Score> {
    let out = train(data, scheme, &cfg.policy, &cfg.train_config(policy_index), &cfg.task)?;
    Ok(Score::of(&out))
}

// ---------------------------------------------------------------------------
// Method comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub sirius: f64,
    pub iwr: f64,
    pub unweighted: f64,
}

/// Scores the three schemes on the final dataset 𝒟^X of a run. The run's own
/// scheme reuses its recorded π_{X+1}; the others are trained on the same
/// data with the same seed.
pub fn compare_methods(cfg: &RunConfig, result: &RunResult) -> Result<MethodScores> {
    let x = cfg.rounds;
    let data = snapshot_after(cfg, result, x)?;
    let recorded = result
        .records
        .get(x)
        .ok_or_else(|| Error::Config(format!("run has no record for round {x}")))?
        .policy
        .top3_success;
    let score = |scheme: WeightingScheme| -> Result<f64> {
        if scheme == cfg.weighting {
            Ok(recorded)
        } else {
            Ok(train_score(cfg, &data, &scheme, x + 1)?.top3_success)
        }
    };
    Ok(MethodScores {
        sirius: score(WeightingScheme::sirius())?,
        iwr: score(WeightingScheme::iwr())?,
        unweighted: score(WeightingScheme::unweighted())?,
    })
}

// ---------------------------------------------------------------------------
// Weighting ablations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub p_star_intv: f64,
    /// `None` when the target distribution is infeasible for this data.
    pub score: Option<Score>,
    pub note: String,
}

/// Full sirius weighting and one row per removed class, trained on `data`
/// with π_2's seed.
pub fn ablate_remove_class(cfg: &RunConfig, data: &Dataset) -> Result<Vec<AblationRow>> {
    let base = WeightingScheme {
        kind: SchemeKind::Sirius,
        ..cfg.weighting.clone()
    };
    let mut settings = vec![("full".to_string(), base.clone())];
    for a in Ablation::ALL {
        let name = format!("-{}", a.class());
        settings.push((name, base.clone().with_ablation(a)));
    }
    settings
        .into_iter()
        .map(|(setting, scheme)| {
            Ok(AblationRow {
                setting,
                p_star_intv: scheme.p_star_intv,
                score: Some(train_score(cfg, data, &scheme, 2)?),
                note: String::new(),
            })
        })
        .collect()
}

/// Sirius weighting at each `P*(intv)` of `grid` (default: `n` points spanning
/// the feasible range). Infeasible points are flagged, not trained.
pub fn sweep_intv_ratio(cfg: &RunConfig, data: &Dataset, grid: Option<&[f64]>, n: usize) -> Result<Vec<AblationRow>> {
    let base = WeightingScheme {
        kind: SchemeKind::Sirius,
        ..cfg.weighting.clone()
    };
    let p = class_distribution(data)?;
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => intv_ratio_grid(&p, base.p_star_preintv, n),
    };
    grid.into_iter()
        .map(|v| {
            let scheme = base.clone().with_p_star_intv(v);
            let setting = format!("p_star_intv={v:.4}");
            match train(data, &scheme, &cfg.policy, &cfg.train_config(2), &cfg.task) {
                Ok(out) => Ok(AblationRow {
                    setting,
                    p_star_intv: v,
                    score: Some(Score::of(&out)),
                    note: String::new(),
                }),
                Err(e) if e.is_config_error() => Ok(AblationRow {
                    setting,
                    p_star_intv: v,
                    score: None,
                    note: format!("infeasible: {e}"),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "setting",
        "p_star_intv",
        "top3_success",
        "best_success",
        "convergence_epoch",
        "note",
    ])?;
    for r in rows {
        let (top3, best, conv) = match &r.score {
            Some(s) => (
                s.top3_success.to_string(),
                s.best_success.to_string(),
                s.convergence_epoch.map(|e| e.to_string()).unwrap_or_default(),
            ),
            None => Default::default(),
        };
        w.write_record([&r.setting, &r.p_star_intv.to_string(), &top3, &best, &conv, &r.note])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Memory bench
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    /// Strategy name, or "base" for the unbounded buffer.
    pub strategy: String,
    /// Kept fraction of the deployment trajectories; 1.0 for base.
    pub cap_fraction: f64,
    pub capacity: Option<usize>,
    pub retained: usize,
    pub retained_intv: usize,
    pub score: Score,
}

/// Buffer size that keeps every demo plus `fraction` of the deployment
/// trajectories of `rounds`.
pub fn capacity_for(rounds: &[Vec<Arc<Trajectory>>], fraction: f64) -> usize {
    let demos = rounds.first().map_or(0, |r| r.len());
    let deployed: usize = rounds.iter().skip(1).map(|r| r.len()).sum();
    demos + (fraction * deployed as f64).ceil() as usize
}

/// Replays the data stream of a run (𝒟^0..𝒟^X) through each strategy and
/// capacity, retrains π_{X+1} on what is left, and reports success and
/// convergence speed. The first row is the unbounded base.
pub fn bench_memory(
    cfg: &RunConfig,
    result: &RunResult,
    strategies: &[Strategy],
    caps: &[f64],
) -> Result<Vec<MemoryRow>> {
    let x = cfg.rounds.min(result.rounds.len().saturating_sub(1));
    let rounds = &result.rounds[..=x];
    let scheme = &cfg.weighting;
    let base_buf = replay(cfg, rounds, x, None, cfg.strategy)?;
    let base_seq = base_buf.sequence_numbers();
    // An unbounded run already trained π_{X+1} on exactly this data.
    let base_score = match result.training_logs.get(x) {
        Some(log) if cfg.capacity.is_none() => Score::from_log(log),
        _ => train_score(cfg, &base_buf.snapshot(&cfg.task.task_id), scheme, x + 1)?,
    };
    let mut rows = vec![MemoryRow {
        strategy: "base".into(),
        cap_fraction: 1.0,
        capacity: None,
        retained: base_buf.len(),
        retained_intv: base_buf.total_interventions(),
        score: base_score.clone(),
    }];
    for &frac in caps {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::Config(format!("cap fraction must be in (0, 1], got {frac}")));
        }
        let cap = capacity_for(rounds, frac);
        for &strategy in strategies {
            let buf = replay(cfg, rounds, x, Some(cap), strategy)?;
            // Nothing evicted: the data, and so the training run, is the base's.
            let score = if buf.sequence_numbers() == base_seq {
                base_score.clone()
            } else {
                train_score(cfg, &buf.snapshot(&cfg.task.task_id), scheme, x + 1)?
            };
            log::info!(
                "memory bench: {strategy} cap {frac}: top-{TOP_K} {:.3}",
                score.top3_success
            );
            rows.push(MemoryRow {
                strategy: strategy.to_string(),
                cap_fraction: frac,
                capacity: Some(cap),
                retained: buf.len(),
                retained_intv: buf.total_interventions(),
                score,
            });
        }
    }
    Ok(rows)
}

pub fn write_memory_csv(path: &Path, rows: &[MemoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "cap_fraction",
        "capacity",
        "retained",
        "retained_intv",
        "top3_success",
        "best_success",
        "convergence_epoch",
    ])?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.cap_fraction.to_string(),
            r.capacity.map(|c| c.to_string()).unwrap_or_default(),
            r.retained.to_string(),
            r.retained_intv.to_string(),
            r.score.top3_success.to_string(),
            r.score.best_success.to_string(),
            r.score.convergence_epoch.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
