//! Workload metrics, convergence speed and cross-seed aggregation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{intervention_segments, read_json, ClassLabel, Trajectory};
use crate::deploy::{RoundRecord, RECORDS_FILE};
use crate::error::{Error, Result};
use crate::oracle::Owner;
use crate::trainer::TrainingLog;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadMetrics {
    pub intv_sample_ratio: f64,
    pub intv_frequency: f64,
    pub mean_intv_length: f64,
    /// Set when there were no segments and `mean_intv_length` is a placeholder 0.
    pub no_segments: bool,
    pub n_rollouts: usize,
}

fn non_empty<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Vec<&'a Trajectory>> {
    let v: Vec<_> = trajs.into_iter().collect();
    if v.is_empty() {
        Err(Error::EmptyRound)
    } else {
        Ok(v)
    }
}

/// Fraction of samples that are intervention-labeled.
pub fn intervention_sample_ratio<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<f64> {
    let trajs = non_empty(trajs)?;
    let total: usize = trajs.iter().map(|t| t.len()).sum();
    if total == 0 {
        return Err(Error::EmptyRound);
    }
    let intv: usize = trajs.iter().map(|t| t.count(ClassLabel::Intv)).sum();
    Ok(intv as f64 / total as f64)
}

/// Intervention segments per rollout.
pub fn intervention_frequency<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<f64> {
    let trajs = non_empty(trajs)?;
    let segs: usize = trajs.iter().map(|t| intervention_segments(t).len()).sum();
    Ok(segs as f64 / trajs.len() as f64)
}

/// Mean segment length in steps; `(0.0, true)` when there are no segments.
pub fn mean_intervention_length<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> (f64, bool) {
    let (n, total) = trajs
        .into_iter()
        .flat_map(intervention_segments)
        .fold((0usize, 0usize), |(n, sum), (a, b)| (n + 1, sum + (b - a)));
    if n == 0 {
        (0.0, true)
    } else {
        (total as f64 / n as f64, false)
    }
}

pub fn workload<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<WorkloadMetrics> {
    let trajs = non_empty(trajs)?;
    let (mean_intv_length, no_segments) = mean_intervention_length(trajs.iter().copied());
    Ok(WorkloadMetrics {
        intv_sample_ratio: intervention_sample_ratio(trajs.iter().copied())?,
        intv_frequency: intervention_frequency(trajs.iter().copied())?,
        mean_intv_length,
        no_segments,
        n_rollouts: trajs.len(),
    })
}

/// First evaluated epoch reaching `target` success.
pub fn convergence_epochs(log: &TrainingLog, target: f64) -> Option<usize> {
    log.evals().find(|&(_, s)| s >= target).map(|(e, _)| e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub rollout_id: String,
    pub t: u32,
    pub owner: Owner,
}

/// Per-step ownership of one rollout.
pub fn timeline_rows(rollout_id: &str, traj: &Trajectory) -> Vec<TimelineRow> {
    traj.samples()
        .iter()
        .map(|s| TimelineRow {
            rollout_id: rollout_id.to_owned(),
            t: s.t,
            owner: match s.label {
                ClassLabel::Intv | ClassLabel::Demo => Owner::Human,
                ClassLabel::Robot | ClassLabel::Preintv => Owner::Robot,
            },
        })
        .collect()
}

pub fn write_timeline_csv(path: &Path, rows: &[TimelineRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One line per round of a single run.
pub fn write_round_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "round",
        "episodes",
        "policy",
        "top3_success",
        "intv_sample_ratio",
        "intv_frequency",
        "mean_intv_length",
        "demo_samples",
        "intv_samples",
        "preintv_samples",
        "robot_samples",
        "buffer_trajectories",
    ])?;
    for r in records {
        let wl = |f: fn(&WorkloadMetrics) -> f64| r.workload.as_ref().map(|m| f(m).to_string()).unwrap_or_default();
        w.write_record([
            r.round.to_string(),
            r.episodes.to_string(),
            r.policy.index.to_string(),
            r.policy.top3_success.to_string(),
            wl(|m| m.intv_sample_ratio),
            wl(|m| m.intv_frequency),
            wl(|m| m.mean_intv_length),
            r.counts.demo.to_string(),
            r.counts.intv.to_string(),
            r.counts.preintv.to_string(),
            r.counts.robot.to_string(),
            r.buffer.trajectories.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean and population standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAggregate {
    pub round: usize,
    pub n_runs: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub intv_ratio_mean: Option<f64>,
    pub intv_ratio_std: Option<f64>,
    pub intv_frequency_mean: Option<f64>,
    pub intv_frequency_std: Option<f64>,
    pub intv_length_mean: Option<f64>,
    pub intv_length_std: Option<f64>,
}

/// Per-round mean and std across runs. All runs must have the same number of rounds.
pub fn aggregate_records(runs: &[Vec<RoundRecord>]) -> Result<Vec<RoundAggregate>> {
    let Some(first) = runs.first() else {
        return Err(Error::MismatchedConfigs("no runs given".into()));
    };
    if let Some(bad) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(Error::MismatchedConfigs(format!(
            "round counts differ: {} vs {}",
            first.len(),
            bad.len()
        )));
    }
    let mut out = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let rows: Vec<&RoundRecord> = runs.iter().map(|r| &r[i]).collect();
        if rows.iter().any(|r| r.round != first[i].round) {
            return Err(Error::MismatchedConfigs(format!(
                "round index mismatch at position {i}"
            )));
        }
        let (success_mean, success_std) = mean_std(&rows.iter().map(|r| r.policy.top3_success).collect::<Vec<_>>());
        let stat = |f: fn(&crate::metrics::WorkloadMetrics) -> f64| {
            let xs: Vec<f64> = rows.iter().filter_map(|r| r.workload.as_ref().map(f)).collect();
            if xs.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&xs);
                (Some(m), Some(s))
            }
        };
        let (intv_ratio_mean, intv_ratio_std) = stat(|m| m.intv_sample_ratio);
        let (intv_frequency_mean, intv_frequency_std) = stat(|m| m.intv_frequency);
        let (intv_length_mean, intv_length_std) = stat(|m| m.mean_intv_length);
        out.push(RoundAggregate {
            round: first[i].round,
            n_runs: rows.len(),
            success_mean,
            success_std,
            intv_ratio_mean,
            intv_ratio_std,
            intv_frequency_mean,
            intv_frequency_std,
            intv_length_mean,
            intv_length_std,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub run: String,
    pub policy: usize,
    pub convergence_epochs: Option<usize>,
}

/// Reads run directories and writes `report.csv`, `timeline.csv` and
/// `convergence.csv` into `out`.
pub fn aggregate(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<RoundAggregate>> {
    let mut runs = Vec::with_capacity(run_dirs.len());
    let mut timeline = Vec::new();
    let mut convergence = Vec::new();
    for dir in run_dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let records: Vec<RoundRecord> = read_json(&dir.join(RECORDS_FILE))?;
        for r in &records {
            let log = TrainingLog::load_csv(&dir.join("training_logs").join(format!("policy_{}.csv", r.policy.index)))?;
            convergence.push(ConvergenceRow {
                run: name.clone(),
                policy: r.policy.index,
                convergence_epochs: convergence_epochs(&log, 0.9),
            });
        }
        let tl = dir.join("timeline.csv");
        if tl.exists() {
            let mut rdr = csv::Reader::from_path(&tl)?;
            for row in rdr.deserialize::<TimelineRow>() {
                let mut row = row?;
                row.rollout_id = format!("{name}/{}", row.rollout_id);
                timeline.push(row);
            }
        }
        runs.push(records);
    }
    let agg = aggregate_records(&runs)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    for a in &agg {
        w.serialize(a)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    write_timeline_csv(&out.join("timeline.csv"), &timeline)?;
    let mut w = csv::Writer::from_path(out.join("convergence.csv"))?;
    for c in &convergence {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::traj_with_labels;
    use crate::trainer::EpochLog;
    use proptest::strategy::Just;
    use ClassLabel::*;

    fn with_segments(len: usize, segs: &[(usize, usize)]) -> Trajectory {
        let mut l = vec![Robot; len];
        for &(a, b) in segs {
            l[a..b].fill(Intv);
        }
        traj_with_labels(&l)
    }

    #[test]
    fn ratio_examples() {
        let mut trajs: Vec<_> = (0..9).map(|_| with_segments(50, &[])).collect();
        trajs.push(with_segments(50, &[(0, 50)]));
        assert_eq!(intervention_sample_ratio(&trajs).unwrap(), 0.1);
        assert_eq!(intervention_sample_ratio(&trajs[..1]).unwrap(), 0.0);
        assert_eq!(intervention_sample_ratio(&trajs[9..]).unwrap(), 1.0);
        assert!(matches!(
            intervention_sample_ratio(&[] as &[Trajectory]),
            Err(Error::EmptyRound)
        ));
    }

    #[test]
    fn frequency_and_length() {
        let one = [with_segments(8, &[(2, 4), (5, 6)])];
        assert_eq!(intervention_frequency(&one).unwrap(), 2.0);
        assert_eq!(mean_intervention_length(&one), (1.5, false));
        let mut ten: Vec<_> = (0..8).map(|_| with_segments(10, &[(1, 2)])).collect();
        ten.push(with_segments(10, &[(1, 2), (4, 6)]));
        ten.push(with_segments(10, &[(1, 2), (4, 6), (8, 9)]));
        assert!((intervention_frequency(&ten).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(mean_intervention_length(&[with_segments(20, &[])]), (0.0, true));
        assert_eq!(
            mean_intervention_length(&[with_segments(20, &[(3, 18)])]),
            (15.0, false)
        );
        assert_eq!(intervention_frequency(&[with_segments(5, &[])]).unwrap(), 0.0);
    }

    #[test]
    fn convergence() {
        let log = |evals: &[(usize, f64)]| TrainingLog {
            entries: evals
                .iter()
                .map(|&(epoch, s)| EpochLog {
                    epoch,
                    mean_loss: 0.0,
                    eval_success: Some(s),
                    wall_ms: 0,
                })
                .collect(),
        };
        assert_eq!(convergence_epochs(&log(&[(5, 0.4), (10, 0.92)]), 0.9), Some(10));
        assert_eq!(convergence_epochs(&log(&[(5, 0.4), (10, 0.5)]), 0.9), None);
        assert_eq!(convergence_epochs(&log(&[(5, 0.95), (10, 0.5)]), 0.9), Some(5));
    }

    proptest::proptest! {
        #[test]
        fn ratio_from_segments_matches_counts(
            labels in proptest::collection::vec(proptest::prop_oneof![Just(Robot), Just(Intv), Just(Preintv)], 1..80)
        ) {
            let t = traj_with_labels(&labels);
            let from_segments: usize = intervention_segments(&t).iter().map(|(a, b)| b - a).sum();
            proptest::prop_assert_eq!(
                intervention_sample_ratio([&t]).unwrap(),
                from_segments as f64 / t.len() as f64
            );
        }
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
        let (m, _) = mean_std(&[0.4, 0.6]);
        assert!((m - 0.5).abs() < 1e-12);
    }
}
