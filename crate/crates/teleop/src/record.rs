//! Persists live episodes as they finish, so an interrupted session keeps
//! everything collected up to the last completed episode.

use std::path::PathBuf;

use hitl_core::data::Source;
use hitl_core::deploy::{Decision, Intervenor};
use hitl_core::{relabel_preintv, EnvAction, EnvState, LabelingConfig, MemoryBuffer, TaskConfig, Trajectory};

/// Wraps an intervenor and, after every episode, relabels the trajectory,
/// inserts it into an unbounded journal buffer and saves that buffer.
pub struct Recorder<I> {
    inner: I,
    buffer: MemoryBuffer,
    dir: PathBuf,
    task_id: String,
    labeling: LabelingConfig,
}

impl<I: Intervenor> Recorder<I> {
    pub fn new(inner: I, dir: impl Into<PathBuf>, task_id: impl Into<String>, labeling: LabelingConfig) -> Self {
        Recorder {
            inner,
            buffer: MemoryBuffer::unbounded(),
            dir: dir.into(),
            task_id: task_id.into(),
            labeling,
        }
    }

    pub fn buffer(&self) -> &MemoryBuffer {
        &self.buffer
    }

    pub fn into_inner(self) -> I {
        self.inner
    }
}

impl<I: Intervenor> Intervenor for Recorder<I> {
    fn source(&self) -> Source {
        self.inner.source()
    }

    fn begin_episode(&mut self, episode_seed: u64, initial: &EnvState) -> hitl_core::Result<()> {
        self.inner.begin_episode(episode_seed, initial)
    }

    fn decide(&mut self, state: &EnvState, robot_action: EnvAction, task: &TaskConfig) -> hitl_core::Result<Decision> {
        self.inner.decide(state, robot_action, task)
    }

    fn end_episode(&mut self, traj: &Trajectory) -> hitl_core::Result<()> {
        self.inner.end_episode(traj)?;
        self.buffer.insert(relabel_preintv(traj, self.labeling)?)?;
        self.buffer.save(&self.dir, &self.task_id)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hitl_core::deploy::{rollout, ScriptedIntervenor};
    use hitl_core::{ClassLabel, InterventionModel, PolicyArch, PolicyParams};

    #[test]
    fn every_finished_episode_is_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskConfig::default();
        let policy = PolicyParams::init(&PolicyArch::default(), 1);
        let scripted = ScriptedIntervenor::new(InterventionModel::default());
        let mut rec = Recorder::new(scripted, dir.path(), &task.task_id, LabelingConfig::default());
        let mut raw = Vec::new();
        for seed in 0..3 {
            raw.push(rollout(&policy, &task, &mut rec, seed, 1).unwrap());
            let (_, saved) = MemoryBuffer::load(dir.path()).unwrap();
            assert_eq!(saved.len(), seed as usize + 1);
        }
        let (_, saved) = MemoryBuffer::load(dir.path()).unwrap();
        for (stored, raw) in saved.trajectories().zip(&raw) {
            assert_eq!(
                stored.as_ref(),
                &relabel_preintv(raw, LabelingConfig::default()).unwrap()
            );
            assert_eq!(stored.count(ClassLabel::Intv), raw.count(ClassLabel::Intv));
        }
    }
}
