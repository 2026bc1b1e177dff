//! Fixed-capacity trajectory buffer with intervention-aware eviction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_json, read_trajectory, trajectory_file_name, write_json, write_trajectory};
use crate::data::{ClassLabel, Dataset, Trajectory};
use crate::error::{Error, Result};

pub const BUFFER_MANIFEST_FILE: &str = "buffer.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Least-frequently-intervened trajectories go first.
    Lfi,
    /// Most-frequently-intervened trajectories go first.
    Mfi,
    Fifo,
    Filo,
    Uniform,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Lfi,
        Strategy::Mfi,
        Strategy::Fifo,
        Strategy::Filo,
        Strategy::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Lfi => "lfi",
            Strategy::Mfi => "mfi",
            Strategy::Fifo => "fifo",
            Strategy::Filo => "filo",
            Strategy::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown memory strategy {s:?}")))
    }
}

/// Number of intervention-labeled samples.
pub fn intervention_count(traj: &Trajectory) -> usize {
    traj.count(ClassLabel::Intv)
}

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    intv: usize,
    traj: Arc<Trajectory>,
}

/// Trajectory buffer. `capacity: None` keeps everything.
#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    capacity: Option<usize>,
    strategy: Strategy,
    protect_demos: bool,
    rng_seed: u64,
    rng: ChaCha8Rng,
    next_seq: u64,
    entries: Vec<Entry>,
}

impl MemoryBuffer {
    pub fn new(capacity: Option<usize>, strategy: Strategy, rng_seed: u64) -> Self {
        MemoryBuffer {
            capacity,
            strategy,
            protect_demos: true,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            next_seq: 0,
            entries: Vec::new(),
        }
    }

    pub fn unbounded() -> Self {
        Self::new(None, Strategy::Fifo, 0)
    }

    pub fn with_protect_demos(mut self, protect: bool) -> Self {
        self.protect_demos = protect;
        self
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn protect_demos(&self) -> bool {
        self.protect_demos
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Trajectories in insertion order.
    pub fn trajectories(&self) -> impl Iterator<Item = &Arc<Trajectory>> {
        self.entries.iter().map(|e| &e.traj)
    }

    /// Insertion sequence numbers of the current contents, in order.
    pub fn sequence_numbers(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.seq).collect()
    }

    pub fn total_interventions(&self) -> usize {
        self.entries.iter().map(|e| e.intv).sum()
    }

    /// Immutable copy of the contents, sharing trajectory storage.
    pub fn snapshot(&self, task_id: &str) -> Dataset {
        Dataset {
            task_id: task_id.to_owned(),
            trajectories: self.entries.iter().map(|e| e.traj.clone()).collect(),
        }
    }

    fn push(&mut self, traj: Arc<Trajectory>) {
        self.entries.push(Entry {
            seq: self.next_seq,
            intv: intervention_count(&traj),
            traj,
        });
        self.next_seq += 1;
    }

    /// Appends and evicts down to capacity.
    pub fn insert(&mut self, traj: impl Into<Arc<Trajectory>>) -> Result<Vec<Arc<Trajectory>>> {
        self.push(traj.into());
        self.enforce_capacity()
    }

    /// Appends a batch, then evicts once. Returns the evicted trajectories.
    pub fn insert_many<I, T>(&mut self, trajs: I) -> Result<Vec<Arc<Trajectory>>>
    where
        I: IntoIterator<Item = T>,
        T: Into<Arc<Trajectory>>,
    {
        for t in trajs {
            self.push(t.into());
        }
        self.enforce_capacity()
    }

    fn is_protected(&self, e: &Entry) -> bool {
        self.protect_demos && e.traj.is_demo()
    }

    fn enforce_capacity(&mut self) -> Result<Vec<Arc<Trajectory>>> {
        let Some(cap) = self.capacity else {
            return Ok(Vec::new());
        };
        let protected = self.entries.iter().filter(|e| self.is_protected(e)).count();
        if protected > cap {
            return Err(Error::CapacityInfeasible {
                protected,
                capacity: cap,
            });
        }
        let mut evicted = Vec::new();
        while self.entries.len() > cap {
            let idx = self.victim();
            evicted.push(self.entries.remove(idx).traj);
        }
        Ok(evicted)
    }

    /// Index of the next trajectory to discard. Entries are kept in
    /// insertion order, so the first minimum is the oldest on ties.
    fn victim(&mut self) -> usize {
        let candidates: Vec<usize> = (0..self.entries.len())
            .filter(|&i| !self.is_protected(&self.entries[i]))
            .collect();
        debug_assert!(!candidates.is_empty());
        let by_key = |key: &dyn Fn(&Entry) -> i64| {
            candidates
                .iter()
                .copied()
                .min_by_key(|&i| key(&self.entries[i]))
                .unwrap()
        };
        match self.strategy {
            Strategy::Lfi => by_key(&|e| e.intv as i64),
            Strategy::Mfi => by_key(&|e| -(e.intv as i64)),
            Strategy::Fifo => candidates[0],
            Strategy::Filo => *candidates.last().unwrap(),
            Strategy::Uniform => candidates[self.rng.random_range(0..candidates.len())],
        }
    }

    /// Writes any trajectory files not yet present plus the buffer manifest.
    pub fn save(&self, dir: &Path, task_id: &str) -> Result<BufferManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let name = trajectory_file_name(e.seq as usize, &e.traj);
            let path = dir.join(&name);
            if !path.exists() {
                write_trajectory(&path, &e.traj, task_id)?;
            }
            files.push(ManifestEntry {
                file: name,
                seq: e.seq,
                intervention_count: e.intv,
            });
        }
        let manifest = BufferManifest {
            task_id: task_id.to_owned(),
            capacity: self.capacity,
            strategy: self.strategy,
            protect_demos: self.protect_demos,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng.get_word_pos(),
            next_seq: self.next_seq,
            entries: files,
        };
        write_json(&dir.join(BUFFER_MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }

    /// Restores a buffer written by [`Self::save`], including the eviction rng position.
    pub fn load(dir: &Path) -> Result<(String, Self)> {
        let path = dir.join(BUFFER_MANIFEST_FILE);
        let m: BufferManifest = read_json(&path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(m.rng_seed);
        rng.set_word_pos(m.rng_word_pos);
        let mut entries = Vec::with_capacity(m.entries.len());
        for f in &m.entries {
            let (task_id, traj) = read_trajectory(&dir.join(&f.file))?;
            if task_id != m.task_id || intervention_count(&traj) != f.intervention_count {
                return Err(Error::Parse {
                    path: dir.join(&f.file),
                    line: 1,
                    message: "trajectory does not match buffer manifest".into(),
                });
            }
            entries.push(Entry {
                seq: f.seq,
                intv: f.intervention_count,
                traj: Arc::new(traj),
            });
        }
        let buf = MemoryBuffer {
            capacity: m.capacity,
            strategy: m.strategy,
            protect_demos: m.protect_demos,
            rng_seed: m.rng_seed,
            rng,
            next_seq: m.next_seq,
            entries,
        };
        Ok((m.task_id, buf))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seq: u64,
    pub intervention_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferManifest {
    pub task_id: String,
    pub capacity: Option<usize>,
    pub strategy: Strategy,
    pub protect_demos: bool,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub next_seq: u64,
    pub entries: Vec<ManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::traj_with_labels;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use ClassLabel::*;

    /// Robot trajectory with `n` intervention samples; `tag` makes it identifiable by length.
    fn traj(n_intv: usize, tag: usize) -> Trajectory {
        let mut labels = vec![Robot; 1 + tag];
        labels.extend(std::iter::repeat_n(Intv, n_intv));
        traj_with_labels(&labels)
    }

    fn lens(buf: &MemoryBuffer) -> Vec<usize> {
        buf.trajectories().map(|t| t.len()).collect()
    }

    #[test]
    fn intervention_counts() {
        assert_eq!(
            intervention_count(&traj_with_labels(&[Robot, Robot, Intv, Intv, Robot, Intv])),
            3
        );
        assert_eq!(intervention_count(&traj_with_labels(&[Demo; 4])), 0);
        assert_eq!(intervention_count(&traj_with_labels(&[Intv; 7])), 7);
    }

    #[test]
    fn fifo_and_filo() {
        let mut fifo = MemoryBuffer::new(Some(2), Strategy::Fifo, 0);
        let mut filo = MemoryBuffer::new(Some(2), Strategy::Filo, 0);
        for i in 0..3 {
            fifo.insert(traj(0, i)).unwrap();
            filo.insert(traj(0, i)).unwrap();
        }
        assert_eq!(lens(&fifo), vec![2, 3]);
        assert_eq!(lens(&filo), vec![1, 2]);
    }

    #[test]
    fn lfi_and_mfi_examples() {
        let counts = [3, 0, 1];
        let run = |s| {
            let mut b = MemoryBuffer::new(Some(2), s, 0);
            b.insert_many(counts.iter().map(|&c| traj(c, 0))).unwrap();
            b.trajectories().map(|t| intervention_count(t)).collect::<Vec<_>>()
        };
        assert_eq!(run(Strategy::Lfi), vec![3, 1]);
        assert_eq!(run(Strategy::Mfi), vec![0, 1]);
    }

    #[test]
    fn ties_evict_older_first() {
        let mut b = MemoryBuffer::new(Some(2), Strategy::Lfi, 0);
        b.insert_many([traj(1, 0), traj(1, 1), traj(1, 2)]).unwrap();
        assert_eq!(lens(&b), vec![3, 4]);
    }

    #[test]
    fn no_eviction_under_capacity() {
        for s in Strategy::ALL {
            let mut b = MemoryBuffer::new(Some(10), s, 3);
            let evicted = b.insert_many((0..5).map(|i| traj(i, i))).unwrap();
            assert!(evicted.is_empty());
            assert_eq!(b.len(), 5);
        }
    }

    #[test]
    fn uniform_is_seeded() {
        let run = |seed| {
            let mut b = MemoryBuffer::new(Some(5), Strategy::Uniform, seed);
            b.insert_many((0..10).map(|i| traj(0, i))).unwrap();
            b.sequence_numbers()
        };
        assert_eq!(run(7), run(7));
        assert_eq!(run(7).len(), 5);
    }

    #[test]
    fn demos_are_protected() {
        let demo = || traj_with_labels(&[Demo; 3]);
        let mut b = MemoryBuffer::new(Some(3), Strategy::Fifo, 0);
        b.insert_many([demo(), demo(), traj(0, 0), traj(0, 1)]).unwrap();
        assert_eq!(b.trajectories().filter(|t| t.is_demo()).count(), 2);
        assert_eq!(lens(&b), vec![3, 3, 2]);

        let mut b = MemoryBuffer::new(Some(1), Strategy::Lfi, 0);
        assert!(matches!(
            b.insert_many([demo(), demo()]),
            Err(Error::CapacityInfeasible {
                protected: 2,
                capacity: 1
            })
        ));

        let mut b = MemoryBuffer::new(Some(1), Strategy::Fifo, 0).with_protect_demos(false);
        b.insert_many([demo(), traj(0, 5)]).unwrap();
        assert_eq!(lens(&b), vec![6]);
    }

    #[test]
    fn save_and_load_resume_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = MemoryBuffer::new(Some(4), Strategy::Uniform, 11);
        b.insert_many((0..7).map(|i| traj(i % 3, i))).unwrap();
        b.save(dir.path(), "pick_insert").unwrap();
        let (task, mut restored) = MemoryBuffer::load(dir.path()).unwrap();
        assert_eq!(task, "pick_insert");
        assert_eq!(restored.sequence_numbers(), b.sequence_numbers());
        let more: Vec<_> = (7..12).map(|i| traj(i % 3, i)).collect();
        b.insert_many(more.clone()).unwrap();
        restored.insert_many(more).unwrap();
        assert_eq!(restored.sequence_numbers(), b.sequence_numbers());
    }

    fn arb_counts() -> impl proptest::strategy::Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..6, 1..9)
    }

    /// Best achievable retained intervention total over all subsets of size `cap`.
    fn best_subset_total(counts: &[usize], cap: usize) -> usize {
        let n = counts.len();
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == cap.min(n))
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| counts[i]).sum())
            .max()
            .unwrap()
    }

    proptest! {
        #[test]
        fn capacity_is_never_exceeded(
            ops in prop::collection::vec(0usize..5, 0..40),
            cap in 1usize..6,
            seed in any::<u64>(),
        ) {
            for s in Strategy::ALL {
                let mut b = MemoryBuffer::new(Some(cap), s, seed);
                for (i, &c) in ops.iter().enumerate() {
                    b.insert(traj(c, i)).unwrap();
                    prop_assert!(b.len() <= cap);
                }
            }
        }

        #[test]
        fn lfi_retains_the_most_interventions(counts in arb_counts(), cap in 1usize..8, seed in any::<u64>()) {
            let retained = |s| {
                let mut b = MemoryBuffer::new(Some(cap), s, seed);
                b.insert_many(counts.iter().enumerate().map(|(i, &c)| traj(c, i))).unwrap();
                b.total_interventions()
            };
            let lfi = retained(Strategy::Lfi);
            prop_assert_eq!(lfi, best_subset_total(&counts, cap));
            for s in Strategy::ALL {
                prop_assert!(lfi >= retained(s));
            }
        }

        #[test]
        fn strategies_are_deterministic(counts in arb_counts(), cap in 1usize..8, seed in any::<u64>()) {
            for s in Strategy::ALL {
                let run = || {
                    let mut b = MemoryBuffer::new(Some(cap), s, seed);
                    for (i, &c) in counts.iter().enumerate() {
                        b.insert(traj(c, i)).unwrap();
                    }
                    b.sequence_numbers()
                };
                prop_assert_eq!(run(), run());
            }
        }
    }
}
