//! Samples, trajectories, class labels and datasets.
//!
//! Trajectories are immutable once built: relabeling produces a new value.
//! The on-disk form is a JSON-lines log, one episode header followed by one
//! line per sample, see [`write_trajectory`].

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Data class of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Demo,
    Intv,
    Preintv,
    Robot,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Demo,
        ClassLabel::Intv,
        ClassLabel::Preintv,
        ClassLabel::Robot,
    ];

    pub const fn index(self) -> usize {
        match self {
            ClassLabel::Demo => 0,
            ClassLabel::Intv => 1,
            ClassLabel::Preintv => 2,
            ClassLabel::Robot => 3,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Demo => "demo",
            ClassLabel::Intv => "intv",
            ClassLabel::Preintv => "preintv",
            ClassLabel::Robot => "robot",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ScriptedOracle,
    LiveHuman,
    Autonomous,
}

/// One timestep: observation, executed action, reward and class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: u32,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub label: ClassLabel,
}

/// An episode with provenance. Validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<Sample>,
    round: u32,
    seed: u64,
    success: bool,
    source: Source,
}

impl Trajectory {
    pub fn new(samples: Vec<Sample>, round: u32, seed: u64, success: bool, source: Source) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.t as usize != i {
                return Err(Error::InvalidTrajectory(format!("sample {i} has step index {}", s.t)));
            }
            if s.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
                return Err(Error::InvalidTrajectory(format!(
                    "sample {i} has an action outside [-1, 1]"
                )));
            }
        }
        if let Some(first) = samples.first() {
            let (sd, ad) = (first.state.len(), first.action.len());
            if samples.iter().any(|s| s.state.len() != sd || s.action.len() != ad) {
                return Err(Error::InvalidTrajectory("inconsistent state/action dimensions".into()));
            }
        }
        let demos = samples.iter().filter(|s| s.label == ClassLabel::Demo).count();
        if demos != 0 && demos != samples.len() {
            return Err(Error::InvalidTrajectory(
                "demonstrations must be labeled demo throughout".into(),
            ));
        }
        Ok(Trajectory {
            samples,
            round,
            seed,
            success,
            source,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn is_demo(&self) -> bool {
        self.samples.first().is_some_and(|s| s.label == ClassLabel::Demo)
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.labels().filter(|&l| l == label).count()
    }

    /// Copy of this trajectory with new labels, everything else unchanged.
    pub fn with_labels(&self, labels: &[ClassLabel]) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} labels for {} samples",
                labels.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &label)| Sample { label, ..s.clone() })
            .collect();
        Trajectory::new(samples, self.round, self.seed, self.success, self.source)
    }
}

/// Maximal runs of `intv` labels as half-open `[start, end)` ranges.
pub fn intervention_segments(traj: &Trajectory) -> Vec<(usize, usize)> {
    label_segments(traj.labels(), ClassLabel::Intv)
}

pub(crate) fn label_segments(labels: impl IntoIterator<Item = ClassLabel>, target: ClassLabel) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, l) in labels.into_iter().enumerate() {
        match (l == target, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
        n = i + 1;
    }
    if let Some(s) = start {
        out.push((s, n));
    }
    out
}

/// Per-class sample counts, indexed by [`ClassLabel::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub demo: usize,
    pub intv: usize,
    pub preintv: usize,
    pub robot: usize,
}

impl ClassCounts {
    pub fn get(&self, label: ClassLabel) -> usize {
        match label {
            ClassLabel::Demo => self.demo,
            ClassLabel::Intv => self.intv,
            ClassLabel::Preintv => self.preintv,
            ClassLabel::Robot => self.robot,
        }
    }

    pub fn add(&mut self, label: ClassLabel, n: usize) {
        match label {
            ClassLabel::Demo => self.demo += n,
            ClassLabel::Intv => self.intv += n,
            ClassLabel::Preintv => self.preintv += n,
            ClassLabel::Robot => self.robot += n,
        }
    }

    pub fn total(&self) -> usize {
        self.demo + self.intv + self.preintv + self.robot
    }

    pub fn of_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut c = ClassCounts::default();
        for traj in trajs {
            for l in traj.labels() {
                c.add(l, 1);
            }
        }
        c
    }
}

/// Probability mass per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    p: [f64; 4],
}

impl ClassDistribution {
    /// Builds a distribution, checking non-negativity and unit mass (1e-12).
    pub fn new(demo: f64, intv: f64, preintv: f64, robot: f64) -> Result<Self> {
        Self::from_array([demo, intv, preintv, robot])
    }

    pub fn from_array(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidScheme(format!(
                "class probabilities must be finite and non-negative: {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidScheme(format!("class probabilities sum to {sum}, not 1")));
        }
        Ok(ClassDistribution { p })
    }

    pub fn from_counts(counts: &ClassCounts) -> Result<Self> {
        let n = counts.total();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = n as f64;
        Ok(ClassDistribution {
            p: ClassLabel::ALL.map(|c| counts.get(c) as f64 / n),
        })
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.p[label.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.p
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }
}

/// A task-tagged collection of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task_id: String,
    pub trajectories: Vec<Arc<Trajectory>>,
}

impl Dataset {
    pub fn new(task_id: impl Into<String>) -> Self {
        Dataset {
            task_id: task_id.into(),
            trajectories: Vec::new(),
        }
    }

    pub fn from_trajectories(task_id: impl Into<String>, trajectories: impl IntoIterator<Item = Trajectory>) -> Self {
        Dataset {
            task_id: task_id.into(),
            trajectories: trajectories.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn push(&mut self, traj: Trajectory) {
        self.trajectories.push(Arc::new(traj));
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().map(|t| t.as_ref())
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.iter().flat_map(|t| t.samples().iter())
    }
}

pub fn class_counts(dataset: &Dataset) -> ClassCounts {
    ClassCounts::of_trajectories(dataset.iter())
}

pub fn class_distribution(dataset: &Dataset) -> Result<ClassDistribution> {
    ClassDistribution::from_counts(&class_counts(dataset))
}

// ---------------------------------------------------------------------------
// JSON-lines trajectory log
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    traj: Header,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    round: u32,
    seed: u64,
    success: bool,
    source: Source,
    task_id: String,
    len: usize,
}

#[derive(Debug, Deserialize)]
struct SampleLine {
    t: u32,
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    c: ClassLabel,
}

/// 17 significant digits, which round-trips every finite f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_floats(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
}

/// Appends one episode (header + samples) to a writer.
pub fn write_episode(w: &mut impl Write, traj: &Trajectory, task_id: &str) -> std::io::Result<()> {
    let header = HeaderLine {
        traj: Header {
            round: traj.round,
            seed: traj.seed,
            success: traj.success,
            source: traj.source,
            task_id: task_id.to_owned(),
            len: traj.len(),
        },
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut line = String::new();
    for s in &traj.samples {
        line.clear();
        line.push_str(&format!("{{\"t\":{},\"s\":", s.t));
        push_floats(&mut line, &s.state);
        line.push_str(",\"a\":");
        push_floats(&mut line, &s.action);
        line.push_str(",\"r\":");
        line.push_str(&fmt_f64(s.reward));
        line.push_str(&format!(",\"c\":\"{}\"}}\n", s.label));
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Writes a single-episode log file, replacing any existing file.
pub fn write_trajectory(path: &Path, traj: &Trajectory, task_id: &str) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_episode(&mut w, traj, task_id)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads every episode in a log file. Returns `(task_id, trajectory)` pairs.
pub fn read_episodes(path: &Path) -> Result<Vec<(String, Trajectory)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line: line + 1,
        message,
    };
    let mut out = Vec::new();
    while let Some((ln, line)) = lines.next() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let header: HeaderLine = serde_json::from_str(&line).map_err(|e| parse_err(ln, e.to_string()))?;
        let h = header.traj;
        let mut samples = Vec::with_capacity(h.len);
        for _ in 0..h.len {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(ln, format!("episode truncated, expected {} samples", h.len)))?;
            let line = line.map_err(|e| Error::io(path, e))?;
            let s: SampleLine = serde_json::from_str(&line).map_err(|e| parse_err(ln, e.to_string()))?;
            samples.push(Sample {
                t: s.t,
                state: s.s,
                action: s.a,
                reward: s.r,
                label: s.c,
            });
        }
        let traj =
            Trajectory::new(samples, h.round, h.seed, h.success, h.source).map_err(|e| parse_err(ln, e.to_string()))?;
        out.push((h.task_id, traj));
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<(String, Trajectory)> {
    let mut eps = read_episodes(path)?;
    if eps.len() != 1 {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected exactly one episode, found {}", eps.len()),
        });
    }
    Ok(eps.remove(0))
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task_id: String,
    pub files: Vec<String>,
}

/// File name used for the `index`-th trajectory of a dataset directory.
pub fn trajectory_file_name(index: usize, traj: &Trajectory) -> String {
    format!("traj_{index:05}_r{}_s{}.jsonl", traj.round, traj.seed)
}

/// Writes a dataset as a directory of per-episode logs plus `manifest.json`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(dataset.trajectories.len());
    for (i, traj) in dataset.iter().enumerate() {
        let name = trajectory_file_name(i, traj);
        write_trajectory(&dir.join(&name), traj, &dataset.task_id)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        task_id: dataset.task_id.clone(),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut ds = Dataset::new(manifest.task_id.clone());
    for f in &manifest.files {
        let path = dir.join(f);
        for (task_id, traj) in read_episodes(&path)? {
            if task_id != manifest.task_id {
                return Err(Error::Parse {
                    path,
                    line: 1,
                    message: format!("task_id {task_id} does not match manifest"),
                });
            }
            ds.push(traj);
        }
    }
    Ok(ds)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ClassLabel::*;

    pub(crate) fn traj_with_labels(labels: &[ClassLabel]) -> Trajectory {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(t, &label)| Sample {
                t: t as u32,
                state: vec![t as f64 * 0.1, 1.0 / (t as f64 + 3.0)],
                action: vec![0.25, -0.5, 1.0],
                reward: 0.0,
                label,
            })
            .collect();
        Trajectory::new(samples, 1, 7, true, Source::ScriptedOracle).unwrap()
    }

    fn dataset_with_counts(demo: usize, intv: usize, preintv: usize, robot: usize) -> Dataset {
        let mut ds = Dataset::new("t");
        if demo > 0 {
            ds.push(traj_with_labels(&vec![Demo; demo]));
        }
        let mut labels = vec![Robot; robot];
        labels.extend(vec![Preintv; preintv]);
        labels.extend(vec![Intv; intv]);
        if !labels.is_empty() {
            ds.push(traj_with_labels(&labels));
        }
        ds
    }

    #[test]
    fn counts_and_distribution() {
        let ds = dataset_with_counts(100, 50, 30, 320);
        let c = class_counts(&ds);
        assert_eq!(
            c,
            ClassCounts {
                demo: 100,
                intv: 50,
                preintv: 30,
                robot: 320
            }
        );
        assert_eq!(c.total(), ds.num_samples());
        let p = class_distribution(&ds).unwrap();
        assert_eq!(p.as_array(), [0.2, 0.1, 0.06, 0.64]);
    }

    #[test]
    fn empty_dataset() {
        let ds = Dataset::new("t");
        assert_eq!(class_counts(&ds), ClassCounts::default());
        assert!(matches!(class_distribution(&ds), Err(Error::EmptyDataset)));
    }

    #[test]
    fn pure_demo_dataset() {
        let ds = dataset_with_counts(7, 0, 0, 0);
        assert_eq!(class_counts(&ds).demo, 7);
        assert_eq!(class_distribution(&ds).unwrap().get(Demo), 1.0);
    }

    #[test]
    fn segments() {
        let t = traj_with_labels(&[Robot, Robot, Intv, Intv, Robot, Intv]);
        assert_eq!(intervention_segments(&t), vec![(2, 4), (5, 6)]);
        let t = traj_with_labels(&[Robot; 5]);
        assert!(intervention_segments(&t).is_empty());
        let t = traj_with_labels(&[Intv; 4]);
        assert_eq!(intervention_segments(&t), vec![(0, 4)]);
    }

    #[test]
    fn rejects_impure_demo_and_gaps() {
        let mut s = traj_with_labels(&[Demo, Demo]).samples().to_vec();
        s[1].label = Robot;
        assert!(Trajectory::new(s.clone(), 0, 0, true, Source::ScriptedOracle).is_err());
        s[1].label = Demo;
        s[1].t = 5;
        assert!(Trajectory::new(s, 0, 0, true, Source::ScriptedOracle).is_err());
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn dataset_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset_with_counts(3, 2, 1, 4);
        let manifest = write_dataset(dir.path(), &ds).unwrap();
        assert_eq!(manifest.files.len(), 2);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn sample_line_layout() {
        let t = traj_with_labels(&[Intv]);
        let mut buf = Vec::new();
        write_episode(&mut buf, &t, "pick_insert").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"traj":{"round":1,"seed":7,"success":true,"source":"scripted_oracle","task_id":"pick_insert","len":1}}"#
        );
        assert!(lines[1].starts_with(r#"{"t":0,"s":["#));
        assert!(lines[1].ends_with(r#""c":"intv"}"#));
    }
}
