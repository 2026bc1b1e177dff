//! Pre-intervention relabeling.
//!
//! Robot samples in the `ell` steps before each intervention start are
//! marked `preintv`. `demo` and `intv` labels are never touched.

use serde::{Deserialize, Serialize};

use crate::data::{intervention_segments, ClassLabel, Trajectory};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    pub ell: usize,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig { ell: 15 }
    }
}

/// Relabeled label sequence; see [`relabel_preintv`].
pub fn relabel_labels(labels: &[ClassLabel], segments: &[(usize, usize)], ell: usize) -> Vec<ClassLabel> {
    let mut out = labels.to_vec();
    for &(start, _) in segments {
        for l in &mut out[start.saturating_sub(ell)..start] {
            if *l == ClassLabel::Robot {
                *l = ClassLabel::Preintv;
            }
        }
    }
    out
}

pub fn relabel_preintv(traj: &Trajectory, config: LabelingConfig) -> Result<Trajectory> {
    let labels: Vec<_> = traj.labels().collect();
    let relabeled = relabel_labels(&labels, &intervention_segments(traj), config.ell);
    if relabeled == labels {
        return Ok(traj.clone());
    }
    traj.with_labels(&relabeled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::traj_with_labels;
    use proptest::prelude::*;
    use ClassLabel::*;

    /// Per-index oracle: robot-labeled and an intervention starts within the next `ell` positions.
    fn oracle(labels: &[ClassLabel], ell: usize) -> Vec<ClassLabel> {
        let is_start = |j: usize| labels[j] == Intv && (j == 0 || labels[j - 1] != Intv);
        (0..labels.len())
            .map(|i| {
                let hit = (i + 1..=(i + ell).min(labels.len().saturating_sub(1))).any(is_start);
                if labels[i] == Robot && hit {
                    Preintv
                } else {
                    labels[i]
                }
            })
            .collect()
    }

    fn relabel(labels: &[ClassLabel], ell: usize) -> Vec<ClassLabel> {
        relabel_preintv(&traj_with_labels(labels), LabelingConfig { ell })
            .unwrap()
            .labels()
            .collect()
    }

    fn with_segments(len: usize, segs: &[(usize, usize)]) -> Vec<ClassLabel> {
        let mut l = vec![Robot; len];
        for &(a, b) in segs {
            l[a..b].fill(Intv);
        }
        l
    }

    #[test]
    fn window_before_segment() {
        let out = relabel(&with_segments(60, &[(40, 55)]), 15);
        let pre: Vec<_> = (0..60).filter(|&i| out[i] == Preintv).collect();
        assert_eq!(pre, (25..40).collect::<Vec<_>>());
    }

    #[test]
    fn clipped_at_episode_start() {
        let out = relabel(&with_segments(20, &[(5, 9)]), 15);
        assert!(out[..5].iter().all(|&l| l == Preintv));
        assert!(out[5..9].iter().all(|&l| l == Intv));
        assert!(out[9..].iter().all(|&l| l == Robot));
    }

    #[test]
    fn close_segments() {
        let labels = with_segments(50, &[(20, 25), (30, 40)]);
        let out = relabel(&labels, 15);
        assert_eq!(out, oracle(&labels, 15));
        let pre: Vec<_> = (0..50).filter(|&i| out[i] == Preintv).collect();
        let expected: Vec<_> = (5..20).chain(25..30).collect();
        assert_eq!(pre, expected);
        assert!(out[20..25].iter().all(|&l| l == Intv));
    }

    #[test]
    fn demos_untouched() {
        let t = traj_with_labels(&[Demo; 10]);
        assert_eq!(relabel_preintv(&t, LabelingConfig::default()).unwrap(), t);
    }

    fn arb_labels() -> impl Strategy<Value = Vec<ClassLabel>> {
        prop::collection::vec(prop_oneof![3 => Just(Robot), 1 => Just(Intv)], 0..100)
    }

    proptest! {
        #[test]
        fn matches_oracle(labels in arb_labels(), ell in 0usize..30) {
            prop_assert_eq!(relabel(&labels, ell), oracle(&labels, ell));
        }

        #[test]
        fn idempotent_and_bounded(labels in arb_labels(), ell in 0usize..30) {
            let t = traj_with_labels(&labels);
            let once = relabel_preintv(&t, LabelingConfig { ell }).unwrap();
            let twice = relabel_preintv(&once, LabelingConfig { ell }).unwrap();
            prop_assert_eq!(&once, &twice);
            let n_seg = intervention_segments(&t).len();
            prop_assert!(once.count(Preintv) <= ell * n_seg);
            for (a, b) in t.samples().iter().zip(once.samples()) {
                prop_assert_eq!(&a.state, &b.state);
                prop_assert_eq!(&a.action, &b.action);
            }
        }

        #[test]
        fn monotone_in_ell(labels in arb_labels(), e1 in 0usize..30, extra in 0usize..10) {
            let small = relabel(&labels, e1);
            let large = relabel(&labels, e1 + extra);
            for (a, b) in small.iter().zip(&large) {
                if *a == Preintv {
                    prop_assert_eq!(*b, Preintv);
                }
            }
        }
    }
}
