//! Class rebalancing: target distributions and per-class importance weights.
//!
//! A scheme pins the target mass of some classes; the remaining ("unpinned")
//! classes share what is left in proportion to their observed mass. Every
//! sample of class `c` is then weighted by `P*(c) / P(c)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{ClassDistribution, ClassLabel};
use crate::error::{Error, Result};

/// Slack allowed on the residual robot mass before a target is infeasible.
const RESIDUAL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Sirius,
    Iwr,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    RemoveDemo,
    RemoveIntv,
    RemovePreintv,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::RemoveDemo, Ablation::RemoveIntv, Ablation::RemovePreintv];

    pub fn class(self) -> ClassLabel {
        match self {
            Ablation::RemoveDemo => ClassLabel::Demo,
            Ablation::RemoveIntv => ClassLabel::Intv,
            Ablation::RemovePreintv => ClassLabel::Preintv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingScheme {
    pub kind: SchemeKind,
    pub p_star_intv: f64,
    pub p_star_preintv: f64,
    pub ablations: BTreeSet<Ablation>,
}

impl Default for WeightingScheme {
    fn default() -> Self {
        WeightingScheme::sirius()
    }
}

impl WeightingScheme {
    pub fn sirius() -> Self {
        WeightingScheme {
            kind: SchemeKind::Sirius,
            p_star_intv: 0.5,
            p_star_preintv: 0.0,
            ablations: BTreeSet::new(),
        }
    }

    pub fn iwr() -> Self {
        WeightingScheme {
            kind: SchemeKind::Iwr,
            ..Self::sirius()
        }
    }

    pub fn unweighted() -> Self {
        WeightingScheme {
            kind: SchemeKind::Unweighted,
            ..Self::sirius()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablations.insert(ablation);
        self
    }

    pub fn with_p_star_intv(mut self, p: f64) -> Self {
        self.p_star_intv = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScheme(m));
        if !(self.p_star_intv > 0.0 && self.p_star_intv < 1.0) {
            return bad(format!("p_star_intv must be in (0, 1), got {}", self.p_star_intv));
        }
        if self.p_star_preintv.is_nan() || self.p_star_preintv < 0.0 {
            return bad(format!("p_star_preintv must be >= 0, got {}", self.p_star_preintv));
        }
        if self.p_star_intv + self.p_star_preintv >= 1.0 {
            return bad("p_star_intv + p_star_preintv must be < 1".into());
        }
        if self.kind != SchemeKind::Sirius && !self.ablations.is_empty() {
            return bad("class ablations apply to the sirius scheme only".into());
        }
        Ok(())
    }

    /// Per-class pinned target mass; `None` means the class shares the residual.
    fn pins(&self, p: &ClassDistribution) -> [Option<f64>; 4] {
        use ClassLabel::*;
        let mut pins = [None; 4];
        match self.kind {
            SchemeKind::Unweighted => {}
            SchemeKind::Iwr => pins[Intv.index()] = Some(self.p_star_intv),
            SchemeKind::Sirius => {
                pins[Demo.index()] = Some(p.get(Demo));
                pins[Intv.index()] = Some(self.p_star_intv);
                pins[Preintv.index()] = Some(self.p_star_preintv);
                for a in &self.ablations {
                    pins[a.class().index()] = None;
                }
            }
        }
        pins
    }
}

/// Pins the given classes and spreads the residual over the rest by observed mass.
fn rebalance(p: &ClassDistribution, pins: [Option<f64>; 4]) -> Result<ClassDistribution> {
    for c in ClassLabel::ALL {
        if let Some(target) = pins[c.index()] {
            if target > 0.0 && p.get(c) == 0.0 {
                return Err(Error::MissingClass(c));
            }
        }
    }
    let pinned: f64 = pins.iter().flatten().sum();
    let mut residual = 1.0 - pinned;
    if residual < -RESIDUAL_SLACK {
        return Err(Error::InfeasibleTarget { residual });
    }
    residual = residual.max(0.0);
    let free: Vec<ClassLabel> = ClassLabel::ALL
        .into_iter()
        .filter(|c| pins[c.index()].is_none())
        .collect();
    let free_mass: f64 = free.iter().map(|&c| p.get(c)).sum();
    if free_mass == 0.0 && residual > RESIDUAL_SLACK {
        return Err(Error::MissingClass(*free.last().unwrap_or(&ClassLabel::Robot)));
    }
    let mut out = [0.0; 4];
    for c in ClassLabel::ALL {
        out[c.index()] = match pins[c.index()] {
            Some(t) => t,
            None if free_mass > 0.0 => residual * p.get(c) / free_mass,
            None => 0.0,
        };
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > RESIDUAL_SLACK {
        // Only reachable when the residual was clamped with nothing to absorb it.
        return Err(Error::InfeasibleTarget { residual: 1.0 - sum });
    }
    ClassDistribution::from_array(out)
}

/// Target class distribution `P*` for `scheme` given observed `P`.
pub fn target_distribution(p: &ClassDistribution, scheme: &WeightingScheme) -> Result<ClassDistribution> {
    scheme.validate()?;
    rebalance(p, scheme.pins(p))
}

/// Like [`target_distribution`], but a class whose pinned mass cannot be
/// honoured because it has no samples is left at its observed mass instead.
/// Returns the classes that were degraded this way.
pub fn target_distribution_with_fallback(
    p: &ClassDistribution,
    scheme: &WeightingScheme,
) -> Result<(ClassDistribution, Vec<ClassLabel>)> {
    scheme.validate()?;
    let mut pins = scheme.pins(p);
    let mut degraded = Vec::new();
    loop {
        match rebalance(p, pins) {
            Ok(d) => return Ok((d, degraded)),
            Err(Error::MissingClass(c)) if pins[c.index()].is_some() => {
                pins[c.index()] = Some(p.get(c));
                degraded.push(c);
            }
            Err(Error::MissingClass(c)) => {
                // Nothing left to absorb the residual: plain BC.
                degraded.push(c);
                return Ok((*p, degraded));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Per-class sample weights `w(c) = P*(c) / P(c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    w: [f64; 4],
}

impl WeightTable {
    pub fn new(p: &ClassDistribution, p_star: &ClassDistribution) -> Result<Self> {
        let mut w = [0.0; 4];
        for c in ClassLabel::ALL {
            let (obs, target) = (p.get(c), p_star.get(c));
            w[c.index()] = if obs > 0.0 {
                target / obs
            } else if target == 0.0 {
                0.0
            } else {
                return Err(Error::DivisionByZeroClass(c));
            };
        }
        Ok(WeightTable { w })
    }

    pub fn uniform() -> Self {
        WeightTable { w: [1.0; 4] }
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.w[label.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.w
    }
}

pub fn weight_table(p: &ClassDistribution, p_star: &ClassDistribution) -> Result<WeightTable> {
    WeightTable::new(p, p_star)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Feasible(ClassDistribution),
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub p_star_intv: f64,
    pub outcome: SweepOutcome,
}

/// Sirius targets for each `P*(intv)` in `grid`; infeasible points are kept and flagged.
pub fn sweep_targets(p: &ClassDistribution, base: &WeightingScheme, grid: &[f64]) -> Vec<SweepEntry> {
    grid.iter()
        .map(|&v| {
            let scheme = WeightingScheme {
                kind: SchemeKind::Sirius,
                ..base.clone()
            }
            .with_p_star_intv(v);
            let outcome = match target_distribution(p, &scheme) {
                Ok(d) => SweepOutcome::Feasible(d),
                Err(e) => SweepOutcome::Infeasible(e.to_string()),
            };
            SweepEntry {
                p_star_intv: v,
                outcome,
            }
        })
        .collect()
}

/// `(min, max)` sensible `P*(intv)`: the unweighted share, and the share that
/// leaves no robot mass.
pub fn intv_ratio_range(p: &ClassDistribution, p_star_preintv: f64) -> (f64, f64) {
    (p.get(ClassLabel::Intv), 1.0 - p.get(ClassLabel::Demo) - p_star_preintv)
}

/// `n` evenly spaced points spanning [`intv_ratio_range`].
pub fn intv_ratio_grid(p: &ClassDistribution, p_star_preintv: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = intv_ratio_range(p, p_star_preintv);
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
