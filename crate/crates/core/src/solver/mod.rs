//! Maximum-likelihood structure estimation.
//!
//! Feature variables are marginalized against their priors. Because every
//! feature is a function of the occupancy at its own position, the conditional
//! marginal of a structure is a product over positions, and the solver works
//! with a per-position table of log-probabilities summed across views. The
//! argmax is found by depth-first branch-and-bound over occupancy variables
//! with arc consistency at every node.

mod consistency;
mod search;

pub use consistency::{arc_consistency, DomainState, Propagator};
pub use search::{Estimator, SearchStats, TraceLine};

use crate::error::{Error, Result};
use crate::grammar::GrammarInstance;
use crate::grid::{FeatureId, FeatureIndex, GridExtent, GridPos, Occupancy, StructureEstimate};

/// Probability that a feature is present.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeaturePrior {
    p_true: f64,
}

impl FeaturePrior {
    pub const UNIFORM: FeaturePrior = FeaturePrior { p_true: 0.5 };

    pub fn new(p_true: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p_true) {
            Ok(FeaturePrior { p_true })
        } else {
            Err(Error::InvalidParameter(format!(
                "prior {p_true} outside [0, 1]"
            )))
        }
    }

    pub fn p_true(self) -> f64 {
        self.p_true
    }

    pub fn p_false(self) -> f64 {
        1.0 - self.p_true
    }

    pub fn p(self, value: bool) -> f64 {
        if value {
            self.p_true
        } else {
            self.p_false()
        }
    }
}

/// Priors for every feature of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSet {
    index: FeatureIndex,
    p_true: Vec<f64>,
}

impl PriorSet {
    pub fn uniform(extent: GridExtent) -> Self {
        let index = FeatureIndex::new(extent);
        let p_true = vec![0.5; index.len()];
        PriorSet { index, p_true }
    }

    pub fn extent(&self) -> GridExtent {
        self.index.extent()
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn get(&self, fid: FeatureId) -> Option<FeaturePrior> {
        self.index.get(fid).map(|n| FeaturePrior {
            p_true: self.p_true[n],
        })
    }

    pub fn set(&mut self, fid: FeatureId, prior: FeaturePrior) -> Result<()> {
        let n = self.index.get(fid).ok_or_else(|| {
            Error::InvalidParameter(format!("feature {fid} is not defined on {}", self.extent()))
        })?;
        self.p_true[n] = prior.p_true;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.p_true
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.p_true
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, FeaturePrior)> + '_ {
        self.index
            .ids()
            .iter()
            .zip(&self.p_true)
            .map(|(&fid, &p_true)| (fid, FeaturePrior { p_true }))
    }
}

/// Most likely valid structure and its log conditional marginal
/// (natural log, structure prior dropped as a constant).
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub structure: StructureEstimate,
    pub log_probability: f64,
}

impl Solution {
    /// Solver preference: `Greater` when `self` ranks above `other` (higher
    /// score, then fewer occupied positions, then smaller canonical codes).
    pub fn rank(&self, other: &Solution) -> std::cmp::Ordering {
        let codes = |s: &Solution| {
            s.structure
                .cells()
                .iter()
                .map(|v| v.code())
                .collect::<Vec<_>>()
        };
        self.log_probability
            .partial_cmp(&other.log_probability)
            .expect("scores are never NaN")
            .then(
                other
                    .structure
                    .occupied_count()
                    .cmp(&self.structure.occupied_count()),
            )
            .then_with(|| codes(other).cmp(&codes(self)))
    }
}

/// Evidence of one view: its priors and the grammar instance whose feature
/// links say which of its feature variables take part.
#[derive(Clone, Copy, Debug)]
pub struct ViewTerm<'a> {
    pub grammar: &'a GrammarInstance,
    pub priors: &'a PriorSet,
}

/// Per-position log-probability of each occupancy value, summed over the
/// feature variables of every view.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    extent: GridExtent,
    rows: Vec<[f64; 7]>,
    /// Position indices grouped by medial axis, each in log direction.
    lines: Vec<Vec<usize>>,
}

/// Whether code `b` may directly follow code `a` along a medial axis.
fn may_follow(a: Occupancy, b: Occupancy) -> bool {
    let a_open = matches!(a, Occupancy::Notch { len, index } if index + 1 < len);
    match b {
        Occupancy::Notch { len, index } if index > 0 => {
            a == Occupancy::Notch {
                len,
                index: index - 1,
            }
        }
        _ => !a_open,
    }
}

fn may_end(a: Occupancy) -> bool {
    !matches!(a, Occupancy::Notch { len, index } if index + 1 < len)
}

fn may_start(b: Occupancy) -> bool {
    !matches!(b, Occupancy::Notch { index, .. } if index > 0)
}

/// Medial axes of `extent`, each listing position indices in log direction.
pub(crate) fn medial_lines(extent: GridExtent) -> Vec<Vec<usize>> {
    let mut lines = Vec::new();
    for q in extent.positions() {
        if extent.prev(q).is_some() {
            continue;
        }
        let mut line = vec![extent.index(q)];
        let mut at = q;
        while let Some(n) = extent.next(at) {
            line.push(extent.index(n));
            at = n;
        }
        lines.push(line);
    }
    lines
}

impl ScoreTable {
    pub fn new(extent: GridExtent, views: &[ViewTerm<'_>]) -> Result<Self> {
        let mut rows = vec![[0.0; 7]; extent.len()];
        for view in views {
            if view.grammar.extent() != extent || view.priors.extent() != extent {
                return Err(Error::ExtentMismatch(format!(
                    "view over {} / {} for extent {extent}",
                    view.grammar.extent(),
                    view.priors.extent()
                )));
            }
            for fid in view.grammar.feature_links() {
                let prior = view.priors.get(fid).expect("same extent");
                let row = &mut rows[extent.index(fid.q)];
                for (code, slot) in row.iter_mut().enumerate() {
                    let implied = fid.f.implied_by(Occupancy::from_code(code as u8));
                    *slot += prior.p(implied).ln();
                }
            }
        }
        Ok(ScoreTable {
            extent,
            rows,
            lines: medial_lines(extent),
        })
    }

    pub fn extent(&self) -> GridExtent {
        self.extent
    }

    pub fn value(&self, q: GridPos, v: Occupancy) -> f64 {
        self.rows[self.extent.index(q)][v.code() as usize]
    }

    pub(crate) fn row(&self, index: usize) -> &[f64; 7] {
        &self.rows[index]
    }

    /// Log-probability of a structure: per medial axis sums, added up in
    /// axis order. The search accumulates its bound in the same order, so a
    /// fully decided node's bound equals the score exactly.
    pub fn score(&self, s: &StructureEstimate) -> f64 {
        let cells = s.cells();
        self.lines.iter().fold(0.0, |acc, line| {
            acc + line
                .iter()
                .fold(0.0, |sum, &n| sum + self.rows[n][cells[n].code() as usize])
        })
    }

    /// Best score any completion of `d` could reach. Log-chain structure along
    /// each medial axis is respected exactly; coupling between axes is
    /// relaxed.
    pub fn upper_bound(&self, d: &DomainState) -> f64 {
        self.bound(d.occupancy_masks()).0
    }

    /// Upper bound on the score together with the fewest occupied positions
    /// among per-axis completions reaching it. Both sides of the pair are
    /// accumulated in axis order, so on a fully decided node this is exactly
    /// the structure's score and occupied count.
    pub(crate) fn bound(&self, masks: &[u8]) -> (f64, usize) {
        self.lines.iter().fold((0.0, 0), |(s, o), line| {
            let (ls, lo) = self.line_bound(line, masks);
            (s + ls, o + lo)
        })
    }

    fn line_bound(&self, line: &[usize], masks: &[u8]) -> (f64, usize) {
        const NONE: (f64, usize) = (f64::NEG_INFINITY, usize::MAX);
        let better = |a: (f64, usize), b: (f64, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
        let mut best = [NONE; 7];
        for (step, &n) in line.iter().enumerate() {
            let row = &self.rows[n];
            let mut next = [NONE; 7];
            for (code, slot) in next.iter_mut().enumerate() {
                if masks[n] & (1 << code) == 0 {
                    continue;
                }
                let b = Occupancy::from_code(code as u8);
                let prev = if step == 0 {
                    if may_start(b) {
                        (0.0, 0)
                    } else {
                        NONE
                    }
                } else {
                    (0..7)
                        .filter(|&a| may_follow(Occupancy::from_code(a as u8), b))
                        .map(|a| best[a])
                        .fold(NONE, |x, y| if better(y, x) { y } else { x })
                };
                if prev.1 != usize::MAX {
                    *slot = (prev.0 + row[code], prev.1 + usize::from(code != 0));
                }
            }
            best = next;
        }
        (0..7)
            .filter(|&c| may_end(Occupancy::from_code(c as u8)))
            .map(|c| best[c])
            .fold(NONE, |x, y| if better(y, x) { y } else { x })
    }
}

/// Sum over views and features of the log prior of the implied feature value.
/// A zero prior on an implied value gives negative infinity.
pub fn score(s: &StructureEstimate, g: &GrammarInstance, priors: &[PriorSet]) -> Result<f64> {
    let views: Vec<ViewTerm> = priors
        .iter()
        .map(|p| ViewTerm {
            grammar: g,
            priors: p,
        })
        .collect();
    Ok(ScoreTable::new(g.extent(), &views)?.score(s))
}

/// Most likely valid structure given one or more views over the canonical grid.
pub fn estimate(g: &GrammarInstance, priors: &[PriorSet]) -> Result<Solution> {
    let mut est = Estimator::new(g);
    for p in priors {
        est = est.view(ViewTerm {
            grammar: g,
            priors: p,
        });
    }
    est.solve()
}
