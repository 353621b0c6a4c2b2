//! Depth-first branch-and-bound over occupancy variables.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::{DomainState, Propagator, ScoreTable, Solution, ViewTerm};
use crate::error::{Error, Result};
use crate::grammar::{is_valid, GrammarInstance};
use crate::grid::{Occupancy, StructureEstimate};

/// One visited search node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceLine {
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchStats {
    pub nodes: usize,
    pub leaves: usize,
    pub trace: Vec<TraceLine>,
}

/// Configurable maximum-likelihood search.
///
/// Structures are ranked by score, then by fewer occupied positions, then by
/// the lexicographically smallest vector of canonical occupancy codes. The
/// search returns the unique best structure under that order, so the result
/// does not depend on the initial incumbent or on restriction order.
#[derive(Clone, Debug)]
pub struct Estimator<'g> {
    g: &'g GrammarInstance,
    views: Vec<ViewTerm<'g>>,
    warm_start: Option<StructureEstimate>,
    placements: Vec<Vec<u8>>,
    trace: bool,
}

impl<'g> Estimator<'g> {
    pub fn new(g: &'g GrammarInstance) -> Self {
        Estimator {
            g,
            views: Vec::new(),
            warm_start: None,
            placements: Vec::new(),
            trace: false,
        }
    }

    pub fn view(mut self, view: ViewTerm<'g>) -> Self {
        self.views.push(view);
        self
    }

    pub fn views(mut self, views: impl IntoIterator<Item = ViewTerm<'g>>) -> Self {
        self.views.extend(views);
        self
    }

    /// Seeds the incumbent with a known structure, e.g. the previous estimate.
    pub fn warm_start(mut self, s: StructureEstimate) -> Self {
        self.warm_start = Some(s);
        self
    }

    /// Adds one alternative set of per-position occupancy masks. With several
    /// placements the search covers their union.
    pub fn placement(mut self, masks: Vec<u8>) -> Self {
        self.placements.push(masks);
        self
    }

    pub fn trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn solve(&self) -> Result<Solution> {
        self.solve_with_stats().map(|(s, _)| s)
    }

    /// Some valid structure other than `s` scoring at least as high as `s`,
    /// if one exists. The search is seeded with the score of `s`, so only
    /// subtrees that could reach it are explored.
    pub fn rival(&self, s: &StructureEstimate) -> Result<Option<Solution>> {
        self.check()?;
        let extent = self.g.extent();
        let table = ScoreTable::new(extent, &self.views)?;
        let structural = self.structural();
        let threshold = table.score(s);
        let excluded: Vec<u8> = s.cells().iter().map(|v| v.code()).collect();
        let mut search = Search {
            table: &table,
            prop: Propagator::new(&structural),
            incumbent: None,
            rival: Some(Rival {
                threshold,
                excluded,
                found: None,
            }),
            stats: SearchStats::default(),
            trace: false,
        };
        for masks in self.placement_masks() {
            let mut root = DomainState::full(&structural);
            for (index, &m) in masks.iter().enumerate() {
                root.restrict_mask(index, m);
            }
            if search.prop.propagate(&mut root) {
                search.descend(root, 0);
            }
        }
        let found = search.rival.and_then(|r| r.found);
        found
            .map(|f| {
                let structure = StructureEstimate::from_cells(
                    extent,
                    f.codes.iter().map(|&c| Occupancy::from_code(c)).collect(),
                )?;
                Ok(Solution {
                    structure,
                    log_probability: f.score,
                })
            })
            .transpose()
    }

    fn check(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidParameter(
                "estimation needs at least one view".into(),
            ));
        }
        let n = self.g.extent().len();
        for masks in &self.placements {
            if masks.len() != n {
                return Err(Error::ExtentMismatch(format!(
                    "placement has {} masks for {n} positions",
                    masks.len()
                )));
            }
        }
        Ok(())
    }

    fn structural(&self) -> GrammarInstance {
        let all: BTreeSet<_> = self.g.features().ids().iter().copied().collect();
        self.g.without_features(&all)
    }

    fn placement_masks(&self) -> Vec<Vec<u8>> {
        if self.placements.is_empty() {
            vec![vec![0b111_1111; self.g.extent().len()]]
        } else {
            self.placements.clone()
        }
    }

    pub fn solve_with_stats(&self) -> Result<(Solution, SearchStats)> {
        self.check()?;
        let extent = self.g.extent();
        let table = ScoreTable::new(extent, &self.views)?;
        let structural = self.structural();
        let placements = self.placement_masks();
        let allowed = |s: &StructureEstimate| {
            placements.iter().any(|masks| {
                s.cells()
                    .iter()
                    .zip(masks)
                    .all(|(v, m)| m & (1 << v.code()) != 0)
            })
        };
        let mut search = Search {
            table: &table,
            prop: Propagator::new(&structural),
            incumbent: None,
            rival: None,
            stats: SearchStats::default(),
            trace: self.trace,
        };
        let empty = StructureEstimate::empty(extent);
        if allowed(&empty) {
            search.offer(&empty);
        }
        if let Some(w) = &self.warm_start {
            if w.extent() == extent && is_valid(w, self.g) && allowed(w) {
                search.offer(w);
            }
        }
        for masks in &placements {
            let mut root = DomainState::full(&structural);
            for (index, &m) in masks.iter().enumerate() {
                root.restrict_mask(index, m);
            }
            if search.prop.propagate(&mut root) {
                search.descend(root, 0);
            }
        }
        let Search {
            incumbent, stats, ..
        } = search;
        let best = incumbent.ok_or(Error::NoValidStructure)?;
        let structure = StructureEstimate::from_cells(
            extent,
            best.codes
                .iter()
                .map(|&c| Occupancy::from_code(c))
                .collect(),
        )?;
        Ok((
            Solution {
                structure,
                log_probability: best.score,
            },
            stats,
        ))
    }
}

#[derive(Clone, Debug)]
struct Incumbent {
    score: f64,
    occupied: usize,
    codes: Vec<u8>,
}

impl Incumbent {
    /// `Greater` when `self` ranks above `other`.
    fn rank(&self, other: &Incumbent) -> Ordering {
        self.score
            .partial_cmp(&other.score)
            .expect("scores are never NaN")
            .then(other.occupied.cmp(&self.occupied))
            .then(other.codes.cmp(&self.codes))
    }
}

/// Looking for any structure other than `excluded` at or above `threshold`.
struct Rival {
    threshold: f64,
    excluded: Vec<u8>,
    found: Option<Incumbent>,
}

struct Search<'t, 'g> {
    table: &'t ScoreTable,
    prop: Propagator<'g>,
    incumbent: Option<Incumbent>,
    rival: Option<Rival>,
    stats: SearchStats,
    trace: bool,
}

impl Search<'_, '_> {
    fn offer(&mut self, s: &StructureEstimate) {
        let cand = Incumbent {
            score: self.table.score(s),
            occupied: s.occupied_count(),
            codes: s.cells().iter().map(|v| v.code()).collect(),
        };
        self.consider(cand);
    }

    fn consider(&mut self, cand: Incumbent) {
        let better = match &self.incumbent {
            None => true,
            Some(inc) => cand.rank(inc) == Ordering::Greater,
        };
        if better {
            self.incumbent = Some(cand);
        }
    }

    /// True when no completion of `d` can rank above the incumbent.
    fn dominated(&self, masks: &[u8], (bound, occupied_lb): (f64, usize)) -> bool {
        let Some(inc) = &self.incumbent else {
            return false;
        };
        if bound < inc.score {
            return true;
        }
        if bound > inc.score {
            return false;
        }
        match occupied_lb.cmp(&inc.occupied) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                // every completion is componentwise at or above the smallest codes
                let smallest = masks.iter().map(|m| m.trailing_zeros() as u8);
                smallest.cmp(inc.codes.iter().copied()) != Ordering::Less
            }
        }
    }

    fn descend(&mut self, d: DomainState, depth: usize) {
        self.stats.nodes += 1;
        let masks = d.occupancy_masks();
        let pair = self.table.bound(masks);
        let bound = pair.0;
        if self.trace {
            let incumbent = self
                .incumbent
                .as_ref()
                .map_or(f64::NEG_INFINITY, |i| i.score);
            self.stats.trace.push(TraceLine {
                depth,
                bound,
                incumbent,
            });
        }
        if let Some(r) = &self.rival {
            if r.found.is_some() || bound < r.threshold {
                return;
            }
        } else if self.dominated(masks, pair) {
            return;
        }
        // top layer first: placing upper logs forces their support below
        let layer = self.table.extent().i_max * self.table.extent().k_max;
        let next = (0..masks.len())
            .rev()
            .step_by(layer)
            .flat_map(|top| top + 1 - layer..=top)
            .find(|&n| masks[n].count_ones() > 1);
        let Some(var) = next else {
            self.stats.leaves += 1;
            let codes: Vec<u8> = masks.iter().map(|m| m.trailing_zeros() as u8).collect();
            let occupied = codes.iter().filter(|&&c| c != 0).count();
            let leaf = Incumbent {
                score: bound,
                occupied,
                codes,
            };
            match &mut self.rival {
                Some(r) => {
                    if leaf.codes != r.excluded {
                        r.found = Some(leaf);
                    }
                }
                None => self.consider(leaf),
            }
            return;
        };
        let row = self.table.row(var);
        let mut values: Vec<u8> = (0..7u8).filter(|c| masks[var] & (1 << c) != 0).collect();
        values.sort_by(|a, b| {
            row[*b as usize]
                .partial_cmp(&row[*a as usize])
                .expect("scores are never NaN")
                .then(a.cmp(b))
        });
        for value in values {
            let mut child = d.clone();
            child.restrict_mask(var, 1 << value);
            if self.prop.propagate_from(&mut child, &[var]) {
                self.descend(child, depth + 1);
            }
        }
    }
}
