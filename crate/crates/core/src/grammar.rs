//! The assembly grammar as relational constraints over occupancy and feature variables.
//!
//! Rules: notch chaining for 2- and 3-notch logs, full support for 1- and
//! 2-notch logs, two-of-three support for 3-notch logs, and the links between
//! occupancy and the log-end / log-segment features. Positions beyond the
//! perimeter are unoccupied, so chains may not run off the grid, and support is
//! only required above the lowest layer.
//!
//! Features are functional in the occupancy of their own position:
//!
//! | feature | true iff `q` holds |
//! |---------|--------------------|
//! | `-`, `u` | the first notch of a log |
//! | `+`, `v` | the last notch of a log |
//! | `w` | a notch whose log continues to `next(q)` |

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{
    FeatureClass, FeatureId, FeatureIndex, GridExtent, GridPos, Occupancy, StructureEstimate,
};

/// Largest extent accepted by the brute-force enumerator.
pub const ENUMERATION_LIMIT: usize = 36;

/// A variable of the constraint problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarId {
    Occupancy(GridPos),
    Feature(FeatureId),
}

/// Grammar rule that produced a constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    /// (a) 2-notch logs occupy two adjacent positions.
    TwoNotch,
    /// (b) 3-notch logs occupy three adjacent positions.
    ThreeNotch,
    /// (c) 1- and 2-notch logs are supported at every notch.
    FullSupport,
    /// (d) 3-notch logs are supported at two or more notches.
    PartialSupport,
    /// (e) log ends sit at the ends of logs.
    LogEnd,
    /// (f) short segments.
    ShortSegment,
    /// (g) long segments.
    LongSegment,
    /// Positions beyond the perimeter are unoccupied.
    Perimeter,
    /// Compiled from a description.
    Language,
}

impl Rule {
    pub fn tag(self) -> &'static str {
        match self {
            Rule::TwoNotch => "a",
            Rule::ThreeNotch => "b",
            Rule::FullSupport => "c",
            Rule::PartialSupport => "d",
            Rule::LogEnd => "e",
            Rule::ShortSegment => "f",
            Rule::LongSegment => "g",
            Rule::Perimeter => "boundary",
            Rule::Language => "psi",
        }
    }
}

/// Predicate of a constraint. Values are occupancy codes for occupancy
/// variables and `0`/`1` for feature variables, in scope order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// `[q, next(q)]`: notch `n` of a `len`-notch log at `q` iff notch `n+1` at `next(q)`.
    Chain { len: u8 },
    /// `[q]` with no `next(q)`: the log does not continue.
    NoSuccessor,
    /// `[q]` with no predecessor: `q` does not hold a later notch.
    NoPredecessor,
    /// `[q, below(q)]`: a 1- or 2-notch log at `q` needs `below(q)` occupied.
    FullSupport,
    /// `[q, below(q), below(next q), below(next next q)]`: a 3-notch log
    /// starting at `q` needs two of the three positions below occupied.
    PartialSupport,
    /// `[q, feature]`: feature value equals its implied value.
    Feature(FeatureClass),
    /// `[q]`: occupancy restricted to a code mask.
    Allowed(u8),
}

impl Relation {
    pub fn holds(&self, values: &[u8]) -> bool {
        let occ = |n: usize| Occupancy::from_code(values[n]);
        match *self {
            Relation::Chain { len } => (0..len - 1).all(|n| {
                let here = occ(0) == Occupancy::Notch { len, index: n };
                let there = occ(1) == Occupancy::Notch { len, index: n + 1 };
                here == there
            }),
            Relation::NoSuccessor => !occ(0).continues(),
            Relation::NoPredecessor => !occ(0).is_occupied() || occ(0).is_first(),
            Relation::FullSupport => !matches!(occ(0).len(), 1 | 2) || occ(1).is_occupied(),
            Relation::PartialSupport => {
                occ(0) != (Occupancy::Notch { len: 3, index: 0 })
                    || (1..4).filter(|&n| occ(n).is_occupied()).count() >= 2
            }
            Relation::Feature(f) => (values[1] == 1) == f.implied_by(occ(0)),
            Relation::Allowed(mask) => mask & (1 << values[0]) != 0,
        }
    }
}

/// One relational constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub scope: Vec<VarId>,
    pub relation: Relation,
    pub rule: Rule,
}

impl Constraint {
    pub fn satisfied(&self, values: &[u8]) -> bool {
        debug_assert_eq!(values.len(), self.scope.len());
        self.relation.holds(values)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {:?}", self.rule.tag(), self.relation)?;
        for v in &self.scope {
            match v {
                VarId::Occupancy(q) => write!(f, " Z{q}")?,
                VarId::Feature(fid) => write!(f, " Z{fid}")?,
            }
        }
        Ok(())
    }
}

/// Total assignment of the feature variables of an extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureAssignment {
    index: FeatureIndex,
    values: Vec<bool>,
}

impl FeatureAssignment {
    pub fn new(index: FeatureIndex, values: Vec<bool>) -> Self {
        assert_eq!(index.len(), values.len());
        FeatureAssignment { index, values }
    }

    pub fn get(&self, fid: FeatureId) -> Option<bool> {
        self.index.get(fid).map(|n| self.values[n])
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, bool)> + '_ {
        self.index
            .ids()
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }
}

/// The grammar instantiated over one extent.
///
/// Variables are numbered densely: occupancy variables take the extent's
/// position indices, feature variables follow in [`FeatureIndex`] order.
#[derive(Clone, Debug)]
pub struct GrammarInstance {
    extent: GridExtent,
    features: FeatureIndex,
    constraints: Vec<Constraint>,
    dense: Vec<Vec<usize>>,
}

/// Builds the grammar constraints for an extent.
pub fn instantiate(extent: GridExtent) -> GrammarInstance {
    let mut constraints = Vec::new();
    let occ = VarId::Occupancy;
    for q in extent.positions() {
        match extent.next(q) {
            Some(n) => {
                for (len, rule) in [(2, Rule::TwoNotch), (3, Rule::ThreeNotch)] {
                    constraints.push(Constraint {
                        scope: vec![occ(q), occ(n)],
                        relation: Relation::Chain { len },
                        rule,
                    });
                }
            }
            None => constraints.push(Constraint {
                scope: vec![occ(q)],
                relation: Relation::NoSuccessor,
                rule: Rule::Perimeter,
            }),
        }
        if extent.prev(q).is_none() {
            constraints.push(Constraint {
                scope: vec![occ(q)],
                relation: Relation::NoPredecessor,
                rule: Rule::Perimeter,
            });
        }
        if let Some(b) = extent.below(q) {
            constraints.push(Constraint {
                scope: vec![occ(q), occ(b)],
                relation: Relation::FullSupport,
                rule: Rule::FullSupport,
            });
            if let (Some(q1), Some(q2)) = (extent.advance(q, 1), extent.advance(q, 2)) {
                let b1 = extent.below(q1).unwrap();
                let b2 = extent.below(q2).unwrap();
                constraints.push(Constraint {
                    scope: vec![occ(q), occ(b), occ(b1), occ(b2)],
                    relation: Relation::PartialSupport,
                    rule: Rule::PartialSupport,
                });
            }
        }
    }
    let features = FeatureIndex::new(extent);
    for &fid in features.ids() {
        let rule = match fid.f {
            FeatureClass::EndPlus | FeatureClass::EndMinus => Rule::LogEnd,
            FeatureClass::SegU | FeatureClass::SegV => Rule::ShortSegment,
            FeatureClass::SegW => Rule::LongSegment,
        };
        constraints.push(Constraint {
            scope: vec![occ(fid.q), VarId::Feature(fid)],
            relation: Relation::Feature(fid.f),
            rule,
        });
    }
    GrammarInstance::from_parts(extent, features, constraints)
}

impl GrammarInstance {
    fn from_parts(
        extent: GridExtent,
        features: FeatureIndex,
        constraints: Vec<Constraint>,
    ) -> Self {
        let n = extent.len();
        let dense = constraints
            .iter()
            .map(|c| {
                c.scope
                    .iter()
                    .map(|v| match *v {
                        VarId::Occupancy(q) => extent.index(q),
                        VarId::Feature(fid) => n + features.get(fid).expect("feature in index"),
                    })
                    .collect()
            })
            .collect();
        GrammarInstance {
            extent,
            features,
            constraints,
            dense,
        }
    }

    pub fn extent(&self) -> GridExtent {
        self.extent
    }

    pub fn features(&self) -> &FeatureIndex {
        &self.features
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Dense variable indices of each constraint's scope.
    pub fn dense_scopes(&self) -> &[Vec<usize>] {
        &self.dense
    }

    pub fn variable_count(&self) -> usize {
        self.extent.len() + self.features.len()
    }

    pub fn var_index(&self, v: VarId) -> Option<usize> {
        match v {
            VarId::Occupancy(q) => self.extent.contains(q).then(|| self.extent.index(q)),
            VarId::Feature(fid) => self.features.get(fid).map(|n| self.extent.len() + n),
        }
    }

    /// Constraints linking each feature variable to its position (the (e)–(g) rules).
    pub fn feature_links(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.constraints
            .iter()
            .filter_map(|c| match (c.relation, c.scope.as_slice()) {
                (Relation::Feature(_), [_, VarId::Feature(fid)]) => Some(*fid),
                _ => None,
            })
    }

    /// Copy of the instance without the feature variables in `omitted` and
    /// without every constraint that mentions them.
    pub fn without_features(&self, omitted: &BTreeSet<FeatureId>) -> GrammarInstance {
        let constraints = self
            .constraints
            .iter()
            .filter(|c| {
                !c.scope
                    .iter()
                    .any(|v| matches!(v, VarId::Feature(fid) if omitted.contains(fid)))
            })
            .cloned()
            .collect();
        GrammarInstance::from_parts(self.extent, self.features.clone(), constraints)
    }

    /// Copy of the instance with extra constraints appended.
    pub fn with_constraints(&self, extra: impl IntoIterator<Item = Constraint>) -> GrammarInstance {
        let mut constraints = self.constraints.clone();
        constraints.extend(extra);
        GrammarInstance::from_parts(self.extent, self.features.clone(), constraints)
    }

    /// Number of constraints per rule, in rule order a–g, boundary, psi.
    pub fn rule_counts(&self) -> Vec<(Rule, usize)> {
        let rules = [
            Rule::TwoNotch,
            Rule::ThreeNotch,
            Rule::FullSupport,
            Rule::PartialSupport,
            Rule::LogEnd,
            Rule::ShortSegment,
            Rule::LongSegment,
            Rule::Perimeter,
            Rule::Language,
        ];
        rules
            .into_iter()
            .map(|r| (r, self.constraints.iter().filter(|c| c.rule == r).count()))
            .collect()
    }

    fn values_of(
        &self,
        s: &StructureEstimate,
        features: &[bool],
        scope: &[usize],
        out: &mut Vec<u8>,
    ) {
        let n = self.extent.len();
        out.clear();
        out.extend(scope.iter().map(|&v| {
            if v < n {
                s.cells()[v].code()
            } else {
                features[v - n] as u8
            }
        }));
    }
}

/// Feature values determined by a structure's occupancy.
pub fn implied_features(s: &StructureEstimate) -> Result<FeatureAssignment> {
    s.spans()?;
    Ok(implied_features_unchecked(s))
}

pub(crate) fn implied_features_unchecked(s: &StructureEstimate) -> FeatureAssignment {
    let index = FeatureIndex::new(s.extent());
    let values = index
        .ids()
        .iter()
        .map(|fid| fid.f.implied_by(s.get(fid.q)))
        .collect();
    FeatureAssignment::new(index, values)
}

/// Checks every constraint against `s` and its implied features.
pub fn is_valid(s: &StructureEstimate, g: &GrammarInstance) -> bool {
    if s.extent() != g.extent {
        return false;
    }
    let features = implied_features_unchecked(s);
    let mut buf = Vec::with_capacity(4);
    g.constraints.iter().zip(&g.dense).all(|(c, scope)| {
        g.values_of(s, features.values(), scope, &mut buf);
        c.satisfied(&buf)
    })
}

/// Every valid structure of the instance, in lexicographic order of the
/// canonical occupancy codes over index order. Brute force; small extents only.
pub fn enumerate_valid(g: &GrammarInstance) -> Result<Vec<StructureEstimate>> {
    let extent = g.extent;
    if extent.len() > ENUMERATION_LIMIT {
        return Err(Error::ScaleGuard {
            extent,
            positions: extent.len(),
            limit: ENUMERATION_LIMIT,
        });
    }
    let n = extent.len();
    // constraints become checkable once their highest occupancy variable is assigned
    let mut due: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, scope) in g.dense.iter().enumerate() {
        let last = scope
            .iter()
            .map(|&v| {
                if v < n {
                    v
                } else {
                    extent.index(g.features.id(v - n).q)
                }
            })
            .max()
            .expect("non-empty scope");
        due[last].push(c);
    }
    let mut cells = vec![0u8; n];
    let mut out = Vec::new();
    enumerate_from(g, &due, 0, &mut cells, &mut out);
    Ok(out)
}

fn enumerate_from(
    g: &GrammarInstance,
    due: &[Vec<usize>],
    at: usize,
    cells: &mut Vec<u8>,
    out: &mut Vec<StructureEstimate>,
) {
    let n = g.extent.len();
    if at == n {
        let s = StructureEstimate::from_cells(
            g.extent,
            cells.iter().map(|&c| Occupancy::from_code(c)).collect(),
        )
        .expect("sized");
        out.push(s);
        return;
    }
    let mut buf = Vec::with_capacity(4);
    for code in 0..7u8 {
        cells[at] = code;
        let ok = due[at].iter().all(|&c| {
            buf.clear();
            let scope = &g.dense[c];
            buf.extend(scope.iter().map(|&v| {
                if v < n {
                    cells[v]
                } else {
                    let fid = g.features.id(v - n);
                    let occ = Occupancy::from_code(cells[g.extent.index(fid.q)]);
                    fid.f.implied_by(occ) as u8
                }
            }));
            g.constraints[c].satisfied(&buf)
        });
        if ok {
            enumerate_from(g, due, at + 1, cells, out);
        }
    }
    cells[at] = 0;
}
