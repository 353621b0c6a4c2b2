//! Generalized arc consistency over the grammar's constraints.

use std::collections::VecDeque;

use crate::grammar::{GrammarInstance, VarId};
use crate::grid::{FeatureId, GridPos, Occupancy};

const FULL_OCCUPANCY: u8 = 0b111_1111;
const FULL_BOOL: u8 = 0b11;

/// Remaining values of every variable, as bitmasks over value codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DomainState {
    masks: Vec<u8>,
    occupancy_vars: usize,
}

impl DomainState {
    /// Unrestricted domains for every variable of `g`.
    pub fn full(g: &GrammarInstance) -> Self {
        let n = g.extent().len();
        let mut masks = vec![FULL_BOOL; g.variable_count()];
        masks[..n].fill(FULL_OCCUPANCY);
        DomainState {
            masks,
            occupancy_vars: n,
        }
    }

    pub fn masks(&self) -> &[u8] {
        &self.masks
    }

    pub fn occupancy_mask(&self, index: usize) -> u8 {
        self.masks[index]
    }

    pub fn occupancy_masks(&self) -> &[u8] {
        &self.masks[..self.occupancy_vars]
    }

    pub fn occupancy(&self, g: &GrammarInstance, q: GridPos) -> Vec<Occupancy> {
        let m = self.masks[g.extent().index(q)];
        Occupancy::ALL
            .into_iter()
            .filter(|v| m & (1 << v.code()) != 0)
            .collect()
    }

    /// `(false allowed, true allowed)` for a feature variable.
    pub fn feature(&self, g: &GrammarInstance, fid: FeatureId) -> Option<(bool, bool)> {
        let n = g.var_index(VarId::Feature(fid))?;
        Some((self.masks[n] & 1 != 0, self.masks[n] & 2 != 0))
    }

    /// Intersects an occupancy domain with `allowed`.
    pub fn restrict(&mut self, g: &GrammarInstance, q: GridPos, allowed: &[Occupancy]) {
        let mask = allowed.iter().fold(0u8, |m, v| m | (1 << v.code()));
        self.masks[g.extent().index(q)] &= mask;
    }

    pub fn restrict_mask(&mut self, index: usize, mask: u8) {
        self.masks[index] &= mask;
    }

    pub fn fix(&mut self, g: &GrammarInstance, q: GridPos, value: Occupancy) {
        self.restrict(g, q, &[value]);
    }

    pub fn restrict_feature(&mut self, g: &GrammarInstance, fid: FeatureId, value: bool) {
        if let Some(n) = g.var_index(VarId::Feature(fid)) {
            self.masks[n] &= 1 << value as u8;
        }
    }

    pub fn is_singleton(&self, index: usize) -> bool {
        self.masks[index].count_ones() == 1
    }

    pub fn has_empty_domain(&self) -> bool {
        self.masks.contains(&0)
    }

    /// Domain inclusion, variable by variable.
    pub fn is_subset_of(&self, other: &DomainState) -> bool {
        self.masks.len() == other.masks.len()
            && self
                .masks
                .iter()
                .zip(&other.masks)
                .all(|(a, b)| a & !b == 0)
    }
}

/// Variable-to-constraint adjacency for repeated propagation on one instance.
#[derive(Clone, Debug)]
pub struct Propagator<'g> {
    g: &'g GrammarInstance,
    watchers: Vec<Vec<usize>>,
}

impl<'g> Propagator<'g> {
    pub fn new(g: &'g GrammarInstance) -> Self {
        let mut watchers = vec![Vec::new(); g.variable_count()];
        for (c, scope) in g.dense_scopes().iter().enumerate() {
            for &v in scope {
                watchers[v].push(c);
            }
        }
        Propagator { g, watchers }
    }

    /// Full propagation from scratch.
    pub fn propagate(&self, d: &mut DomainState) -> bool {
        let all: Vec<usize> = (0..self.g.constraints().len()).collect();
        self.run(d, all)
    }

    /// Propagation after the domains of `changed` shrank.
    pub fn propagate_from(&self, d: &mut DomainState, changed: &[usize]) -> bool {
        let mut seeds = Vec::new();
        for &v in changed {
            seeds.extend_from_slice(&self.watchers[v]);
        }
        self.run(d, seeds)
    }

    fn run(&self, d: &mut DomainState, seeds: Vec<usize>) -> bool {
        if d.has_empty_domain() {
            return false;
        }
        let constraints = self.g.constraints();
        let scopes = self.g.dense_scopes();
        let mut queued = vec![false; constraints.len()];
        let mut queue = VecDeque::with_capacity(seeds.len());
        for c in seeds {
            if !queued[c] {
                queued[c] = true;
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            queued[c] = false;
            let scope = &scopes[c];
            for (slot, &var) in scope.iter().enumerate() {
                let before = d.masks[var];
                let after = supported_values(&constraints[c].relation, scope, &d.masks, slot);
                if after == before {
                    continue;
                }
                d.masks[var] = after;
                if after == 0 {
                    return false;
                }
                for &w in &self.watchers[var] {
                    if w != c && !queued[w] {
                        queued[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        true
    }
}

/// Values of `scope[slot]` that have a supporting tuple in the other domains.
fn supported_values(
    relation: &crate::grammar::Relation,
    scope: &[usize],
    masks: &[u8],
    slot: usize,
) -> u8 {
    let len = scope.len();
    let mut doms = [0u8; 4];
    for (n, &v) in scope.iter().enumerate() {
        doms[n] = masks[v];
    }
    let mut tuple = [0u8; 4];
    let mut kept = 0u8;
    let mine = doms[slot];
    for value in 0..7u8 {
        if mine & (1 << value) == 0 {
            continue;
        }
        tuple[slot] = value;
        if search_support(relation, &doms[..len], &mut tuple[..len], slot, 0) {
            kept |= 1 << value;
        }
    }
    kept
}

fn search_support(
    relation: &crate::grammar::Relation,
    doms: &[u8],
    tuple: &mut [u8],
    fixed: usize,
    at: usize,
) -> bool {
    if at == doms.len() {
        return relation.holds(tuple);
    }
    if at == fixed {
        return search_support(relation, doms, tuple, fixed, at + 1);
    }
    let mut m = doms[at];
    while m != 0 {
        let value = m.trailing_zeros() as u8;
        m &= m - 1;
        tuple[at] = value;
        if search_support(relation, doms, tuple, fixed, at + 1) {
            return true;
        }
    }
    false
}

/// Largest arc-consistent subdomain of `d`, or `None` when some domain empties.
pub fn arc_consistency(g: &GrammarInstance, d: &DomainState) -> Option<DomainState> {
    let mut out = d.clone();
    Propagator::new(g).propagate(&mut out).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{enumerate_valid, instantiate};
    use crate::grid::{GridExtent, StructureEstimate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(i: usize, j: usize, k: usize) -> GridPos {
        GridPos::new(i, j, k)
    }

    #[test]
    fn fixing_first_notch_forces_the_second() {
        let g = instantiate(GridExtent::new(2, 1, 1).unwrap());
        let mut d = DomainState::full(&g);
        d.fix(&g, p(0, 0, 0), Occupancy::Notch { len: 2, index: 0 });
        let d = arc_consistency(&g, &d).unwrap();
        assert_eq!(
            d.occupancy(&g, p(1, 0, 0)),
            vec![Occupancy::Notch { len: 2, index: 1 }]
        );
    }

    #[test]
    fn chain_off_the_perimeter_is_inconsistent() {
        let g = instantiate(GridExtent::new(2, 1, 1).unwrap());
        let mut d = DomainState::full(&g);
        d.fix(&g, p(1, 0, 0), Occupancy::Notch { len: 2, index: 0 });
        assert!(arc_consistency(&g, &d).is_none());
    }

    #[test]
    fn features_follow_fixed_occupancy() {
        let g = instantiate(GridExtent::new(2, 1, 1).unwrap());
        let mut d = DomainState::full(&g);
        d.fix(&g, p(0, 0, 0), Occupancy::Empty);
        let d = arc_consistency(&g, &d).unwrap();
        use crate::grid::FeatureClass::*;
        for f in [EndPlus, EndMinus, SegU, SegV, SegW] {
            assert_eq!(
                d.feature(&g, FeatureId::new(p(0, 0, 0), f)),
                Some((true, false))
            );
        }
        // a present log end at the far position rules out Empty there
        let mut e = DomainState::full(&g);
        e.restrict_feature(&g, FeatureId::new(p(1, 0, 0), EndPlus), true);
        let e = arc_consistency(&g, &e).unwrap();
        assert!(!e.occupancy(&g, p(1, 0, 0)).contains(&Occupancy::Empty));
    }

    #[test]
    fn propagation_is_sound_idempotent_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for extent in [(2, 2, 2), (3, 2, 1), (2, 2, 3)] {
            let e = GridExtent::new(extent.0, extent.1, extent.2).unwrap();
            let g = instantiate(e);
            let all = enumerate_valid(&g).unwrap();
            for _ in 0..60 {
                let mut d = DomainState::full(&g);
                for q in e.positions() {
                    if rng.gen_bool(0.3) {
                        let v = Occupancy::from_code(rng.gen_range(0..7));
                        d.fix(&g, q, v);
                    }
                }
                let consistent: Vec<&StructureEstimate> = all
                    .iter()
                    .filter(|s| {
                        e.positions()
                            .all(|q| d.occupancy(&g, q).contains(&s.get(q)))
                    })
                    .collect();
                match arc_consistency(&g, &d) {
                    None => assert!(consistent.is_empty(), "pruned a completable state"),
                    Some(out) => {
                        assert!(out.is_subset_of(&d));
                        assert_eq!(arc_consistency(&g, &out).as_ref(), Some(&out));
                        for s in consistent {
                            for q in e.positions() {
                                assert!(
                                    out.occupancy(&g, q).contains(&s.get(q)),
                                    "removed a supported value"
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}
