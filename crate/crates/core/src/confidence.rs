//! Estimation tolerance: how much counter-evidence on occluded features it
//! takes to change an estimate.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grammar::{implied_features_unchecked, GrammarInstance};
use crate::grid::{FeatureId, StructureEstimate};
use crate::solver::{Estimator, PriorSet, Solution, ViewTerm};
use crate::visibility::VisibilityMap;

/// Default shift for the single-shot confidence test.
pub const DEFAULT_DELTA_STAR: f64 = 0.2;
/// Default bisection precision.
pub const DEFAULT_PRECISION: f64 = 1.0 / 1024.0;
/// Returned tolerance when no shift changes the estimate.
pub const TOLERANCE_CAP: f64 = 0.5;

/// One view's evidence as seen by the confidence tests: priors already masked
/// by `visibility`, and the grammar instance that says which features count.
#[derive(Clone, Copy, Debug)]
pub struct ViewEvidence<'a> {
    pub grammar: &'a GrammarInstance,
    pub priors: &'a PriorSet,
    pub visibility: &'a VisibilityMap,
}

/// Implied feature values of the estimate at each view's occluded features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccludedAssignment {
    pub views: Vec<BTreeMap<FeatureId, bool>>,
}

impl OccludedAssignment {
    pub fn is_empty(&self) -> bool {
        self.views.iter().all(BTreeMap::is_empty)
    }

    pub fn len(&self) -> usize {
        self.views.iter().map(BTreeMap::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToleranceResult {
    pub confident: bool,
    pub delta: Option<f64>,
    pub reference: StructureEstimate,
}

pub fn occluded_ml_assignment(sol: &Solution, views: &[ViewEvidence<'_>]) -> OccludedAssignment {
    let implied = implied_features_unchecked(&sol.structure);
    let views = views
        .iter()
        .map(|v| {
            let linked: std::collections::BTreeSet<FeatureId> = v.grammar.feature_links().collect();
            v.visibility
                .occluded()
                .filter(|fid| linked.contains(fid))
                .map(|fid| (fid, implied.get(fid).expect("same extent")))
                .collect()
        })
        .collect();
    OccludedAssignment { views }
}

/// Priors with every occluded feature pushed `delta` away from its implied value.
pub fn shifted_priors(
    priors: &PriorSet,
    zhat: &BTreeMap<FeatureId, bool>,
    delta: f64,
) -> Result<PriorSet> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::ShiftOutOfRange(delta));
    }
    let mut out = priors.clone();
    for (&fid, &value) in zhat {
        let n = out
            .index()
            .get(fid)
            .ok_or_else(|| Error::ExtentMismatch(format!("{fid} outside {}", priors.extent())))?;
        out.values_mut()[n] = if value { 0.5 - delta } else { 0.5 + delta };
    }
    Ok(out)
}

/// Whether some structure other than the reference scores at least as well
/// once occluded evidence is shifted by `delta`. Ties count as a change.
fn changes_at(
    g: &GrammarInstance,
    views: &[ViewEvidence<'_>],
    zhat: &OccludedAssignment,
    reference: &StructureEstimate,
    delta: f64,
) -> Result<bool> {
    let shifted: Vec<PriorSet> = views
        .iter()
        .zip(&zhat.views)
        .map(|(v, z)| shifted_priors(v.priors, z, delta))
        .collect::<Result<_>>()?;
    let est = Estimator::new(g).views(views.iter().zip(&shifted).map(|(v, p)| ViewTerm {
        grammar: v.grammar,
        priors: p,
    }));
    Ok(est.rival(reference)?.is_some())
}

fn check_views(views: &[ViewEvidence<'_>]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::InvalidParameter(
            "confidence needs at least one view".into(),
        ));
    }
    Ok(())
}

/// Single-shift test: confident when no structure matches or beats the
/// estimate after shifting occluded evidence by `delta_star`.
pub fn is_confident(
    g: &GrammarInstance,
    views: &[ViewEvidence<'_>],
    sol: &Solution,
    delta_star: f64,
) -> Result<ToleranceResult> {
    check_views(views)?;
    if !(delta_star > 0.0 && delta_star < 0.5) {
        return Err(Error::ShiftOutOfRange(delta_star));
    }
    let zhat = occluded_ml_assignment(sol, views);
    let confident = zhat.is_empty() || !changes_at(g, views, &zhat, &sol.structure, delta_star)?;
    Ok(ToleranceResult {
        confident,
        delta: None,
        reference: sol.structure.clone(),
    })
}

/// Smallest shift (to within `precision`) that changes the estimate, or
/// [`TOLERANCE_CAP`] when none below 1/2 does.
pub fn estimation_tolerance(
    g: &GrammarInstance,
    views: &[ViewEvidence<'_>],
    sol: &Solution,
    precision: f64,
) -> Result<f64> {
    check_views(views)?;
    if !(precision > 0.0 && precision < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "precision {precision} outside (0, 0.5)"
        )));
    }
    let zhat = occluded_ml_assignment(sol, views);
    if zhat.is_empty() {
        return Ok(TOLERANCE_CAP);
    }
    tolerance_search(precision, |d| {
        changes_at(g, views, &zhat, &sol.structure, d)
    })
}

/// Bisection for the smallest shift at which a monotone predicate turns true.
pub(crate) fn tolerance_search(
    precision: f64,
    mut changes: impl FnMut(f64) -> Result<bool>,
) -> Result<f64> {
    let mut hi = 0.5 - precision;
    if !changes(hi)? {
        return Ok(TOLERANCE_CAP);
    }
    let mut lo = 0.0;
    while hi - lo > precision {
        let mid = 0.5 * (lo + hi);
        if changes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Both tests at once.
pub fn tolerance_report(
    g: &GrammarInstance,
    views: &[ViewEvidence<'_>],
    sol: &Solution,
    delta_star: f64,
    precision: f64,
) -> Result<ToleranceResult> {
    let delta = estimation_tolerance(g, views, sol, precision)?;
    let single = is_confident(g, views, sol, delta_star)?;
    Ok(ToleranceResult {
        confident: single.confident,
        delta: Some(delta),
        reference: sol.structure.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{enumerate_valid, instantiate};
    use crate::grid::{FeatureClass, GridExtent, GridPos, LogSpan};
    use crate::solver::{estimate, FeaturePrior};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(i: usize, j: usize, k: usize) -> GridPos {
        GridPos::new(i, j, k)
    }

    fn exact_priors(s: &StructureEstimate, vis: &VisibilityMap) -> PriorSet {
        let implied = implied_features_unchecked(s);
        let mut priors = PriorSet::uniform(s.extent());
        for (fid, v) in implied.iter() {
            if vis.get(fid).unwrap() {
                priors
                    .set(fid, FeaturePrior::new(if v { 0.95 } else { 0.05 }).unwrap())
                    .unwrap();
            }
        }
        priors
    }

    #[test]
    fn shift_arithmetic() {
        let e = GridExtent::new(1, 1, 1).unwrap();
        let priors = PriorSet::uniform(e);
        let fid = FeatureId::new(p(0, 0, 0), FeatureClass::EndPlus);
        let z: BTreeMap<_, _> = [(fid, true)].into();
        assert_eq!(shifted_priors(&priors, &z, 0.0).unwrap(), priors);
        assert!(
            (shifted_priors(&priors, &z, 0.2)
                .unwrap()
                .get(fid)
                .unwrap()
                .p_true()
                - 0.3)
                .abs()
                < 1e-15
        );
        let zf: BTreeMap<_, _> = [(fid, false)].into();
        assert!(
            (shifted_priors(&priors, &zf, 0.49)
                .unwrap()
                .get(fid)
                .unwrap()
                .p_true()
                - 0.99)
                .abs()
                < 1e-15
        );
        assert!(matches!(
            shifted_priors(&priors, &z, 0.5),
            Err(Error::ShiftOutOfRange(_))
        ));
    }

    #[test]
    fn fully_visible_scene_is_confident_at_the_cap() {
        let e = GridExtent::new(2, 1, 1).unwrap();
        let g = instantiate(e);
        let mut s = StructureEstimate::empty(e);
        s.place(&LogSpan::new(p(0, 0, 0), 2)).unwrap();
        let vis = VisibilityMap::all(e, true);
        let priors = exact_priors(&s, &vis);
        let sol = estimate(&g, std::slice::from_ref(&priors)).unwrap();
        let views = [ViewEvidence {
            grammar: &g,
            priors: &priors,
            visibility: &vis,
        }];
        assert!(occluded_ml_assignment(&sol, &views).is_empty());
        assert!(is_confident(&g, &views, &sol, 0.2).unwrap().confident);
        assert_eq!(
            estimation_tolerance(&g, &views, &sol, DEFAULT_PRECISION).unwrap(),
            TOLERANCE_CAP
        );
    }

    #[test]
    fn occluded_assignment_follows_the_estimate() {
        let e = GridExtent::new(2, 1, 2).unwrap();
        let g = instantiate(e);
        let mut s = StructureEstimate::empty(e);
        s.place(&LogSpan::new(p(0, 0, 0), 2)).unwrap();
        let segw = FeatureId::new(p(0, 0, 0), FeatureClass::SegW);
        let vis = VisibilityMap::from_fn(e, |fid| fid != segw && fid.q.k == 0);
        let sol = Solution {
            structure: s,
            log_probability: 0.0,
        };
        let priors = PriorSet::uniform(e);
        let z = occluded_ml_assignment(
            &sol,
            &[ViewEvidence {
                grammar: &g,
                priors: &priors,
                visibility: &vis,
            }],
        );
        assert_eq!(z.views[0].get(&segw), Some(&true));
        assert!(z.views[0]
            .iter()
            .filter(|(fid, _)| fid.q.k == 1)
            .all(|(_, &v)| !v));
    }

    #[test]
    fn ambiguous_occlusion_is_never_confident() {
        // one 2-notch log seen at its left end only; its right half is hidden,
        // so a 1-notch log plus an empty cell fits the visible evidence equally
        let e = GridExtent::new(2, 1, 1).unwrap();
        let g = instantiate(e);
        let vis = VisibilityMap::from_fn(e, |fid| fid.q.i == 0 && fid.f == FeatureClass::EndMinus);
        let mut s = StructureEstimate::empty(e);
        s.place(&LogSpan::new(p(0, 0, 0), 2)).unwrap();
        let priors = exact_priors(&s, &vis);
        let sol = estimate(&g, std::slice::from_ref(&priors)).unwrap();
        let views = [ViewEvidence {
            grammar: &g,
            priors: &priors,
            visibility: &vis,
        }];
        for d in [0.01, 0.2, 0.4] {
            assert!(!is_confident(&g, &views, &sol, d).unwrap().confident);
        }
        assert!(
            estimation_tolerance(&g, &views, &sol, DEFAULT_PRECISION).unwrap() <= DEFAULT_PRECISION
        );
    }

    #[test]
    fn grammar_determined_occlusion_is_confident() {
        // the start of a 3-notch log and its far end are seen; the middle is
        // hidden but forced by the chain rules
        let e = GridExtent::new(3, 1, 1).unwrap();
        let g = instantiate(e);
        let vis = VisibilityMap::from_fn(e, |fid| fid.q.i != 1);
        let mut s = StructureEstimate::empty(e);
        s.place(&LogSpan::new(p(0, 0, 0), 3)).unwrap();
        let priors = exact_priors(&s, &vis);
        let sol = estimate(&g, std::slice::from_ref(&priors)).unwrap();
        assert_eq!(sol.structure, s);
        // brute force: no other valid structure matches the visible evidence
        let consistent = enumerate_valid(&g)
            .unwrap()
            .into_iter()
            .filter(|o| {
                let imp = implied_features_unchecked(o);
                let want = implied_features_unchecked(&s);
                vis.iter()
                    .all(|(fid, v)| !v || imp.get(fid) == want.get(fid))
            })
            .count();
        assert_eq!(consistent, 1);
        let views = [ViewEvidence {
            grammar: &g,
            priors: &priors,
            visibility: &vis,
        }];
        assert!(is_confident(&g, &views, &sol, 0.2).unwrap().confident);
        assert!(estimation_tolerance(&g, &views, &sol, DEFAULT_PRECISION).unwrap() >= 0.2);
    }

    #[test]
    fn bisection_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let e = GridExtent::new(3, 2, 2).unwrap();
        let g = instantiate(e);
        let prec = DEFAULT_PRECISION;
        for _ in 0..20 {
            let vis = VisibilityMap::from_fn(e, |_| rng.gen_bool(0.6));
            let mut priors = PriorSet::uniform(e);
            for (fid, v) in vis.iter() {
                if v {
                    priors
                        .set(fid, FeaturePrior::new(rng.gen_range(0.05..0.95)).unwrap())
                        .unwrap();
                }
            }
            let sol = estimate(&g, std::slice::from_ref(&priors)).unwrap();
            let views = [ViewEvidence {
                grammar: &g,
                priors: &priors,
                visibility: &vis,
            }];
            let got = estimation_tolerance(&g, &views, &sol, prec).unwrap();
            let zhat = occluded_ml_assignment(&sol, &views);
            let scan = (1..512)
                .map(|n| n as f64 * prec)
                .find(|&d| changes_at(&g, &views, &zhat, &sol.structure, d).unwrap())
                .unwrap_or(TOLERANCE_CAP);
            assert!((got - scan).abs() <= prec + 1e-12, "{got} vs {scan}");
            let c = is_confident(&g, &views, &sol, 0.2).unwrap().confident;
            if c {
                assert!(got >= 0.2);
            } else {
                assert!(got < 0.2 + prec);
            }
        }
    }
}
