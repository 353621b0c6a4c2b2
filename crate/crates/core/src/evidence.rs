//! Simulated feature detectors: turn a known structure and camera into the
//! per-feature priors a detector would report.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, MetricParams};
use crate::grammar::{implied_features, FeatureAssignment};
use crate::grid::{parse_field, FeatureClass, FeatureId, GridExtent, GridPos, StructureEstimate};
use crate::solver::{FeaturePrior, PriorSet};
use crate::visibility::{update_visibility, VisibilityMap, DEFAULT_THETA};

/// Floor and ceiling applied to emitted priors.
pub const PRIOR_FLOOR: f64 = 1e-9;

/// How the detector responds to features it cannot actually see.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clutter {
    /// Exactly 1/2.
    Uniform,
    /// Uniform in the clipped unit interval.
    Random,
    /// Confident in the wrong value.
    Adversarial,
}

impl Clutter {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "uniform" => Ok(Clutter::Uniform),
            "random" => Ok(Clutter::Random),
            "adversarial" => Ok(Clutter::Adversarial),
            other => Err(Error::InvalidParameter(format!(
                "unknown clutter mode `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorModel {
    pub reliability: f64,
    pub jitter: f64,
    pub clutter: Clutter,
    pub seed: u64,
}

impl DetectorModel {
    pub fn new(reliability: f64, jitter: f64, clutter: Clutter, seed: u64) -> Result<Self> {
        let dm = DetectorModel {
            reliability,
            jitter,
            clutter,
            seed,
        };
        dm.check()?;
        Ok(dm)
    }

    /// Noise-free detector.
    pub fn exact(clutter: Clutter, seed: u64) -> Self {
        DetectorModel {
            reliability: 1.0,
            jitter: 0.0,
            clutter,
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.reliability > 0.5
            && self.reliability <= 1.0
            && self.jitter >= 0.0
            && self.reliability - self.jitter > 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "detector needs 0.5 < reliability <= 1 and reliability - jitter > 0.5, got {} and {}",
                self.reliability, self.jitter
            )))
        }
    }
}

/// Ground truth that produced a set of priors. Evaluation code only.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub visibility: VisibilityMap,
    pub values: FeatureAssignment,
}

/// Detector output for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvidence {
    priors: PriorSet,
    truth: Option<Truth>,
}

fn clip(p: f64) -> f64 {
    p.clamp(PRIOR_FLOOR, 1.0 - PRIOR_FLOOR)
}

impl RawEvidence {
    pub fn from_priors(priors: PriorSet) -> Self {
        RawEvidence {
            priors,
            truth: None,
        }
    }

    pub fn extent(&self) -> GridExtent {
        self.priors.extent()
    }

    pub fn priors(&self) -> &PriorSet {
        &self.priors
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    /// `view <id> extent i j k` header, then `i j k f p_true` per feature.
    pub fn to_text(&self, view: usize) -> String {
        let e = self.extent();
        let mut out = format!("view {view} extent {} {} {}\n", e.i_max, e.j_max, e.k_max);
        for (fid, prior) in self.priors.iter() {
            writeln!(
                out,
                "{} {} {} {} {}",
                fid.q.i,
                fid.q.j,
                fid.q.k,
                fid.f.symbol(),
                prior.p_true()
            )
            .unwrap();
        }
        out
    }

    /// Parses one view's evidence. Features not listed keep a uniform prior.
    pub fn from_text(text: &str) -> Result<(usize, RawEvidence)> {
        let mut header: Option<(usize, PriorSet)> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            match (&mut header, fields.as_slice()) {
                (None, ["view", id, "extent", a, b, c]) => {
                    let e = GridExtent::new(
                        parse_field(a, line)?,
                        parse_field(b, line)?,
                        parse_field(c, line)?,
                    )
                    .map_err(|err| Error::format(line, err.to_string()))?;
                    header = Some((parse_field(id, line)?, PriorSet::uniform(e)));
                }
                (None, _) => {
                    return Err(Error::format(
                        line,
                        "expected `view <id> extent i j k` header",
                    ))
                }
                (Some((_, priors)), [i, j, k, f, p]) => {
                    let q = GridPos::new(
                        parse_field(i, line)?,
                        parse_field(j, line)?,
                        parse_field(k, line)?,
                    );
                    let f = FeatureClass::from_symbol(f)
                        .ok_or_else(|| Error::format(line, format!("unknown feature `{f}`")))?;
                    let prior = FeaturePrior::new(parse_field(p, line)?)
                        .map_err(|err| Error::format(line, err.to_string()))?;
                    priors
                        .set(FeatureId::new(q, f), prior)
                        .map_err(|err| Error::format(line, err.to_string()))?;
                }
                (Some(_), _) => return Err(Error::format(line, "expected `i j k f p_true`")),
            }
        }
        let (id, priors) = header.ok_or_else(|| Error::format(0, "missing `view` header"))?;
        Ok((id, RawEvidence::from_priors(priors)))
    }
}

/// Simulates a detector looking at `gt` through `cam`.
pub fn synthesize_view(
    gt: &StructureEstimate,
    cam: &CameraModel,
    dm: &DetectorModel,
    m: &MetricParams,
) -> Result<RawEvidence> {
    let visibility = update_visibility(gt, cam, m, DEFAULT_THETA)?;
    synthesize_with_visibility(gt, visibility, dm)
}

/// Simulates a detector given the true visibility of each feature.
pub fn synthesize_with_visibility(
    gt: &StructureEstimate,
    visibility: VisibilityMap,
    dm: &DetectorModel,
) -> Result<RawEvidence> {
    dm.check()?;
    let values = implied_features(gt)?;
    if visibility.extent() != gt.extent() {
        return Err(Error::ExtentMismatch(format!(
            "visibility over {} for {}",
            visibility.extent(),
            gt.extent()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dm.seed);
    let mut priors = PriorSet::uniform(gt.extent());
    let rho = dm.reliability;
    for ((slot, &truth), &seen) in priors
        .values_mut()
        .iter_mut()
        .zip(values.values())
        .zip(visibility.values())
    {
        // one draw per feature keeps the stream aligned across clutter modes
        let draw: f64 = rng.gen();
        let p_value = if seen {
            rho + dm.jitter * (2.0 * draw - 1.0)
        } else {
            match dm.clutter {
                Clutter::Uniform => 0.5,
                Clutter::Random => {
                    *slot = PRIOR_FLOOR + draw * (1.0 - 2.0 * PRIOR_FLOOR);
                    continue;
                }
                Clutter::Adversarial => 1.0 - rho,
            }
        };
        *slot = clip(if truth { p_value } else { 1.0 - p_value });
    }
    Ok(RawEvidence {
        priors,
        truth: Some(Truth { visibility, values }),
    })
}

/// Raw priors with occluded features replaced by 1/2.
pub fn priors_with_visibility(raw: &RawEvidence, vis: &VisibilityMap) -> Result<PriorSet> {
    vis.mask(&raw.priors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::grid::LogSpan;

    fn scene() -> (StructureEstimate, CameraModel) {
        let e = GridExtent::new(3, 2, 3).unwrap();
        let mut s = StructureEstimate::empty(e);
        for k in 0..3 {
            s.place(&LogSpan::new(GridPos::new(0, 0, k), 3)).unwrap();
        }
        s.place(&LogSpan::new(GridPos::new(0, 1, 0), 3)).unwrap();
        let cam = CameraModel::look_at(
            Vec3::new(-7.0, 4.0, -9.0),
            Vec3::new(2.0, 0.0, 2.0),
            Vec3::y(),
            700.0,
            (640, 480),
        )
        .unwrap();
        (s, cam)
    }

    #[test]
    fn noise_free_visible_log() {
        let e = GridExtent::new(2, 1, 1).unwrap();
        let mut s = StructureEstimate::empty(e);
        s.place(&LogSpan::new(GridPos::new(0, 0, 0), 2)).unwrap();
        let cam = CameraModel::look_at(
            Vec3::new(1.0, 6.0, -6.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::y(),
            500.0,
            (320, 240),
        )
        .unwrap();
        let raw = synthesize_view(
            &s,
            &cam,
            &DetectorModel::exact(Clutter::Uniform, 1),
            &MetricParams::default(),
        )
        .unwrap();
        let truth = raw.truth().unwrap();
        assert_eq!(truth.visibility.occluded().collect::<Vec<_>>(), vec![]);
        for (fid, prior) in raw.priors().iter() {
            let want = if truth.values.get(fid).unwrap() {
                1.0 - PRIOR_FLOOR
            } else {
                PRIOR_FLOOR
            };
            assert_eq!(prior.p_true(), want);
        }
    }

    #[test]
    fn clutter_modes() {
        let (s, cam) = scene();
        let m = MetricParams::default();
        let dm = DetectorModel::new(0.9, 0.05, Clutter::Uniform, 3).unwrap();
        let raw = synthesize_view(&s, &cam, &dm, &m).unwrap();
        let truth = raw.truth().unwrap().clone();
        assert!(truth.visibility.occluded().count() > 0);
        for fid in truth.visibility.occluded() {
            assert_eq!(raw.priors().get(fid).unwrap().p_true(), 0.5);
        }
        let adv = synthesize_view(
            &s,
            &cam,
            &DetectorModel {
                clutter: Clutter::Adversarial,
                ..dm
            },
            &m,
        )
        .unwrap();
        for fid in truth.visibility.occluded() {
            let p = adv
                .priors()
                .get(fid)
                .unwrap()
                .p(truth.values.get(fid).unwrap());
            assert!((p - 0.1).abs() < 1e-12);
        }
        let rnd = synthesize_view(
            &s,
            &cam,
            &DetectorModel {
                clutter: Clutter::Random,
                ..dm
            },
            &m,
        )
        .unwrap();
        for (fid, vis) in truth.visibility.iter() {
            let p = rnd
                .priors()
                .get(fid)
                .unwrap()
                .p(truth.values.get(fid).unwrap());
            if vis {
                assert!((0.85..=0.95).contains(&p));
            }
            assert!((PRIOR_FLOOR..=1.0 - PRIOR_FLOOR).contains(&p));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let (s, cam) = scene();
        let m = MetricParams::default();
        let dm = DetectorModel::new(0.8, 0.2, Clutter::Random, 77).unwrap();
        assert_eq!(
            synthesize_view(&s, &cam, &dm, &m).unwrap(),
            synthesize_view(&s, &cam, &dm, &m).unwrap()
        );
        let other = DetectorModel { seed: 78, ..dm };
        assert_ne!(
            synthesize_view(&s, &cam, &dm, &m).unwrap(),
            synthesize_view(&s, &cam, &other, &m).unwrap()
        );
    }

    #[test]
    fn visibility_masking() {
        let (s, cam) = scene();
        let raw = synthesize_view(
            &s,
            &cam,
            &DetectorModel::new(0.9, 0.0, Clutter::Adversarial, 1).unwrap(),
            &MetricParams::default(),
        )
        .unwrap();
        let e = s.extent();
        assert_eq!(
            &priors_with_visibility(&raw, &VisibilityMap::all(e, true)).unwrap(),
            raw.priors()
        );
        let none = priors_with_visibility(&raw, &VisibilityMap::all(e, false)).unwrap();
        assert!(none.values().iter().all(|&p| p == 0.5));
        let mixed = VisibilityMap::from_fn(e, |fid| fid.q.j == 1);
        let out = priors_with_visibility(&raw, &mixed).unwrap();
        for (fid, prior) in out.iter() {
            let want = if fid.q.j == 1 {
                raw.priors().get(fid).unwrap().p_true()
            } else {
                0.5
            };
            assert_eq!(prior.p_true(), want);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let (s, cam) = scene();
        let raw = synthesize_view(
            &s,
            &cam,
            &DetectorModel::new(0.8, 0.25, Clutter::Random, 5).unwrap(),
            &MetricParams::default(),
        )
        .unwrap();
        let (id, back) = RawEvidence::from_text(&raw.to_text(4)).unwrap();
        assert_eq!(id, 4);
        assert_eq!(back.priors(), raw.priors());
        assert!(back.truth().is_none());
        assert!(RawEvidence::from_text("view 0 extent 1 1 1\n0 0 0 x 0.5\n").is_err());
        assert!(RawEvidence::from_text("view 0 extent 1 1 1\n0 0 0 + 1.5\n").is_err());
    }

    #[test]
    fn detector_validation() {
        assert!(DetectorModel::new(0.5, 0.0, Clutter::Uniform, 0).is_err());
        assert!(DetectorModel::new(0.7, 0.25, Clutter::Uniform, 0).is_err());
        assert!(DetectorModel::new(1.0, 0.0, Clutter::Uniform, 0).is_ok());
    }
}
