//! Per-view feature visibility: the prism heuristic used before any structure
//! is known, occlusion counting against an estimated structure, and the
//! alternating estimate/visibility loop.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{
    feature_sample_points, log_cylinder, nearest_depth, ray_hits_cylinder_tol, world_point,
    CameraModel, Cylinder, MetricParams, Ray,
};
use crate::grammar::GrammarInstance;
use crate::grid::{
    parse_field, FeatureClass, FeatureId, FeatureIndex, GridExtent, GridPos, StructureEstimate,
};
use crate::solver::{Estimator, PriorSet, Solution, ViewTerm};

/// Fraction of occluded sample rays at which a feature counts as occluded.
pub const DEFAULT_THETA: f64 = 0.6;
/// Iteration cap of the alternating loop.
pub const DEFAULT_CAP: usize = 10;
/// Image angle below which the narrower frontal face is dropped, in degrees.
pub const FACE_ANGLE_DEGREES: f64 = 110.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMap {
    index: FeatureIndex,
    visible: Vec<bool>,
}

impl VisibilityMap {
    pub fn all(extent: GridExtent, visible: bool) -> Self {
        let index = FeatureIndex::new(extent);
        let visible = vec![visible; index.len()];
        VisibilityMap { index, visible }
    }

    pub fn from_fn(extent: GridExtent, mut f: impl FnMut(FeatureId) -> bool) -> Self {
        let index = FeatureIndex::new(extent);
        let visible = index.ids().iter().map(|&fid| f(fid)).collect();
        VisibilityMap { index, visible }
    }

    pub fn extent(&self) -> GridExtent {
        self.index.extent()
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn get(&self, fid: FeatureId) -> Option<bool> {
        self.index.get(fid).map(|n| self.visible[n])
    }

    pub fn set(&mut self, fid: FeatureId, visible: bool) -> Result<()> {
        let n = self.index.get(fid).ok_or_else(|| {
            Error::InvalidParameter(format!("feature {fid} is not defined on {}", self.extent()))
        })?;
        self.visible[n] = visible;
        Ok(())
    }

    pub fn values(&self) -> &[bool] {
        &self.visible
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, bool)> + '_ {
        self.index
            .ids()
            .iter()
            .copied()
            .zip(self.visible.iter().copied())
    }

    pub fn occluded(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.iter().filter(|(_, v)| !v).map(|(fid, _)| fid)
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Number of features whose visibility differs.
    pub fn diff_count(&self, other: &VisibilityMap) -> usize {
        self.visible
            .iter()
            .zip(&other.visible)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Keeps the priors of visible features and sets occluded ones to 1/2.
    pub fn mask(&self, raw: &PriorSet) -> Result<PriorSet> {
        if raw.extent() != self.extent() {
            return Err(Error::ExtentMismatch(format!(
                "priors over {} with visibility over {}",
                raw.extent(),
                self.extent()
            )));
        }
        let mut out = raw.clone();
        for (slot, &vis) in out.values_mut().iter_mut().zip(&self.visible) {
            if !vis {
                *slot = 0.5;
            }
        }
        Ok(out)
    }

    /// `extent i j k` header followed by one `i j k f 0|1` line per feature.
    pub fn to_text(&self) -> String {
        let e = self.extent();
        let mut out = format!("extent {} {} {}\n", e.i_max, e.j_max, e.k_max);
        for (fid, v) in self.iter() {
            writeln!(
                out,
                "{} {} {} {} {}",
                fid.q.i,
                fid.q.j,
                fid.q.k,
                fid.f.symbol(),
                v as u8
            )
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map: Option<VisibilityMap> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            match (&mut map, fields.as_slice()) {
                (None, ["extent", a, b, c]) => {
                    let e = GridExtent::new(
                        parse_field(a, line)?,
                        parse_field(b, line)?,
                        parse_field(c, line)?,
                    )
                    .map_err(|err| Error::format(line, err.to_string()))?;
                    map = Some(VisibilityMap::all(e, true));
                }
                (None, _) => return Err(Error::format(line, "expected `extent i j k` header")),
                (Some(m), [i, j, k, f, v]) => {
                    let q = GridPos::new(
                        parse_field(i, line)?,
                        parse_field(j, line)?,
                        parse_field(k, line)?,
                    );
                    let f = FeatureClass::from_symbol(f)
                        .ok_or_else(|| Error::format(line, format!("unknown feature `{f}`")))?;
                    let v = match *v {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(Error::format(
                                line,
                                format!("visibility must be 0 or 1, got `{other}`"),
                            ))
                        }
                    };
                    m.set(FeatureId::new(q, f), v)
                        .map_err(|err| Error::format(line, err.to_string()))?;
                }
                (Some(_), _) => return Err(Error::format(line, "expected `i j k f 0|1`")),
            }
        }
        map.ok_or_else(|| Error::format(0, "missing `extent` header"))
    }
}

/// Visibility before any structure estimate: the top layer plus the
/// camera-facing boundary planes of the extent.
pub fn initial_visibility(
    extent: GridExtent,
    cam: &CameraModel,
    m: &MetricParams,
) -> Result<VisibilityMap> {
    let (ilast, klast) = (extent.i_max - 1, extent.k_max - 1);
    // corner c has i at the far end when c & 1, k at the far end when c & 2
    let corner = |c: usize| {
        GridPos::new(
            if c & 1 != 0 { ilast } else { 0 },
            0,
            if c & 2 != 0 { klast } else { 0 },
        )
    };
    let mut image = Vec::with_capacity(4);
    for c in 0..4 {
        let p = cam.project(&world_point(corner(c), m))?;
        image.push((c, p.u, p.v));
    }
    // bottommost first; ties broken by smaller image x
    let mut order = image.clone();
    order.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.0.cmp(&b.0))
    });
    let excluded = order[3].0;
    let shared = excluded ^ 3;
    let (_, su, sv) = image[shared];
    let along_k = shared ^ 2; // the face in the plane i = const
    let along_i = shared ^ 1; // the face in the plane k = const
    let vec_to = |c: usize| (image[c].1 - su, image[c].2 - sv);
    let (ku, kv) = vec_to(along_k);
    let (iu, iv) = vec_to(along_i);
    let mut keep_i_plane = true;
    let mut keep_k_plane = true;
    let (nk, ni) = ((ku * ku + kv * kv).sqrt(), (iu * iu + iv * iv).sqrt());
    if nk > 1e-9 && ni > 1e-9 {
        let angle = ((ku * iu + kv * iv) / (nk * ni))
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees();
        if angle < FACE_ANGLE_DEGREES {
            if ku.abs() < iu.abs() {
                keep_i_plane = false;
            } else if iu.abs() < ku.abs() {
                keep_k_plane = false;
            }
        }
    }
    let sq = corner(shared);
    Ok(VisibilityMap::from_fn(extent, |fid| {
        fid.q.j == extent.j_max - 1
            || (keep_i_plane && fid.q.i == sq.i)
            || (keep_k_plane && fid.q.k == sq.k)
    }))
}

struct Occluders {
    cylinders: Vec<Cylinder>,
}

impl Occluders {
    fn of(s: &StructureEstimate, m: &MetricParams) -> Result<Self> {
        let extent = s.extent();
        let cylinders = s
            .spans()?
            .iter()
            .map(|span| log_cylinder(span, &extent, m))
            .collect::<Result<_>>()?;
        Ok(Occluders { cylinders })
    }
}

fn occluded_by_threshold(hits: usize, samples: usize, theta: f64) -> bool {
    hits as f64 >= theta * samples as f64
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "occlusion threshold {theta} outside (0, 1)"
        )))
    }
}

/// Ray-cast visibility of every feature given the logs of `s`.
pub fn update_visibility(
    s: &StructureEstimate,
    cam: &CameraModel,
    m: &MetricParams,
    theta: f64,
) -> Result<VisibilityMap> {
    check_theta(theta)?;
    let extent = s.extent();
    let occ = Occluders::of(s, m)?;
    let eye = cam.center();
    let tol = m.self_hit_tolerance();
    let index = FeatureIndex::new(extent);
    let mut visible = Vec::with_capacity(index.len());
    for &fid in index.ids() {
        let points = feature_sample_points(fid, &extent, m)?;
        let mut hits = 0;
        for p in &points {
            let ray = Ray::segment(*p, eye)?;
            if occ
                .cylinders
                .iter()
                .any(|c| ray_hits_cylinder_tol(&ray, c, tol))
            {
                hits += 1;
            }
        }
        visible.push(!occluded_by_threshold(hits, points.len(), theta));
    }
    Ok(VisibilityMap { index, visible })
}

/// The same decision computed by rendering each feature's potential
/// occluders and reading depths at the projected sample locations.
pub fn update_visibility_raster(
    s: &StructureEstimate,
    cam: &CameraModel,
    m: &MetricParams,
    theta: f64,
) -> Result<VisibilityMap> {
    check_theta(theta)?;
    let extent = s.extent();
    let occ = Occluders::of(s, m)?;
    let tol = m.self_hit_tolerance();
    let index = FeatureIndex::new(extent);
    let mut visible = Vec::with_capacity(index.len());
    for &fid in index.ids() {
        let points = feature_sample_points(fid, &extent, m)?;
        let mut hits = 0;
        for p in &points {
            let pr = cam.project(p)?;
            let others = occ
                .cylinders
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.contains(p, tol));
            if let Some((depth, _)) = nearest_depth(cam, pr.u, pr.v, others) {
                if depth < pr.depth {
                    hits += 1;
                }
            }
        }
        visible.push(!occluded_by_threshold(hits, points.len(), theta));
    }
    Ok(VisibilityMap { index, visible })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Fixpoint,
    LoopDetected,
    IterationCap,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Fixpoint => "fixpoint",
            Termination::LoopDetected => "loop_detected",
            Termination::IterationCap => "iteration_cap",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TandemStep {
    /// Visibility of each view used for this estimate.
    pub visibility: Vec<VisibilityMap>,
    pub solution: Solution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixpointTrace {
    pub steps: Vec<TandemStep>,
    pub termination: Termination,
    /// Index of the step whose solution was returned.
    pub chosen: usize,
}

impl FixpointTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// One line per iteration: index, visibility changes against the
    /// previous iteration, log-probability.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, step) in self.steps.iter().enumerate() {
            let diff: usize = if t == 0 {
                0
            } else {
                step.visibility
                    .iter()
                    .zip(&self.steps[t - 1].visibility)
                    .map(|(a, b)| a.diff_count(b))
                    .sum()
            };
            writeln!(out, "{t} {diff} {}", step.solution.log_probability).unwrap();
        }
        writeln!(
            out,
            "# {} after {} iterations, chose {}",
            self.termination.name(),
            self.steps.len(),
            self.chosen
        )
        .unwrap();
        out
    }
}

/// Alternates estimation and visibility update until the visibility state
/// repeats or `cap` estimates have been made.
pub fn run_tandem(
    initial: Vec<VisibilityMap>,
    cap: usize,
    mut estimate: impl FnMut(&[VisibilityMap]) -> Result<Solution>,
    mut update: impl FnMut(&StructureEstimate) -> Result<Vec<VisibilityMap>>,
) -> Result<FixpointTrace> {
    if cap < 2 {
        return Err(Error::InvalidParameter(format!(
            "iteration cap {cap} below 2"
        )));
    }
    let mut steps: Vec<TandemStep> = Vec::new();
    let mut vis = initial;
    loop {
        let solution = estimate(&vis)?;
        let next = update(&solution.structure)?;
        steps.push(TandemStep {
            visibility: vis,
            solution,
        });
        if let Some(start) = steps.iter().position(|s| s.visibility == next) {
            let termination = if start + 1 == steps.len() {
                Termination::Fixpoint
            } else {
                Termination::LoopDetected
            };
            let chosen = best_step(&steps, start);
            return Ok(FixpointTrace {
                steps,
                termination,
                chosen,
            });
        }
        if steps.len() == cap {
            let chosen = best_step(&steps, 0);
            return Ok(FixpointTrace {
                steps,
                termination: Termination::IterationCap,
                chosen,
            });
        }
        vis = next;
    }
}

fn best_step(steps: &[TandemStep], from: usize) -> usize {
    let mut best = from;
    for t in from + 1..steps.len() {
        if steps[t].solution.rank(&steps[best].solution) == Ordering::Greater {
            best = t;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TandemOptions {
    pub theta: f64,
    pub cap: usize,
}

impl Default for TandemOptions {
    fn default() -> Self {
        TandemOptions {
            theta: DEFAULT_THETA,
            cap: DEFAULT_CAP,
        }
    }
}

/// Single-view alternating estimation from raw detector priors.
pub fn estimate_tandem(
    g: &GrammarInstance,
    raw: &PriorSet,
    cam: &CameraModel,
    m: &MetricParams,
    opts: TandemOptions,
) -> Result<(Solution, VisibilityMap, FixpointTrace)> {
    check_theta(opts.theta)?;
    let initial = initial_visibility(g.extent(), cam, m)?;
    let trace = run_tandem(
        vec![initial],
        opts.cap,
        |vis| {
            let priors = vis[0].mask(raw)?;
            Estimator::new(g)
                .view(ViewTerm {
                    grammar: g,
                    priors: &priors,
                })
                .solve()
        },
        |s| Ok(vec![update_visibility(s, cam, m, opts.theta)?]),
    )?;
    let step = &trace.steps[trace.chosen];
    Ok((step.solution.clone(), step.visibility[0].clone(), trace))
}
