//! Multi-view and partial-disassembly fusion, view registration, and the
//! active-vision planner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use nalgebra::Matrix3;

use crate::confidence::{
    is_confident, shifted_priors, tolerance_search, ViewEvidence, TOLERANCE_CAP,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, MetricParams, Vec3};
use crate::grammar::{implied_features_unchecked, GrammarInstance};
use crate::grid::{
    parse_field, FeatureClass, FeatureId, GridExtent, GridPos, LayerAxis, LogSpan,
    StructureEstimate,
};
use crate::solver::{Estimator, PriorSet, Solution, ViewTerm};
use crate::visibility::{
    initial_visibility, run_tandem, update_visibility, FixpointTrace, TandemOptions, VisibilityMap,
};

/// Symbolic orientation of a view's grid about the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Registration {
    R0,
    R90,
    R180,
    R270,
}

impl Registration {
    pub const ALL: [Registration; 4] = [
        Registration::R0,
        Registration::R90,
        Registration::R180,
        Registration::R270,
    ];

    pub fn degrees(self) -> u32 {
        self as u32 * 90
    }

    pub fn from_degrees(deg: u32) -> Result<Self> {
        match deg % 360 {
            0 => Ok(Registration::R0),
            90 => Ok(Registration::R90),
            180 => Ok(Registration::R180),
            270 => Ok(Registration::R270),
            _ => Err(Error::InvalidParameter(format!(
                "orientation {deg} is not a multiple of 90"
            ))),
        }
    }

    fn quarter_turns(self) -> usize {
        self as usize
    }

    pub fn compose(self, other: Registration) -> Registration {
        Registration::ALL[(self.quarter_turns() + other.quarter_turns()) % 4]
    }

    pub fn inverse(self) -> Registration {
        Registration::ALL[(4 - self.quarter_turns()) % 4]
    }
}

impl fmt::Display for Registration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

/// Extent of the grid after rotating by `r`.
pub fn rotated_extent(e: GridExtent, r: Registration) -> Result<GridExtent> {
    match r {
        Registration::R0 | Registration::R180 => Ok(e),
        Registration::R90 | Registration::R270 => GridExtent::new(e.k_max, e.j_max, e.i_max),
    }
}

/// Position of canonical `q` in the frame of a view rotated by `r`.
pub fn rotate_pos(q: GridPos, r: Registration, e: GridExtent) -> Result<GridPos> {
    e.check(q)?;
    let (il, kl) = (e.i_max - 1, e.k_max - 1);
    Ok(match r {
        Registration::R0 => q,
        Registration::R90 => GridPos::new(q.k, q.j, il - q.i),
        Registration::R180 => GridPos::new(il - q.i, q.j, kl - q.k),
        Registration::R270 => GridPos::new(kl - q.k, q.j, q.i),
    })
}

/// Rigid motion taking canonical world coordinates to the view's world
/// coordinates, consistent with [`rotate_pos`].
pub fn rigid_motion(r: Registration, e: GridExtent, m: &MetricParams) -> (Matrix3<f64>, Vec3) {
    let wi = (e.i_max - 1) as f64 * m.pitch;
    let wk = (e.k_max - 1) as f64 * m.pitch;
    match r {
        Registration::R0 => (Matrix3::identity(), Vec3::zeros()),
        Registration::R90 => (
            Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, wi),
        ),
        Registration::R180 => (
            Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0),
            Vec3::new(wi, 0.0, wk),
        ),
        Registration::R270 => (
            Matrix3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
            Vec3::new(wk, 0.0, 0.0),
        ),
    }
}

/// Canonical camera as seen from the view frame.
pub fn camera_to_view(
    cam: &CameraModel,
    r: Registration,
    e: GridExtent,
    m: &MetricParams,
) -> CameraModel {
    let (a, b) = rigid_motion(r, e, m);
    cam.moved(&a, &b)
}

/// View-frame camera expressed in the canonical frame.
pub fn camera_to_canonical(
    cam: &CameraModel,
    r: Registration,
    e: GridExtent,
    m: &MetricParams,
) -> CameraModel {
    let (a, b) = rigid_motion(r, e, m);
    let at = a.transpose();
    cam.moved(&at, &-(at * b))
}

/// Identity of canonical feature `fid` in a view rotated by `r`. When the
/// rotation reverses the log direction, ends and short segments swap and the
/// long segment is named after the other endpoint.
pub fn rotate_feature(fid: FeatureId, r: Registration, e: GridExtent) -> Result<FeatureId> {
    let q = rotate_pos(fid.q, r, e)?;
    let reversed = match (r, LayerAxis::of_layer(fid.q.j)) {
        (Registration::R0, _) => false,
        (Registration::R180, _) => true,
        // a quarter turn sends +i to -k and +k to +i
        (Registration::R90, LayerAxis::Axis0) => true,
        (Registration::R90, LayerAxis::Axis1) => false,
        (Registration::R270, LayerAxis::Axis0) => false,
        (Registration::R270, LayerAxis::Axis1) => true,
    };
    if !reversed {
        return Ok(FeatureId::new(q, fid.f));
    }
    Ok(match fid.f {
        FeatureClass::SegW => {
            let n = e.next(fid.q).ok_or_else(|| {
                Error::InvalidParameter(format!("{fid} has no successor position"))
            })?;
            FeatureId::new(rotate_pos(n, r, e)?, FeatureClass::SegW)
        }
        f => FeatureId::new(q, f.reversed()),
    })
}

/// Detector output keyed by feature identities of the view's own grid frame,
/// whose layer directions may differ from the canonical convention.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEvidence {
    pub extent: GridExtent,
    pub records: BTreeMap<FeatureId, f64>,
}

impl FrameEvidence {
    /// Canonical priors as a view rotated by `r` would report them.
    pub fn from_canonical(priors: &PriorSet, r: Registration) -> Result<Self> {
        let e = priors.extent();
        let mut records = BTreeMap::new();
        for (fid, p) in priors.iter() {
            records.insert(rotate_feature(fid, r, e)?, p.p_true());
        }
        Ok(FrameEvidence {
            extent: rotated_extent(e, r)?,
            records,
        })
    }

    /// Reads the evidence back into the canonical frame under hypothesis `r`.
    /// Canonical features with no record get a uniform prior.
    pub fn to_canonical(&self, r: Registration, canonical: GridExtent) -> Result<PriorSet> {
        if rotated_extent(canonical, r)? != self.extent {
            return Err(Error::ExtentMismatch(format!(
                "view extent {} is not {canonical} rotated by {r}",
                self.extent
            )));
        }
        let mut out = PriorSet::uniform(canonical);
        let ids = out.index().ids().to_vec();
        for (n, fid) in ids.into_iter().enumerate() {
            if let Some(&p) = self.records.get(&rotate_feature(fid, r, canonical)?) {
                out.values_mut()[n] = p;
            }
        }
        Ok(out)
    }

    pub fn to_text(&self, view: usize) -> String {
        let e = self.extent;
        let mut out = format!("view {view} extent {} {} {}\n", e.i_max, e.j_max, e.k_max);
        for (fid, p) in &self.records {
            writeln!(
                out,
                "{} {} {} {} {}",
                fid.q.i,
                fid.q.j,
                fid.q.k,
                fid.f.symbol(),
                p
            )
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<(usize, Self)> {
        let mut header: Option<(usize, FrameEvidence)> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            match (&mut header, fields.as_slice()) {
                (None, ["view", id, "extent", a, b, c]) => {
                    let extent = GridExtent::new(
                        parse_field(a, line)?,
                        parse_field(b, line)?,
                        parse_field(c, line)?,
                    )
                    .map_err(|err| Error::format(line, err.to_string()))?;
                    header = Some((
                        parse_field(id, line)?,
                        FrameEvidence {
                            extent,
                            records: BTreeMap::new(),
                        },
                    ));
                }
                (None, _) => {
                    return Err(Error::format(
                        line,
                        "expected `view <id> extent i j k` header",
                    ))
                }
                (Some((_, ev)), [i, j, k, f, p]) => {
                    let q = GridPos::new(
                        parse_field(i, line)?,
                        parse_field(j, line)?,
                        parse_field(k, line)?,
                    );
                    if !ev.extent.contains(q) {
                        return Err(Error::format(
                            line,
                            format!("{q} outside extent {}", ev.extent),
                        ));
                    }
                    let f = FeatureClass::from_symbol(f)
                        .ok_or_else(|| Error::format(line, format!("unknown feature `{f}`")))?;
                    let p: f64 = parse_field(p, line)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::format(line, format!("prior {p} outside [0, 1]")));
                    }
                    ev.records.insert(FeatureId::new(q, f), p);
                }
                (Some(_), _) => return Err(Error::format(line, "expected `i j k f p_true`")),
            }
        }
        header.ok_or_else(|| Error::format(0, "missing `view` header"))
    }
}

/// A view as delivered: camera and evidence in the view's own frame, plus the
/// canonical spans known to have been removed before it was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub id: String,
    pub camera: CameraModel,
    pub evidence: FrameEvidence,
    pub removed: Vec<LogSpan>,
}

/// A registered view in the canonical frame.
#[derive(Clone, Debug)]
pub struct FusedView {
    pub id: String,
    pub registration: Registration,
    pub camera: CameraModel,
    pub raw: PriorSet,
    pub grammar: GrammarInstance,
    pub removed: Vec<LogSpan>,
    pub visibility: VisibilityMap,
}

impl FusedView {
    pub fn masked(&self) -> Result<PriorSet> {
        self.visibility.mask(&self.raw)
    }
}

/// Feature ids at positions covered by `removed`.
pub fn removed_features(extent: GridExtent, removed: &[LogSpan]) -> Result<BTreeSet<FeatureId>> {
    let mut out = BTreeSet::new();
    for span in removed {
        for q in span.positions(&extent)? {
            for f in FeatureClass::ALL {
                out.insert(FeatureId::new(q, f));
            }
        }
    }
    Ok(out)
}

/// Grammar for a view taken after `removed` were taken away.
pub fn disassembly_grammar(g: &GrammarInstance, removed: &[LogSpan]) -> Result<GrammarInstance> {
    if removed.is_empty() {
        return Ok(g.clone());
    }
    Ok(g.without_features(&removed_features(g.extent(), removed)?))
}

/// `s` without any of its logs that overlap a removed span.
pub fn structure_without(s: &StructureEstimate, removed: &[LogSpan]) -> Result<StructureEstimate> {
    if removed.is_empty() {
        return Ok(s.clone());
    }
    let e = s.extent();
    let mut gone = BTreeSet::new();
    for span in removed {
        gone.extend(span.positions(&e)?);
    }
    let mut out = s.clone();
    for span in s.spans()? {
        if span.positions(&e)?.iter().any(|q| gone.contains(q)) {
            out.remove(&span)?;
        }
    }
    Ok(out)
}

/// Maps a delivered view into the canonical frame under hypothesis `r`.
pub fn prepare_view(
    g: &GrammarInstance,
    record: &ViewRecord,
    r: Registration,
    m: &MetricParams,
) -> Result<FusedView> {
    let e = g.extent();
    let raw = record.evidence.to_canonical(r, e)?;
    let camera = camera_to_canonical(&record.camera, r, e, m);
    let visibility = initial_visibility(e, &camera, m)?;
    Ok(FusedView {
        id: record.id.clone(),
        registration: r,
        camera,
        raw,
        grammar: disassembly_grammar(g, &record.removed)?,
        removed: record.removed.clone(),
        visibility,
    })
}

/// Joint estimate over all views, each masked by its current visibility.
pub fn fuse_estimate(g: &GrammarInstance, views: &[FusedView]) -> Result<Solution> {
    let masked: Vec<PriorSet> = views.iter().map(FusedView::masked).collect::<Result<_>>()?;
    Estimator::new(g)
        .views(views.iter().zip(&masked).map(|(v, p)| ViewTerm {
            grammar: &v.grammar,
            priors: p,
        }))
        .solve()
}

fn update_all(
    views: &[FusedView],
    s: &StructureEstimate,
    m: &MetricParams,
    theta: f64,
) -> Result<Vec<VisibilityMap>> {
    views
        .iter()
        .map(|v| update_visibility(&structure_without(s, &v.removed)?, &v.camera, m, theta))
        .collect()
}

/// Alternating estimation over all views, starting from their current
/// visibility maps. Leaves each view holding the visibility used for the
/// returned solution.
pub fn fuse_tandem(
    g: &GrammarInstance,
    views: &mut [FusedView],
    m: &MetricParams,
    opts: TandemOptions,
) -> Result<(Solution, FixpointTrace)> {
    let initial: Vec<VisibilityMap> = views.iter().map(|v| v.visibility.clone()).collect();
    let snapshot: Vec<FusedView> = views.to_vec();
    let trace = run_tandem(
        initial,
        opts.cap,
        |vis| {
            let mut vs = snapshot.clone();
            for (v, map) in vs.iter_mut().zip(vis) {
                v.visibility = map.clone();
            }
            fuse_estimate(g, &vs)
        },
        |s| update_all(&snapshot, s, m, opts.theta),
    )?;
    let step = &trace.steps[trace.chosen];
    for (v, map) in views.iter_mut().zip(&step.visibility) {
        v.visibility = map.clone();
    }
    Ok((step.solution.clone(), trace))
}

#[derive(Clone, Debug)]
pub struct RegistrationOutcome {
    pub registration: Registration,
    pub view: FusedView,
    pub solution: Solution,
    /// Fused log-probability per orientation tried, `None` when the extents
    /// do not match.
    pub scores: Vec<(Registration, Option<f64>)>,
    /// Visibility of the existing views after fusing with the new one.
    pub updated: Vec<FusedView>,
}

/// Tries all four orientations of `new` against the current views and keeps
/// the one giving the most likely fused estimate.
pub fn register_view(
    g: &GrammarInstance,
    current: &[FusedView],
    new: &ViewRecord,
    m: &MetricParams,
    opts: TandemOptions,
) -> Result<RegistrationOutcome> {
    if current.is_empty() {
        return Err(Error::InvalidParameter(
            "registration needs at least one registered view".into(),
        ));
    }
    let mut best: Option<(Registration, Vec<FusedView>, Solution)> = None;
    let mut scores = Vec::new();
    for r in Registration::ALL {
        if rotated_extent(g.extent(), r)? != new.evidence.extent {
            scores.push((r, None));
            continue;
        }
        let mut views = current.to_vec();
        views.push(prepare_view(g, new, r, m)?);
        let (sol, _) = fuse_tandem(g, &mut views, m, opts)?;
        scores.push((r, Some(sol.log_probability)));
        let better = best
            .as_ref()
            .is_none_or(|(_, _, b)| sol.log_probability > b.log_probability);
        if better {
            best = Some((r, views, sol));
        }
    }
    let (registration, mut views, solution) = best.ok_or_else(|| {
        Error::ExtentMismatch(format!(
            "view extent {} matches no orientation of {}",
            new.evidence.extent,
            g.extent()
        ))
    })?;
    let view = views.pop().expect("new view appended");
    Ok(RegistrationOutcome {
        registration,
        view,
        solution,
        scores,
        updated: views,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    NewViewpoint,
    Disassembly,
    Combined,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::NewViewpoint => "view",
            ActionKind::Disassembly => "disassembly",
            ActionKind::Combined => "combined",
        }
    }
}

/// An action the robot could take: where the camera would be (canonical
/// frame), what would have been removed, and the view it would deliver.
#[derive(Clone, Debug)]
pub struct ActionCandidate {
    pub id: String,
    pub kind: ActionKind,
    pub camera: CameraModel,
    pub removed: Vec<LogSpan>,
    pub realized: ViewRecord,
}

/// Everything needed to test one candidate at a given shift.
pub struct ActionProbe<'a> {
    g: &'a GrammarInstance,
    current: Vec<(&'a GrammarInstance, PriorSet)>,
    grammar: GrammarInstance,
    revealed: BTreeMap<FeatureId, bool>,
    reference: StructureEstimate,
}

impl<'a> ActionProbe<'a> {
    pub fn new(
        g: &'a GrammarInstance,
        views: &'a [FusedView],
        sol: &Solution,
        cand: &ActionCandidate,
        m: &MetricParams,
        theta: f64,
    ) -> Result<Self> {
        let hypothetical = structure_without(&sol.structure, &cand.removed)?;
        let vis = update_visibility(&hypothetical, &cand.camera, m, theta)?;
        let grammar = disassembly_grammar(g, &cand.removed)?;
        let seen_now: Vec<(BTreeSet<FeatureId>, &VisibilityMap)> = views
            .iter()
            .map(|v| (v.grammar.feature_links().collect(), &v.visibility))
            .collect();
        let implied = implied_features_unchecked(&sol.structure);
        let revealed = grammar
            .feature_links()
            .filter(|&fid| vis.get(fid) == Some(true))
            .filter(|&fid| {
                seen_now
                    .iter()
                    .all(|(links, v)| !(links.contains(&fid) && v.get(fid) == Some(true)))
            })
            .map(|fid| (fid, implied.get(fid).expect("same extent")))
            .collect();
        let current = views
            .iter()
            .map(|v| Ok((&v.grammar, v.masked()?)))
            .collect::<Result<_>>()?;
        Ok(ActionProbe {
            g,
            current,
            grammar,
            revealed,
            reference: sol.structure.clone(),
        })
    }

    /// Features the action would newly reveal.
    pub fn revealed(&self) -> &BTreeMap<FeatureId, bool> {
        &self.revealed
    }

    pub fn is_vacuous(&self) -> bool {
        self.revealed.is_empty()
    }

    /// Whether evidence shifted by `delta` against the estimate on the
    /// revealed features would change the fused estimate.
    pub fn changes(&self, delta: f64) -> Result<bool> {
        if self.is_vacuous() {
            return Ok(false);
        }
        let hyp = shifted_priors(&PriorSet::uniform(self.g.extent()), &self.revealed, delta)?;
        let est = Estimator::new(self.g)
            .views(self.current.iter().map(|(g, p)| ViewTerm {
                grammar: g,
                priors: p,
            }))
            .view(ViewTerm {
                grammar: &self.grammar,
                priors: &hyp,
            });
        Ok(est.rival(&self.reference)?.is_some())
    }

    pub fn tolerance(&self, precision: f64) -> Result<f64> {
        if self.is_vacuous() {
            return Ok(TOLERANCE_CAP);
        }
        tolerance_search(precision, |d| self.changes(d))
    }
}

/// Smallest shift on newly revealed features that would change the estimate.
pub fn action_tolerance(
    g: &GrammarInstance,
    views: &[FusedView],
    sol: &Solution,
    cand: &ActionCandidate,
    m: &MetricParams,
    theta: f64,
    precision: f64,
) -> Result<f64> {
    ActionProbe::new(g, views, sol, cand, m, theta)?.tolerance(precision)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub chosen: usize,
    /// Number of estimator runs spent.
    pub probes: usize,
}

/// Lock-step bisection over all candidates at once: every round probes the
/// surviving candidates at a shared shift and keeps only those that flip,
/// stopping as soon as one survivor remains.
pub fn plan_action(probes: &[ActionProbe<'_>], precision: f64) -> Result<Plan> {
    if probes.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut runs = 0;
    let mut hi = 0.5 - precision;
    let mut active = Vec::new();
    for (n, p) in probes.iter().enumerate() {
        if !p.is_vacuous() {
            runs += 1;
            if p.changes(hi)? {
                active.push(n);
            }
        }
    }
    if active.is_empty() {
        return Ok(Plan {
            chosen: 0,
            probes: runs,
        });
    }
    let mut lo = 0.0;
    while active.len() > 1 && hi - lo > precision {
        let mid = 0.5 * (lo + hi);
        let mut flipped = Vec::new();
        for &n in &active {
            runs += 1;
            if probes[n].changes(mid)? {
                flipped.push(n);
            }
        }
        if flipped.is_empty() {
            lo = mid;
        } else {
            hi = mid;
            active = flipped;
        }
    }
    Ok(Plan {
        chosen: active[0],
        probes: runs,
    })
}

/// Reference planner: a full bisection per candidate, minimum wins, ties by order.
pub fn plan_action_independent(
    probes: &[ActionProbe<'_>],
    precision: f64,
) -> Result<(usize, Vec<f64>)> {
    if probes.is_empty() {
        return Err(Error::NoCandidates);
    }
    let deltas: Vec<f64> = probes
        .iter()
        .map(|p| p.tolerance(precision))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (n, &d) in deltas.iter().enumerate() {
        if d < deltas[best] {
            best = n;
        }
    }
    Ok((best, deltas))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveOptions {
    pub delta_star: f64,
    pub precision: f64,
    pub budget: usize,
    pub tandem: TandemOptions,
}

impl Default for ActiveOptions {
    fn default() -> Self {
        ActiveOptions {
            delta_star: crate::confidence::DEFAULT_DELTA_STAR,
            precision: crate::confidence::DEFAULT_PRECISION,
            budget: 4,
            tandem: TandemOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionStep {
    pub candidate: String,
    pub kind: ActionKind,
    pub registration: Registration,
    pub log_probability: f64,
    pub confident: bool,
}

#[derive(Clone, Debug)]
pub struct ActiveOutcome {
    pub initial: Solution,
    pub initially_confident: bool,
    pub solution: Solution,
    pub views: Vec<FusedView>,
    pub trace: Vec<ActionStep>,
}

impl ActiveOutcome {
    pub fn trace_text(&self) -> String {
        let mut out = format!(
            "initial {} confident={}\n",
            self.initial.log_probability, self.initially_confident
        );
        for (n, s) in self.trace.iter().enumerate() {
            writeln!(
                out,
                "{} {} {} registration={} log_probability={} confident={}",
                n + 1,
                s.kind.name(),
                s.candidate,
                s.registration,
                s.log_probability,
                s.confident
            )
            .unwrap();
        }
        out
    }
}

fn confident_now(
    g: &GrammarInstance,
    views: &[FusedView],
    sol: &Solution,
    delta_star: f64,
) -> Result<bool> {
    let masked: Vec<PriorSet> = views.iter().map(FusedView::masked).collect::<Result<_>>()?;
    let ev: Vec<ViewEvidence> = views
        .iter()
        .zip(&masked)
        .map(|(v, p)| ViewEvidence {
            grammar: &v.grammar,
            priors: p,
            visibility: &v.visibility,
        })
        .collect();
    Ok(is_confident(g, &ev, sol, delta_star)?.confident)
}

/// Estimate from the initial view, then keep taking the most informative
/// action until confident, out of actions, or out of budget. The initial
/// view defines the canonical frame.
pub fn active_loop(
    g: &GrammarInstance,
    initial: &ViewRecord,
    actions: Vec<ActionCandidate>,
    m: &MetricParams,
    opts: ActiveOptions,
) -> Result<ActiveOutcome> {
    let mut views = vec![prepare_view(g, initial, Registration::R0, m)?];
    let (mut sol, _) = fuse_tandem(g, &mut views, m, opts.tandem)?;
    let first = sol.clone();
    let mut confident = confident_now(g, &views, &sol, opts.delta_star)?;
    let initially_confident = confident;
    let mut remaining = actions;
    let mut trace = Vec::new();
    while !confident && !remaining.is_empty() && trace.len() < opts.budget {
        let probes: Vec<ActionProbe> = remaining
            .iter()
            .map(|c| ActionProbe::new(g, &views, &sol, c, m, opts.tandem.theta))
            .collect::<Result<_>>()?;
        let plan = plan_action(&probes, opts.precision)?;
        drop(probes);
        let cand = remaining.remove(plan.chosen);
        let outcome = register_view(g, &views, &cand.realized, m, opts.tandem)?;
        views = outcome.updated;
        views.push(outcome.view);
        sol = outcome.solution;
        confident = confident_now(g, &views, &sol, opts.delta_star)?;
        trace.push(ActionStep {
            candidate: cand.id,
            kind: cand.kind,
            registration: outcome.registration,
            log_probability: sol.log_probability,
            confident,
        });
    }
    Ok(ActiveOutcome {
        initial: first,
        initially_confident,
        solution: sol,
        views,
        trace,
    })
}
