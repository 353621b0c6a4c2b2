//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits nonzero if any fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use loggrid::confidence::{estimation_tolerance, is_confident, ViewEvidence, DEFAULT_PRECISION};
use loggrid::evidence::{synthesize_view, synthesize_with_visibility, Clutter, DetectorModel};
use loggrid::fusion::{
    active_loop, fuse_tandem, plan_action, plan_action_independent, prepare_view, register_view,
    rotate_pos, ActionKind, ActionProbe, ActiveOptions, FrameEvidence, Registration, ViewRecord,
};
use loggrid::geometry::{ray_hits_cylinder, Cylinder, MetricParams, Ray, Vec3};
use loggrid::grammar::{enumerate_valid, implied_features, instantiate, is_valid, GrammarInstance};
use loggrid::grid::{FeatureId, GridExtent, GridPos, LogSpan, StructureEstimate};
use loggrid::harness::{error_count, random_structure, ring_camera, Corpus, CorpusParams};
use loggrid::nl::{compile, estimate_tandem_with_language, parse};
use loggrid::solver::{estimate, FeaturePrior, PriorSet};
use loggrid::visibility::{
    estimate_tandem, update_visibility, update_visibility_raster, TandemOptions, Termination,
    VisibilityMap, DEFAULT_THETA,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCORE_REL_TOL: f64 = 1e-9;
const C1_BUDGET: Duration = Duration::from_secs(60);
const C2_BUDGET: Duration = Duration::from_secs(300);
const C7_BUDGET: Duration = Duration::from_secs(1800);
const TANDEM_CAP: usize = 10;
const TANDEM_QUICK: usize = 4;
const TANDEM_QUICK_SHARE: f64 = 0.8;
const GT_VIS_MARGIN: f64 = 1.0;
const DELTA_STAR: f64 = 0.2;
const FP_RATE: f64 = 0.05;
const BAND: f64 = 1e-3;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {n:>2} {name}: {} ({detail})",
            if ok { "PASS" } else { "FAIL" }
        );
    }
}

fn p(i: usize, j: usize, k: usize) -> GridPos {
    GridPos::new(i, j, k)
}

fn spans(e: GridExtent, list: &[&str]) -> StructureEstimate {
    let mut s = StructureEstimate::empty(e);
    for t in list {
        s.place(&t.parse().unwrap()).unwrap();
    }
    s
}

/// 0.95 / 0.05 priors on visible features, uniform elsewhere.
fn exact_priors(s: &StructureEstimate, vis: &VisibilityMap) -> PriorSet {
    let implied = implied_features(s).unwrap();
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

/// Log-probability straight from the implied features, independent of the
/// solver's score table.
fn oracle_score(s: &StructureEstimate, g: &GrammarInstance, priors: &PriorSet) -> f64 {
    let implied = implied_features(s).unwrap();
    g.feature_links()
        .map(|fid| priors.get(fid).unwrap().p(implied.get(fid).unwrap()).ln())
        .sum()
}

fn solver_oracle(rep: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut exact, mut worst) = (0, 0.0f64);
    for _ in 0..200 {
        let e = GridExtent::new(
            rng.gen_range(1..=3),
            rng.gen_range(1..=2),
            rng.gen_range(1..=3),
        )
        .unwrap();
        let g = instantiate(e);
        let mut priors = PriorSet::uniform(e);
        let ids: Vec<FeatureId> = priors.index().ids().to_vec();
        for fid in ids {
            priors
                .set(fid, FeaturePrior::new(rng.gen_range(0.02..0.98)).unwrap())
                .unwrap();
        }
        let sol = estimate(&g, std::slice::from_ref(&priors)).unwrap();
        let mut best: Option<(f64, StructureEstimate)> = None;
        for s in enumerate_valid(&g).unwrap() {
            let sc = oracle_score(&s, &g, &priors);
            if best.as_ref().is_none_or(|(b, _)| sc > *b) {
                best = Some((sc, s));
            }
        }
        let (bs, bstruct) = best.unwrap();
        let rel = (sol.log_probability - bs).abs() / bs.abs().max(1e-300);
        worst = worst.max(rel);
        exact += usize::from(sol.structure == bstruct && rel <= SCORE_REL_TOL);
    }
    let el = t.elapsed();
    rep.line(
        1,
        "solver matches brute force",
        exact == 200 && el < C1_BUDGET,
        format!("{exact}/200 exact, worst relative score gap {worst:.1e}, {el:.1?}"),
    );
}

fn identifiability(rep: &mut Report) {
    let t = Instant::now();
    let m = MetricParams::default();
    let (mut full, mut cam_ok, mut max_logs) = (0, 0, 0);
    for seed in 0..100u64 {
        let e = GridExtent::new(
            3 + (seed % 4) as usize,
            2 + (seed % 3) as usize,
            3 + ((seed / 4) % 4) as usize,
        )
        .unwrap();
        let g = instantiate(e);
        let gt = random_structure(e, seed, 20);
        max_logs = max_logs.max(gt.spans().unwrap().len());
        let dm = DetectorModel::exact(Clutter::Uniform, seed);
        let raw = synthesize_with_visibility(&gt, VisibilityMap::all(e, true), &dm).unwrap();
        full += usize::from(estimate(&g, &[raw.priors().clone()]).unwrap().structure == gt);
        // informational: visibility of a single real camera
        let cam = ring_camera(e, &m, 30.0 + seed as f64 * 37.0, 40.0, (320, 240)).unwrap();
        let raw = synthesize_view(&gt, &cam, &dm, &m).unwrap();
        let masked = raw.truth().unwrap().visibility.mask(raw.priors()).unwrap();
        cam_ok += usize::from(estimate(&g, &[masked]).unwrap().structure == gt);
    }
    let el = t.elapsed();
    rep.line(
        2,
        "noise-free identifiability",
        full == 100 && max_logs <= 20 && el < C2_BUDGET,
        format!(
            "{full}/100 exact with every feature visible, at most {max_logs} logs, {el:.1?}; \
             single-camera visibility {cam_ok}/100"
        ),
    );
}

/// Scenes with hidden logs forced by support rules, `(extent, visible logs, hidden logs)`.
fn fill_in_scenes() -> Vec<((usize, usize, usize), Vec<&'static str>, Vec<&'static str>)> {
    vec![
        ((3, 2, 3), vec!["1,1,1,1"], vec!["1,0,1,1"]),
        ((3, 2, 3), vec!["0,0,0,3", "1,1,0,3"], vec!["1,0,1,1"]),
        ((3, 2, 3), vec!["0,0,1,3", "0,1,1,2"], vec!["0,0,2,1"]),
        ((3, 2, 3), vec!["2,1,0,1"], vec!["2,0,0,1"]),
        (
            (3, 2, 3),
            vec!["0,0,2,2", "2,1,2,1", "1,1,2,1"],
            vec!["2,0,2,1"],
        ),
        (
            (3, 2, 3),
            vec!["0,1,0,1", "2,1,2,1"],
            vec!["0,0,0,1", "2,0,2,1"],
        ),
        ((3, 2, 3), vec!["0,0,0,2", "1,1,0,3"], vec!["1,0,2,1"]),
        ((3, 2, 3), vec!["0,0,1,3", "1,1,0,2"], vec!["1,0,0,1"]),
        (
            (3, 2, 3),
            vec!["0,1,1,1", "2,0,0,1", "2,0,1,1", "2,1,0,2"],
            vec!["0,0,1,1"],
        ),
        ((3, 2, 2), vec!["0,0,1,3", "1,1,0,2"], vec!["1,0,0,1"]),
    ]
}

/// A fill-in scene built out: truth, grammar, visibility with every feature
/// of the hidden logs occluded, and exact priors.
fn fill_in_scene(
    ext: (usize, usize, usize),
    visible: &[&str],
    hidden: &[&str],
) -> (StructureEstimate, GrammarInstance, VisibilityMap, PriorSet) {
    let e = GridExtent::new(ext.0, ext.1, ext.2).unwrap();
    let all: Vec<&str> = visible.iter().chain(hidden).copied().collect();
    let gt = spans(e, &all);
    let covered: BTreeSet<GridPos> = hidden
        .iter()
        .flat_map(|t| t.parse::<LogSpan>().unwrap().positions(&e).unwrap())
        .collect();
    let vis = VisibilityMap::from_fn(e, |fid| !covered.contains(&fid.q));
    let priors = exact_priors(&gt, &vis);
    (gt, instantiate(e), vis, priors)
}

fn occlusion_fill_in(rep: &mut Report) {
    let (mut ok, mut unique) = (0, 0);
    for (ext, visible, hidden) in fill_in_scenes() {
        let (gt, g, vis, priors) = fill_in_scene(ext, &visible, &hidden);
        assert!(is_valid(&gt, &g));
        let want = implied_features(&gt).unwrap();
        let consistent = enumerate_valid(&g)
            .unwrap()
            .into_iter()
            .filter(|o| {
                let imp = implied_features(o).unwrap();
                g.feature_links()
                    .all(|fid| !vis.get(fid).unwrap() || imp.get(fid) == want.get(fid))
            })
            .count();
        unique += usize::from(consistent == 1);
        ok += usize::from(estimate(&g, &[priors]).unwrap().structure == gt);
    }
    rep.line(
        3,
        "occlusion fill-in",
        ok == 10 && unique == 10,
        format!("{ok}/10 recovered, {unique}/10 verified unique by enumeration"),
    );
}

/// Two structures whose evidence was arranged so that each one's
/// visibility makes the other the better explanation.
fn oscillation_scene() -> (GrammarInstance, PriorSet, loggrid::geometry::CameraModel) {
    let m = MetricParams::default();
    let e = GridExtent::new(3, 2, 3).unwrap();
    let a = StructureEstimate::empty(e);
    let b = spans(
        e,
        &[
            "1,0,0,1", "2,0,0,1", "0,0,1,1", "1,0,1,1", "2,0,1,1", "0,0,2,3", "1,1,0,1", "2,1,0,2",
            "0,1,1,1", "1,1,1,1", "0,1,2,1", "2,1,2,1",
        ],
    );
    let cam = ring_camera(e, &m, 200.0, 20.0, (160, 120)).unwrap();
    let va = update_visibility(&a, &cam, &m, DEFAULT_THETA).unwrap();
    let vb = update_visibility(&b, &cam, &m, DEFAULT_THETA).unwrap();
    let (fa, fb) = (implied_features(&a).unwrap(), implied_features(&b).unwrap());
    let mut priors = PriorSet::uniform(e);
    for (fid, x) in fa.iter() {
        let y = fb.get(fid).unwrap();
        let (sa, sb) = (va.get(fid).unwrap(), vb.get(fid).unwrap());
        let value = match (sa, sb) {
            (true, true) => (x == y).then_some(x),
            (true, false) => Some(y),
            (false, true) => Some(x),
            (false, false) => None,
        };
        if let Some(v) = value {
            priors
                .set(fid, FeaturePrior::new(if v { 0.9 } else { 0.1 }).unwrap())
                .unwrap();
        }
    }
    (instantiate(e), priors, cam)
}

fn tandem_convergence(rep: &mut Report) {
    let m = MetricParams::default();
    let e = GridExtent::new(4, 3, 4).unwrap();
    let g = instantiate(e);
    let (mut within_cap, mut quick, mut worst) = (0, 0, 0);
    for seed in 0..100u64 {
        let gt = random_structure(e, 1000 + seed, 10);
        let cam = ring_camera(e, &m, 30.0 + seed as f64 * 37.0, 30.0, (320, 240)).unwrap();
        let dm = DetectorModel::new(0.9, 0.05, Clutter::Adversarial, seed).unwrap();
        let raw = synthesize_view(&gt, &cam, &dm, &m).unwrap();
        let (_, _, trace) =
            estimate_tandem(&g, raw.priors(), &cam, &m, TandemOptions::default()).unwrap();
        let it = trace.iterations();
        worst = worst.max(it);
        within_cap +=
            usize::from(it <= TANDEM_CAP && trace.termination != Termination::IterationCap);
        quick += usize::from(it <= TANDEM_QUICK);
    }

    let (og, priors, cam) = oscillation_scene();
    let (sol, _, trace) =
        estimate_tandem(&og, &priors, &cam, &m, TandemOptions::default()).unwrap();
    let last = &trace.steps.last().unwrap().solution.structure;
    let next = update_visibility(last, &cam, &m, DEFAULT_THETA).unwrap();
    let start = trace
        .steps
        .iter()
        .position(|s| s.visibility[0] == next)
        .unwrap();
    let cycle = &trace.steps[start..];
    let best = cycle
        .iter()
        .map(|s| s.solution.log_probability)
        .fold(f64::NEG_INFINITY, f64::max);
    let members: BTreeSet<String> = cycle
        .iter()
        .map(|s| s.solution.structure.to_text())
        .collect();
    let loop_ok = trace.termination == Termination::LoopDetected
        && members.len() >= 2
        && sol.log_probability == best
        && cycle.iter().any(|s| s.solution == sol);
    rep.line(
        4,
        "tandem convergence",
        within_cap == 100 && quick as f64 >= TANDEM_QUICK_SHARE * 100.0 && loop_ok,
        format!(
            "{within_cap}/100 within {TANDEM_CAP}, {quick}/100 within {TANDEM_QUICK}, worst {worst}; \
             oscillation scene {} with cycle of {} returning log p {best:.3}",
            trace.termination.name(),
            cycle.len()
        ),
    );
}

fn visibility_necessity(rep: &mut Report) {
    let m = MetricParams::default();
    let e = GridExtent::new(4, 3, 4).unwrap();
    let g = instantiate(e);
    let (mut tandem, mut raw_all, mut gt_vis) = (0, 0, 0);
    for seed in 0..50u64 {
        let gt = random_structure(e, 5000 + seed, 10);
        let cam = ring_camera(e, &m, 10.0 + seed as f64 * 53.0, 30.0, (320, 240)).unwrap();
        let dm = DetectorModel::new(0.9, 0.05, Clutter::Adversarial, 77 + seed).unwrap();
        let raw = synthesize_view(&gt, &cam, &dm, &m).unwrap();
        let (sol, _, _) =
            estimate_tandem(&g, raw.priors(), &cam, &m, TandemOptions::default()).unwrap();
        tandem += error_count(&gt, &sol.structure).unwrap();
        let plain = estimate(&g, &[raw.priors().clone()]).unwrap();
        raw_all += error_count(&gt, &plain.structure).unwrap();
        let masked = raw.truth().unwrap().visibility.mask(raw.priors()).unwrap();
        gt_vis += error_count(&gt, &estimate(&g, &[masked]).unwrap().structure).unwrap();
    }
    let (t, r, v) = (
        tandem as f64 / 50.0,
        raw_all as f64 / 50.0,
        gt_vis as f64 / 50.0,
    );
    rep.line(
        5,
        "visibility necessity",
        t < r && (t - v).abs() <= GT_VIS_MARGIN,
        format!("mean errors tandem {t:.2}, all raw priors {r:.2}, true visibility {v:.2}"),
    );
}

/// `(confident, tolerance)` for one view of evidence.
fn confidence_pair(
    g: &GrammarInstance,
    priors: &PriorSet,
    vis: &VisibilityMap,
) -> (bool, f64, StructureEstimate) {
    let sol = estimate(g, std::slice::from_ref(priors)).unwrap();
    let views = [ViewEvidence {
        grammar: g,
        priors,
        visibility: vis,
    }];
    let c = is_confident(g, &views, &sol, DELTA_STAR).unwrap().confident;
    let d = estimation_tolerance(g, &views, &sol, DEFAULT_PRECISION).unwrap();
    (c, d, sol.structure)
}

fn coherent(c: bool, d: f64) -> bool {
    if c {
        d >= DELTA_STAR - DEFAULT_PRECISION
    } else {
        d < DELTA_STAR + DEFAULT_PRECISION
    }
}

fn confidence_coherence(rep: &mut Report) {
    let m = MetricParams::default();
    let mut incoherent = 0;
    let mut scenes = 0;

    // ambiguous: hidden halves of logs admit an equally good split or merge
    let mut ambiguous_confident = 0;
    let ambiguous: Vec<(StructureEstimate, VisibilityMap)> = {
        let e = GridExtent::new(2, 1, 1).unwrap();
        let one = (
            spans(e, &["0,0,0,2"]),
            VisibilityMap::from_fn(e, |fid| {
                fid.q.i == 0 && fid.f == loggrid::grid::FeatureClass::EndMinus
            }),
        );
        let e3 = GridExtent::new(3, 2, 3).unwrap();
        let two = {
            let s = spans(e3, &["0,0,1,3", "0,1,1,2", "1,1,1,1"]);
            let hidden = [p(0, 0, 1), p(1, 0, 1)];
            (
                s,
                VisibilityMap::from_fn(e3, |fid| !hidden.contains(&fid.q)),
            )
        };
        let three = {
            let s = spans(e3, &["0,0,0,2", "0,1,0,1", "1,1,0,1"]);
            let hidden = [p(0, 0, 0), p(1, 0, 0)];
            (
                s,
                VisibilityMap::from_fn(e3, |fid| !hidden.contains(&fid.q)),
            )
        };
        vec![one, two, three]
    };
    for (s, vis) in &ambiguous {
        let g = instantiate(s.extent());
        let (c, d, _) = confidence_pair(&g, &exact_priors(s, vis), vis);
        scenes += 1;
        incoherent += usize::from(!coherent(c, d));
        ambiguous_confident += usize::from(c);
    }

    let mut determined_confident = 0;
    let determined = fill_in_scenes();
    for (ext, visible, hidden) in &determined {
        let (_, g, vis, priors) = fill_in_scene(*ext, visible, hidden);
        let (c, d, _) = confidence_pair(&g, &priors, &vis);
        scenes += 1;
        incoherent += usize::from(!coherent(c, d));
        determined_confident += usize::from(c);
    }

    let e = GridExtent::new(4, 3, 4).unwrap();
    let g = instantiate(e);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut fp, mut confident, mut wrong) = (0, 0, 0);
    for seed in 0..100u64 {
        let gt = random_structure(e, 3000 + seed, rng.gen_range(6..=12));
        let cam = ring_camera(
            e,
            &m,
            rng.gen_range(0.0..360.0),
            rng.gen_range(10.0..60.0),
            (320, 240),
        )
        .unwrap();
        let dm = DetectorModel::new(0.9, 0.05, Clutter::Random, seed).unwrap();
        let raw = synthesize_view(&gt, &cam, &dm, &m).unwrap();
        let (_, vis, _) =
            estimate_tandem(&g, raw.priors(), &cam, &m, TandemOptions::default()).unwrap();
        let priors = vis.mask(raw.priors()).unwrap();
        let (c, d, s) = confidence_pair(&g, &priors, &vis);
        scenes += 1;
        incoherent += usize::from(!coherent(c, d));
        let bad = s != gt;
        confident += usize::from(c);
        wrong += usize::from(bad);
        fp += usize::from(c && bad);
    }
    rep.line(
        6,
        "confidence coherence",
        incoherent == 0
            && ambiguous_confident == 0
            && determined_confident == determined.len()
            && fp as f64 <= FP_RATE * 100.0,
        format!(
            "{incoherent}/{scenes} incoherent, ambiguous confident {ambiguous_confident}/{}, \
             determined confident {determined_confident}/{}, corpus {confident} confident, \
             {wrong} wrong, {fp} false positives",
            ambiguous.len(),
            determined.len()
        ),
    );
}

/// Scenes with fewer than `t` errors.
fn below(counts: &[usize], t: usize) -> usize {
    counts.iter().filter(|&&c| c < t).count()
}

fn active_vision(rep: &mut Report) {
    let t = Instant::now();
    let m = MetricParams::default();
    let e = GridExtent::new(5, 4, 5).unwrap();
    let g = instantiate(e);
    let mut p = CorpusParams::new(e, 30, 7);
    p.logs = 16;
    p.subset_depth = 2;
    p.elevation = (10.0, 30.0);
    p.detector = DetectorModel::new(0.9, 0.1, Clutter::Random, 7).unwrap();
    let corpus = Corpus::generate(&p).unwrap();
    let kinds = [
        ActionKind::NewViewpoint,
        ActionKind::Disassembly,
        ActionKind::Combined,
    ];
    let mut base = Vec::new();
    let mut finals = vec![Vec::new(); 3];
    for s in corpus.base_scenes() {
        for (n, kind) in kinds.into_iter().enumerate() {
            let (init, cands) = corpus.active_setup(&s.id, "v0", kind, &m).unwrap();
            let out = active_loop(&g, &init, cands, &m, ActiveOptions::default()).unwrap();
            if n == 0 {
                base.push(error_count(&s.structure, &out.initial.structure).unwrap());
            }
            finals[n].push(error_count(&s.structure, &out.solution.structure).unwrap());
        }
    }
    let top = base
        .iter()
        .chain(finals.iter().flatten())
        .max()
        .copied()
        .unwrap_or(0)
        + 1;
    let dominates = finals
        .iter()
        .all(|f| (1..=top).all(|t| below(f, t) >= below(&base, t)));
    let at1 = below(&finals[2], 1) >= below(&finals[0], 1)
        && below(&finals[2], 1) >= below(&finals[1], 1);
    let el = t.elapsed();
    rep.line(
        7,
        "active vision",
        dominates && at1 && el < C7_BUDGET,
        format!(
            "error-free scenes of {}: baseline {}, views {}, disassembly {}, combined {}; {el:.1?}",
            base.len(),
            below(&base, 1),
            below(&finals[0], 1),
            below(&finals[1], 1),
            below(&finals[2], 1)
        ),
    );
}

fn symmetric(s: &StructureEstimate) -> bool {
    let e = s.extent();
    let cells = |r: Registration| -> BTreeSet<(GridPos, u8)> {
        e.positions()
            .filter(|&q| s.get(q).is_occupied())
            .map(|q| (rotate_pos(q, r, e).unwrap(), s.get(q).len()))
            .collect()
    };
    let base = cells(Registration::R0);
    [Registration::R90, Registration::R180, Registration::R270]
        .into_iter()
        .any(|r| cells(r) == base)
}

fn record(
    gt: &StructureEstimate,
    cam: &loggrid::geometry::CameraModel,
    r: Registration,
    seed: u64,
    m: &MetricParams,
) -> ViewRecord {
    let e = gt.extent();
    let dm = DetectorModel::new(0.9, 0.05, Clutter::Uniform, seed).unwrap();
    let raw = synthesize_view(gt, cam, &dm, m).unwrap();
    ViewRecord {
        id: format!("v{seed}"),
        camera: loggrid::fusion::camera_to_view(cam, r, e, m),
        evidence: FrameEvidence::from_canonical(raw.priors(), r).unwrap(),
        removed: Vec::new(),
    }
}

fn registration(rep: &mut Report) {
    let m = MetricParams::default();
    let e = GridExtent::new(4, 3, 4).unwrap();
    let g = instantiate(e);
    let (mut ok, mut total, mut seed) = (0, 0, 0u64);
    while total < 40 {
        seed += 1;
        let gt = random_structure(e, 9000 + seed, 10);
        if symmetric(&gt) {
            continue;
        }
        let c1 = ring_camera(e, &m, seed as f64 * 41.0, 35.0, (320, 240)).unwrap();
        let c2 = ring_camera(e, &m, seed as f64 * 41.0 + 150.0, 35.0, (320, 240)).unwrap();
        let first = prepare_view(
            &g,
            &record(&gt, &c1, Registration::R0, seed, &m),
            Registration::R0,
            &m,
        )
        .unwrap();
        let mut views = vec![first];
        fuse_tandem(&g, &mut views, &m, TandemOptions::default()).unwrap();
        for r in Registration::ALL {
            let rec = record(&gt, &c2, r, seed + 500, &m);
            let out = register_view(&g, &views, &rec, &m, TandemOptions::default()).unwrap();
            ok += usize::from(out.registration == r);
            total += 1;
        }
    }
    rep.line(
        8,
        "registration recovery",
        ok == total,
        format!("{ok}/{total} orientations recovered"),
    );
}

fn planner_equivalence(rep: &mut Report) {
    let m = MetricParams::default();
    let e = GridExtent::new(4, 3, 4).unwrap();
    let g = instantiate(e);
    let mut p = CorpusParams::new(e, 20, 21);
    p.logs = 10;
    p.elevation = (10.0, 40.0);
    let corpus = Corpus::generate(&p).unwrap();
    let (mut same, mut scenes, mut decided) = (0, 0, 0);
    for s in corpus.base_scenes() {
        let (init, cands) = corpus
            .active_setup(&s.id, "v0", ActionKind::Combined, &m)
            .unwrap();
        let mut views = vec![prepare_view(&g, &init, Registration::R0, &m).unwrap()];
        let (sol, _) = fuse_tandem(&g, &mut views, &m, TandemOptions::default()).unwrap();
        let probes: Vec<ActionProbe> = cands
            .iter()
            .map(|c| ActionProbe::new(&g, &views, &sol, c, &m, DEFAULT_THETA).unwrap())
            .collect();
        let plan = plan_action(&probes, DEFAULT_PRECISION).unwrap();
        let (best, deltas) = plan_action_independent(&probes, DEFAULT_PRECISION).unwrap();
        scenes += 1;
        same += usize::from(plan.chosen == best);
        decided += usize::from(
            deltas
                .iter()
                .any(|&d| d < loggrid::confidence::TOLERANCE_CAP),
        );
    }
    rep.line(
        9,
        "planner equivalence",
        same == scenes && scenes == 20,
        format!("{same}/{scenes} same choice, {decided} with a tolerance below the cap"),
    );
}

fn language(rep: &mut Report) {
    let m = MetricParams::default();
    let e = GridExtent::new(4, 3, 4).unwrap();
    let g = instantiate(e);
    // window in the front wall, door in the right side wall
    let gt = spans(
        e,
        &[
            "0,0,0,3", "0,1,0,1", "2,1,0,1", "0,2,0,3", "3,0,1,1", "3,0,3,1", "3,1,1,3",
        ],
    );
    let psi = compile(
        &parse("window left of and perpendicular to door").unwrap(),
        e,
    )
    .unwrap();
    let cam = ring_camera(e, &m, 225.0, 10.0, (320, 240)).unwrap();
    let raw = synthesize_view(&gt, &cam, &DetectorModel::exact(Clutter::Uniform, 1), &m).unwrap();
    let opts = TandemOptions::default();
    let (plain, _, _) = estimate_tandem(&g, raw.priors(), &cam, &m, opts).unwrap();
    let (with, _, trace) =
        estimate_tandem_with_language(&g, raw.priors(), &cam, &m, opts, &psi).unwrap();
    let all_sat = trace
        .steps
        .iter()
        .all(|s| psi.is_satisfied(&s.solution.structure));
    let (ep, ew) = (
        error_count(&gt, &plain.structure).unwrap(),
        error_count(&gt, &with.structure).unwrap(),
    );
    rep.line(
        10,
        "language integration",
        psi.is_satisfied(&gt) && ep > 0 && ew == 0 && all_sat && with.structure == gt,
        format!("errors without description {ep}, with description {ew}, description holds on every step {all_sat}"),
    );
}

fn dense_oracle(r: &Ray, c: &Cylinder) -> bool {
    let steps = 1000;
    (1..=steps).any(|s| c.contains(&r.at(r.length * s as f64 / steps as f64), 0.0))
}

fn surface_distance(c: &Cylinder, q: &Vec3) -> f64 {
    let axis = c.b - c.a;
    let len = axis.norm();
    let w = axis / len;
    let rel = q - c.a;
    let s = rel.dot(&w);
    let radial = (rel - w * s).norm();
    let dr = radial - c.radius;
    let ds = (-s).max(s - len);
    if dr <= 0.0 && ds <= 0.0 {
        -(-dr).min(-ds)
    } else {
        Vec3::new(dr.max(0.0), ds.max(0.0), 0.0).norm()
    }
}

fn near_surface(r: &Ray, c: &Cylinder) -> bool {
    let steps = 2000;
    (0..=steps).any(|s| surface_distance(c, &r.at(r.length * s as f64 / steps as f64)).abs() < BAND)
}

fn geometry_oracles(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut v = |s: f64| {
        Vec3::new(
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
        )
    };
    let (mut agree, mut checked) = (0, 0);
    while checked < 10_000 {
        let (a, b) = (v(2.0), v(2.0));
        let radius = 0.2 + (v(1.0).x.abs() * 0.8).min(0.79);
        let c = Cylinder::new(a, b, radius).unwrap();
        let r = Ray::segment(v(4.0), v(4.0)).unwrap();
        if c.contains(&r.origin, BAND) || near_surface(&r, &c) {
            continue;
        }
        checked += 1;
        agree += usize::from(ray_hits_cylinder(&r, &c) == dense_oracle(&r, &c));
    }

    let m = MetricParams::default();
    let e = GridExtent::new(4, 3, 4).unwrap();
    let mut same = 0;
    for seed in 0..50u64 {
        let s = random_structure(e, 7000 + seed, 10);
        let cam = ring_camera(
            e,
            &m,
            seed as f64 * 29.0,
            15.0 + (seed % 5) as f64 * 10.0,
            (320, 240),
        )
        .unwrap();
        let a = update_visibility(&s, &cam, &m, DEFAULT_THETA).unwrap();
        let b = update_visibility_raster(&s, &cam, &m, DEFAULT_THETA).unwrap();
        same += usize::from(a == b);
    }
    rep.line(
        11,
        "geometry oracles",
        agree == 10_000 && same == 50,
        format!("ray/cylinder {agree}/10000 agree with dense sampling, raster and ray cast agree on {same}/50 scenes"),
    );
}

fn metric_examples(rep: &mut Report) {
    let e = GridExtent::new(3, 1, 1).unwrap();
    let gt = spans(e, &["0,0,0,1", "1,0,0,1"]);
    let merged = spans(e, &["0,0,0,2"]);
    let added = spans(e, &["0,0,0,1", "1,0,0,1", "2,0,0,1"]);
    let (a, b) = (
        error_count(&gt, &merged).unwrap(),
        error_count(&gt, &added).unwrap(),
    );
    rep.line(
        12,
        "error metric examples",
        a == 1 && b == 1,
        format!("collinear merge {a}, single addition {b}"),
    );
}

fn main() {
    let mut rep = Report { failed: 0 };
    let checks: [fn(&mut Report); 12] = [
        solver_oracle,
        identifiability,
        occlusion_fill_in,
        tandem_convergence,
        visibility_necessity,
        confidence_coherence,
        active_vision,
        registration,
        planner_equivalence,
        language,
        geometry_oracles,
        metric_examples,
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    for (n, check) in checks.iter().enumerate() {
        if only.is_none_or(|o| o == n + 1) {
            check(&mut rep);
        }
    }
    if rep.failed > 0 {
        println!("{} criteria failed", rep.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
