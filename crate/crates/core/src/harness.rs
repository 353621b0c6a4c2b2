//! Scene sampling, the error metric, rendering, and synthetic corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evidence::{synthesize_view, DetectorModel};
use crate::fusion::{
    camera_to_canonical, camera_to_view, rotated_extent, ActionCandidate, ActionKind,
    FrameEvidence, Registration, ViewRecord,
};
use crate::geometry::{rasterize_depth, CameraModel, MetricParams, Vec3};
use crate::grammar::{instantiate, is_valid, GrammarInstance};
use crate::grid::{parse_field, GridExtent, GridPos, LogSpan, StructureEstimate};

const RETRY_BUDGET: usize = 1000;

/// Grows a valid structure one log at a time, rejecting placements that
/// break the grammar. May stop short of `target_logs`.
pub fn random_structure(extent: GridExtent, seed: u64, target_logs: usize) -> StructureEstimate {
    let g = instantiate(extent);
    random_structure_in(&g, &mut ChaCha8Rng::seed_from_u64(seed), target_logs)
}

pub(crate) fn random_structure_in(
    g: &GrammarInstance,
    rng: &mut impl Rng,
    target_logs: usize,
) -> StructureEstimate {
    let e = g.extent();
    let mut s = StructureEstimate::empty(e);
    let mut placed = 0;
    let mut tries = 0;
    while placed < target_logs && tries < RETRY_BUDGET {
        tries += 1;
        // lower layers first so upper logs have something to rest on
        let j = rng.gen_range(0..e.j_max).min(rng.gen_range(0..e.j_max));
        let start = GridPos::new(rng.gen_range(0..e.i_max), j, rng.gen_range(0..e.k_max));
        let span = LogSpan::new(start, rng.gen_range(1..=3));
        let Ok(cells) = span.positions(&e) else {
            continue;
        };
        if cells.iter().any(|&q| s.get(q).is_occupied()) {
            continue;
        }
        s.place(&span).expect("cells checked");
        if is_valid(&s, g) {
            placed += 1;
        } else {
            s.remove(&span).expect("just placed");
        }
    }
    s
}

/// Number of deletions, additions and substitutions separating `est`
/// from `gt`.
///
/// Spans present in both are ignored. The remaining spans are grouped per
/// medial axis into maximal runs of contiguous covered positions; a run
/// with `r` ground-truth and `s` estimated spans costs `min(r, s)` when both
/// are nonzero and `r + s` otherwise.
pub fn error_count(gt: &StructureEstimate, est: &StructureEstimate) -> Result<usize> {
    if gt.extent() != est.extent() {
        return Err(Error::ExtentMismatch(format!(
            "ground truth {} vs estimate {}",
            gt.extent(),
            est.extent()
        )));
    }
    let e = gt.extent();
    let a: BTreeSet<LogSpan> = gt.spans()?.into_iter().collect();
    let b: BTreeSet<LogSpan> = est.spans()?.into_iter().collect();
    // (layer, cross coordinate) -> [(first along, last along, from gt)]
    let mut lines: BTreeMap<(usize, usize), Vec<(usize, usize, bool)>> = BTreeMap::new();
    for (set, other, is_gt) in [(&a, &b, true), (&b, &a, false)] {
        for span in set.difference(other) {
            let axis = span.axis();
            let cross = axis.other().coord(span.start);
            let first = axis.coord(span.start);
            let last = axis.coord(span.last(&e)?);
            lines
                .entry((span.layer(), cross))
                .or_default()
                .push((first, last, is_gt));
        }
    }
    let mut total = 0;
    for mut spans in lines.into_values() {
        spans.sort();
        let mut run_end: Option<usize> = None;
        let (mut r, mut s) = (0, 0);
        let cost = |r: usize, s: usize| if r > 0 && s > 0 { r.min(s) } else { r + s };
        for (first, last, is_gt) in spans {
            if run_end.is_some_and(|end| first > end + 1) {
                total += cost(r, s);
                (r, s) = (0, 0);
                run_end = None;
            }
            run_end = Some(run_end.map_or(last, |end| end.max(last)));
            if is_gt {
                r += 1;
            } else {
                s += 1;
            }
        }
        total += cost(r, s);
    }
    Ok(total)
}

/// Number of scenes with fewer than `t` errors, for `t = 1..=max + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorHistogram {
    pub rows: Vec<(usize, usize)>,
}

impl ErrorHistogram {
    pub fn at(&self, t: usize) -> usize {
        match self.rows.iter().find(|&&(u, _)| u == t) {
            Some(&(_, n)) => n,
            None if t == 0 => 0,
            None => self.rows.last().map_or(0, |&(_, n)| n),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,scenes\n");
        for (t, n) in &self.rows {
            writeln!(out, "{t},{n}").unwrap();
        }
        out
    }
}

pub fn error_histogram(counts: &[usize]) -> ErrorHistogram {
    let max = counts.iter().copied().max().unwrap_or(0);
    ErrorHistogram {
        rows: (1..=max + 1)
            .map(|t| (t, counts.iter().filter(|&&c| c < t).count()))
            .collect(),
    }
}

/// An RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

pub const BACKGROUND: [u8; 3] = [235, 235, 240];
pub const WOOD: [u8; 3] = [176, 124, 72];
pub const CORRECT: [u8; 3] = [40, 170, 60];
pub const WRONG: [u8; 3] = [210, 40, 40];

impl Image {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

/// Span-wise coloring against `gt`: a span is correct when every position it
/// covers has the same occupancy in `gt`.
pub fn span_is_correct(span: &LogSpan, est: &StructureEstimate, gt: &StructureEstimate) -> bool {
    span.positions(&est.extent())
        .map(|ps| ps.iter().all(|&q| est.get(q) == gt.get(q)))
        .unwrap_or(false)
}

/// Depth-shaded rendering of `s`; with `gt`, spans are green when correct
/// and red otherwise.
pub fn render(
    s: &StructureEstimate,
    cam: &CameraModel,
    m: &MetricParams,
    gt: Option<&StructureEstimate>,
) -> Result<Image> {
    let spans = s.spans()?;
    let depth = rasterize_depth(&spans, &s.extent(), cam, m)?;
    let colors: Vec<[u8; 3]> = spans
        .iter()
        .map(|sp| match gt {
            None => WOOD,
            Some(g) if span_is_correct(sp, s, g) => CORRECT,
            Some(_) => WRONG,
        })
        .collect();
    let finite = || depth.depth.iter().copied().filter(|d| d.is_finite());
    let near = finite().fold(f64::INFINITY, f64::min);
    let far = finite().fold(f64::NEG_INFINITY, f64::max);
    let pixels = depth
        .owner
        .iter()
        .zip(&depth.depth)
        .map(|(owner, &d)| match owner {
            None => BACKGROUND,
            Some(n) => {
                let t = if far > near {
                    (d - near) / (far - near)
                } else {
                    0.0
                };
                let shade = 1.0 - 0.45 * t;
                colors[*n].map(|c| (c as f64 * shade).round() as u8)
            }
        })
        .collect();
    Ok(Image {
        width: depth.width,
        height: depth.height,
        pixels,
    })
}

/// Camera on a ring around the grid center looking at it.
pub fn ring_camera(
    extent: GridExtent,
    m: &MetricParams,
    azimuth_deg: f64,
    elevation_deg: f64,
    size: (usize, usize),
) -> Result<CameraModel> {
    let center = Vec3::new(
        (extent.i_max - 1) as f64 * m.pitch / 2.0,
        (extent.j_max - 1) as f64 * m.layer_height / 2.0,
        (extent.k_max - 1) as f64 * m.pitch / 2.0,
    );
    let reach = (extent.i_max.max(extent.k_max) as f64 * m.pitch).max(2.0);
    let dist = 3.0 * reach;
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = center + Vec3::new(az.cos() * el.cos(), el.sin(), az.sin() * el.cos()) * dist;
    let focal = size.0 as f64 * dist / (2.2 * reach);
    CameraModel::look_at(eye, center, Vec3::y(), focal, size)
}

/// One view in a corpus: camera and evidence in the view's own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusView {
    pub scene: String,
    pub id: String,
    pub camera: CameraModel,
    pub evidence: FrameEvidence,
    pub orientation: Registration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusScene {
    pub id: String,
    pub structure: StructureEstimate,
}

/// `scene` equals `parent` with `removed` taken away.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetRelation {
    pub scene: String,
    pub parent: String,
    pub removed: Vec<LogSpan>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub scenes: Vec<CorpusScene>,
    pub views: Vec<CorpusView>,
    pub subsets: Vec<SubsetRelation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusParams {
    pub extent: GridExtent,
    pub scenes: usize,
    pub views_per_scene: usize,
    pub logs: usize,
    /// Length of the disassembly chain below each base scene.
    pub subset_depth: usize,
    pub detector: DetectorModel,
    pub metric: MetricParams,
    pub image_size: (usize, usize),
    /// Range of camera elevations in degrees.
    pub elevation: (f64, f64),
    pub seed: u64,
}

impl CorpusParams {
    pub fn new(extent: GridExtent, scenes: usize, seed: u64) -> Self {
        CorpusParams {
            extent,
            scenes,
            views_per_scene: 5,
            logs: 8,
            subset_depth: 1,
            detector: DetectorModel::new(0.9, 0.05, crate::evidence::Clutter::Random, seed)
                .expect("valid defaults"),
            metric: MetricParams::default(),
            image_size: (320, 240),
            elevation: (15.0, 60.0),
            seed,
        }
    }
}

/// Orientations a generator may assign without changing the view extent.
fn orientations_for(e: GridExtent) -> Vec<Registration> {
    Registration::ALL
        .into_iter()
        .filter(|&r| rotated_extent(e, r).is_ok_and(|x| x == e))
        .collect()
}

/// A log from the top two layers whose removal keeps the structure valid.
fn removable_span(
    s: &StructureEstimate,
    g: &GrammarInstance,
    rng: &mut impl Rng,
) -> Option<LogSpan> {
    let mut spans = s.spans().ok()?;
    spans.sort_by_key(|sp| std::cmp::Reverse(sp.layer()));
    let top = spans.first()?.layer();
    let tops: Vec<LogSpan> = spans
        .iter()
        .copied()
        .filter(|sp| sp.layer() + 1 >= top)
        .collect();
    for _ in 0..8 {
        let pick = tops[rng.gen_range(0..tops.len())];
        let mut t = s.clone();
        t.remove(&pick).ok()?;
        if is_valid(&t, g) {
            return Some(pick);
        }
    }
    None
}

impl Corpus {
    pub fn generate(p: &CorpusParams) -> Result<Corpus> {
        p.metric.check()?;
        p.detector.check()?;
        let g = instantiate(p.extent);
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let orientations = orientations_for(p.extent);
        let mut corpus = Corpus::default();
        for n in 0..p.scenes {
            let base = format!("s{n:03}");
            let gt = random_structure_in(&g, &mut rng, p.logs);
            let base_az: f64 = rng.gen_range(0.0..360.0);
            let cams: Vec<(CameraModel, Registration)> = (0..p.views_per_scene)
                .map(|v| {
                    let az = base_az
                        + 360.0 * v as f64 / p.views_per_scene as f64
                        + rng.gen_range(-15.0..15.0);
                    let el = rng.gen_range(p.elevation.0..p.elevation.1);
                    let r = if v == 0 {
                        Registration::R0
                    } else {
                        orientations[rng.gen_range(0..orientations.len())]
                    };
                    Ok((ring_camera(p.extent, &p.metric, az, el, p.image_size)?, r))
                })
                .collect::<Result<_>>()?;
            let mut chain = vec![(base.clone(), gt.clone(), Vec::<LogSpan>::new())];
            for d in 0..p.subset_depth {
                let (_, prev, removed) = chain.last().unwrap().clone();
                let Some(span) = removable_span(&prev, &g, &mut rng) else {
                    break;
                };
                let mut next = prev.clone();
                next.remove(&span)?;
                let mut removed = removed;
                removed.push(span);
                chain.push((format!("{base}-d{}", d + 1), next, removed));
            }
            for (id, s, removed) in &chain {
                corpus.scenes.push(CorpusScene {
                    id: id.clone(),
                    structure: s.clone(),
                });
                if !removed.is_empty() {
                    corpus.subsets.push(SubsetRelation {
                        scene: id.clone(),
                        parent: base.clone(),
                        removed: removed.clone(),
                    });
                }
                for (v, (cam, r)) in cams.iter().enumerate() {
                    let mut dm = p.detector;
                    dm.seed = rng.gen();
                    let raw = synthesize_view(s, cam, &dm, &p.metric)?;
                    corpus.views.push(CorpusView {
                        scene: id.clone(),
                        id: format!("v{v}"),
                        camera: camera_to_view(cam, *r, p.extent, &p.metric),
                        evidence: FrameEvidence::from_canonical(raw.priors(), *r)?,
                        orientation: *r,
                    });
                }
            }
        }
        Ok(corpus)
    }

    pub fn scene(&self, id: &str) -> Option<&CorpusScene> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn views_of<'a>(&'a self, scene: &'a str) -> impl Iterator<Item = &'a CorpusView> + 'a {
        self.views.iter().filter(move |v| v.scene == scene)
    }

    /// Scenes that are not a subset of another.
    pub fn base_scenes(&self) -> impl Iterator<Item = &CorpusScene> + '_ {
        let children: BTreeSet<&str> = self.subsets.iter().map(|s| s.scene.as_str()).collect();
        self.scenes
            .iter()
            .filter(move |s| !children.contains(s.id.as_str()))
    }

    fn removed_for(&self, scene: &str) -> Vec<LogSpan> {
        self.subsets
            .iter()
            .find(|s| s.scene == scene)
            .map(|s| s.removed.clone())
            .unwrap_or_default()
    }

    pub fn record(&self, view: &CorpusView) -> ViewRecord {
        ViewRecord {
            id: format!("{}/{}", view.scene, view.id),
            camera: view.camera.clone(),
            evidence: view.evidence.clone(),
            removed: self.removed_for(&view.scene),
        }
    }

    /// Initial view and the candidate actions available for a base scene.
    /// Viewpoint actions are the other views of the scene; disassembly
    /// actions view each subset from the initial viewpoint; the combined
    /// regime also offers subsets from every other viewpoint.
    pub fn active_setup(
        &self,
        scene: &str,
        initial_view: &str,
        regime: ActionKind,
        m: &MetricParams,
    ) -> Result<(ViewRecord, Vec<ActionCandidate>)> {
        let extent = self
            .scene(scene)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scene `{scene}`")))?
            .structure
            .extent();
        let initial = self
            .views_of(scene)
            .find(|v| v.id == initial_view)
            .ok_or_else(|| {
                Error::InvalidParameter(format!("unknown view `{scene}/{initial_view}`"))
            })?;
        if initial.orientation != Registration::R0 {
            return Err(Error::InvalidParameter(
                "the initial view defines the canonical frame and must have orientation 0".into(),
            ));
        }
        let candidate = |v: &CorpusView, kind| {
            let record = self.record(v);
            ActionCandidate {
                id: record.id.clone(),
                kind,
                camera: camera_to_canonical(&v.camera, v.orientation, extent, m),
                removed: record.removed.clone(),
                realized: record,
            }
        };
        let mut out = Vec::new();
        if matches!(regime, ActionKind::NewViewpoint | ActionKind::Combined) {
            for v in self.views_of(scene).filter(|v| v.id != initial_view) {
                out.push(candidate(v, ActionKind::NewViewpoint));
            }
        }
        if matches!(regime, ActionKind::Disassembly | ActionKind::Combined) {
            for sub in self.subsets.iter().filter(|s| s.parent == scene) {
                for v in self.views_of(&sub.scene) {
                    let kind = if v.id == initial_view {
                        ActionKind::Disassembly
                    } else if regime == ActionKind::Combined {
                        ActionKind::Combined
                    } else {
                        continue;
                    };
                    out.push(candidate(v, kind));
                }
            }
        }
        Ok((self.record(initial), out))
    }

    /// Writes structures, cameras, evidence and a manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["structures", "cameras", "evidence"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut manifest = String::new();
        for s in &self.scenes {
            let path = format!("structures/{}.txt", s.id);
            write_atomic(&dir.join(&path), s.structure.to_text().as_bytes())?;
            writeln!(manifest, "scene {} structure {path}", s.id).unwrap();
        }
        for (n, v) in self.views.iter().enumerate() {
            let cam = format!("cameras/{}_{}.txt", v.scene, v.id);
            let ev = format!("evidence/{}_{}.txt", v.scene, v.id);
            write_atomic(&dir.join(&cam), v.camera.to_text().as_bytes())?;
            write_atomic(&dir.join(&ev), v.evidence.to_text(n).as_bytes())?;
            writeln!(
                manifest,
                "view {} {} camera {cam} evidence {ev} orientation {}",
                v.scene, v.id, v.orientation
            )
            .unwrap();
        }
        for s in &self.subsets {
            let spans: Vec<String> = s.removed.iter().map(|sp| sp.to_string()).collect();
            writeln!(
                manifest,
                "subset {} {} removed {}",
                s.scene,
                s.parent,
                spans.join(" ")
            )
            .unwrap();
        }
        write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Corpus> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let load = |p: &str| -> Result<String> { Ok(fs::read_to_string(dir.join(p))?) };
        let mut corpus = Corpus::default();
        for (n, raw) in manifest.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let f: Vec<&str> = body.split_whitespace().collect();
            match f.as_slice() {
                ["scene", id, "structure", path] => corpus.scenes.push(CorpusScene {
                    id: id.to_string(),
                    structure: StructureEstimate::from_text(&load(path)?)?,
                }),
                ["view", scene, id, "camera", cam, "evidence", ev, rest @ ..] => {
                    let orientation = match rest {
                        [] => Registration::R0,
                        ["orientation", d] => Registration::from_degrees(parse_field(d, line)?)
                            .map_err(|e| Error::format(line, e.to_string()))?,
                        _ => return Err(Error::format(line, "expected `orientation <degrees>`")),
                    };
                    corpus.views.push(CorpusView {
                        scene: scene.to_string(),
                        id: id.to_string(),
                        camera: CameraModel::from_text(&load(cam)?)?,
                        evidence: FrameEvidence::from_text(&load(ev)?)?.1,
                        orientation,
                    });
                }
                ["subset", scene, parent, "removed", spans @ ..] if !spans.is_empty() => {
                    corpus.subsets.push(SubsetRelation {
                        scene: scene.to_string(),
                        parent: parent.to_string(),
                        removed: spans
                            .iter()
                            .map(|s| {
                                s.parse()
                                    .map_err(|_| Error::format(line, format!("bad span `{s}`")))
                            })
                            .collect::<Result<_>>()?,
                    })
                }
                _ => {
                    return Err(Error::format(
                        line,
                        format!("unrecognized manifest line `{body}`"),
                    ))
                }
            }
        }
        for v in &corpus.views {
            if corpus.scene(&v.scene).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "view of unknown scene `{}`",
                    v.scene
                )));
            }
        }
        Ok(corpus)
    }
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
