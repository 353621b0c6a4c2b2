//! A tiny description language for doors and windows, compiled into unary
//! occupancy restrictions joined with the grammar during estimation.
//!
//! Vocabulary: `window`, `door`, `left of`, `right of`, `perpendicular to`,
//! `coplanar to`, and `and`. A sentence is a chain of noun phrases joined by
//! relation phrases; coordinated relation phrases share their object:
//!
//! ```text
//! sentence := noun (relations noun)*
//! relations := relation ("and" relation)*
//! ```

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, MetricParams};
use crate::grammar::GrammarInstance;
use crate::grid::{GridExtent, GridPos, LayerAxis, Occupancy, StructureEstimate};
use crate::solver::{Estimator, PriorSet, Solution, ViewTerm};
use crate::visibility::{
    initial_visibility, run_tandem, update_visibility, FixpointTrace, TandemOptions, VisibilityMap,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LanguageError {
    #[error("unknown word `{word}` at column {position}")]
    Lexical { word: String, position: usize },
    #[error("expected {expected} at column {position}")]
    Syntax { expected: String, position: usize },
    #[error("description is unsatisfiable in extent {0}")]
    Unsatisfiable(GridExtent),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Noun {
    Window,
    Door,
}

impl Noun {
    pub fn word(self) -> &'static str {
        match self {
            Noun::Window => "window",
            Noun::Door => "door",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    PerpendicularTo,
    CoplanarTo,
}

impl SpatialRelation {
    pub fn phrase(self) -> &'static str {
        match self {
            SpatialRelation::LeftOf => "left of",
            SpatialRelation::RightOf => "right of",
            SpatialRelation::PerpendicularTo => "perpendicular to",
            SpatialRelation::CoplanarTo => "coplanar to",
        }
    }

    /// Whether `a` stands in this relation to `b`. Left and right compare
    /// coordinates along `b`'s in-plane axis, increasing to the right.
    pub fn holds(self, a: &Region, b: &Region) -> bool {
        let span_along = |r: &Region, axis: LayerAxis| {
            if r.axis == axis {
                (r.column, r.column + 2)
            } else {
                (r.plane, r.plane)
            }
        };
        let (lo, hi) = span_along(a, b.axis);
        match self {
            SpatialRelation::LeftOf => hi < b.column,
            SpatialRelation::RightOf => lo > b.column + 2,
            SpatialRelation::PerpendicularTo => a.axis != b.axis,
            SpatialRelation::CoplanarTo => a.axis == b.axis && a.plane == b.plane,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entity {
    pub noun: Noun,
    pub id: usize,
}

/// Relation phrases linking consecutive entities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub relations: Vec<SpatialRelation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub entities: Vec<Entity>,
    /// `links[n]` relates `entities[n]` (subject) to `entities[n + 1]`.
    pub links: Vec<Link>,
}

impl Sentence {
    /// Flattened `(relation, subject id, object id)` triples.
    pub fn relations(&self) -> Vec<(SpatialRelation, usize, usize)> {
        self.links
            .iter()
            .enumerate()
            .flat_map(|(n, l)| l.relations.iter().map(move |&r| (r, n, n + 1)))
            .collect()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, e) in self.entities.iter().enumerate() {
            if n > 0 {
                let phrases: Vec<&str> = self.links[n - 1]
                    .relations
                    .iter()
                    .map(|r| r.phrase())
                    .collect();
                write!(f, " {} ", phrases.join(" and "))?;
            }
            f.write_str(e.noun.word())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Word {
    Noun(Noun),
    Left,
    Right,
    Perpendicular,
    Coplanar,
    Of,
    To,
    And,
}

fn lex(text: &str) -> std::result::Result<Vec<(Word, usize)>, LanguageError> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
        let tail = &rest[start..];
        let end = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let raw = &tail[..end];
        let position = offset + start + 1;
        let word = match raw.to_ascii_lowercase().as_str() {
            "window" => Word::Noun(Noun::Window),
            "door" => Word::Noun(Noun::Door),
            "left" => Word::Left,
            "right" => Word::Right,
            "perpendicular" => Word::Perpendicular,
            "coplanar" => Word::Coplanar,
            "of" => Word::Of,
            "to" => Word::To,
            "and" => Word::And,
            _ => {
                return Err(LanguageError::Lexical {
                    word: raw.to_string(),
                    position,
                })
            }
        };
        out.push((word, position));
        offset += start + end;
        rest = &tail[end..];
    }
    Ok(out)
}

struct Parser {
    words: Vec<(Word, usize)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<Word> {
        self.words.get(self.at).map(|w| w.0)
    }

    fn position(&self) -> usize {
        self.words.get(self.at).map_or(self.end, |w| w.1)
    }

    fn fail<T>(&self, expected: &str) -> std::result::Result<T, LanguageError> {
        Err(LanguageError::Syntax {
            expected: expected.to_string(),
            position: self.position(),
        })
    }

    fn noun(&mut self) -> std::result::Result<Noun, LanguageError> {
        match self.peek() {
            Some(Word::Noun(n)) => {
                self.at += 1;
                Ok(n)
            }
            _ => self.fail("`window` or `door`"),
        }
    }

    fn expect(&mut self, w: Word, name: &str) -> std::result::Result<(), LanguageError> {
        if self.peek() == Some(w) {
            self.at += 1;
            Ok(())
        } else {
            self.fail(name)
        }
    }

    fn relation(&mut self) -> std::result::Result<SpatialRelation, LanguageError> {
        let (rel, tail, name) = match self.peek() {
            Some(Word::Left) => (SpatialRelation::LeftOf, Word::Of, "`of`"),
            Some(Word::Right) => (SpatialRelation::RightOf, Word::Of, "`of`"),
            Some(Word::Perpendicular) => (SpatialRelation::PerpendicularTo, Word::To, "`to`"),
            Some(Word::Coplanar) => (SpatialRelation::CoplanarTo, Word::To, "`to`"),
            _ => return self.fail("a relation"),
        };
        self.at += 1;
        self.expect(tail, name)?;
        Ok(rel)
    }
}

pub fn parse(text: &str) -> std::result::Result<Sentence, LanguageError> {
    let mut p = Parser {
        words: lex(text)?,
        at: 0,
        end: text.len() + 1,
    };
    let mut entities = vec![Entity {
        noun: p.noun()?,
        id: 0,
    }];
    let mut links = Vec::new();
    while p.peek().is_some() {
        let mut relations = vec![p.relation()?];
        while p.peek() == Some(Word::And) {
            p.at += 1;
            relations.push(p.relation()?);
        }
        links.push(Link { relations });
        let id = entities.len();
        entities.push(Entity {
            noun: p.noun()?,
            id,
        });
    }
    Ok(Sentence { entities, links })
}

/// A door or window frame: three columns of a vertical grid plane, posts on
/// the outer two columns and the opening in the middle one. Rows `bottom` and
/// `top` hold the threshold (or sill) and the mantel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    /// Direction the plane extends in, equal to the direction of the logs
    /// lying in it.
    pub axis: LayerAxis,
    /// Coordinate along the other horizontal axis.
    pub plane: usize,
    /// First of the three columns along `axis`.
    pub column: usize,
    pub bottom: usize,
    pub top: usize,
}

impl Region {
    pub fn pos(&self, column: usize, row: usize) -> GridPos {
        match self.axis {
            LayerAxis::Axis0 => GridPos::new(column, row, self.plane),
            LayerAxis::Axis1 => GridPos::new(self.plane, row, column),
        }
    }

    /// Allowed-code masks this frame imposes, keyed by position.
    pub fn masks(&self, noun: Noun) -> Vec<(GridPos, u8)> {
        let mask = |f: fn(Occupancy) -> bool| {
            Occupancy::ALL
                .iter()
                .filter(|&&o| f(o))
                .fold(0u8, |m, o| m | 1 << o.code())
        };
        let empty = 1u8;
        let occupied = mask(Occupancy::is_occupied);
        let ends_here = mask(|o| o.is_occupied() && o.is_last());
        let starts_here = mask(|o| o.is_occupied() && o.is_first());
        let spanning = |n: u8| 1u8 << Occupancy::Notch { len: 3, index: n }.code();
        let c = self.column;
        let mut out = Vec::new();
        let span_row = |out: &mut Vec<(GridPos, u8)>, row: usize| {
            for n in 0..3 {
                out.push((self.pos(c + n, row), spanning(n as u8)));
            }
        };
        span_row(&mut out, self.top);
        let first_open = match noun {
            Noun::Door => self.bottom,
            Noun::Window => {
                span_row(&mut out, self.bottom);
                self.bottom + 1
            }
        };
        for row in first_open..self.top {
            out.push((self.pos(c + 1, row), empty));
            if LayerAxis::of_layer(row) == self.axis {
                out.push((self.pos(c, row), ends_here));
                out.push((self.pos(c + 2, row), starts_here));
            } else {
                out.push((self.pos(c, row), occupied));
                out.push((self.pos(c + 2, row), occupied));
            }
        }
        out
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = match self.axis {
            LayerAxis::Axis0 => 0,
            LayerAxis::Axis1 => 1,
        };
        write!(
            f,
            "axis={axis} plane={} columns={}..{} rows={}..{}",
            self.plane,
            self.column,
            self.column + 2,
            self.bottom,
            self.top
        )
    }
}

/// Limits on frame size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameLimits {
    /// Minimum number of open rows between sill (or floor) and mantel.
    pub min_height: usize,
}

impl Default for FrameLimits {
    fn default() -> Self {
        FrameLimits { min_height: 1 }
    }
}

/// Every frame a noun could occupy in `extent`.
pub fn candidate_regions(noun: Noun, extent: GridExtent, limits: FrameLimits) -> Vec<Region> {
    let mut out = Vec::new();
    for axis in [LayerAxis::Axis0, LayerAxis::Axis1] {
        let (len, planes) = match axis {
            LayerAxis::Axis0 => (extent.i_max, extent.k_max),
            LayerAxis::Axis1 => (extent.k_max, extent.i_max),
        };
        if len < 3 {
            continue;
        }
        let in_plane: Vec<usize> = (0..extent.j_max)
            .filter(|&j| LayerAxis::of_layer(j) == axis)
            .collect();
        let rows: Vec<(usize, usize)> = match noun {
            Noun::Door => in_plane
                .iter()
                .filter(|&&top| top >= limits.min_height.max(1))
                .map(|&top| (0, top))
                .collect(),
            Noun::Window => in_plane
                .iter()
                .flat_map(|&b| in_plane.iter().map(move |&t| (b, t)))
                .filter(|&(b, t)| t > b + limits.min_height.max(1))
                .collect(),
        };
        for plane in 0..planes {
            for column in 0..=len - 3 {
                for &(bottom, top) in &rows {
                    out.push(Region {
                        axis,
                        plane,
                        column,
                        bottom,
                        top,
                    });
                }
            }
        }
    }
    out
}

/// One joint choice of frames for all entities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub regions: Vec<Region>,
    pub masks: Vec<u8>,
}

/// Compiled description: the witnessing frame choices, any one of which
/// must be realized by the structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NLConstraintSet {
    pub extent: GridExtent,
    pub sentence: Option<Sentence>,
    pub placements: Vec<Placement>,
}

const FULL_MASK: u8 = 0x7f;

impl NLConstraintSet {
    /// No description: restricts nothing.
    pub fn none(extent: GridExtent) -> Self {
        NLConstraintSet {
            extent,
            sentence: None,
            placements: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_none()
    }

    /// Placements `s` realizes.
    pub fn witnesses<'a>(
        &'a self,
        s: &'a StructureEstimate,
    ) -> impl Iterator<Item = &'a Placement> + 'a {
        self.placements.iter().filter(move |p| {
            s.cells()
                .iter()
                .zip(&p.masks)
                .all(|(v, m)| m & (1 << v.code()) != 0)
        })
    }

    /// Direct evaluation of the description on `s`.
    pub fn is_satisfied(&self, s: &StructureEstimate) -> bool {
        if s.extent() != self.extent {
            return false;
        }
        if self.is_empty() {
            return true;
        }
        self.witnesses(s).next().is_some()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("extent {}\n", self.extent);
        match &self.sentence {
            None => out.push_str("sentence none\n"),
            Some(s) => {
                writeln!(out, "sentence {s}").unwrap();
                for e in &s.entities {
                    writeln!(out, "entity {} {}", e.id, e.noun.word()).unwrap();
                }
                for (r, a, b) in s.relations() {
                    writeln!(out, "relation {} {a} {b}", r.phrase().replace(' ', "_")).unwrap();
                }
            }
        }
        writeln!(out, "placements {}", self.placements.len()).unwrap();
        for p in &self.placements {
            let regions: Vec<String> = p.regions.iter().map(|r| format!("[{r}]")).collect();
            writeln!(out, "placement {}", regions.join(" ")).unwrap();
        }
        out
    }
}

pub fn compile(ast: &Sentence, extent: GridExtent) -> Result<NLConstraintSet> {
    compile_with(ast, extent, FrameLimits::default())
}

pub fn compile_with(
    ast: &Sentence,
    extent: GridExtent,
    limits: FrameLimits,
) -> Result<NLConstraintSet> {
    let candidates: Vec<Vec<(Region, Vec<(GridPos, u8)>)>> = ast
        .entities
        .iter()
        .map(|e| {
            candidate_regions(e.noun, extent, limits)
                .into_iter()
                .map(|r| {
                    let m = r.masks(e.noun);
                    (r, m)
                })
                .collect()
        })
        .collect();
    let relations = ast.relations();
    let mut placements = Vec::new();
    let mut seen = BTreeSet::new();
    let mut chosen = Vec::new();
    let mut masks = vec![FULL_MASK; extent.len()];
    enumerate(
        ast,
        &candidates,
        &relations,
        extent,
        &mut chosen,
        &mut masks,
        &mut seen,
        &mut placements,
    );
    if placements.is_empty() {
        return Err(LanguageError::Unsatisfiable(extent).into());
    }
    Ok(NLConstraintSet {
        extent,
        sentence: Some(ast.clone()),
        placements,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    ast: &Sentence,
    candidates: &[Vec<(Region, Vec<(GridPos, u8)>)>],
    relations: &[(SpatialRelation, usize, usize)],
    extent: GridExtent,
    chosen: &mut Vec<Region>,
    masks: &mut Vec<u8>,
    seen: &mut BTreeSet<Vec<u8>>,
    out: &mut Vec<Placement>,
) {
    let n = chosen.len();
    if n == candidates.len() {
        if seen.insert(masks.clone()) {
            out.push(Placement {
                regions: chosen.clone(),
                masks: masks.clone(),
            });
        }
        return;
    }
    'next: for (region, restrict) in &candidates[n] {
        for (m, other) in chosen.iter().enumerate() {
            if ast.entities[m].noun == ast.entities[n].noun && other == region {
                continue 'next;
            }
        }
        for &(rel, a, b) in relations {
            let ok = match (a == n, b == n) {
                (true, _) if b < n => rel.holds(region, &chosen[b]),
                (_, true) if a < n => rel.holds(&chosen[a], region),
                _ => true,
            };
            if !ok {
                continue 'next;
            }
        }
        let saved = masks.clone();
        for &(q, m) in restrict {
            let slot = &mut masks[extent.index(q)];
            *slot &= m;
            if *slot == 0 {
                *masks = saved;
                continue 'next;
            }
        }
        chosen.push(*region);
        enumerate(ast, candidates, relations, extent, chosen, masks, seen, out);
        chosen.pop();
        *masks = saved;
    }
}

/// Maximum-likelihood estimate constrained to satisfy the description.
pub fn estimate_with_language(
    g: &GrammarInstance,
    views: &[ViewTerm<'_>],
    psi: &NLConstraintSet,
) -> Result<Solution> {
    if psi.extent != g.extent() {
        return Err(Error::ExtentMismatch(format!(
            "description compiled for {}, grammar is {}",
            psi.extent,
            g.extent()
        )));
    }
    let mut est = Estimator::new(g).views(views.iter().copied());
    if !psi.is_empty() {
        for p in &psi.placements {
            est = est.placement(p.masks.clone());
        }
    }
    est.solve()
}

/// Alternating visibility and structure estimation for one view, with the
/// description joined at every estimation step.
pub fn estimate_tandem_with_language(
    g: &GrammarInstance,
    raw: &PriorSet,
    cam: &CameraModel,
    m: &MetricParams,
    opts: TandemOptions,
    psi: &NLConstraintSet,
) -> Result<(Solution, VisibilityMap, FixpointTrace)> {
    let initial = initial_visibility(g.extent(), cam, m)?;
    let trace = run_tandem(
        vec![initial],
        opts.cap,
        |vis| {
            let priors = vis[0].mask(raw)?;
            estimate_with_language(
                g,
                &[ViewTerm {
                    grammar: g,
                    priors: &priors,
                }],
                psi,
            )
        },
        |s| Ok(vec![update_visibility(s, cam, m, opts.theta)?]),
    )?;
    let step = &trace.steps[trace.chosen];
    Ok((step.solution.clone(), step.visibility[0].clone(), trace))
}
