//! The symbolic grid of notch centers.
//!
//! Positions are `(i, j, k)` with `j` the vertical layer. Even layers hold logs
//! running along axis-0 (`i` varies), odd layers hold logs running along
//! axis-1 (`k` varies). Every other module addresses occupancy and features
//! through these types.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default cap on the number of grid positions in an extent.
pub const DEFAULT_POSITION_LIMIT: usize = 512;

/// Maximal extent of the three symbolic grid axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridExtent {
    pub i_max: usize,
    pub j_max: usize,
    pub k_max: usize,
}

impl GridExtent {
    pub fn new(i_max: usize, j_max: usize, k_max: usize) -> Result<Self> {
        Self::with_limit(i_max, j_max, k_max, DEFAULT_POSITION_LIMIT)
    }

    pub fn with_limit(i_max: usize, j_max: usize, k_max: usize, limit: usize) -> Result<Self> {
        let fail = |reason: String| Error::InvalidExtent {
            i: i_max,
            j: j_max,
            k: k_max,
            reason,
        };
        if i_max == 0 || j_max == 0 || k_max == 0 {
            return Err(fail("every axis needs at least one position".into()));
        }
        let total = i_max * j_max * k_max;
        if total > limit {
            return Err(fail(format!(
                "{total} positions exceed the limit of {limit}"
            )));
        }
        Ok(GridExtent {
            i_max,
            j_max,
            k_max,
        })
    }

    pub fn len(&self) -> usize {
        self.i_max * self.j_max * self.k_max
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, q: GridPos) -> bool {
        q.i < self.i_max && q.j < self.j_max && q.k < self.k_max
    }

    /// Linear index: layer-major, then `k`, then `i` (bottom layer first, scanline order).
    pub fn index(&self, q: GridPos) -> usize {
        debug_assert!(self.contains(q), "{q} outside {self}");
        (q.j * self.k_max + q.k) * self.i_max + q.i
    }

    pub fn pos(&self, index: usize) -> GridPos {
        let i = index % self.i_max;
        let rest = index / self.i_max;
        GridPos::new(i, rest / self.k_max, rest % self.k_max)
    }

    /// All positions in index order.
    pub fn positions(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.len()).map(move |n| self.pos(n))
    }

    /// Extent with axis-0 and axis-1 exchanged.
    pub fn transposed(&self) -> GridExtent {
        GridExtent {
            i_max: self.k_max,
            j_max: self.j_max,
            k_max: self.i_max,
        }
    }

    pub fn check(&self, q: GridPos) -> Result<()> {
        if self.contains(q) {
            Ok(())
        } else {
            Err(Error::OutOfExtent {
                pos: q,
                extent: *self,
            })
        }
    }

    /// Adjacent position below `q`.
    pub fn below(&self, q: GridPos) -> Option<GridPos> {
        (q.j > 0).then(|| GridPos::new(q.i, q.j - 1, q.k))
    }

    /// Adjacent position further from the origin along the layer's grid lines.
    pub fn next(&self, q: GridPos) -> Option<GridPos> {
        match LayerAxis::of_layer(q.j) {
            LayerAxis::Axis0 => (q.i + 1 < self.i_max).then(|| GridPos::new(q.i + 1, q.j, q.k)),
            LayerAxis::Axis1 => (q.k + 1 < self.k_max).then(|| GridPos::new(q.i, q.j, q.k + 1)),
        }
    }

    /// Inverse of [`GridExtent::next`].
    pub fn prev(&self, q: GridPos) -> Option<GridPos> {
        match LayerAxis::of_layer(q.j) {
            LayerAxis::Axis0 => (q.i > 0).then(|| GridPos::new(q.i - 1, q.j, q.k)),
            LayerAxis::Axis1 => (q.k > 0).then(|| GridPos::new(q.i, q.j, q.k - 1)),
        }
    }

    /// Position `steps` further along the layer's grid line, if in extent.
    pub fn advance(&self, q: GridPos, steps: usize) -> Option<GridPos> {
        (0..steps).try_fold(q, |p, _| self.next(p))
    }
}

impl fmt::Display for GridExtent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.i_max, self.j_max, self.k_max)
    }
}

/// A symbolic grid position; `j` is the vertical layer index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPos {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl GridPos {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        GridPos { i, j, k }
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.i, self.j, self.k)
    }
}

/// Horizontal direction of the logs on a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerAxis {
    Axis0,
    Axis1,
}

impl LayerAxis {
    pub fn of_layer(j: usize) -> Self {
        if j.is_multiple_of(2) {
            LayerAxis::Axis0
        } else {
            LayerAxis::Axis1
        }
    }

    pub fn other(self) -> Self {
        match self {
            LayerAxis::Axis0 => LayerAxis::Axis1,
            LayerAxis::Axis1 => LayerAxis::Axis0,
        }
    }

    /// Coordinate of `q` along this axis.
    pub fn coord(self, q: GridPos) -> usize {
        match self {
            LayerAxis::Axis0 => q.i,
            LayerAxis::Axis1 => q.k,
        }
    }
}

/// Latent state of a grid position: empty, or notch `index` of a `len`-notch log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Occupancy {
    #[default]
    Empty,
    Notch {
        len: u8,
        index: u8,
    },
}

impl Occupancy {
    /// The seven values in canonical order.
    pub const ALL: [Occupancy; 7] = [
        Occupancy::Empty,
        Occupancy::Notch { len: 1, index: 0 },
        Occupancy::Notch { len: 2, index: 0 },
        Occupancy::Notch { len: 2, index: 1 },
        Occupancy::Notch { len: 3, index: 0 },
        Occupancy::Notch { len: 3, index: 1 },
        Occupancy::Notch { len: 3, index: 2 },
    ];

    pub fn notch(len: u8, index: u8) -> Result<Self> {
        if (1..=3).contains(&len) && index < len {
            Ok(Occupancy::Notch { len, index })
        } else {
            Err(Error::InvalidParameter(format!(
                "notch ({len},{index}) is not one of the seven occupancies"
            )))
        }
    }

    /// Position of this value in [`Occupancy::ALL`].
    pub fn code(self) -> u8 {
        match self {
            Occupancy::Empty => 0,
            Occupancy::Notch { len, index } => match len {
                1 => 1,
                2 => 2 + index,
                _ => 4 + index,
            },
        }
    }

    pub fn from_code(code: u8) -> Self {
        Occupancy::ALL[code as usize]
    }

    pub fn is_occupied(self) -> bool {
        self != Occupancy::Empty
    }

    /// First notch of its log (the negative-side extreme).
    pub fn is_first(self) -> bool {
        matches!(self, Occupancy::Notch { index: 0, .. })
    }

    /// Last notch of its log (the positive-side extreme).
    pub fn is_last(self) -> bool {
        matches!(self, Occupancy::Notch { len, index } if index + 1 == len)
    }

    /// The log continues to `next(q)`.
    pub fn continues(self) -> bool {
        matches!(self, Occupancy::Notch { len, index } if index + 1 < len)
    }

    pub fn len(self) -> u8 {
        match self {
            Occupancy::Empty => 0,
            Occupancy::Notch { len, .. } => len,
        }
    }
}

impl fmt::Display for Occupancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Occupancy::Empty => f.write_str("∅"),
            Occupancy::Notch { len, index } => write!(f, "({len},{index})"),
        }
    }
}

/// The seven occupancy values in canonical order.
pub fn occupancy_domain() -> Vec<Occupancy> {
    Occupancy::ALL.to_vec()
}

/// Total assignment of occupancy to every position of an extent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StructureEstimate {
    extent: GridExtent,
    cells: Vec<Occupancy>,
}

impl StructureEstimate {
    pub fn empty(extent: GridExtent) -> Self {
        StructureEstimate {
            extent,
            cells: vec![Occupancy::Empty; extent.len()],
        }
    }

    pub fn from_cells(extent: GridExtent, cells: Vec<Occupancy>) -> Result<Self> {
        if cells.len() != extent.len() {
            return Err(Error::ExtentMismatch(format!(
                "{} cells for extent {extent} of {} positions",
                cells.len(),
                extent.len()
            )));
        }
        Ok(StructureEstimate { extent, cells })
    }

    /// Rebuilds a structure from log spans.
    pub fn from_spans(extent: GridExtent, spans: &[LogSpan]) -> Result<Self> {
        let mut s = StructureEstimate::empty(extent);
        for span in spans {
            s.place(span)?;
        }
        Ok(s)
    }

    pub fn extent(&self) -> GridExtent {
        self.extent
    }

    pub fn get(&self, q: GridPos) -> Occupancy {
        self.cells[self.extent.index(q)]
    }

    pub fn set(&mut self, q: GridPos, value: Occupancy) {
        let n = self.extent.index(q);
        self.cells[n] = value;
    }

    pub fn cells(&self) -> &[Occupancy] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_occupied()).count()
    }

    /// Writes a span's notches; fails if the span leaves the extent or overlaps a log.
    pub fn place(&mut self, span: &LogSpan) -> Result<()> {
        let cells = span.positions(&self.extent)?;
        if let Some(&q) = cells.iter().find(|&&q| self.get(q).is_occupied()) {
            return Err(Error::InvalidStructure(format!(
                "span overlaps a log at {q}"
            )));
        }
        for (n, q) in cells.into_iter().enumerate() {
            self.set(
                q,
                Occupancy::Notch {
                    len: span.len,
                    index: n as u8,
                },
            );
        }
        Ok(())
    }

    /// Clears every position of a span.
    pub fn remove(&mut self, span: &LogSpan) -> Result<()> {
        for q in span.positions(&self.extent)? {
            self.set(q, Occupancy::Empty);
        }
        Ok(())
    }

    /// Decomposes the structure into its logs, ordered by layer then start position.
    pub fn spans(&self) -> Result<Vec<LogSpan>> {
        let e = self.extent;
        let mut spans = Vec::new();
        let mut covered = vec![false; e.len()];
        for j in 0..e.j_max {
            let mut layer = Vec::new();
            for q in e.positions().filter(|q| q.j == j) {
                let n = e.index(q);
                if covered[n] {
                    continue;
                }
                let Occupancy::Notch { len, index } = self.cells[n] else {
                    continue;
                };
                if index != 0 {
                    return Err(Error::BrokenChain(q));
                }
                let mut p = q;
                covered[n] = true;
                for step in 1..len {
                    p = e.next(p).ok_or(Error::BrokenChain(p))?;
                    if self.get(p) != (Occupancy::Notch { len, index: step }) {
                        return Err(Error::BrokenChain(p));
                    }
                    covered[e.index(p)] = true;
                }
                layer.push(LogSpan::new(q, len));
            }
            layer.sort_by_key(|s| (s.start.j, s.start.i, s.start.k));
            spans.extend(layer);
        }
        Ok(spans)
    }

    /// Canonical text form (see [`StructureEstimate::from_text`]).
    pub fn to_text(&self) -> String {
        let e = self.extent;
        let mut out = format!("extent {} {} {}\n", e.i_max, e.j_max, e.k_max);
        for q in e.positions() {
            if let Occupancy::Notch { len, index } = self.get(q) {
                out.push_str(&format!("{} {} {} {} {}\n", q.i, q.j, q.k, len, index));
            }
        }
        out
    }

    /// Parses `extent i j k` followed by `i j k m n` records; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut structure: Option<StructureEstimate> = None;
        for (num, raw) in text.lines().enumerate() {
            let line = num + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            match (&mut structure, fields.as_slice()) {
                (None, ["extent", a, b, c]) => {
                    let extent = GridExtent::new(
                        parse_field(a, line)?,
                        parse_field(b, line)?,
                        parse_field(c, line)?,
                    )
                    .map_err(|err| Error::format(line, err.to_string()))?;
                    structure = Some(StructureEstimate::empty(extent));
                }
                (None, _) => return Err(Error::format(line, "expected `extent i j k` header")),
                (Some(s), [i, j, k, m, n]) => {
                    let q = GridPos::new(
                        parse_field(i, line)?,
                        parse_field(j, line)?,
                        parse_field(k, line)?,
                    );
                    if !s.extent.contains(q) {
                        return Err(Error::format(
                            line,
                            format!("{q} outside extent {}", s.extent),
                        ));
                    }
                    let value = Occupancy::notch(parse_field(m, line)?, parse_field(n, line)?)
                        .map_err(|err| Error::format(line, err.to_string()))?;
                    s.set(q, value);
                }
                (Some(_), _) => return Err(Error::format(line, "expected `i j k m n`")),
            }
        }
        structure.ok_or_else(|| Error::format(0, "missing `extent` header"))
    }
}

pub(crate) fn parse_field<T: FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(line, format!("cannot parse `{field}`")))
}

/// One log: its first notch position and notch count. The axis follows the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogSpan {
    pub start: GridPos,
    pub len: u8,
}

impl LogSpan {
    pub fn new(start: GridPos, len: u8) -> Self {
        LogSpan { start, len }
    }

    pub fn axis(&self) -> LayerAxis {
        LayerAxis::of_layer(self.start.j)
    }

    pub fn layer(&self) -> usize {
        self.start.j
    }

    /// Covered positions in notch order.
    pub fn positions(&self, extent: &GridExtent) -> Result<Vec<GridPos>> {
        if !(1..=3).contains(&self.len) {
            return Err(Error::InvalidParameter(format!("log length {}", self.len)));
        }
        extent.check(self.start)?;
        let mut out = vec![self.start];
        for _ in 1..self.len {
            let last = *out.last().unwrap();
            out.push(extent.next(last).ok_or(Error::BrokenChain(last))?);
        }
        Ok(out)
    }

    pub fn last(&self, extent: &GridExtent) -> Result<GridPos> {
        Ok(*self.positions(extent)?.last().unwrap())
    }

    pub fn covers(&self, q: GridPos) -> bool {
        if q.j != self.start.j {
            return false;
        }
        let (along, across, start_along, start_across) = match self.axis() {
            LayerAxis::Axis0 => (q.i, q.k, self.start.i, self.start.k),
            LayerAxis::Axis1 => (q.k, q.i, self.start.k, self.start.i),
        };
        across == start_across && along >= start_along && along < start_along + self.len as usize
    }
}

impl fmt::Display for LogSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.start.i, self.start.j, self.start.k, self.len
        )
    }
}

impl FromStr for LogSpan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        let [i, j, k, m] = parts.as_slice() else {
            return Err(Error::format(0, format!("span `{s}` is not `i,j,k,m`")));
        };
        Ok(LogSpan::new(
            GridPos::new(parse_field(i, 0)?, parse_field(j, 0)?, parse_field(k, 0)?),
            parse_field(m, 0)?,
        ))
    }
}

/// The five feature classes: log ends `+`/`-` and bottom segments `u`/`v`/`w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureClass {
    EndPlus,
    EndMinus,
    SegU,
    SegV,
    SegW,
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 5] = [
        FeatureClass::EndPlus,
        FeatureClass::EndMinus,
        FeatureClass::SegU,
        FeatureClass::SegV,
        FeatureClass::SegW,
    ];

    pub fn symbol(self) -> char {
        match self {
            FeatureClass::EndPlus => '+',
            FeatureClass::EndMinus => '-',
            FeatureClass::SegU => 'u',
            FeatureClass::SegV => 'v',
            FeatureClass::SegW => 'w',
        }
    }

    pub fn from_symbol(c: &str) -> Option<Self> {
        FeatureClass::ALL
            .into_iter()
            .find(|f| c.len() == 1 && c.starts_with(f.symbol()))
    }

    /// Class seen when the log axis direction is reversed.
    pub fn reversed(self) -> Self {
        match self {
            FeatureClass::EndPlus => FeatureClass::EndMinus,
            FeatureClass::EndMinus => FeatureClass::EndPlus,
            FeatureClass::SegU => FeatureClass::SegV,
            FeatureClass::SegV => FeatureClass::SegU,
            FeatureClass::SegW => FeatureClass::SegW,
        }
    }

    /// Feature value implied by an occupancy at the feature's own position.
    pub fn implied_by(self, occupancy: Occupancy) -> bool {
        match self {
            FeatureClass::EndMinus | FeatureClass::SegU => occupancy.is_first(),
            FeatureClass::EndPlus | FeatureClass::SegV => occupancy.is_last(),
            FeatureClass::SegW => occupancy.continues(),
        }
    }
}

impl fmt::Display for FeatureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Index of one feature variable: a position and a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId {
    pub q: GridPos,
    pub f: FeatureClass,
}

impl FeatureId {
    pub fn new(q: GridPos, f: FeatureClass) -> Self {
        FeatureId { q, f }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.q, self.f)
    }
}

/// Dense indexing of the feature ids defined over an extent.
///
/// Every position carries `+`, `-`, `u`, `v`; `w` exists only where `next(q)` does.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureIndex {
    extent: GridExtent,
    ids: Vec<FeatureId>,
    slots: Vec<[Option<u32>; 5]>,
}

impl FeatureIndex {
    pub fn new(extent: GridExtent) -> Self {
        let mut ids = Vec::new();
        let mut slots = vec![[None; 5]; extent.len()];
        for q in extent.positions() {
            for (c, f) in FeatureClass::ALL.into_iter().enumerate() {
                if f == FeatureClass::SegW && extent.next(q).is_none() {
                    continue;
                }
                slots[extent.index(q)][c] = Some(ids.len() as u32);
                ids.push(FeatureId::new(q, f));
            }
        }
        FeatureIndex { extent, ids, slots }
    }

    pub fn extent(&self) -> GridExtent {
        self.extent
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[FeatureId] {
        &self.ids
    }

    pub fn get(&self, fid: FeatureId) -> Option<usize> {
        if !self.extent.contains(fid.q) {
            return None;
        }
        let c = FeatureClass::ALL.iter().position(|&f| f == fid.f).unwrap();
        self.slots[self.extent.index(fid.q)][c].map(|n| n as usize)
    }

    pub fn id(&self, n: usize) -> FeatureId {
        self.ids[n]
    }
}
