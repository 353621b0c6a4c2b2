//! Metric realization of the grid: cameras, log cylinders, feature sample
//! points, segment-cylinder intersection and a depth rasterizer.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::grid::{parse_field, FeatureClass, FeatureId, GridExtent, GridPos, LayerAxis, LogSpan};

pub type Vec3 = Vector3<f64>;

/// Fraction of the pitch within which a sample point counts as lying on a
/// cylinder's surface.
pub const SELF_HIT_FACTOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricParams {
    pub pitch: f64,
    pub layer_height: f64,
    pub radius: f64,
    pub overhang: f64,
    pub samples: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            pitch: 2.0,
            layer_height: 0.5,
            radius: 0.5,
            overhang: 0.5,
            samples: 16,
        }
    }
}

impl MetricParams {
    pub fn new(
        pitch: f64,
        layer_height: f64,
        radius: f64,
        overhang: f64,
        samples: usize,
    ) -> Result<Self> {
        let m = MetricParams {
            pitch,
            layer_height,
            radius,
            overhang,
            samples,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        let lengths = [self.pitch, self.layer_height, self.radius, self.overhang];
        if lengths.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "metric lengths must be positive: {self:?}"
            )));
        }
        if self.layer_height > 2.0 * self.radius {
            return Err(Error::InvalidParameter(format!(
                "layer height {} exceeds the log diameter {}",
                self.layer_height,
                2.0 * self.radius
            )));
        }
        if self.samples < 4 {
            return Err(Error::InvalidParameter(format!(
                "need at least 4 samples per feature, got {}",
                self.samples
            )));
        }
        Ok(())
    }

    /// Surface tolerance used to exclude self-hits.
    pub fn self_hit_tolerance(&self) -> f64 {
        SELF_HIT_FACTOR * self.pitch
    }

    /// Parses `P,H,R,E,Ns`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(Error::InvalidParameter(format!(
                "expected P,H,R,E,Ns, got {text:?}"
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad metric value {s:?}")))
        };
        let samples = parts[4]
            .parse::<usize>()
            .map_err(|_| Error::InvalidParameter(format!("bad sample count {:?}", parts[4])))?;
        MetricParams::new(
            num(parts[0])?,
            num(parts[1])?,
            num(parts[2])?,
            num(parts[3])?,
            samples,
        )
    }
}

pub fn world_point(q: GridPos, m: &MetricParams) -> Vec3 {
    Vec3::new(
        q.i as f64 * m.pitch,
        q.j as f64 * m.layer_height,
        q.k as f64 * m.pitch,
    )
}

/// Unit direction of the logs in a layer.
pub fn axis_direction(axis: LayerAxis) -> Vec3 {
    match axis {
        LayerAxis::Axis0 => Vec3::x(),
        LayerAxis::Axis1 => Vec3::z(),
    }
}

/// Pinhole camera. `rotation` and `translation` map world points into the
/// camera frame (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub focal: f64,
    pub principal: (f64, f64),
    pub size: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vec3,
        focal: f64,
        principal: (f64, f64),
        size: (usize, usize),
    ) -> Result<Self> {
        let orthonormal = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max()
            < 1e-9;
        if !orthonormal || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "camera rotation is not a proper rotation".into(),
            ));
        }
        if !(focal > 0.0) || size.0 == 0 || size.1 == 0 {
            return Err(Error::InvalidParameter(
                "camera focal length and image size must be positive".into(),
            ));
        }
        Ok(CameraModel {
            rotation,
            translation,
            focal,
            principal,
            size,
        })
    }

    /// Camera at `eye` looking at `target`, with world `up` pointing up in the image.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        size: (usize, usize),
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera eye and target coincide".into()))?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or_else(|| {
            Error::InvalidParameter("camera up vector is parallel to the view direction".into())
        })?;
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let principal = (size.0 as f64 / 2.0, size.1 as f64 / 2.0);
        CameraModel::new(rotation, translation, focal, principal, size)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p: &Vec3) -> Result<Projection> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return Err(Error::BehindCamera(c.z));
        }
        Ok(Projection {
            u: self.focal * c.x / c.z + self.principal.0,
            v: self.focal * c.y / c.z + self.principal.1,
            depth: c.z,
        })
    }

    /// World-frame direction of the viewing ray through pixel coordinates
    /// `(u, v)`, scaled so its camera-frame depth component is 1.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let c = Vec3::new(
            (u - self.principal.0) / self.focal,
            (v - self.principal.1) / self.focal,
            1.0,
        );
        self.rotation.transpose() * c
    }

    /// The same camera after a rigid motion `x -> rot * x + shift` of the world.
    pub fn moved(&self, rot: &Matrix3<f64>, shift: &Vec3) -> CameraModel {
        // world' = rot * world + shift, so world = rot^T (world' - shift)
        let rotation = self.rotation * rot.transpose();
        let translation = self.translation - rotation * shift;
        CameraModel {
            rotation,
            translation,
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let r = &self.rotation;
        let t = &self.translation;
        writeln!(out, "focal {}", self.focal).unwrap();
        writeln!(out, "principal {} {}", self.principal.0, self.principal.1).unwrap();
        writeln!(out, "size {} {}", self.size.0, self.size.1).unwrap();
        write!(out, "pose").unwrap();
        for row in 0..3 {
            for col in 0..3 {
                write!(out, " {}", r[(row, col)]).unwrap();
            }
        }
        writeln!(out, " {} {} {}", t.x, t.y, t.z).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut focal = None;
        let mut principal = None;
        let mut size = None;
        let mut pose = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let args = &fields[1..];
            let want = |count: usize| {
                if args.len() == count {
                    Ok(())
                } else {
                    Err(Error::format(
                        line,
                        format!("`{}` takes {count} values", fields[0]),
                    ))
                }
            };
            match fields[0] {
                "focal" => {
                    want(1)?;
                    focal = Some(parse_field::<f64>(args[0], line)?);
                }
                "principal" => {
                    want(2)?;
                    principal = Some((parse_field(args[0], line)?, parse_field(args[1], line)?));
                }
                "size" => {
                    want(2)?;
                    size = Some((parse_field(args[0], line)?, parse_field(args[1], line)?));
                }
                "pose" => {
                    want(12)?;
                    let v: Vec<f64> = args
                        .iter()
                        .map(|a| parse_field(a, line))
                        .collect::<Result<_>>()?;
                    pose = Some((
                        Matrix3::from_row_slice(&v[..9]),
                        Vec3::new(v[9], v[10], v[11]),
                    ));
                }
                other => {
                    return Err(Error::format(
                        line,
                        format!("unknown camera field `{other}`"),
                    ))
                }
            }
        }
        let missing = |what: &str| Error::format(0, format!("camera is missing `{what}`"));
        let (rotation, translation) = pose.ok_or_else(|| missing("pose"))?;
        CameraModel::new(
            rotation,
            translation,
            focal.ok_or_else(|| missing("focal"))?,
            principal.ok_or_else(|| missing("principal"))?,
            size.ok_or_else(|| missing("size"))?,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cylinder {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Cylinder {
    pub fn new(a: Vec3, b: Vec3, radius: f64) -> Result<Self> {
        if a == b || !(radius > 0.0) {
            return Err(Error::InvalidParameter("degenerate cylinder".into()));
        }
        Ok(Cylinder { a, b, radius })
    }

    /// True when `p` lies inside the cylinder or within `tol` of its surface.
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let axis = self.b - self.a;
        let len = axis.norm();
        let w = axis / len;
        let rel = p - self.a;
        let s = rel.dot(&w);
        let radial = (rel - w * s).norm();
        s >= -tol && s <= len + tol && radial <= self.radius + tol
    }

    /// Parameter interval `[t0, t1]` of `origin + t * dir` inside the
    /// cylinder, unclipped in `t`.
    pub fn intersect_line(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let axis = self.b - self.a;
        let len = axis.norm();
        let w = axis / len;
        let rel = origin - self.a;
        let (s0, ds) = (rel.dot(&w), dir.dot(&w));
        let op = rel - w * s0;
        let dp = dir - w * ds;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        // axial slab
        if ds.abs() < 1e-15 {
            if s0 < 0.0 || s0 > len {
                return None;
            }
        } else {
            let (t0, t1) = ((0.0 - s0) / ds, (len - s0) / ds);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        // radial quadratic
        let qa = dp.dot(&dp);
        let qb = 2.0 * op.dot(&dp);
        let qc = op.dot(&op) - self.radius * self.radius;
        if qa < 1e-30 {
            if qc > 0.0 {
                return None;
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return None;
            }
            let root = disc.sqrt();
            // numerically stable root pair
            let q = -0.5 * (qb + qb.signum() * root);
            let (r0, r1) = if q == 0.0 {
                (0.0, 0.0)
            } else {
                let x = q / qa;
                let y = qc / q;
                (x.min(y), x.max(y))
            };
            lo = lo.max(r0);
            hi = hi.min(r1);
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// A ray from `origin`. With a finite `length` it is the segment ending at
/// `origin + length * direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub length: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let direction = direction
            .try_normalize(1e-15)
            .ok_or_else(|| Error::InvalidParameter("zero ray direction".into()))?;
        Ok(Ray {
            origin,
            direction,
            length: f64::INFINITY,
        })
    }

    pub fn segment(from: Vec3, to: Vec3) -> Result<Self> {
        let d = to - from;
        let mut r = Ray::new(from, d)?;
        r.length = d.norm();
        Ok(r)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Surface tolerance used when the caller has no metric parameters at hand.
pub const DEFAULT_SELF_HIT: f64 = SELF_HIT_FACTOR * 2.0;

/// Whether the ray segment passes through the finite capped cylinder.
/// A ray starting inside or on the cylinder never counts as hitting it.
pub fn ray_hits_cylinder(r: &Ray, c: &Cylinder) -> bool {
    ray_hits_cylinder_tol(r, c, DEFAULT_SELF_HIT)
}

pub fn ray_hits_cylinder_tol(r: &Ray, c: &Cylinder, tol: f64) -> bool {
    if c.contains(&r.origin, tol) {
        return false;
    }
    match c.intersect_line(&r.origin, &r.direction) {
        Some((lo, hi)) => hi > 0.0 && lo < r.length,
        None => false,
    }
}

pub fn log_cylinder(span: &LogSpan, extent: &GridExtent, m: &MetricParams) -> Result<Cylinder> {
    let last = span.last(extent)?;
    let dir = axis_direction(span.axis());
    Cylinder::new(
        world_point(span.start, m) - dir * m.overhang,
        world_point(last, m) + dir * m.overhang,
        m.radius,
    )
}

fn linspace(a: Vec3, b: Vec3, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|s| a + (b - a) * (s as f64 / (n - 1) as f64))
        .collect()
}

/// Points characterizing a feature: a circle for log ends, a line on the
/// log's bottom for segments.
pub fn feature_sample_points(
    fid: FeatureId,
    extent: &GridExtent,
    m: &MetricParams,
) -> Result<Vec<Vec3>> {
    extent.check(fid.q)?;
    let axis = LayerAxis::of_layer(fid.q.j);
    let dir = axis_direction(axis);
    let center = world_point(fid.q, m);
    let bottom = Vec3::new(0.0, -m.radius, 0.0);
    let n = m.samples;
    Ok(match fid.f {
        FeatureClass::EndPlus | FeatureClass::EndMinus => {
            let sign = if fid.f == FeatureClass::EndPlus {
                1.0
            } else {
                -1.0
            };
            let c = center + dir * (sign * m.overhang);
            let (e1, e2) = match axis {
                LayerAxis::Axis0 => (Vec3::y(), Vec3::z()),
                LayerAxis::Axis1 => (Vec3::x(), Vec3::y()),
            };
            (0..n)
                .map(|s| {
                    let a = TAU * s as f64 / n as f64;
                    c + (e1 * a.cos() + e2 * a.sin()) * m.radius
                })
                .collect()
        }
        FeatureClass::SegU => linspace(center - dir * m.overhang + bottom, center + bottom, n),
        FeatureClass::SegV => linspace(center + bottom, center + dir * m.overhang + bottom, n),
        FeatureClass::SegW => {
            let next = extent.next(fid.q).ok_or_else(|| {
                Error::InvalidParameter(format!("{fid} has no successor position"))
            })?;
            linspace(center + bottom, world_point(next, m) + bottom, n)
        }
    })
}

/// Per-pixel nearest cylinder depth (camera-frame z) and the index of the
/// cylinder that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub owner: Vec<Option<usize>>,
}

impl DepthMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }
}

/// Nearest entry depth along the camera ray through `(u, v)` over the given
/// cylinders, with the index of the nearest one.
pub fn nearest_depth<'c>(
    cam: &CameraModel,
    u: f64,
    v: f64,
    cylinders: impl IntoIterator<Item = (usize, &'c Cylinder)>,
) -> Option<(f64, usize)> {
    let origin = cam.center();
    let dir = cam.pixel_direction(u, v);
    let mut best: Option<(f64, usize)> = None;
    for (n, c) in cylinders {
        if let Some((lo, hi)) = c.intersect_line(&origin, &dir) {
            if hi <= 0.0 {
                continue;
            }
            // dir has unit camera depth, so t is the depth itself
            let depth = lo.max(0.0);
            if best.is_none_or(|(d, _)| depth < d) {
                best = Some((depth, n));
            }
        }
    }
    best
}

/// Pixel rectangle covering a cylinder's projection, or the whole image when
/// part of it lies behind the camera.
fn pixel_bounds(c: &Cylinder, cam: &CameraModel) -> (usize, usize, usize, usize) {
    let (w, h) = cam.size;
    let r = c.radius;
    let mut corners = Vec::with_capacity(8);
    for &x in &[c.a.x.min(c.b.x) - r, c.a.x.max(c.b.x) + r] {
        for &y in &[c.a.y.min(c.b.y) - r, c.a.y.max(c.b.y) + r] {
            for &z in &[c.a.z.min(c.b.z) - r, c.a.z.max(c.b.z) + r] {
                corners.push(Vec3::new(x, y, z));
            }
        }
    }
    let mut bounds = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &corners {
        match cam.project(p) {
            Ok(pr) => {
                bounds.0 = bounds.0.min(pr.u);
                bounds.1 = bounds.1.min(pr.v);
                bounds.2 = bounds.2.max(pr.u);
                bounds.3 = bounds.3.max(pr.v);
            }
            Err(_) => return (0, 0, w, h),
        }
    }
    let clamp = |x: f64, hi: usize| x.max(0.0).min(hi as f64) as usize;
    (
        clamp(bounds.0.floor() - 1.0, w),
        clamp(bounds.1.floor() - 1.0, h),
        clamp(bounds.2.ceil() + 1.0, w),
        clamp(bounds.3.ceil() + 1.0, h),
    )
}

/// Renders the bounding cylinders of `spans` into a depth map sampled at
/// pixel centers.
pub fn rasterize_depth(
    spans: &[LogSpan],
    extent: &GridExtent,
    cam: &CameraModel,
    m: &MetricParams,
) -> Result<DepthMap> {
    let cylinders: Vec<Cylinder> = spans
        .iter()
        .map(|s| log_cylinder(s, extent, m))
        .collect::<Result<_>>()?;
    let (w, h) = cam.size;
    let mut map = DepthMap {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; w * h],
        owner: vec![None; w * h],
    };
    let origin = cam.center();
    for (n, c) in cylinders.iter().enumerate() {
        let (x0, y0, x1, y1) = pixel_bounds(c, cam);
        for y in y0..y1 {
            for x in x0..x1 {
                let dir = cam.pixel_direction(x as f64 + 0.5, y as f64 + 0.5);
                let Some((lo, hi)) = c.intersect_line(&origin, &dir) else {
                    continue;
                };
                if hi <= 0.0 {
                    continue;
                }
                let depth = lo.max(0.0);
                let slot = y * w + x;
                if depth < map.depth[slot] {
                    map.depth[slot] = depth;
                    map.owner[slot] = Some(n);
                }
            }
        }
    }
    Ok(map)
}

/// Builds a rotation about the vertical axis by `degrees`.
pub fn yaw(degrees: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), degrees.to_radians()).matrix()
}
