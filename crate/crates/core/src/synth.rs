//! Synthetic scenes with known ground truth: analytic 3D curves seen by a
//! ring of cameras, projected into per-view curve fragments with optional
//! pixel noise, fragmentation, dropout and spurious outlier curves.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{cumulative_lengths, orientation_of, resample_polyline, ArcLength, ViewCurves};
use crate::dataset::Dataset;
use crate::geometry::{project, Camera};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

/// An analytic 3D curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    Segment { a: [f64; 3], b: [f64; 3] },
    /// Circular arc in the plane through `center` orthogonal to `normal`.
    Arc { center: [f64; 3], radius: f64, normal: [f64; 3], start_deg: f64, end_deg: f64 },
    /// Helix around the z axis through `center`, rising `pitch` per turn.
    Helix { center: [f64; 3], radius: f64, pitch: f64, turns: f64, #[serde(default)] start_deg: f64 },
    Polyline { points: Vec<[f64; 3]> },
}

fn p3(a: &[f64; 3]) -> Point3<f64> {
    Point3::new(a[0], a[1], a[2])
}

fn arc_basis(normal: &[f64; 3]) -> (Vector3<f64>, Vector3<f64>) {
    let n = Vector3::new(normal[0], normal[1], normal[2]).normalize();
    let e = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&e).normalize();
    (u, n.cross(&u))
}

impl Primitive {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        match self {
            Primitive::Segment { a, b } if a == b => bad("segment endpoints coincide"),
            Primitive::Arc { radius, normal, start_deg, end_deg, .. } => {
                if !(*radius > 0.0) || normal.iter().all(|&c| c == 0.0) || start_deg == end_deg {
                    bad("arc needs a positive radius, a normal and a non-empty angle range")
                } else {
                    Ok(())
                }
            }
            Primitive::Helix { radius, turns, .. } if !(*radius > 0.0 && *turns > 0.0) => {
                bad("helix needs positive radius and turns")
            }
            Primitive::Polyline { points } if points.len() < 2 || points.windows(2).any(|w| w[0] == w[1]) => {
                bad("polyline needs at least two distinct consecutive points")
            }
            _ => Ok(()),
        }
    }

    /// Closed-form arc length.
    pub fn length(&self) -> f64 {
        match self {
            Primitive::Segment { a, b } => (p3(b) - p3(a)).norm(),
            Primitive::Arc { radius, start_deg, end_deg, .. } => radius * (end_deg - start_deg).abs().to_radians(),
            Primitive::Helix { radius, pitch, turns, .. } => turns * ((TAU * radius).powi(2) + pitch * pitch).sqrt(),
            Primitive::Polyline { points } => points.windows(2).map(|w| (p3(&w[1]) - p3(&w[0])).norm()).sum(),
        }
    }

    /// Point and derivative at `t` in `[0, 1]`.
    pub fn eval(&self, t: f64) -> (Point3<f64>, Vector3<f64>) {
        match self {
            Primitive::Segment { a, b } => {
                let d = p3(b) - p3(a);
                (p3(a) + d * t, d)
            }
            Primitive::Arc { center, radius, normal, start_deg, end_deg } => {
                let (u, v) = arc_basis(normal);
                let (s, e) = (start_deg.to_radians(), end_deg.to_radians());
                let th = s + (e - s) * t;
                let p = p3(center) + (u * th.cos() + v * th.sin()) * *radius;
                let d = (-u * th.sin() + v * th.cos()) * (*radius * (e - s));
                (p, d)
            }
            Primitive::Helix { center, radius, pitch, turns, start_deg } => {
                let s = start_deg.to_radians();
                let span = TAU * turns;
                let th = s + span * t;
                let c = p3(center);
                let p = Point3::new(c.x + radius * th.cos(), c.y + radius * th.sin(), c.z + pitch * turns * t);
                let d = Vector3::new(-radius * th.sin() * span, radius * th.cos() * span, pitch * turns);
                (p, d)
            }
            Primitive::Polyline { points } => {
                let lens: Vec<f64> = points.windows(2).map(|w| (p3(&w[1]) - p3(&w[0])).norm()).collect();
                let total: f64 = lens.iter().sum();
                let mut s = t.clamp(0.0, 1.0) * total;
                for (k, &l) in lens.iter().enumerate() {
                    if s <= l || k + 1 == lens.len() {
                        let d = p3(&points[k + 1]) - p3(&points[k]);
                        return (p3(&points[k]) + d * (s / l).min(1.0), d / l * total);
                    }
                    s -= l;
                }
                unreachable!("polyline has at least one segment")
            }
        }
    }

    /// Parameters of the corners that must appear in any dense sampling.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Primitive::Polyline { points } => {
                let total = self.length();
                let mut acc = 0.0;
                let mut out = vec![0.0];
                for w in points.windows(2) {
                    acc += (p3(&w[1]) - p3(&w[0])).norm();
                    out.push((acc / total).min(1.0));
                }
                out
            }
            _ => vec![0.0, 1.0],
        }
    }

    /// Dense parameter grid: exact for polylines, fine enough elsewhere
    /// for chord lengths to match arc length to well under 0.1%.
    fn dense_params(&self) -> Vec<f64> {
        let per_piece = match self {
            Primitive::Segment { .. } | Primitive::Polyline { .. } => 1,
            Primitive::Arc { start_deg, end_deg, .. } => ((end_deg - start_deg).abs() / 360.0 * 4096.0).ceil() as usize,
            Primitive::Helix { turns, .. } => (turns * 4096.0).ceil() as usize,
        }
        .max(1);
        let bp = self.breakpoints();
        let mut out = Vec::new();
        for w in bp.windows(2) {
            for k in 0..per_piece {
                out.push(w[0] + (w[1] - w[0]) * k as f64 / per_piece as f64);
            }
        }
        out.push(1.0);
        out
    }

    /// Dense polyline approximation of the curve.
    pub fn polyline(&self) -> Vec<Point3<f64>> {
        self.dense_params().into_iter().map(|t| self.eval(t).0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub count: usize,
    /// Ring radius as a multiple of the scene's bounding-box diagonal.
    pub radius_factor: f64,
    pub elevation_deg: f64,
    pub azimuth_offset_deg: f64,
    pub width: u32,
    pub height: u32,
    /// Fraction of the image width spanned by the scene diagonal.
    pub fill: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            count: 8,
            radius_factor: 5.0,
            elevation_deg: 25.0,
            azimuth_offset_deg: 0.0,
            width: 1000,
            height: 1000,
            fill: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of edgel positions, in pixels.
    pub sigma_px: f64,
    /// Probability that a projected curve is broken once in a view.
    pub fragmentation: f64,
    /// Probability that a curve is missing from a view.
    pub dropout: f64,
    /// Spurious curves added to every view.
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    pub curves: Vec<Primitive>,
    #[serde(default)]
    pub cameras: RigSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
}

/// Yaw of the cube about the vertical axis, chosen so no edge is parallel
/// to a baseline of the default 8-view ring.
const CUBE_YAW_DEG: f64 = 11.25;

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serialises")
    }

    /// Wireframe of a cube with unit edges centred at the origin.
    pub fn cube(seed: u64) -> Self {
        let (s, c) = CUBE_YAW_DEG.to_radians().sin_cos();
        let corner = |i: usize| {
            let (x, y, z) = ((i & 1) as f64 - 0.5, ((i >> 1) & 1) as f64 - 0.5, ((i >> 2) & 1) as f64 - 0.5);
            [c * x - s * y, s * x + c * y, z]
        };
        let mut curves = Vec::new();
        for i in 0..8 {
            for bit in [1, 2, 4] {
                if i & bit == 0 {
                    curves.push(Primitive::Segment { a: corner(i), b: corner(i | bit) });
                }
            }
        }
        Self { seed, curves, cameras: RigSpec::default(), noise: NoiseSpec::default() }
    }

    /// The cube with per-view noise, fragmentation and outliers.
    pub fn noisy_cube(seed: u64) -> Self {
        let mut spec = Self::cube(seed);
        spec.noise = NoiseSpec { sigma_px: 1.0, fragmentation: 0.2, dropout: 0.0, outliers: 2 };
        spec
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.curves.is_empty() {
            return bad("scene has no curves");
        }
        for c in &self.curves {
            c.validate()?;
        }
        let r = &self.cameras;
        if r.count < 2 || !(r.radius_factor > 0.5) || r.width == 0 || r.height == 0 || !(r.fill > 0.0) {
            return bad("rig needs at least two cameras outside the scene and a non-empty image");
        }
        let n = &self.noise;
        for (name, p) in [("fragmentation", n.fragmentation), ("dropout", n.dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidSpec(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if !(n.sigma_px >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }
}

/// A ground-truth curve as a dense polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct GtCurve {
    pub id: usize,
    pub points: Vec<Point3<f64>>,
}

/// Where a generated 2D fragment came from.
#[derive(Debug, Clone, PartialEq)]
pub enum FragmentSource {
    /// Projection of ground-truth curve `gt`; `params` holds the curve
    /// parameter of every edgel.
    Curve { gt: usize, params: Vec<f64> },
    /// Spurious curve with no 3D source.
    Outlier,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub ground_truth: Vec<GtCurve>,
    pub cameras: Vec<Camera>,
    pub views: Vec<ViewCurves>,
    /// Source of every fragment, keyed by `(view, curve id)`.
    pub sources: BTreeMap<(usize, usize), FragmentSource>,
}

impl SynthScene {
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.cameras.clone(), self.views.clone())
    }

    pub fn outlier_fragments(&self) -> usize {
        self.sources.values().filter(|s| matches!(s, FragmentSource::Outlier)).count()
    }

    pub fn gt_polylines(&self) -> Vec<Vec<Point3<f64>>> {
        self.ground_truth.iter().map(|g| g.points.clone()).collect()
    }
}

fn bounding_box(curves: &[Vec<Point3<f64>>]) -> (Point3<f64>, Point3<f64>) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in curves.iter().flatten() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Cameras evenly spaced on a horizontal ring, all aimed at `target`.
pub fn ring_cameras(rig: &RigSpec, target: &Point3<f64>, diameter: f64) -> Vec<Camera> {
    let radius = rig.radius_factor * diameter;
    let focal = rig.fill * rig.width as f64 * rig.radius_factor;
    let k = Matrix3::new(focal, 0.0, rig.width as f64 / 2.0, 0.0, focal, rig.height as f64 / 2.0, 0.0, 0.0, 1.0);
    let el = rig.elevation_deg.to_radians();
    (0..rig.count)
        .map(|i| {
            let az = TAU * i as f64 / rig.count as f64 + rig.azimuth_offset_deg.to_radians();
            let centre = target + Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
            let z = (target - centre).normalize();
            let x = z.cross(&Vector3::z()).normalize();
            let y = z.cross(&x);
            let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
            let t = -(r * centre.coords);
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            rt.set_column(3, &t);
            Camera::new(k * rt, i).expect("ring camera is finite")
        })
        .collect()
}

/// Image position and image-space derivative of a curve point.
fn project_with_tangent(cam: &Camera, p: &Point3<f64>, d: &Vector3<f64>) -> Option<(Point2<f64>, Vector2<f64>)> {
    let px = project(cam, p).ok()?;
    let m = cam.projection();
    let x = m * p.to_homogeneous();
    let dx = m.fixed_view::<3, 3>(0, 0) * d;
    let tangent = Vector2::new((dx.x * x.z - x.x * dx.z) / (x.z * x.z), (dx.y * x.z - x.y * dx.z) / (x.z * x.z));
    Some((px, tangent))
}

type RawFragment = (Vec<(f64, f64, f64)>, FragmentSource);

/// Edgels at roughly one-pixel spacing along the projection of `curve`,
/// split wherever the curve leaves the image.
fn project_curve(cam: &Camera, curve: &Primitive, gt: usize, width: u32, height: u32) -> Vec<RawFragment> {
    let dense = curve.dense_params();
    // Refine the grid so one cell never spans more than a few pixels.
    let coarse: Vec<Option<Point2<f64>>> = dense.iter().map(|&t| project(cam, &curve.eval(t).0).ok()).collect();
    let mut ts = Vec::new();
    for (k, w) in dense.windows(2).enumerate() {
        let span = match (coarse[k], coarse[k + 1]) {
            (Some(a), Some(b)) => (b - a).norm(),
            _ => 1.0,
        };
        let m = (span / 2.0).ceil().max(1.0) as usize;
        for j in 0..m {
            ts.push(w[0] + (w[1] - w[0]) * j as f64 / m as f64);
        }
    }
    ts.push(1.0);
    let inside = |q: &Point2<f64>| q.x >= 0.0 && q.y >= 0.0 && q.x < width as f64 && q.y < height as f64;
    let pts: Vec<Option<Point2<f64>>> =
        ts.iter().map(|&t| project(cam, &curve.eval(t).0).ok().filter(|q| inside(q))).collect();

    // Visible stretches of the fine grid.
    let mut out = Vec::new();
    let mut k = 0;
    while k < ts.len() {
        if pts[k].is_none() {
            k += 1;
            continue;
        }
        let start = k;
        while k < ts.len() && pts[k].is_some() {
            k += 1;
        }
        let stretch: Vec<Point3<f64>> = pts[start..k].iter().map(|q| q.unwrap()).map(|q| Point3::new(q.x, q.y, 0.0)).collect();
        let len = stretch.arc_length();
        if len < 2.0 {
            continue;
        }
        let n_seg = len.floor() as usize;
        let cum = cumulative_lengths(&stretch);
        let mut edgels = Vec::with_capacity(n_seg + 1);
        let mut params = Vec::with_capacity(n_seg + 1);
        let mut j = 0;
        for i in 0..=n_seg {
            let s = len * i as f64 / n_seg as f64;
            while j + 2 < cum.len() && cum[j + 1] < s {
                j += 1;
            }
            let seg = cum[j + 1] - cum[j];
            let f = if seg > 0.0 { ((s - cum[j]) / seg).clamp(0.0, 1.0) } else { 0.0 };
            let t = ts[start + j] + (ts[start + j + 1] - ts[start + j]) * f;
            let (p, d) = curve.eval(t);
            let Some((q, tan)) = project_with_tangent(cam, &p, &d) else { continue };
            if edgels.last().is_some_and(|&(x, y, _)| x == q.x && y == q.y) {
                continue;
            }
            edgels.push((q.x, q.y, orientation_of(&tan)));
            params.push(t);
        }
        if edgels.len() >= 2 {
            out.push((edgels, FragmentSource::Curve { gt, params }));
        }
    }
    out
}

fn outlier_arc(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Vec<(f64, f64, f64)> {
    let (w, h) = (width as f64, height as f64);
    let c = Point2::new(rng.random_range(0.2 * w..0.8 * w), rng.random_range(0.2 * h..0.8 * h));
    let r = rng.random_range(40.0..200.0);
    let start = rng.random_range(0.0..TAU);
    let span = rng.random_range(PI / 3.0..PI);
    let n = (r * span).floor() as usize;
    (0..=n)
        .map(|k| start + span * k as f64 / n as f64)
        .map(|a| (c.x + r * a.cos(), c.y + r * a.sin(), orientation_of(&Vector2::new(-a.sin(), a.cos()))))
        .filter(|&(x, y, _)| x >= 0.0 && y >= 0.0 && x < w && y < h)
        .collect()
}

fn view_fragments(spec: &SceneSpec, cam: &Camera) -> Vec<RawFragment> {
    let view = cam.view_id();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(view as u64));
    let noise = &spec.noise;
    let (w, h) = (spec.cameras.width, spec.cameras.height);
    let mut frags = Vec::new();
    for (gt, curve) in spec.curves.iter().enumerate() {
        let dropped = noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout;
        if dropped {
            continue;
        }
        for (edgels, src) in project_curve(cam, curve, gt, w, h) {
            let broken = noise.fragmentation > 0.0 && rng.random::<f64>() < noise.fragmentation && edgels.len() >= 8;
            if broken {
                let cut = rng.random_range(2..edgels.len() - 4);
                let FragmentSource::Curve { params, .. } = &src else { unreachable!() };
                frags.push((edgels[..cut].to_vec(), FragmentSource::Curve { gt, params: params[..cut].to_vec() }));
                frags.push((
                    edgels[cut + 2..].to_vec(),
                    FragmentSource::Curve { gt, params: params[cut + 2..].to_vec() },
                ));
            } else {
                frags.push((edgels, src));
            }
        }
    }
    for _ in 0..noise.outliers {
        let arc = outlier_arc(&mut rng, w, h);
        if arc.len() >= 2 {
            frags.push((arc, FragmentSource::Outlier));
        }
    }
    if noise.sigma_px > 0.0 {
        let pos = Normal::new(0.0, noise.sigma_px).expect("finite sigma");
        let ang = Normal::new(0.0, noise.sigma_px / 8.0).expect("finite sigma");
        for (edgels, _) in frags.iter_mut() {
            for e in edgels.iter_mut() {
                e.0 += pos.sample(&mut rng);
                e.1 += pos.sample(&mut rng);
                e.2 += ang.sample(&mut rng);
            }
            edgels.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        }
    }
    frags.retain(|(e, _)| e.len() >= 2);
    frags
}

/// Generates ground truth, cameras and per-view curve fragments. The output
/// depends only on the spec (including its seed).
pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let ground_truth: Vec<GtCurve> =
        spec.curves.iter().enumerate().map(|(id, c)| GtCurve { id, points: c.polyline() }).collect();
    let polys: Vec<Vec<Point3<f64>>> = ground_truth.iter().map(|g| g.points.clone()).collect();
    let (lo, hi) = bounding_box(&polys);
    let diameter = (hi - lo).norm();
    if !(diameter > 0.0) {
        return Err(SynthError::InvalidSpec("scene has zero extent".into()));
    }
    let centre = Point3::from((lo.coords + hi.coords) / 2.0);
    let cameras = ring_cameras(&spec.cameras, &centre, diameter);
    let per_view: Vec<Vec<RawFragment>> = cameras.par_iter().map(|cam| view_fragments(spec, cam)).collect();
    let mut views = Vec::with_capacity(cameras.len());
    let mut sources = BTreeMap::new();
    for (cam, frags) in cameras.iter().zip(per_view) {
        let v = cam.view_id();
        let mut raw = Vec::with_capacity(frags.len());
        for (id, (edgels, src)) in frags.into_iter().enumerate() {
            sources.insert((v, id), src);
            raw.push((id, edgels));
        }
        let vc = ViewCurves::from_fragments(v, spec.cameras.width, spec.cameras.height, raw)
            .map_err(|e| SynthError::InvalidSpec(format!("view {v}: {e}")))?;
        views.push(vc);
    }
    Ok(SynthScene { ground_truth, cameras, views, sources })
}

/// Uniform resampling of ground-truth polylines at `spacing` for
/// evaluation. Closed curves do not repeat their first sample.
pub fn ground_truth_samples(gt: &[Vec<Point3<f64>>], spacing: f64) -> Vec<Vec<Point3<f64>>> {
    gt.iter()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let len = g.arc_length();
            let n = ((len / spacing).round() as usize).max(1);
            let (mut pts, _) = resample_polyline(g, n);
            let closed = (g[0] - g[g.len() - 1]).norm() <= 1e-9 * len.max(1.0);
            if closed && pts.len() > 2 {
                pts.pop();
            }
            pts
        })
        .collect()
}
