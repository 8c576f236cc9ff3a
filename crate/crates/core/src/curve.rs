//! Curve data shared by every stage: oriented 2D edgels grouped into image
//! curve fragments, 3D curves whose samples remember the 2D edgels that
//! supported them, and a grid index for radius queries over edgels.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("curve {curve_id} has {len} points, at least 2 are required")]
    TooShort { curve_id: usize, len: usize },
    #[error("curve {curve_id} repeats point {index}")]
    RepeatedPoint { curve_id: usize, index: usize },
    #[error("curve {curve_id} mixes views {expected} and {found}")]
    MixedViews { curve_id: usize, expected: usize, found: usize },
    #[error("resampling spacing {0} must be positive and finite")]
    InvalidSpacing(f64),
    #[error("resampling spacing {spacing} exceeds curve length {length}")]
    SpacingTooLarge { spacing: f64, length: f64 },
    #[error("no edgels indexed for view {0}")]
    UnknownView(usize),
}

/// Wraps an undirected orientation into `[0, pi)`.
pub fn wrap_orientation(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Smallest angle between two undirected orientations, in `[0, pi/2]`.
pub fn orientation_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Undirected orientation of a 2D vector, in `[0, pi)`.
pub fn orientation_of(v: &Vector2<f64>) -> f64 {
    wrap_orientation(v.y.atan2(v.x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edgel2D {
    pub position: Point2<f64>,
    /// Undirected tangent orientation in `[0, pi)`.
    pub orientation: f64,
    pub view_id: usize,
    pub edgel_id: usize,
}

impl Edgel2D {
    pub fn tangent(&self) -> Vector2<f64> {
        Vector2::new(self.orientation.cos(), self.orientation.sin())
    }
}

/// An ordered chain of edgels in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve2D {
    edgels: Vec<Edgel2D>,
    curve_id: usize,
    view_id: usize,
}

impl Curve2D {
    pub fn new(curve_id: usize, view_id: usize, edgels: Vec<Edgel2D>) -> Result<Self, CurveError> {
        if edgels.len() < 2 {
            return Err(CurveError::TooShort { curve_id, len: edgels.len() });
        }
        for (i, e) in edgels.iter().enumerate() {
            if e.view_id != view_id {
                return Err(CurveError::MixedViews { curve_id, expected: view_id, found: e.view_id });
            }
            if i > 0 && edgels[i - 1].position == e.position {
                return Err(CurveError::RepeatedPoint { curve_id, index: i });
            }
        }
        Ok(Self { edgels, curve_id, view_id })
    }

    pub fn edgels(&self) -> &[Edgel2D] {
        &self.edgels
    }

    pub fn curve_id(&self) -> usize {
        self.curve_id
    }

    pub fn view_id(&self) -> usize {
        self.view_id
    }

    pub fn len(&self) -> usize {
        self.edgels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edgels.is_empty()
    }

    pub fn point(&self, i: usize) -> Point2<f64> {
        self.edgels[i].position
    }

    /// Position at a fractional edgel index, linearly interpolated.
    pub fn point_at(&self, t: f64) -> Point2<f64> {
        let last = self.edgels.len() - 1;
        let t = t.clamp(0.0, last as f64);
        let k = (t.floor() as usize).min(last.saturating_sub(1));
        let f = t - k as f64;
        let a = self.edgels[k].position;
        let b = self.edgels[k + 1].position;
        a + (b - a) * f
    }

    /// The edgel closest to a fractional index.
    pub fn nearest_edgel(&self, t: f64) -> &Edgel2D {
        let i = (t.round().max(0.0) as usize).min(self.edgels.len() - 1);
        &self.edgels[i]
    }
}

/// All curve fragments of one view, with the image size they were detected in.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCurves {
    pub view_id: usize,
    pub width: u32,
    pub height: u32,
    pub curves: Vec<Curve2D>,
}

impl ViewCurves {
    /// Builds a view from raw `(curve_id, [(x, y, theta)])` fragments, numbering
    /// edgels consecutively in fragment order.
    pub fn from_fragments(
        view_id: usize,
        width: u32,
        height: u32,
        fragments: Vec<(usize, Vec<(f64, f64, f64)>)>,
    ) -> Result<Self, CurveError> {
        let mut next_id = 0;
        let mut curves = Vec::with_capacity(fragments.len());
        for (curve_id, pts) in fragments {
            let edgels = pts
                .into_iter()
                .map(|(x, y, theta)| {
                    let e = Edgel2D {
                        position: Point2::new(x, y),
                        orientation: wrap_orientation(theta),
                        view_id,
                        edgel_id: next_id,
                    };
                    next_id += 1;
                    e
                })
                .collect();
            curves.push(Curve2D::new(curve_id, view_id, edgels)?);
        }
        Ok(Self { view_id, width, height, curves })
    }

    pub fn edgels(&self) -> impl Iterator<Item = &Edgel2D> {
        self.curves.iter().flat_map(|c| c.edgels.iter())
    }
}

/// Views that supported a 3D sample, each with the supporting edgel ids.
pub type SupportMap = BTreeMap<usize, BTreeSet<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample3D {
    pub position: Point3<f64>,
    pub support: SupportMap,
    /// Geometric reliability in `[0, 1]`; low near epipolar tangencies.
    pub reliability: f64,
}

impl Sample3D {
    pub fn new(position: Point3<f64>) -> Self {
        Self { position, support: SupportMap::new(), reliability: 1.0 }
    }

    pub fn merge_support(&mut self, other: &SupportMap) {
        for (v, ids) in other {
            self.support.entry(*v).or_default().extend(ids.iter().copied());
        }
    }
}

/// An ordered 3D polyline with per-sample 2D support.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve3D {
    samples: Vec<Sample3D>,
    pub curve_id: usize,
    /// First hypothesis view the curve was reconstructed from.
    pub primary_view: usize,
}

impl Curve3D {
    pub fn new(curve_id: usize, primary_view: usize, samples: Vec<Sample3D>) -> Result<Self, CurveError> {
        if samples.len() < 2 {
            return Err(CurveError::TooShort { curve_id, len: samples.len() });
        }
        for i in 1..samples.len() {
            if samples[i - 1].position == samples[i].position {
                return Err(CurveError::RepeatedPoint { curve_id, index: i });
            }
        }
        Ok(Self { samples, curve_id, primary_view })
    }

    /// Builds a curve after dropping consecutive duplicate samples.
    pub fn from_samples_dedup(
        curve_id: usize,
        primary_view: usize,
        samples: Vec<Sample3D>,
    ) -> Result<Self, CurveError> {
        let mut out: Vec<Sample3D> = Vec::with_capacity(samples.len());
        for s in samples {
            match out.last_mut() {
                Some(prev) if prev.position == s.position => prev.merge_support(&s.support),
                _ => out.push(s),
            }
        }
        Self::new(curve_id, primary_view, out)
    }

    pub fn samples(&self) -> &[Sample3D] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Sample3D] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Sample3D> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.samples.iter().map(|s| s.position).collect()
    }

    /// Cumulative arc length at every sample.
    pub fn arc_parameters(&self) -> Vec<f64> {
        cumulative_lengths(&self.positions())
    }
}

pub trait ArcLength {
    /// Sum of chord lengths between consecutive points.
    fn arc_length(&self) -> f64;
}

impl ArcLength for Curve3D {
    fn arc_length(&self) -> f64 {
        self.samples.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
    }
}

impl ArcLength for Curve2D {
    fn arc_length(&self) -> f64 {
        self.edgels.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
    }
}

impl ArcLength for [Point3<f64>] {
    fn arc_length(&self) -> f64 {
        self.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

impl ArcLength for [Point2<f64>] {
    fn arc_length(&self) -> f64 {
        self.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

pub fn arc_length<C: ArcLength + ?Sized>(curve: &C) -> f64 {
    curve.arc_length()
}

pub fn cumulative_lengths(points: &[Point3<f64>]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += (p - points[i - 1]).norm();
        }
        out.push(acc);
    }
    out
}

/// Positions at `n_segments + 1` equally spaced arc-length stations, plus for
/// each station the index of the nearest input point by arc length.
pub fn resample_polyline(points: &[Point3<f64>], n_segments: usize) -> (Vec<Point3<f64>>, Vec<usize>) {
    let cum = cumulative_lengths(points);
    let total = *cum.last().unwrap_or(&0.0);
    let last = points.len() - 1;
    let mut out = Vec::with_capacity(n_segments + 1);
    let mut src = Vec::with_capacity(n_segments + 1);
    let mut k = 0;
    for i in 0..=n_segments {
        if i == 0 {
            out.push(points[0]);
            src.push(0);
            continue;
        }
        if i == n_segments {
            out.push(points[last]);
            src.push(last);
            continue;
        }
        let s = total * i as f64 / n_segments as f64;
        while k + 1 < last && cum[k + 1] < s {
            k += 1;
        }
        let seg = cum[k + 1] - cum[k];
        let f = if seg > 0.0 { ((s - cum[k]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        out.push(points[k] + (points[k + 1] - points[k]) * f);
        src.push(if f < 0.5 { k } else { k + 1 });
    }
    (out, src)
}

/// Resamples at uniform arc-length spacing, keeping both endpoints. The
/// spacing is adjusted so that it divides the length into whole intervals.
/// Also returns, for each new sample, the index of the original sample whose
/// support it inherited.
pub fn resample_uniform_with_sources(curve: &Curve3D, spacing: f64) -> Result<(Curve3D, Vec<usize>), CurveError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(CurveError::InvalidSpacing(spacing));
    }
    let length = curve.arc_length();
    if spacing > length {
        return Err(CurveError::SpacingTooLarge { spacing, length });
    }
    let n = ((length / spacing).round() as usize).max(1);
    let (points, src) = resample_polyline(&curve.positions(), n);
    let samples = points
        .into_iter()
        .zip(&src)
        .map(|(p, &j)| {
            let orig = &curve.samples[j];
            Sample3D { position: p, support: orig.support.clone(), reliability: orig.reliability }
        })
        .collect();
    let out = Curve3D::from_samples_dedup(curve.curve_id, curve.primary_view, samples)?;
    Ok((out, src))
}

pub fn resample_uniform(curve: &Curve3D, spacing: f64) -> Result<Curve3D, CurveError> {
    resample_uniform_with_sources(curve, spacing).map(|(c, _)| c)
}

#[derive(Debug, Clone)]
struct ViewGrid {
    origin: Point2<f64>,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
    edgels: Vec<Edgel2D>,
    by_id: BTreeMap<usize, u32>,
}

impl ViewGrid {
    fn build(edgels: Vec<Edgel2D>, cell: f64) -> Self {
        let (mut lo, mut hi) = (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0));
        if let Some(first) = edgels.first() {
            lo = first.position;
            hi = first.position;
        }
        for e in &edgels {
            lo = Point2::new(lo.x.min(e.position.x), lo.y.min(e.position.y));
            hi = Point2::new(hi.x.max(e.position.x), hi.y.max(e.position.y));
        }
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        let mut by_id = BTreeMap::new();
        for (i, e) in edgels.iter().enumerate() {
            let cx = (((e.position.x - lo.x) / cell) as usize).min(nx - 1);
            let cy = (((e.position.y - lo.y) / cell) as usize).min(ny - 1);
            cells[cy * nx + cx].push(i as u32);
            by_id.insert(e.edgel_id, i as u32);
        }
        Self { origin: lo, cell, nx, ny, cells, edgels, by_id }
    }

    fn query(&self, p: &Point2<f64>, radius: f64) -> Vec<&Edgel2D> {
        let mut out = Vec::new();
        if self.edgels.is_empty() || !(radius >= 0.0) {
            return out;
        }
        let to_cell = |v: f64, o: f64, n: usize| -> Option<(usize, usize)> {
            let lo = ((v - radius - o) / self.cell).floor();
            let hi = ((v + radius - o) / self.cell).floor();
            if hi < 0.0 || lo > (n - 1) as f64 {
                return None;
            }
            Some((lo.max(0.0) as usize, (hi as usize).min(n - 1)))
        };
        let (Some((x0, x1)), Some((y0, y1))) =
            (to_cell(p.x, self.origin.x, self.nx), to_cell(p.y, self.origin.y, self.ny))
        else {
            return out;
        };
        let r2 = radius * radius;
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                for &i in &self.cells[cy * self.nx + cx] {
                    let e = &self.edgels[i as usize];
                    if (e.position - p).norm_squared() <= r2 {
                        out.push(e);
                    }
                }
            }
        }
        out.sort_by_key(|e| e.edgel_id);
        out
    }
}

/// Uniform-grid radius index over the edgels of every view.
#[derive(Debug, Clone)]
pub struct EdgelIndex {
    views: BTreeMap<usize, ViewGrid>,
}

impl EdgelIndex {
    /// `cell` should match the typical query radius so that queries touch a
    /// single ring of cells.
    pub fn build(views: &[ViewCurves], cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let views = views
            .iter()
            .map(|vc| (vc.view_id, ViewGrid::build(vc.edgels().cloned().collect(), cell)))
            .collect();
        Self { views }
    }

    pub fn from_edgels(view_id: usize, edgels: Vec<Edgel2D>, cell: f64) -> Self {
        let mut views = BTreeMap::new();
        views.insert(view_id, ViewGrid::build(edgels, cell));
        Self { views }
    }

    pub fn has_view(&self, view: usize) -> bool {
        self.views.contains_key(&view)
    }

    pub fn view_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.views.keys().copied()
    }

    pub fn edgel(&self, view: usize, edgel_id: usize) -> Option<&Edgel2D> {
        let g = self.views.get(&view)?;
        g.by_id.get(&edgel_id).map(|&i| &g.edgels[i as usize])
    }

    /// Edgels of `view` within Euclidean distance `radius` of `p`, sorted by id.
    pub fn query_edgels(&self, view: usize, p: &Point2<f64>, radius: f64) -> Result<Vec<&Edgel2D>, CurveError> {
        let g = self.views.get(&view).ok_or(CurveError::UnknownView(view))?;
        Ok(g.query(p, radius))
    }
}

pub fn query_edgels<'a>(
    index: &'a EdgelIndex,
    view: usize,
    p: &Point2<f64>,
    radius: f64,
) -> Result<Vec<&'a Edgel2D>, CurveError> {
    index.query_edgels(view, p, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn curve3(points: &[[f64; 3]]) -> Curve3D {
        let samples = points.iter().map(|p| Sample3D::new(Point3::new(p[0], p[1], p[2]))).collect();
        Curve3D::new(0, 0, samples).unwrap()
    }

    #[test]
    fn unit_segment_and_square() {
        assert_eq!(curve3(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).arc_length(), 1.0);
        let square = curve3(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0],
        ]);
        assert_eq!(square.arc_length(), 4.0);
    }

    #[test]
    fn dense_circle_length() {
        let pts: Vec<[f64; 3]> = (0..=1000)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 1000.0;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let mut pts = pts;
        // close exactly without a duplicated point
        *pts.last_mut().unwrap() = [1.0, 1e-12, 0.0];
        assert_abs_diff_eq!(curve3(&pts).arc_length(), 2.0 * PI, epsilon = 1e-4);
    }

    #[test]
    fn straight_resample_quarter_spacing() {
        let c = curve3(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let r = resample_uniform(&c, 0.25).unwrap();
        assert_eq!(r.len(), 5);
        for (i, s) in r.samples().iter().enumerate() {
            assert_abs_diff_eq!(s.position.x, 0.25 * i as f64, epsilon = 1e-15);
            assert_eq!(s.position.y, 0.0);
        }
        let again = resample_uniform(&r, 0.25).unwrap();
        for (a, b) in r.samples().iter().zip(again.samples()) {
            assert!((a.position - b.position).norm() < 1e-9);
        }
    }

    #[test]
    fn resample_errors() {
        let c = curve3(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(resample_uniform(&c, 2.0), Err(CurveError::SpacingTooLarge { .. })));
        assert!(matches!(resample_uniform(&c, 0.0), Err(CurveError::InvalidSpacing(_))));
    }

    #[test]
    fn resample_inherits_nearest_support() {
        let mut samples: Vec<Sample3D> =
            (0..3).map(|i| Sample3D::new(Point3::new(i as f64, 0.0, 0.0))).collect();
        for (i, s) in samples.iter_mut().enumerate() {
            s.support.entry(4).or_default().insert(10 + i);
        }
        let c = Curve3D::new(1, 4, samples).unwrap();
        let (r, src) = resample_uniform_with_sources(&c, 0.5).unwrap();
        assert_eq!(src, vec![0, 1, 1, 2, 2]);
        assert!(r.samples()[3].support[&4].contains(&12));
        assert!(r.samples()[1].support[&4].contains(&11));
    }

    #[test]
    fn curve_validation() {
        let e = |x: f64, view| Edgel2D { position: Point2::new(x, 0.0), orientation: 0.0, view_id: view, edgel_id: 0 };
        assert!(matches!(Curve2D::new(0, 0, vec![e(0.0, 0)]), Err(CurveError::TooShort { .. })));
        assert!(matches!(Curve2D::new(0, 0, vec![e(0.0, 0), e(0.0, 0)]), Err(CurveError::RepeatedPoint { .. })));
        assert!(matches!(Curve2D::new(0, 0, vec![e(0.0, 0), e(1.0, 1)]), Err(CurveError::MixedViews { .. })));
    }

    #[test]
    fn orientation_helpers() {
        assert_abs_diff_eq!(wrap_orientation(-0.25 * PI), 0.75 * PI, epsilon = 1e-15);
        assert_abs_diff_eq!(orientation_difference(0.05, PI - 0.05), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(orientation_of(&Vector2::new(-1.0, 0.0)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_and_single_edgel_queries() {
        let idx = EdgelIndex::from_edgels(0, vec![], 2.0);
        assert!(idx.query_edgels(0, &Point2::new(1.0, 1.0), 5.0).unwrap().is_empty());
        assert!(matches!(idx.query_edgels(9, &Point2::origin(), 1.0), Err(CurveError::UnknownView(9))));
        let e = Edgel2D { position: Point2::new(3.0, 4.0), orientation: 0.3, view_id: 0, edgel_id: 7 };
        let idx = EdgelIndex::from_edgels(0, vec![e.clone()], 2.0);
        let hits = idx.query_edgels(0, &Point2::new(3.0, 4.0), 1.0).unwrap();
        assert_eq!(hits, vec![&e]);
        assert_eq!(idx.edgel(0, 7), Some(&e));
    }
}
