use std::ops::Range;

use nalgebra::{Point3, Vector3};

use crate::spatial::PolylineIndex;

/// Overlap runs shorter than this many samples are discarded, and gaps
/// shorter than this between two overlap runs are closed.
pub const MIN_OVERLAP_RUN: usize = 3;

/// Samples only overlap when the two curves run within this angle of each
/// other; transversal crossings are not overlaps.
const MAX_OVERLAP_ANGLE_DEG: f64 = 30.0;

/// Which samples of curve `from` lie on curve `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMask {
    pub from: usize,
    pub to: usize,
    pub mask: Vec<bool>,
    /// Fractional sample index of the closest point on `to`.
    pub closest: Vec<f64>,
    pub distance: Vec<f64>,
    /// Sample count of `to`.
    pub to_len: usize,
}

impl OverlapMask {
    /// Maximal runs of overlapping samples.
    pub fn true_runs(&self) -> Vec<Range<usize>> {
        runs(&self.mask, true)
    }
}

pub(crate) fn runs(mask: &[bool], value: bool) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < mask.len() {
        if mask[k] != value {
            k += 1;
            continue;
        }
        let start = k;
        while k < mask.len() && mask[k] == value {
            k += 1;
        }
        out.push(start..k);
    }
    out
}

/// Closes short gaps between overlap runs, then drops short runs.
pub(crate) fn clean_mask(mask: &mut [bool], min_run: usize) {
    for r in runs(mask, false) {
        if r.start > 0 && r.end < mask.len() && r.len() < min_run {
            mask[r].iter_mut().for_each(|m| *m = true);
        }
    }
    for r in runs(mask, true) {
        if r.len() < min_run {
            mask[r].iter_mut().for_each(|m| *m = false);
        }
    }
}

/// Half-width, in samples, of the chord used to estimate tangents; wide
/// enough that sample noise does not swamp the direction.
const TANGENT_HALF_WINDOW: usize = 8;

/// Unit chord direction around sample `k`.
pub(crate) fn tangent(points: &[Point3<f64>], k: usize) -> Vector3<f64> {
    let n = points.len();
    let (a, b) = (k.saturating_sub(TANGENT_HALF_WINDOW), (k + TANGENT_HALF_WINDOW).min(n - 1));
    let d = points[b] - points[a];
    let len = d.norm();
    if len > 0.0 {
        d / len
    } else {
        Vector3::zeros()
    }
}

/// Tangent at a closest point given by segment and segment parameter.
pub(crate) fn tangent_at(points: &[Point3<f64>], segment: usize, t: f64) -> Vector3<f64> {
    tangent(points, if t < 0.5 { segment } else { segment + 1 }.min(points.len() - 1))
}

pub(crate) fn roughly_parallel(t1: &Vector3<f64>, t2: &Vector3<f64>) -> bool {
    t1.dot(t2).abs() >= MAX_OVERLAP_ANGLE_DEG.to_radians().cos()
}

/// Overlap of curve `from` (points `pi`) onto curve `to` (points `pj`): a
/// sample overlaps when it lies within `d_merge` of `to` and runs roughly
/// parallel to it there.
pub fn overlap_mask(from: usize, to: usize, pi: &[Point3<f64>], pj: &[Point3<f64>], d_merge: f64) -> OverlapMask {
    let index = PolylineIndex::new(vec![pj.to_vec()], d_merge.max(f64::MIN_POSITIVE) * 2.0);
    let mut mask = Vec::with_capacity(pi.len());
    let mut closest = Vec::with_capacity(pi.len());
    let mut distance = Vec::with_capacity(pi.len());
    for (k, p) in pi.iter().enumerate() {
        let cp = index.nearest(p).expect("target curve has samples");
        let on = cp.distance <= d_merge && roughly_parallel(&tangent(pi, k), &tangent_at(pj, cp.segment, cp.t));
        mask.push(on);
        closest.push(cp.param());
        distance.push(cp.distance);
    }
    clean_mask(&mut mask, MIN_OVERLAP_RUN);
    OverlapMask { from, to, mask, closest, distance, to_len: pj.len() }
}

/// Overlap masks for every ordered pair of distinct curves.
pub fn compute_overlap_masks(curves: &[Vec<Point3<f64>>], d_merge: f64) -> Vec<OverlapMask> {
    let mut out = Vec::new();
    for i in 0..curves.len() {
        for j in 0..curves.len() {
            if i != j {
                out.push(overlap_mask(i, j, &curves[i], &curves[j], d_merge));
            }
        }
    }
    out
}

/// The elementary ways two curves can interact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveKind {
    /// The head of the first curve overlaps an end of the second.
    HeadOverlap,
    /// The tail of the first curve overlaps an end of the second.
    TailOverlap,
    /// An end of one curve overlaps the interior of the other.
    EndInterior,
    /// Interior stretches overlap; `identity` when the curves coincide
    /// entirely.
    InteriorInterior { identity: bool },
    /// A stretch of the first curve leaves the second and rejoins it.
    Bridge,
    /// Several curve ends meet at one point.
    MultiEndAttachment,
}

impl PrimitiveKind {
    /// Conventional number of the primitive, 1 to 6.
    pub fn number(&self) -> u8 {
        match self {
            PrimitiveKind::HeadOverlap => 1,
            PrimitiveKind::TailOverlap => 2,
            PrimitiveKind::EndInterior => 3,
            PrimitiveKind::InteriorInterior { .. } => 4,
            PrimitiveKind::Bridge => 5,
            PrimitiveKind::MultiEndAttachment => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergePrimitive {
    pub kind: PrimitiveKind,
    /// Samples of the first curve involved.
    pub run: Range<usize>,
    /// Parameter range on the second curve (ordered low to high).
    pub other: (f64, f64),
}

/// Decomposes the interaction of curve `i` with curve `j` into primitives by
/// scanning the overlap runs of `i` along `j` and the gaps between them.
pub fn classify_merge_primitive(mask_ij: &OverlapMask, mask_ji: &OverlapMask) -> Vec<MergePrimitive> {
    let n_i = mask_ij.mask.len();
    let n_j = mask_ij.to_len;
    let slack = MIN_OVERLAP_RUN as f64;
    let true_runs = mask_ij.true_runs();
    let mut out = Vec::new();
    for (r, run) in true_runs.iter().enumerate() {
        let params = &mask_ij.closest[run.clone()];
        let lo = params.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = params.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let i_head = run.start == 0;
        let i_tail = run.end == n_i;
        let j_head = lo <= slack && mask_ji.mask.first() == Some(&true);
        let j_tail = hi >= (n_j - 1) as f64 - slack && mask_ji.mask.last() == Some(&true);
        let kind = if i_head && i_tail && j_head && j_tail {
            PrimitiveKind::InteriorInterior { identity: true }
        } else if (i_head && i_tail) || (j_head && j_tail) {
            PrimitiveKind::EndInterior
        } else if (i_head || i_tail) && (j_head || j_tail) {
            if i_head {
                PrimitiveKind::HeadOverlap
            } else {
                PrimitiveKind::TailOverlap
            }
        } else if i_head || i_tail || j_head || j_tail {
            PrimitiveKind::EndInterior
        } else {
            PrimitiveKind::InteriorInterior { identity: false }
        };
        out.push(MergePrimitive { kind, run: run.clone(), other: (lo, hi) });
        if let Some(next) = true_runs.get(r + 1) {
            let a = mask_ij.closest[run.end - 1];
            let b = mask_ij.closest[next.start];
            out.push(MergePrimitive { kind: PrimitiveKind::Bridge, run: run.end..next.start, other: (a.min(b), a.max(b)) });
        }
    }
    out
}
