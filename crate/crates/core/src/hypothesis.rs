//! Curve-pair hypotheses: pair image curves from two views whose epipolar
//! bands overlap, and triangulate the matched points into a 3D curve.

use std::fmt::Write as _;

use nalgebra::Point2;
use rayon::prelude::*;

use crate::curve::{Curve2D, Curve3D, Sample3D};
use crate::dataset::Dataset;
use crate::geometry::{tangency_weight, triangulate, Camera, EpipolarPair, GeometryError};

/// One matched point: an edgel of the first curve and a fractional edgel
/// index on the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub index1: usize,
    pub param2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarOverlap {
    /// Fraction of the first curve's edgels in the matched chain.
    pub fraction: f64,
    /// Longest chain of matches that is increasing in `index1` and monotone
    /// (in either direction) in `param2`.
    pub correspondence: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePairHypothesis {
    pub view1: usize,
    pub view2: usize,
    pub curve1_id: usize,
    pub curve2_id: usize,
    pub overlap_fraction: f64,
    /// One entry per reconstruction sample.
    pub correspondence: Vec<Correspondence>,
    pub reconstruction: Curve3D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisParams {
    pub tau_overlap: f64,
    pub min_curve_edgels: usize,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        Self { tau_overlap: 0.5, min_curve_edgels: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewPairStrategy {
    Exhaustive,
    /// Pairs whose view positions differ by at most `w`.
    BaselineWindow(usize),
}

/// View position pairs `(v1, v2)` with `v1 < v2`, in lexicographic order.
pub fn enumerate_view_pairs(n_views: usize, strategy: ViewPairStrategy) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..n_views {
        for b in a + 1..n_views {
            match strategy {
                ViewPairStrategy::Exhaustive => out.push((a, b)),
                ViewPairStrategy::BaselineWindow(w) if b - a <= w => out.push((a, b)),
                ViewPairStrategy::BaselineWindow(_) => {}
            }
        }
    }
    out
}

const CHUNK: usize = 16;

/// Bounding boxes of consecutive edgel chunks, for quick line rejection.
struct ChunkedCurve<'a> {
    curve: &'a Curve2D,
    boxes: Vec<(Point2<f64>, Point2<f64>)>,
}

impl<'a> ChunkedCurve<'a> {
    fn new(curve: &'a Curve2D) -> Self {
        let n = curve.len();
        let mut boxes = Vec::new();
        let mut start = 0;
        while start + 1 < n {
            let end = (start + CHUNK).min(n - 1);
            let mut lo = curve.point(start);
            let mut hi = lo;
            for k in start..=end {
                let p = curve.point(k);
                lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            boxes.push((lo, hi));
            start = end;
        }
        Self { curve, boxes }
    }

    /// Fractional indices where the line crosses the polyline.
    fn crossings(&self, line: &crate::geometry::EpipolarLine) -> Vec<f64> {
        let mut out = Vec::new();
        let n = self.curve.len();
        for (ci, (lo, hi)) in self.boxes.iter().enumerate() {
            let corners = [
                Point2::new(lo.x, lo.y),
                Point2::new(lo.x, hi.y),
                Point2::new(hi.x, lo.y),
                Point2::new(hi.x, hi.y),
            ];
            let (mut neg, mut pos) = (false, false);
            for c in &corners {
                let d = line.signed_distance(c);
                neg |= d <= 0.0;
                pos |= d >= 0.0;
            }
            if !(neg && pos) {
                continue;
            }
            let start = ci * CHUNK;
            let end = (start + CHUNK).min(n - 1);
            for k in start..end {
                let d0 = line.signed_distance(&self.curve.point(k));
                let d1 = line.signed_distance(&self.curve.point(k + 1));
                if (d0 <= 0.0 && d1 > 0.0) || (d0 >= 0.0 && d1 < 0.0) {
                    out.push(k as f64 + d0 / (d0 - d1));
                }
            }
        }
        if line.signed_distance(&self.curve.point(n - 1)) == 0.0 {
            out.push((n - 1) as f64);
        }
        out
    }
}

/// Longest chain, strictly increasing in the first index and non-decreasing in
/// the key. `groups[i]` holds the candidate keys for index `i`.
fn longest_chain(groups: &[Vec<(f64, f64)>]) -> Vec<(usize, f64)> {
    // (key, original value) candidates per index; tails hold the smallest key
    // ending a chain of each length.
    let mut tails: Vec<f64> = Vec::new();
    let mut tail_ids: Vec<usize> = Vec::new();
    let mut nodes: Vec<(usize, f64, Option<usize>)> = Vec::new();
    for (i, cands) in groups.iter().enumerate() {
        let mut updates = Vec::with_capacity(cands.len());
        for &(key, value) in cands {
            let pos = tails.partition_point(|&t| t <= key);
            let pred = if pos > 0 { Some(tail_ids[pos - 1]) } else { None };
            nodes.push((i, value, pred));
            updates.push((pos, key, nodes.len() - 1));
        }
        for (pos, key, id) in updates {
            if pos == tails.len() {
                tails.push(key);
                tail_ids.push(id);
            } else if key < tails[pos] {
                tails[pos] = key;
                tail_ids[pos] = id;
            }
        }
    }
    let mut out = Vec::with_capacity(tails.len());
    let mut cur = tail_ids.last().copied();
    while let Some(id) = cur {
        let (i, v, pred) = nodes[id];
        out.push((i, v));
        cur = pred;
    }
    out.reverse();
    out
}

fn overlap_with(pair: &EpipolarPair, c1: &Curve2D, c2: &Curve2D) -> Result<EpipolarOverlap, GeometryError> {
    let chunked = ChunkedCurve::new(c2);
    let mut groups = Vec::with_capacity(c1.len());
    for e in c1.edgels() {
        let line = pair.line(&e.position)?;
        groups.push(chunked.crossings(&line));
    }
    let forward: Vec<Vec<(f64, f64)>> = groups.iter().map(|g| g.iter().map(|&t| (t, t)).collect()).collect();
    let backward: Vec<Vec<(f64, f64)>> = groups.iter().map(|g| g.iter().map(|&t| (-t, t)).collect()).collect();
    let up = longest_chain(&forward);
    let down = longest_chain(&backward);
    let chain = if down.len() > up.len() { down } else { up };
    Ok(EpipolarOverlap {
        fraction: chain.len() as f64 / c1.len() as f64,
        correspondence: chain.into_iter().map(|(index1, param2)| Correspondence { index1, param2 }).collect(),
    })
}

pub fn epipolar_overlap(c1: &Curve2D, c2: &Curve2D, cam1: &Camera, cam2: &Camera) -> Result<EpipolarOverlap, GeometryError> {
    let pair = EpipolarPair::new(cam1, cam2)?;
    overlap_with(&pair, c1, c2)
}

struct PairGeometry<'a> {
    cam1: &'a Camera,
    cam2: &'a Camera,
    forward: EpipolarPair,
    backward: EpipolarPair,
}

fn reconstruct(
    geo: &PairGeometry<'_>,
    c1: &Curve2D,
    c2: &Curve2D,
    overlap: &EpipolarOverlap,
) -> (Vec<Correspondence>, Vec<Sample3D>) {
    let mut corr = Vec::with_capacity(overlap.correspondence.len());
    let mut samples: Vec<Sample3D> = Vec::with_capacity(overlap.correspondence.len());
    for m in &overlap.correspondence {
        let e1 = &c1.edgels()[m.index1];
        let p2 = c2.point_at(m.param2);
        let Ok(x) = triangulate(geo.cam1, geo.cam2, &e1.position, &p2) else {
            continue;
        };
        if geo.cam1.depth(&x) <= crate::geometry::EPS_DEPTH || geo.cam2.depth(&x) <= crate::geometry::EPS_DEPTH {
            continue;
        }
        if samples.last().is_some_and(|s| s.position == x) {
            continue;
        }
        let e2 = c2.nearest_edgel(m.param2);
        let w2 = geo.forward.line(&e1.position).map(|l| tangency_weight(&e2.tangent(), &l)).unwrap_or(0.0);
        let w1 = geo.backward.line(&p2).map(|l| tangency_weight(&e1.tangent(), &l)).unwrap_or(0.0);
        let mut s = Sample3D::new(x);
        s.reliability = w1.min(w2);
        s.support.entry(c1.view_id()).or_default().insert(e1.edgel_id);
        s.support.entry(c2.view_id()).or_default().insert(e2.edgel_id);
        samples.push(s);
        corr.push(*m);
    }
    (corr, samples)
}

/// All hypotheses between two views, ordered by `(curve1_id, curve2_id)`.
/// Reconstructions carry `curve_id = 0`; [`generate_all`] numbers them.
pub fn generate_hypotheses(
    view1: usize,
    view2: usize,
    data: &Dataset,
    params: &HypothesisParams,
) -> Result<Vec<CurvePairHypothesis>, GeometryError> {
    let (Some(cam1), Some(cam2)) = (data.cameras.get(&view1), data.cameras.get(&view2)) else {
        return Ok(Vec::new());
    };
    let (Some(vc1), Some(vc2)) = (data.views.get(&view1), data.views.get(&view2)) else {
        return Ok(Vec::new());
    };
    let geo = PairGeometry { cam1, cam2, forward: EpipolarPair::new(cam1, cam2)?, backward: EpipolarPair::new(cam2, cam1)? };
    let mut out = Vec::new();
    for c1 in vc1.curves.iter().filter(|c| c.len() >= params.min_curve_edgels) {
        for c2 in vc2.curves.iter().filter(|c| c.len() >= params.min_curve_edgels) {
            let overlap = overlap_with(&geo.forward, c1, c2)?;
            if overlap.fraction < params.tau_overlap {
                continue;
            }
            let (correspondence, samples) = reconstruct(&geo, c1, c2, &overlap);
            let Ok(reconstruction) = Curve3D::new(0, view1, samples) else {
                continue;
            };
            out.push(CurvePairHypothesis {
                view1,
                view2,
                curve1_id: c1.curve_id(),
                curve2_id: c2.curve_id(),
                overlap_fraction: overlap.fraction,
                correspondence,
                reconstruction,
            });
        }
    }
    out.sort_by_key(|h| (h.curve1_id, h.curve2_id));
    Ok(out)
}

/// Hypotheses over the given view-id pairs, sorted by
/// `(view1, view2, curve1_id, curve2_id)` and numbered in that order.
pub fn generate_all(
    data: &Dataset,
    pairs: &[(usize, usize)],
    params: &HypothesisParams,
) -> Result<Vec<CurvePairHypothesis>, GeometryError> {
    let per_pair: Vec<Result<Vec<CurvePairHypothesis>, GeometryError>> =
        pairs.par_iter().map(|&(a, b)| generate_hypotheses(a, b, data, params)).collect();
    let mut all = Vec::new();
    for r in per_pair {
        all.extend(r?);
    }
    all.sort_by_key(|h| (h.view1, h.view2, h.curve1_id, h.curve2_id));
    for (k, h) in all.iter_mut().enumerate() {
        h.reconstruction.curve_id = k;
    }
    Ok(all)
}

/// One line per hypothesis: `id view1 view2 curve1 curve2 overlap samples`.
pub fn dump_hypotheses(hyps: &[CurvePairHypothesis]) -> String {
    let mut s = String::from("# id view1 view2 curve1 curve2 overlap_fraction samples\n");
    for h in hyps {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            h.reconstruction.curve_id,
            h.view1,
            h.view2,
            h.curve1_id,
            h.curve2_id,
            h.overlap_fraction,
            h.reconstruction.len()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_pair_counts() {
        assert_eq!(enumerate_view_pairs(3, ViewPairStrategy::Exhaustive), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(enumerate_view_pairs(5, ViewPairStrategy::BaselineWindow(1)).len(), 4);
        assert_eq!(enumerate_view_pairs(25, ViewPairStrategy::Exhaustive).len(), 300);
    }

    #[test]
    fn chain_prefers_consistent_order() {
        let groups = vec![vec![(0.0, 0.0), (9.0, 9.0)], vec![(1.0, 1.0)], vec![(0.5, 0.5), (2.0, 2.0)], vec![], vec![(3.0, 3.0)]];
        let chain = longest_chain(&groups);
        assert_eq!(chain, vec![(0, 0.0), (1, 1.0), (2, 2.0), (4, 3.0)]);
    }

    #[test]
    fn chain_uses_one_match_per_index() {
        let groups = vec![vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]];
        assert_eq!(longest_chain(&groups).len(), 1);
    }
}
