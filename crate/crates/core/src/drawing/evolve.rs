use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::primitives::{roughly_parallel, tangent, tangent_at};
use crate::spatial::{closest_on_segment, PolylineIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveParams {
    /// Step size; 1 moves each sample straight to the average.
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop once no sample moves farther than this in one iteration.
    pub tol: f64,
    /// Linked curves farther than this from a sample do not pull it.
    pub reach: f64,
}

impl EvolveParams {
    /// Defaults for curves sampled at spacing `ds`.
    pub fn for_spacing(ds: f64) -> Self {
        Self { alpha: 1.0, max_iters: 50, tol: ds / 100.0, reach: 20.0 * ds }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub curves: Vec<Vec<Point3<f64>>>,
    pub iterations: usize,
    /// False when `max_iters` was reached before the displacement fell below
    /// the tolerance. Not an error: the last generation is still usable.
    pub converged: bool,
    pub max_displacement: f64,
}

fn index_cell(curves: &[Vec<Point3<f64>>]) -> f64 {
    let mut lens: Vec<f64> = curves.iter().flat_map(|c| c.windows(2).map(|w| (w[1] - w[0]).norm())).collect();
    if lens.is_empty() {
        return 1.0;
    }
    lens.sort_by(f64::total_cmp);
    (lens[lens.len() / 2] * 4.0).max(f64::MIN_POSITIVE)
}

/// Whether `p` projects past either end of `pl` from its closest segment,
/// i.e. the partner curve stops before reaching the sample.
fn beyond_end(p: &Point3<f64>, pl: &[Point3<f64>], segment: usize) -> bool {
    let last = pl.len() - 2;
    let raw = |s: usize| {
        let d = pl[s + 1] - pl[s];
        let len2 = d.norm_squared();
        if len2 > 0.0 { (p - pl[s]).dot(&d) / len2 } else { 0.5 }
    };
    (segment == 0 && raw(0) < -END_SLACK) || (segment == last && raw(last) > 1.0 + END_SLACK)
}

/// Overhang, in segments, tolerated before a partner counts as ended.
const END_SLACK: f64 = 0.5;

/// Closest point to `p` on `pl`, found by walking from segment `seg`
/// towards decreasing distance. Returns the segment and the point.
fn track_closest(p: &Point3<f64>, pl: &[Point3<f64>], seg: usize) -> (usize, Point3<f64>) {
    let last = pl.len().saturating_sub(2);
    let eval = |s: usize| closest_on_segment(p, &pl[s], &pl[s + 1]).1;
    let mut seg = seg.min(last);
    let mut best = eval(seg);
    let mut best_d = (p - best).norm_squared();
    for step in [1isize, -1] {
        loop {
            let next = seg as isize + step;
            if next < 0 || next as usize > last {
                break;
            }
            let q = eval(next as usize);
            let d = (p - q).norm_squared();
            if d >= best_d {
                break;
            }
            (seg, best, best_d) = (next as usize, q, d);
        }
    }
    (seg, best)
}

/// Moves every sample towards the average of itself and its closest points
/// on the curves it is linked to, repeating until the curves stop moving.
///
/// `partners[a][k]` lists the curves (indices into `curves`) that sample `k`
/// of curve `a` is linked to. A linked curve pulls a sample only if, on the
/// input curves, its closest point lies within `reach`, is not clamped to
/// the partner's end, and the two curves run roughly parallel there, so
/// curves meeting at a corner or overlapping only in part do not drag each
/// other. Closest points are then tracked along the partner
/// curves from one iteration to the next. Every iteration reads the previous
/// generation only, so the result does not depend on processing order.
pub fn evolve_cluster(curves: &[Vec<Point3<f64>>], partners: &[Vec<Vec<usize>>], params: &EvolveParams) -> Evolution {
    assert_eq!(curves.len(), partners.len(), "one partner list per curve");
    let mut current = curves.to_vec();
    let mut iterations = 0;
    let mut max_displacement = 0.0;
    let has_links = partners.iter().any(|p| p.iter().any(|s| !s.is_empty()));
    if !has_links {
        return Evolution { curves: current, iterations, converged: true, max_displacement };
    }
    let cell = index_cell(curves).max(params.reach / 2.0);
    let indices: Vec<PolylineIndex> = curves.par_iter().map(|c| PolylineIndex::new(vec![c.clone()], cell)).collect();
    // Accepted partners of every sample, with the segment of the closest point.
    let mut tracks: Vec<Vec<Vec<(usize, usize)>>> = curves
        .par_iter()
        .enumerate()
        .map(|(a, curve)| {
            curve
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let linked = partners[a].get(k).map(Vec::as_slice).unwrap_or(&[]);
                    let t = tangent(curve, k);
                    linked
                        .iter()
                        .filter(|&&b| b != a && curves[b].len() >= 2)
                        .filter_map(|&b| {
                            let cp = indices[b].nearest_within(p, params.reach)?;
                            let beside = !beyond_end(p, &curves[b], cp.segment);
                            let parallel = roughly_parallel(&t, &tangent_at(&curves[b], cp.segment, cp.t));
                            (beside && parallel).then_some((b, cp.segment))
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    while iterations < params.max_iters {
        let next: Vec<(Vec<Point3<f64>>, Vec<Vec<(usize, usize)>>, f64)> = current
            .par_iter()
            .enumerate()
            .map(|(a, curve)| {
                let mut moved = 0.0_f64;
                let mut new_tracks = Vec::with_capacity(curve.len());
                let out = curve
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        // Offsets rather than positions, so coincident curves stay put exactly.
                        let mut sum = Vector3::zeros();
                        let mut count = 1.0;
                        let mut kept = Vec::with_capacity(tracks[a][k].len());
                        for &(b, seg) in &tracks[a][k] {
                            let (seg, q) = track_closest(p, &current[b], seg);
                            sum += q - p;
                            count += 1.0;
                            kept.push((b, seg));
                        }
                        new_tracks.push(kept);
                        let q = p + sum / count * params.alpha;
                        moved = moved.max((q - p).norm());
                        q
                    })
                    .collect();
                (out, new_tracks, moved)
            })
            .collect();
        iterations += 1;
        max_displacement = next.iter().map(|(_, _, d)| *d).fold(0.0, f64::max);
        (current, tracks) = next.into_iter().map(|(c, t, _)| (c, t)).unzip();
        if max_displacement < params.tol {
            return Evolution { curves: current, iterations, converged: true, max_displacement };
        }
    }
    Evolution { curves: current, iterations, converged: false, max_displacement }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(y: f64, n: usize) -> Vec<Point3<f64>> {
        (0..n).map(|k| Point3::new(k as f64 * 0.1, y, 0.0)).collect()
    }

    #[test]
    fn parallel_lines_meet_at_midline() {
        let curves = vec![line(0.0, 11), line(0.4, 11)];
        let partners = vec![vec![vec![1]; 11], vec![vec![0]; 11]];
        let params = EvolveParams { alpha: 1.0, max_iters: 1, tol: 1e-3, reach: 1.0 };
        let ev = evolve_cluster(&curves, &partners, &params);
        for c in &ev.curves {
            for (k, p) in c.iter().enumerate() {
                assert!((p - Point3::new(k as f64 * 0.1, 0.2, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_is_unchanged() {
        let curves = vec![line(1.0, 5)];
        let ev = evolve_cluster(&curves, &[vec![vec![]; 5]], &EvolveParams::for_spacing(0.1));
        assert_eq!(ev.curves, curves);
        assert!(ev.converged);
    }

    #[test]
    fn unlinked_samples_stay_put() {
        let curves = vec![line(0.0, 11), line(0.4, 11)];
        let mut p0 = vec![vec![1]; 11];
        for s in p0.iter_mut().take(5) {
            s.clear();
        }
        let partners = vec![p0, vec![vec![]; 11]];
        let ev = evolve_cluster(&curves, &partners, &EvolveParams { alpha: 1.0, max_iters: 1, tol: 0.0, reach: 1.0 });
        assert_eq!(ev.curves[0][..5], curves[0][..5]);
        assert!((ev.curves[0][8].y - 0.2).abs() < 1e-12);
        assert_eq!(ev.curves[1], curves[1]);
    }
}
