//! Reconciles redundant reconstructions that share a primary hypothesis view.
//!
//! Every sample produced by a hypothesis is tied to exactly one edgel of its
//! primary view, so samples from different hypotheses that share that edgel
//! describe the same scene point. They are grouped per primary edgel and
//! replaced by an outlier-rejecting average.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use thiserror::Error;

use crate::curve::{Curve3D, Sample3D, SupportMap};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AveragingError {
    #[error("sample {sample} of curve {curve_id} has no support in its primary view {view}")]
    MissingPrimarySupport { curve_id: usize, sample: usize, view: usize },
}

/// `(primary view, primary edgel id)`.
pub type BucketKey = (usize, usize);

/// Location of a sample: `(curve index in the input slice, sample index)`.
pub type SampleRef = (usize, usize);

fn primary_edgel(curve: &Curve3D, k: usize, s: &Sample3D) -> Result<usize, AveragingError> {
    s.support
        .get(&curve.primary_view)
        .and_then(|ids| ids.first().copied())
        .ok_or(AveragingError::MissingPrimarySupport { curve_id: curve.curve_id, sample: k, view: curve.primary_view })
}

/// Buckets every sample by the (lowest-id) edgel supporting it in its curve's
/// primary view.
pub fn group_by_primary_edge(curves: &[Curve3D]) -> Result<BTreeMap<BucketKey, Vec<SampleRef>>, AveragingError> {
    let mut buckets: BTreeMap<BucketKey, Vec<SampleRef>> = BTreeMap::new();
    for (ci, c) in curves.iter().enumerate() {
        for (k, s) in c.samples().iter().enumerate() {
            let e = primary_edgel(c, k, s)?;
            buckets.entry((c.primary_view, e)).or_default().push((ci, k));
        }
    }
    Ok(buckets)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    // Sum in a canonical order so the result does not depend on input order.
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
    let sum: Vector3<f64> = pts.iter().map(|p| p.coords).sum();
    Point3::from(sum / pts.len() as f64)
}

/// Indices of the bucket members kept by the outlier test.
///
/// A Gaussian is fitted to the population of pairwise distances with the
/// median as its centre and the scaled median absolute deviation as its
/// spread. A member is discarded when its median distance to the others lies
/// more than `2 sigma` above that centre.
pub fn robust_inliers(bucket: &[Point3<f64>]) -> Vec<usize> {
    let n = bucket.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut per_member = vec![Vec::with_capacity(n - 1); n];
    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = (bucket[i] - bucket[j]).norm();
            per_member[i].push(d);
            per_member[j].push(d);
            all.push(d);
        }
    }
    let all = sorted(all);
    if *all.last().unwrap() == 0.0 {
        return (0..n).collect();
    }
    let mu = median(&all);
    let mad = median(&sorted(all.iter().map(|d| (d - mu).abs()).collect()));
    let sigma = 1.4826 * mad;
    let threshold = mu + 2.0 * sigma;
    let kept: Vec<usize> = (0..n)
        .filter(|&i| median(&sorted(std::mem::take(&mut per_member[i]))) <= threshold)
        .collect();
    if kept.is_empty() {
        (0..n).collect()
    } else {
        kept
    }
}

/// Centroid of the bucket after discarding outliers; buckets of one or two
/// points return their plain centroid.
pub fn robust_average(bucket: &[Point3<f64>]) -> Point3<f64> {
    assert!(!bucket.is_empty(), "robust_average needs a non-empty bucket");
    let kept: Vec<Point3<f64>> = robust_inliers(bucket).into_iter().map(|i| bucket[i]).collect();
    centroid(&kept)
}

/// Largest gap in primary edgel ids tolerated inside one fused curve.
const MAX_EDGEL_GAP: usize = 3;

/// Replaces every sample by its bucket's robust average and joins curves
/// that share buckets into one curve ordered along the primary 2D curve.
///
/// Curves sharing buckets come from the same primary image curve, so the
/// union of their buckets ordered by primary edgel id is a single, longer
/// chain; shorter redundant copies disappear into it.
pub fn fuse_redundant(curves: &[Curve3D]) -> Result<Vec<Curve3D>, AveragingError> {
    let buckets = group_by_primary_edge(curves)?;
    let keys: Vec<BucketKey> = buckets.keys().copied().collect();
    let fused: Vec<Sample3D> = keys
        .par_iter()
        .map(|key| {
            let members = &buckets[key];
            let points: Vec<Point3<f64>> = members.iter().map(|&(c, k)| curves[c].samples()[k].position).collect();
            let mut support = SupportMap::new();
            let mut reliability: f64 = 0.0;
            for &(c, k) in members {
                let s = &curves[c].samples()[k];
                for (v, ids) in &s.support {
                    support.entry(*v).or_default().extend(ids.iter().copied());
                }
                reliability = reliability.max(s.reliability);
            }
            Sample3D { position: robust_average(&points), support, reliability }
        })
        .collect();
    let slot: BTreeMap<BucketKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut uf = UnionFind::<usize>::new(curves.len());
    for members in buckets.values() {
        for w in members.windows(2) {
            uf.union(w[0].0, w[1].0);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for ci in 0..curves.len() {
        groups.entry(uf.find(ci)).or_default().push(ci);
    }

    let mut pieces: Vec<(BucketKey, Vec<Sample3D>)> = Vec::new();
    for members in groups.values() {
        let mut group_keys: Vec<BucketKey> = members
            .iter()
            .flat_map(|&ci| {
                let c = &curves[ci];
                c.samples().iter().enumerate().map(move |(k, s)| (c, k, s))
            })
            .map(|(c, k, s)| primary_edgel(c, k, s).map(|e| (c.primary_view, e)))
            .collect::<Result<_, _>>()?;
        group_keys.sort_unstable();
        group_keys.dedup();
        let mut current: Vec<BucketKey> = Vec::new();
        for key in group_keys {
            if let Some(prev) = current.last() {
                if key.1 - prev.1 > MAX_EDGEL_GAP {
                    pieces.push((current[0], current.iter().map(|k| fused[slot[k]].clone()).collect()));
                    current.clear();
                }
            }
            current.push(key);
        }
        if !current.is_empty() {
            pieces.push((current[0], current.iter().map(|k| fused[slot[k]].clone()).collect()));
        }
    }
    pieces.sort_by_key(|(k, _)| *k);
    let mut out = Vec::new();
    for ((view, _), samples) in pieces {
        if let Ok(c) = Curve3D::from_samples_dedup(out.len(), view, samples) {
            out.push(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn singleton_and_pair() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(robust_average(&[p]), p);
        let q = Point3::new(3.0, 2.0, 1.0);
        assert_eq!(robust_average(&[p, q]), Point3::new(2.0, 2.0, 2.0));
    }

    #[test]
    fn far_point_is_rejected() {
        let pts = vec![
            Point3::new(0.01, 0.0, 0.0),
            Point3::new(-0.01, 0.0, 0.0),
            Point3::new(0.0, 0.01, 0.0),
            Point3::new(0.0, -0.01, 0.0),
            Point3::new(0.0, 0.0, 0.01),
            Point3::new(5.0, 0.0, 0.0),
        ];
        assert_eq!(robust_inliers(&pts), vec![0, 1, 2, 3, 4]);
        let avg = robust_average(&pts);
        assert!(avg.coords.norm() < 0.01);
    }

    #[test]
    fn coincident_points() {
        let p = Point3::new(0.5, 0.5, 0.5);
        assert_eq!(robust_average(&[p, p, p, p]), p);
    }

    #[test]
    fn regular_configuration_is_plain_centroid() {
        let pts = [
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(1.0, -1.0, -1.0),
            Point3::new(-1.0, 1.0, -1.0),
            Point3::new(-1.0, -1.0, 1.0),
        ];
        assert_eq!(robust_inliers(&pts).len(), 4);
        let c = robust_average(&pts);
        assert_abs_diff_eq!(c.coords.norm(), 0.0);
    }

    #[test]
    fn missing_primary_support_is_an_error() {
        let c = Curve3D::new(4, 2, vec![Sample3D::new(Point3::origin()), Sample3D::new(Point3::new(1.0, 0.0, 0.0))]).unwrap();
        assert_eq!(
            group_by_primary_edge(&[c]).unwrap_err(),
            AveragingError::MissingPrimarySupport { curve_id: 4, sample: 0, view: 2 }
        );
        assert!(group_by_primary_edge(&[]).unwrap().is_empty());
    }
}
