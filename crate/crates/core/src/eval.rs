//! Sample-level precision and recall of a reconstruction against ground
//! truth curves.

use std::fmt::Write as _;

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::curve::ArcLength;
use crate::spatial::PolylineIndex;
use crate::synth::ground_truth_samples;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ground truth has no curves")]
    EmptyGroundTruth,
    #[error("proximity threshold {0} must be positive")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrResult {
    pub precision: f64,
    pub recall: f64,
    /// Reconstruction samples within the threshold of the ground truth.
    pub tp_recon: usize,
    /// Reconstruction samples farther than the threshold.
    pub fp: usize,
    /// Ground-truth samples within the threshold of the reconstruction.
    pub tp_gt: usize,
    /// Ground-truth samples not covered.
    pub fn_: usize,
    pub tau_prox: f64,
}

/// Bounding-box diagonal of a set of polylines.
pub fn diagonal(curves: &[Vec<Point3<f64>>]) -> f64 {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in curves.iter().flatten() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if lo.x > hi.x {
        0.0
    } else {
        (hi - lo).norm()
    }
}

/// Default proximity threshold: 0.5% of the ground-truth bounding-box
/// diagonal.
pub fn default_tau_prox(gt: &[Vec<Point3<f64>>]) -> f64 {
    0.005 * diagonal(gt)
}

/// Default evaluation sampling: 1/2000 of the ground-truth diagonal.
pub fn default_spacing(gt: &[Vec<Point3<f64>>]) -> f64 {
    diagonal(gt) / 2000.0
}

fn covered(samples: &[Vec<Point3<f64>>], target: &PolylineIndex, tau: f64) -> (usize, usize) {
    let flags: Vec<bool> = samples.par_iter().flat_map_iter(|c| c.iter().map(|p| target.distance_within(p, tau))).collect();
    let hit = flags.iter().filter(|&&f| f).count();
    (hit, flags.len() - hit)
}

/// Resamples both sides at `spacing` and counts samples of each side that
/// lie within `tau_prox` of the other side's polylines. Every ground-truth
/// sample is counted once, however many reconstructed curves cover it.
pub fn evaluate(
    recon: &[Vec<Point3<f64>>],
    gt: &[Vec<Point3<f64>>],
    tau_prox: f64,
    spacing: f64,
) -> Result<PrResult, EvalError> {
    let gt: Vec<Vec<Point3<f64>>> = gt.iter().filter(|g| g.len() >= 2 && g.arc_length() > 0.0).cloned().collect();
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    if !(tau_prox > 0.0) {
        return Err(EvalError::InvalidThreshold(tau_prox));
    }
    let recon: Vec<Vec<Point3<f64>>> =
        recon.iter().filter(|r| r.len() >= 2 && r.arc_length() > 0.0).cloned().collect();
    let gt_samples = ground_truth_samples(&gt, spacing);
    let recon_samples = ground_truth_samples(&recon, spacing);
    let gt_index = PolylineIndex::new(gt, tau_prox);
    let recon_index = PolylineIndex::new(recon, tau_prox);
    let (tp_recon, fp) = covered(&recon_samples, &gt_index, tau_prox);
    let (tp_gt, fn_) = covered(&gt_samples, &recon_index, tau_prox);
    let precision = if tp_recon + fp == 0 { 1.0 } else { tp_recon as f64 / (tp_recon + fp) as f64 };
    let recall = tp_gt as f64 / (tp_gt + fn_) as f64;
    Ok(PrResult { precision, recall, tp_recon, fp, tp_gt, fn_, tau_prox })
}

/// One row of a precision/recall sweep; `result` is `Err` for failed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: String,
    pub result: Result<PrResult, String>,
}

/// CSV table `param,precision,recall,tp,fp,fn`, where `tp` counts
/// reconstruction samples. Failed points are listed as comments.
pub fn pr_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("param,precision,recall,tp,fp,fn\n");
    for p in points {
        match &p.result {
            Ok(r) => {
                let _ = writeln!(s, "{},{},{},{},{},{}", p.param, r.precision, r.recall, r.tp_recon, r.fp, r.fn_);
            }
            Err(e) => {
                let _ = writeln!(s, "# {} failed: {}", p.param, e.replace('\n', " "));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: [f64; 3], b: [f64; 3]) -> Vec<Point3<f64>> {
        vec![Point3::new(a[0], a[1], a[2]), Point3::new(b[0], b[1], b[2])]
    }

    #[test]
    fn perfect_and_half() {
        let gt = vec![seg([0.0; 3], [1.0, 0.0, 0.0])];
        let r = evaluate(&gt, &gt, 0.005, 0.001).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        let half = vec![seg([0.0; 3], [0.5, 0.0, 0.0])];
        let r = evaluate(&half, &gt, 0.005, 0.001).unwrap();
        assert_eq!(r.precision, 1.0);
        assert!((r.recall - 0.5).abs() < 0.01);
    }

    #[test]
    fn spurious_curve_halves_precision() {
        let gt = vec![seg([0.0; 3], [1.0, 0.0, 0.0])];
        let mut recon = gt.clone();
        recon.push(seg([0.0, 0.05, 0.0], [1.0, 0.05, 0.0]));
        let r = evaluate(&recon, &gt, 0.005, 0.001).unwrap();
        assert!((r.precision - 0.5).abs() < 0.01);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn errors_and_csv() {
        assert_eq!(evaluate(&[], &[], 0.1, 0.01), Err(EvalError::EmptyGroundTruth));
        let gt = vec![seg([0.0; 3], [1.0, 0.0, 0.0])];
        let r = evaluate(&[], &gt, 0.1, 0.01).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.0));
        let csv = pr_csv(&[
            SweepPoint { param: "n_min_views=2".into(), result: Ok(r) },
            SweepPoint { param: "n_min_views=3".into(), result: Err("boom".into()) },
        ]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("param,precision,recall,tp,fp,fn\nn_min_views=2,1,0,0,0,101\n"));
    }
}
