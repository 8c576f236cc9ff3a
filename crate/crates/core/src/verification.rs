//! Hypothesis verification against confirmation views.
//!
//! Each reconstruction sample is reprojected into every confirmation view and
//! counts as supported there when an edgel lies close to it with a similar
//! orientation. Per-view support is integrated along the reprojected curve,
//! and only the stretches supported by enough views at once survive.

use nalgebra::{Point2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::curve::{orientation_difference, orientation_of, CurveError, Curve3D, EdgelIndex, Sample3D};
use crate::dataset::Dataset;
use crate::geometry::{project, Camera};
use crate::hypothesis::CurvePairHypothesis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerificationError {
    #[error("view {0} is a hypothesis view and cannot confirm its own hypothesis")]
    HypothesisView(usize),
    #[error("no camera for view {0}")]
    MissingCamera(usize),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationParams {
    /// Support distance in pixels.
    pub delta_d: f64,
    /// Support orientation tolerance in radians.
    pub delta_theta: f64,
    /// A view supports a hypothesis only when its integrated support exceeds this.
    pub tau_v: f64,
    pub n_min_views: usize,
    /// Shortest kept run, counted in reliable samples.
    pub min_run: usize,
    /// Samples below this reliability are flagged as geometrically unreliable.
    pub reliability_floor: f64,
    /// Half-width, in samples, of the window used for image tangents.
    pub tangent_window: usize,
}

impl Default for VerificationParams {
    fn default() -> Self {
        Self {
            delta_d: 2.0,
            delta_theta: 15f64.to_radians(),
            tau_v: 0.0,
            n_min_views: 3,
            min_run: 20,
            reliability_floor: 0.1,
            tangent_window: 3,
        }
    }
}

/// Edge support at one reprojected sample: `1` when some edgel within
/// `delta_d` has an orientation within `delta_theta` of the tangent.
pub fn edge_support(
    sample_reproj: &Point2<f64>,
    sample_tangent: &Vector2<f64>,
    view: usize,
    index: &EdgelIndex,
    delta_d: f64,
    delta_theta: f64,
) -> Result<(f64, Vec<usize>), CurveError> {
    let theta = orientation_of(sample_tangent);
    let ids: Vec<usize> = index
        .query_edgels(view, sample_reproj, delta_d)?
        .into_iter()
        .filter(|e| orientation_difference(e.orientation, theta) <= delta_theta)
        .map(|e| e.edgel_id)
        .collect();
    let phi = if ids.is_empty() { 0.0 } else { 1.0 };
    Ok((phi, ids))
}

/// Support one confirmation view gives a hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSupport {
    pub view: usize,
    /// Binary edge support per sample.
    pub phi: Vec<f64>,
    /// `phi` times the sample reliability.
    pub weighted: Vec<f64>,
    pub edgels: Vec<Vec<usize>>,
    /// Samples that could not be reprojected (behind the camera).
    pub failed: Vec<bool>,
    /// Length of the reprojected curve.
    pub reprojected_length: f64,
    /// Integrated support `S^v`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportProfile {
    pub views: Vec<ViewSupport>,
}

impl SupportProfile {
    pub fn totals(&self) -> Vec<f64> {
        self.views.iter().map(|v| v.total).collect()
    }

    /// Per sample, the number of views with `S^v > tau_v` that support it.
    pub fn supporting_view_counts(&self, tau_v: f64) -> Vec<usize> {
        let n = self.views.first().map_or(0, |v| v.phi.len());
        let mut counts = vec![0; n];
        for v in self.views.iter().filter(|v| v.total > tau_v) {
            for (c, &phi) in counts.iter_mut().zip(&v.phi) {
                if phi > 0.0 {
                    *c += 1;
                }
            }
        }
        counts
    }
}

fn image_tangents(points: &[Option<Point2<f64>>], window: usize) -> Vec<Vector2<f64>> {
    let n = points.len();
    (0..n)
        .map(|k| {
            let lo = (k.saturating_sub(window)..k).find(|&j| points[j].is_some()).unwrap_or(k);
            let hi = ((k + 1)..=(k + window).min(n - 1)).rev().find(|&j| points[j].is_some()).unwrap_or(k);
            match (points[lo], points[hi]) {
                (Some(a), Some(b)) if lo != hi => {
                    let d = b - a;
                    let len = d.norm();
                    if len > 0.0 {
                        d / len
                    } else {
                        Vector2::new(1.0, 0.0)
                    }
                }
                _ => Vector2::new(1.0, 0.0),
            }
        })
        .collect()
}

/// Support for a sampled curve from `camera`'s view.
pub fn curve_view_support(
    samples: &[Sample3D],
    camera: &Camera,
    index: &EdgelIndex,
    params: &VerificationParams,
) -> Result<ViewSupport, VerificationError> {
    let view = camera.view_id();
    let reproj: Vec<Option<Point2<f64>>> = samples.iter().map(|s| project(camera, &s.position).ok()).collect();
    let tangents = image_tangents(&reproj, params.tangent_window.max(1));
    let n = samples.len();
    let mut phi = vec![0.0; n];
    let mut weighted = vec![0.0; n];
    let mut edgels = vec![Vec::new(); n];
    let mut failed = vec![false; n];
    for k in 0..n {
        let Some(p) = reproj[k] else {
            failed[k] = true;
            continue;
        };
        let (f, ids) = edge_support(&p, &tangents[k], view, index, params.delta_d, params.delta_theta)?;
        phi[k] = f;
        weighted[k] = f * samples[k].reliability;
        edgels[k] = ids;
    }
    let mut total = 0.0;
    let mut length = 0.0;
    for k in 1..n {
        if let (Some(a), Some(b)) = (reproj[k - 1], reproj[k]) {
            let ds = (b - a).norm();
            length += ds;
            total += 0.5 * (weighted[k - 1] + weighted[k]) * ds;
        }
    }
    Ok(ViewSupport { view, phi, weighted, edgels, failed, reprojected_length: length, total })
}

pub fn view_support(
    hyp: &CurvePairHypothesis,
    view: usize,
    data: &Dataset,
    index: &EdgelIndex,
    params: &VerificationParams,
) -> Result<ViewSupport, VerificationError> {
    if view == hyp.view1 || view == hyp.view2 {
        return Err(VerificationError::HypothesisView(view));
    }
    let camera = data.cameras.get(&view).ok_or(VerificationError::MissingCamera(view))?;
    curve_view_support(hyp.reconstruction.samples(), camera, index, params)
}

/// Sum of `S^v` over views with `S^v > tau_v`.
pub fn aggregate_support(profile: &SupportProfile, tau_v: f64) -> f64 {
    aggregate_totals(&profile.totals(), tau_v)
}

pub fn aggregate_totals(totals: &[f64], tau_v: f64) -> f64 {
    totals.iter().filter(|&&s| s > tau_v).sum()
}

/// Confirmation views of a hypothesis: every indexed view with a camera other
/// than the two hypothesis views.
pub fn confirmation_views(hyp: &CurvePairHypothesis, data: &Dataset, index: &EdgelIndex) -> Vec<usize> {
    data.view_ids()
        .into_iter()
        .filter(|&v| v != hyp.view1 && v != hyp.view2 && index.has_view(v))
        .collect()
}

pub fn support_profile(
    hyp: &CurvePairHypothesis,
    data: &Dataset,
    index: &EdgelIndex,
    params: &VerificationParams,
) -> Result<SupportProfile, VerificationError> {
    let views = confirmation_views(hyp, data, index)
        .into_iter()
        .map(|v| view_support(hyp, v, data, index, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SupportProfile { views })
}

/// Splits a reconstruction into the stretches supported by at least
/// `n_min_views` confirmation views at every sample. Runs must start and end
/// on reliable samples and contain at least `min_run` of them; unreliable
/// samples inside a run are kept with their low reliability.
pub fn localize_supported_portions(
    curve: &Curve3D,
    profile: &SupportProfile,
    params: &VerificationParams,
) -> Vec<Curve3D> {
    let samples = curve.samples();
    let counts = profile.supporting_view_counts(params.tau_v);
    let supported: Vec<bool> = counts.iter().map(|&c| c >= params.n_min_views).collect();
    let reliable = |k: usize| samples[k].reliability >= params.reliability_floor;
    let mut out = Vec::new();
    let mut k = 0;
    while k < samples.len() {
        if !supported[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < samples.len() && supported[k] {
            k += 1;
        }
        let (mut a, mut b) = (start, k);
        while a < b && !reliable(a) {
            a += 1;
        }
        while b > a && !reliable(b - 1) {
            b -= 1;
        }
        let n_reliable = (a..b).filter(|&j| reliable(j)).count();
        if b - a < 2 || n_reliable < params.min_run {
            continue;
        }
        let run: Vec<Sample3D> = (a..b)
            .map(|j| {
                let mut s = samples[j].clone();
                for v in profile.views.iter().filter(|v| v.total > params.tau_v) {
                    if v.phi[j] > 0.0 {
                        s.support.entry(v.view).or_default().extend(v.edgels[j].iter().copied());
                    }
                }
                s
            })
            .collect();
        if let Ok(c) = Curve3D::new(curve.curve_id, curve.primary_view, run) {
            out.push(c);
        }
    }
    out
}

/// Verifies every hypothesis and returns the supported portions, numbered in
/// hypothesis order.
pub fn verify_all(
    hyps: &[CurvePairHypothesis],
    data: &Dataset,
    index: &EdgelIndex,
    params: &VerificationParams,
) -> Result<Vec<Curve3D>, VerificationError> {
    let per_hyp: Vec<Result<Vec<Curve3D>, VerificationError>> = hyps
        .par_iter()
        .map(|h| {
            let profile = support_profile(h, data, index, params)?;
            Ok(localize_supported_portions(&h.reconstruction, &profile, params))
        })
        .collect();
    let mut out = Vec::new();
    for r in per_hyp {
        out.extend(r?);
    }
    for (k, c) in out.iter_mut().enumerate() {
        c.curve_id = k;
    }
    Ok(out)
}
