//! Projective cameras, epipolar lines and two-view triangulation.
//!
//! Cameras are kept as raw 3x4 projection matrices. Everything the pipeline
//! needs (projection, camera centre, viewing rays, epipolar lines) is derived
//! from that matrix directly.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point2, Point3, RowVector4, Vector2, Vector3, Vector4};
use thiserror::Error;

/// Minimum depth (world units) a point must have in front of a camera.
pub const EPS_DEPTH: f64 = 1e-8;
/// Minimum angle between two viewing rays for triangulation, in degrees.
pub const EPS_ANGLE_DEG: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {depth:e} is not above {min:e} for view {view}")]
    DepthTooSmall { view: usize, depth: f64, min: f64 },
    #[error("cameras {0} and {1} share a centre; epipolar geometry is undefined")]
    DegenerateCameraPair(usize, usize),
    #[error("viewing rays are {angle_deg:.4} degrees apart, below {min_deg} degrees")]
    RaysNearParallel { angle_deg: f64, min_deg: f64 },
    #[error("camera {0} has a singular left 3x3 block")]
    SingularCamera(usize),
}

/// A finite projective camera mapping world points to pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    projection: Matrix3x4<f64>,
    view_id: usize,
    m_inv: Matrix3<f64>,
    center: Point3<f64>,
    depth_scale: f64,
}

impl Camera {
    pub fn new(projection: Matrix3x4<f64>, view_id: usize) -> Result<Self, GeometryError> {
        let m: Matrix3<f64> = projection.fixed_view::<3, 3>(0, 0).into_owned();
        let det = m.determinant();
        let scale = m.norm().max(f64::MIN_POSITIVE);
        if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(3) {
            return Err(GeometryError::SingularCamera(view_id));
        }
        let m_inv = m.try_inverse().ok_or(GeometryError::SingularCamera(view_id))?;
        let p4: Vector3<f64> = projection.column(3).into_owned();
        let center = Point3::from(-(m_inv * p4));
        let m3_norm = m.row(2).norm();
        Ok(Self {
            projection,
            view_id,
            m_inv,
            center,
            depth_scale: det.signum() / m3_norm,
        })
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn view_id(&self) -> usize {
        self.view_id
    }

    pub fn center(&self) -> Point3<f64> {
        self.center
    }

    /// Signed depth of `point` along the principal axis, in world units.
    pub fn depth(&self, point: &Point3<f64>) -> f64 {
        let w = self.projection.row(2).dot(&point.to_homogeneous().transpose());
        w * self.depth_scale
    }

    /// Direction of the viewing ray through `pixel` (not normalised, points forward).
    pub fn ray_direction(&self, pixel: &Point2<f64>) -> Vector3<f64> {
        let d = self.m_inv * pixel.to_homogeneous();
        // Orient the ray so that points along it have positive depth.
        let probe = self.center + d;
        if self.depth(&probe) < 0.0 {
            -d
        } else {
            d
        }
    }

    pub(crate) fn left_block(&self) -> Matrix3<f64> {
        self.projection.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub(crate) fn left_block_inverse(&self) -> &Matrix3<f64> {
        &self.m_inv
    }
}

/// Projects a world point into `camera`, rejecting points on or behind the
/// principal plane.
pub fn project(camera: &Camera, point: &Point3<f64>) -> Result<Point2<f64>, GeometryError> {
    let depth = camera.depth(point);
    if !(depth > EPS_DEPTH) {
        return Err(GeometryError::DepthTooSmall {
            view: camera.view_id,
            depth,
            min: EPS_DEPTH,
        });
    }
    let x = camera.projection * point.to_homogeneous();
    Ok(Point2::new(x.x / x.z, x.y / x.z))
}

/// Image line `a x + b y + c = 0` with `a^2 + b^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpipolarLine {
    /// Normalises homogeneous line coordinates; `None` for the line at infinity.
    pub fn from_homogeneous(l: &Vector3<f64>) -> Option<Self> {
        let n = l.x.hypot(l.y);
        if !(n > 1e-300) || !n.is_finite() {
            return None;
        }
        Some(Self {
            a: l.x / n,
            b: l.y / n,
            c: l.z / n,
        })
    }

    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(self.a, self.b)
    }

    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(self.b, -self.a)
    }
}

/// Precomputed epipolar relation from a source view into a destination view.
///
/// The line for a source pixel `x` is `e x (H x)`, where `e` is the image of
/// the source centre in the destination view and `H = M_dst M_src^-1` maps
/// ray directions (the infinite homography).
#[derive(Debug, Clone)]
pub struct EpipolarPair {
    src_view: usize,
    dst_view: usize,
    epipole: Vector3<f64>,
    infinite_homography: Matrix3<f64>,
}

impl EpipolarPair {
    pub fn new(src: &Camera, dst: &Camera) -> Result<Self, GeometryError> {
        let c = src.center().to_homogeneous();
        let epipole = dst.projection * c;
        let scale = dst.projection.norm() * c.norm();
        if !(epipole.norm() > 1e-12 * scale) {
            return Err(GeometryError::DegenerateCameraPair(src.view_id, dst.view_id));
        }
        let infinite_homography = dst.left_block() * src.left_block_inverse();
        Ok(Self {
            src_view: src.view_id,
            dst_view: dst.view_id,
            epipole,
            infinite_homography,
        })
    }

    /// The epipole in the destination view (homogeneous).
    pub fn epipole(&self) -> Vector3<f64> {
        self.epipole
    }

    pub fn line(&self, point_src: &Point2<f64>) -> Result<EpipolarLine, GeometryError> {
        let hx = self.infinite_homography * point_src.to_homogeneous();
        let l = self.epipole.cross(&hx);
        let tol = 1e-12 * self.epipole.norm() * hx.norm();
        if l.x.hypot(l.y) > tol {
            if let Some(line) = EpipolarLine::from_homogeneous(&l) {
                return Ok(line);
            }
        }
        // The source point is its own epipole: every epipolar line qualifies,
        // return one through the destination epipole.
        let e = self.epipole;
        let fallback = if e.z.abs() > 1e-12 * e.norm() {
            Vector3::new(0.0, 1.0, -e.y / e.z)
        } else {
            Vector3::new(-e.y, e.x, 0.0)
        };
        EpipolarLine::from_homogeneous(&fallback)
            .ok_or(GeometryError::DegenerateCameraPair(self.src_view, self.dst_view))
    }
}

/// Epipolar line in `cam_dst` for a pixel of `cam_src`.
pub fn epipolar_line(
    cam_src: &Camera,
    cam_dst: &Camera,
    point_src: &Point2<f64>,
) -> Result<EpipolarLine, GeometryError> {
    EpipolarPair::new(cam_src, cam_dst)?.line(point_src)
}

/// Angle between the viewing rays of two pixels, in degrees, in `[0, 90]`.
pub fn ray_angle_deg(cam1: &Camera, cam2: &Camera, p1: &Point2<f64>, p2: &Point2<f64>) -> f64 {
    let d1 = cam1.ray_direction(p1).normalize();
    let d2 = cam2.ray_direction(p2).normalize();
    d1.dot(&d2).abs().min(1.0).acos().to_degrees()
}

/// Linear (DLT) two-view triangulation.
pub fn triangulate(
    cam1: &Camera,
    cam2: &Camera,
    p1: &Point2<f64>,
    p2: &Point2<f64>,
) -> Result<Point3<f64>, GeometryError> {
    let angle_deg = ray_angle_deg(cam1, cam2, p1, p2);
    if !(angle_deg >= EPS_ANGLE_DEG) {
        return Err(GeometryError::RaysNearParallel {
            angle_deg,
            min_deg: EPS_ANGLE_DEG,
        });
    }
    let row = |cam: &Camera, coord: f64, r: usize| -> RowVector4<f64> {
        let p = cam.projection();
        let v = p.row(2) * coord - p.row(r);
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v
        }
    };
    let a = Matrix4::from_rows(&[
        row(cam1, p1.x, 0),
        row(cam1, p1.y, 1),
        row(cam2, p2.x, 0),
        row(cam2, p2.y, 1),
    ]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t was requested");
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    let x: Vector4<f64> = v_t.row(min_idx).transpose();
    if !(x.w.abs() > 1e-300) {
        return Err(GeometryError::RaysNearParallel {
            angle_deg,
            min_deg: EPS_ANGLE_DEG,
        });
    }
    Ok(Point3::new(x.x / x.w, x.y / x.w, x.z / x.w))
}

/// `sin^2` of the angle between an image tangent and an epipolar line:
/// 0 when the curve runs along the line, 1 when it crosses it at a right angle.
pub fn tangency_weight(curve_tangent: &Vector2<f64>, epi_line: &EpipolarLine) -> f64 {
    let s = curve_tangent.dot(&epi_line.normal());
    (s * s).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_camera(view: usize, t: Vector3<f64>) -> Camera {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        p.set_column(3, &t);
        Camera::new(p, view).unwrap()
    }

    #[test]
    fn principal_axis_point_projects_to_origin() {
        let cam = identity_camera(0, Vector3::zeros());
        let x = project(&cam, &Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(x, Point2::new(0.0, 0.0));
    }

    #[test]
    fn translated_camera_similar_triangles() {
        let cam = identity_camera(1, Vector3::new(-1.0, 0.0, 0.0));
        let x = project(&cam, &Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_abs_diff_eq!(x.x, -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(x.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn principal_plane_point_is_rejected() {
        let cam = identity_camera(0, Vector3::zeros());
        let err = project(&cam, &Point3::new(1.0, 2.0, 0.0)).unwrap_err();
        assert!(matches!(err, GeometryError::DepthTooSmall { .. }));
        let err = project(&cam, &Point3::new(0.0, 0.0, -3.0)).unwrap_err();
        assert!(matches!(err, GeometryError::DepthTooSmall { .. }));
    }

    #[test]
    fn singular_camera_is_rejected() {
        let p = Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0);
        assert_eq!(Camera::new(p, 3).unwrap_err(), GeometryError::SingularCamera(3));
    }

    #[test]
    fn triangulates_analytic_configuration() {
        let c1 = identity_camera(0, Vector3::zeros());
        let c2 = identity_camera(1, Vector3::new(-1.0, 0.0, 0.0));
        let x = triangulate(&c1, &c2, &Point2::new(0.0, 0.0), &Point2::new(-0.2, 0.0)).unwrap();
        assert_abs_diff_eq!(x.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.z, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_cameras_cannot_triangulate() {
        let c1 = identity_camera(0, Vector3::zeros());
        let c2 = identity_camera(1, Vector3::zeros());
        let p = Point2::new(0.1, 0.2);
        assert!(matches!(
            triangulate(&c1, &c2, &p, &p),
            Err(GeometryError::RaysNearParallel { .. })
        ));
    }

    #[test]
    fn rectified_pair_gives_horizontal_lines() {
        let c1 = identity_camera(0, Vector3::zeros());
        let c2 = identity_camera(1, Vector3::new(-1.0, 0.0, 0.0));
        let l = epipolar_line(&c1, &c2, &Point2::new(0.3, -0.7)).unwrap();
        assert_abs_diff_eq!(l.a, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.b.abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(-l.c / l.b, -0.7, epsilon = 1e-12);
    }

    #[test]
    fn coincident_cameras_are_degenerate() {
        let c1 = identity_camera(0, Vector3::new(0.5, 0.0, 0.0));
        let mut p = c1.projection().clone();
        p *= 3.0;
        let c2 = Camera::new(p, 1).unwrap();
        assert_eq!(
            epipolar_line(&c1, &c2, &Point2::new(0.0, 0.0)).unwrap_err(),
            GeometryError::DegenerateCameraPair(0, 1)
        );
    }

    #[test]
    fn own_epipole_maps_to_line_through_destination_epipole() {
        // Camera 2 sits ahead of camera 1 on a slanted baseline.
        let c1 = identity_camera(0, Vector3::zeros());
        let c2 = identity_camera(1, Vector3::new(-0.5, -0.2, -1.0));
        let e1 = project(&c1, &c2.center()).unwrap();
        let pair = EpipolarPair::new(&c1, &c2).unwrap();
        let l = pair.line(&e1).unwrap();
        let e2 = pair.epipole();
        let incidence = l.a * e2.x + l.b * e2.y + l.c * e2.z;
        assert_abs_diff_eq!(incidence, 0.0, epsilon = 1e-9 * e2.norm());
    }

    #[test]
    fn tangency_weight_cases() {
        let line = EpipolarLine::from_homogeneous(&Vector3::new(0.0, 1.0, -2.0)).unwrap();
        let along = Vector2::new(1.0, 0.0);
        let across = Vector2::new(0.0, 1.0);
        let diag = Vector2::new(1.0, 1.0).normalize();
        assert_abs_diff_eq!(tangency_weight(&along, &line), 0.0);
        assert_abs_diff_eq!(tangency_weight(&across, &line), 1.0);
        assert_abs_diff_eq!(tangency_weight(&diag, &line), 0.5, epsilon = 1e-15);
        let flipped = EpipolarLine { a: -line.a, b: -line.b, c: -line.c };
        assert_eq!(tangency_weight(&diag, &line), tangency_weight(&diag, &flipped));
        assert_eq!(tangency_weight(&diag, &line), tangency_weight(&-diag, &line));
    }
}
