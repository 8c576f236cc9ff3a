//! Property tests: serialisation round trips, evaluation invariants and
//! generator determinism.

use curvedraw::curve::{ArcLength, Curve3D, Sample3D};
use curvedraw::drawing::{merge_cluster, DrawingGraph, MergeParams};
use curvedraw::eval::evaluate;
use curvedraw::io::{format_curves3d, load_dataset, parse_curves3d, save_dataset};
use curvedraw::synth::{generate_scene, SceneSpec};
use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use std::path::Path;

fn point() -> impl Strategy<Value = Point3<f64>> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn polyline(min: usize) -> impl Strategy<Value = Vec<Point3<f64>>> {
    (point(), prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64, 0.05..0.2f64), min..40)).prop_map(|(start, steps)| {
        let mut p = start;
        let mut out = vec![p];
        for (dy, dz, dx) in steps {
            p += Vector3::new(dx, dy, dz);
            out.push(p);
        }
        out
    })
}

fn curve3d(id: usize) -> impl Strategy<Value = Curve3D> {
    prop::collection::vec((point(), 0.0..1.0f64, prop::collection::btree_map(0..6usize, prop::collection::btree_set(0..500usize, 0..3), 0..3)), 2..20)
        .prop_map(move |samples| {
            let samples = samples.into_iter().map(|(p, r, support)| Sample3D { position: p, support, reliability: r }).collect();
            Curve3D::new(id, id % 4, samples).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curves3d_text_is_lossless(a in curve3d(0), b in curve3d(1)) {
        let curves = vec![a, b];
        let back = parse_curves3d(Path::new("mem"), &format_curves3d(&curves)).unwrap();
        prop_assert_eq!(back, curves);
    }

    #[test]
    fn drawing_text_is_lossless(a in polyline(2), b in polyline(2)) {
        let (g, _) = merge_cluster(&[a, b], &MergeParams::for_spacing(0.05));
        let back = DrawingGraph::from_text(&g.to_text()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn precision_and_recall_are_fractions_and_ignore_duplicates(gt in polyline(3), recon in polyline(3)) {
        let r = evaluate(&[recon.clone()], &[gt.clone()], 0.1, 0.02).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
        let twice = evaluate(&[recon.clone(), recon], &[gt], 0.1, 0.02).unwrap();
        prop_assert_eq!(twice.recall, r.recall);
    }

    #[test]
    fn evaluation_is_invariant_under_rigid_motion(
        gt in polyline(3),
        offset in (-0.05..0.05f64, -0.05..0.05f64),
        axis in (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
        angle in -3.0..3.0f64,
        shift in point(),
    ) {
        let recon: Vec<Point3<f64>> = gt.iter().map(|p| p + Vector3::new(0.0, offset.0, offset.1)).collect();
        let r = evaluate(&[recon.clone()], &[gt.clone()], 0.1, 0.02).unwrap();
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let mv = |c: &[Point3<f64>]| -> Vec<Point3<f64>> { c.iter().map(|p| rot * p + shift.coords).collect() };
        let moved = evaluate(&[mv(&recon)], &[mv(&gt)], 0.1, 0.02).unwrap();
        // Sample counts follow arc length, which a rigid motion preserves up to rounding.
        prop_assert!((moved.precision - r.precision).abs() < 0.05);
        prop_assert!((moved.recall - r.recall).abs() < 0.05);
        prop_assert!((mv(&gt).arc_length() - gt.arc_length()).abs() < 1e-9);
    }
}

#[test]
fn dataset_files_round_trip_exactly() {
    let scene = generate_scene(&SceneSpec::noisy_cube(3)).unwrap();
    let data = scene.dataset();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &data).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), data);
}

#[test]
fn scene_generation_is_deterministic_per_seed() {
    let a = generate_scene(&SceneSpec::noisy_cube(5)).unwrap();
    let b = generate_scene(&SceneSpec::noisy_cube(5)).unwrap();
    let c = generate_scene(&SceneSpec::noisy_cube(6)).unwrap();
    assert_eq!(a.dataset(), b.dataset());
    assert_ne!(a.dataset(), c.dataset());
}
