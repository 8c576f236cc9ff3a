//! End-to-end acceptance gates. Every test prints one `PASS`/`FAIL` line
//! naming its criterion before asserting, so `cargo test -- --nocapture`
//! doubles as a report.

use std::time::Instant;

use curvedraw::averaging::{robust_average, robust_inliers};
use curvedraw::config::Config;
use curvedraw::consistency::{build_mccn, Mln, TAU_EPS, TAU_SL};
use curvedraw::curve::{ArcLength, EdgelIndex};
use curvedraw::drawing::{evolve_cluster, merge_cluster, write_ply, DrawingGraph, EvolveParams, MergeParams};
use curvedraw::eval::{default_spacing, default_tau_prox, evaluate};
use curvedraw::geometry::{epipolar_line, project, triangulate, Camera};
use curvedraw::pipeline::{hypotheses, pr_sweep, run_pipeline, RunOptions, SweepParam};
use curvedraw::synth::{generate_scene, FragmentSource, Primitive, SceneSpec, SynthScene};
use curvedraw::verification::{aggregate_support, verify_all, SupportProfile, ViewSupport};
use nalgebra::{Matrix3, Matrix3x4, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

fn report(criterion: u32, title: &str, ok: bool, detail: &str) {
    println!("criterion {criterion:>2} {} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn random_camera(rng: &mut ChaCha8Rng, view: usize) -> Camera {
    let f = rng.random_range(500.0..1500.0);
    let k = Matrix3::new(f, 0.0, rng.random_range(300.0..700.0), 0.0, f, rng.random_range(300.0..700.0), 0.0, 0.0, 1.0);
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), rng.random_range(-0.5..0.5));
    // Camera centre on a sphere around the origin, looking roughly inwards.
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let centre = Vector3::from(dir) * rng.random_range(4.0..8.0);
    let z = (-centre).normalize();
    let up = if z.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let look = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rot = r.matrix() * look;
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    rt.set_column(3, &-(rot * centre));
    Camera::new(k * rt, view).unwrap()
}

#[test]
fn criterion_01_geometry_round_trips() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_point, mut worst_line, mut trials) = (0.0_f64, 0.0_f64, 0);
    while trials < 1000 {
        let c1 = random_camera(&mut rng, 0);
        let c2 = random_camera(&mut rng, 1);
        let x = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (Ok(p1), Ok(p2)) = (project(&c1, &x), project(&c2, &x)) else { continue };
        let Ok(y) = triangulate(&c1, &c2, &p1, &p2) else { continue };
        let line = epipolar_line(&c1, &c2, &p1).unwrap();
        worst_point = worst_point.max((y - x).norm());
        worst_line = worst_line.max(line.signed_distance(&p2).abs());
        trials += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst_point < 1e-9 && worst_line < 1e-9 && secs < 5.0;
    report(
        1,
        "geometry oracle",
        ok,
        &format!("{trials} trials, max point error {worst_point:.2e}, max epipolar residual {worst_line:.2e}, {secs:.2} s"),
    );
    assert!(ok);
}

fn profile(totals: &[f64]) -> SupportProfile {
    let views = totals
        .iter()
        .enumerate()
        .map(|(v, &total)| ViewSupport {
            view: v,
            phi: vec![],
            weighted: vec![],
            edgels: vec![],
            failed: vec![],
            reprojected_length: 1.0,
            total,
        })
        .collect();
    SupportProfile { views }
}

#[test]
fn criterion_02_aggregate_support_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut boundary_cases = 0;
    for _ in 0..1000 {
        let tau = rng.random_range(0.0..20.0);
        let n = rng.random_range(1..12);
        let totals: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { tau } else { rng.random_range(0.0..40.0) })
            .collect();
        boundary_cases += totals.iter().filter(|&&s| s == tau).count();
        let mut direct = 0.0;
        for &s in &totals {
            if s > tau {
                direct += s;
            }
        }
        if aggregate_support(&profile(&totals), tau) != direct {
            mismatches += 1;
        }
    }
    let only_boundary = aggregate_support(&profile(&[5.0, 5.0, 5.0]), 5.0) + 0.0;
    let ok = mismatches == 0 && boundary_cases > 0 && only_boundary == 0.0;
    report(
        2,
        "aggregate support",
        ok,
        &format!("1000 profiles, {mismatches} mismatches, {boundary_cases} views exactly at tau, all-at-tau sum {only_boundary}"),
    );
    assert!(ok);
}

#[test]
fn criterion_03_robust_averaging() {
    let sigma = 0.01;
    let noise = Normal::new(0.0, sigma).unwrap();
    let bound = 3.0 * sigma / 10f64.sqrt();
    let (mut rejected, mut within) = (0, 0);
    for trial in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let truth = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut bucket: Vec<Point3<f64>> = (0..10)
            .map(|_| truth + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        for _ in 0..2 {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            bucket.push(truth + Vector3::from(d) * 100.0 * sigma);
        }
        let kept = robust_inliers(&bucket);
        if !kept.contains(&10) && !kept.contains(&11) {
            rejected += 1;
        }
        let avg = robust_average(&bucket);
        if (avg - truth).iter().all(|e| e.abs() <= bound) {
            within += 1;
        }
    }
    let ok = rejected >= 990 && within >= 990;
    report(
        3,
        "robust averaging",
        ok,
        &format!("outliers rejected in {rejected}/1000 trials, average within 3σ/√10 per coordinate in {within}/1000"),
    );
    assert!(ok);
}

/// Two curves joined by `strong` sample links of weight `w`.
fn linked_pair(strong: usize, w: u32) -> bool {
    let mut mln = Mln::new();
    for s in 0..strong {
        mln.set(0, s, 1, s, w);
    }
    build_mccn(&mln, 2, TAU_EPS, TAU_SL).linked(0, 1)
}

#[test]
fn criterion_04_mccn_thresholds() {
    let cases = [((4, 3), false), ((5, 3), true), ((6, 3), true), ((6, 2), false), ((5, 2), false)];
    let results: Vec<String> =
        cases.iter().map(|&((n, w), want)| format!("{n}x w{w}: {}", if linked_pair(n, w) == want { "ok" } else { "wrong" })).collect();
    let ok = (TAU_EPS, TAU_SL) == (3, 5) && cases.iter().all(|&((n, w), want)| linked_pair(n, w) == want);
    report(4, "MCCN thresholds", ok, &format!("tau_eps {TAU_EPS}, tau_sl {TAU_SL}; {}", results.join(", ")));
    assert!(ok);
}

fn line(y: f64, n: usize) -> Vec<Point3<f64>> {
    (0..n).map(|k| Point3::new(k as f64 * 0.1, y, 0.0)).collect()
}

#[test]
fn criterion_05_evolution_fixed_point() {
    let d = 0.4;
    let params = EvolveParams { alpha: 1.0, max_iters: 1, tol: 1e-12, reach: 1.0 };
    let ev = evolve_cluster(&[line(0.0, 21), line(d, 21)], &[vec![vec![1]; 21], vec![vec![0]; 21]], &params);
    let deviation = ev
        .curves
        .iter()
        .flat_map(|c| c.iter().enumerate().map(|(k, p)| (p - Point3::new(k as f64 * 0.1, d / 2.0, 0.0)).norm()))
        .fold(0.0, f64::max);
    let same = vec![line(0.3, 21); 3];
    let partners = vec![vec![vec![0, 1, 2]; 21]; 3];
    let fixed = evolve_cluster(&same, &partners, &EvolveParams { max_iters: 10, ..params });
    let ok = deviation < 1e-9 && fixed.curves == same && fixed.converged;
    report(
        5,
        "evolution fixed point",
        ok,
        &format!("midline deviation {deviation:.2e} after one step; coincident cluster unchanged: {}", fixed.curves == same),
    );
    assert!(ok);
}

const DS: f64 = 0.01;

fn path(corners: &[[f64; 2]]) -> Vec<Point3<f64>> {
    let mut out = vec![Point3::new(corners[0][0], corners[0][1], 0.0)];
    for w in corners.windows(2) {
        let a = Point3::new(w[0][0], w[0][1], 0.0);
        let b = Point3::new(w[1][0], w[1][1], 0.0);
        let n = ((b - a).norm() / DS).round().max(1.0) as usize;
        out.extend((1..=n).map(|k| a + (b - a) * (k as f64 / n as f64)));
    }
    out
}

fn shape(g: &DrawingGraph) -> (Vec<usize>, usize) {
    let mut d: Vec<usize> = g.junctions().map(|(_, n)| n.degree).collect();
    d.sort_unstable();
    (d, g.links.len())
}

#[test]
fn criterion_06_merging_primitives() {
    let fixtures: [(&str, Vec<Vec<Point3<f64>>>, (Vec<usize>, usize)); 6] = [
        ("head overlap", vec![path(&[[0.0, 0.0], [1.2, 0.0]]), path(&[[1.0, 0.0], [2.0, 0.0]])], (vec![], 1)),
        ("tail overlap", vec![path(&[[0.0, 0.0], [1.2, 0.0]]), path(&[[-0.8, 0.0], [0.2, 0.0]])], (vec![], 1)),
        (
            "end-interior",
            vec![path(&[[0.0, 0.0], [2.0, 0.0]]), path(&[[0.6, 0.0], [1.0, 0.0], [1.5, 0.6]])],
            (vec![3], 3),
        ),
        (
            "Y-Y interior overlap",
            vec![path(&[[0.0, 0.0], [2.0, 0.0]]), path(&[[0.3, 0.5], [0.7, 0.0], [1.3, 0.0], [1.7, 0.5]])],
            (vec![3, 3], 5),
        ),
        (
            "bridge",
            vec![path(&[[0.0, 0.0], [2.0, 0.0]]), path(&[[0.25, 0.0], [0.7, 0.0], [1.0, 0.4], [1.3, 0.0], [1.75, 0.0]])],
            (vec![3, 3], 4),
        ),
        (
            "multi-end attachment",
            vec![
                path(&[[0.0, 1.0], [0.98, 1.0]]),
                path(&[[2.0, 1.0], [1.02, 1.0]]),
                path(&[[1.0, 0.0], [1.0, 0.98]]),
                path(&[[1.0, 2.0], [1.0, 1.02]]),
            ],
            (vec![4], 4),
        ),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, curves, want) in &fixtures {
        let (g, _) = merge_cluster(curves, &MergeParams::for_spacing(DS));
        let got = shape(&g);
        let good = &got == want && g.check_invariants().is_ok();
        ok &= good;
        lines.push(format!("{name} {:?}/{} {}", got.0, got.1, if good { "ok" } else { "wrong" }));
    }
    report(6, "merging primitives", ok, &lines.join("; "));
    assert!(ok);
}

fn cube_pr(scene: &SynthScene, graph: &DrawingGraph) -> (f64, f64) {
    let gt = scene.gt_polylines();
    let r = evaluate(&graph.polylines(), &gt, default_tau_prox(&gt), default_spacing(&gt)).unwrap();
    (r.precision, r.recall)
}

#[test]
fn criterion_07_clean_cube() {
    let scene = generate_scene(&SceneSpec::cube(7)).unwrap();
    let t = Instant::now();
    let rec = run_pipeline(&scene.dataset(), &Config::default(), &RunOptions { threads: Some(1), ..Default::default() })
        .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (degrees, links) = shape(&rec.graph);
    let (p, r) = cube_pr(&scene, &rec.graph);
    let ok = degrees == vec![3; 8] && links == 12 && p >= 0.99 && r >= 0.95 && secs < 60.0;
    report(
        7,
        "clean cube",
        ok,
        &format!("junction degrees {degrees:?}, {links} links, P {p:.4} R {r:.4}, {secs:.1} s single-threaded"),
    );
    assert!(ok);
}

#[test]
fn criterion_08_noisy_cube() {
    let scene = generate_scene(&SceneSpec::noisy_cube(7)).unwrap();
    let data = scene.dataset();
    let cfg = Config::default();
    let rec = run_pipeline(&data, &cfg, &RunOptions::default()).unwrap();
    let (p, r) = cube_pr(&scene, &rec.graph);

    let is_outlier = |v: usize, c: usize| matches!(scene.sources.get(&(v, c)), Some(FragmentSource::Outlier));
    let outlier_hyps: Vec<_> = hypotheses(&data, &cfg)
        .unwrap()
        .into_iter()
        .filter(|h| is_outlier(h.view1, h.curve1_id) || is_outlier(h.view2, h.curve2_id))
        .collect();
    let views: Vec<_> = data.views.values().cloned().collect();
    let index = EdgelIndex::build(&views, cfg.verification.delta_d);
    let verified = verify_all(&outlier_hyps, &data, &index, &cfg.verification_params()).unwrap();

    let ok = p >= 0.9 && r >= 0.8 && scene.outlier_fragments() > 0 && verified.is_empty();
    report(
        8,
        "noisy cube",
        ok,
        &format!(
            "P {p:.4} R {r:.4}; {} outlier fragments, {} hypotheses involving them, {} verified",
            scene.outlier_fragments(),
            outlier_hyps.len(),
            verified.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_09_sweep_monotonicity() {
    let scene = generate_scene(&SceneSpec::noisy_cube(7)).unwrap();
    let params: Vec<SweepParam> = (2..=6).map(SweepParam::NMinViews).collect();
    let points = pr_sweep(&scene.dataset(), &Config::default(), &scene.gt_polylines(), &params, &RunOptions::default())
        .unwrap();
    let rows: Vec<(f64, f64)> = points
        .iter()
        .map(|(pt, rec)| (pt.result.as_ref().map_or(f64::NAN, |r| r.recall), rec.graph.total_length()))
        .collect();
    let ok = rows.iter().all(|(r, _)| r.is_finite())
        && rows.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 <= w[0].1);
    let table: Vec<String> =
        rows.iter().zip(2..).map(|((r, len), n)| format!("n={n}: R {r:.4} length {len:.3}")).collect();
    report(9, "sweep monotonicity", ok, &table.join(", "));
    assert!(ok);
}

#[test]
fn criterion_10_thread_determinism() {
    let scene = generate_scene(&SceneSpec::noisy_cube(7)).unwrap();
    let data = scene.dataset();
    let run = |threads| {
        let rec = run_pipeline(&data, &Config::default(), &RunOptions { threads: Some(threads), ..Default::default() })
            .unwrap();
        (rec.graph.to_text(), write_ply(&rec.graph))
    };
    let (g1, p1) = run(1);
    let (g8, p8) = run(8);
    let ok = g1 == g8 && p1 == p8 && !g1.is_empty();
    report(
        10,
        "thread determinism",
        ok,
        &format!("drawing.graph identical: {}, PLY identical: {} ({} bytes)", g1 == g8, p1 == p8, g1.len()),
    );
    assert!(ok);
}

#[test]
fn criterion_11_redundancy_elimination() {
    let spec = SceneSpec {
        seed: 11,
        curves: vec![Primitive::Arc {
            center: [0.0, 0.0, 0.0],
            radius: 0.5,
            normal: [0.3, 0.2, 1.0],
            start_deg: 0.0,
            end_deg: 200.0,
        }],
        cameras: curvedraw::synth::RigSpec { count: 10, ..Default::default() },
        noise: Default::default(),
    };
    let scene = generate_scene(&spec).unwrap();
    let rec = run_pipeline(&scene.dataset(), &Config::default(), &RunOptions::default()).unwrap();
    let gt = scene.gt_polylines();
    let (tau, spacing) = (default_tau_prox(&gt), default_spacing(&gt));
    let once = evaluate(&rec.graph.polylines(), &gt, tau, spacing).unwrap();
    let mut doubled = rec.graph.polylines();
    doubled.extend(rec.graph.polylines());
    let twice = evaluate(&doubled, &gt, tau, spacing).unwrap();
    let length = rec.graph.total_length();
    let ok = rec.hypotheses >= 20 && rec.graph.links.len() == 1 && once.recall == twice.recall;
    report(
        11,
        "redundancy elimination",
        ok,
        &format!(
            "{} hypotheses, {} link(s) of length {length:.3} (truth {:.3}), recall {:.4} once / {:.4} duplicated",
            rec.hypotheses,
            rec.graph.links.len(),
            gt[0].arc_length(),
            once.recall,
            twice.recall
        ),
    );
    assert!(ok);
}
