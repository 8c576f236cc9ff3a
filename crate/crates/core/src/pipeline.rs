//! End-to-end reconstruction: load → hypotheses → verify → fuse →
//! consistency → evolve → merge → drawing, with optional per-stage
//! checkpoints and a run log.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::averaging::fuse_redundant;
use crate::config::Config;
use crate::consistency::{build_mccn, build_mln, dump_mccn, gap_fill, Mccn};
use crate::curve::{resample_uniform_with_sources, Curve3D, EdgelIndex};
use crate::dataset::Dataset;
use crate::drawing::{build_drawing, evolve_cluster, merge_cluster, write_ply, DrawingGraph};
use crate::eval::{evaluate, SweepPoint};
use crate::hypothesis::{dump_hypotheses, enumerate_view_pairs, generate_all, CurvePairHypothesis};
use crate::io::{self, format_curves3d, polylines_to_curves3d, write_text};
use crate::synth::{generate_scene, SceneSpec};
use crate::verification::verify_all;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Load,
    Hypotheses,
    Verify,
    Fuse,
    Consistency,
    Evolve,
    Merge,
    Drawing,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Load,
        Stage::Hypotheses,
        Stage::Verify,
        Stage::Fuse,
        Stage::Consistency,
        Stage::Evolve,
        Stage::Merge,
        Stage::Drawing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Hypotheses => "hypotheses",
            Stage::Verify => "verify",
            Stage::Fuse => "fuse",
            Stage::Consistency => "consistency",
            Stage::Evolve => "evolve",
            Stage::Merge => "merge",
            Stage::Drawing => "drawing",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Stage::ALL.iter().map(|st| st.name()).collect();
            format!("unknown stage `{s}` (expected one of: {})", names.join(", "))
        })
    }
}

/// A failure tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("stage {stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, err: impl fmt::Display) -> Self {
        Self { stage, message: err.to_string() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for the data-parallel sections; `None` uses the
    /// global pool.
    pub threads: Option<usize>,
    /// Directory receiving one checkpoint file per stage.
    pub checkpoint_dir: Option<PathBuf>,
    /// Last stage to run; `None` runs everything.
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    /// Stage-specific output count (hypotheses, curves, clusters, links...).
    pub count: usize,
    pub seconds: f64,
}

/// Every intermediate product of a run. Products of stages after the stop
/// stage are left empty.
#[derive(Debug, Clone, Default)]
pub struct Reconstruction {
    pub hypotheses: usize,
    pub verified: Vec<Curve3D>,
    pub fused: Vec<Curve3D>,
    /// Fused curves resampled at `spacing`, the input of the consistency
    /// networks.
    pub curves: Vec<Curve3D>,
    pub mccn: Option<Mccn>,
    pub evolved: Vec<Vec<Point3<f64>>>,
    /// Per cluster: evolution iterations and whether they converged.
    pub evolution: Vec<(usize, bool)>,
    pub components: Vec<DrawingGraph>,
    pub graph: DrawingGraph,
    pub spacing: f64,
    pub records: Vec<StageRecord>,
}

/// A loaded dataset plus what is known about where it came from.
#[derive(Debug, Clone)]
pub struct Input {
    pub data: Dataset,
    pub ground_truth: Option<Vec<Vec<Point3<f64>>>>,
    pub seed: Option<u64>,
}

/// Loads the dataset named by the config: a data directory, or a synthetic
/// scene generated in memory.
pub fn load_input(cfg: &Config) -> Result<Input, PipelineError> {
    let err = |e: &dyn fmt::Display| PipelineError::new(Stage::Load, e);
    let mut ground_truth = match &cfg.input.ground_truth {
        Some(p) => Some(io::load_curves3d(p).map_err(|e| err(&e))?.iter().map(Curve3D::positions).collect()),
        None => None,
    };
    if let Some(dir) = &cfg.input.data_dir {
        let data = io::load_dataset(dir).map_err(|e| err(&e))?;
        return Ok(Input { data, ground_truth, seed: cfg.input.seed });
    }
    let Some(scene) = &cfg.input.scene else {
        return Err(err(&"config names neither input.data_dir nor input.scene"));
    };
    let text = io::read_text(scene).map_err(|e| err(&e))?;
    let mut spec = SceneSpec::from_toml(&text).map_err(|e| err(&format!("{}: {e}", scene.display())))?;
    if let Some(seed) = cfg.input.seed {
        spec.seed = seed;
    }
    let generated = generate_scene(&spec).map_err(|e| err(&e))?;
    ground_truth.get_or_insert_with(|| generated.gt_polylines());
    Ok(Input { data: generated.dataset(), ground_truth, seed: Some(spec.seed) })
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| PipelineError::new(Stage::Load, e))?;
            Ok(pool.install(f))
        }
    }
}

fn diameter(curves: &[Curve3D]) -> f64 {
    let pts: Vec<Vec<Point3<f64>>> = curves.iter().map(Curve3D::positions).collect();
    crate::eval::diagonal(&pts)
}

struct Runner<'a> {
    cfg: &'a Config,
    opts: &'a RunOptions,
    out: Reconstruction,
    clock: Instant,
}

impl Runner<'_> {
    /// Records the finished stage and reports whether the run continues.
    fn finish(&mut self, stage: Stage, count: usize) -> bool {
        let seconds = self.clock.elapsed().as_secs_f64();
        log::info!("stage {stage}: {count} in {seconds:.3} s");
        self.out.records.push(StageRecord { stage, count, seconds });
        self.clock = Instant::now();
        self.opts.stop_after.is_none_or(|s| stage < s)
    }

    fn checkpoint(&self, stage: Stage, name: &str, text: impl FnOnce() -> String) -> Result<(), PipelineError> {
        if let Some(dir) = &self.opts.checkpoint_dir {
            write_text(&dir.join(name), &text()).map_err(|e| PipelineError::new(stage, e))?;
        }
        Ok(())
    }
}

/// Runs the whole pipeline on a loaded dataset.
pub fn run_pipeline(data: &Dataset, cfg: &Config, opts: &RunOptions) -> Result<Reconstruction, PipelineError> {
    with_threads(opts.threads, || {
        let mut runner = Runner { cfg, opts, out: Reconstruction::default(), clock: Instant::now() };
        if !runner.finish(Stage::Load, data.curve_count()) {
            return Ok(runner.out);
        }
        let hyps = hypotheses(data, cfg)?;
        runner.out.hypotheses = hyps.len();
        runner.checkpoint(Stage::Hypotheses, "hypotheses.txt", || dump_hypotheses(&hyps))?;
        if !runner.finish(Stage::Hypotheses, hyps.len()) {
            return Ok(runner.out);
        }
        run_stages(runner, data, &hyps)
    })?
}

/// Generates the hypotheses of every configured view pair.
pub fn hypotheses(data: &Dataset, cfg: &Config) -> Result<Vec<CurvePairHypothesis>, PipelineError> {
    let ids = data.view_ids();
    let pairs: Vec<(usize, usize)> =
        enumerate_view_pairs(ids.len(), cfg.view_pair_strategy()).into_iter().map(|(a, b)| (ids[a], ids[b])).collect();
    generate_all(data, &pairs, &cfg.hypothesis_params()).map_err(|e| PipelineError::new(Stage::Hypotheses, e))
}

fn run_stages(mut r: Runner, data: &Dataset, hyps: &[CurvePairHypothesis]) -> Result<Reconstruction, PipelineError> {
    let cfg = r.cfg;
    r.out.hypotheses = hyps.len();

    let vparams = cfg.verification_params();
    let views: Vec<_> = data.views.values().cloned().collect();
    let index = EdgelIndex::build(&views, vparams.delta_d);
    r.out.verified = verify_all(hyps, data, &index, &vparams).map_err(|e| PipelineError::new(Stage::Verify, e))?;
    r.checkpoint(Stage::Verify, "verified.curves3d", || format_curves3d(&r.out.verified))?;
    if !r.finish(Stage::Verify, r.out.verified.len()) {
        return Ok(r.out);
    }

    r.out.fused = fuse_redundant(&r.out.verified).map_err(|e| PipelineError::new(Stage::Fuse, e))?;
    r.checkpoint(Stage::Fuse, "fused.curves3d", || format_curves3d(&r.out.fused))?;
    if !r.finish(Stage::Fuse, r.out.fused.len()) {
        return Ok(r.out);
    }

    let ds = cfg.drawing.spacing_for(diameter(&r.out.fused));
    r.out.spacing = ds;
    r.out.curves = resample_all(&r.out.fused, ds);
    let mln = build_mln(&r.out.curves);
    let c = &cfg.consistency;
    let mccn = build_mccn(&mln, r.out.curves.len(), c.tau_eps, c.tau_sl);
    let filled = gap_fill(&mln, &mccn, c.g_max);
    log::info!("sample links: {} measured, {} after gap filling", mln.len(), filled.len());
    r.checkpoint(Stage::Consistency, "curves.curves3d", || format_curves3d(&r.out.curves))?;
    r.checkpoint(Stage::Consistency, "mccn.txt", || dump_mccn(&mccn))?;
    let n_clusters = mccn.clusters.len();
    if !r.finish(Stage::Consistency, n_clusters) {
        r.out.mccn = Some(mccn);
        return Ok(r.out);
    }

    let eparams = cfg.drawing.evolve_params(ds);
    let positions: Vec<Vec<Point3<f64>>> = r.out.curves.iter().map(Curve3D::positions).collect();
    let evolutions: Vec<(Vec<Vec<Point3<f64>>>, usize, bool)> = mccn
        .clusters
        .par_iter()
        .map(|members| {
            if members.len() < 2 {
                return (members.iter().map(|&m| positions[m].clone()).collect(), 0, true);
            }
            let curves: Vec<Vec<Point3<f64>>> = members.iter().map(|&m| positions[m].clone()).collect();
            let local: BTreeMap<usize, usize> = members.iter().enumerate().map(|(k, &m)| (m, k)).collect();
            let links: Vec<Vec<Vec<usize>>> = members
                .iter()
                .map(|&m| {
                    let neighbours: Vec<usize> = mccn.neighbours(m).iter().filter_map(|g| local.get(g).copied()).collect();
                    vec![neighbours; positions[m].len()]
                })
                .collect();
            let ev = evolve_cluster(&curves, &links, &eparams);
            (ev.curves, ev.iterations, ev.converged)
        })
        .collect();
    r.out.evolution = evolutions.iter().map(|(_, it, conv)| (*it, *conv)).collect();
    let evolved: Vec<Vec<Vec<Point3<f64>>>> = evolutions.into_iter().map(|(c, _, _)| c).collect();
    r.out.evolved = evolved.iter().flatten().cloned().collect();
    r.checkpoint(Stage::Evolve, "evolved.curves3d", || format_curves3d(&polylines_to_curves3d(&r.out.evolved)))?;
    r.out.mccn = Some(mccn);
    if !r.finish(Stage::Evolve, r.out.evolved.len()) {
        return Ok(r.out);
    }

    let mparams = cfg.drawing.merge_params(ds);
    r.out.components = evolved.par_iter().map(|curves| merge_cluster(curves, &mparams).0).collect();
    let merged_links = r.out.components.iter().map(|g| g.links.len()).sum();
    if !r.finish(Stage::Merge, merged_links) {
        return Ok(r.out);
    }

    r.out.graph = build_drawing(&r.out.components, &mparams);
    r.out.graph.check_invariants().map_err(|e| PipelineError::new(Stage::Drawing, e))?;
    r.checkpoint(Stage::Drawing, "drawing.graph", || r.out.graph.to_text())?;
    r.checkpoint(Stage::Drawing, "drawing.ply", || write_ply(&r.out.graph))?;
    r.finish(Stage::Drawing, r.out.graph.links.len());
    Ok(r.out)
}

/// Resamples every curve at `ds`, dropping curves shorter than one spacing,
/// and numbers the survivors consecutively.
fn resample_all(curves: &[Curve3D], ds: f64) -> Vec<Curve3D> {
    let mut out: Vec<Curve3D> =
        curves.par_iter().filter_map(|c| resample_uniform_with_sources(c, ds).ok().map(|(c, _)| c)).collect();
    for (k, c) in out.iter_mut().enumerate() {
        c.curve_id = k;
    }
    out
}

/// The run log: seed, config hash, and per-stage counts and wall times.
pub fn run_log(cfg: &Config, seed: Option<u64>, threads: Option<usize>, records: &[StageRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", seed.map_or_else(|| "none".to_string(), |v| v.to_string()));
    let _ = writeln!(s, "config_sha256 {}", cfg.hash());
    let _ = writeln!(s, "threads {}", threads.map_or_else(|| "default".to_string(), |v| v.to_string()));
    for r in records {
        let _ = writeln!(s, "stage {} count {} seconds {:.3}", r.stage, r.count, r.seconds);
    }
    let total: f64 = records.iter().map(|r| r.seconds).sum();
    let _ = writeln!(s, "total_seconds {total:.3}");
    s
}

/// Writes `drawing.graph`, `drawing.ply` and `run.log` into `dir`.
pub fn write_outputs(dir: &Path, rec: &Reconstruction, log: &str) -> Result<(), PipelineError> {
    let err = |e: io::IoError| PipelineError::new(Stage::Drawing, e);
    write_text(&dir.join("drawing.graph"), &rec.graph.to_text()).map_err(err)?;
    write_text(&dir.join("drawing.ply"), &write_ply(&rec.graph)).map_err(err)?;
    write_text(&dir.join("run.log"), log).map_err(err)
}

/// A parameter varied by a precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParam {
    NMinViews(usize),
    TauV(f64),
}

impl SweepParam {
    pub fn label(&self) -> String {
        match self {
            SweepParam::NMinViews(n) => format!("n_min_views={n}"),
            SweepParam::TauV(t) => format!("tau_v={t}"),
        }
    }

    fn apply(&self, cfg: &mut Config) {
        match *self {
            SweepParam::NMinViews(n) => cfg.verification.n_min_views = n,
            SweepParam::TauV(t) => cfg.verification.tau_v = t,
        }
    }
}

/// Reconstructs once per sweep parameter and evaluates each drawing against
/// `gt`. Hypotheses are shared between points, and the sample spacing is
/// pinned to the one chosen by the first point so that every point is
/// sampled alike. Failed points are reported, not fatal.
pub fn pr_sweep(
    data: &Dataset,
    cfg: &Config,
    gt: &[Vec<Point3<f64>>],
    params: &[SweepParam],
    opts: &RunOptions,
) -> Result<Vec<(SweepPoint, Reconstruction)>, PipelineError> {
    let tau = cfg.eval.tau_prox.unwrap_or(cfg.eval.tau_prox_fraction * crate::eval::diagonal(gt));
    let eval_spacing = cfg.eval.spacing_fraction * crate::eval::diagonal(gt);
    with_threads(opts.threads, || {
        let hyps = hypotheses(data, cfg)?;
        let mut pinned = cfg.clone();
        let mut out = Vec::with_capacity(params.len());
        for p in params {
            let mut c = pinned.clone();
            p.apply(&mut c);
            let inner = RunOptions { threads: None, checkpoint_dir: None, stop_after: None };
            let runner = Runner { cfg: &c, opts: &inner, out: Reconstruction::default(), clock: Instant::now() };
            let run = run_stages(runner, data, &hyps);
            let (result, rec) = match run {
                Ok(rec) => {
                    if pinned.drawing.spacing.is_none() && rec.spacing > 0.0 {
                        pinned.drawing.spacing = Some(rec.spacing);
                    }
                    (evaluate(&rec.graph.polylines(), gt, tau, eval_spacing).map_err(|e| e.to_string()), rec)
                }
                Err(e) => (Err(e.to_string()), Reconstruction::default()),
            };
            out.push((SweepPoint { param: p.label(), result }, rec));
        }
        Ok(out)
    })?
}
