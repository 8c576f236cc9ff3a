//! `curvedraw`: command-line driver for synthetic data generation,
//! reconstruction, evaluation and precision/recall sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Point3;

use curvedraw::config::Config;
use curvedraw::curve::Curve3D;
use curvedraw::drawing::{write_ply, DrawingGraph};
use curvedraw::eval::{default_spacing, diagonal, evaluate, pr_csv, PrResult};
use curvedraw::io::{format_curves3d, load_curves3d, polylines_to_curves3d, read_text, save_dataset, write_text};
use curvedraw::pipeline::{load_input, pr_sweep, run_log, run_pipeline, write_outputs, RunOptions, Stage, SweepParam};
use curvedraw::synth::{generate_scene, SceneSpec};

#[derive(Debug, Parser)]
#[command(name = "curvedraw", version, about = "Multiview 3D curve drawing reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: cameras, per-view curve fragments and
    /// ground-truth 3D curves.
    Synth(SynthArgs),
    /// Reconstruct a 3D curve drawing.
    Run(RunArgs),
    /// Score a reconstruction against ground truth.
    Eval(EvalArgs),
    /// Reconstruct once per threshold value and print a precision/recall table.
    Sweep(SweepArgs),
    /// Convert a drawing graph to PLY.
    ExportPly(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Cube,
    NoisyCube,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene specification (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    /// Built-in scene instead of a specification file.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Minimum integrated support of a confirmation view.
    #[arg(long)]
    tau_v: Option<f64>,
    /// Minimum number of supporting views.
    #[arg(long)]
    min_views: Option<usize>,
    /// Evaluation proximity threshold (absolute).
    #[arg(long)]
    tau_prox: Option<f64>,
}

impl Overrides {
    fn config(&self, positional: Option<&Path>) -> Result<Config, String> {
        let path = positional.or(self.config.as_deref()).ok_or("a configuration file is required (--config)")?;
        let mut cfg = Config::load(path).map_err(|e| e.to_string())?;
        if let Some(s) = self.seed {
            cfg.input.seed = Some(s);
        }
        if let Some(t) = self.tau_v {
            cfg.verification.tau_v = t;
        }
        if let Some(n) = self.min_views {
            cfg.verification.n_min_views = n;
        }
        if let Some(t) = self.tau_prox {
            cfg.eval.tau_prox = Some(t);
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Pipeline configuration; same as --config.
    config_file: Option<PathBuf>,
    #[command(flatten)]
    common: Overrides,
    /// Output directory for drawing.graph, drawing.ply and run.log.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Directory receiving one checkpoint file per stage.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Stop after this stage.
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Reconstruction: a drawing graph or a 3D curve file.
    #[arg(long)]
    recon: PathBuf,
    /// Ground-truth 3D curve file.
    #[arg(long)]
    gt: PathBuf,
    /// Proximity threshold; defaults to 0.5% of the ground-truth diagonal.
    #[arg(long)]
    tau_prox: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    MinViews,
    TauV,
}

#[derive(Debug, Args)]
struct SweepArgs {
    config_file: Option<PathBuf>,
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_enum, default_value = "min-views")]
    param: SweepKind,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
    values: Vec<f64>,
    /// Write the CSV table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::ExportPly(a) => export_ply(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), String> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(path), _) => {
            SceneSpec::from_toml(&read_text(path).map_err(|e| e.to_string())?).map_err(|e| format!("{}: {e}", path.display()))?
        }
        (None, Some(Preset::Cube)) => SceneSpec::cube(0),
        (None, Some(Preset::NoisyCube)) => SceneSpec::noisy_cube(0),
        (None, None) => unreachable!("clap requires --spec or --preset"),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
    save_dataset(&a.out, &scene.dataset()).map_err(|e| e.to_string())?;
    let gt = polylines_to_curves3d(&scene.gt_polylines());
    write_text(&a.out.join("gt.curves3d"), &format_curves3d(&gt)).map_err(|e| e.to_string())?;
    write_text(&a.out.join("scene.toml"), &spec.to_toml()).map_err(|e| e.to_string())?;
    println!(
        "wrote {} views, {} fragments ({} outliers), {} ground-truth curves to {}",
        scene.views.len(),
        scene.views.iter().map(|v| v.curves.len()).sum::<usize>(),
        scene.outlier_fragments(),
        gt.len(),
        a.out.display()
    );
    Ok(())
}

fn tau_prox(cfg: &Config, gt: &[Vec<Point3<f64>>]) -> f64 {
    cfg.eval.tau_prox.unwrap_or(cfg.eval.tau_prox_fraction * diagonal(gt))
}

fn pr_line(r: &PrResult) -> String {
    format!(
        "precision {} recall {} tp {} fp {} fn {} tau_prox {}",
        r.precision, r.recall, r.tp_recon, r.fp, r.fn_, r.tau_prox
    )
}

fn run(a: RunArgs) -> Result<(), String> {
    let cfg = a.common.config(a.config_file.as_deref())?;
    let input = load_input(&cfg).map_err(|e| e.to_string())?;
    let opts = RunOptions { threads: a.common.threads, checkpoint_dir: a.checkpoint.clone(), stop_after: a.stage };
    let rec = run_pipeline(&input.data, &cfg, &opts).map_err(|e| e.to_string())?;
    let mut log = run_log(&cfg, input.seed, a.common.threads, &rec.records);
    let finished = rec.records.last().is_some_and(|r| r.stage == Stage::Drawing);
    if finished {
        if let Some(gt) = &input.ground_truth {
            let spacing = cfg.eval.spacing_fraction * diagonal(gt);
            let r = evaluate(&rec.graph.polylines(), gt, tau_prox(&cfg, gt), spacing).map_err(|e| e.to_string())?;
            log.push_str(&pr_line(&r));
            log.push('\n');
        }
        write_outputs(&a.out, &rec, &log).map_err(|e| e.to_string())?;
        println!(
            "{} nodes, {} links, {} junctions -> {}",
            rec.graph.nodes.len(),
            rec.graph.links.len(),
            rec.graph.junction_count(),
            a.out.display()
        );
    } else {
        write_text(&a.out.join("run.log"), &log).map_err(|e| e.to_string())?;
        let last = rec.records.last().map_or("load".to_string(), |r| r.stage.to_string());
        println!("stopped after stage {last} -> {}", a.out.display());
    }
    Ok(())
}

/// Polylines of a drawing graph or of a 3D curve file.
fn load_recon(path: &Path) -> Result<Vec<Vec<Point3<f64>>>, String> {
    let text = read_text(path).map_err(|e| e.to_string())?;
    if text.trim_start().starts_with("curves3d") {
        let curves = load_curves3d(path).map_err(|e| e.to_string())?;
        return Ok(curves.iter().map(Curve3D::positions).collect());
    }
    let g = DrawingGraph::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(g.polylines())
}

fn eval(a: EvalArgs) -> Result<(), String> {
    let recon = load_recon(&a.recon)?;
    let gt: Vec<Vec<Point3<f64>>> =
        load_curves3d(&a.gt).map_err(|e| e.to_string())?.iter().map(Curve3D::positions).collect();
    let tau = a.tau_prox.unwrap_or(0.005 * diagonal(&gt));
    let r = evaluate(&recon, &gt, tau, default_spacing(&gt)).map_err(|e| e.to_string())?;
    println!("{}", pr_line(&r));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), String> {
    let cfg = a.common.config(a.config_file.as_deref())?;
    let input = load_input(&cfg).map_err(|e| e.to_string())?;
    let gt = input.ground_truth.ok_or("sweep needs ground truth (input.ground_truth or a synthetic scene)")?;
    let params: Vec<SweepParam> = a
        .values
        .iter()
        .map(|&v| match a.param {
            SweepKind::MinViews if v >= 0.0 && v.fract() == 0.0 => Ok(SweepParam::NMinViews(v as usize)),
            SweepKind::MinViews => Err(format!("min-views value {v} is not a whole number")),
            SweepKind::TauV => Ok(SweepParam::TauV(v)),
        })
        .collect::<Result<_, _>>()?;
    let opts = RunOptions { threads: a.common.threads, ..Default::default() };
    let points = pr_sweep(&input.data, &cfg, &gt, &params, &opts).map_err(|e| e.to_string())?;
    let table: Vec<_> = points.into_iter().map(|(p, _)| p).collect();
    let csv = pr_csv(&table);
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(out, &csv).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn export_ply(a: ExportArgs) -> Result<(), String> {
    let text = read_text(&a.recon).map_err(|e| e.to_string())?;
    let g = DrawingGraph::from_text(&text).map_err(|e| format!("{}: {e}", a.recon.display()))?;
    write_text(&a.out, &write_ply(&g)).map_err(|e| e.to_string())
}
