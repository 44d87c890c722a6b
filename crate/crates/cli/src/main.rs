use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdq_cli::formats::{parse_detections, parse_ground_truth, FormatError};
use pdq_cli::render::{build_overlay, heatmap, plot_sweep, rasterize, save_gray, save_rgb, RenderError};
use pdq_cli::report::{write_sweep_csv, ReportJson};
use pdq_core::simharness::{
    random_rectangles_scene, run_sweep, synthetic_square_scene, tiled_objects_scene, Experiment, MissMode, SimConfig,
    SimError, SweepSpec,
};
use pdq_core::spatial::build_probability_map;
use pdq_core::{evaluate, map_score, Dataset, EvalConfig, ScoreError, SpatialConfig, SpatialError};

#[derive(Parser)]
#[command(name = "pdq", version, about = "Probability-based detection quality evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a simulated-detector sweep and write CSV and a plot.
    Simulate(SimulateArgs),
    /// Draw an assignment overlay or a detection heatmap for one image.
    Render(RenderArgs),
    /// Check ground-truth and detection files.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct ScoringArgs {
    /// Drop detections whose winning-class probability is below this.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Exponent on spatial quality in the pairwise score.
    #[arg(long, default_value_t = 0.5)]
    weight: f64,
    /// Support threshold on pixel probability.
    #[arg(long, default_value_t = 1e-4)]
    pmin: f64,
    /// Probability clamp applied before logarithms.
    #[arg(long, default_value_t = 1e-14)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-7)]
    bvn_tolerance: f64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "PDQ_THREADS", default_value_t = 0)]
    threads: usize,
}

impl ScoringArgs {
    fn eval_config(&self) -> EvalConfig<f64> {
        EvalConfig {
            spatial: SpatialConfig {
                epsilon: self.epsilon,
                p_min: self.pmin,
                bvn_tolerance: self.bvn_tolerance,
            },
            weight: self.weight,
            tau: self.tau,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also compute mean average precision.
    #[arg(long)]
    map: bool,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scene {
    /// One square object centred in a square image.
    Square,
    /// Random rectangles.
    Rectangles,
    /// Non-overlapping squares, classes in contiguous blocks.
    Tiled,
}

#[derive(Clone, Copy, ValueEnum)]
enum MissModeArg {
    Random,
    Tail,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_experiment)]
    experiment: Experiment,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Scene::Square)]
    scene: Scene,
    /// Square scene size divisor (1 gives 2000 px images).
    #[arg(long, default_value_t = 10)]
    downscale: u32,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    per_frame: usize,
    #[arg(long, default_value_t = 0.0)]
    true_variance: f64,
    #[arg(long, default_value_t = 0.0)]
    reported_variance: f64,
    #[arg(long, default_value_t = 1.0)]
    label_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    miss_rate: f64,
    #[arg(long, value_enum, default_value_t = MissModeArg::Random)]
    miss_mode: MissModeArg,
    #[arg(long, default_value_t = 0)]
    border_fps: usize,
    #[arg(long, default_value_t = 0.5)]
    fp_score: f64,
    /// Skip the mAP baseline.
    #[arg(long)]
    no_map: bool,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    /// Image id to draw.
    #[arg(long)]
    frame: u32,
    /// Output image (.png, or .pgm for heatmaps).
    #[arg(long)]
    out: PathBuf,
    /// Draw the probability heatmap of this detection instead of the overlay.
    #[arg(long)]
    heatmap: Option<usize>,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: Option<PathBuf>,
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    Experiment::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
        format!("unknown experiment `{s}`, expected one of {}", names.join(", "))
    })
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl Failure {
    fn code(&self) -> &'static str {
        match self {
            Failure::Format(e) => e.code(),
            Failure::Score(_) => "evaluation",
            Failure::Sim(_) => "simulation",
            Failure::Render(_) => "render",
            Failure::Spatial(_) => "spatial",
            Failure::Io { .. } => "io",
            Failure::Usage(_) => "usage",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| Failure::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn load(gt: &Path, det: &Path) -> Result<(Dataset, Vec<pdq_core::Detection<f64>>), Failure> {
    let dataset = parse_ground_truth(gt)?;
    let dets = parse_detections(det, &dataset)?;
    Ok((dataset, dets))
}

fn run_evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let (dataset, dets) = load(&args.gt, &args.det)?;
    let cfg = args.scoring.eval_config();
    let (report, map) = with_threads(args.scoring.threads, || {
        let report = evaluate(&dataset, &dets, &cfg);
        let map = args.map.then(|| map_score(&dataset, &pdq_core::filter_by_threshold(&dets, cfg.tau)));
        (report, map)
    })?;
    let json = ReportJson::new(&report?, cfg.spatial.epsilon, cfg.spatial.p_min, map.as_ref(), &dataset);
    for w in &json.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", json.table());
    if let Some(out) = &args.out {
        std::fs::write(out, json.to_json()).map_err(io_err(out))?;
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let dataset = match args.scene {
        Scene::Square => synthetic_square_scene(args.downscale, args.classes),
        Scene::Rectangles => random_rectangles_scene(args.seed, args.frames, args.per_frame, 200, (10, 60), args.classes),
        Scene::Tiled => tiled_objects_scene(args.frames * args.per_frame, args.classes, args.per_frame, 8),
    };
    let spec = SweepSpec {
        experiment: args.experiment,
        grid: args.grid.clone(),
        repetitions: args.reps,
        seed: args.seed,
        base: SimConfig {
            true_variance: args.true_variance,
            reported_variance: args.reported_variance,
            gt_label_prob: args.label_prob,
            miss_rate: args.miss_rate,
            miss_mode: match args.miss_mode {
                MissModeArg::Random => MissMode::Random,
                MissModeArg::Tail => MissMode::Tail,
            },
            border_fps_per_frame: args.border_fps,
            fp_score: args.fp_score,
            ..SimConfig::default()
        },
        compute_map: !args.no_map,
    };
    let cfg = args.scoring.eval_config();
    let result = with_threads(args.scoring.threads, || run_sweep(&dataset, &spec, &cfg))??;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let name = args.experiment.name();
    let csv_path = args.out.join(format!("{name}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_sweep_csv(file, &result).map_err(|e| Failure::Io {
        path: csv_path.clone(),
        source: std::io::Error::other(e),
    })?;
    save_rgb(&plot_sweep(&result, 640, 400), &args.out.join(format!("{name}.png")))?;
    for (v, pdq) in result.mean_pdq() {
        println!("{name} {v}: mean pdq {pdq:.6}");
    }
    Ok(())
}

fn run_render(args: &RenderArgs) -> Result<(), Failure> {
    let (dataset, dets) = load(&args.gt, &args.det)?;
    let frame = dataset
        .frame(pdq_core::FrameId(args.frame))
        .ok_or_else(|| Failure::Usage(format!("no image with id {}", args.frame)))?;
    let cfg = args.scoring.eval_config();
    if let Some(j) = args.heatmap {
        let det = dets
            .get(j)
            .ok_or_else(|| Failure::Usage(format!("detection {j} does not exist")))?;
        if det.frame() != frame.id {
            return Err(Failure::Usage(format!("detection {j} belongs to image {}", det.frame())));
        }
        let map = match build_probability_map(det, frame.dims, &cfg.spatial) {
            Err(SpatialError::EmptySupport) => pdq_core::ProbabilityMap::empty(frame.dims, cfg.spatial.epsilon),
            other => other?,
        };
        save_gray(&heatmap(&map), &args.out)?;
        return Ok(());
    }
    let report = with_threads(args.scoring.threads, || evaluate(&dataset, &dets, &cfg))??;
    let assignment = report
        .per_frame
        .iter()
        .find(|a| a.frame == frame.id)
        .expect("every frame is assigned");
    save_rgb(&rasterize(&build_overlay(frame, &dets, assignment)), &args.out)?;
    Ok(())
}

fn run_validate(args: &ValidateArgs) -> Result<(), Failure> {
    let dataset = parse_ground_truth(&args.gt)?;
    println!(
        "ground truth ok: {} images, {} objects, {} classes",
        dataset.frames.len(),
        dataset.num_objects(),
        dataset.num_classes()
    );
    if let Some(det) = &args.det {
        let dets = parse_detections(det, &dataset)?;
        println!("detections ok: {}", dets.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Evaluate(a) => run_evaluate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Render(a) => run_render(a),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
