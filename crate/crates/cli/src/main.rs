//! `mcma`: generate synthetic scenes, run the temporal segmentation
//! pipeline, sweep the fusion weight, benchmark stages and score masks.
//!
//! Argument errors exit with status 2, runtime failures with status 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use mcma::eval::{evaluate_run, EvalConfig, Subset, VideoEval};
use mcma::io;
use mcma::kv::KvConfig;
use mcma::pipeline::{benchmark_report, run_with, timings_csv, REPORT_HEADER};
use mcma::synth::{generate, OracleFlow, SceneSpec};
use mcma::{
    Executor, FarnebackEstimator, FlowField, FlowParams, FlowScale, Frame, Method, Model, ModelSpec, PipelineConfig,
    SegmentationMask,
};

#[derive(Parser)]
#[command(name = "mcma", version, about = "Motion-corrected moving average for video segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene described by a `key = value` file.
    Generate(GenerateArgs),
    /// Segment a frame directory.
    Run(RunArgs),
    /// Compare EMA and MCMA over alpha = 0.10, 0.15, ..., 0.90.
    Sweep(SweepArgs),
    /// Per-stage timing over flow scales and executors.
    Bench(BenchArgs),
    /// Score predicted masks against ground truth, split by motion.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Input frames and the model applied to them.
#[derive(Args)]
struct Source {
    /// Directory of numbered PPM/PGM frames.
    #[arg(long)]
    frames: PathBuf,
    /// Model description; defaults to `<frames>/../model.cfg`.
    #[arg(long)]
    model_config: Option<PathBuf>,
}

/// Overrides for the flow estimator; unset fields keep their defaults.
#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    pyramid_levels: Option<usize>,
    #[arg(long)]
    pyramid_scale: Option<f32>,
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    poly_n: Option<usize>,
    #[arg(long)]
    poly_sigma: Option<f32>,
    /// Negate the estimate (for a forward-flow convention).
    #[arg(long)]
    negate_flow: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = Method::Mcma)]
    mode: Method,
    #[arg(long, default_value_t = 0.1, value_parser = parse_alpha)]
    alpha: f32,
    #[arg(long, default_value_t = 2.0, value_parser = parse_lambda)]
    lambda: f32,
    #[arg(long, default_value_t = FlowScale::Full)]
    flow_scale: FlowScale,
    #[arg(long, default_value_t = Executor::Sequential)]
    executor: Executor,
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Ground-truth masks; defaults to `<frames>/../masks`.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0, value_parser = parse_lambda)]
    lambda: f32,
    #[arg(long, default_value_t = FlowScale::Full)]
    flow_scale: FlowScale,
    #[command(flatten)]
    flow: FlowArgs,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0.1, value_parser = parse_alpha)]
    alpha: f32,
    #[arg(long, default_value_t = 2.0, value_parser = parse_lambda)]
    lambda: f32,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25")]
    scales: Vec<FlowScale>,
    #[arg(long, value_delimiter = ',', default_value = "seq,par")]
    executors: Vec<Executor>,
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted masks as `NAME=DIR`, or `DIR` to name the method after it.
    #[arg(long, required = true)]
    pred: Vec<String>,
    #[arg(long)]
    gt: PathBuf,
    /// Flow used for the motion split (`.mcfl`, any resolution).
    #[arg(long)]
    flows: PathBuf,
    /// Defaults to the largest ground-truth label plus one.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Also write per-frame metrics as JSON lines.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_alpha(s: &str) -> std::result::Result<f32, String> {
    let a: f32 = s.parse().map_err(|e| format!("{e}"))?;
    if a > 0.0 && a <= 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1], got {s}"))
    }
}

fn parse_lambda(s: &str) -> std::result::Result<f32, String> {
    let l: f32 = s.parse().map_err(|e| format!("{e}"))?;
    if l >= 0.0 && l.is_finite() {
        Ok(l)
    } else {
        Err(format!("lambda must be finite and nonnegative, got {s}"))
    }
}

impl FlowArgs {
    fn estimator(&self, scale: FlowScale) -> Result<FarnebackEstimator> {
        let d = FlowParams::default();
        let params = FlowParams {
            pyramid_levels: self.pyramid_levels.unwrap_or(d.pyramid_levels),
            pyramid_scale: self.pyramid_scale.unwrap_or(d.pyramid_scale),
            window_size: self.window_size.unwrap_or(d.window_size),
            iterations: self.iterations.unwrap_or(d.iterations),
            poly_n: self.poly_n.unwrap_or(d.poly_n),
            poly_sigma: self.poly_sigma.unwrap_or(d.poly_sigma),
        };
        params.validate()?;
        let mut est = FarnebackEstimator::new(params, scale);
        est.negate = self.negate_flow;
        Ok(est)
    }
}

impl Source {
    fn model(&self) -> Result<Model> {
        let path = self
            .model_config
            .clone()
            .unwrap_or_else(|| self.frames.join("..").join("model.cfg"));
        let mut spec = ModelSpec::from_kv(&read_kv(&path)?).with_context(|| format!("model config {}", path.display()))?;
        if let (Some(dir), Some(base)) = (&spec.feature_dir, path.parent()) {
            spec.feature_dir = Some(base.join(dir));
        }
        Ok(Model::new(spec)?)
    }

    fn load_frames(&self) -> Result<Vec<Frame>> {
        let frames = io::frame_dir(&self.frames)?.collect::<mcma::Result<Vec<_>>>()?;
        if frames.is_empty() {
            bail!("no frames in {}", self.frames.display());
        }
        Ok(frames)
    }
}

fn read_kv(path: &Path) -> Result<KvConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(KvConfig::parse(&text).with_context(|| format!("in {}", path.display()))?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_masks(dir: &Path) -> Result<BTreeMap<usize, SegmentationMask>> {
    let mut out = BTreeMap::new();
    for (index, path) in io::list_numbered(dir, "pgm")? {
        out.insert(index, io::read_mask(&path)?);
    }
    if out.is_empty() {
        bail!("no masks in {}", dir.display());
    }
    Ok(out)
}

fn read_flows(dir: &Path) -> Result<BTreeMap<usize, FlowField>> {
    let mut out = BTreeMap::new();
    for (index, path) in io::list_numbered(dir, "mcfl")? {
        out.insert(index, io::read_flow(&path)?);
    }
    Ok(out)
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = read_kv(&args.config)?;
    let scene = SceneSpec::from_kv(&cfg).with_context(|| format!("scene config {}", args.config.display()))?;
    let model = ModelSpec::from_class_colors(&scene.class_colors)
        .with_noise(cfg.get_or("model.noise_std", 0.0)?, cfg.get_or("model.noise_seed", scene.seed)?);
    let seq = generate(&scene)?;
    seq.write_dataset(&args.out)?;
    fs::write(args.out.join("scene.cfg"), scene.to_kv().to_text())?;
    fs::write(args.out.join("model.cfg"), model.to_kv().to_text())?;
    println!("wrote {} frames to {}", seq.len(), args.out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let model = args.source.model()?;
    let cfg = PipelineConfig {
        alpha: args.alpha,
        lambda: args.lambda,
        flow_scale: args.flow_scale,
        num_classes: model.spec().num_classes,
        executor: args.executor,
        model: model.spec().kind,
        method: args.mode,
    };
    let est = args.flow.estimator(args.flow_scale)?;
    let (mask_dir, flow_dir) = (args.out.join("masks"), args.out.join("flow"));
    io::create_dir(&mask_dir)?;
    let with_flow = args.mode == Method::Mcma;
    if with_flow {
        io::create_dir(&flow_dir)?;
    }
    let mut timings = Vec::new();
    let n = run_with(io::frame_dir(&args.source.frames)?, &model, &est, &cfg, |o| {
        io::write_mask(&o.mask, io::numbered_path(&mask_dir, o.index, "pgm"))?;
        if with_flow {
            let flow = o.flow.unwrap_or_else(|| FlowField::zeros(o.mask.height(), o.mask.width()));
            io::write_flow(&flow, io::numbered_path(&flow_dir, o.index, "mcfl"))?;
        }
        timings.push(o.timing);
        Ok(())
    })?;
    fs::write(args.out.join("timings.csv"), timings_csv(&timings))?;
    if let Ok(report) = benchmark_report(&timings) {
        info!("achievable rate {:.1} Hz", report.achievable_hz);
        fs::write(args.out.join("report.csv"), report.to_csv())?;
    }
    println!("segmented {n} frames into {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let model = args.source.model()?;
    let frames = args.source.load_frames()?;
    let gt_dir = args.gt.clone().unwrap_or_else(|| args.source.frames.join("..").join("masks"));
    let gt = read_masks(&gt_dir)?;
    let est = args.flow.estimator(args.flow_scale)?;
    let base = PipelineConfig {
        lambda: args.lambda,
        flow_scale: args.flow_scale,
        num_classes: model.spec().num_classes,
        model: model.spec().kind,
        ..Default::default()
    };

    // Flow does not depend on alpha: estimate once, replay per alpha.
    let mut flows = BTreeMap::new();
    run_with(frames.iter().cloned().map(Ok), &model, &est, &base, |o| {
        if let Some(f) = o.flow {
            flows.insert(o.index, f);
        }
        Ok(())
    })?;
    let Some((h, w)) = flows.values().next().map(|f| (f.height(), f.width())) else {
        bail!("sweep needs at least two frames");
    };
    let last = frames.iter().map(Frame::index).max().unwrap_or(0);
    let dense: Vec<FlowField> = (0..=last)
        .map(|i| flows.get(&i).cloned().unwrap_or_else(|| FlowField::zeros(h, w)))
        .collect();
    for f in &frames {
        flows.entry(f.index()).or_insert_with(|| FlowField::zeros(h, w));
    }
    let replay = OracleFlow::new(dense);

    let mut csv = String::from("alpha,method,subset,miou\n");
    for step in 0..=16 {
        let alpha = (10 + 5 * step) as f32 / 100.0;
        let mut predictions = Vec::new();
        for method in [Method::Ema, Method::Mcma] {
            let cfg = PipelineConfig { alpha, method, ..base.clone() };
            let mut masks = BTreeMap::new();
            run_with(frames.iter().cloned().map(Ok), &model, &replay, &cfg, |o| {
                masks.insert(o.index, o.mask);
                Ok(())
            })?;
            predictions.push((method.to_string(), masks));
        }
        let video = VideoEval {
            name: "sweep".into(),
            ground_truth: gt.clone(),
            flows: flows.clone(),
            predictions,
        };
        let report = evaluate_run(&[video], &EvalConfig::new(base.num_classes))?;
        for method in ["ema", "mcma"] {
            for subset in [Subset::All, Subset::Low20, Subset::Mid60, Subset::High20] {
                let miou = report.get(method, subset).map_or("nan".into(), |m| format!("{m:.6}"));
                csv.push_str(&format!("{alpha:.2},{method},{subset},{miou}\n"));
            }
        }
        info!("alpha {alpha:.2} done");
    }
    emit(args.out.as_deref(), &csv)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let model = args.source.model()?;
    let frames = args.source.load_frames()?;
    let mut csv = format!("{REPORT_HEADER}\n");
    for &scale in &args.scales {
        let est = args.flow.estimator(scale)?;
        for &executor in &args.executors {
            let cfg = PipelineConfig {
                alpha: args.alpha,
                lambda: args.lambda,
                flow_scale: scale,
                num_classes: model.spec().num_classes,
                executor,
                model: model.spec().kind,
                method: Method::Mcma,
            };
            let mut timings = Vec::new();
            run_with(frames.iter().cloned().map(Ok), &model, &est, &cfg, |o| {
                timings.push(o.timing);
                Ok(())
            })?;
            let report = benchmark_report(&timings)?;
            info!("{executor} at scale {scale}: {:.1} Hz", report.achievable_hz);
            csv.push_str(&report.csv_rows());
        }
    }
    emit(args.out.as_deref(), &csv)
}

fn method_name(spec: &str) -> (String, PathBuf) {
    if let Some((name, dir)) = spec.split_once('=') {
        return (name.to_string(), PathBuf::from(dir));
    }
    let dir = PathBuf::from(spec);
    // `<run>/masks` is named after `<run>`
    let named = if dir.file_name().is_some_and(|n| n == "masks") {
        dir.parent().and_then(Path::file_name)
    } else {
        dir.file_name()
    };
    let name = named.map_or_else(|| spec.to_string(), |n| n.to_string_lossy().into_owned());
    (name, dir)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let gt = read_masks(&args.gt)?;
    let flows = read_flows(&args.flows)?;
    let mut predictions = Vec::new();
    for spec in &args.pred {
        let (name, dir) = method_name(spec);
        predictions.push((name, read_masks(&dir)?));
    }
    let num_classes = match args.num_classes {
        Some(n) => n,
        None => gt.values().flat_map(|m| m.labels().iter().copied()).max().map_or(2, |l| (l as usize + 1).max(2)),
    };
    let video = VideoEval {
        name: args.gt.display().to_string(),
        ground_truth: gt,
        flows,
        predictions,
    };
    let report = evaluate_run(&[video], &EvalConfig::new(num_classes))?;
    if let Some(path) = &args.jsonl {
        fs::write(path, report.to_jsonl()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    emit(args.out.as_deref(), &report.to_csv())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
