//! `pwcc` command line: dataset synthesis, training, inference, evaluation,
//! and comparison grids. Exit codes: 0 success, 2 usage/config error,
//! 3 runtime error, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pwcc::bilateral::{self, BilateralConfig};
use pwcc::config::{Preset, RunConfig};
use pwcc::error::Error;
use pwcc::estimator::{self, TrainConfig};
use pwcc::eval::{self, EvalMethod};
use pwcc::imagecore::{self, io, LinearImage};
use pwcc::synth::{DatasetManifest, Split};
use pwcc::{Result, DEFAULT_EPSILON};

#[derive(Parser)]
#[command(name = "pwcc", about = "Pixel-wise color constancy toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-illuminant dataset
    Synth(SynthArgs),
    /// Train the illumination estimator on a generated dataset
    Train(TrainArgs),
    /// Predict an illumination map and white-balance one image
    Infer(InferArgs),
    /// Score methods on a dataset split (angular error statistics)
    Eval(EvalArgs),
    /// Render a side-by-side comparison grid PNG
    Grid(GridArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Config file (TOML or JSON) with a [synth] section
    #[arg(long)]
    config: PathBuf,
    /// Output directory for images and the manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest produced by `pwcc synth`
    #[arg(long)]
    manifest: PathBuf,
    /// Hyper-parameter preset: pwcc_v1, pwcc_v2, or custom
    #[arg(long)]
    preset: Option<String>,
    /// Config file (TOML or JSON); preset values apply on top of it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model file (PWCM)
    #[arg(long)]
    out: PathBuf,
    /// Output CSV training log (defaults to the model path with .csv)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override the number of epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the square training resolution
    #[arg(long)]
    input_size: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Trained model file (PWCM)
    #[arg(long)]
    model: PathBuf,
    /// Input image (16-bit linear PNG)
    #[arg(long)]
    input: PathBuf,
    /// Prefix for output files ({prefix}_map.pwcc, {prefix}_wb.png, ...)
    #[arg(long)]
    out_prefix: String,
    /// What the bilateral filter applies to: map, image, or none
    #[arg(long, default_value = "map")]
    filter_target: String,
    /// Fail instead of resampling inputs the network cannot take directly
    #[arg(long)]
    strict: bool,
    /// Log-chrominance epsilon
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest produced by `pwcc synth`
    #[arg(long)]
    manifest: PathBuf,
    /// Split to score: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Methods to score: oracle, gray_world, white_patch, trained
    /// (repeatable)
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    /// Model file, required when a trained method is requested
    #[arg(long)]
    model: Option<PathBuf>,
    /// Bilateral-filter predicted maps before scoring
    #[arg(long)]
    filter: bool,
    /// Write the summaries as JSON here in addition to the printed table
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// Log-chrominance epsilon
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct GridArgs {
    /// Dataset manifest produced by `pwcc synth`
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated sample ids (one grid row each)
    #[arg(long)]
    ids: String,
    /// Model files; one prediction column each (repeatable)
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    /// Output PNG path
    #[arg(long)]
    out: PathBuf,
    /// Log-chrominance epsilon
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Io { .. } | Error::Image { .. } | Error::Format { .. } | Error::Json { .. } => 4,
        Error::InvalidInput(_)
        | Error::EstimationFailure(_)
        | Error::Divergence { .. }
        | Error::Internal(_) => 3,
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("PWCC_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let run = RunConfig::load(&args.config)?;
    let synth_cfg = run.synth.ok_or_else(|| {
        Error::Config(format!(
            "{} has no [synth] section",
            args.config.display()
        ))
    })?;
    pwcc::synth::generate_dataset(&synth_cfg, &args.out)?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &args.preset {
        run.preset = name.parse::<Preset>()?;
    }
    let mut cfg = run.resolved_train();
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(size) = args.input_size {
        cfg.input_size = size;
    }
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(args)?;
    let (manifest, base_dir) = DatasetManifest::load(&args.manifest)?;
    let (params, log) = estimator::train(&manifest, &base_dir, &cfg)?;
    estimator::save_params(&args.out, &params)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    log.write_csv(&log_path)?;
    let best = log
        .epochs
        .iter()
        .map(|e| e.val_mean_angular_error)
        .fold(f64::INFINITY, f64::min);
    println!("model: {}", args.out.display());
    println!("log: {}", log_path.display());
    println!("best val mean angular error: {best:.4}");
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let params = estimator::load_params(&args.model)?;
    let input = io::read_image(&args.input)?;
    let (w, h) = (input.width(), input.height());
    if w != h || w % 4 != 0 {
        if args.strict {
            return Err(Error::Config(format!(
                "input is {w}x{h}; the estimator needs a square side divisible by 4 \
                 (drop --strict to resample automatically)"
            )));
        }
        eprintln!("warning: resampling {w}x{h} input through the nearest valid square size");
    }
    let map = eval::infer_flexible(&params, &input, args.epsilon)?;
    let wb = imagecore::apply_white_balance(&input, &map.reciprocal())?;

    let prefix = &args.out_prefix;
    io::write_illumination_map(format!("{prefix}_map.pwcc"), &map)?;
    io::write_image(format!("{prefix}_wb.png"), &wb)?;

    let filter_cfg = BilateralConfig::default();
    match args.filter_target.as_str() {
        "none" => {}
        "map" => {
            let filtered = bilateral::apply_postfilter(&map, &filter_cfg)?;
            let wb_f = imagecore::apply_white_balance(&input, &filtered.reciprocal())?;
            io::write_illumination_map(format!("{prefix}_map_filtered.pwcc"), &filtered)?;
            io::write_image(format!("{prefix}_wb_filtered.png"), &wb_f)?;
        }
        "image" => {
            let wb_f = bilateral::bilateral_filter(&wb, &filter_cfg)?;
            io::write_image(format!("{prefix}_wb_filtered.png"), &wb_f)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown --filter-target '{other}' (expected map, image, or none)"
            )))
        }
    }
    println!("{prefix}_map.pwcc");
    println!("{prefix}_wb.png");
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (manifest, base_dir) = DatasetManifest::load(&args.manifest)?;
    let split = args.split.parse::<Split>()?;
    let params = match &args.model {
        Some(path) => Some(estimator::load_params(path)?),
        None => None,
    };
    let filter_cfg = BilateralConfig::default();
    let postfilter = args.filter.then_some(&filter_cfg);

    let mut summaries = Vec::new();
    for name in &args.methods {
        let method = match name.as_str() {
            "oracle" => EvalMethod::Oracle,
            "gray_world" => EvalMethod::GrayWorld,
            "white_patch" => EvalMethod::WhitePatch,
            "trained" => EvalMethod::Trained(params.as_ref().ok_or_else(|| {
                Error::Config("--method trained requires --model".to_string())
            })?),
            other => {
                return Err(Error::Config(format!(
                    "unknown method '{other}' (expected oracle, gray_world, white_patch, trained)"
                )))
            }
        };
        summaries.push(eval::evaluate_method(
            &manifest,
            &base_dir,
            split,
            &method,
            postfilter,
            args.epsilon,
        )?);
    }
    print!("{}", eval::format_table(&summaries));
    if let Some(path) = &args.json_out {
        let mut bytes = serde_json::to_vec_pretty(&summaries).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|source| Error::io(path, source))?;
    }
    Ok(())
}

/// Linear-light to 8-bit sRGB for previews only.
fn srgb_encode(v: f64) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let s = if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let (manifest, base_dir) = DatasetManifest::load(&args.manifest)?;
    let ids: Vec<&str> = args.ids.split(',').filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(Error::Config("--ids must name at least one sample".to_string()));
    }
    let models = args
        .models
        .iter()
        .map(estimator::load_params)
        .collect::<Result<Vec<_>>>()?;

    // panels per row: input | one prediction per model | ground truth
    let mut rows: Vec<Vec<LinearImage>> = Vec::new();
    for id in &ids {
        let entry = manifest
            .samples
            .iter()
            .find(|s| s.id == *id)
            .ok_or_else(|| Error::Config(format!("unknown sample id '{id}'")))?;
        let input = io::read_image(base_dir.join(&entry.input_png))?;
        let gt = io::read_image(base_dir.join(&entry.gt_png))?;
        let mut row = vec![input.clone()];
        for params in &models {
            let map = eval::infer_flexible(params, &input, args.epsilon)?;
            row.push(imagecore::apply_white_balance(&input, &map.reciprocal())?);
        }
        row.push(gt);
        rows.push(row);
    }

    let panel_w = rows[0][0].width();
    let panel_h = rows[0][0].height();
    for row in &rows {
        for panel in row {
            if panel.width() != panel_w || panel.height() != panel_h {
                return Err(Error::Config(
                    "grid samples must share one resolution".to_string(),
                ));
            }
        }
    }
    let cols = 2 + models.len();
    let grid_w = cols * panel_w;
    let grid_h = rows.len() * panel_h;
    let mut pixels = vec![0u8; grid_w * grid_h * 3];
    for (ry, row) in rows.iter().enumerate() {
        for (cx, panel) in row.iter().enumerate() {
            for y in 0..panel_h {
                for x in 0..panel_w {
                    let rgb = panel.pixel(x, y);
                    let gx = cx * panel_w + x;
                    let gy = ry * panel_h + y;
                    let o = (gy * grid_w + gx) * 3;
                    for c in 0..3 {
                        pixels[o + c] = srgb_encode(rgb[c]);
                    }
                }
            }
        }
    }
    let img: image::RgbImage =
        image::ImageBuffer::from_raw(grid_w as u32, grid_h as u32, pixels)
            .expect("buffer sized to dimensions");
    img.save(&args.out).map_err(|source| Error::Image {
        path: args.out.clone(),
        source,
    })?;
    println!("{}", args.out.display());
    Ok(())
}

/// User-supplied paths get checked up front so a typo reads as a usage
/// error rather than a later I/O failure.
fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!("no such file: {}", path.display())));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => {
            require_exists(&args.config)?;
            cmd_synth(args)
        }
        Command::Train(args) => {
            require_exists(&args.manifest)?;
            if let Some(cfg) = &args.config {
                require_exists(cfg)?;
            }
            cmd_train(args)
        }
        Command::Infer(args) => {
            require_exists(&args.model)?;
            require_exists(&args.input)?;
            cmd_infer(args)
        }
        Command::Eval(args) => {
            require_exists(&args.manifest)?;
            if let Some(model) = &args.model {
                require_exists(model)?;
            }
            cmd_eval(args)
        }
        Command::Grid(args) => {
            require_exists(&args.manifest)?;
            for model in &args.models {
                require_exists(model)?;
            }
            cmd_grid(args)
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
