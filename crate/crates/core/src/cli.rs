//! The `pixel-affinity` command line.
//!
//! Exit codes: 0 on success, 2 when flags or inputs fail validation, 1 for
//! runtime failures (I/O, malformed files, divergence). Every failure is
//! reported as one line on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::affinity::{DistanceNorm, MaskParams};
use crate::bench::{run_bench, timings_csv, BenchConfig};
use crate::contours::{im2interv, interv_mask};
use crate::embednet::{
    evaluate, load_checkpoint, pca_visualize, save_checkpoint, synth_dataset, train, EmbeddingModel, TrainConfig,
    TrainState,
};
use crate::error::{Error, Result};
use crate::filter::{repeat_filter, repeat_with_mask};
use crate::io::{
    read_boundary_map, read_feature_map, read_image, read_label_map, write_columns, write_feature_map, write_label_map,
    write_ppm,
};
use crate::loss::LossParams;
use crate::metrics::{argmax_labels, mean_iou, pixel_accuracy};
use crate::tensor::{FeatureMap, LabelMap, WindowSpec};

/// Contour masks use a softer hardness than embedding masks.
pub const CONTOUR_LAMBDA: f64 = 5.0;

#[derive(Debug, Parser)]
#[command(name = "pixel-affinity", version, about = "Segmentation-aware pixel affinities and masked filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings on synthetic shapes; writes a checkpoint, loss.csv and PCA images.
    Train(TrainArgs),
    /// Sharpen a score map with embedding-based masks.
    Sharpen(SharpenArgs),
    /// Build intervening-contour masks from a boundary map, optionally filtering scores.
    Interv(IntervArgs),
    /// Mean IoU and pixel accuracy of a prediction against ground truth.
    Eval(EvalArgs),
    /// Time the window kernels.
    Bench(BenchArgs),
    /// False-color PCA image of an embedding map.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "lr", default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 9)]
    pub window_side: usize,
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = DistanceNorm::L1)]
    pub norm: DistanceNorm,
    #[arg(long, default_value_t = crate::embednet::DEFAULT_EMBED_DIM)]
    pub embed_dim: usize,
    /// Number of synthetic training images.
    #[arg(long, default_value_t = 8)]
    pub images: usize,
    /// Side length of each synthetic image.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Weight on the intermediate-layer losses.
    #[arg(long, default_value_t = 1.0)]
    pub layer_weight: f64,
    /// How many training images get a PCA visualization.
    #[arg(long, default_value_t = 2)]
    pub visualize: usize,
}

/// Where embeddings come from: a stored map, or a checkpoint run on an image.
#[derive(Debug, Args)]
pub struct EmbeddingSource {
    /// Embedding map (TNS1, HxWxD).
    #[arg(long, conflicts_with_all = ["checkpoint", "image"])]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long, requires = "image")]
    pub checkpoint: Option<PathBuf>,
    /// Input image (PPM, PGM or TNS1) for the checkpoint.
    #[arg(long, requires = "checkpoint")]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SharpenArgs {
    /// Score map (TNS1, HxWxC).
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub source: EmbeddingSource,
    /// Sharpened scores (TNS1).
    #[arg(long)]
    pub out: PathBuf,
    /// Argmax labels (PGM); defaults to `--out` with a `.pgm` extension.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 9)]
    pub window_side: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = MaskParams::EMBEDDING_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 7)]
    pub times: usize,
    #[arg(long, default_value_t = DistanceNorm::L1)]
    pub norm: DistanceNorm,
}

#[derive(Debug, Args)]
pub struct IntervArgs {
    /// Boundary probabilities (PGM rescaled by maxval, or TNS1 in [0, 1]).
    #[arg(long)]
    pub boundary: PathBuf,
    /// Mask columns (TNS1, out_h x out_w x K).
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    /// Score map to filter with the mask (TNS1).
    #[arg(long, requires = "out")]
    pub scores: Option<PathBuf>,
    /// Filtered scores (TNS1); argmax labels go next to it as `.pgm`.
    #[arg(long, requires = "scores")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 9)]
    pub window_side: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = CONTOUR_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 7)]
    pub times: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels (PGM) or scores (TNS1, argmax taken).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels (PGM).
    #[arg(long)]
    pub gt: PathBuf,
    /// Defaults to one more than the largest non-ignored label seen.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, default_value_t = LabelMap::DEFAULT_IGNORE)]
    pub ignore: u32,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value_t = 9)]
    pub window_side: usize,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of im2col,im2dist,masked_filter,im2interv.
    #[arg(long, value_delimiter = ',')]
    pub kernels: Vec<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub source: EmbeddingSource,
    /// Output image (PPM).
    #[arg(long)]
    pub out: PathBuf,
}

fn usage(flag: &'static str, reason: impl Into<String>) -> Error {
    Error::Usage { flag, reason: reason.into() }
}

fn window(side: usize, stride: usize) -> Result<WindowSpec> {
    if side == 0 || side.is_multiple_of(2) {
        return Err(usage("window-side", format!("must be odd and positive, got {side}")));
    }
    if stride == 0 {
        return Err(usage("stride", "must be at least 1"));
    }
    WindowSpec::new(side, stride, true)
}

fn check_lambda(lambda: f64) -> Result<MaskParams> {
    MaskParams::new(lambda).map_err(|_| usage("lambda", format!("must be finite and non-negative, got {lambda}")))
}

fn check_times(times: usize) -> Result<()> {
    if times == 0 {
        return Err(usage("times", "must be at least 1"));
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_embeddings(src: &EmbeddingSource) -> Result<FeatureMap> {
    match (&src.embeddings, &src.checkpoint, &src.image) {
        (Some(e), _, _) => read_feature_map(e),
        (None, Some(ck), Some(img)) => {
            let (model, _) = load_checkpoint(ck)?;
            Ok(model.forward(&read_image(img)?)?.embedding)
        }
        _ => Err(usage("embeddings", "give --embeddings, or --checkpoint together with --image")),
    }
}

fn write_scores_and_labels(out: &Path, labels_out: Option<&Path>, y: &FeatureMap) -> Result<()> {
    create_parent(out)?;
    write_feature_map(out, y)?;
    let lp = labels_out.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("pgm"));
    create_parent(&lp)?;
    write_label_map(lp, &argmax_labels(y))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.steps == 0 {
        return Err(usage("steps", "must be at least 1"));
    }
    if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
        return Err(usage("lr", format!("must be positive, got {}", a.learning_rate)));
    }
    if !(0.0..1.0).contains(&a.momentum) {
        return Err(usage("momentum", format!("must be in [0, 1), got {}", a.momentum)));
    }
    let loss_params = LossParams::new(a.alpha, a.beta)
        .map_err(|_| usage("alpha", format!("need 0 <= alpha < beta, got {} and {}", a.alpha, a.beta)))?;
    if a.embed_dim == 0 {
        return Err(usage("embed-dim", "must be at least 1"));
    }
    if a.images == 0 {
        return Err(usage("images", "must be at least 1"));
    }
    if a.size < 8 {
        return Err(usage("size", format!("must be at least 8, got {}", a.size)));
    }
    if !(a.layer_weight >= 0.0 && a.layer_weight.is_finite()) {
        return Err(usage("layer-weight", format!("must be non-negative, got {}", a.layer_weight)));
    }
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        steps: a.steps,
        seed: a.seed,
        window: window(a.window_side, a.stride)?,
        loss_params,
        norm: a.norm,
        per_layer_loss_weight: a.layer_weight,
    };

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let data = synth_dataset(a.seed, a.images, a.size)?;
    let mut state = TrainState::new(EmbeddingModel::new(3, a.embed_dim, a.seed));
    let before = evaluate(&state.model, &data, &cfg)?;
    let history = train(&mut state, &data, &cfg)?;
    let after = evaluate(&state.model, &data, &cfg)?;

    write_text(&a.out.join("loss.csv"), &history.to_csv())?;
    let hparams: Vec<(String, String)> = [
        ("steps", a.steps.to_string()),
        ("seed", a.seed.to_string()),
        ("lr", a.learning_rate.to_string()),
        ("momentum", a.momentum.to_string()),
        ("window_side", a.window_side.to_string()),
        ("stride", a.stride.to_string()),
        ("alpha", a.alpha.to_string()),
        ("beta", a.beta.to_string()),
        ("norm", a.norm.to_string()),
        ("layer_weight", a.layer_weight.to_string()),
        ("images", a.images.to_string()),
        ("size", a.size.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    save_checkpoint(a.out.join("checkpoint"), &state.model, &hparams)?;
    for (i, s) in data.iter().take(a.visualize).enumerate() {
        write_ppm(a.out.join(format!("image_{i}.ppm")), &s.image)?;
        if a.embed_dim >= 3 {
            let e = state.model.forward(&s.image)?.embedding;
            write_ppm(a.out.join(format!("embedding_{i}.ppm")), &pca_visualize(&e)?)?;
        }
    }
    println!("mean loss {before:.6} -> {after:.6} (ratio {:.4}) after {} steps", after / before, a.steps);
    Ok(())
}

pub fn cmd_sharpen(a: &SharpenArgs) -> Result<()> {
    if a.stride != 1 {
        return Err(usage("stride", "sharpening needs stride 1"));
    }
    let w = window(a.window_side, 1)?;
    let p = check_lambda(a.lambda)?;
    check_times(a.times)?;
    let x = read_feature_map(&a.scores)?;
    let e = load_embeddings(&a.source)?;
    if !x.same_spatial(&e) {
        return Err(Error::shape(format!(
            "scores are {}x{} but embeddings are {}x{}",
            x.height(),
            x.width(),
            e.height(),
            e.width()
        )));
    }
    let y = repeat_filter(&x, &e, &w, p, a.norm, a.times)?;
    write_scores_and_labels(&a.out, a.labels_out.as_deref(), &y)
}

pub fn cmd_interv(a: &IntervArgs) -> Result<()> {
    let w = window(a.window_side, a.stride)?;
    check_lambda(a.lambda)?;
    check_times(a.times)?;
    if a.scores.is_some() && a.stride != 1 {
        return Err(usage("stride", "filtering scores needs stride 1"));
    }
    if a.mask_out.is_none() && a.scores.is_none() {
        return Err(usage("mask-out", "nothing to do: give --mask-out and/or --scores with --out"));
    }
    let b = read_boundary_map(&a.boundary)?;
    let m = interv_mask(&im2interv(&b, &w), a.lambda)?;
    if let Some(path) = &a.mask_out {
        create_parent(path)?;
        write_columns(path, &m)?;
    }
    if let (Some(scores), Some(out)) = (&a.scores, &a.out) {
        let x = read_feature_map(scores)?;
        if (x.height(), x.width()) != (b.height(), b.width()) {
            return Err(Error::shape(format!(
                "scores are {}x{} but the boundary map is {}x{}",
                x.height(),
                x.width(),
                b.height(),
                b.width()
            )));
        }
        let y = repeat_with_mask(&x, &m, &w, a.times)?;
        write_scores_and_labels(out, None, &y)?;
    }
    Ok(())
}

fn read_prediction(path: &Path, ignore: u32) -> Result<LabelMap> {
    match read_label_map(path, ignore) {
        Ok(l) => Ok(l),
        Err(Error::Format { .. }) => Ok(argmax_labels(&read_feature_map(path)?)),
        Err(e) => Err(e),
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let gt = read_label_map(&a.gt, a.ignore)?;
    let pred = read_prediction(&a.pred, a.ignore)?;
    let num_classes = match a.num_classes {
        Some(0) => return Err(usage("num-classes", "must be at least 1")),
        Some(n) => n,
        None => {
            let seen = gt.labels().iter().chain(pred.labels()).filter(|&&l| l != a.ignore).max();
            seen.map_or(1, |&m| m as usize + 1)
        }
    };
    let report = mean_iou(&pred, &gt, num_classes)?;
    let acc = pixel_accuracy(&pred, &gt)?;
    let mut csv = String::from("metric,value\n");
    for (c, iou) in report.per_class.iter().enumerate() {
        if let Some(v) = iou {
            csv.push_str(&format!("iou_{c},{v}\n"));
        }
    }
    csv.push_str(&format!("mean_iou,{}\npixel_accuracy,{acc}\n", report.mean));
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.height == 0 || a.width == 0 || a.channels == 0 {
        return Err(usage("height", "height, width and channels must be positive"));
    }
    if a.runs == 0 {
        return Err(usage("runs", "must be at least 1"));
    }
    window(a.window_side, 1)?;
    let cfg = BenchConfig {
        height: a.height,
        width: a.width,
        channels: a.channels,
        side: a.window_side,
        runs: a.runs,
        warmup: a.warmup,
        seed: a.seed,
    };
    let only: Vec<&str> = a.kernels.iter().map(String::as_str).collect();
    if let Some(k) = only.iter().find(|k| !crate::bench::KERNELS.contains(k)) {
        return Err(usage("kernels", format!("unknown kernel {k:?}")));
    }
    let csv = timings_csv(&cfg, &run_bench(&cfg, &only)?);
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn cmd_visualize(a: &VisualizeArgs) -> Result<()> {
    let e = load_embeddings(&a.source)?;
    create_parent(&a.out)?;
    write_ppm(&a.out, &pca_visualize(&e)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sharpen(a) => cmd_sharpen(a),
        Command::Interv(a) => cmd_interv(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Visualize(a) => cmd_visualize(a),
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage { .. } | Error::InvalidParam(_) | Error::Shape(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: invalid arguments"));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
