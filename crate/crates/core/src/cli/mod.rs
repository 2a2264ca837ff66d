//! The `blockstate` command line: `train`, `eval`, `spectrum` and
//! `entropy-scan`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (I/O, IDX, checkpoint, shape), 3 numerical failure.

mod config;
mod report;

use std::ffi::OsString;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::dataset::{first_of_class, load_idx, tile, Image, DEFAULT_WINDOW};
use crate::embedding::{embed_image, ProductState};
use crate::entanglement::{central_square_scan, half_partition_scan, window_entropy_scan};
use crate::models::{init_model_with, InitOptions, InitRange, ModelKind, SumStateModel, TrainableModel, MNIST_CLASSES};
use crate::training::{embed_samples, evaluate, train, EpochRecord, LossKind, TrainConfig};
use crate::{Error, Result};

pub use config::{parse_config, parse_list, Resolver};

/// Caps the worker count of the global rayon pool.
pub const THREADS_ENV: &str = "BLOCKSTATE_THREADS";

const DEFAULT_SIZES: &str = "10,20,40,80,160,320,640,1280";
const DEFAULT_LS: &str = "1,2,3,4,5,6";
const DEFAULT_TOL: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(name = "blockstate", version, about = "Block product state classifiers and Schmidt spectra of image sum states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier and write history.csv, summary.txt and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled IDX set.
    Eval(EvalArgs),
    /// Schmidt spectra of the sum state of one digit for growing N_Σ.
    Spectrum(SpectrumArgs),
    /// Mean entanglement entropy of L×L squares in the central window.
    EntropyScan(EntropyScanArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Key-value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<String>,
    /// Directory for all outputs (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run on a single worker thread.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// IDX3 image file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX1 label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Use only the first LIMIT images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// nnbps, sbps, product or sumstate.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Block side n.
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    chi: Option<usize>,
    /// SBPS: bond dimension closing the chain ends.
    #[arg(long)]
    edge_bond_dim: Option<usize>,
    /// SBPS: snake sites before the label tensor.
    #[arg(long)]
    label_position: Option<usize>,
    /// Initial tensor entries: symmetric (uniform on [-1, 1]) or positive (uniform on [0, 1]).
    #[arg(long)]
    init: Option<InitRange>,
    /// nll or quadratic.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path (default: OUT_DIR/model.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Loss to report (default: the one stored in the checkpoint).
    #[arg(long)]
    loss: Option<LossKind>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    digit: Option<u8>,
    /// Comma-separated N_Σ values.
    #[arg(long)]
    sizes: Option<String>,
    /// `half` (top/bottom) or `window:L` (centered L×L square).
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct EntropyScanArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    digit: Option<u8>,
    #[arg(long)]
    n_sigma: Option<usize>,
    /// Comma-separated square sides.
    #[arg(long)]
    ls: Option<String>,
    /// Side of the centered window holding the squares.
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Idx(_) | Error::Checkpoint(_) | Error::Dimension(_) | Error::Input(_) => 2,
        Error::Numerical(_) | Error::NotPsd { .. } | Error::Degenerate(_) | Error::Diverged { .. } => 3,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Spectrum(a) => run_spectrum(a),
        Command::EntropyScan(a) => run_entropy_scan(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads(deterministic: bool) -> Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        // Only the first call can size the global pool; later ones keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

struct Common {
    out_dir: PathBuf,
}

/// Resolves the shared run settings and prepares the output directory.
fn common(r: &mut Resolver, run: &RunArgs) -> Result<Common> {
    let out_dir: String = r.get("out-dir", run.out_dir.as_ref().map(|p| p.display().to_string()), ".".into())?;
    let deterministic = r.switch("deterministic", run.deterministic)?;
    configure_threads(deterministic)?;
    Ok(Common { out_dir: PathBuf::from(out_dir) })
}

fn finish_config(r: &Resolver, out_dir: &Path, subcommand: &str) -> Result<()> {
    r.finish()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    report::write(out_dir, "config-resolved.txt", &r.render(subcommand))
}

fn path_setting(r: &mut Resolver, key: &'static str, flag: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    Ok(r.opt(key, flag.as_ref().map(|p| p.display().to_string()), None)?.map(PathBuf::from))
}

fn load_images(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Vec<Image>> {
    let mut set = load_idx(images, labels)?;
    if let Some(k) = limit {
        set.truncate(k);
    }
    if set.is_empty() {
        return Err(Error::Input(format!("{} holds no images", images.display())));
    }
    Ok(set)
}

fn data_settings(r: &mut Resolver, data: &DataArgs) -> Result<(PathBuf, PathBuf, Option<usize>)> {
    let images = path_setting(r, "images", &data.images)?.ok_or_else(|| Error::Config("--images is required".into()))?;
    let labels = path_setting(r, "labels", &data.labels)?.ok_or_else(|| Error::Config("--labels is required".into()))?;
    let limit = r.opt("limit", data.limit, None)?;
    Ok((images, labels, limit))
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut r = Resolver::new(a.run.config.as_deref())?;
    let common = common(&mut r, &a.run)?;
    let (images, labels, limit) = data_settings(&mut r, &a.data)?;
    let test_images = path_setting(&mut r, "test-images", &a.test_images)?;
    let test_labels = path_setting(&mut r, "test-labels", &a.test_labels)?;
    let test_limit = r.opt("test-limit", a.test_limit, None)?;
    let kind = r.get("model", a.model, ModelKind::Nnbps)?;
    let default_n = if kind == ModelKind::Product { 1 } else { 2 };
    let n = r.get("block-size", a.block_size, default_n)?;
    let chi = r.get("chi", a.chi, 2)?;
    let edge_bond_dim = r.get("edge-bond-dim", a.edge_bond_dim, 1)?;
    let label_position = r.opt("label-position", a.label_position, None)?;
    let range = r.get("init", a.init, InitRange::default())?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        loss: r.get("loss", a.loss, d.loss)?,
        alpha: r.get("alpha", a.alpha, d.alpha)?,
        learning_rate: r.get("lr", a.lr, d.learning_rate)?,
        beta1: r.get("beta1", a.beta1, d.beta1)?,
        beta2: r.get("beta2", a.beta2, d.beta2)?,
        epsilon: r.get("epsilon", a.epsilon, d.epsilon)?,
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        batch_size: r.get("batch", a.batch, d.batch_size)?,
        seed: r.get("seed", a.seed, d.seed)?,
    };
    let out: String = r.get("out", a.out.as_ref().map(|p| p.display().to_string()), {
        common.out_dir.join("model.ckpt").display().to_string()
    })?;
    finish_config(&r, &common.out_dir, "train")?;
    config.validate()?;

    let test_paths = match (test_images, test_labels) {
        (Some(i), Some(l)) => Some((i, l)),
        (None, None) => None,
        _ => return Err(Error::Config("--test-images and --test-labels go together".into())),
    };
    let train_images = load_images(&images, &labels, limit)?;
    let test_images = match &test_paths {
        Some((i, l)) => Some(load_images(i, l, test_limit)?),
        None => None,
    };
    let dims = train_images[0].dims();
    if let Some(t) = &test_images {
        if t[0].dims() != dims {
            return Err(Error::Dimension(format!(
                "test images are {}x{} but training images are {}x{}",
                t[0].height, t[0].width, dims.0, dims.1
            )));
        }
    }
    let train_set = embed_samples(&train_images)?;
    let test_set = test_images.as_deref().map(embed_samples).transpose()?;
    let title = format!(
        "{kind}, {} training images{}",
        train_set.len(),
        test_set.as_ref().map_or(String::new(), |t| format!(", {} test images", t.len()))
    );

    if kind == ModelKind::SumState {
        let model = SumStateModel::from_samples(train_set.iter().map(|s| (&s.state, s.label)), MNIST_CLASSES)?;
        let record = EpochRecord {
            epoch: 0,
            train: evaluate(&model, &train_set, config.loss)?,
            test: test_set.as_deref().map(|t| evaluate(&model, t, config.loss)).transpose()?,
        };
        let history = [record];
        report::write(&common.out_dir, "history.csv", &report::history_csv(&history))?;
        let note = "sum-state classifier: evaluation only, no checkpoint";
        return report::write(&common.out_dir, "summary.txt", &report::summary(&title, "sum state", None, &history, note));
    }

    let layout = tile(dims, n)?;
    let options = InitOptions { num_classes: MNIST_CLASSES, edge_bond_dim, label_position, range };
    let mut model = init_model_with(kind, layout, chi, config.seed, &options)?;
    let mut history = Vec::new();
    let outcome = train(&mut model, &train_set, test_set.as_deref(), &config, |rec| {
        eprintln!(
            "epoch {:>4}  loss {:.6e}  train {:.4}{}",
            rec.epoch,
            rec.train.loss,
            rec.train.accuracy,
            rec.test.as_ref().map_or(String::new(), |t| format!("  test {:.4}", t.accuracy))
        );
        history.push(rec.clone());
        ControlFlow::Continue(())
    });
    let note = match &outcome {
        Ok(_) => String::new(),
        Err(e) => format!("stopped early: {e}"),
    };
    let block = format!("{n}x{n}");
    let chi_col = (kind == ModelKind::Sbps).then_some(chi);
    report::write(&common.out_dir, "history.csv", &report::history_csv(&history))?;
    report::write(&common.out_dir, "summary.txt", &report::summary(&title, &block, chi_col, &history, &note))?;
    checkpoint::save(&out, &model, &config)?;
    outcome.map(|_| ())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let mut r = Resolver::new(a.run.config.as_deref())?;
    let common = common(&mut r, &a.run)?;
    let (images, labels, limit) = data_settings(&mut r, &a.data)?;
    let ckpt = path_setting(&mut r, "checkpoint", &a.checkpoint)?
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let stored = checkpoint::load(&ckpt)?;
    let loss = r.get("loss", a.loss, stored.config.loss)?;
    finish_config(&r, &common.out_dir, "eval")?;

    let model = stored.model;
    let set = load_images(&images, &labels, limit)?;
    let layout = model.layout();
    if set[0].dims() != (layout.image_height, layout.image_width) {
        return Err(Error::Dimension(format!(
            "images are {}x{} but the checkpoint expects {}x{}",
            set[0].height, set[0].width, layout.image_height, layout.image_width
        )));
    }
    let samples = embed_samples(&set)?;
    let report = evaluate(&model, &samples, loss)?;
    println!("model     {} ({}x{} blocks, chi {})", model.kind(), layout.n, layout.n, model.chi());
    println!("samples   {}", report.sample_count);
    println!("accuracy  {:.3}%", 100.0 * report.accuracy);
    println!("{loss} loss  {:.6e}", report.loss);
    if report.floored_blocks > 0 {
        println!("floored block overlaps  {}", report.floored_blocks);
    }
    let mut csv = String::from("class,count,accuracy\n");
    for (c, (&count, &acc)) in report.per_class_count.iter().zip(&report.per_class_accuracy).enumerate() {
        csv.push_str(&format!("{c},{count},{}\n", report::num(acc)));
    }
    csv.push_str(&format!("all,{},{}\n", report.sample_count, report::num(report.accuracy)));
    report::write(&common.out_dir, "eval.csv", &csv)
}

enum Region {
    Half,
    Square(usize),
}

fn parse_region(text: &str) -> Result<Region> {
    if text == "half" {
        return Ok(Region::Half);
    }
    let side = text
        .strip_prefix("window:")
        .and_then(|l| l.parse::<usize>().ok())
        .ok_or_else(|| Error::Config(format!("--partition must be `half` or `window:L`, got {text:?}")))?;
    Ok(Region::Square(side))
}

/// Embedded images of one digit, in file order.
fn digit_states(set: &[Image], digit: u8, count: usize) -> Result<Vec<ProductState>> {
    if digit as usize >= MNIST_CLASSES {
        return Err(Error::Config(format!("--digit must be in 0..=9, got {digit}")));
    }
    first_of_class(set, digit, count)?.into_iter().map(embed_image).collect()
}

fn run_spectrum(a: SpectrumArgs) -> Result<()> {
    let mut r = Resolver::new(a.run.config.as_deref())?;
    let common = common(&mut r, &a.run)?;
    let (images, labels, limit) = data_settings(&mut r, &a.data)?;
    let digit: u8 = r.require("digit", a.digit)?;
    let sizes_text: String = r.get("sizes", a.sizes.clone(), DEFAULT_SIZES.into())?;
    let partition: String = r.get("partition", a.partition.clone(), "half".into())?;
    let tol = r.get("tol", a.tol, DEFAULT_TOL)?;
    finish_config(&r, &common.out_dir, "spectrum")?;
    let sizes = parse_list("sizes", &sizes_text)?;
    let region = parse_region(&partition)?;
    let largest = sizes.iter().copied().max().ok_or_else(|| Error::Config("--sizes is empty".into()))?;

    let set = load_images(&images, &labels, limit)?;
    let dims = set[0].dims();
    let states = digit_states(&set, digit, largest)?;
    let (rows, label) = match region {
        Region::Half => (half_partition_scan(&states, dims, &sizes, tol)?, "half".to_string()),
        Region::Square(l) => (central_square_scan(&states, dims, l, &sizes, tol)?, l.to_string()),
    };
    report::write(&common.out_dir, "spectrum.csv", &report::spectrum_csv(&rows))?;
    report::write(&common.out_dir, "entropy.csv", &report::spectrum_entropy_csv(&label, &rows))?;
    let mut summary = format!("# digit {digit}, partition {partition}, tol {tol:e}\nn_sigma | rank | entropy (nats) | log n_sigma\n");
    for row in &rows {
        summary.push_str(&format!(
            "{} | {} | {:.6} | {:.6}\n",
            row.n_sigma,
            row.result.rank,
            row.result.entropy,
            (row.n_sigma as f64).ln()
        ));
    }
    report::write(&common.out_dir, "summary.txt", &summary)
}

fn run_entropy_scan(a: EntropyScanArgs) -> Result<()> {
    let mut r = Resolver::new(a.run.config.as_deref())?;
    let common = common(&mut r, &a.run)?;
    let (images, labels, limit) = data_settings(&mut r, &a.data)?;
    let digit: u8 = r.require("digit", a.digit)?;
    let n_sigma = r.get("n-sigma", a.n_sigma, 1000)?;
    let ls_text: String = r.get("ls", a.ls.clone(), DEFAULT_LS.into())?;
    let window = r.get("window-size", a.window_size, DEFAULT_WINDOW)?;
    let tol = r.get("tol", a.tol, DEFAULT_TOL)?;
    finish_config(&r, &common.out_dir, "entropy-scan")?;
    let ls = parse_list("ls", &ls_text)?;

    let set = load_images(&images, &labels, limit)?;
    let dims = set[0].dims();
    let states = digit_states(&set, digit, n_sigma)?;
    let rows = window_entropy_scan(&states, dims, window, &ls, tol)?;
    report::write(&common.out_dir, "entropy.csv", &report::entropy_csv(&rows, n_sigma, tol))?;
    let max = (n_sigma as f64).ln();
    let mut summary = format!("# digit {digit}, n_sigma {n_sigma}, {window}x{window} window, tol {tol:e}\nL | mean S | std S | squares | mean S / log n_sigma\n");
    for row in &rows {
        summary.push_str(&format!(
            "{} | {:.6} | {:.6} | {} | {:.4}\n",
            row.l,
            row.mean,
            row.std,
            row.n_partitions,
            row.mean / max
        ));
    }
    report::write(&common.out_dir, "summary.txt", &summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero_usage_errors_exit_one() {
        assert_eq!(run(["blockstate", "--help"]), 0);
        assert_eq!(run(["blockstate", "--version"]), 0);
        assert_eq!(run(["blockstate", "frobnicate"]), 1);
        assert_eq!(run(["blockstate", "train", "--chi", "x"]), 1);
    }

    #[test]
    fn regions() {
        assert!(matches!(parse_region("half"), Ok(Region::Half)));
        assert!(matches!(parse_region("window:3"), Ok(Region::Square(3))));
        assert!(parse_region("window:").is_err());
        assert!(parse_region("quarter").is_err());
    }
}
