#![allow(dead_code)]

use std::path::PathBuf;

use blockstate::dataset::{load_idx, tile, Image};
use blockstate::models::{init_model_with, InitOptions, Model, ModelKind, TrainableModel};
use blockstate::training::{embed_samples, gradient, loss, Sample, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_images(height: usize, width: usize, count: usize, classes: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let pixels = (0..height * width).map(|_| rng.gen_range(0.0..=1.0)).collect();
            Image::new(height, width, pixels, (i % classes) as u8).unwrap()
        })
        .collect()
}

pub fn random_samples(height: usize, width: usize, count: usize, classes: usize, seed: u64) -> Vec<Sample> {
    embed_samples(&random_images(height, width, count, classes, seed)).unwrap()
}

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// MNIST training split, or `None` (with a note on stderr) when the files are absent.
pub fn mnist_train() -> Option<Vec<Image>> {
    let dir = mnist_dir();
    let images = dir.join("train-images-idx3-ubyte");
    if !images.exists() {
        eprintln!("MNIST not found in {}; run scripts/fetch-mnist.sh", dir.display());
        return None;
    }
    Some(load_idx(images, dir.join("train-labels-idx1-ubyte")).unwrap())
}

pub fn mnist_test() -> Option<Vec<Image>> {
    let dir = mnist_dir();
    let images = dir.join("t10k-images-idx3-ubyte");
    if !images.exists() {
        return None;
    }
    Some(load_idx(images, dir.join("t10k-labels-idx1-ubyte")).unwrap())
}

pub const STEP: f64 = 1e-5;

/// Worst relative disagreement between analytic and central-difference
/// derivatives over `count` random coordinates.
pub fn max_fd_error(model: &Model, batch: &[Sample], config: &TrainConfig, count: usize, seed: u64) -> f64 {
    let (_, grad) = gradient(model, batch, config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let k = rng.gen_range(0..grad.len());
        let mut plus = model.clone();
        plus.params_mut()[k] += STEP;
        let mut minus = model.clone();
        minus.params_mut()[k] -= STEP;
        let fd = (loss(&plus, batch, config).unwrap() - loss(&minus, batch, config).unwrap()) / (2.0 * STEP);
        let err = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

pub fn perturbed(kind: ModelKind, n: usize, chi: usize, classes: usize, seed: u64) -> Model {
    let layout = tile((6, 6), n).unwrap();
    let options = InitOptions { num_classes: classes, ..InitOptions::default() };
    let mut model = init_model_with(kind, layout, chi, seed, &options).unwrap();
    // move every log-norm away from the kink of |log Z| at 0
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for p in model.params_mut() {
        *p *= rng.gen_range(0.9..1.3);
    }
    model
}
