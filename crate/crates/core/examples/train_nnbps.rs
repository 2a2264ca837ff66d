//! Trains a block product state with a small PEPS on every 2×2 block.
//!
//!     cargo run --release --example train_nnbps -- [mnist-dir] [train-images] [epochs]

use std::ops::ControlFlow;
use std::path::PathBuf;

use blockstate::dataset::{load_idx, tile};
use blockstate::models::{init_model_with, InitOptions, InitRange, ModelKind};
use blockstate::training::{embed_samples, train, TrainConfig};

fn main() -> blockstate::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let count: usize = args.next().map_or(1000, |n| n.parse().expect("image count"));
    let epochs: usize = args.next().map_or(10, |n| n.parse().expect("epochs"));

    let mut train_images = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    train_images.truncate(count);
    let mut test_images = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    test_images.truncate(1000);
    let (train_set, test_set) = (embed_samples(&train_images)?, embed_samples(&test_images)?);

    let layout = tile(train_images[0].dims(), 2)?;
    let options = InitOptions { range: InitRange::Positive, ..InitOptions::default() };
    let mut model = init_model_with(ModelKind::Nnbps, layout, 2, 0, &options)?;
    let config = TrainConfig { learning_rate: 0.005, batch_size: 200, epochs, ..TrainConfig::default() };
    train(&mut model, &train_set, Some(&test_set), &config, |r| {
        let test = r.test.as_ref().map_or(0.0, |t| t.accuracy);
        println!("epoch {:>3}  loss {:.4}  train {:.2}%  test {:.2}%", r.epoch, r.train.loss, 100.0 * r.train.accuracy, 100.0 * test);
        ControlFlow::Continue(())
    })?;
    Ok(())
}
