//! Classifies by overlap with the sum of each class's training images.
//!
//!     cargo run --release --example sum_state_classifier -- [mnist-dir] [per-class]

use std::path::PathBuf;

use blockstate::dataset::{balanced_subset, load_idx};
use blockstate::models::SumStateModel;
use blockstate::training::{embed_samples, evaluate, LossKind};

fn main() -> blockstate::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let per_class: usize = args.next().map_or(100, |n| n.parse().expect("per-class count"));

    let train_images = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let mut test_images = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    test_images.truncate(1000);
    let train_set = embed_samples(&balanced_subset(&train_images, per_class, 10)?)?;
    let test_set = embed_samples(&test_images)?;

    let model = SumStateModel::from_samples(train_set.iter().map(|s| (&s.state, s.label)), 10)?;
    let report = evaluate(&model, &test_set, LossKind::Nll)?;
    println!("{} states per class, test accuracy {:.2}%", per_class, 100.0 * report.accuracy);
    for (c, acc) in report.per_class_accuracy.iter().enumerate() {
        println!("  digit {c}: {:.1}%", 100.0 * acc);
    }
    Ok(())
}
