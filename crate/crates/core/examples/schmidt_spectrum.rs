//! Schmidt spectrum of the sum of the first N_Σ images of a digit across the
//! top/bottom half cut.
//!
//!     cargo run --release --example schmidt_spectrum -- [mnist-dir] [digit]

use std::path::PathBuf;

use blockstate::dataset::{first_of_class, load_idx};
use blockstate::embedding::embed_image;
use blockstate::entanglement::half_partition_scan;

fn main() -> blockstate::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let digit: u8 = args.next().map_or(3, |d| d.parse().expect("digit"));
    let images = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let sizes = [10, 20, 40, 80, 160, 320, 640, 1280];
    let states = first_of_class(&images, digit, 1280)?
        .into_iter()
        .map(embed_image)
        .collect::<blockstate::Result<Vec<_>>>()?;
    for row in half_partition_scan(&states, images[0].dims(), &sizes, 1e-12)? {
        let sq: Vec<f64> = row.result.lambdas.iter().map(|l| l * l).collect();
        println!(
            "N = {:>4}  rank {:>4}  S = {:.4}  lambda^2 in [{:.3e}, {:.3e}]  1/N = {:.3e}",
            row.n_sigma,
            row.result.rank,
            row.result.entropy,
            sq.last().unwrap(),
            sq[0],
            1.0 / row.n_sigma as f64
        );
    }
    Ok(())
}
