//! Schmidt spectrum of the centered 3×3 block of a digit's sum state.
//!
//!     cargo run --release --example central_block_spectrum -- [mnist-dir] [digit]

use std::path::PathBuf;

use blockstate::dataset::{first_of_class, load_idx};
use blockstate::embedding::embed_image;
use blockstate::entanglement::central_square_scan;

fn main() -> blockstate::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let digit: u8 = args.next().map_or(3, |d| d.parse().expect("digit"));
    let images = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let sizes = [10, 40, 160, 640, 1280];
    let states = first_of_class(&images, digit, 1280)?
        .into_iter()
        .map(embed_image)
        .collect::<blockstate::Result<Vec<_>>>()?;
    for row in central_square_scan(&states, images[0].dims(), 3, &sizes, 1e-12)? {
        let l = &row.result.lambdas;
        println!(
            "N = {:>4}  rank {:>3} (of at most 512)  S = {:.4}  lambda^2 from {:.2e} down to {:.2e}",
            row.n_sigma,
            row.result.rank,
            row.result.entropy,
            l[0] * l[0],
            l[l.len() - 1] * l[l.len() - 1]
        );
    }
    Ok(())
}
