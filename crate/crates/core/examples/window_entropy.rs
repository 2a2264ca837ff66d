//! Mean entanglement entropy of L×L squares inside the central 10×10 window,
//! for a digit's sum state. With the default N_Σ = 1000 this takes minutes.
//!
//!     cargo run --release --example window_entropy -- [mnist-dir] [digit] [n-sigma]

use std::path::PathBuf;

use blockstate::dataset::{first_of_class, load_idx, DEFAULT_WINDOW};
use blockstate::embedding::embed_image;
use blockstate::entanglement::window_entropy_scan;

fn main() -> blockstate::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let digit: u8 = args.next().map_or(3, |d| d.parse().expect("digit"));
    let n_sigma: usize = args.next().map_or(200, |n| n.parse().expect("n-sigma"));
    let images = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let states = first_of_class(&images, digit, n_sigma)?
        .into_iter()
        .map(embed_image)
        .collect::<blockstate::Result<Vec<_>>>()?;
    let ls = [1, 2, 3, 4, 5, 6];
    let bound = (n_sigma as f64).ln();
    for row in window_entropy_scan(&states, images[0].dims(), DEFAULT_WINDOW, &ls, 1e-12)? {
        let area = (row.l * row.l) as f64 * 2f64.ln();
        println!(
            "L = {}  mean S = {:.4} ± {:.4} over {:>3} squares  (bounds: {:.4}, log N = {:.4})",
            row.l, row.mean, row.std, row.n_partitions, area, bound
        );
    }
    Ok(())
}
