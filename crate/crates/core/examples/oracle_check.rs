//! Compares the Gram-matrix Schmidt decomposition of a random sum of product
//! states with a brute-force SVD of the full 2^N amplitude vector.
//!
//!     cargo run --example oracle_check

use blockstate::dataset::Partition;
use blockstate::embedding::{embed_pixel, ProductState};
use blockstate::entanglement::{dense_oracle, gram_matrices, schmidt_from_grams, DEFAULT_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> blockstate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sites = 12;
    let states: Vec<ProductState> = (0..15)
        .map(|_| ProductState::new((0..sites).map(|_| embed_pixel(rng.gen_range(0.0..=1.0)).unwrap()).collect()))
        .collect::<blockstate::Result<_>>()?;
    let partition = Partition::new(sites, [0, 3, 4, 7, 9])?;

    let gram = schmidt_from_grams(&gram_matrices(&states, &partition)?, DEFAULT_TOL)?;
    let dense = dense_oracle(&states, &partition, DEFAULT_TOL)?;
    println!("rank: gram {} dense {}", gram.rank, dense.rank);
    println!("entropy: gram {:.15} dense {:.15}", gram.entropy, dense.entropy);
    for (k, (g, d)) in gram.lambdas.iter().zip(&dense.lambdas).enumerate() {
        println!("lambda_{:<2} {g:.15e} {d:.15e}  rel {:.1e}", k + 1, (g - d).abs() / d);
    }
    Ok(())
}
