//! Saves a freshly initialized SBPS model and reads it back bit for bit.
//!
//!     cargo run --example checkpoint_roundtrip

use blockstate::checkpoint;
use blockstate::dataset::tile;
use blockstate::models::{init_model_with, InitOptions, ModelKind, TrainableModel};
use blockstate::training::TrainConfig;

fn main() -> blockstate::Result<()> {
    let layout = tile((28, 28), 4)?;
    let options = InitOptions { edge_bond_dim: 2, ..InitOptions::default() };
    let model = init_model_with(ModelKind::Sbps, layout, 3, 42, &options)?;
    let config = TrainConfig { learning_rate: 5e-3, ..TrainConfig::default() };

    let path = std::env::temp_dir().join("blockstate-example.ckpt");
    checkpoint::save(&path, &model, &config)?;
    let back = checkpoint::load(&path)?;
    let same = model.params().iter().zip(back.model.params()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "{} parameters written to {} ({} bytes); identical after reload: {same}",
        model.params().len(),
        path.display(),
        std::fs::metadata(&path).map_err(|e| blockstate::Error::Io { path: path.clone(), source: e })?.len()
    );
    assert!(same && back.config == config);
    std::fs::remove_file(&path).ok();
    Ok(())
}
