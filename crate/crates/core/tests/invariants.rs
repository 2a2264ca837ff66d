use blockstate::checkpoint;
use blockstate::dataset::tile;
use blockstate::embedding::pixel_overlap;
use blockstate::models::{init_model_with, InitOptions, ModelKind, TrainableModel};
use blockstate::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pixel_overlaps_are_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1_000_000 {
        let (a, b) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let o = pixel_overlap(a, b).unwrap();
        assert!((0.0..=1.0 + 1e-15).contains(&o), "{a} {b} -> {o}");
    }
    for (a, b) in [(0.0, 1.0), (1.0, 0.0), (0.0, 0.0), (1.0, 1.0)] {
        assert!(pixel_overlap(a, b).unwrap() >= 0.0);
    }
}

#[test]
fn checkpoint_header_offsets() {
    let opts = InitOptions { num_classes: 10, edge_bond_dim: 2, label_position: Some(1), ..InitOptions::default() };
    let model = init_model_with(ModelKind::Sbps, tile((8, 12), 4).unwrap(), 3, 77, &opts).unwrap();
    let config = TrainConfig { learning_rate: 0.25, batch_size: 33, epochs: 7, seed: 5, ..TrainConfig::default() };
    let bytes = checkpoint::encode(&model, &config);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    assert_eq!(&bytes[0..8], b"BLKSTATE");
    assert_eq!(u32_at(8), 1);
    assert_eq!(bytes[12], 1, "sbps kind code");
    let header: Vec<u32> = (13..=45).step_by(4).map(u32_at).collect();
    assert_eq!(header, [4, 3, 10, 8, 12, 8, 12, 2, 1]);
    assert_eq!(u64_at(49), 77);
    assert_eq!(f64_at(57), 0.25);
    assert_eq!(u64_at(97), 33);
    assert_eq!(u64_at(105), 7);
    assert_eq!(u64_at(113), 5);
    let blocks = u64_at(122) as usize;
    assert_eq!(blocks, model.layout().num_blocks());
    let mut offset = 130;
    let mut values = Vec::new();
    for _ in 0..blocks {
        let count = u64_at(offset) as usize;
        offset += 8;
        values.extend((0..count).map(|k| f64_at(offset + 8 * k)));
        offset += 8 * count;
    }
    assert_eq!(values, model.params());
    assert_eq!(bytes.len(), offset + 8, "trailing checksum");
}
