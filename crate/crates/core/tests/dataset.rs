use blockstate::dataset::{
    balanced_subset, central_window_squares, first_of_class, load_idx, tile, top_half_partition, Image,
};
use blockstate::{Error, IdxError};

/// A hand-built IDX pair: two 2×3 images.
fn fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    images.extend([0, 51, 102, 153, 204, 255, 255, 255, 0, 0, 1, 2]);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
    let (i, l) = (dir.join("img"), dir.join("lab"));
    std::fs::write(&i, images).unwrap();
    std::fs::write(&l, labels).unwrap();
    (i, l)
}

#[test]
fn reads_a_hand_written_idx_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = fixture(dir.path());
    let set = load_idx(&i, &l).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(set[0].dims(), (2, 3));
    assert_eq!(set[0].pixels, [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    assert_eq!((set[0].label, set[1].label), (7, 3));
    assert_eq!(set[1].pixels[5], 2.0 / 255.0);
}

#[test]
fn idx_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = fixture(dir.path());
    let mut bytes = std::fs::read(&i).unwrap();
    bytes[3] = 0x01;
    std::fs::write(dir.path().join("magic"), &bytes).unwrap();
    assert!(matches!(load_idx(dir.path().join("magic"), &l), Err(Error::Idx(IdxError::BadMagic { .. }))));
    assert!(matches!(load_idx(&l, &l), Err(Error::Idx(IdxError::Truncated { .. }))));
    assert!(matches!(load_idx(dir.path().join("none"), &l), Err(Error::Io { .. })));

    let bytes = std::fs::read(&i).unwrap();
    std::fs::write(dir.path().join("short"), &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_idx(dir.path().join("short"), &l), Err(Error::Idx(IdxError::Truncated { .. }))));

    std::fs::write(dir.path().join("one-label"), [0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
    assert!(matches!(load_idx(&i, dir.path().join("one-label")), Err(Error::Idx(IdxError::CountMismatch { .. }))));

    std::fs::write(dir.path().join("bad-label"), [0, 0, 8, 1, 0, 0, 0, 2, 7, 10]).unwrap();
    assert!(matches!(load_idx(&i, dir.path().join("bad-label")), Err(Error::Idx(IdxError::LabelRange { .. }))));
}

#[test]
fn encode_round_trips_byte_pixels() {
    let images: Vec<Image> = (0..5)
        .map(|k| Image::new(3, 4, (0..12).map(|p| ((p * 20 + k) % 256) as f64 / 255.0).collect(), k as u8).unwrap())
        .collect();
    let (img, lab) = blockstate::dataset::encode_idx(&images).unwrap();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i"), img).unwrap();
    std::fs::write(dir.path().join("l"), lab).unwrap();
    assert_eq!(load_idx(dir.path().join("i"), dir.path().join("l")).unwrap(), images);
}

#[test]
fn subsets_and_partitions_on_mnist_shapes() {
    let images: Vec<Image> = (0..50).map(|k| Image::new(28, 28, vec![0.0; 784], (k % 10) as u8).unwrap()).collect();
    assert_eq!(first_of_class(&images, 4, 5).unwrap().len(), 5);
    assert!(first_of_class(&images, 4, 6).is_err());
    let balanced = balanced_subset(&images, 3, 10).unwrap();
    assert_eq!(balanced.len(), 30);
    assert!(balanced.chunks(3).enumerate().all(|(c, g)| g.iter().all(|i| i.label as usize == c)));

    assert_eq!(tile((28, 28), 2).unwrap().num_blocks(), 196);
    assert_eq!(tile((28, 28), 3).unwrap().num_blocks(), 81);
    assert_eq!(tile((28, 28), 4).unwrap().num_blocks(), 49);
    let half = top_half_partition((28, 28)).unwrap();
    assert_eq!((half.region_a.len(), half.region_b.len()), (392, 392));
    let counts: Vec<usize> =
        (1..=6).map(|l| central_window_squares((28, 28), 10, l).unwrap().len()).collect();
    assert_eq!(counts, [100, 81, 64, 49, 36, 25]);
    assert_eq!(counts.iter().sum::<usize>(), 355);
}
