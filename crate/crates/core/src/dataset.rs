//! IDX ingestion (MNIST / Fashion-MNIST), block tilings of the pixel lattice,
//! and the bipartitions used by the entanglement scans.

use std::collections::BTreeSet;
use std::path::Path;

use crate::{Error, IdxError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Side of the centered window used by the L×L entropy scans.
pub const DEFAULT_WINDOW: usize = 10;

/// A grayscale image with pixels normalized to `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: u8,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, label: u8) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("image dims {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(k) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input(format!("pixel {k} = {} is outside [0, 1]", pixels[k])));
        }
        Ok(Self { height, width, pixels, label })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn need(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(IdxError::Truncated { path: path.to_path_buf(), expected, found: bytes.len() }.into());
    }
    Ok(())
}

/// Parses an IDX3 image file body: returns `(rows, cols, raw pixel bytes per image)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    need(path, bytes, 16)?;
    let magic = read_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), expected: IDX_IMAGES_MAGIC, found: magic }.into());
    }
    let count = read_u32(bytes, 4) as usize;
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let size = rows * cols;
    need(path, bytes, 16 + count * size)?;
    let images = bytes[16..16 + count * size].chunks(size.max(1)).take(count).map(<[u8]>::to_vec).collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    need(path, bytes, 8)?;
    let magic = read_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), expected: IDX_LABELS_MAGIC, found: magic }.into());
    }
    let count = read_u32(bytes, 4) as usize;
    need(path, bytes, 8 + count)?;
    let labels = bytes[8..8 + count].to_vec();
    if let Some(index) = labels.iter().position(|&l| l > 9) {
        return Err(IdxError::LabelRange { path: path.to_path_buf(), index, label: labels[index] }.into());
    }
    Ok(labels)
}

/// Loads an IDX image/label file pair. Pixel bytes are divided by 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (rows, cols, raw) = parse_idx_images(images_path, &image_bytes)?;
    let labels = parse_idx_labels(labels_path, &label_bytes)?;
    if raw.len() != labels.len() {
        return Err(IdxError::CountMismatch { images: raw.len(), labels: labels.len() }.into());
    }
    raw.into_iter()
        .zip(labels)
        .map(|(bytes, label)| {
            let pixels = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
            Image::new(rows, cols, pixels, label)
        })
        .collect()
}

/// Serializes images and labels as an IDX pair (pixels rounded back to bytes).
pub fn encode_idx(images: &[Image]) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = images.first().map(Image::dims).unwrap_or((0, 0));
    let mut image_bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    image_bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        image_bytes.extend_from_slice(&(v as u32).to_be_bytes());
    }
    let mut label_bytes = Vec::with_capacity(8 + images.len());
    label_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    for img in images {
        if img.dims() != (rows, cols) {
            return Err(Error::Dimension("all images must share dimensions".into()));
        }
        image_bytes.extend(img.pixels.iter().map(|p| (p * 255.0).round() as u8));
        label_bytes.push(img.label);
    }
    Ok((image_bytes, label_bytes))
}

/// The first `count` images with the given label, in file order.
pub fn first_of_class(images: &[Image], label: u8, count: usize) -> Result<Vec<&Image>> {
    let picked: Vec<&Image> = images.iter().filter(|img| img.label == label).take(count).collect();
    if picked.len() < count {
        return Err(Error::Config(format!(
            "requested {count} images of class {label} but only {} are available",
            picked.len()
        )));
    }
    Ok(picked)
}

/// First `per_class` images of every class `0..num_classes`, grouped by class.
pub fn balanced_subset(images: &[Image], per_class: usize, num_classes: u8) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(per_class * num_classes as usize);
    for label in 0..num_classes {
        out.extend(first_of_class(images, label, per_class)?.into_iter().cloned());
    }
    Ok(out)
}

/// Square `n × n` tiling of the (possibly cropped) pixel lattice.
///
/// Site indices in `blocks` refer to the row-major pixel index of the
/// *uncropped* image, so embedded images can be used directly. Within each
/// block, sites are listed row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub n: usize,
    pub blocks: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn image_sites(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn block_sites(&self) -> usize {
        self.n * self.n
    }
}

/// Tiles an image lattice into `n × n` blocks, `n ∈ {1, 2, 3, 4}`.
///
/// Trailing rows and columns that do not fill a whole block are dropped; for
/// 28×28 images this only happens for `n = 3` (27×27 lattice).
pub fn tile(image_dims: (usize, usize), n: usize) -> Result<BlockLayout> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("block size {n} is not supported (use 1, 2, 3 or 4)")));
    }
    let (height, width) = image_dims;
    if height < n || width < n {
        return Err(Error::Config(format!("{height}x{width} image is smaller than a {n}x{n} block")));
    }
    let grid_height = height - height % n;
    let grid_width = width - width % n;
    let mut blocks = Vec::with_capacity((grid_height / n) * (grid_width / n));
    for br in 0..grid_height / n {
        for bc in 0..grid_width / n {
            let mut sites = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    sites.push((br * n + r) * width + bc * n + c);
                }
            }
            blocks.push(sites);
        }
    }
    Ok(BlockLayout { image_height: height, image_width: width, grid_height, grid_width, n, blocks })
}

/// A bipartition `A : B` of a lattice of `n_sites` sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub n_sites: usize,
    pub region_a: Vec<usize>,
    pub region_b: Vec<usize>,
}

impl Partition {
    /// `region_a` must be a non-empty proper subset of `0..n_sites`; `B` is its complement.
    pub fn new(n_sites: usize, region_a: impl IntoIterator<Item = usize>) -> Result<Self> {
        let a: BTreeSet<usize> = region_a.into_iter().collect();
        if a.is_empty() || a.len() >= n_sites {
            return Err(Error::Config(format!(
                "region A must be a non-empty proper subset, got {} of {n_sites} sites",
                a.len()
            )));
        }
        if let Some(&bad) = a.iter().find(|&&s| s >= n_sites) {
            return Err(Error::Config(format!("site {bad} is outside a lattice of {n_sites} sites")));
        }
        let region_b = (0..n_sites).filter(|s| !a.contains(s)).collect();
        Ok(Self { n_sites, region_a: a.into_iter().collect(), region_b })
    }

    pub fn swapped(&self) -> Self {
        Self { n_sites: self.n_sites, region_a: self.region_b.clone(), region_b: self.region_a.clone() }
    }
}

/// Top half `A` versus bottom half `B`.
pub fn top_half_partition(dims: (usize, usize)) -> Result<Partition> {
    let (height, width) = dims;
    if height % 2 != 0 {
        return Err(Error::Config(format!("top/bottom split needs an even height, got {height}")));
    }
    Partition::new(height * width, 0..height / 2 * width)
}

fn square_sites(width: usize, top: usize, left: usize, side: usize) -> impl Iterator<Item = usize> {
    (top..top + side).flat_map(move |r| (left..left + side).map(move |c| r * width + c))
}

/// Every axis-aligned `l × l` square inside the centered `window × window`
/// region, each as region `A`. For 28×28 and window 10 the window covers rows
/// and columns 9..=18.
pub fn central_window_squares(dims: (usize, usize), window: usize, l: usize) -> Result<Vec<Partition>> {
    let (height, width) = dims;
    if window == 0 || window > height || window > width {
        return Err(Error::Config(format!("window {window} does not fit a {height}x{width} lattice")));
    }
    if l == 0 || l > window {
        return Err(Error::Config(format!("square side {l} must lie in 1..={window}")));
    }
    let (top, left) = ((height - window) / 2, (width - window) / 2);
    let span = window - l + 1;
    let mut out = Vec::with_capacity(span * span);
    for dr in 0..span {
        for dc in 0..span {
            out.push(Partition::new(height * width, square_sites(width, top + dr, left + dc, l))?);
        }
    }
    Ok(out)
}

/// The single centered `l × l` square as region `A`.
pub fn central_square(dims: (usize, usize), l: usize) -> Result<Partition> {
    let (height, width) = dims;
    if l == 0 || l > height || l > width {
        return Err(Error::Config(format!("square side {l} does not fit a {height}x{width} lattice")));
    }
    Partition::new(height * width, square_sites(width, (height - l) / 2, (width - l) / 2, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_counts() {
        assert_eq!(tile((28, 28), 1).unwrap().num_blocks(), 784);
        assert_eq!(tile((28, 28), 2).unwrap().num_blocks(), 196);
        let l3 = tile((28, 28), 3).unwrap();
        assert_eq!((l3.num_blocks(), l3.grid_height, l3.grid_width), (81, 27, 27));
        assert_eq!(tile((28, 28), 4).unwrap().num_blocks(), 49);
        assert!(matches!(tile((28, 28), 5), Err(Error::Config(_))));
        assert!(matches!(tile((28, 28), 0), Err(Error::Config(_))));
    }

    #[test]
    fn tile_n3_drops_last_row_and_column() {
        let l = tile((28, 28), 3).unwrap();
        let used: BTreeSet<usize> = l.blocks.iter().flatten().copied().collect();
        assert_eq!(used.len(), 27 * 27);
        assert!(used.iter().all(|s| s / 28 < 27 && s % 28 < 27));
    }

    #[test]
    fn blocks_are_contiguous_squares() {
        for n in 1..=4 {
            let l = tile((28, 28), n).unwrap();
            for block in &l.blocks {
                let (r0, c0) = (block[0] / 28, block[0] % 28);
                for (k, &s) in block.iter().enumerate() {
                    assert_eq!((s / 28, s % 28), (r0 + k / n, c0 + k % n));
                }
            }
        }
    }

    #[test]
    fn half_partitions() {
        assert_eq!(top_half_partition((28, 28)).unwrap().region_a.len(), 392);
        assert_eq!(top_half_partition((4, 4)).unwrap().region_a.len(), 8);
        assert_eq!(top_half_partition((2, 2)).unwrap().region_a, vec![0, 1]);
        assert!(matches!(top_half_partition((3, 4)), Err(Error::Config(_))));
    }

    #[test]
    fn window_square_counts() {
        assert_eq!(central_window_squares((28, 28), 10, 1).unwrap().len(), 100);
        assert_eq!(central_window_squares((28, 28), 10, 2).unwrap().len(), 81);
        assert_eq!(central_window_squares((28, 28), 10, 10).unwrap().len(), 1);
        assert!(central_window_squares((28, 28), 10, 0).is_err());
        assert!(central_window_squares((28, 28), 10, 11).is_err());
    }

    #[test]
    fn window_is_rows_and_cols_9_to_18() {
        let full = central_window_squares((28, 28), 10, 10).unwrap();
        let a = &full[0].region_a;
        assert_eq!(a.first(), Some(&(9 * 28 + 9)));
        assert_eq!(a.last(), Some(&(18 * 28 + 18)));
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(4, []).is_err());
        assert!(Partition::new(4, 0..4).is_err());
        assert!(Partition::new(4, [7]).is_err());
        let p = Partition::new(4, [2, 0]).unwrap();
        assert_eq!((p.region_a.clone(), p.region_b.clone()), (vec![0, 2], vec![1, 3]));
        assert_eq!(p.swapped().swapped(), p);
    }

    #[test]
    fn wrong_label_magic_is_rejected() {
        let mut bytes = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.push(3);
        let err = parse_idx_labels(Path::new("labels"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::BadMagic { found: IDX_IMAGES_MAGIC, .. })));
    }

    #[test]
    fn truncated_images_are_rejected() {
        let mut bytes = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [2u32, 2, 2] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[0; 7]);
        let err = parse_idx_images(Path::new("images"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::Truncated { expected: 24, found: 23, .. })));
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(1, 2, vec![0.0, 1.5], 0).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3], 0).is_err());
    }
}
