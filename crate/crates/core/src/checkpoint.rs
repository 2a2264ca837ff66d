//! Binary model checkpoints. The byte layout is described in
//! `docs/checkpoint-format.md`; everything is little-endian and parameters
//! are stored as raw `f64` bits, so a save/load round trip is exact.

use std::path::Path;

use crate::dataset::tile;
use crate::fsutil::write_atomic;
use crate::models::{Classifier, Model, ModelKind, NnbpsModel, SbpsModel, TrainableModel};
use crate::training::{LossKind, TrainConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BLKSTATE";
pub const VERSION: u32 = 1;

/// A model together with the training configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
}

fn kind_code(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Nnbps => 0,
        ModelKind::Sbps => 1,
        ModelKind::Product => 2,
        ModelKind::SumState => 3,
    }
}

/// 64-bit FNV-1a.
fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn encode(model: &Model, config: &TrainConfig) -> Vec<u8> {
    let layout = model.layout();
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let u64le = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
    let f64le = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind_code(model.kind()));
    let (edge, label_position) = match model {
        Model::Sbps(m) => (m.edge_bond_dim(), m.label_position()),
        Model::Nnbps(_) => (1, 0),
    };
    for v in [
        layout.n,
        model.chi(),
        model.num_classes(),
        layout.image_height,
        layout.image_width,
        layout.grid_height,
        layout.grid_width,
        edge,
        label_position,
    ] {
        u32le(&mut out, v);
    }
    u64le(&mut out, model.seed());
    for v in [config.learning_rate, config.beta1, config.beta2, config.epsilon, config.alpha] {
        f64le(&mut out, v);
    }
    u64le(&mut out, config.batch_size as u64);
    u64le(&mut out, config.epochs as u64);
    u64le(&mut out, config.seed);
    out.push(match config.loss {
        LossKind::Nll => 0,
        LossKind::Quadratic => 1,
    });
    u64le(&mut out, layout.num_blocks() as u64);
    for b in 0..layout.num_blocks() {
        let params = &model.params()[model.block_param_range(b)];
        u64le(&mut out, params.len() as u64);
        for &p in params {
            f64le(&mut out, p);
        }
    }
    let sum = checksum(&out);
    u64le(&mut out, sum);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version} (this build reads {VERSION})")));
    }
    if checksum(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch; file is corrupted or truncated".into()));
    }
    let kind = r.u8()?;
    let n = r.u32()?;
    let chi = r.u32()?;
    let num_classes = r.u32()?;
    let (height, width) = (r.u32()?, r.u32()?);
    let (grid_height, grid_width) = (r.u32()?, r.u32()?);
    let edge = r.u32()?;
    let label_position = r.u32()?;
    let seed = r.u64()?;
    let config = TrainConfig {
        learning_rate: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
        alpha: r.f64()?,
        batch_size: r.u64()? as usize,
        epochs: r.u64()? as usize,
        seed: r.u64()?,
        loss: match r.u8()? {
            0 => LossKind::Nll,
            1 => LossKind::Quadratic,
            other => return Err(Error::Checkpoint(format!("unknown loss code {other}"))),
        },
    };
    let layout = tile((height, width), n)?;
    if (layout.grid_height, layout.grid_width) != (grid_height, grid_width) {
        return Err(Error::Checkpoint(format!(
            "grid {grid_height}x{grid_width} does not match {height}x{width} tiled by {n}"
        )));
    }
    let blocks = r.u64()? as usize;
    if blocks != layout.num_blocks() {
        return Err(Error::Checkpoint(format!("{blocks} blocks stored, layout has {}", layout.num_blocks())));
    }
    let mut params = Vec::new();
    for _ in 0..blocks {
        let len = r.u64()? as usize;
        if len > (body.len() - r.pos) / 8 {
            return Err(Error::Checkpoint(format!("block length {len} exceeds the file")));
        }
        for _ in 0..len {
            params.push(r.f64()?);
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let model = match kind {
        0 | 2 => Model::Nnbps(NnbpsModel::from_params(layout, chi, num_classes, seed, params)?),
        1 => Model::Sbps(SbpsModel::from_params(layout, chi, num_classes, seed, edge, label_position, params)?),
        other => return Err(Error::Checkpoint(format!("unknown model kind code {other}"))),
    };
    if kind_code(model.kind()) != kind {
        return Err(Error::Checkpoint(format!("kind code {kind} does not match an n = {n} layout")));
    }
    Ok(Checkpoint { model, config })
}

pub fn save(path: impl AsRef<Path>, model: &Model, config: &TrainConfig) -> Result<()> {
    write_atomic(path.as_ref(), &encode(model, config))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
