use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{GridShape, SiteDims, Sweep};
use super::{check_class, check_sites, log_sq, Classifier, InitRange, LogScore, ScoredSample, TrainableModel, LOG_FLOOR};
use crate::dataset::BlockLayout;
use crate::embedding::ProductState;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Nearest-neighbor block product state: an independent open-boundary PEPS
/// per block and per class.
///
/// Site tensors have axes `(physical, up, left, down, right)`; bonds leaving
/// the block have dimension 1. Parameters are stored block-major, then class,
/// then site (row-major within the block).
#[derive(Clone, Debug, PartialEq)]
pub struct NnbpsModel {
    layout: BlockLayout,
    chi: usize,
    num_classes: usize,
    seed: u64,
    shape: GridShape,
    chunk_len: usize,
    params: Vec<f64>,
}

/// Index map for the ket-bra double layer of one site.
struct DoubleSite {
    /// `pairs[i * len + j]` is the double-layer index of ket entry `i`, bra entry `j`.
    pairs: Vec<usize>,
    len: usize,
}

impl DoubleSite {
    fn new(dims: SiteDims) -> Self {
        let len: usize = dims.iter().product();
        let sq = dims.map(|d| d * d);
        let decode = |mut i: usize| {
            let mut out = [0; 4];
            for k in (0..4).rev() {
                out[k] = i % dims[k];
                i /= dims[k];
            }
            out
        };
        let mut pairs = Vec::with_capacity(len * len);
        for i in 0..len {
            let a = decode(i);
            for j in 0..len {
                let b = decode(j);
                let mut idx = 0;
                for k in 0..4 {
                    idx = idx * sq[k] + a[k] * dims[k] + b[k];
                }
                pairs.push(idx);
            }
        }
        Self { pairs, len }
    }
}

struct DoubleLayer {
    shape: GridShape,
    sites: Vec<DoubleSite>,
    sweep: Sweep,
    buf: Vec<f64>,
    grad: Vec<f64>,
}

impl DoubleLayer {
    fn new(single: &GridShape) -> Self {
        let shape = single.squared();
        let sites = single.dims.iter().map(|&d| DoubleSite::new(d)).collect();
        Self { sweep: Sweep::new(shape.clone()), buf: vec![0.0; shape.total], grad: vec![0.0; shape.total], shape, sites }
    }

    /// `⟨ψ|ψ⟩` of one block-class chunk.
    fn norm(&mut self, single: &GridShape, chunk: &[f64]) -> f64 {
        self.buf.iter_mut().for_each(|v| *v = 0.0);
        for (s, site) in self.sites.iter().enumerate() {
            let a = &chunk[2 * single.offsets[s]..2 * (single.offsets[s] + site.len)];
            let out = &mut self.buf[self.shape.offsets[s]..self.shape.offsets[s] + site.len * site.len];
            for p in 0..2 {
                let ap = &a[p * site.len..(p + 1) * site.len];
                for i in 0..site.len {
                    if ap[i] == 0.0 {
                        continue;
                    }
                    for j in 0..site.len {
                        out[site.pairs[i * site.len + j]] += ap[i] * ap[j];
                    }
                }
            }
        }
        self.sweep.value(&self.buf)
    }

    /// Adds `seed · ∂⟨ψ|ψ⟩/∂chunk` into `grad_chunk`; must follow `norm` on the same chunk.
    fn backward(&mut self, seed: f64, single: &GridShape, chunk: &[f64], grad_chunk: &mut [f64]) {
        self.grad.iter_mut().for_each(|v| *v = 0.0);
        self.sweep.backward(seed, &self.buf, &mut self.grad);
        for (s, site) in self.sites.iter().enumerate() {
            let off = 2 * single.offsets[s];
            let dd = &self.grad[self.shape.offsets[s]..self.shape.offsets[s] + site.len * site.len];
            for p in 0..2 {
                let ap = &chunk[off + p * site.len..off + (p + 1) * site.len];
                let gp = &mut grad_chunk[off + p * site.len..off + (p + 1) * site.len];
                for i in 0..site.len {
                    let mut acc = 0.0;
                    for j in 0..site.len {
                        acc += (dd[site.pairs[i * site.len + j]] + dd[site.pairs[j * site.len + i]]) * ap[j];
                    }
                    gp[i] += acc;
                }
            }
        }
    }
}

impl NnbpsModel {
    pub fn from_params(layout: BlockLayout, chi: usize, num_classes: usize, seed: u64, params: Vec<f64>) -> Result<Self> {
        if chi == 0 {
            return Err(Error::Config("bond dimension must be at least 1".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        let shape = GridShape::peps(layout.n, chi);
        let chunk_len = 2 * shape.total;
        let expected = layout.num_blocks() * num_classes * chunk_len;
        if params.len() != expected {
            return Err(Error::Dimension(format!("NNBPS expects {expected} parameters, got {}", params.len())));
        }
        Ok(Self { layout, chi, num_classes, seed, shape, chunk_len, params })
    }

    /// Uniform random tensors, then every block-class state rescaled to unit norm.
    pub fn init(layout: BlockLayout, chi: usize, num_classes: usize, seed: u64) -> Result<Self> {
        Self::init_in(layout, chi, num_classes, seed, InitRange::Symmetric)
    }

    /// Random entries drawn from `range`, then every block-class state scaled to unit norm.
    pub fn init_in(layout: BlockLayout, chi: usize, num_classes: usize, seed: u64, range: InitRange) -> Result<Self> {
        if chi == 0 {
            return Err(Error::Config("bond dimension must be at least 1".into()));
        }
        let shape = GridShape::peps(layout.n, chi);
        let count = layout.num_blocks() * num_classes * 2 * shape.total;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..count).map(|_| rng.gen_range(range.low()..1.0)).collect();
        let mut model = Self::from_params(layout, chi, num_classes, seed, params)?;
        let mut double = DoubleLayer::new(&model.shape);
        let sites = (model.layout.n * model.layout.n) as f64;
        for k in 0..model.layout.num_blocks() * num_classes {
            let range = k * model.chunk_len..(k + 1) * model.chunk_len;
            let z = double.norm(&model.shape, &model.params[range.clone()]);
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Numerical(format!("initial block norm {z} cannot be normalized")));
            }
            let factor = z.powf(-0.5 / sites);
            model.params[range].iter_mut().for_each(|v| *v *= factor);
        }
        Ok(model)
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn chunk_range(&self, block: usize, class: usize) -> Range<usize> {
        let start = (block * self.num_classes + class) * self.chunk_len;
        start..start + self.chunk_len
    }

    /// Site tensor with axes `(physical, up, left, down, right)`.
    pub fn site_tensor(&self, block: usize, class: usize, site: usize) -> DenseTensor {
        let [u, l, d, r] = self.shape.dims[site];
        DenseTensor::new(vec![2, u, l, d, r], self.site_tensor_slice(block, class, site).to_vec())
            .expect("site tensor shape is consistent")
    }

    fn site_tensor_slice(&self, block: usize, class: usize, site: usize) -> &[f64] {
        let base = self.chunk_range(block, class).start + 2 * self.shape.offsets[site];
        &self.params[base..base + 2 * self.shape.site_len(site)]
    }

    pub fn site_tensor_mut(&mut self, block: usize, class: usize, site: usize) -> &mut [f64] {
        let base = self.chunk_range(block, class).start + 2 * self.shape.offsets[site];
        let len = 2 * self.shape.site_len(site);
        &mut self.params[base..base + len]
    }

    /// Contracts physical legs with the block's site vectors.
    fn reduce(&self, chunk: &[f64], block: usize, x: &ProductState, out: &mut [f64]) {
        let sites = x.sites();
        for (s, &site) in self.layout.blocks[block].iter().enumerate() {
            let [x0, x1] = sites[site];
            let len = self.shape.site_len(s);
            let a = &chunk[2 * self.shape.offsets[s]..];
            let o = &mut out[self.shape.offsets[s]..self.shape.offsets[s] + len];
            for i in 0..len {
                o[i] = x0 * a[i] + x1 * a[len + i];
            }
        }
    }

    fn block_overlap(&self, block: usize, class: usize, x: &ProductState, sweep: &mut Sweep, reduced: &mut [f64]) -> f64 {
        self.reduce(&self.params[self.chunk_range(block, class)], block, x, reduced);
        sweep.value(reduced)
    }

    fn scores_with(&self, x: &ProductState, sweep: &mut Sweep, reduced: &mut [f64], overlaps: &mut Vec<f64>) -> ScoredSample {
        let c = self.num_classes;
        overlaps.clear();
        let mut scores = vec![0.0; c];
        let mut floored_blocks = 0;
        for b in 0..self.layout.num_blocks() {
            for (class, score) in scores.iter_mut().enumerate() {
                let o = self.block_overlap(b, class, x, sweep, reduced);
                overlaps.push(o);
                match log_sq(o) {
                    Some(v) => *score += v,
                    None => {
                        *score += LOG_FLOOR;
                        floored_blocks += 1;
                    }
                }
            }
        }
        ScoredSample { scores: LogScore(scores), floored_blocks }
    }
}

impl Classifier for NnbpsModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn log_overlap(&self, x: &ProductState, class: usize) -> Result<f64> {
        check_sites(&self.layout, x)?;
        check_class(class, self.num_classes)?;
        let mut sweep = Sweep::new(self.shape.clone());
        let mut reduced = vec![0.0; self.shape.total];
        Ok((0..self.layout.num_blocks())
            .map(|b| log_sq(self.block_overlap(b, class, x, &mut sweep, &mut reduced)).unwrap_or(LOG_FLOOR))
            .sum())
    }

    fn log_scores(&self, x: &ProductState) -> Result<LogScore> {
        self.score(x).map(|s| s.scores)
    }
}

impl TrainableModel for NnbpsModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn block_param_range(&self, block: usize) -> Range<usize> {
        let len = self.num_classes * self.chunk_len;
        block * len..(block + 1) * len
    }

    fn block_log_overlap(&self, block: usize, x: &ProductState, class: usize) -> Result<f64> {
        check_sites(&self.layout, x)?;
        check_class(class, self.num_classes)?;
        let mut sweep = Sweep::new(self.shape.clone());
        let mut reduced = vec![0.0; self.shape.total];
        Ok(log_sq(self.block_overlap(block, class, x, &mut sweep, &mut reduced)).unwrap_or(LOG_FLOOR))
    }

    fn log_norm(&self, class: usize) -> Result<f64> {
        check_class(class, self.num_classes)?;
        let mut double = DoubleLayer::new(&self.shape);
        let mut total = 0.0;
        for b in 0..self.layout.num_blocks() {
            let z = double.norm(&self.shape, &self.params[self.chunk_range(b, class)]);
            if !(z > 0.0) || !z.is_finite() {
                return Err(Error::Degenerate(format!("block {b} of class {class} has norm {z}")));
            }
            total += z.ln();
        }
        Ok(total)
    }

    fn add_log_norm_grad(&self, weights: &[f64], grad: &mut [f64]) -> Result<()> {
        let mut double = DoubleLayer::new(&self.shape);
        for (class, &w) in weights.iter().enumerate().take(self.num_classes) {
            if w == 0.0 {
                continue;
            }
            for b in 0..self.layout.num_blocks() {
                let range = self.chunk_range(b, class);
                let chunk = &self.params[range.clone()];
                let z = double.norm(&self.shape, chunk);
                if !(z > 0.0) || !z.is_finite() {
                    return Err(Error::Degenerate(format!("block {b} of class {class} has norm {z}")));
                }
                double.backward(w / z, &self.shape, chunk, &mut grad[range]);
            }
        }
        Ok(())
    }

    fn add_score_grad(
        &self,
        x: &ProductState,
        weights: &mut dyn FnMut(&LogScore) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<ScoredSample> {
        check_sites(&self.layout, x)?;
        let mut sweep = Sweep::new(self.shape.clone());
        let mut reduced = vec![0.0; self.shape.total];
        let mut dreduced = vec![0.0; self.shape.total];
        let mut overlaps = Vec::with_capacity(self.layout.num_blocks() * self.num_classes);
        let scored = self.scores_with(x, &mut sweep, &mut reduced, &mut overlaps);
        let w = weights(&scored.scores);
        let sites = x.sites();
        for b in 0..self.layout.num_blocks() {
            for (class, &wc) in w.iter().enumerate().take(self.num_classes) {
                let o = overlaps[b * self.num_classes + class];
                if wc == 0.0 || log_sq(o).is_none() {
                    continue;
                }
                let range = self.chunk_range(b, class);
                self.reduce(&self.params[range.clone()], b, x, &mut reduced);
                sweep.value(&reduced);
                dreduced.iter_mut().for_each(|v| *v = 0.0);
                sweep.backward(2.0 * wc / o, &reduced, &mut dreduced);
                let g = &mut grad[range];
                for (s, &site) in self.layout.blocks[b].iter().enumerate() {
                    let [x0, x1] = sites[site];
                    let len = self.shape.site_len(s);
                    let off = self.shape.offsets[s];
                    for i in 0..len {
                        let d = dreduced[off + i];
                        g[2 * off + i] += x0 * d;
                        g[2 * off + len + i] += x1 * d;
                    }
                }
            }
        }
        Ok(scored)
    }

    fn score(&self, x: &ProductState) -> Result<ScoredSample> {
        check_sites(&self.layout, x)?;
        let mut sweep = Sweep::new(self.shape.clone());
        let mut reduced = vec![0.0; self.shape.total];
        let mut overlaps = Vec::new();
        Ok(self.scores_with(x, &mut sweep, &mut reduced, &mut overlaps))
    }
}
