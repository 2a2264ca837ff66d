use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_class, check_sites, Classifier, InitOptions, LogScore, ScoredSample, TrainableModel, LOG_FLOOR, OVERLAP_FLOOR};
use crate::dataset::BlockLayout;
use crate::embedding::ProductState;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Snake block product state: per block, one matrix product state running
/// through the block in boustrophedon order, shared by all classes, with a
/// single label tensor spliced into the chain.
///
/// Chain tensors are `A[p, left, right]` for sites and `L[class, left, right]`
/// for the label. Interior bonds have dimension `chi`; the two outer bonds have
/// dimension `edge_bond_dim` and are joined by a trace. Per block, parameters
/// are the label tensor followed by the sites in snake order.
#[derive(Clone, Debug, PartialEq)]
pub struct SbpsModel {
    layout: BlockLayout,
    chi: usize,
    num_classes: usize,
    seed: u64,
    edge_bond_dim: usize,
    label_position: usize,
    snake: Vec<usize>,
    bonds: Vec<usize>,
    /// Offset of each site tensor within a block, after the label tensor.
    site_offsets: Vec<usize>,
    label_len: usize,
    block_len: usize,
    params: Vec<f64>,
}

/// Block-local positions `r * n + c` in snake order: even rows left to right,
/// odd rows right to left.
pub fn snake_order(n: usize) -> Vec<usize> {
    (0..n * n)
        .map(|q| {
            let (r, c) = (q / n, q % n);
            if r % 2 == 0 {
                r * n + c
            } else {
                r * n + (n - 1 - c)
            }
        })
        .collect()
}

fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for t in 0..k {
            let v = a[i * k + t];
            if v == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += v * b[t * n + j];
            }
        }
    }
    out
}

fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

/// Divides by the largest magnitude and returns its log (0 if nothing to scale).
fn rescale(v: &mut [f64]) -> f64 {
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m > 0.0 && m.is_finite() {
        v.iter_mut().for_each(|x| *x /= m);
        m.ln()
    } else {
        0.0
    }
}

/// `log |v · e^scale|²` with the floor rule.
fn scaled_log_sq(v: f64, log_scale: f64) -> Option<f64> {
    if v == 0.0 || !v.is_finite() {
        return None;
    }
    let l = v.abs().ln() + log_scale;
    (l >= OVERLAP_FLOOR.ln() && l.is_finite()).then_some(2.0 * l)
}

/// Double-layer environments, one `dim × dim` matrix per pair of outer indices.
#[derive(Clone)]
struct Env {
    mats: Vec<f64>,
    dim: usize,
    log_scale: f64,
}

impl Env {
    fn closure(e: usize) -> Self {
        let mut mats = vec![0.0; e * e * e * e];
        for o in 0..e {
            for o2 in 0..e {
                mats[(o * e + o2) * e * e + o * e + o2] = 1.0;
            }
        }
        Self { mats, dim: e, log_scale: 0.0 }
    }

    fn count(&self) -> usize {
        self.mats.len() / (self.dim * self.dim)
    }

    fn slice(&self, k: usize) -> &[f64] {
        &self.mats[k * self.dim * self.dim..(k + 1) * self.dim * self.dim]
    }

    /// `Σ_p A_pᵀ V A_p` for `ops[p]` of shape `dim × out`.
    fn right(&self, ops: &[&[f64]], out: usize) -> Self {
        let d = self.dim;
        let mut mats = Vec::with_capacity(self.count() * out * out);
        for k in 0..self.count() {
            let mut acc = vec![0.0; out * out];
            for a in ops {
                let va = matmul(self.slice(k), d, d, a, out);
                for i in 0..d {
                    for x in 0..out {
                        let ai = a[i * out + x];
                        if ai == 0.0 {
                            continue;
                        }
                        for y in 0..out {
                            acc[x * out + y] += ai * va[i * out + y];
                        }
                    }
                }
            }
            mats.extend(acc);
        }
        let mut env = Self { mats, dim: out, log_scale: self.log_scale };
        env.log_scale += rescale(&mut env.mats);
        env
    }

    /// `Σ_p A_p W A_pᵀ` for `ops[p]` of shape `out × dim`.
    fn left(&self, ops: &[&[f64]], out: usize) -> Self {
        let d = self.dim;
        let mut mats = Vec::with_capacity(self.count() * out * out);
        for k in 0..self.count() {
            let mut acc = vec![0.0; out * out];
            for a in ops {
                let aw = matmul(a, out, d, self.slice(k), d);
                for x in 0..out {
                    for y in 0..out {
                        let mut s = 0.0;
                        for j in 0..d {
                            s += aw[x * d + j] * a[y * d + j];
                        }
                        acc[x * out + y] += s;
                    }
                }
            }
            mats.extend(acc);
        }
        let mut env = Self { mats, dim: out, log_scale: self.log_scale };
        env.log_scale += rescale(&mut env.mats);
        env
    }

    /// `self += factor · other`, ignoring both log scales.
    fn axpy(&mut self, factor: f64, other: &Self) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += factor * b;
        }
    }

    /// `Σ_k ⟨V_k, W_k⟩` (unscaled parts only).
    fn pair(&self, other: &Self) -> f64 {
        self.mats.iter().zip(&other.mats).map(|(a, b)| a * b).sum()
    }
}

/// Adds `factor · Σ_k (V_k A W_kᵀ + V_kᵀ A W_k)` into `grad` (shape of `a`).
fn bilinear_grad(v: &Env, a: &[f64], w: &Env, factor: f64, grad: &mut [f64]) {
    let (dl, dr) = (v.dim, w.dim);
    for k in 0..v.count() {
        let vk = v.slice(k);
        let wk = w.slice(k);
        let va = matmul(vk, dl, dl, a, dr);
        let mut vta = vec![0.0; dl * dr];
        for i in 0..dl {
            for t in 0..dl {
                let x = vk[t * dl + i];
                if x == 0.0 {
                    continue;
                }
                for j in 0..dr {
                    vta[i * dr + j] += x * a[t * dr + j];
                }
            }
        }
        for i in 0..dl {
            for j in 0..dr {
                let mut s = 0.0;
                for t in 0..dr {
                    s += va[i * dr + t] * wk[j * dr + t] + vta[i * dr + t] * wk[t * dr + j];
                }
                grad[i * dr + j] += factor * s;
            }
        }
    }
}

/// Reduced chain of one block for one image, with partial products kept for
/// the backward pass.
struct Chain {
    mats: Vec<Vec<f64>>,
    /// `pre[q]` is `M_0 ⋯ M_{q-1}` for `q ≤ label_position`.
    pre: Vec<(Vec<f64>, f64)>,
    /// `suf[q]` is `M_q ⋯ M_last` for `q ≥ label_position`.
    suf: Vec<(Vec<f64>, f64)>,
    /// `suf[k] · pre[k]`, indexed `[right bond, left bond]` of the label.
    q: Vec<f64>,
    /// Unscaled per-class overlaps; true overlap is `values[ℓ] · e^log_scale`.
    values: Vec<f64>,
    log_scale: f64,
}

impl SbpsModel {
    fn with_shape(
        layout: BlockLayout,
        chi: usize,
        num_classes: usize,
        seed: u64,
        edge_bond_dim: usize,
        label_position: usize,
    ) -> Result<Self> {
        if chi == 0 || edge_bond_dim == 0 {
            return Err(Error::Config("bond dimensions must be at least 1".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        let sites = layout.block_sites();
        if label_position > sites {
            return Err(Error::Config(format!(
                "label position {label_position} is past the end of a {sites}-site chain"
            )));
        }
        let bonds: Vec<usize> =
            (0..=sites + 1).map(|b| if b == 0 || b == sites + 1 { edge_bond_dim } else { chi }).collect();
        let label_len = num_classes * bonds[label_position] * bonds[label_position + 1];
        let mut site_offsets = Vec::with_capacity(sites);
        let mut offset = label_len;
        for q in 0..sites {
            site_offsets.push(offset);
            let t = if q < label_position { q } else { q + 1 };
            offset += 2 * bonds[t] * bonds[t + 1];
        }
        let params = vec![0.0; layout.num_blocks() * offset];
        Ok(Self {
            snake: snake_order(layout.n),
            layout,
            chi,
            num_classes,
            seed,
            edge_bond_dim,
            label_position,
            bonds,
            site_offsets,
            label_len,
            block_len: offset,
            params,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_params(
        layout: BlockLayout,
        chi: usize,
        num_classes: usize,
        seed: u64,
        edge_bond_dim: usize,
        label_position: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::with_shape(layout, chi, num_classes, seed, edge_bond_dim, label_position)?;
        if params.len() != model.params.len() {
            return Err(Error::Dimension(format!(
                "SBPS expects {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    /// Uniform random tensors. Each block is rescaled so the class-averaged
    /// log-norm is spread evenly over the chain, then every label slice is
    /// rescaled to give its class unit norm.
    pub fn init(layout: BlockLayout, chi: usize, seed: u64, options: &InitOptions) -> Result<Self> {
        let position = options.label_position.unwrap_or(layout.block_sites() / 2);
        let mut model = Self::with_shape(layout, chi, options.num_classes, seed, options.edge_bond_dim, position)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.params.iter_mut().for_each(|v| *v = rng.gen_range(options.range.low()..1.0));
        let tensors = (model.layout.block_sites() + 1) as f64;
        for b in 0..model.layout.num_blocks() {
            let logs = model.block_log_norms(b).map_err(|e| Error::Numerical(format!("initialization: {e}")))?;
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            let factor = (-mean / (2.0 * tensors)).exp();
            let range = model.block_range(b);
            model.params[range].iter_mut().for_each(|v| *v *= factor);
            let logs = model.block_log_norms(b).map_err(|e| Error::Numerical(format!("initialization: {e}")))?;
            let slice = model.label_len / model.num_classes;
            let base = model.block_range(b).start;
            for (class, l) in logs.iter().enumerate() {
                let f = (-l / 2.0).exp();
                model.params[base + class * slice..base + (class + 1) * slice].iter_mut().for_each(|v| *v *= f);
            }
        }
        Ok(model)
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn edge_bond_dim(&self) -> usize {
        self.edge_bond_dim
    }

    /// Number of snake sites before the label tensor.
    pub fn label_position(&self) -> usize {
        self.label_position
    }

    /// Bond dimensions along the chain, outer bonds included.
    pub fn bond_dims(&self) -> &[usize] {
        &self.bonds
    }

    /// Block-local site positions in chain order.
    pub fn snake(&self) -> &[usize] {
        &self.snake
    }

    fn block_range(&self, block: usize) -> Range<usize> {
        block * self.block_len..(block + 1) * self.block_len
    }

    fn label_dims(&self) -> (usize, usize) {
        (self.bonds[self.label_position], self.bonds[self.label_position + 1])
    }

    fn site_dims(&self, q: usize) -> (usize, usize) {
        let t = if q < self.label_position { q } else { q + 1 };
        (self.bonds[t], self.bonds[t + 1])
    }

    /// Label tensor with axes `(class, left, right)`.
    pub fn label_tensor(&self, block: usize) -> DenseTensor {
        let (l, r) = self.label_dims();
        let base = self.block_range(block).start;
        DenseTensor::new(vec![self.num_classes, l, r], self.params[base..base + self.label_len].to_vec())
            .expect("label tensor shape is consistent")
    }

    pub fn label_tensor_mut(&mut self, block: usize) -> &mut [f64] {
        let base = self.block_range(block).start;
        &mut self.params[base..base + self.label_len]
    }

    /// Site tensor at snake position `q`, axes `(physical, left, right)`.
    pub fn site_tensor(&self, block: usize, q: usize) -> DenseTensor {
        let (l, r) = self.site_dims(q);
        let base = self.block_range(block).start + self.site_offsets[q];
        DenseTensor::new(vec![2, l, r], self.params[base..base + 2 * l * r].to_vec())
            .expect("site tensor shape is consistent")
    }

    pub fn site_tensor_mut(&mut self, block: usize, q: usize) -> &mut [f64] {
        let (l, r) = self.site_dims(q);
        let base = self.block_range(block).start + self.site_offsets[q];
        &mut self.params[base..base + 2 * l * r]
    }

    fn label_slice<'a>(&self, block_params: &'a [f64], class: usize) -> &'a [f64] {
        let len = self.label_len / self.num_classes;
        &block_params[class * len..(class + 1) * len]
    }

    fn site_ops<'a>(&self, block_params: &'a [f64], q: usize) -> [&'a [f64]; 2] {
        let (l, r) = self.site_dims(q);
        let off = self.site_offsets[q];
        [&block_params[off..off + l * r], &block_params[off + l * r..off + 2 * l * r]]
    }

    fn chain(&self, block: usize, x: &ProductState) -> Chain {
        let bp = &self.params[self.block_range(block)];
        let sites = x.sites();
        let k = self.label_position;
        let n2 = self.layout.block_sites();
        let e = self.edge_bond_dim;
        let mats: Vec<Vec<f64>> = (0..n2)
            .map(|q| {
                let [x0, x1] = sites[self.layout.blocks[block][self.snake[q]]];
                let [a0, a1] = self.site_ops(bp, q);
                a0.iter().zip(a1).map(|(u, v)| x0 * u + x1 * v).collect()
            })
            .collect();
        let mut pre = Vec::with_capacity(k + 1);
        pre.push((identity(e), 0.0));
        for q in 0..k {
            let (l, r) = self.site_dims(q);
            let (p, s) = &pre[q];
            let mut next = matmul(p, e, l, &mats[q], r);
            let s = s + rescale(&mut next);
            pre.push((next, s));
        }
        let mut suf = vec![(Vec::new(), 0.0); n2 + 1];
        suf[n2] = (identity(e), 0.0);
        for q in (k..n2).rev() {
            let (l, r) = self.site_dims(q);
            let mut next = matmul(&mats[q], l, r, &suf[q + 1].0, e);
            let s = suf[q + 1].1 + rescale(&mut next);
            suf[q] = (next, s);
        }
        let (bl, br) = self.label_dims();
        let q = matmul(&suf[k].0, br, e, &pre[k].0, bl);
        let values = (0..self.num_classes)
            .map(|class| {
                let lab = self.label_slice(bp, class);
                let mut v = 0.0;
                for i in 0..bl {
                    for j in 0..br {
                        v += lab[i * br + j] * q[j * bl + i];
                    }
                }
                v
            })
            .collect();
        let log_scale = pre[k].1 + suf[k].1;
        Chain { mats, pre, suf, q, values, log_scale }
    }

    /// Adds `Σ_ℓ coeffs[ℓ] · ∂ value_ℓ / ∂θ` for one block, where `value_ℓ` is
    /// the unscaled overlap stored in `chain`.
    fn chain_backward(&self, block: usize, x: &ProductState, chain: &Chain, coeffs: &[f64], grad: &mut [f64]) {
        let range = self.block_range(block);
        let bp = &self.params[range.clone()];
        let g = &mut grad[range];
        let k = self.label_position;
        let n2 = self.layout.block_sites();
        let e = self.edge_bond_dim;
        let (bl, br) = self.label_dims();
        let mut gsum = vec![0.0; bl * br];
        let slice = bl * br;
        for (class, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let lab = self.label_slice(bp, class);
            for i in 0..bl {
                for j in 0..br {
                    gsum[i * br + j] += c * lab[i * br + j];
                    g[class * slice + i * br + j] += c * chain.q[j * bl + i];
                }
            }
        }
        let sites = x.sites();
        let site_grad = |q: usize, d: &[f64], factor: f64, g: &mut [f64]| {
            let (l, r) = self.site_dims(q);
            let [x0, x1] = sites[self.layout.blocks[block][self.snake[q]]];
            let off = self.site_offsets[q];
            for a in 0..l {
                for b in 0..r {
                    let dm = factor * d[b * l + a];
                    g[off + a * r + b] += x0 * dm;
                    g[off + l * r + a * r + b] += x1 * dm;
                }
            }
        };
        let mut right = matmul(&gsum, bl, br, &chain.suf[k].0, e);
        let mut s_right = chain.suf[k].1;
        for q in (0..k).rev() {
            let (l, r) = self.site_dims(q);
            let d = matmul(&right, r, e, &chain.pre[q].0, l);
            site_grad(q, &d, (s_right + chain.pre[q].1 - chain.log_scale).exp(), g);
            right = matmul(&chain.mats[q], l, r, &right, e);
            s_right += rescale(&mut right);
        }
        let mut left = matmul(&chain.pre[k].0, e, bl, &gsum, br);
        let mut s_left = chain.pre[k].1;
        for q in k..n2 {
            let (l, r) = self.site_dims(q);
            let d = matmul(&chain.suf[q + 1].0, r, e, &left, l);
            site_grad(q, &d, (s_left + chain.suf[q + 1].1 - chain.log_scale).exp(), g);
            left = matmul(&left, e, l, &chain.mats[q], r);
            s_left += rescale(&mut left);
        }
    }

    /// Left environments at the label's left bond and right environments for
    /// every site right of it (`right[q]` sits on the left bond of site `q`).
    fn norm_envs(&self, bp: &[f64]) -> (Vec<Env>, Vec<Env>) {
        let k = self.label_position;
        let n2 = self.layout.block_sites();
        let mut left = vec![Env::closure(self.edge_bond_dim)];
        for q in 0..k {
            let next = left[q].right(&self.site_ops(bp, q), self.site_dims(q).1);
            left.push(next);
        }
        let mut right = vec![Env::closure(self.edge_bond_dim); n2 + 1];
        for q in (k..n2).rev() {
            right[q] = right[q + 1].left(&self.site_ops(bp, q), self.site_dims(q).0);
        }
        (left, right)
    }

    fn class_log_norms(&self, block: usize, left: &Env, right: &Env, bp: &[f64]) -> Result<Vec<f64>> {
        let br = self.label_dims().1;
        (0..self.num_classes)
            .map(|class| {
                let through = left.right(&[self.label_slice(bp, class)], br);
                let z = through.pair(right);
                if !(z > 0.0) || !z.is_finite() {
                    return Err(Error::Degenerate(format!("block {block} of class {class} has norm {z}")));
                }
                Ok(z.ln() + through.log_scale + right.log_scale)
            })
            .collect()
    }

    fn block_log_norms(&self, block: usize) -> Result<Vec<f64>> {
        let bp = &self.params[self.block_range(block)];
        let (left, right) = self.norm_envs(bp);
        self.class_log_norms(block, &left[self.label_position], &right[self.label_position], bp)
    }

    fn score_sample(&self, x: &ProductState) -> (ScoredSample, Vec<Chain>) {
        let mut scores = vec![0.0; self.num_classes];
        let mut floored_blocks = 0;
        let mut chains = Vec::with_capacity(self.layout.num_blocks());
        for b in 0..self.layout.num_blocks() {
            let chain = self.chain(b, x);
            for (s, &v) in scores.iter_mut().zip(&chain.values) {
                match scaled_log_sq(v, chain.log_scale) {
                    Some(l) => *s += l,
                    None => {
                        *s += LOG_FLOOR;
                        floored_blocks += 1;
                    }
                }
            }
            chains.push(chain);
        }
        (ScoredSample { scores: LogScore(scores), floored_blocks }, chains)
    }
}

impl Classifier for SbpsModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn log_overlap(&self, x: &ProductState, class: usize) -> Result<f64> {
        check_sites(&self.layout, x)?;
        check_class(class, self.num_classes)?;
        Ok((0..self.layout.num_blocks())
            .map(|b| {
                let chain = self.chain(b, x);
                scaled_log_sq(chain.values[class], chain.log_scale).unwrap_or(LOG_FLOOR)
            })
            .sum())
    }

    fn log_scores(&self, x: &ProductState) -> Result<LogScore> {
        self.score(x).map(|s| s.scores)
    }
}

impl TrainableModel for SbpsModel {
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
        self.block_range(block)
    }

    fn block_log_overlap(&self, block: usize, x: &ProductState, class: usize) -> Result<f64> {
        check_sites(&self.layout, x)?;
        check_class(class, self.num_classes)?;
        let chain = self.chain(block, x);
        Ok(scaled_log_sq(chain.values[class], chain.log_scale).unwrap_or(LOG_FLOOR))
    }

    fn log_norm(&self, class: usize) -> Result<f64> {
        check_class(class, self.num_classes)?;
        let mut total = 0.0;
        for b in 0..self.layout.num_blocks() {
            total += self.block_log_norms(b)?[class];
        }
        Ok(total)
    }

    fn add_log_norm_grad(&self, weights: &[f64], grad: &mut [f64]) -> Result<()> {
        let k = self.label_position;
        let n2 = self.layout.block_sites();
        let (bl, br) = self.label_dims();
        let slice = bl * br;
        let weights = &weights[..self.num_classes.min(weights.len())];
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(());
        }
        for b in 0..self.layout.num_blocks() {
            let range = self.block_range(b);
            let bp = &self.params[range.clone()];
            let g = &mut grad[range];
            let (left, right) = self.norm_envs(bp);
            let logs = self.class_log_norms(b, &left[k], &right[k], bp)?;
            let mut agg_right = Env { mats: vec![0.0; right[k].mats.len() / (br * br) * bl * bl], dim: bl, log_scale: 0.0 };
            let mut agg_left = Env { mats: vec![0.0; left[k].mats.len() / (bl * bl) * br * br], dim: br, log_scale: 0.0 };
            for (class, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let lab = self.label_slice(bp, class);
                let factor = w * (left[k].log_scale + right[k].log_scale - logs[class]).exp();
                bilinear_grad(&left[k], lab, &right[k], factor, &mut g[class * slice..(class + 1) * slice]);
                let back = right[k].left(&[lab], bl);
                agg_right.axpy(w * (back.log_scale - logs[class]).exp(), &back);
                let fwd = left[k].right(&[lab], br);
                agg_left.axpy(w * (fwd.log_scale - logs[class]).exp(), &fwd);
            }
            agg_right.log_scale += rescale(&mut agg_right.mats);
            agg_left.log_scale += rescale(&mut agg_left.mats);
            for q in (0..k).rev() {
                let (l, r) = self.site_dims(q);
                let off = self.site_offsets[q];
                let factor = (left[q].log_scale + agg_right.log_scale).exp();
                let ops = self.site_ops(bp, q);
                for (p, a) in ops.iter().enumerate() {
                    bilinear_grad(&left[q], a, &agg_right, factor, &mut g[off + p * l * r..off + (p + 1) * l * r]);
                }
                agg_right = agg_right.left(&ops, l);
            }
            for q in k..n2 {
                let (l, r) = self.site_dims(q);
                let off = self.site_offsets[q];
                let factor = (agg_left.log_scale + right[q + 1].log_scale).exp();
                let ops = self.site_ops(bp, q);
                for (p, a) in ops.iter().enumerate() {
                    bilinear_grad(&agg_left, a, &right[q + 1], factor, &mut g[off + p * l * r..off + (p + 1) * l * r]);
                }
                agg_left = agg_left.right(&ops, r);
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
        let (scored, chains) = self.score_sample(x);
        let w = weights(&scored.scores);
        for (b, chain) in chains.iter().enumerate() {
            let coeffs: Vec<f64> = chain
                .values
                .iter()
                .zip(&w)
                .map(|(&v, &wc)| {
                    if wc == 0.0 || scaled_log_sq(v, chain.log_scale).is_none() {
                        0.0
                    } else {
                        2.0 * wc / v
                    }
                })
                .collect();
            if coeffs.iter().any(|&c| c != 0.0) {
                self.chain_backward(b, x, chain, &coeffs, grad);
            }
        }
        Ok(scored)
    }

    fn score(&self, x: &ProductState) -> Result<ScoredSample> {
        check_sites(&self.layout, x)?;
        Ok(self.score_sample(x).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tile;
    use crate::embedding::embed_pixel;
    use crate::models::InitRange;

    fn state(pixels: &[f64]) -> ProductState {
        ProductState::new(pixels.iter().map(|&p| embed_pixel(p).unwrap()).collect()).unwrap()
    }

    #[test]
    fn snake_orders() {
        assert_eq!(snake_order(2), vec![0, 1, 3, 2]);
        assert_eq!(snake_order(3), vec![0, 1, 2, 5, 4, 3, 6, 7, 8]);
    }

    #[test]
    fn identity_chain_scores_zero() {
        let layout = tile((2, 2), 2).unwrap();
        let mut m = SbpsModel::from_params(layout, 1, 2, 0, 1, 2, vec![0.0; 2 + 4 * 2]).unwrap();
        m.label_tensor_mut(0).copy_from_slice(&[1.0, 1.0]);
        for q in 0..4 {
            m.site_tensor_mut(0, q).copy_from_slice(&[1.0, 0.0]);
        }
        let white = state(&[0.0; 4]);
        assert!(m.log_overlap(&white, 0).unwrap().abs() < 1e-15);
        assert!(m.log_norm(1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn init_normalizes_every_class() {
        for (n, chi, edge) in [(2, 3, 1), (3, 2, 2), (4, 6, 1)] {
            let layout = tile((8, 8), n).unwrap();
            let options = InitOptions { num_classes: 4, edge_bond_dim: edge, ..InitOptions::default() };
            let m = SbpsModel::init(layout, chi, 5, &options).unwrap();
            for class in 0..4 {
                assert!(m.log_norm(class).unwrap().abs() < 1e-9, "n={n} chi={chi}");
            }
        }
    }

    #[test]
    fn positive_init_has_no_negative_entries() {
        let options = InitOptions { num_classes: 4, range: InitRange::Positive, ..InitOptions::default() };
        let m = SbpsModel::init(tile((8, 8), 4).unwrap(), 3, 5, &options).unwrap();
        assert!(m.params.iter().all(|&v| v >= 0.0));
        for class in 0..4 {
            assert!(m.log_norm(class).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_shifts_overlap_and_norm() {
        let layout = tile((4, 4), 2).unwrap();
        let options = InitOptions { num_classes: 3, ..InitOptions::default() };
        let mut m = SbpsModel::init(layout, 3, 2, &options).unwrap();
        let x = state(&[0.1, 0.9, 0.4, 0.6, 0.0, 1.0, 0.5, 0.2, 0.7, 0.3, 0.8, 0.05, 0.95, 0.45, 0.55, 0.65]);
        let (o, z) = (m.log_overlap(&x, 2).unwrap(), m.log_norm(2).unwrap());
        m.site_tensor_mut(3, 1).iter_mut().for_each(|v| *v *= 0.5);
        assert!((m.log_overlap(&x, 2).unwrap() - o - 2.0 * 0.5_f64.ln()).abs() < 1e-10);
        assert!((m.log_norm(2).unwrap() - z - 2.0 * 0.5_f64.ln()).abs() < 1e-10);
    }
}
