//! Classifier states `|T_ℓ⟩` and their scoring.
//!
//! Every model scores an embedded image `|x⟩` by the natural log of the
//! squared overlap, `s_ℓ = log |⟨T_ℓ|x⟩|²`. Block product states factorize
//! over the blocks of a [`BlockLayout`], so `s_ℓ` is a sum of per-block terms.

mod grid;
mod nnbps;
mod sbps;
mod sum_state;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

pub use nnbps::NnbpsModel;
pub use sbps::SbpsModel;
pub use sum_state::SumStateModel;

use crate::dataset::BlockLayout;
use crate::embedding::ProductState;
use crate::{Error, Result};

/// Block overlaps with magnitude below this contribute [`LOG_FLOOR`].
pub const OVERLAP_FLOOR: f64 = 1e-300;
/// `log(1e-600)`, rounded; stands in for `log 0` so scores stay finite.
pub const LOG_FLOOR: f64 = -1382.0;

pub const MNIST_CLASSES: usize = 10;

/// `log |v|²` with the floor rule. Returns `None` when floored.
pub(crate) fn log_sq(v: f64) -> Option<f64> {
    let mag = v.abs();
    if mag < OVERLAP_FLOOR || !mag.is_finite() {
        None
    } else {
        Some(2.0 * mag.ln())
    }
}

/// Per-class log squared overlaps of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LogScore(pub Vec<f64>);

impl LogScore {
    pub fn classify(&self) -> usize {
        classify(self)
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

/// Index of the largest score; ties go to the smallest label.
pub fn classify(scores: &LogScore) -> usize {
    let mut best = 0;
    for (k, &s) in scores.0.iter().enumerate().skip(1) {
        if s > scores.0[best] {
            best = k;
        }
    }
    best
}

pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    fn log_overlap(&self, x: &ProductState, class: usize) -> Result<f64>;

    fn log_scores(&self, x: &ProductState) -> Result<LogScore> {
        (0..self.num_classes()).map(|c| self.log_overlap(x, c)).collect::<Result<_>>().map(LogScore)
    }
}

/// Per-sample scores plus the number of block terms that hit the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub scores: LogScore,
    pub floored_blocks: usize,
}

/// A model with a flat real parameter vector and analytic gradients.
pub trait TrainableModel: Classifier {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn layout(&self) -> &BlockLayout;

    /// Parameters that belong to `block` (all classes).
    fn block_param_range(&self, block: usize) -> Range<usize>;

    /// `log |⟨ψ_ℓ^b|x_b⟩|²` for one block, floored.
    fn block_log_overlap(&self, block: usize, x: &ProductState, class: usize) -> Result<f64>;

    /// `log Z_ℓ = log ⟨T_ℓ|T_ℓ⟩`.
    fn log_norm(&self, class: usize) -> Result<f64>;

    /// Adds `Σ_ℓ weights[ℓ] · ∂ log Z_ℓ / ∂θ` into `grad`.
    fn add_log_norm_grad(&self, weights: &[f64], grad: &mut [f64]) -> Result<()>;

    /// Scores `x`, asks `weights` for `∂loss/∂s_ℓ`, then adds
    /// `Σ_ℓ w_ℓ · ∂s_ℓ/∂θ` into `grad`. Floored block terms contribute no gradient.
    fn add_score_grad(
        &self,
        x: &ProductState,
        weights: &mut dyn FnMut(&LogScore) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<ScoredSample>;

    /// Scores plus floor diagnostics.
    fn score(&self, x: &ProductState) -> Result<ScoredSample>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nnbps,
    Sbps,
    /// A product state per class; an NNBPS with 1×1 blocks.
    Product,
    SumState,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nnbps => "nnbps",
            ModelKind::Sbps => "sbps",
            ModelKind::Product => "product",
            ModelKind::SumState => "sumstate",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nnbps" => Ok(ModelKind::Nnbps),
            "sbps" => Ok(ModelKind::Sbps),
            "product" => Ok(ModelKind::Product),
            "sumstate" => Ok(ModelKind::SumState),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Distribution of the raw site-tensor entries before normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitRange {
    /// Uniform on `[−1, 1]`.
    #[default]
    Symmetric,
    /// Uniform on `[0, 1]`. Embedded pixels have non-negative components, so
    /// every initial block overlap is positive and no training image starts
    /// next to a zero of `log |⟨ψ|x⟩|²`.
    Positive,
}

impl InitRange {
    pub(crate) fn low(self) -> f64 {
        match self {
            InitRange::Symmetric => -1.0,
            InitRange::Positive => 0.0,
        }
    }
}

impl fmt::Display for InitRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitRange::Symmetric => "symmetric",
            InitRange::Positive => "positive",
        })
    }
}

impl FromStr for InitRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(InitRange::Symmetric),
            "positive" => Ok(InitRange::Positive),
            other => Err(Error::Config(format!("unknown init range {other:?}"))),
        }
    }
}

/// Knobs beyond kind / layout / chi / seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InitOptions {
    pub num_classes: usize,
    /// SBPS only: dimension of the outer chain bonds, closed by a trace.
    pub edge_bond_dim: usize,
    /// SBPS only: number of snake sites before the label tensor
    /// (defaults to `⌊n²/2⌋`).
    pub label_position: Option<usize>,
    pub range: InitRange,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { num_classes: MNIST_CLASSES, edge_bond_dim: 1, label_position: None, range: InitRange::Symmetric }
    }
}

/// A trainable block product state.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Nnbps(NnbpsModel),
    Sbps(SbpsModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Nnbps(m) if m.layout().n == 1 => ModelKind::Product,
            Model::Nnbps(_) => ModelKind::Nnbps,
            Model::Sbps(_) => ModelKind::Sbps,
        }
    }

    pub fn chi(&self) -> usize {
        match self {
            Model::Nnbps(m) => m.chi(),
            Model::Sbps(m) => m.chi(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Model::Nnbps(m) => m.seed(),
            Model::Sbps(m) => m.seed(),
        }
    }

    fn inner(&self) -> &dyn TrainableModel {
        match self {
            Model::Nnbps(m) => m,
            Model::Sbps(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn TrainableModel {
        match self {
            Model::Nnbps(m) => m,
            Model::Sbps(m) => m,
        }
    }
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }

    fn log_overlap(&self, x: &ProductState, class: usize) -> Result<f64> {
        self.inner().log_overlap(x, class)
    }

    fn log_scores(&self, x: &ProductState) -> Result<LogScore> {
        self.inner().log_scores(x)
    }
}

impl TrainableModel for Model {
    fn params(&self) -> &[f64] {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.inner_mut().params_mut()
    }

    fn layout(&self) -> &BlockLayout {
        self.inner().layout()
    }

    fn block_param_range(&self, block: usize) -> Range<usize> {
        self.inner().block_param_range(block)
    }

    fn block_log_overlap(&self, block: usize, x: &ProductState, class: usize) -> Result<f64> {
        self.inner().block_log_overlap(block, x, class)
    }

    fn log_norm(&self, class: usize) -> Result<f64> {
        self.inner().log_norm(class)
    }

    fn add_log_norm_grad(&self, weights: &[f64], grad: &mut [f64]) -> Result<()> {
        self.inner().add_log_norm_grad(weights, grad)
    }

    fn add_score_grad(
        &self,
        x: &ProductState,
        weights: &mut dyn FnMut(&LogScore) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<ScoredSample> {
        self.inner().add_score_grad(x, weights, grad)
    }

    fn score(&self, x: &ProductState) -> Result<ScoredSample> {
        self.inner().score(x)
    }
}

/// Seeded random initialization, normalized so every class starts with
/// `log Z_ℓ ≈ 0`.
pub fn init_model(kind: ModelKind, layout: BlockLayout, chi: usize, seed: u64) -> Result<Model> {
    init_model_with(kind, layout, chi, seed, &InitOptions::default())
}

pub fn init_model_with(
    kind: ModelKind,
    layout: BlockLayout,
    chi: usize,
    seed: u64,
    options: &InitOptions,
) -> Result<Model> {
    if options.num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", options.num_classes)));
    }
    match kind {
        ModelKind::Nnbps => Ok(Model::Nnbps(NnbpsModel::init_in(layout, chi, options.num_classes, seed, options.range)?)),
        ModelKind::Product => {
            if layout.n != 1 {
                return Err(Error::Config(format!("a product-state model needs 1x1 blocks, got n = {}", layout.n)));
            }
            Ok(Model::Nnbps(NnbpsModel::init_in(layout, 1, options.num_classes, seed, options.range)?))
        }
        ModelKind::Sbps => Ok(Model::Sbps(SbpsModel::init(layout, chi, seed, options)?)),
        ModelKind::SumState => {
            Err(Error::Config("sum-state models are built from training data, not initialized".into()))
        }
    }
}

pub(crate) fn check_sites(layout: &BlockLayout, x: &ProductState) -> Result<()> {
    if x.len() != layout.image_sites() {
        return Err(Error::Dimension(format!(
            "state has {} sites but the layout expects a {}x{} image",
            x.len(),
            layout.image_height,
            layout.image_width
        )));
    }
    Ok(())
}

pub(crate) fn check_class(class: usize, num_classes: usize) -> Result<()> {
    if class >= num_classes {
        return Err(Error::Input(format!("class {class} out of range for {num_classes} classes")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_picks_first_max() {
        let mut s = vec![-1.0; 10];
        s[0] = 0.0;
        assert_eq!(classify(&LogScore(s.clone())), 0);
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.4).collect();
        assert_eq!(classify(&LogScore(shifted)), 0);
        assert_eq!(classify(&LogScore(vec![2.0, 5.0, 5.0])), 1);
    }

    #[test]
    fn floor_rule() {
        assert_eq!(log_sq(0.0), None);
        assert_eq!(log_sq(1e-301), None);
        assert!((log_sq(0.5).unwrap() - 2.0 * 0.5_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for kind in [ModelKind::Nnbps, ModelKind::Sbps, ModelKind::Product, ModelKind::SumState] {
            assert_eq!(kind.to_string().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("mps".parse::<ModelKind>().is_err());
    }
}
