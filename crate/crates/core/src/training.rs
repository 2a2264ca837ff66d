//! Born-rule probabilities, losses, gradients, Adam and the training loop.
//!
//! Batch losses are sums over samples. Per-sample terms are computed in
//! parallel over fixed-size chunks and reduced in chunk order, so results do
//! not depend on the number of threads.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Image;
use crate::embedding::{embed_image, ProductState};
use crate::models::{Classifier, LogScore, TrainableModel};
use crate::{Error, Result};

/// Samples per unit of parallel work. Fixed so the reduction order is too.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `Σ_i −log p(y_i) + α Σ_ℓ |log Z_ℓ|`
    #[default]
    Nll,
    /// `½ Σ_i Σ_ℓ (|⟨T_ℓ|x_i⟩| − δ_{ℓ,y_i})²`. Overlaps of many-qubit states are
    /// tiny, so this loss gives vanishing gradients unless the model is small.
    Quadratic,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Nll => "nll",
            LossKind::Quadratic => "quadratic",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(LossKind::Nll),
            "quadratic" => Ok(LossKind::Quadratic),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the log-norm regularizer (NLL only).
    pub alpha: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 100,
            epochs: 10,
            alpha: 1.0,
            seed: 0,
            loss: LossKind::Nll,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be a non-negative number, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("Adam epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be a non-negative number, got {}", self.alpha));
        }
        Ok(())
    }
}

/// An embedded image with its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: ProductState,
    pub label: usize,
}

pub fn embed_samples(images: &[Image]) -> Result<Vec<Sample>> {
    images
        .par_iter()
        .map(|img| Ok(Sample { state: embed_image(img)?, label: img.label as usize }))
        .collect()
}

/// `p_ℓ = e^{s_ℓ} / Σ_k e^{s_k}`, computed after subtracting the largest score.
pub fn born_probabilities(scores: &LogScore) -> Vec<f64> {
    let max = scores.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.0.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// `−log p(label)` from the scores, without forming the probabilities.
fn sample_nll(scores: &LogScore, label: usize) -> f64 {
    let max = scores.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.0.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores.0[label]
}

fn sample_quadratic(scores: &LogScore, label: usize) -> f64 {
    scores
        .0
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let d = (s / 2.0).exp() - if k == label { 1.0 } else { 0.0 };
            0.5 * d * d
        })
        .sum()
}

/// Per-sample loss and `∂loss/∂s_ℓ`.
fn sample_loss_and_weights(kind: LossKind, scores: &LogScore, label: usize) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Nll => {
            let mut w = born_probabilities(scores);
            w[label] -= 1.0;
            (sample_nll(scores, label), w)
        }
        LossKind::Quadratic => {
            let w = scores
                .0
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let o = (s / 2.0).exp();
                    (o - if k == label { 1.0 } else { 0.0 }) * o / 2.0
                })
                .collect();
            (sample_quadratic(scores, label), w)
        }
    }
}

fn check_labels(samples: &[Sample], num_classes: usize) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
        return Err(Error::Input(format!("label {} out of range for {num_classes} classes", s.label)));
    }
    Ok(())
}

fn regularizer<M: TrainableModel + ?Sized>(model: &M, alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for class in 0..model.num_classes() {
        total += model.log_norm(class)?.abs();
    }
    Ok(alpha * total)
}

/// `Σ_i −log p(y_i) + α Σ_ℓ |log Z_ℓ|`.
pub fn nll_loss<M: TrainableModel + ?Sized>(model: &M, batch: &[Sample], alpha: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    check_labels(batch, model.num_classes())?;
    let terms: Vec<f64> =
        batch.par_iter().map(|s| Ok(sample_nll(&model.log_scores(&s.state)?, s.label))).collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() + regularizer(model, alpha)?)
}

/// `½ Σ_i Σ_ℓ (|⟨T_ℓ|x_i⟩| − δ_{ℓ,y_i})²` with `|⟨T_ℓ|x⟩| = e^{s_ℓ/2}`.
pub fn quadratic_loss<C: Classifier + ?Sized>(model: &C, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    check_labels(batch, model.num_classes())?;
    let terms: Vec<f64> = batch
        .par_iter()
        .map(|s| Ok(sample_quadratic(&model.log_scores(&s.state)?, s.label)))
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Batch loss for the configured loss kind.
pub fn loss<M: TrainableModel + ?Sized>(model: &M, batch: &[Sample], config: &TrainConfig) -> Result<f64> {
    match config.loss {
        LossKind::Nll => nll_loss(model, batch, config.alpha),
        LossKind::Quadratic => quadratic_loss(model, batch),
    }
}

/// Batch loss and its gradient with respect to every parameter.
pub fn gradient<M: TrainableModel + ?Sized>(model: &M, batch: &[Sample], config: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    let refs: Vec<&Sample> = batch.iter().collect();
    batch_gradient(model, &refs, config)
}

fn batch_gradient<M: TrainableModel + ?Sized>(
    model: &M,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let num_classes = model.num_classes();
    if let Some(s) = batch.iter().find(|s| s.label >= num_classes) {
        return Err(Error::Input(format!("label {} out of range for {num_classes} classes", s.label)));
    }
    let len = model.params().len();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; len];
            let mut total = 0.0;
            for s in chunk {
                let mut weights = |scores: &LogScore| {
                    let (l, w) = sample_loss_and_weights(config.loss, scores, s.label);
                    total += l;
                    w
                };
                model.add_score_grad(&s.state, &mut weights, &mut grad)?;
            }
            Ok((total, grad))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut grad) = iter.next().expect("batch is non-empty");
    for (l, g) in iter {
        total += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if config.loss == LossKind::Nll && config.alpha > 0.0 {
        let mut signs = Vec::with_capacity(num_classes);
        for class in 0..num_classes {
            let log_z = model.log_norm(class)?;
            total += config.alpha * log_z.abs();
            signs.push(config.alpha * if log_z > 0.0 { 1.0 } else if log_z < 0.0 { -1.0 } else { 0.0 });
        }
        model.add_log_norm_grad(&signs, &mut grad)?;
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        let block = (0..model.layout().num_blocks()).find(|&b| model.block_param_range(b).contains(&k));
        let place = match block {
            Some(b) => format!("parameter {k} (block {b}, offset {})", k - model.block_param_range(b).start),
            None => format!("parameter {k}"),
        };
        return Err(Error::Numerical(format!("non-finite gradient {} at {place}", grad[k])));
    }
    Ok((total, grad))
}

/// Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "Adam got {} parameters, {} gradients and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - config.beta1.powf(state.step as f64);
    let c2 = 1.0 - config.beta2.powf(state.step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Accuracy and mean per-sample loss over a dataset. The loss excludes the
/// regularizer.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_count: Vec<usize>,
    pub sample_count: usize,
    /// Block overlaps that hit the floor, summed over samples and classes.
    pub floored_blocks: usize,
}

/// Scores every sample and reports accuracy under `classify`.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, data: &[Sample], loss: LossKind) -> Result<EvalReport> {
    let num_classes = model.num_classes();
    check_labels(data, num_classes)?;
    let results: Vec<(bool, f64)> = data
        .par_iter()
        .map(|s| {
            let scores = model.log_scores(&s.state)?;
            let l = match loss {
                LossKind::Nll => sample_nll(&scores, s.label),
                LossKind::Quadratic => sample_quadratic(&scores, s.label),
            };
            Ok((scores.classify() == s.label, l))
        })
        .collect::<Result<_>>()?;
    Ok(report(data, &results, num_classes, 0))
}

fn report(data: &[Sample], results: &[(bool, f64)], num_classes: usize, floored_blocks: usize) -> EvalReport {
    let mut correct = vec![0usize; num_classes];
    let mut count = vec![0usize; num_classes];
    let mut total_loss = 0.0;
    for (s, &(ok, l)) in data.iter().zip(results) {
        count[s.label] += 1;
        correct[s.label] += ok as usize;
        total_loss += l;
    }
    let n = data.len();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    EvalReport {
        accuracy: frac(correct.iter().sum(), n),
        loss: if n == 0 { 0.0 } else { total_loss / n as f64 },
        per_class_accuracy: correct.iter().zip(&count).map(|(&c, &k)| frac(c, k)).collect(),
        per_class_count: count,
        sample_count: n,
        floored_blocks,
    }
}

/// Like [`evaluate`], also counting floored block overlaps.
pub fn evaluate_trainable<M: TrainableModel + ?Sized>(model: &M, data: &[Sample], loss: LossKind) -> Result<EvalReport> {
    let num_classes = model.num_classes();
    check_labels(data, num_classes)?;
    let results: Vec<(bool, f64, usize)> = data
        .par_iter()
        .map(|s| {
            let scored = model.score(&s.state)?;
            let l = match loss {
                LossKind::Nll => sample_nll(&scored.scores, s.label),
                LossKind::Quadratic => sample_quadratic(&scored.scores, s.label),
            };
            Ok((scored.scores.classify() == s.label, l, scored.floored_blocks))
        })
        .collect::<Result<_>>()?;
    let floored = results.iter().map(|r| r.2).sum();
    let pairs: Vec<(bool, f64)> = results.iter().map(|r| (r.0, r.1)).collect();
    Ok(report(data, &pairs, num_classes, floored))
}

/// Train/test reports after an epoch; epoch 0 is the initial model.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: EvalReport,
    pub test: Option<EvalReport>,
}

/// Shuffled minibatch Adam. `on_epoch` sees every record (epoch 0 included)
/// and may stop training early.
///
/// If a batch produces a non-finite loss, gradient or parameter, the model is
/// restored to its parameters at the start of that epoch and
/// [`Error::Diverged`] is returned.
pub fn train<M: TrainableModel + ?Sized>(
    model: &mut M,
    train_set: &[Sample],
    test_set: Option<&[Sample]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_labels(train_set, model.num_classes())?;
    let record = |model: &M, epoch: usize| -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            train: evaluate_trainable(model, train_set, config.loss)?,
            test: test_set.map(|t| evaluate_trainable(model, t, config.loss)).transpose()?,
        })
    };
    let mut history = vec![record(model, 0)?];
    if on_epoch(&history[0]).is_break() {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.params().len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let last_good = model.params().to_vec();
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let step = batch_gradient(model, &batch, config).and_then(|(l, g)| {
                if !l.is_finite() {
                    return Err(Error::Numerical(format!("loss is {l}")));
                }
                adam_step(model.params_mut(), &g, &mut adam, config)
            });
            let finite = model.params().iter().all(|p| p.is_finite());
            match step {
                Ok(()) if finite => {}
                Err(e @ (Error::Input(_) | Error::Dimension(_))) => return Err(e),
                _ => {
                    model.params_mut().copy_from_slice(&last_good);
                    return Err(Error::Diverged { epoch, batch: b });
                }
            }
        }
        let rec = record(model, epoch)?;
        if !rec.train.loss.is_finite() {
            model.params_mut().copy_from_slice(&last_good);
            return Err(Error::Diverged { epoch, batch: order.len().div_ceil(config.batch_size) });
        }
        history.push(rec);
        if on_epoch(history.last().expect("just pushed")).is_break() {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn born_probabilities_basics() {
        let p = born_probabilities(&LogScore(vec![-3.0; 10]));
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let mut s = vec![-1382.0; 10];
        s[0] = 0.0;
        let p = born_probabilities(&LogScore(s));
        assert!((p[0] - 1.0).abs() < 1e-15);
        let s = LogScore(vec![-2.0, 0.5, -0.3]);
        let direct: Vec<f64> = s.0.iter().map(|v| v.exp()).collect();
        let z: f64 = direct.iter().sum();
        for (a, b) in born_probabilities(&s).iter().zip(&direct) {
            assert!((a - b / z).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_losses() {
        let uniform = LogScore(vec![0.0; 10]);
        assert!((sample_nll(&uniform, 3) - 10f64.ln()).abs() < 1e-14);
        let dead = LogScore(vec![-1382.0; 10]);
        assert!((sample_quadratic(&dead, 0) - 0.5).abs() < 1e-15);
        let mut onehot = vec![-1382.0; 10];
        onehot[4] = 0.0;
        assert!(sample_quadratic(&LogScore(onehot), 4) < 1e-300);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let config = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let mut p = vec![1.0, 2.0, 3.0];
        let mut state = AdamState::new(3);
        adam_step(&mut p, &[0.5, -2.0, 0.0], &mut state, &config).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] - 2.01).abs() < 1e-8);
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn adam_minimizes_a_scalar_quadratic() {
        let config = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let mut p = vec![5.0];
        let mut state = AdamState::new(1);
        for _ in 0..10_000 {
            let g = 2.0 * (p[0] - 1.5);
            adam_step(&mut p, &[g], &mut state, &config).unwrap();
        }
        assert!((p[0] - 1.5).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!("quadratic".parse::<LossKind>().unwrap(), LossKind::Quadratic);
    }
}
