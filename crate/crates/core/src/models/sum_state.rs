use super::{check_class, Classifier, LOG_FLOOR};
use crate::embedding::{LogProduct, ProductState};
use crate::{Error, Result};

/// `|Σ_ℓ⟩ = Σ_{i : y_i = ℓ} |x_i⟩`, stored as the list of its product-state terms.
#[derive(Clone, Debug, PartialEq)]
pub struct SumStateModel {
    classes: Vec<Vec<ProductState>>,
    sites: usize,
}

/// `log |Σ_i (-1)^{s_i} e^{t_i}|` for terms given as log products; `None` if the sum vanishes.
fn log_abs_sum(terms: impl IntoIterator<Item = LogProduct>) -> Option<f64> {
    let terms: Vec<LogProduct> = terms.into_iter().filter(|t| t.zeros == 0).collect();
    let max = terms.iter().map(|t| t.log_magnitude).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let sum: f64 = terms
        .iter()
        .map(|t| {
            let v = (t.log_magnitude - max).exp();
            if t.negative {
                -v
            } else {
                v
            }
        })
        .sum();
    (sum != 0.0).then(|| sum.abs().ln() + max)
}

impl SumStateModel {
    /// Groups labelled states by class. Every class in `0..num_classes` must be non-empty.
    pub fn from_samples<'a>(
        samples: impl IntoIterator<Item = (&'a ProductState, usize)>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut classes = vec![Vec::new(); num_classes];
        let mut sites = None;
        for (state, label) in samples {
            check_class(label, num_classes)?;
            match sites {
                None => sites = Some(state.len()),
                Some(n) if n != state.len() => {
                    return Err(Error::Dimension(format!("states have {n} and {} sites", state.len())));
                }
                _ => {}
            }
            classes[label].push(state.clone());
        }
        if let Some(empty) = classes.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("class {empty} has no training states")));
        }
        Ok(Self { classes, sites: sites.unwrap_or(0) })
    }

    pub fn class_states(&self, class: usize) -> &[ProductState] {
        &self.classes[class]
    }

    pub fn num_sites(&self) -> usize {
        self.sites
    }

    /// Adds one more term to a class.
    pub fn push(&mut self, state: ProductState, class: usize) -> Result<()> {
        check_class(class, self.classes.len())?;
        if state.len() != self.sites {
            return Err(Error::Dimension(format!("expected {} sites, got {}", self.sites, state.len())));
        }
        self.classes[class].push(state);
        Ok(())
    }

    /// `log ⟨Σ_ℓ|Σ_ℓ⟩`, quadratic in the number of terms.
    pub fn log_norm(&self, class: usize) -> Result<f64> {
        check_class(class, self.classes.len())?;
        let states = &self.classes[class];
        let terms = states.iter().flat_map(|a| states.iter().map(move |b| a.log_overlap(b)));
        log_abs_sum(terms).ok_or_else(|| Error::Degenerate(format!("class {class} sums to the zero vector")))
    }
}

impl Classifier for SumStateModel {
    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// `log ⟨Σ_ℓ|x⟩²` by log-sum-exp over the stored terms.
    fn log_overlap(&self, x: &ProductState, class: usize) -> Result<f64> {
        check_class(class, self.classes.len())?;
        if x.len() != self.sites {
            return Err(Error::Dimension(format!("expected {} sites, got {}", self.sites, x.len())));
        }
        Ok(log_abs_sum(self.classes[class].iter().map(|s| s.log_overlap(x))).map_or(LOG_FLOOR, |l| 2.0 * l))
    }
}
