//! Block-product-state tensor-network classifiers for pixel images, and exact
//! Schmidt spectra of superpositions of product states.
//!
//! Images are embedded pixel-by-pixel into qubit product states
//! ([`embedding`]). Classifiers assign one state per class and score an image
//! by its log squared overlap with each class state ([`models`]); they are
//! trained with a Born-rule negative log-likelihood and Adam ([`training`]).
//!
//! The [`entanglement`] module computes the Schmidt decomposition of a sum of
//! `N_Σ` product states across an arbitrary bipartition using only the
//! `N_Σ × N_Σ` Gram matrices of the two halves, so the cost is independent of
//! the (exponentially large) Hilbert-space dimension.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod embedding;
pub mod entanglement;
mod error;
mod fsutil;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, IdxError, Result};
