//! Transform-learning NMF.
//!
//! Jointly estimates a square orthogonal short-time transform `Phi` and a nonnegative
//! factorization `|Phi Y|^2 ≈ WH` under the Itakura-Saito divergence with an l1 penalty
//! on the activations. A supervised variant learns `Phi` together with the activations
//! of fixed speech/noise dictionaries and separates a mixture by Wiener filtering.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod csvio;
pub mod driver;
pub mod error;
pub mod fixtures;
pub mod manifold;
pub mod metrics;
pub mod objective;
pub mod signal;
pub mod supervised;
pub mod transform;
pub mod updates;

pub use error::{Result, TlnmfError};
pub use objective::{Hyperparams, SupervisedHyperparams};
pub use signal::{FrameMatrix, FramingConfig, Signal, Window};
pub use supervised::{SeparationResult, TrainingSet};
pub use transform::{Floor, OrthoTransform, Spectrogram};
pub use updates::Factorization;
