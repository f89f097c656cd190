//! Twelve-lead ECG abnormality classification.
//!
//! The crate covers the whole pipeline: reading records and labels
//! ([`record_io`]), conditioning signals ([`preprocess`]), the R-peak based
//! bradycardia rule ([`rpeak_rules`]), the Sign Loss ([`sign_loss`]), a
//! small SE-ResNet with hand-written reverse-mode gradients ([`nn`]),
//! two-window ensembling and post-processing ([`ensemble`]) and the
//! reward-matrix challenge score ([`scoring`]). [`synth`] produces
//! deterministic synthetic records for tests and demos, and [`cli`] wires
//! everything into the `ecg-ensemble` command.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod nn;
pub mod preprocess;
pub mod record_io;
pub mod rpeak_rules;
pub mod scoring;
pub mod sign_loss;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
