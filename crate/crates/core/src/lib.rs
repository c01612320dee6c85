//! Joint detection and modulation recognition of coexisting RF signals.
//!
//! The crate is organised along the processing chain:
//!
//! * [`sigsynth`] builds multi-signal I/Q scenes with ground truth,
//! * [`tfr`] turns recordings into normalised spectrograms and image pyramids,
//! * [`nncore`] is a small reverse-mode autodiff engine,
//! * [`hifinet`] assembles the detector (low-frequency enhanced backbone,
//!   content-adaptive resampling neck, recombination head),
//! * [`detect`] holds anchors, target assignment, the loss, decoding and NMS,
//! * [`evalkit`] computes AP / mAP / F1 with SNR stratification.

pub mod detect;
pub mod error;
pub mod evalkit;
pub mod hifinet;
pub mod kv;
pub mod nncore;
pub mod sigsynth;
pub mod tfr;

pub use error::{Error, Result};
