//! Seq2seq speech synthesis for noisy "found data" at desk scale.
//!
//! The crate builds a fully machine-scorable pipeline around an
//! attention-based acoustic model: a synthetic pseudo-phoneme corpus with
//! controlled acoustic noise (SNR mixing) and textual noise (transcript
//! corruption at a target CER), a VQ codebook branch that compensates
//! erroneous transcripts with phonetic units clustered from speech, an
//! adversarial branch that scrubs noise information from decoder features,
//! and an evaluation battery (CER, DTW-aligned MCD, generation error rate,
//! noise-probe accuracy) in which every number is recomputable from emitted
//! files alone.

pub mod adv;
pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;
pub mod vq;

pub use error::{Error, Result};
