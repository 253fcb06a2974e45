//! Source signals, sinc filters and spectral losses for harmonic-plus-noise
//! neural source-filter vocoders, with a small trainable model.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal`]: waveform containers, STFT, up-sampling and level utilities
//! - [`source`]: sine, pulse-train, Gaussian and cyclic-noise excitations
//! - [`sinc`]: the time-variant low-pass / high-pass filter pair
//! - [`loss`]: plain and sine-masked multi-resolution spectral losses
//! - [`model`]: the toy NSF model, its gradients, training and pitch tools
//! - [`io`]: WAV, F0 and feature file formats

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod sinc;
pub mod signal;
pub mod source;

pub use error::{NsfError, Result};
pub use io::F0Track;
pub use signal::{FrameSequence, Waveform};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/sources.md")]
    pub mod sources {}
    #[doc = include_str!("../../../book/src/cyclic-noise.md")]
    pub mod cyclic_noise {}
    #[doc = include_str!("../../../book/src/sinc-filters.md")]
    pub mod sinc_filters {}
    #[doc = include_str!("../../../book/src/losses.md")]
    pub mod losses {}
    #[doc = include_str!("../../../book/src/toy-model.md")]
    pub mod toy_model {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    pub mod file_formats {}
}
