//! Single-microphone speech enhancement and separation.
//!
//! The crate covers the complete mask-estimation pipeline (noisy corpus
//! construction, gammatone T-F analysis, feature extraction, a feed-forward
//! mask estimator trained from scratch, masked resynthesis) together with the
//! classical baselines it is usually compared against: spectral subtraction,
//! Wiener filtering, the Gaussian STSA-MMSE estimator, EVD subspace
//! projection and sparse NMF.

pub mod audio;
mod binio;
pub mod classical;
pub mod cli;
pub mod cochlea;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod wav;
pub mod masks;
pub mod mixer;
pub mod neural;
pub mod nmf;
pub mod pipeline;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use signal::{ComplexSpectrogram, FrameConfig, Window};
