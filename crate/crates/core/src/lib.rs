//! Learning dynamic behaviors from contact sound.
//!
//! The crate covers the whole loop: a procedural contact-sound simulator for
//! five dynamic tasks, a mel-spectrogram front-end, a small reverse-mode
//! autodiff stack with a convolutional encoder, BYOL-style self-supervised
//! pretraining, linear probes and supervised baselines that map sound to
//! action parameters, and evaluation by action MSE and envelope DTW.

pub mod align;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod ssl;
pub mod synth;

pub use error::{Error, Result};

pub use align::{dtw_distance, fit_normalization, normalized_score, DtwResult, NormalizationStats};
pub use dsp::{AudioClip, ChannelStats, Envelope, MelSpectrogram};
pub use nn::{EncoderConfig, Tensor};
pub use synth::{ActionParams, ActionSpec, TaskId};
