//! Wavelet-feature decoding vs. end-to-end learned temporal filtering for
//! multichannel signal regression.
//!
//! The library covers the full offline pipeline:
//!
//! - [`data`] — the window/target data model, synthetic surrogate signal
//!   generation, dataset persistence, and target perturbation.
//! - [`wavelet`] — complex Morlet filterbanks, the CWT-as-convolution
//!   frontend, the modulus → pool → normalize feature extractor, and
//!   spectral analysis of filters.
//! - [`nn`] — the small set of differentiable layers the decoders are
//!   assembled from (affine, batch norm, dropout, spatial conv, LSTM).
//! - [`decoders`] — the MLP and CNN+LSTM multi-target regression heads and
//!   the end-to-end model combining a filterbank frontend with a head.
//! - [`training`] — cosine loss, decoupled-weight-decay Adam, the training
//!   loop with freeze scheduling and early stopping, and gradient checking.
//! - [`experiments`] — the holdout, dataset-size-sweep, and label-noise
//!   protocols plus filter-drift analysis, with CSV/JSON result emission.

pub mod data;
pub mod decoders;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod training;
pub mod util;
pub mod wavelet;

pub use error::{Error, Result};

/// Sampling frequency of all signals handled by this crate, in Hz.
pub const SAMPLE_RATE_HZ: f64 = 586.0;
/// Channels per window.
pub const N_CHANNELS: usize = 64;
/// Samples per 1-second window.
pub const WINDOW_SAMPLES: usize = 590;
/// Stride between consecutive windows (90% overlap).
pub const WINDOW_STRIDE: usize = 59;
/// Pooled timesteps per window (0.1 s bins).
pub const N_TIMESTEPS: usize = 10;
/// Number of wavelets in a filterbank.
pub const N_WAVELETS: usize = 15;
/// Kernels per filterbank (real and imaginary parts).
pub const N_KERNELS: usize = 2 * N_WAVELETS;
/// Taps per kernel (0.2 s support).
pub const KERNEL_TAPS: usize = 118;
