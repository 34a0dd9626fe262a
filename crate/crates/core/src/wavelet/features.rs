//! The modulus → dropout → average-pool → batch-norm feature pipeline and
//! the batched frontend used inside end-to-end models.
//!
//! Memory note: the raw conv responses of a batch (`B × 64 × 30 × 590`) are
//! never materialized. The forward pass streams one window at a time into
//! pooled features, and the backward pass recomputes each window's responses
//! to form kernel gradients (dropout masks are regenerated from per-window
//! seed streams).

use ndarray::{Array2, Array3, Array4, ArrayView2};

use crate::data::Dataset;
use crate::nn::{dropout_forward, BatchNorm, ParamView, Params};
use crate::util::seeded_rng;
use crate::{
    Error, Result, N_CHANNELS, N_TIMESTEPS, N_WAVELETS, WINDOW_SAMPLES, WINDOW_STRIDE,
};

use super::conv::{conv_forward, conv_forward_into, ConvScratch};
use super::{FilterMode, Filterbank};

/// Default dropout rate between modulus and pooling in end-to-end modes.
pub const EXTRACTOR_DROPOUT: f64 = 0.5;

/// Extractor state next to the filterbank: the per-band normalization and
/// the dropout rate (0 disables the layer, as in hand-crafted mode where
/// features are precomputed).
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub bn: BatchNorm,
    pub dropout_rate: f64,
}

impl FeatureExtractor {
    pub fn new(dropout_rate: f64) -> Self {
        FeatureExtractor {
            bn: BatchNorm::new(N_WAVELETS),
            dropout_rate,
        }
    }
}

/// One window's extracted features.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    /// `[64 channels × 15 bands × 10 timesteps]`.
    pub values: Array3<f64>,
}

/// Filterbank + extractor, processing batches of raw windows into features.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub filterbank: Filterbank,
    pub extractor: FeatureExtractor,
}

/// `[B, 64, 15, 10] → [B·64·10, 15]` rows for per-band normalization.
fn to_band_rows(x: &Array4<f64>) -> Array2<f64> {
    let (b, ch, bands, t) = x.dim();
    let mut rows = Array2::zeros((b * ch * t, bands));
    for bi in 0..b {
        for ci in 0..ch {
            for ti in 0..t {
                let row = (bi * ch + ci) * t + ti;
                for m in 0..bands {
                    rows[[row, m]] = x[[bi, ci, m, ti]];
                }
            }
        }
    }
    rows
}

fn from_band_rows(rows: &Array2<f64>, b: usize) -> Array4<f64> {
    let bands = rows.ncols();
    let mut x = Array4::zeros((b, N_CHANNELS, bands, N_TIMESTEPS));
    for bi in 0..b {
        for ci in 0..N_CHANNELS {
            for ti in 0..N_TIMESTEPS {
                let row = (bi * N_CHANNELS + ci) * N_TIMESTEPS + ti;
                for m in 0..bands {
                    x[[bi, ci, m, ti]] = rows[[row, m]];
                }
            }
        }
    }
    x
}

/// Modulus of the paired kernel responses followed by 59-sample average
/// pooling. `raw`: `[64, 30, 590]` → pooled `[64, 15, 10]`. When a dropout
/// mask stream is given, dropout applies between modulus and pooling.
/// Writes the modulus of the paired responses into `modulus`, optionally
/// applies dropout, then average-pools into the returned `[64, 15, 10]`.
/// Every element of `modulus` is overwritten.
fn modulus_pool_into(
    raw: &Array3<f64>,
    dropout_rate: f64,
    mask_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    modulus: &mut Array3<f64>,
) -> Array3<f64> {
    let raw_s = raw.as_slice().expect("contiguous responses");
    {
        let mod_s = modulus.as_slice_mut().expect("contiguous modulus");
        for ch in 0..N_CHANNELS {
            for m in 0..N_WAVELETS {
                let re = &raw_s[(ch * 2 * N_WAVELETS + m) * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
                let im = &raw_s
                    [(ch * 2 * N_WAVELETS + N_WAVELETS + m) * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
                let dst = &mut mod_s[(ch * N_WAVELETS + m) * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
                for t in 0..WINDOW_SAMPLES {
                    dst[t] = (re[t] * re[t] + im[t] * im[t]).sqrt();
                }
            }
        }
    }
    if let Some(rng) = mask_rng {
        dropout_forward(
            modulus.as_slice_mut().expect("contiguous modulus"),
            dropout_rate,
            rng,
        );
    }
    let mod_s = modulus.as_slice().expect("contiguous modulus");
    let mut pooled = Array3::zeros((N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
    let pooled_s = pooled.as_slice_mut().expect("contiguous pooled");
    for cm in 0..N_CHANNELS * N_WAVELETS {
        let src = &mod_s[cm * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
        let dst = &mut pooled_s[cm * N_TIMESTEPS..][..N_TIMESTEPS];
        for (k, chunk) in src.chunks_exact(WINDOW_STRIDE).enumerate() {
            dst[k] = chunk.iter().sum::<f64>() / WINDOW_STRIDE as f64;
        }
    }
    pooled
}

impl Frontend {
    pub fn new(filterbank: Filterbank, dropout_rate: f64) -> Self {
        Frontend {
            filterbank,
            extractor: FeatureExtractor::new(dropout_rate),
        }
    }

    /// Pooled pre-normalization features for one window (no dropout).
    pub fn pooled_single(&self, window: &ArrayView2<'_, f64>) -> Array3<f64> {
        let mut scratch = ConvScratch::new();
        let raw = conv_forward(&self.filterbank, window, &mut scratch);
        let mut modulus = Array3::zeros((N_CHANNELS, N_WAVELETS, WINDOW_SAMPLES));
        modulus_pool_into(&raw, 0.0, None, &mut modulus)
    }

    /// Forward a batch of raw windows. `windows`: `[B, 64, 590]` →
    /// features `[B, 64, 15, 10]`. `step_seed` derives per-window dropout
    /// mask streams; it must be passed identically to [`Frontend::backward`].
    pub fn forward(
        &mut self,
        windows: &Array3<f64>,
        training: bool,
        step_seed: u64,
    ) -> Array4<f64> {
        if self.filterbank.mode == FilterMode::Cfo {
            // Kernels are always exactly the generator output at the current
            // frequencies (they may have been perturbed, e.g. by a
            // finite-difference probe).
            self.filterbank.regenerate_cfo().expect("cfo regeneration");
        }
        let b = windows.dim().0;
        let mut pooled = Array4::zeros((b, N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
        let mut scratch = ConvScratch::new();
        let mut raw = Array3::zeros((N_CHANNELS, 2 * N_WAVELETS, WINDOW_SAMPLES));
        let mut modulus = Array3::zeros((N_CHANNELS, N_WAVELETS, WINDOW_SAMPLES));
        let use_dropout = training && self.extractor.dropout_rate > 0.0;
        for wi in 0..b {
            conv_forward_into(
                &self.filterbank,
                &windows.index_axis(ndarray::Axis(0), wi),
                &mut scratch,
                &mut raw,
            );
            let p = if use_dropout {
                let mut rng = seeded_rng(step_seed, wi as u64);
                modulus_pool_into(&raw, self.extractor.dropout_rate, Some(&mut rng), &mut modulus)
            } else {
                modulus_pool_into(&raw, 0.0, None, &mut modulus)
            };
            pooled.index_axis_mut(ndarray::Axis(0), wi).assign(&p);
        }
        let rows = to_band_rows(&pooled);
        let normed = self.extractor.bn.forward(&rows, training);
        from_band_rows(&normed, b)
    }

    /// Backward through normalization, pooling, dropout, modulus, and the
    /// convolution parameters. Accumulates gradients into the batch-norm and
    /// filterbank buffers. Kernel responses are recomputed per channel, so
    /// no batch-sized intermediate is ever materialized.
    pub fn backward(&mut self, windows: &Array3<f64>, d_features: &Array4<f64>, step_seed: u64) {
        let b = windows.dim().0;
        let d_rows = to_band_rows(d_features);
        let d_pool_rows = self.extractor.bn.backward(&d_rows);
        if !self.filterbank.trainable() {
            return;
        }
        let d_pool = from_band_rows(&d_pool_rows, b);
        let mut scratch = ConvScratch::new();
        let mut d_raw_ch = Array2::zeros((2 * N_WAVELETS, WINDOW_SAMPLES));
        let rate = self.extractor.dropout_rate;
        let mask_len = N_CHANNELS * N_WAVELETS * WINDOW_SAMPLES;
        let mut mask = vec![1u8; mask_len];
        let keep_scale = if rate > 0.0 { 1.0 / (1.0 - rate) } else { 1.0 };
        for wi in 0..b {
            let window = windows.index_axis(ndarray::Axis(0), wi);
            if rate > 0.0 {
                // Regenerate the forward mask from the same stream.
                let mut rng = seeded_rng(step_seed, wi as u64);
                let mut probe = vec![1.0f64; mask_len];
                mask = dropout_forward(&mut probe, rate, &mut rng);
            }
            for ch in 0..N_CHANNELS {
                // Recompute this channel's responses; the im2col buffer is
                // then reused for the weight-gradient GEMM.
                let mut xbuf = [0.0f64; WINDOW_SAMPLES];
                for (t, v) in xbuf.iter_mut().enumerate() {
                    *v = window[[ch, t]];
                }
                scratch.fill_xcol_pub(&xbuf);
                scratch.gemm_forward(&self.filterbank.kernels);
                let ych = scratch.ych_slice();
                {
                    let d_raw_s = d_raw_ch.as_slice_mut().expect("contiguous");
                    let d_pool_w = d_pool.index_axis(ndarray::Axis(0), wi);
                    for m in 0..N_WAVELETS {
                        let bias_re = self.filterbank.biases[m];
                        let bias_im = self.filterbank.biases[N_WAVELETS + m];
                        let re = &ych[m * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
                        let im = &ych[(N_WAVELETS + m) * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
                        let mask_ch =
                            &mask[(ch * N_WAVELETS + m) * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
                        for k in 0..N_TIMESTEPS {
                            // Pooling spreads 1/59 onto each sample of its bin;
                            // the dropout mask gates and rescales it.
                            let g_bin = d_pool_w[[ch, m, k]] / WINDOW_STRIDE as f64;
                            for t in k * WINDOW_STRIDE..(k + 1) * WINDOW_STRIDE {
                                let d_mod = if rate > 0.0 {
                                    if mask_ch[t] == 1 {
                                        g_bin * keep_scale
                                    } else {
                                        0.0
                                    }
                                } else {
                                    g_bin
                                };
                                let re_t = re[t] + bias_re;
                                let im_t = im[t] + bias_im;
                                let norm = (re_t * re_t + im_t * im_t).sqrt();
                                if d_mod != 0.0 && norm > 0.0 {
                                    let g = d_mod / norm;
                                    d_raw_s[m * WINDOW_SAMPLES + t] = g * re_t;
                                    d_raw_s[(N_WAVELETS + m) * WINDOW_SAMPLES + t] = g * im_t;
                                } else {
                                    d_raw_s[m * WINDOW_SAMPLES + t] = 0.0;
                                    d_raw_s[(N_WAVELETS + m) * WINDOW_SAMPLES + t] = 0.0;
                                }
                            }
                        }
                    }
                }
                scratch.accumulate_weight_grad(&d_raw_ch, &mut self.filterbank.grad_kernels);
                for k in 0..2 * N_WAVELETS {
                    self.filterbank.grad_biases[k] += d_raw_ch.row(k).sum();
                }
            }
        }
        self.filterbank
            .fold_cfo_gradient()
            .expect("cfo gradient fold");
    }

    /// Forward from cached pooled features (fixed frontend): only the
    /// normalization runs. `pooled`: `[B, 64, 15, 10]`.
    pub fn forward_pooled(&mut self, pooled: &Array4<f64>, training: bool) -> Array4<f64> {
        let b = pooled.dim().0;
        let rows = to_band_rows(pooled);
        let normed = self.extractor.bn.forward(&rows, training);
        from_band_rows(&normed, b)
    }

    /// Backward counterpart of [`Frontend::forward_pooled`].
    pub fn backward_pooled(&mut self, d_features: &Array4<f64>) {
        let d_rows = to_band_rows(d_features);
        let _ = self.extractor.bn.backward(&d_rows);
    }
}

impl Params for Frontend {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.filterbank.visit_params(prefix, f);
        self.extractor.bn.visit_params(&format!("{prefix}.bn"), f);
    }
}

/// The spec-level single-window feature extraction (evaluation semantics:
/// running normalization statistics, no dropout).
pub fn extract_features(
    frontend: &mut Frontend,
    window: &crate::data::SignalWindow,
) -> Result<FeatureTensor> {
    window.validate()?;
    let mut batch = Array3::zeros((1, N_CHANNELS, WINDOW_SAMPLES));
    for ch in 0..N_CHANNELS {
        for t in 0..WINDOW_SAMPLES {
            batch[[0, ch, t]] = window.samples[[ch, t]] as f64;
        }
    }
    let features = frontend.forward(&batch, false, 0);
    Ok(FeatureTensor {
        values: features.index_axis(ndarray::Axis(0), 0).to_owned(),
    })
}

/// Pooled pre-normalization features for a set of dataset windows, stored
/// f32 to halve the footprint. Valid only while the filterbank is static.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    /// `[n_windows × 9600]`, row-major (channel, band, time).
    pub pooled: Array2<f32>,
    filled: Vec<bool>,
}

impl FeatureCache {
    /// Computes features for `indices` of `dataset` (other rows stay zero).
    pub fn build(frontend: &Frontend, dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        if !frontend.filterbank.is_static() {
            return Err(Error::invalid_config(
                "feature cache requires a fixed filterbank",
            ));
        }
        let dim = N_CHANNELS * N_WAVELETS * N_TIMESTEPS;
        let mut pooled = Array2::zeros((dataset.n_windows(), dim));
        let mut filled = vec![false; dataset.n_windows()];
        let mut window = Array2::zeros((N_CHANNELS, WINDOW_SAMPLES));
        for &i in indices {
            let view = dataset.window_view(i);
            for ch in 0..N_CHANNELS {
                for t in 0..WINDOW_SAMPLES {
                    window[[ch, t]] = view[[ch, t]] as f64;
                }
            }
            let p = frontend.pooled_single(&window.view());
            let mut row = pooled.row_mut(i);
            let flat = p.as_slice().expect("contiguous pooled");
            for (dst, src) in row.iter_mut().zip(flat.iter()) {
                *dst = *src as f32;
            }
            filled[i] = true;
        }
        Ok(FeatureCache { pooled, filled })
    }

    /// Gathers a batch of cached rows as `[B, 64, 15, 10]` (f64).
    pub fn gather(&self, indices: &[usize]) -> Array4<f64> {
        let mut out = Array4::zeros((indices.len(), N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
        for (bi, &i) in indices.iter().enumerate() {
            assert!(self.filled[i], "window {i} missing from feature cache");
            let row = self.pooled.row(i);
            let mut slab = out.index_axis_mut(ndarray::Axis(0), bi);
            let flat = slab.as_slice_mut().expect("contiguous");
            for (dst, src) in flat.iter_mut().zip(row.iter()) {
                *dst = *src as f64;
            }
        }
        out
    }
}

/// Pooled, pre-normalization feature rows of selected windows (f64), used by
/// diagnostics and tests. Row layout matches [`FeatureCache`].
pub fn pooled_feature_rows(
    frontend: &Frontend,
    dataset: &Dataset,
    indices: &[usize],
) -> Array2<f64> {
    let dim = N_CHANNELS * N_WAVELETS * N_TIMESTEPS;
    let mut out = Array2::zeros((indices.len(), dim));
    let mut window = Array2::zeros((N_CHANNELS, WINDOW_SAMPLES));
    for (row_i, &i) in indices.iter().enumerate() {
        let view = dataset.window_view(i);
        for ch in 0..N_CHANNELS {
            for t in 0..WINDOW_SAMPLES {
                window[[ch, t]] = view[[ch, t]] as f64;
            }
        }
        let p = frontend.pooled_single(&window.view());
        let mut row = out.row_mut(row_i);
        for (dst, src) in row.iter_mut().zip(p.as_slice().expect("contiguous")) {
            *dst = *src;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::KERNEL_TAPS;
    use crate::wavelet::build_filterbank;
    use crate::SAMPLE_RATE_HZ;

    fn sin_window(freq: f64) -> Array3<f64> {
        let mut w = Array3::zeros((1, N_CHANNELS, WINDOW_SAMPLES));
        for ch in 0..N_CHANNELS {
            for t in 0..WINDOW_SAMPLES {
                w[[0, ch, t]] = (std::f64::consts::TAU * freq * t as f64 / SAMPLE_RATE_HZ).sin();
            }
        }
        w
    }

    #[test]
    fn feature_shape_is_64x15x10() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut frontend = Frontend::new(fb, 0.0);
        let features = frontend.forward(&sin_window(40.0), false, 0);
        assert_eq!(features.dim(), (1, N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
    }

    #[test]
    fn pooled_features_are_nonnegative() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let frontend = Frontend::new(fb, 0.0);
        let w = sin_window(70.0);
        let pooled = frontend.pooled_single(&w.index_axis(ndarray::Axis(0), 0));
        assert!(pooled.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn stationary_sinusoid_gives_flat_band_profile() {
        // 100 Hz tone: band index 9 pooled moduli equal across interior bins
        // within 2%.
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let frontend = Frontend::new(fb, 0.0);
        let w = sin_window(100.0);
        let pooled = frontend.pooled_single(&w.index_axis(ndarray::Axis(0), 0));
        let bins: Vec<f64> = (1..N_TIMESTEPS - 1).map(|k| pooled[[0, 9, k]]).collect();
        let mean = bins.iter().sum::<f64>() / bins.len() as f64;
        for (k, v) in bins.iter().enumerate() {
            assert!(
                (v - mean).abs() / mean < 0.02,
                "bin {} deviates: {} vs mean {}",
                k + 1,
                v,
                mean
            );
        }
    }

    #[test]
    fn dropout_streams_are_reproducible() {
        let fb = build_filterbank(FilterMode::Free, SAMPLE_RATE_HZ, 0).unwrap();
        let mut a = Frontend::new(fb.clone(), 0.5);
        let mut b = Frontend::new(fb, 0.5);
        let w = sin_window(60.0);
        let fa = a.forward(&w, true, 77);
        let fb_ = b.forward(&w, true, 77);
        assert_eq!(fa, fb_);
        let fc = b.forward(&w, true, 78);
        assert_ne!(fa, fc);
    }

    #[test]
    fn batchnorm_parameter_count_is_30() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let frontend = Frontend::new(fb, 0.0);
        assert_eq!(frontend.extractor.bn.parameter_count(), 30);
    }

    #[test]
    fn kernel_taps_constant_matches() {
        assert_eq!(KERNEL_TAPS, 118);
    }
}
