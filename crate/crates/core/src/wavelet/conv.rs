//! CWT as temporal convolution, implemented as im2col + GEMM per channel.
//!
//! Orientation is cross-correlation with length-preserving zero padding of
//! 58 samples on the left and 59 on the right:
//!
//! ```text
//! y[k, t] = bias[k] + Σ_{j=0}^{117} x[t + j - 58] · w[k, j]
//! ```
//!
//! so a unit impulse at sample `s` produces a time-reversed copy of the
//! kernel: `y[k, t] = w[k, s + 58 - t]`. The direct oracle in
//! [`super::oracle`] implements the same convention with plain loops and no
//! shared code.

use ndarray::{linalg::general_mat_mul, Array2, Array3, ArrayView2};
use num_complex::Complex64;

use crate::{KERNEL_TAPS, N_CHANNELS, N_KERNELS, N_WAVELETS, WINDOW_SAMPLES};

use super::Filterbank;

/// Left zero padding; the right padding is 59.
pub const PAD_LEFT: usize = 58;

/// Reusable per-window scratch so the hot loop allocates nothing.
pub struct ConvScratch {
    /// im2col matrix, `[118 × 590]`: column t holds the padded input patch.
    xcol: Array2<f64>,
    /// One channel's response, `[30 × 590]`.
    ych: Array2<f64>,
}

impl ConvScratch {
    pub fn new() -> Self {
        ConvScratch {
            xcol: Array2::zeros((KERNEL_TAPS, WINDOW_SAMPLES)),
            ych: Array2::zeros((N_KERNELS, WINDOW_SAMPLES)),
        }
    }

    /// Fills the im2col matrix for one channel: `xcol[j, t] = x[t + j - 58]`,
    /// zero outside the window.
    fn fill_xcol(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), WINDOW_SAMPLES);
        let flat = self.xcol.as_slice_mut().expect("contiguous xcol");
        for j in 0..KERNEL_TAPS {
            let row = &mut flat[j * WINDOW_SAMPLES..(j + 1) * WINDOW_SAMPLES];
            let shift = j as isize - PAD_LEFT as isize;
            if shift >= 0 {
                let s = shift as usize;
                let n = WINDOW_SAMPLES - s;
                row[..n].copy_from_slice(&x[s..]);
                row[n..].fill(0.0);
            } else {
                let s = (-shift) as usize;
                row[..s].fill(0.0);
                row[s..].copy_from_slice(&x[..WINDOW_SAMPLES - s]);
            }
        }
    }
}

impl ConvScratch {
    /// Public im2col fill for fused forward/backward passes.
    pub fn fill_xcol_pub(&mut self, x: &[f64]) {
        self.fill_xcol(x);
    }

    /// Runs the kernel GEMM against the current im2col buffer (no bias).
    pub fn gemm_forward(&mut self, kernels: &Array2<f64>) {
        general_mat_mul(1.0, kernels, &self.xcol, 0.0, &mut self.ych);
    }

    /// `[30 × 590]` responses of the last [`ConvScratch::gemm_forward`].
    pub fn ych_slice(&self) -> &[f64] {
        self.ych.as_slice().expect("contiguous ych")
    }

    /// Accumulates `dW += d_out · xcolᵀ` for the channel currently held in
    /// the im2col buffer.
    pub fn accumulate_weight_grad(&self, d_out: &Array2<f64>, grad_kernels: &mut Array2<f64>) {
        general_mat_mul(1.0, d_out, &self.xcol.t(), 1.0, grad_kernels);
    }
}

impl Default for ConvScratch {
    fn default() -> Self {
        Self::new()
    }
}

/// Convolves every channel of one window with every kernel, writing the
/// responses (bias included) into `out`: `[64 × 30 × 590]`. Every element
/// of `out` is overwritten.
pub fn conv_forward_into(
    fb: &Filterbank,
    window: &ArrayView2<'_, f64>,
    scratch: &mut ConvScratch,
    out: &mut Array3<f64>,
) {
    assert_eq!(window.dim(), (N_CHANNELS, WINDOW_SAMPLES));
    assert_eq!(out.dim(), (N_CHANNELS, N_KERNELS, WINDOW_SAMPLES));
    let out_s = out.as_slice_mut().expect("contiguous output");
    let mut xbuf = vec![0.0f64; WINDOW_SAMPLES];
    for ch in 0..N_CHANNELS {
        for (t, v) in xbuf.iter_mut().enumerate() {
            *v = window[[ch, t]];
        }
        scratch.fill_xcol(&xbuf);
        general_mat_mul(1.0, &fb.kernels, &scratch.xcol, 0.0, &mut scratch.ych);
        let ych = scratch.ych.as_slice().expect("contiguous ych");
        let base = ch * N_KERNELS * WINDOW_SAMPLES;
        for k in 0..N_KERNELS {
            let bias = fb.biases[k];
            let dst = &mut out_s[base + k * WINDOW_SAMPLES..base + (k + 1) * WINDOW_SAMPLES];
            let src = &ych[k * WINDOW_SAMPLES..(k + 1) * WINDOW_SAMPLES];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias;
            }
        }
    }
}

/// Allocating wrapper around [`conv_forward_into`].
pub fn conv_forward(
    fb: &Filterbank,
    window: &ArrayView2<'_, f64>,
    scratch: &mut ConvScratch,
) -> Array3<f64> {
    let mut out = Array3::zeros((N_CHANNELS, N_KERNELS, WINDOW_SAMPLES));
    conv_forward_into(fb, window, scratch, &mut out);
    out
}

/// Accumulates kernel and bias gradients for one window given the gradient
/// on the raw conv output. `d_out`: `[64 × 30 × 590]`.
pub fn conv_backward_params(
    window: &ArrayView2<'_, f64>,
    d_out: &Array3<f64>,
    grad_kernels: &mut Array2<f64>,
    grad_biases: &mut ndarray::Array1<f64>,
    scratch: &mut ConvScratch,
) {
    assert_eq!(d_out.dim(), (N_CHANNELS, N_KERNELS, WINDOW_SAMPLES));
    let mut xbuf = vec![0.0f64; WINDOW_SAMPLES];
    for ch in 0..N_CHANNELS {
        for (t, v) in xbuf.iter_mut().enumerate() {
            *v = window[[ch, t]];
        }
        scratch.fill_xcol(&xbuf);
        let d_ch = d_out.index_axis(ndarray::Axis(0), ch);
        // dW[k, j] += Σ_t d[k, t] · xcol[j, t]
        general_mat_mul(1.0, &d_ch, &scratch.xcol.t(), 1.0, grad_kernels);
        for k in 0..N_KERNELS {
            grad_biases[k] += d_ch.row(k).sum();
        }
    }
}

/// The spec-level CWT operation: pairs the real/imaginary kernel responses
/// into complex responses `[64 × 15 × 590]`.
pub fn cwt_convolve(fb: &Filterbank, window: &ArrayView2<'_, f64>) -> Array3<Complex64> {
    let mut scratch = ConvScratch::new();
    let raw = conv_forward(fb, window, &mut scratch);
    let mut out = Array3::from_elem(
        (N_CHANNELS, N_WAVELETS, WINDOW_SAMPLES),
        Complex64::new(0.0, 0.0),
    );
    for ch in 0..N_CHANNELS {
        for m in 0..N_WAVELETS {
            for t in 0..WINDOW_SAMPLES {
                out[[ch, m, t]] = Complex64::new(raw[[ch, m, t]], raw[[ch, N_WAVELETS + m, t]]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use crate::wavelet::{build_filterbank, FilterMode};
    use crate::SAMPLE_RATE_HZ;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn zero_window_gives_zero_response() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let window = Array2::<f64>::zeros((N_CHANNELS, WINDOW_SAMPLES));
        let resp = cwt_convolve(&fb, &window.view());
        assert!(resp.iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn pure_50hz_cosine_peaks_in_band_4() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut window = Array2::<f64>::zeros((N_CHANNELS, WINDOW_SAMPLES));
        for t in 0..WINDOW_SAMPLES {
            let v = (std::f64::consts::TAU * 50.0 * t as f64 / SAMPLE_RATE_HZ).cos();
            window[[0, t]] = v;
        }
        let resp = cwt_convolve(&fb, &window.view());
        // mid-window samples, away from the padding edges
        for &t in &[250usize, 295, 340] {
            let mods: Vec<f64> = (0..N_WAVELETS).map(|m| resp[[0, m, t]].norm()).collect();
            let best = mods
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(best, 4, "at t={t} band {best} beat the 50 Hz band: {mods:?}");
        }
    }

    #[test]
    fn impulse_response_is_time_reversed_kernel() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut window = Array2::<f64>::zeros((N_CHANNELS, WINDOW_SAMPLES));
        let s = 300usize;
        window[[3, s]] = 1.0;
        let mut scratch = ConvScratch::new();
        let raw = conv_forward(&fb, &window.view(), &mut scratch);
        for k in 0..N_KERNELS {
            for j in 0..KERNEL_TAPS {
                let t = s + PAD_LEFT - j; // y[t] = w[s + 58 - t]
                let expect = fb.kernels[[k, j]];
                assert!(
                    (raw[[3, k, t]] - expect).abs() < 1e-14,
                    "kernel {k} tap {j}"
                );
            }
        }
    }

    #[test]
    fn impulse_energy_equals_kernel_energy() {
        // Parseval sanity: response energy of a unit impulse away from the
        // edges equals the kernel energy.
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut window = Array2::<f64>::zeros((N_CHANNELS, WINDOW_SAMPLES));
        window[[0, 300]] = 1.0;
        let mut scratch = ConvScratch::new();
        let raw = conv_forward(&fb, &window.view(), &mut scratch);
        for k in 0..N_KERNELS {
            let kernel_energy: f64 = fb.kernels.row(k).iter().map(|v| v * v).sum();
            let response_energy: f64 = raw
                .index_axis(ndarray::Axis(0), 0)
                .row(k)
                .iter()
                .map(|v| v * v)
                .sum();
            assert!(
                (kernel_energy - response_energy).abs() < 1e-10,
                "kernel {k}: {kernel_energy} vs {response_energy}"
            );
        }
    }

    #[test]
    fn bias_shifts_whole_response() {
        let mut fb = build_filterbank(FilterMode::Free, SAMPLE_RATE_HZ, 0).unwrap();
        fb.biases[7] = 0.25;
        let mut rng = seeded_rng(8, 0);
        let window =
            Array2::<f64>::from_shape_fn((N_CHANNELS, WINDOW_SAMPLES), |_| rng.random::<f64>());
        let mut scratch = ConvScratch::new();
        let with_bias = conv_forward(&fb, &window.view(), &mut scratch);
        fb.biases[7] = 0.0;
        let without = conv_forward(&fb, &window.view(), &mut scratch);
        for t in 0..WINDOW_SAMPLES {
            assert!((with_bias[[5, 7, t]] - without[[5, 7, t]] - 0.25).abs() < 1e-15);
        }
        assert_eq!(with_bias[[5, 6, 100]], without[[5, 6, 100]]);
    }
}
