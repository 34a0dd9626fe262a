//! Complex Morlet filterbanks: generation, the four training modes, CWT as
//! temporal convolution, feature extraction, and spectral analysis.
//!
//! The generator is
//!
//! ```text
//! Ψ(t, f) = (1/√π) · (1/√(f_s/f)) · e^{-(t f)²} · e^{2iπ t f}
//! ```
//!
//! sampled on 118 taps `t_n = (n - 59)/f_s`, so tap 59 is the designated
//! center (maximum-magnitude) tap of the even-length support.

mod conv;
mod features;
mod oracle;

pub use conv::{conv_backward_params, conv_forward, conv_forward_into, cwt_convolve, ConvScratch};
pub use features::{
    extract_features, pooled_feature_rows, FeatureCache, FeatureExtractor, FeatureTensor,
    Frontend, EXTRACTOR_DROPOUT,
};
pub use oracle::cwt_direct_oracle;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{visit_pair, visit_pair1, ParamView, Params};
use crate::util::seeded_rng;
use crate::{Error, Result, KERNEL_TAPS, N_KERNELS, N_WAVELETS};

/// Center tap index of the even-length support.
pub const CENTER_TAP: usize = 59;
/// Initial central frequencies: 10, 20, …, 150 Hz.
pub fn initial_frequencies() -> Vec<f64> {
    (1..=N_WAVELETS).map(|i| 10.0 * i as f64).collect()
}

/// Frequency box constraint for CFO training.
pub const FREQ_MIN_HZ: f64 = 1.0;

/// Squeeze reparameterization: maps 10–150 Hz onto 0–1.
pub const SQUEEZE_OFFSET_HZ: f64 = 10.0;
pub const SQUEEZE_RANGE_HZ: f64 = 140.0;

/// Parameters of one Morlet wavelet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorletParams {
    /// Central frequency, Hz.
    pub f: f64,
    /// Sampling frequency, Hz.
    pub f_s: f64,
    /// Tap count of the support (even).
    pub support: usize,
}

impl MorletParams {
    pub fn new(f: f64, f_s: f64) -> Self {
        MorletParams {
            f,
            f_s,
            support: KERNEL_TAPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f < self.f_s / 2.0) {
            return Err(Error::invalid_config(format!(
                "central frequency {} Hz outside (0, {})",
                self.f,
                self.f_s / 2.0
            )));
        }
        if self.support == 0 || self.support % 2 != 0 {
            return Err(Error::invalid_config(format!(
                "support {} must be even and positive",
                self.support
            )));
        }
        Ok(())
    }
}

/// Samples the Morlet generator on the tap grid. Coefficient `n` is
/// `Ψ(t_n, f)` with `t_n = (n - 59)/f_s`.
pub fn morlet_coefficients(params: &MorletParams) -> Result<Vec<Complex64>> {
    params.validate()?;
    let amp = (1.0 / std::f64::consts::PI.sqrt()) * (params.f / params.f_s).sqrt();
    Ok((0..params.support)
        .map(|n| {
            let t = (n as f64 - CENTER_TAP as f64) / params.f_s;
            let envelope = (-(t * params.f).powi(2)).exp();
            let phase = std::f64::consts::TAU * t * params.f;
            Complex64::new(
                amp * envelope * phase.cos(),
                amp * envelope * phase.sin(),
            )
        })
        .collect())
}

/// ∂Ψ/∂f on the tap grid: the amplitude, envelope, and carrier all depend on
/// the central frequency.
pub fn morlet_df(params: &MorletParams) -> Result<Vec<Complex64>> {
    params.validate()?;
    let amp = (1.0 / std::f64::consts::PI.sqrt()) * (params.f / params.f_s).sqrt();
    Ok((0..params.support)
        .map(|n| {
            let t = (n as f64 - CENTER_TAP as f64) / params.f_s;
            let envelope = (-(t * params.f).powi(2)).exp();
            let phase = std::f64::consts::TAU * t * params.f;
            let (sin, cos) = phase.sin_cos();
            // d/df [A(f)·G(t,f)] = A·G·(1/(2f) − 2t²f); carrier adds ±2πt.
            let radial = 1.0 / (2.0 * params.f) - 2.0 * t * t * params.f;
            Complex64::new(
                amp * envelope * (cos * radial - std::f64::consts::TAU * t * sin),
                amp * envelope * (sin * radial + std::f64::consts::TAU * t * cos),
            )
        })
        .collect())
}

/// Filterbank training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Morlet kernels, never updated (hand-crafted features).
    Fixed,
    /// Morlet-initialized kernels optimized freely.
    Free,
    /// Uniform-random kernels optimized freely.
    Random,
    /// Central-frequency optimization: only the 15 frequencies train and the
    /// kernels are always regenerated from them.
    Cfo,
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FilterMode::Fixed => "fixed",
            FilterMode::Free => "free",
            FilterMode::Random => "random",
            FilterMode::Cfo => "cfo",
        };
        f.write_str(s)
    }
}

/// 15 complex Morlet filters stored as 30 real kernels (15 real parts then
/// 15 imaginary parts) of 118 taps each.
#[derive(Debug, Clone)]
pub struct Filterbank {
    pub mode: FilterMode,
    pub f_s: f64,
    /// Central frequencies (meaningful in fixed/free-at-init/cfo modes;
    /// empty in random mode).
    pub frequencies: Vec<f64>,
    /// `[30 × 118]`: rows 0..15 real parts, rows 15..30 imaginary parts.
    pub kernels: Array2<f64>,
    pub biases: Array1<f64>,
    /// Kernel updates suppressed (pre-training freeze or fixed mode).
    pub frozen: bool,
    /// CFO squeeze reparameterization: optimize u = (f-10)/140 instead of f.
    pub squeeze: bool,
    /// CFO optimizer-space parameters (f, or u when squeezed).
    pub cfo_params: Vec<f64>,
    pub grad_kernels: Array2<f64>,
    pub grad_biases: Array1<f64>,
    pub grad_cfo: Vec<f64>,
    /// Count of frequency clamps to [1, f_s/2 - 1] during regeneration.
    pub clamp_events: usize,
}

/// Builds a filterbank. Fixed/free/cfo modes initialize the kernels to
/// Morlets at 10..150 Hz; random mode draws kernel weights i.i.d. uniform
/// from ±1/√118. Biases start at zero in every mode.
pub fn build_filterbank(mode: FilterMode, f_s: f64, seed: u64) -> Result<Filterbank> {
    build_filterbank_squeezed(mode, f_s, seed, false)
}

/// [`build_filterbank`] with the CFO squeeze flag.
pub fn build_filterbank_squeezed(
    mode: FilterMode,
    f_s: f64,
    seed: u64,
    squeeze: bool,
) -> Result<Filterbank> {
    if squeeze && mode != FilterMode::Cfo {
        return Err(Error::invalid_config(
            "squeeze reparameterization only applies to cfo mode",
        ));
    }
    let mut fb = Filterbank {
        mode,
        f_s,
        frequencies: Vec::new(),
        kernels: Array2::zeros((N_KERNELS, KERNEL_TAPS)),
        biases: Array1::zeros(N_KERNELS),
        frozen: mode == FilterMode::Fixed,
        squeeze,
        cfo_params: Vec::new(),
        grad_kernels: Array2::zeros((N_KERNELS, KERNEL_TAPS)),
        grad_biases: Array1::zeros(N_KERNELS),
        grad_cfo: Vec::new(),
        clamp_events: 0,
    };
    match mode {
        FilterMode::Random => {
            let mut rng = seeded_rng(seed, 0xF117);
            let bound = 1.0 / (KERNEL_TAPS as f64).sqrt();
            for v in fb.kernels.iter_mut() {
                *v = rng.random::<f64>() * 2.0 * bound - bound;
            }
        }
        _ => {
            fb.frequencies = initial_frequencies();
            write_morlet_kernels(&mut fb)?;
            if mode == FilterMode::Cfo {
                fb.cfo_params = if squeeze {
                    fb.frequencies
                        .iter()
                        .map(|f| (f - SQUEEZE_OFFSET_HZ) / SQUEEZE_RANGE_HZ)
                        .collect()
                } else {
                    fb.frequencies.clone()
                };
                fb.grad_cfo = vec![0.0; N_WAVELETS];
            }
        }
    }
    Ok(fb)
}

fn write_morlet_kernels(fb: &mut Filterbank) -> Result<()> {
    for (m, &f) in fb.frequencies.clone().iter().enumerate() {
        let coeffs = morlet_coefficients(&MorletParams::new(f, fb.f_s))?;
        for (n, c) in coeffs.iter().enumerate() {
            fb.kernels[[m, n]] = c.re;
            fb.kernels[[N_WAVELETS + m, n]] = c.im;
        }
    }
    Ok(())
}

impl Filterbank {
    /// Whether kernel parameters can currently receive optimizer updates.
    pub fn trainable(&self) -> bool {
        self.mode != FilterMode::Fixed && !self.frozen
    }

    /// Whether the kernels are a pure function of construction inputs (so
    /// pooled features can be cached across epochs).
    pub fn is_static(&self) -> bool {
        self.mode == FilterMode::Fixed
    }

    /// Trainable parameter count: 3,570 in free/random mode (30×118 weights
    /// + 30 biases), 15 in cfo mode, 0 in fixed mode.
    pub fn parameter_count(&self) -> usize {
        match self.mode {
            FilterMode::Fixed => 0,
            FilterMode::Free | FilterMode::Random => self.kernels.len() + self.biases.len(),
            FilterMode::Cfo => self.cfo_params.len(),
        }
    }

    /// Current central frequencies in Hz (derived from u in squeeze mode).
    pub fn current_frequencies(&self) -> Vec<f64> {
        if self.mode == FilterMode::Cfo {
            if self.squeeze {
                self.cfo_params
                    .iter()
                    .map(|u| SQUEEZE_OFFSET_HZ + SQUEEZE_RANGE_HZ * u)
                    .collect()
            } else {
                self.cfo_params.clone()
            }
        } else {
            self.frequencies.clone()
        }
    }

    /// Regenerates the kernels from the current central frequencies,
    /// clamping any frequency that drifted outside (0, f_s/2) to
    /// [1, f_s/2 − 1] and counting the clamp. CFO mode only.
    pub fn regenerate_cfo(&mut self) -> Result<()> {
        if self.mode != FilterMode::Cfo {
            return Err(Error::ModeMismatch(
                self.mode.to_string(),
                "cfo".to_string(),
            ));
        }
        let f_max = self.f_s / 2.0 - 1.0;
        for m in 0..N_WAVELETS {
            let f = if self.squeeze {
                SQUEEZE_OFFSET_HZ + SQUEEZE_RANGE_HZ * self.cfo_params[m]
            } else {
                self.cfo_params[m]
            };
            let clamped = f.clamp(FREQ_MIN_HZ, f_max);
            if clamped != f {
                self.clamp_events += 1;
                self.cfo_params[m] = if self.squeeze {
                    (clamped - SQUEEZE_OFFSET_HZ) / SQUEEZE_RANGE_HZ
                } else {
                    clamped
                };
            }
        }
        self.frequencies = self.current_frequencies();
        write_morlet_kernels(self)?;
        Ok(())
    }

    /// Content hash of the kernel state (kernels, biases, cfo parameters);
    /// used to observe freeze/drift behavior across epochs.
    pub fn state_hash(&self) -> String {
        let mut h = crate::util::ContentHash::new();
        for v in self.kernels.iter() {
            h.update(&v.to_le_bytes());
        }
        for v in self.biases.iter() {
            h.update(&v.to_le_bytes());
        }
        for v in &self.cfo_params {
            h.update(&v.to_le_bytes());
        }
        h.finish_hex()
    }

    /// Folds the accumulated kernel gradient into the CFO parameter gradient
    /// by chaining through the Morlet generator. In squeeze mode the chain
    /// rule contributes the extra factor 140 (= the 10–150 Hz range mapped
    /// onto 0–1).
    pub fn fold_cfo_gradient(&mut self) -> Result<()> {
        if self.mode != FilterMode::Cfo {
            return Ok(());
        }
        for m in 0..N_WAVELETS {
            let f = self.frequencies[m];
            let df = morlet_df(&MorletParams::new(f, self.f_s))?;
            let mut g = 0.0;
            for n in 0..KERNEL_TAPS {
                g += self.grad_kernels[[m, n]] * df[n].re
                    + self.grad_kernels[[N_WAVELETS + m, n]] * df[n].im;
            }
            if self.squeeze {
                g *= SQUEEZE_RANGE_HZ;
            }
            self.grad_cfo[m] += g;
        }
        // Kernel grads were only an intermediate in cfo mode.
        self.grad_kernels.fill(0.0);
        Ok(())
    }
}

impl Params for Filterbank {
    /// Kernel parameters are invisible while frozen (fixed mode, or the
    /// pre-training epochs), so the optimizer can neither update nor decay
    /// them and their Adam moments only start accumulating after unfreeze.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        if self.frozen {
            return;
        }
        match self.mode {
            FilterMode::Fixed => {}
            FilterMode::Free | FilterMode::Random => {
                visit_pair(
                    format!("{prefix}.kernels"),
                    &mut self.kernels,
                    &mut self.grad_kernels,
                    true,
                    f,
                );
                visit_pair1(
                    format!("{prefix}.biases"),
                    &mut self.biases,
                    &mut self.grad_biases,
                    false,
                    f,
                );
            }
            FilterMode::Cfo => {
                f(ParamView {
                    name: format!("{prefix}.frequencies"),
                    value: &mut self.cfo_params,
                    grad: &mut self.grad_cfo,
                    // Decaying a physical frequency toward zero is
                    // meaningless; exempt from weight decay.
                    decay: false,
                });
            }
        }
    }
}

/// Magnitude spectrum of a kernel via a zero-padded DFT (≥ 1024 points) and
/// the peak frequency in Hz at `f_s`.
pub fn power_spectrum(kernel: &[f64], f_s: f64) -> Result<(Vec<f64>, f64)> {
    if kernel.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedPeak);
    }
    let n = 1024usize.max(kernel.len().next_power_of_two());
    let half = n / 2;
    let mut spectrum = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        let w = -std::f64::consts::TAU * k as f64 / n as f64;
        for (i, &v) in kernel.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            re += v * c;
            im += v * s;
        }
        spectrum.push((re * re + im * im).sqrt());
    }
    let peak_bin = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok((spectrum, peak_bin as f64 * f_s / n as f64))
}

/// Writes kernels as CSV rows `(filter_index, part, tap_index, value)`.
pub fn export_filter_csv<W: std::io::Write>(fb: &Filterbank, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["filter_index", "part", "tap_index", "value"])?;
    for k in 0..N_KERNELS {
        let (idx, part) = if k < N_WAVELETS {
            (k, "re")
        } else {
            (k - N_WAVELETS, "im")
        };
        for n in 0..KERNEL_TAPS {
            w.write_record([
                idx.to_string(),
                part.to_string(),
                n.to_string(),
                format!("{:.17e}", fb.kernels[[k, n]]),
            ])?;
        }
    }
    w.flush().map_err(crate::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SAMPLE_RATE_HZ;

    #[test]
    fn center_tap_is_purely_real_and_maximal() {
        let p = MorletParams::new(10.0, SAMPLE_RATE_HZ);
        let c = morlet_coefficients(&p).unwrap();
        assert_eq!(c[CENTER_TAP].im, 0.0);
        let center_mag = c[CENTER_TAP].norm();
        for (n, v) in c.iter().enumerate() {
            assert!(v.norm() <= center_mag + 1e-15, "tap {n} exceeds center");
        }
    }

    #[test]
    fn center_value_matches_closed_form() {
        // Ψ(0, f) = (1/√π)(1/√(f_s/f)); for f=10, f_s=586 ≈ 0.0737
        let p = MorletParams::new(10.0, SAMPLE_RATE_HZ);
        let c = morlet_coefficients(&p).unwrap();
        let expected = (1.0 / std::f64::consts::PI.sqrt()) / (SAMPLE_RATE_HZ / 10.0).sqrt();
        assert!((c[CENTER_TAP].re - expected).abs() < 1e-12);
        assert!((expected - 0.0737).abs() < 5e-5);
    }

    #[test]
    fn real_even_imag_odd_about_center() {
        let p = MorletParams::new(70.0, SAMPLE_RATE_HZ);
        let c = morlet_coefficients(&p).unwrap();
        for d in 1..=58usize {
            let a = c[CENTER_TAP - d];
            let b = c[CENTER_TAP + d];
            assert!((a.re - b.re).abs() < 1e-15, "re asymmetric at ±{d}");
            assert!((a.im + b.im).abs() < 1e-15, "im not odd at ±{d}");
        }
    }

    #[test]
    fn rejects_out_of_band_frequencies() {
        assert!(morlet_coefficients(&MorletParams::new(0.0, SAMPLE_RATE_HZ)).is_err());
        assert!(morlet_coefficients(&MorletParams::new(-5.0, SAMPLE_RATE_HZ)).is_err());
        assert!(morlet_coefficients(&MorletParams::new(293.0, SAMPLE_RATE_HZ)).is_err());
    }

    #[test]
    fn morlet_df_matches_finite_difference() {
        let h = 1e-5;
        for f in [10.0, 70.0, 150.0] {
            let d = morlet_df(&MorletParams::new(f, SAMPLE_RATE_HZ)).unwrap();
            let plus = morlet_coefficients(&MorletParams::new(f + h, SAMPLE_RATE_HZ)).unwrap();
            let minus = morlet_coefficients(&MorletParams::new(f - h, SAMPLE_RATE_HZ)).unwrap();
            for n in 0..KERNEL_TAPS {
                let fd_re = (plus[n].re - minus[n].re) / (2.0 * h);
                let fd_im = (plus[n].im - minus[n].im) / (2.0 * h);
                assert!(
                    (d[n].re - fd_re).abs() < 1e-6 * (1.0 + fd_re.abs()),
                    "re tap {n} at {f} Hz"
                );
                assert!(
                    (d[n].im - fd_im).abs() < 1e-6 * (1.0 + fd_im.abs()),
                    "im tap {n} at {f} Hz"
                );
            }
        }
    }

    #[test]
    fn fixed_mode_frequencies_are_the_grid() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let expected: Vec<f64> = (1..=15).map(|i| 10.0 * i as f64).collect();
        assert_eq!(fb.frequencies, expected);
        assert_eq!(fb.parameter_count(), 0);
        assert!(fb.frozen);
    }

    #[test]
    fn free_and_fixed_share_initial_kernels() {
        let fixed = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let free = build_filterbank(FilterMode::Free, SAMPLE_RATE_HZ, 42).unwrap();
        assert_eq!(fixed.kernels, free.kernels);
        assert_eq!(free.parameter_count(), 3570);
    }

    #[test]
    fn random_mode_is_seeded_and_bounded() {
        let a = build_filterbank(FilterMode::Random, SAMPLE_RATE_HZ, 1).unwrap();
        let b = build_filterbank(FilterMode::Random, SAMPLE_RATE_HZ, 1).unwrap();
        let c = build_filterbank(FilterMode::Random, SAMPLE_RATE_HZ, 2).unwrap();
        assert_eq!(a.kernels, b.kernels);
        assert_ne!(a.kernels, c.kernels);
        let bound = 1.0 / (KERNEL_TAPS as f64).sqrt();
        assert!(a.kernels.iter().all(|v| v.abs() <= bound));
        assert!(a.biases.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cfo_parameter_count_is_15() {
        let fb = build_filterbank(FilterMode::Cfo, SAMPLE_RATE_HZ, 0).unwrap();
        assert_eq!(fb.parameter_count(), 15);
    }

    #[test]
    fn cfo_regeneration_is_pure_in_frequencies() {
        let fixed = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut cfo = build_filterbank(FilterMode::Cfo, SAMPLE_RATE_HZ, 0).unwrap();
        cfo.regenerate_cfo().unwrap();
        assert_eq!(fixed.kernels, cfo.kernels);
        assert_eq!(cfo.clamp_events, 0);
    }

    #[test]
    fn cfo_clamps_out_of_band_frequencies() {
        let mut fb = build_filterbank(FilterMode::Cfo, SAMPLE_RATE_HZ, 0).unwrap();
        fb.cfo_params[0] = -3.0;
        fb.cfo_params[14] = 400.0;
        fb.regenerate_cfo().unwrap();
        assert_eq!(fb.clamp_events, 2);
        assert_eq!(fb.frequencies[0], FREQ_MIN_HZ);
        assert_eq!(fb.frequencies[14], SAMPLE_RATE_HZ / 2.0 - 1.0);
    }

    #[test]
    fn squeeze_maps_the_grid_onto_unit_interval() {
        let fb =
            build_filterbank_squeezed(FilterMode::Cfo, SAMPLE_RATE_HZ, 0, true).unwrap();
        assert!((fb.cfo_params[0] - 0.0).abs() < 1e-15);
        assert!((fb.cfo_params[14] - 1.0).abs() < 1e-15);
        let freqs = fb.current_frequencies();
        assert!((freqs[0] - 10.0).abs() < 1e-12);
        assert!((freqs[14] - 150.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_peak_tracks_central_frequency() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        // 50 Hz wavelet = index 4; real part row 4.
        let kernel: Vec<f64> = fb.kernels.row(4).to_vec();
        let (_, peak) = power_spectrum(&kernel, SAMPLE_RATE_HZ).unwrap();
        let resolution = SAMPLE_RATE_HZ / 1024.0;
        assert!((peak - 50.0).abs() <= resolution, "peak {peak}");
    }

    #[test]
    fn spectrum_dc_and_scale_invariance() {
        let (_, peak) = power_spectrum(&vec![1.0; KERNEL_TAPS], SAMPLE_RATE_HZ).unwrap();
        assert_eq!(peak, 0.0);
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let kernel: Vec<f64> = fb.kernels.row(9).to_vec();
        let scaled: Vec<f64> = kernel.iter().map(|v| v * 17.5).collect();
        let (_, p1) = power_spectrum(&kernel, SAMPLE_RATE_HZ).unwrap();
        let (_, p2) = power_spectrum(&scaled, SAMPLE_RATE_HZ).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn spectrum_of_zero_kernel_is_an_error() {
        assert!(matches!(
            power_spectrum(&[0.0; KERNEL_TAPS], SAMPLE_RATE_HZ),
            Err(Error::UndefinedPeak)
        ));
    }

    #[test]
    fn csv_export_has_full_tap_table() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut buf = Vec::new();
        export_filter_csv(&fb, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + N_KERNELS * KERNEL_TAPS);
        assert!(text.lines().nth(1).unwrap().starts_with("0,re,0,"));
    }
}
