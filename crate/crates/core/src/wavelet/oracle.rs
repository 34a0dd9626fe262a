//! Textbook direct-form CWT used as the independent correctness oracle for
//! the GEMM implementation. Same padding convention (58 left / 59 right,
//! cross-correlation), no shared code with `conv.rs`.

use ndarray::{Array3, ArrayView2};
use num_complex::Complex64;

use crate::{KERNEL_TAPS, N_CHANNELS, N_WAVELETS, WINDOW_SAMPLES};

use super::Filterbank;

/// Triple-loop reference convolution: complex responses `[64 × 15 × 590]`.
pub fn cwt_direct_oracle(fb: &Filterbank, window: &ArrayView2<'_, f64>) -> Array3<Complex64> {
    assert_eq!(window.dim(), (N_CHANNELS, WINDOW_SAMPLES));
    let mut out = Array3::from_elem(
        (N_CHANNELS, N_WAVELETS, WINDOW_SAMPLES),
        Complex64::new(0.0, 0.0),
    );
    for ch in 0..N_CHANNELS {
        for m in 0..N_WAVELETS {
            for t in 0..WINDOW_SAMPLES {
                let mut re = fb.biases[m];
                let mut im = fb.biases[N_WAVELETS + m];
                for j in 0..KERNEL_TAPS {
                    let src = t as isize + j as isize - 58;
                    if src >= 0 && (src as usize) < WINDOW_SAMPLES {
                        let x = window[[ch, src as usize]];
                        re += x * fb.kernels[[m, j]];
                        im += x * fb.kernels[[N_WAVELETS + m, j]];
                    }
                }
                out[[ch, m, t]] = Complex64::new(re, im);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use crate::wavelet::{build_filterbank, cwt_convolve, FilterMode};
    use crate::SAMPLE_RATE_HZ;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn zero_window_is_zero() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let window = Array2::<f64>::zeros((N_CHANNELS, WINDOW_SAMPLES));
        let resp = cwt_direct_oracle(&fb, &window.view());
        assert!(resp.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn matches_gemm_implementation_on_random_window() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut rng = seeded_rng(17, 0);
        let window = Array2::<f64>::from_shape_fn((N_CHANNELS, WINDOW_SAMPLES), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        });
        let fast = cwt_convolve(&fb, &window.view());
        let direct = cwt_direct_oracle(&fb, &window.view());
        let max_resp = direct.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        let max_err = fast
            .iter()
            .zip(direct.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(
            max_err <= 1e-5 * max_resp,
            "max err {max_err} vs max resp {max_resp}"
        );
    }

    #[test]
    fn impulse_extracts_time_reversed_kernel() {
        let fb = build_filterbank(FilterMode::Fixed, SAMPLE_RATE_HZ, 0).unwrap();
        let mut window = Array2::<f64>::zeros((N_CHANNELS, WINDOW_SAMPLES));
        let s = 300usize;
        window[[0, s]] = 1.0;
        let resp = cwt_direct_oracle(&fb, &window.view());
        for m in 0..N_WAVELETS {
            for j in 0..KERNEL_TAPS {
                let t = s + 58 - j;
                let expect = Complex64::new(fb.kernels[[m, j]], fb.kernels[[N_WAVELETS + m, j]]);
                assert!((resp[[0, m, t]] - expect).norm() < 1e-14);
            }
        }
    }
}
