//! 3×3 spatial convolution over small electrode grids, applied
//! independently to every (batch, implant, timestep) slice.
//!
//! Rows are convolved without padding; columns optionally with one column of
//! zero padding on each side. Implemented as im2col + GEMM.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4};
use rand::Rng;

use super::{init_uniform, visit_pair, visit_pair1, ParamView, Params};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone)]
pub struct SpatialConv {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Zero padding on the column axis (0 or 1); rows are always valid.
    pub pad_cols: usize,
    pub weight: Array2<f64>, // [out_ch, in_ch*9]
    pub bias: Array1<f64>,   // [out_ch]
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    im2col: Array2<f64>, // [slices*h_out*w_out, in_ch*9]
    input_dim: (usize, usize, usize, usize),
}

impl SpatialConv {
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        pad_cols: usize,
    ) -> Self {
        let fan_in = in_channels * KERNEL * KERNEL;
        SpatialConv {
            in_channels,
            out_channels,
            pad_cols,
            weight: init_uniform(rng, (out_channels, fan_in), fan_in),
            bias: Array1::zeros(out_channels),
            grad_weight: Array2::zeros((out_channels, fan_in)),
            grad_bias: Array1::zeros(out_channels),
            cache: None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h - KERNEL + 1, w + 2 * self.pad_cols - KERNEL + 1)
    }

    fn build_im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (slices, in_ch, h, w) = x.dim();
        let (h_out, w_out) = self.out_hw(h, w);
        let cols = in_ch * KERNEL * KERNEL;
        let mut m = Array2::zeros((slices * h_out * w_out, cols));
        let pad = self.pad_cols as isize;
        for s in 0..slices {
            for r0 in 0..h_out {
                for c0 in 0..w_out {
                    let row = (s * h_out + r0) * w_out + c0;
                    let mut col = 0usize;
                    for ic in 0..in_ch {
                        for dr in 0..KERNEL {
                            for dc in 0..KERNEL {
                                let r = r0 + dr;
                                let c = c0 as isize + dc as isize - pad;
                                if c >= 0 && (c as usize) < w {
                                    m[[row, col]] = x[[s, ic, r, c as usize]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// `x`: [slices, in_ch, h, w] → [slices, out_ch, h_out, w_out].
    pub fn forward(&mut self, x: &Array4<f64>, training: bool) -> Array4<f64> {
        let (slices, in_ch, h, w) = x.dim();
        assert_eq!(in_ch, self.in_channels, "conv input channel mismatch");
        let (h_out, w_out) = self.out_hw(h, w);
        let m = self.build_im2col(x);
        let mut y2 = Array2::zeros((m.nrows(), self.out_channels));
        general_mat_mul(1.0, &m, &self.weight.t(), 0.0, &mut y2);
        for mut row in y2.rows_mut() {
            row += &self.bias;
        }
        if training {
            self.cache = Some(Cache {
                im2col: m,
                input_dim: (slices, in_ch, h, w),
            });
        }
        // y2 rows are ordered (slice, r_out, c_out); transpose the channel in.
        let mut y = Array4::zeros((slices, self.out_channels, h_out, w_out));
        for s in 0..slices {
            for r0 in 0..h_out {
                for c0 in 0..w_out {
                    let row = (s * h_out + r0) * w_out + c0;
                    for oc in 0..self.out_channels {
                        y[[s, oc, r0, c0]] = y2[[row, oc]];
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self
            .cache
            .take()
            .expect("SpatialConv::backward without forward");
        let (slices, in_ch, h, w) = cache.input_dim;
        let (_, out_ch, h_out, w_out) = dy.dim();
        assert_eq!(out_ch, self.out_channels);

        let mut dy2 = Array2::zeros((slices * h_out * w_out, out_ch));
        for s in 0..slices {
            for r0 in 0..h_out {
                for c0 in 0..w_out {
                    let row = (s * h_out + r0) * w_out + c0;
                    for oc in 0..out_ch {
                        dy2[[row, oc]] = dy[[s, oc, r0, c0]];
                    }
                }
            }
        }
        general_mat_mul(1.0, &dy2.t(), &cache.im2col, 1.0, &mut self.grad_weight);
        for (oc, col) in dy2.columns().into_iter().enumerate() {
            self.grad_bias[oc] += col.sum();
        }

        let mut dm = Array2::zeros(cache.im2col.dim());
        general_mat_mul(1.0, &dy2, &self.weight, 0.0, &mut dm);

        // col2im: scatter-add back onto the input grid.
        let mut dx = Array4::zeros((slices, in_ch, h, w));
        let pad = self.pad_cols as isize;
        for s in 0..slices {
            for r0 in 0..h_out {
                for c0 in 0..w_out {
                    let row = (s * h_out + r0) * w_out + c0;
                    let mut col = 0usize;
                    for ic in 0..in_ch {
                        for dr in 0..KERNEL {
                            for dc in 0..KERNEL {
                                let r = r0 + dr;
                                let c = c0 as isize + dc as isize - pad;
                                if c >= 0 && (c as usize) < w {
                                    dx[[s, ic, r, c as usize]] += dm[[row, col]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Params for SpatialConv {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        visit_pair(
            format!("{prefix}.weight"),
            &mut self.weight,
            &mut self.grad_weight,
            true,
            f,
        );
        visit_pair1(
            format!("{prefix}.bias"),
            &mut self.bias,
            &mut self.grad_bias,
            false,
            f,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    #[test]
    fn shape_chain_matches_grid() {
        let mut rng = seeded_rng(0, 0);
        let conv1 = SpatialConv::new(&mut rng, 15, 32, 1);
        assert_eq!(conv1.out_hw(8, 4), (6, 4));
        let conv2 = SpatialConv::new(&mut rng, 32, 64, 0);
        assert_eq!(conv2.out_hw(6, 4), (4, 2));
    }

    #[test]
    fn known_counts() {
        let mut rng = seeded_rng(0, 0);
        assert_eq!(SpatialConv::new(&mut rng, 15, 32, 1).parameter_count(), 4352);
        assert_eq!(SpatialConv::new(&mut rng, 32, 64, 0).parameter_count(), 18496);
    }

    #[test]
    fn identity_kernel_with_padding_recovers_input_column() {
        let mut rng = seeded_rng(0, 0);
        let mut conv = SpatialConv::new(&mut rng, 1, 1, 1);
        conv.weight.fill(0.0);
        conv.weight[[0, 4]] = 1.0; // center tap
        conv.bias.fill(0.0);
        let x = Array4::from_shape_fn((1, 1, 4, 3), |(_, _, r, c)| (r * 3 + c) as f64);
        let y = conv.forward(&x, false);
        assert_eq!(y.dim(), (1, 1, 2, 3));
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(y[[0, 0, r, c]], x[[0, 0, r + 1, c]]);
            }
        }
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = seeded_rng(9, 2);
        let mut conv = SpatialConv::new(&mut rng, 2, 3, 1);
        let x = Array4::from_shape_fn((2, 2, 5, 4), |_| rng.random::<f64>() - 0.5);
        let y = conv.forward(&x, true);
        let dx = conv.backward(&y.clone()); // loss = 0.5 Σ y²

        let h = 1e-6;
        let loss = |conv: &mut SpatialConv, x: &Array4<f64>| -> f64 {
            let y = conv.forward(x, false);
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };
        for &(i, j) in &[(0usize, 0usize), (2, 10), (1, 17)] {
            let orig = conv.weight[[i, j]];
            conv.weight[[i, j]] = orig + h;
            let lp = loss(&mut conv, &x);
            conv.weight[[i, j]] = orig - h;
            let lm = loss(&mut conv, &x);
            conv.weight[[i, j]] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (conv.grad_weight[[i, j]] - fd).abs() / fd.abs().max(1e-8) < 1e-4,
                "grad_weight[{i},{j}]"
            );
        }
        let mut xp = x.clone();
        for &idx in &[(0usize, 0usize, 0usize, 0usize), (1, 1, 4, 3), (0, 1, 2, 2)] {
            let orig = xp[idx];
            xp[idx] = orig + h;
            let lp = loss(&mut conv, &xp);
            xp[idx] = orig - h;
            let lm = loss(&mut conv, &xp);
            xp[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((dx[idx] - fd).abs() / fd.abs().max(1e-8) < 1e-4, "dx[{idx:?}]");
        }
    }
}
