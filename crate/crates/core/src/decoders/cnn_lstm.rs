//! CNN+LSTM multi-target head: per-implant 3×3 spatial convolutions shared
//! across both implants and all timesteps, then two stacked LSTM layers
//! emitting one 3-vector per 0.1 s timestep.
//!
//! Shape chain per implant: [15, 8, 4] → conv (rows valid, cols padded 1)
//! → [32, 6, 4] → conv (valid) → [64, 4, 2]; both implants concatenated and
//! flattened per timestep give the length-1024 LSTM input.

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::GridLayout;
use crate::nn::{
    dropout_backward, dropout_forward, BatchNorm, Lstm, ParamView, Params, SpatialConv,
};
use crate::{N_CHANNELS, N_TIMESTEPS, N_WAVELETS};

pub const N_IMPLANTS: usize = 2;
pub const GRID_ROWS: usize = 8;
pub const GRID_COLS: usize = 4;
pub const CONV1_CH: usize = 32;
pub const CONV2_CH: usize = 64;
/// Per-timestep LSTM input: both implants' [64, 4, 2] maps flattened.
pub const LSTM_INPUT: usize = N_IMPLANTS * CONV2_CH * 4 * 2;
pub const LSTM1_HIDDEN: usize = 50;
pub const LSTM2_HIDDEN: usize = 3;

#[derive(Debug, Clone)]
pub struct CnnLstmMtDecoder {
    pub grid: GridLayout,
    pub conv1: SpatialConv,
    pub bn: BatchNorm,
    pub conv2: SpatialConv,
    pub lstm1: Lstm,
    pub lstm2: Lstm,
    pub dropout_rate: f64,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    relu1: Array4<f64>,
    relu2: Array4<f64>,
    mask1: Vec<u8>,
    mask2: Vec<u8>,
    batch: usize,
    training: bool,
}

/// [slices, ch, h, w] → rows (slice, r, c) × ch for per-channel batch norm.
fn to_channel_rows(x: &Array4<f64>) -> Array2<f64> {
    let (s, ch, h, w) = x.dim();
    let mut rows = Array2::zeros((s * h * w, ch));
    for si in 0..s {
        for r in 0..h {
            for c in 0..w {
                let row = (si * h + r) * w + c;
                for k in 0..ch {
                    rows[[row, k]] = x[[si, k, r, c]];
                }
            }
        }
    }
    rows
}

fn from_channel_rows(rows: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (s, ch, h, w) = dim;
    let mut x = Array4::zeros(dim);
    for si in 0..s {
        for r in 0..h {
            for c in 0..w {
                let row = (si * h + r) * w + c;
                for k in 0..ch {
                    x[[si, k, r, c]] = rows[[row, k]];
                }
            }
        }
    }
    x
}

impl CnnLstmMtDecoder {
    pub fn new(rng: &mut impl Rng, dropout_rate: f64) -> Self {
        CnnLstmMtDecoder {
            grid: GridLayout::default_layout(),
            conv1: SpatialConv::new(rng, N_WAVELETS, CONV1_CH, 1),
            bn: BatchNorm::new(CONV1_CH),
            conv2: SpatialConv::new(rng, CONV1_CH, CONV2_CH, 0),
            lstm1: Lstm::new(rng, LSTM_INPUT, LSTM1_HIDDEN),
            lstm2: Lstm::new(rng, LSTM1_HIDDEN, LSTM2_HIDDEN),
            dropout_rate,
            cache: None,
        }
    }

    /// Rearranges features [B, 64, 15, 10] onto the implant grids:
    /// [B·2·10 slices, 15 bands, 8 rows, 4 cols]. Slice index is
    /// `((b·2 + implant)·10 + t)`.
    fn features_to_grid(&self, features: &Array4<f64>) -> Array4<f64> {
        let b = features.dim().0;
        let mut grid = Array4::zeros((b * N_IMPLANTS * N_TIMESTEPS, N_WAVELETS, GRID_ROWS, GRID_COLS));
        for bi in 0..b {
            for ch in 0..N_CHANNELS {
                let (implant, row, col) = self.grid.position(ch);
                for band in 0..N_WAVELETS {
                    for t in 0..N_TIMESTEPS {
                        let slice = (bi * N_IMPLANTS + implant) * N_TIMESTEPS + t;
                        grid[[slice, band, row, col]] = features[[bi, ch, band, t]];
                    }
                }
            }
        }
        grid
    }

    fn grid_to_features(&self, grid: &Array4<f64>, b: usize) -> Array4<f64> {
        let mut features = Array4::zeros((b, N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
        for bi in 0..b {
            for ch in 0..N_CHANNELS {
                let (implant, row, col) = self.grid.position(ch);
                for band in 0..N_WAVELETS {
                    for t in 0..N_TIMESTEPS {
                        let slice = (bi * N_IMPLANTS + implant) * N_TIMESTEPS + t;
                        features[[bi, ch, band, t]] = grid[[slice, band, row, col]];
                    }
                }
            }
        }
        features
    }

    /// Flattens conv2 output into the per-timestep LSTM sequence:
    /// element order (implant, channel, row, col).
    fn to_sequence(&self, x: &Array4<f64>, b: usize) -> Array3<f64> {
        let mut seq = Array3::zeros((b, N_TIMESTEPS, LSTM_INPUT));
        for bi in 0..b {
            for implant in 0..N_IMPLANTS {
                for t in 0..N_TIMESTEPS {
                    let slice = (bi * N_IMPLANTS + implant) * N_TIMESTEPS + t;
                    for ch in 0..CONV2_CH {
                        for r in 0..4 {
                            for c in 0..2 {
                                let idx = implant * (CONV2_CH * 8) + ch * 8 + r * 2 + c;
                                seq[[bi, t, idx]] = x[[slice, ch, r, c]];
                            }
                        }
                    }
                }
            }
        }
        seq
    }

    fn from_sequence(&self, seq: &Array3<f64>, slices: usize) -> Array4<f64> {
        let b = seq.dim().0;
        let mut x = Array4::zeros((slices, CONV2_CH, 4, 2));
        for bi in 0..b {
            for implant in 0..N_IMPLANTS {
                for t in 0..N_TIMESTEPS {
                    let slice = (bi * N_IMPLANTS + implant) * N_TIMESTEPS + t;
                    for ch in 0..CONV2_CH {
                        for r in 0..4 {
                            for c in 0..2 {
                                let idx = implant * (CONV2_CH * 8) + ch * 8 + r * 2 + c;
                                x[[slice, ch, r, c]] = seq[[bi, t, idx]];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// `features`: [B, 64, 15, 10] → per-timestep predictions [B, 10, 3].
    pub fn forward(
        &mut self,
        features: &Array4<f64>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Array3<f64> {
        let b = features.dim().0;
        let grid = self.features_to_grid(features);
        let mut c1 = self.conv1.forward(&grid, training);
        c1.mapv_inplace(|v| v.max(0.0));
        let relu1 = c1;
        let rows = to_channel_rows(&relu1);
        let n1 = self.bn.forward(&rows, training);
        let mut d1 = from_channel_rows(&n1, relu1.dim());
        let mask1 = if training {
            dropout_forward(
                d1.as_slice_mut().expect("contiguous"),
                self.dropout_rate,
                rng,
            )
        } else {
            Vec::new()
        };
        let mut c2 = self.conv2.forward(&d1, training);
        c2.mapv_inplace(|v| v.max(0.0));
        let relu2 = c2;
        let mut d2 = relu2.clone();
        let mask2 = if training {
            dropout_forward(
                d2.as_slice_mut().expect("contiguous"),
                self.dropout_rate,
                rng,
            )
        } else {
            Vec::new()
        };
        let seq = self.to_sequence(&d2, b);
        let h1 = self.lstm1.forward(&seq, training);
        let y = self.lstm2.forward(&h1, training);
        if training {
            self.cache = Some(Cache {
                relu1,
                relu2,
                mask1,
                mask2,
                batch: b,
                training,
            });
        }
        y
    }

    /// `d_pred`: [B, 10, 3] → gradient on the features [B, 64, 15, 10].
    pub fn backward(&mut self, d_pred: &Array3<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("CnnLstmMtDecoder::backward");
        let dh1 = self.lstm2.backward(d_pred);
        let dseq = self.lstm1.backward(&dh1);
        let slices = cache.batch * N_IMPLANTS * N_TIMESTEPS;
        let mut dd2 = self.from_sequence(&dseq, slices);
        if cache.training && !cache.mask2.is_empty() {
            dropout_backward(
                dd2.as_slice_mut().expect("contiguous"),
                &cache.mask2,
                self.dropout_rate,
            );
        }
        ndarray::Zip::from(&mut dd2)
            .and(&cache.relu2)
            .for_each(|d, &v| {
                if v <= 0.0 {
                    *d = 0.0;
                }
            });
        let mut dd1 = self.conv2.backward(&dd2);
        if cache.training && !cache.mask1.is_empty() {
            dropout_backward(
                dd1.as_slice_mut().expect("contiguous"),
                &cache.mask1,
                self.dropout_rate,
            );
        }
        let d_rows = to_channel_rows(&dd1);
        let dn1 = self.bn.backward(&d_rows);
        let mut dr1 = from_channel_rows(&dn1, cache.relu1.dim());
        ndarray::Zip::from(&mut dr1)
            .and(&cache.relu1)
            .for_each(|d, &v| {
                if v <= 0.0 {
                    *d = 0.0;
                }
            });
        let dgrid = self.conv1.backward(&dr1);
        self.grid_to_features(&dgrid, cache.batch)
    }

    pub fn parameter_table(&self) -> Vec<(String, usize)> {
        vec![
            ("conv1".into(), self.conv1.parameter_count()),
            ("batchnorm".into(), self.bn.parameter_count()),
            ("conv2".into(), self.conv2.parameter_count()),
            ("lstm1".into(), self.lstm1.parameter_count()),
            ("lstm2".into(), self.lstm2.parameter_count()),
        ]
    }
}

impl Params for CnnLstmMtDecoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn.visit_params(&format!("{prefix}.bn"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.lstm1.visit_params(&format!("{prefix}.lstm1"), f);
        self.lstm2.visit_params(&format!("{prefix}.lstm2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    #[test]
    fn table_counts() {
        let mut rng = seeded_rng(0, 0);
        let head = CnnLstmMtDecoder::new(&mut rng, 0.5);
        let table = head.parameter_table();
        assert_eq!(table[0].1, 4_352);
        assert_eq!(table[1].1, 64);
        assert_eq!(table[2].1, 18_496);
        assert_eq!(table[3].1, 215_200);
        assert_eq!(table[4].1, 660);
        let total: usize = table.iter().map(|(_, n)| n).sum();
        assert_eq!(total, 238_772);
    }

    #[test]
    fn forward_emits_ten_steps() {
        let mut rng = seeded_rng(0, 1);
        let mut head = CnnLstmMtDecoder::new(&mut rng, 0.5);
        let features =
            Array4::from_shape_fn((3, N_CHANNELS, N_WAVELETS, N_TIMESTEPS), |_| {
                rng.random::<f64>()
            });
        let mut mask_rng = seeded_rng(1, 0);
        let y = head.forward(&features, false, &mut mask_rng);
        assert_eq!(y.dim(), (3, N_TIMESTEPS, 3));
    }

    #[test]
    fn implants_share_conv_weights() {
        // Identical inputs on both implant grids must give identical
        // activations, and perturbing conv1 changes both identically.
        let mut rng = seeded_rng(2, 0);
        let mut head = CnnLstmMtDecoder::new(&mut rng, 0.0);
        // Feature tensor symmetric across implants: channel c and c+32 get
        // the same values.
        let mut features = Array4::zeros((1, N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
        for ch in 0..32 {
            for band in 0..N_WAVELETS {
                for t in 0..N_TIMESTEPS {
                    let v = ((ch * 31 + band * 7 + t) % 13) as f64 / 13.0;
                    features[[0, ch, band, t]] = v;
                    features[[0, ch + 32, band, t]] = v;
                }
            }
        }
        let grid = head.features_to_grid(&features);
        let c1 = head.conv1.forward(&grid, false);
        // slice 0..10 implant 0, 10..20 implant 1 (batch of 1)
        for t in 0..N_TIMESTEPS {
            for ch in 0..CONV1_CH {
                for r in 0..6 {
                    for c in 0..4 {
                        assert_eq!(c1[[t, ch, r, c]], c1[[N_TIMESTEPS + t, ch, r, c]]);
                    }
                }
            }
        }
        // Perturb a weight; both implants shift identically.
        head.conv1.weight[[3, 40]] += 0.25;
        let c1b = head.conv1.forward(&grid, false);
        for t in 0..N_TIMESTEPS {
            for r in 0..6 {
                for c in 0..4 {
                    let da = c1b[[t, 3, r, c]] - c1[[t, 3, r, c]];
                    let db = c1b[[N_TIMESTEPS + t, 3, r, c]] - c1[[N_TIMESTEPS + t, 3, r, c]];
                    assert!((da - db).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn constant_input_converges_toward_fixed_point() {
        // On a constant-over-time input the gated recurrence contracts:
        // successive output differences shrink from t >= 3.
        let mut rng = seeded_rng(4, 0);
        let mut head = CnnLstmMtDecoder::new(&mut rng, 0.0);
        let mut features = Array4::zeros((1, N_CHANNELS, N_WAVELETS, N_TIMESTEPS));
        for ch in 0..N_CHANNELS {
            for band in 0..N_WAVELETS {
                let v = rng.random::<f64>() - 0.5;
                for t in 0..N_TIMESTEPS {
                    features[[0, ch, band, t]] = v;
                }
            }
        }
        let mut mask_rng = seeded_rng(5, 0);
        let y = head.forward(&features, false, &mut mask_rng);
        let diff = |t: usize| -> f64 {
            (0..3)
                .map(|a| (y[[0, t, a]] - y[[0, t - 1, a]]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for t in 3..N_TIMESTEPS {
            assert!(
                diff(t) <= diff(t - 1) + 1e-12,
                "step diff grew at t={t}: {} vs {}",
                diff(t),
                diff(t - 1)
            );
        }
    }
}
