//! Multilayer perceptron head: Flatten → 9600→50 → BatchNorm → ReLU →
//! Dropout → 50→50 → ReLU → Dropout → 50→3.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    dropout_backward, dropout_forward, relu, relu_backward, BatchNorm, Linear, ParamView, Params,
};
use crate::{N_CHANNELS, N_TIMESTEPS, N_WAVELETS};

pub const MLP_INPUT: usize = N_CHANNELS * N_WAVELETS * N_TIMESTEPS; // 9600
pub const MLP_HIDDEN: usize = 50;

#[derive(Debug, Clone)]
pub struct MlpDecoder {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
    pub fc3: Linear,
    pub dropout_rate: f64,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    relu1: Array2<f64>,
    relu2: Array2<f64>,
    mask1: Vec<u8>,
    mask2: Vec<u8>,
    training: bool,
}

impl MlpDecoder {
    pub fn new(rng: &mut impl Rng, dropout_rate: f64) -> Self {
        MlpDecoder {
            fc1: Linear::new(rng, MLP_INPUT, MLP_HIDDEN),
            bn: BatchNorm::new(MLP_HIDDEN),
            fc2: Linear::new(rng, MLP_HIDDEN, MLP_HIDDEN),
            fc3: Linear::new(rng, MLP_HIDDEN, 3),
            dropout_rate,
            cache: None,
        }
    }

    /// Flatten order is (channel, band, time) row-major — the natural layout
    /// of the feature tensor.
    fn flatten(features: &Array4<f64>) -> Array2<f64> {
        let b = features.dim().0;
        features
            .to_shape((b, MLP_INPUT))
            .expect("contiguous features")
            .to_owned()
    }

    /// `features`: [B, 64, 15, 10] → predictions [B, 3].
    pub fn forward(
        &mut self,
        features: &Array4<f64>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Array2<f64> {
        let x = Self::flatten(features);
        let a1 = self.fc1.forward(&x, training);
        let a2 = self.bn.forward(&a1, training);
        let relu1 = relu(a2);
        let mut a4 = relu1.clone();
        let mask1 = if training {
            dropout_forward(
                a4.as_slice_mut().expect("contiguous"),
                self.dropout_rate,
                rng,
            )
        } else {
            Vec::new()
        };
        let a5 = self.fc2.forward(&a4, training);
        let relu2 = relu(a5);
        let mut a7 = relu2.clone();
        let mask2 = if training {
            dropout_forward(
                a7.as_slice_mut().expect("contiguous"),
                self.dropout_rate,
                rng,
            )
        } else {
            Vec::new()
        };
        let y = self.fc3.forward(&a7, training);
        if training {
            self.cache = Some(Cache {
                relu1,
                relu2,
                mask1,
                mask2,
                training,
            });
        }
        y
    }

    /// `d_pred`: [B, 3] → gradient on the features [B, 64, 15, 10].
    pub fn backward(&mut self, d_pred: &Array2<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("MlpDecoder::backward");
        let mut d7 = self.fc3.backward(d_pred);
        if cache.training && !cache.mask2.is_empty() {
            dropout_backward(
                d7.as_slice_mut().expect("contiguous"),
                &cache.mask2,
                self.dropout_rate,
            );
        }
        relu_backward(&mut d7, &cache.relu2);
        let mut d4 = self.fc2.backward(&d7);
        if cache.training && !cache.mask1.is_empty() {
            dropout_backward(
                d4.as_slice_mut().expect("contiguous"),
                &cache.mask1,
                self.dropout_rate,
            );
        }
        relu_backward(&mut d4, &cache.relu1);
        let d2 = self.bn.backward(&d4);
        let dx = self.fc1.backward(&d2);
        let b = dx.nrows();
        dx.into_shape_with_order((b, N_CHANNELS, N_WAVELETS, N_TIMESTEPS))
            .expect("reshape feature gradient")
    }

    /// (layer, parameter count) rows matching the architecture table.
    pub fn parameter_table(&self) -> Vec<(String, usize)> {
        vec![
            ("fc1".into(), self.fc1.parameter_count()),
            ("batchnorm".into(), self.bn.parameter_count()),
            ("fc2".into(), self.fc2.parameter_count()),
            ("fc3".into(), self.fc3.parameter_count()),
        ]
    }
}

impl Params for MlpDecoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.bn.visit_params(&format!("{prefix}.bn"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
        self.fc3.visit_params(&format!("{prefix}.fc3"), f);
    }
}
