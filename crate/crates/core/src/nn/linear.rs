//! Affine layer `y = x Wᵀ + b`.

use ndarray::{linalg::general_mat_mul, Array1, Array2};
use rand::Rng;

use super::{init_uniform, visit_pair, visit_pair1, ParamView, Params};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>, // [out, in]
    pub bias: Array1<f64>,   // [out]
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cached_input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: init_uniform(rng, (out_features, in_features), in_features),
            bias: Array1::zeros(out_features),
            grad_weight: Array2::zeros((out_features, in_features)),
            grad_bias: Array1::zeros(out_features),
            cached_input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.nrows()
    }

    /// `x`: [n, in] → [n, out]. Caches the input when `training`.
    pub fn forward(&mut self, x: &Array2<f64>, training: bool) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.out_features()));
        general_mat_mul(1.0, x, &self.weight.t(), 0.0, &mut y);
        for mut row in y.rows_mut() {
            row += &self.bias;
        }
        if training {
            self.cached_input = Some(x.clone());
        }
        y
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self
            .cached_input
            .as_ref()
            .expect("Linear::backward without cached forward");
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut self.grad_weight);
        for (i, col) in dy.columns().into_iter().enumerate() {
            self.grad_bias[i] += col.sum();
        }
        let mut dx = Array2::zeros(x.dim());
        general_mat_mul(1.0, dy, &self.weight, 0.0, &mut dx);
        dx
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

impl Params for Linear {
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
