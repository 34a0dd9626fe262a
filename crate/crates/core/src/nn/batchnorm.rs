//! Batch normalization over the last axis of a `[rows × features]` view.
//!
//! Callers flatten every non-feature axis into rows (batch, channels, time,
//! implants, …), which reproduces per-feature statistics "across batch,
//! channels, and time". Running statistics follow the usual exponential
//! update with the unbiased batch variance.

use ndarray::{Array1, Array2, Axis};

use super::{visit_pair1, ParamView, Params};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub scale: Array1<f64>, // γ
    pub shift: Array1<f64>, // β
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub grad_scale: Array1<f64>,
    pub grad_shift: Array1<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>, // per feature
    training: bool,
}

impl BatchNorm {
    pub fn new(n_features: usize) -> Self {
        BatchNorm {
            scale: Array1::ones(n_features),
            shift: Array1::zeros(n_features),
            running_mean: Array1::zeros(n_features),
            running_var: Array1::ones(n_features),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            grad_scale: Array1::zeros(n_features),
            grad_shift: Array1::zeros(n_features),
            cache: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.scale.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.scale.len() + self.shift.len()
    }

    /// `x`: [rows, features]. In training mode normalizes with batch
    /// statistics and updates the running estimates; in eval mode uses the
    /// running estimates.
    pub fn forward(&mut self, x: &Array2<f64>, training: bool) -> Array2<f64> {
        let n = x.nrows() as f64;
        let f = self.n_features();
        assert_eq!(x.ncols(), f, "batch-norm feature count mismatch");
        let (mean, var) = if training {
            let mean = x.mean_axis(Axis(0)).unwrap();
            let mut var = Array1::zeros(f);
            for row in x.rows() {
                for (j, v) in row.iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            var.mapv_inplace(|v| v / n);
            // Running update uses the unbiased variance estimate.
            let unbias = if x.nrows() > 1 { n / (n - 1.0) } else { 1.0 };
            for j in 0..f {
                self.running_mean[j] =
                    (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                self.running_var[j] =
                    (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut x_hat = x.clone();
        for mut row in x_hat.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let mut y = x_hat.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.shift[j];
            }
        }
        self.cache = Some(Cache {
            x_hat,
            inv_std,
            training,
        });
        y
    }

    /// Accumulates γ/β gradients and returns dL/dx.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let cache = self
            .cache
            .as_ref()
            .expect("BatchNorm::backward without forward");
        let n = dy.nrows() as f64;
        let f = self.n_features();
        let mut sum_dy = Array1::<f64>::zeros(f);
        let mut sum_dy_xhat = Array1::<f64>::zeros(f);
        for (dy_row, xh_row) in dy.rows().into_iter().zip(cache.x_hat.rows()) {
            for j in 0..f {
                sum_dy[j] += dy_row[j];
                sum_dy_xhat[j] += dy_row[j] * xh_row[j];
            }
        }
        for j in 0..f {
            self.grad_shift[j] += sum_dy[j];
            self.grad_scale[j] += sum_dy_xhat[j];
        }

        let mut dx = Array2::zeros(dy.dim());
        if cache.training {
            // dx = γ·inv_std·(dy − mean(dy) − x̂·mean(dy·x̂))
            for ((mut dx_row, dy_row), xh_row) in dx
                .rows_mut()
                .into_iter()
                .zip(dy.rows())
                .zip(cache.x_hat.rows())
            {
                for j in 0..f {
                    dx_row[j] = self.scale[j]
                        * cache.inv_std[j]
                        * (dy_row[j] - sum_dy[j] / n - xh_row[j] * sum_dy_xhat[j] / n);
                }
            }
        } else {
            for (mut dx_row, dy_row) in dx.rows_mut().into_iter().zip(dy.rows()) {
                for j in 0..f {
                    dx_row[j] = self.scale[j] * cache.inv_std[j] * dy_row[j];
                }
            }
        }
        dx
    }
}

impl Params for BatchNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        visit_pair1(
            format!("{prefix}.scale"),
            &mut self.scale,
            &mut self.grad_scale,
            false,
            f,
        );
        visit_pair1(
            format!("{prefix}.shift"),
            &mut self.shift,
            &mut self.grad_shift,
            false,
            f,
        );
    }
}
