//! Differentiable building blocks with hand-written backward passes.
//!
//! Layers own their parameters and gradient buffers; gradients accumulate
//! across `backward` calls until [`zero_grads`](Params::zero_grads). The
//! optimizer, checkpointing, and finite-difference checking all walk
//! parameters through the [`Params`] visitor, which fixes a deterministic
//! traversal order.

mod batchnorm;
mod conv2d;
mod linear;
mod lstm;

pub use batchnorm::BatchNorm;
pub use conv2d::SpatialConv;
pub use linear::Linear;
pub use lstm::Lstm;

use ndarray::{Array1, Array2};
use rand::Rng;

/// A named view of one parameter tensor and its gradient.
pub struct ParamView<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    /// Whether decoupled weight decay applies (false for biases, batch-norm
    /// parameters, and wavelet central frequencies).
    pub decay: bool,
}

/// Visitor over all trainable parameters of a layer or model.
pub trait Params {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>));

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |p| {
            for g in p.grad.iter_mut() {
                *g = 0.0;
            }
        });
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |p| n += p.value.len());
        n
    }
}

/// Uniform ±1/√fan_in init for a weight matrix.
pub fn init_uniform(rng: &mut impl Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random::<f64>() * 2.0 * bound - bound)
}

/// In-place ReLU; returns the activated array.
pub fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Backward through ReLU given the *output* of the forward pass.
pub fn relu_backward(dy: &mut Array2<f64>, y: &Array2<f64>) {
    ndarray::Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Inverted dropout over a flat buffer. Returns the keep mask; kept entries
/// are scaled by 1/(1-rate) so evaluation needs no rescaling.
///
/// Bernoulli draws threshold bulk-generated u32 words (the rate is
/// quantized to 2⁻³², which is far below any observable effect) so large
/// activation maps don't pay per-element RNG overhead.
pub fn dropout_forward(x: &mut [f64], rate: f64, rng: &mut impl Rng) -> Vec<u8> {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return Vec::new();
    }
    let scale = 1.0 / (1.0 - rate);
    let threshold = (rate * 4_294_967_296.0) as u64;
    let mut bytes = vec![0u8; x.len() * 4];
    rng.fill_bytes(&mut bytes);
    let mut mask = vec![0u8; x.len()];
    for ((v, m), word) in x
        .iter_mut()
        .zip(mask.iter_mut())
        .zip(bytes.chunks_exact(4))
    {
        let w = u32::from_le_bytes(word.try_into().unwrap()) as u64;
        if w < threshold {
            *v = 0.0;
        } else {
            *v *= scale;
            *m = 1;
        }
    }
    mask
}

/// Backward through dropout with the mask returned by [`dropout_forward`].
pub fn dropout_backward(dy: &mut [f64], mask: &[u8], rate: f64) {
    if rate == 0.0 {
        return;
    }
    let scale = 1.0 / (1.0 - rate);
    for (d, &m) in dy.iter_mut().zip(mask.iter()) {
        *d = if m == 1 { *d * scale } else { 0.0 };
    }
}

/// Helper: visit a (value, grad) array pair as one `ParamView`.
pub(crate) fn visit_pair(
    name: String,
    value: &mut Array2<f64>,
    grad: &mut Array2<f64>,
    decay: bool,
    f: &mut dyn FnMut(ParamView<'_>),
) {
    f(ParamView {
        name,
        value: value.as_slice_mut().expect("contiguous"),
        grad: grad.as_slice_mut().expect("contiguous"),
        decay,
    });
}

pub(crate) fn visit_pair1(
    name: String,
    value: &mut Array1<f64>,
    grad: &mut Array1<f64>,
    decay: bool,
    f: &mut dyn FnMut(ParamView<'_>),
) {
    f(ParamView {
        name,
        value: value.as_slice_mut().expect("contiguous"),
        grad: grad.as_slice_mut().expect("contiguous"),
        decay,
    });
}
