//! Adam with decoupled weight decay. The decay is a multiplicative shrink
//! `θ ← θ·(1 − lr·wd)` applied alongside the bias-corrected moment update;
//! biases, batch-norm parameters, and CFO frequencies are exempt (their
//! `ParamView::decay` flag is false).

use std::collections::BTreeMap;

use crate::nn::Params;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct TensorState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Per-parameter first/second moment accumulators keyed by tensor name.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, TensorState>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to every visited parameter. A tensor's moment
    /// state is created on first visit, so parameters that only become
    /// trainable later (unfrozen kernels) start with fresh moments.
    pub fn step(&mut self, params: &mut impl Params) -> Result<()> {
        let mut bad: Option<String> = None;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let state = &mut self.state;
        params.visit_params("", &mut |p| {
            if bad.is_some() {
                return;
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                bad = Some(p.name.clone());
                return;
            }
            let st = state.entry(p.name.clone()).or_insert_with(|| TensorState {
                m: vec![0.0; p.value.len()],
                v: vec![0.0; p.value.len()],
                step: 0,
            });
            st.step += 1;
            let bc1 = 1.0 - b1.powi(st.step as i32);
            let bc2 = 1.0 - b2.powi(st.step as i32);
            let shrink = if p.decay { 1.0 - lr * wd } else { 1.0 };
            for ((value, grad), (m, v)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(st.m.iter_mut().zip(st.v.iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *value = *value * shrink - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` is not finite; aborting epoch"
            )));
        }
        Ok(())
    }

    /// Drops all moment state (used when restoring a snapshot).
    pub fn reset(&mut self) {
        self.state.clear();
    }
}
