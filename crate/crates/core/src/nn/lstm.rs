//! Gated LSTM layer (input/forget/cell/output gates, separate input and
//! recurrent biases) with truncated-nothing BPTT over the full sequence.
//!
//! Gate order inside the stacked weight matrices is `i, f, g, o`.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, Array3};
use rand::Rng;

use super::{init_uniform, visit_pair, visit_pair1, ParamView, Params};

#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_ih: Array2<f64>, // [4H, in]
    pub w_hh: Array2<f64>, // [4H, H]
    pub b_ih: Array1<f64>, // [4H]
    pub b_hh: Array1<f64>, // [4H]
    pub grad_w_ih: Array2<f64>,
    pub grad_w_hh: Array2<f64>,
    pub grad_b_ih: Array1<f64>,
    pub grad_b_hh: Array1<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    input: Array3<f64>,      // [B, T, in]
    gates: Array3<f64>,      // [B, T, 4H] post-activation
    cells: Array3<f64>,      // [B, T, H]
    tanh_cells: Array3<f64>, // [B, T, H]
    hidden: Array3<f64>,     // [B, T, H]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(rng: &mut impl Rng, input_size: usize, hidden_size: usize) -> Self {
        Lstm {
            input_size,
            hidden_size,
            w_ih: init_uniform(rng, (4 * hidden_size, input_size), input_size),
            w_hh: init_uniform(rng, (4 * hidden_size, hidden_size), hidden_size),
            b_ih: Array1::zeros(4 * hidden_size),
            b_hh: Array1::zeros(4 * hidden_size),
            grad_w_ih: Array2::zeros((4 * hidden_size, input_size)),
            grad_w_hh: Array2::zeros((4 * hidden_size, hidden_size)),
            grad_b_ih: Array1::zeros(4 * hidden_size),
            grad_b_hh: Array1::zeros(4 * hidden_size),
            cache: None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.b_ih.len() + self.b_hh.len()
    }

    /// `x`: [B, T, in] → hidden states [B, T, H]; initial state is zero.
    pub fn forward(&mut self, x: &Array3<f64>, training: bool) -> Array3<f64> {
        let (batch, steps, in_size) = x.dim();
        assert_eq!(in_size, self.input_size, "lstm input size mismatch");
        let hs = self.hidden_size;

        // Input projection for all timesteps in one GEMM.
        let x2 = x
            .to_shape((batch * steps, in_size))
            .expect("contiguous lstm input")
            .to_owned();
        let mut proj = Array2::zeros((batch * steps, 4 * hs));
        general_mat_mul(1.0, &x2, &self.w_ih.t(), 0.0, &mut proj);

        let mut gates = Array3::zeros((batch, steps, 4 * hs));
        let mut cells = Array3::zeros((batch, steps, hs));
        let mut tanh_cells = Array3::zeros((batch, steps, hs));
        let mut hidden = Array3::zeros((batch, steps, hs));

        let mut h_prev = Array2::<f64>::zeros((batch, hs));
        let mut c_prev = Array2::<f64>::zeros((batch, hs));
        let mut rec = Array2::<f64>::zeros((batch, 4 * hs));
        for t in 0..steps {
            general_mat_mul(1.0, &h_prev, &self.w_hh.t(), 0.0, &mut rec);
            for b in 0..batch {
                for j in 0..hs {
                    let pre_i = proj[[b * steps + t, j]]
                        + rec[[b, j]]
                        + self.b_ih[j]
                        + self.b_hh[j];
                    let pre_f = proj[[b * steps + t, hs + j]]
                        + rec[[b, hs + j]]
                        + self.b_ih[hs + j]
                        + self.b_hh[hs + j];
                    let pre_g = proj[[b * steps + t, 2 * hs + j]]
                        + rec[[b, 2 * hs + j]]
                        + self.b_ih[2 * hs + j]
                        + self.b_hh[2 * hs + j];
                    let pre_o = proj[[b * steps + t, 3 * hs + j]]
                        + rec[[b, 3 * hs + j]]
                        + self.b_ih[3 * hs + j]
                        + self.b_hh[3 * hs + j];
                    let gi = sigmoid(pre_i);
                    let gf = sigmoid(pre_f);
                    let gg = pre_g.tanh();
                    let go = sigmoid(pre_o);
                    let c = gf * c_prev[[b, j]] + gi * gg;
                    let tc = c.tanh();
                    gates[[b, t, j]] = gi;
                    gates[[b, t, hs + j]] = gf;
                    gates[[b, t, 2 * hs + j]] = gg;
                    gates[[b, t, 3 * hs + j]] = go;
                    cells[[b, t, j]] = c;
                    tanh_cells[[b, t, j]] = tc;
                    hidden[[b, t, j]] = go * tc;
                }
            }
            h_prev.assign(&hidden.slice(s![.., t, ..]));
            c_prev.assign(&cells.slice(s![.., t, ..]));
        }

        if training {
            self.cache = Some(Cache {
                input: x.clone(),
                gates: gates.clone(),
                cells: cells.clone(),
                tanh_cells: tanh_cells.clone(),
                hidden: hidden.clone(),
            });
        }
        hidden
    }

    /// BPTT. `dh_out`: [B, T, H] gradient on every hidden state output.
    /// Accumulates parameter gradients and returns dL/dx: [B, T, in].
    pub fn backward(&mut self, dh_out: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("Lstm::backward without forward");
        let (batch, steps, hs) = dh_out.dim();
        assert_eq!(hs, self.hidden_size);

        // d(pre-activation gates) for every timestep, filled in reverse.
        let mut d_pre = Array3::<f64>::zeros((batch, steps, 4 * hs));
        let mut dh_next = Array2::<f64>::zeros((batch, hs));
        let mut dc_next = Array2::<f64>::zeros((batch, hs));
        let mut d_pre_t = Array2::<f64>::zeros((batch, 4 * hs));

        for t in (0..steps).rev() {
            for b in 0..batch {
                for j in 0..hs {
                    let dh = dh_out[[b, t, j]] + dh_next[[b, j]];
                    let gi = cache.gates[[b, t, j]];
                    let gf = cache.gates[[b, t, hs + j]];
                    let gg = cache.gates[[b, t, 2 * hs + j]];
                    let go = cache.gates[[b, t, 3 * hs + j]];
                    let tc = cache.tanh_cells[[b, t, j]];
                    let c_prev = if t == 0 { 0.0 } else { cache.cells[[b, t - 1, j]] };

                    let d_o = dh * tc;
                    let dc = dh * go * (1.0 - tc * tc) + dc_next[[b, j]];
                    let d_i = dc * gg;
                    let d_f = dc * c_prev;
                    let d_g = dc * gi;

                    d_pre_t[[b, j]] = d_i * gi * (1.0 - gi);
                    d_pre_t[[b, hs + j]] = d_f * gf * (1.0 - gf);
                    d_pre_t[[b, 2 * hs + j]] = d_g * (1.0 - gg * gg);
                    d_pre_t[[b, 3 * hs + j]] = d_o * go * (1.0 - go);

                    dc_next[[b, j]] = dc * gf;
                }
            }
            // dh_{t-1} = d_pre_t · W_hh
            general_mat_mul(1.0, &d_pre_t, &self.w_hh, 0.0, &mut dh_next);
            d_pre.slice_mut(s![.., t, ..]).assign(&d_pre_t);
        }

        // Batched parameter gradients.
        let d_pre2 = d_pre
            .to_shape((batch * steps, 4 * hs))
            .expect("contiguous")
            .to_owned();
        let x2 = cache
            .input
            .to_shape((batch * steps, self.input_size))
            .expect("contiguous")
            .to_owned();
        general_mat_mul(1.0, &d_pre2.t(), &x2, 1.0, &mut self.grad_w_ih);

        // h_prev rows: zero at t=0, else h_{t-1}.
        let mut h_prev_rows = Array2::<f64>::zeros((batch * steps, hs));
        for b in 0..batch {
            for t in 1..steps {
                for j in 0..hs {
                    h_prev_rows[[b * steps + t, j]] = cache.hidden[[b, t - 1, j]];
                }
            }
        }
        general_mat_mul(1.0, &d_pre2.t(), &h_prev_rows, 1.0, &mut self.grad_w_hh);
        for (j, col) in d_pre2.columns().into_iter().enumerate() {
            let s = col.sum();
            self.grad_b_ih[j] += s;
            self.grad_b_hh[j] += s;
        }

        let mut dx2 = Array2::zeros((batch * steps, self.input_size));
        general_mat_mul(1.0, &d_pre2, &self.w_ih, 0.0, &mut dx2);
        dx2.into_shape_with_order((batch, steps, self.input_size))
            .expect("reshape dx")
    }
}

impl Params for Lstm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        visit_pair(
            format!("{prefix}.w_ih"),
            &mut self.w_ih,
            &mut self.grad_w_ih,
            true,
            f,
        );
        visit_pair(
            format!("{prefix}.w_hh"),
            &mut self.w_hh,
            &mut self.grad_w_hh,
            true,
            f,
        );
        visit_pair1(
            format!("{prefix}.b_ih"),
            &mut self.b_ih,
            &mut self.grad_b_ih,
            false,
            f,
        );
        visit_pair1(
            format!("{prefix}.b_hh"),
            &mut self.b_hh,
            &mut self.grad_b_hh,
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
    fn table_parameter_counts() {
        let mut rng = seeded_rng(0, 0);
        assert_eq!(Lstm::new(&mut rng, 1024, 50).parameter_count(), 215_200);
        assert_eq!(Lstm::new(&mut rng, 50, 3).parameter_count(), 660);
    }

    #[test]
    fn hidden_stays_bounded() {
        let mut rng = seeded_rng(2, 0);
        let mut lstm = Lstm::new(&mut rng, 4, 3);
        let x = Array3::from_shape_fn((2, 20, 4), |_| 10.0 * (rng.random::<f64>() - 0.5));
        let h = lstm.forward(&x, false);
        assert!(h.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = seeded_rng(4, 1);
        let mut lstm = Lstm::new(&mut rng, 3, 2);
        let x = Array3::from_shape_fn((2, 4, 3), |_| rng.random::<f64>() - 0.5);

        // loss = 0.5 Σ h², dL/dh = h at every timestep (multi-target style)
        let loss = |lstm: &mut Lstm, x: &Array3<f64>| -> f64 {
            let h = lstm.forward(x, false);
            0.5 * h.iter().map(|v| v * v).sum::<f64>()
        };
        let h = lstm.forward(&x, true);
        let dx = lstm.backward(&h.clone());

        let fd_h = 1e-6;
        // weights: check several scalars in every matrix
        let mut check = |value: *mut f64, analytic: f64, lstm: &mut Lstm, x: &Array3<f64>| {
            // SAFETY: value points into lstm's parameter storage, temporarily
            // perturbed and restored; lstm is not otherwise touched.
            unsafe {
                let orig = *value;
                *value = orig + fd_h;
                let lp = loss(lstm, x);
                *value = orig - fd_h;
                let lm = loss(lstm, x);
                *value = orig;
                let fd = (lp - lm) / (2.0 * fd_h);
                assert!(
                    (analytic - fd).abs() / fd.abs().max(1e-8) < 1e-4,
                    "analytic {analytic} vs fd {fd}"
                );
            }
        };
        for &(i, j) in &[(0usize, 0usize), (5, 2), (7, 1)] {
            let a = lstm.grad_w_ih[[i, j]];
            let p: *mut f64 = &mut lstm.w_ih[[i, j]];
            check(p, a, &mut lstm, &x);
        }
        for &(i, j) in &[(0usize, 0usize), (4, 1), (7, 0)] {
            let a = lstm.grad_w_hh[[i, j]];
            let p: *mut f64 = &mut lstm.w_hh[[i, j]];
            check(p, a, &mut lstm, &x);
        }
        for &j in &[0usize, 3, 6] {
            let a = lstm.grad_b_ih[j];
            let p: *mut f64 = &mut lstm.b_ih[j];
            check(p, a, &mut lstm, &x);
        }
        // input gradient
        let mut xp = x.clone();
        for &idx in &[(0usize, 0usize, 0usize), (1, 3, 2), (0, 2, 1)] {
            let orig = xp[idx];
            xp[idx] = orig + fd_h;
            let lp = loss(&mut lstm, &xp);
            xp[idx] = orig - fd_h;
            let lm = loss(&mut lstm, &xp);
            xp[idx] = orig;
            let fd = (lp - lm) / (2.0 * fd_h);
            assert!((dx[idx] - fd).abs() / fd.abs().max(1e-8) < 1e-4, "dx[{idx:?}]");
        }
    }
}
