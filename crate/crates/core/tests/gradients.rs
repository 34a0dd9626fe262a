//! Finite-difference verification of the composed models: every parameter
//! group of every architecture/frontend combination, plus the corrupted
//! negative control and the squeeze gradient identity.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use wavedec::decoders::{EndToEndModel, FrontendMode, ModelConfig, ModelFamily};
use wavedec::nn::Params;
use wavedec::training::{
    cosine_loss_and_grad, finite_difference_check, TargetsBatch, GRADCHECK_REL_TOL,
};
use wavedec::util::seeded_rng;
use wavedec::{N_CHANNELS, N_TIMESTEPS, WINDOW_SAMPLES};

fn random_batch(b: usize, seed: u64) -> (Array3<f64>, TargetsBatch) {
    let mut rng = seeded_rng(seed, 0);
    let windows = Array3::from_shape_fn((b, N_CHANNELS, WINDOW_SAMPLES), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let mut labels = Array2::zeros((b, 3));
    let mut steps = Array3::zeros((b, N_TIMESTEPS, 3));
    for bi in 0..b {
        for k in 0..N_TIMESTEPS {
            let mut v = [0.0f64; 3];
            loop {
                for x in v.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-6 {
                    for x in v.iter_mut() {
                        *x /= n;
                    }
                    break;
                }
            }
            for a in 0..3 {
                steps[[bi, k, a]] = v[a];
            }
        }
        for a in 0..3 {
            labels[[bi, a]] = steps[[bi, N_TIMESTEPS - 1, a]];
        }
    }
    (windows, TargetsBatch { labels, steps })
}

fn check_model(family: ModelFamily, mode: FrontendMode, seed: u64) {
    let mut cfg = ModelConfig::new(family, mode, seed);
    // Dropout stays on: masks are regenerated from the fixed step seed, so
    // the probe loss is still deterministic.
    cfg.head_dropout = 0.3;
    let mut model = EndToEndModel::new(&cfg).unwrap();
    let (windows, targets) = random_batch(3, seed);
    let report =
        finite_difference_check(&mut model, &windows, &targets, 4, seed, false).unwrap();
    for g in report.sorted_by_error() {
        assert!(
            g.pass,
            "{family} {mode}: group {} worst rel err {} (index {}) exceeds {GRADCHECK_REL_TOL}",
            g.name, g.worst_rel_err, g.worst_index
        );
    }
    assert!(report.pass);
}

#[test]
fn mlp_free_frontend_gradients() {
    check_model(ModelFamily::Mlp, FrontendMode::E2eFree, 11);
}

#[test]
fn mlp_cfo_frontend_gradients() {
    check_model(ModelFamily::Mlp, FrontendMode::E2eCfo, 12);
}

#[test]
fn cnn_lstm_handcrafted_gradients() {
    check_model(ModelFamily::CnnLstmMt, FrontendMode::HandCrafted, 13);
}

#[test]
fn cnn_lstm_cfo_gradients() {
    check_model(ModelFamily::CnnLstmMt, FrontendMode::E2eCfo, 14);
}

#[test]
fn mlp_random_frontend_gradients() {
    check_model(ModelFamily::Mlp, FrontendMode::E2eRandom, 15);
}

#[test]
fn corrupted_gradient_fails_the_check() {
    let cfg = ModelConfig::new(ModelFamily::Mlp, FrontendMode::E2eFree, 7);
    let mut model = EndToEndModel::new(&cfg).unwrap();
    let (windows, targets) = random_batch(2, 7);
    let report =
        finite_difference_check(&mut model, &windows, &targets, 4, 7, true).unwrap();
    assert!(
        !report.pass,
        "negative control: +10% corrupted gradients must fail"
    );
}

#[test]
fn squeeze_forward_identical_and_gradient_scaled_140x() {
    // Matched initial parameters: identical forward loss at step 0, and the
    // u-space gradient is exactly 140× the frequency-space gradient.
    let mut cfg = ModelConfig::new(ModelFamily::Mlp, FrontendMode::E2eCfo, 21);
    cfg.head_dropout = 0.0;
    let mut plain = EndToEndModel::new(&cfg).unwrap();
    let mut cfg_squeezed = cfg.clone();
    cfg_squeezed.squeeze = true;
    let mut squeezed = EndToEndModel::new(&cfg_squeezed).unwrap();

    let (windows, targets) = random_batch(2, 21);
    let step_seed = 5;

    plain.zero_grads();
    let preds = plain.forward_raw(&windows, true, step_seed);
    let (loss_plain, d_pred) = cosine_loss_and_grad(&preds, &targets).unwrap();
    plain.backward_raw(&windows, &d_pred, step_seed);

    squeezed.zero_grads();
    let preds = squeezed.forward_raw(&windows, true, step_seed);
    let (loss_squeezed, d_pred) = cosine_loss_and_grad(&preds, &targets).unwrap();
    squeezed.backward_raw(&windows, &d_pred, step_seed);

    assert_eq!(
        loss_plain, loss_squeezed,
        "reparameterization must not change the forward pass"
    );

    let mut grad_f = Vec::new();
    plain.visit_params("", &mut |p| {
        if p.name.ends_with("frontend.frequencies") {
            grad_f = p.grad.to_vec();
        }
    });
    let mut grad_u = Vec::new();
    squeezed.visit_params("", &mut |p| {
        if p.name.ends_with("frontend.frequencies") {
            grad_u = p.grad.to_vec();
        }
    });
    assert_eq!(grad_f.len(), 15);
    for (gu, gf) in grad_u.iter().zip(&grad_f) {
        let expect = 140.0 * gf;
        assert!(
            (gu - expect).abs() <= 1e-12 * expect.abs().max(1e-12),
            "u-space gradient {gu} vs 140×f-space {expect}"
        );
    }
}
