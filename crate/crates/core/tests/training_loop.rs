//! Training-loop integration: freeze schedule, determinism, early stopping,
//! wavelet-family closure, and the multi-target test-time reduction.

use ndarray::Array2;
use wavedec::data::{generate_synthetic, Band, Dataset, SynthConfig};
use wavedec::decoders::{
    window_prediction, EndToEndModel, FrontendMode, ModelConfig, ModelFamily, Predictions,
};
use wavedec::nn::Params;
use wavedec::training::{cosine_similarity, evaluate, train, TrainConfig};
use wavedec::N_TIMESTEPS;

fn small_dataset(n_sessions: usize, duration_s: f64, snr: f64, seed: u64) -> Dataset {
    let cfg = SynthConfig::with_random_weights(
        n_sessions,
        duration_s,
        vec![Band {
            center_hz: 70.0,
            bandwidth_hz: 25.0,
        }],
        snr,
        1.0,
        0.5,
        seed,
    );
    generate_synthetic(&cfg).unwrap()
}

fn collect_params(model: &mut EndToEndModel) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |p| out.push((p.name.clone(), p.value.to_vec())));
    out
}

#[test]
fn freeze_schedule_keeps_kernels_then_releases_them() {
    // Kernels bit-identical to the initialization through epoch 5, changed
    // by epoch 7 (observed through per-epoch state hashes).
    let ds = small_dataset(1, 8.0, 2.0, 3);
    let all: Vec<usize> = (0..ds.n_windows()).collect();
    let model =
        EndToEndModel::new(&ModelConfig::new(ModelFamily::Mlp, FrontendMode::E2eFree, 5)).unwrap();
    let init_hash = model.frontend.filterbank.state_hash();

    let tc = TrainConfig {
        max_epochs: 7,
        batch_size: 32,
        patience: 50,
        seed: 5,
        ..TrainConfig::default()
    };
    let outcome = train(model, &ds, &all, &tc, None).unwrap();
    let epochs = &outcome.curve.epochs;
    assert_eq!(epochs.len(), 7);
    for e in &epochs[..5] {
        assert!(e.frozen);
        assert_eq!(
            e.kernel_hash, init_hash,
            "kernels must be bit-identical to init through epoch {}",
            e.epoch
        );
    }
    assert!(!epochs[5].frozen && !epochs[6].frozen);
    assert_ne!(
        epochs[6].kernel_hash, init_hash,
        "kernels must change once unfrozen"
    );
}

#[test]
fn cfo_curve_shows_freeze_and_family_closure() {
    let ds = small_dataset(1, 8.0, 2.0, 4);
    let all: Vec<usize> = (0..ds.n_windows()).collect();
    let model = EndToEndModel::new(&ModelConfig::new(
        ModelFamily::Mlp,
        FrontendMode::E2eCfo,
        2,
    ))
    .unwrap();
    let f_init = model.frontend.filterbank.current_frequencies();
    let tc = TrainConfig {
        max_epochs: 8,
        patience: 100,
        batch_size: 32,
        seed: 2,
        ..TrainConfig::default()
    };
    let outcome = train(model, &ds, &all, &tc, None).unwrap();
    // Frequencies recorded every epoch; frozen through epoch 5.
    for e in &outcome.curve.epochs {
        let freqs = e.frequencies.as_ref().expect("cfo curve has frequencies");
        if e.epoch <= 5 {
            assert_eq!(freqs, &f_init, "epoch {} should be frozen", e.epoch);
        }
    }
    let last = outcome.curve.epochs.last().unwrap();
    assert_ne!(last.frequencies.as_ref().unwrap(), &f_init);

    // Family closure: kernels are exactly the generator output of the
    // stored frequencies.
    let mut regen = outcome.model.clone();
    regen.frontend.filterbank.regenerate_cfo().unwrap();
    let max_err = regen
        .frontend
        .filterbank
        .kernels
        .iter()
        .zip(outcome.model.frontend.filterbank.kernels.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_err <= 1e-12, "family closure violated: {max_err}");
}

#[test]
fn training_is_deterministic_for_fixed_seed() {
    let ds = small_dataset(1, 8.0, 2.0, 6);
    let all: Vec<usize> = (0..ds.n_windows()).collect();
    let tc = TrainConfig {
        max_epochs: 7,
        patience: 100,
        batch_size: 32,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let model = EndToEndModel::new(&ModelConfig::new(
            ModelFamily::Mlp,
            FrontendMode::E2eCfo,
            9,
        ))
        .unwrap();
        train(model, &ds, &all, &tc, None).unwrap()
    };
    let mut a = run();
    let mut b = run();
    let pa = collect_params(&mut a.model);
    let pb = collect_params(&mut b.model);
    assert_eq!(pa.len(), pb.len());
    for ((na, va), (nb, vb)) in pa.iter().zip(&pb) {
        assert_eq!(na, nb);
        assert!(
            va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits()),
            "parameter {na} differs between identical runs"
        );
    }
    for (ea, eb) in a.curve.epochs.iter().zip(&b.curve.epochs) {
        assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
        assert_eq!(ea.valid_loss.to_bits(), eb.valid_loss.to_bits());
        assert_eq!(ea.valid_cs.to_bits(), eb.valid_cs.to_bits());
    }
}

#[test]
fn early_stopping_halts_at_patience_plus_one_and_restores_best() {
    // Worsening-validation construction: signals carry no information
    // (snr 0), training targets all point at +x while the chronologically
    // later validation windows point at −x. Fitting the training direction
    // strictly worsens validation from epoch 1.
    let mut ds = small_dataset(1, 10.0, 0.0, 8);
    let n = ds.n_windows();
    let n_valid = (0.1 * n as f64).floor() as usize;
    for (i, t) in ds.targets.iter_mut().enumerate() {
        let dir = if i < n - n_valid { 1.0 } else { -1.0 };
        for step in t.steps.iter_mut() {
            *step = [dir, 0.0, 0.0];
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let patience = 4;
    let tc = TrainConfig {
        max_epochs: 40,
        patience,
        batch_size: 32,
        seed: 1,
        chronological_split: true,
        ..TrainConfig::default()
    };
    let model = EndToEndModel::new(&ModelConfig::new(
        ModelFamily::Mlp,
        FrontendMode::HandCrafted,
        1,
    ))
    .unwrap();
    let outcome = train(model, &ds, &all, &tc, None).unwrap();
    assert!(outcome.curve.stopped_early);
    assert_eq!(
        outcome.curve.epochs.len(),
        patience + 1,
        "validation worsens from epoch 1, so the stop lands at patience + 1"
    );
    assert_eq!(outcome.manifest.best_epoch, 1);
    // Returned model is the best snapshot: its validation loss equals the
    // recorded minimum.
    let min_valid = outcome
        .curve
        .epochs
        .iter()
        .map(|e| e.valid_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(min_valid, outcome.manifest.best_valid_loss);
    assert_eq!(outcome.curve.epochs[0].valid_loss, min_valid);
}

#[test]
fn mt_reductions_agree_on_trained_model() {
    // Final-step vs mean-over-steps test-time reductions differ by < 0.02
    // mean CS on a trained multi-target model.
    let ds = small_dataset(3, 15.0, 2.0, 12);
    let train_w = ds.windows_of_sessions(0..2);
    let test_w = ds.windows_of_sessions(2..3);
    let tc = TrainConfig {
        max_epochs: 8,
        patience: 8,
        seed: 0,
        ..TrainConfig::default()
    };
    let model = EndToEndModel::new(&ModelConfig::new(
        ModelFamily::CnnLstmMt,
        FrontendMode::HandCrafted,
        0,
    ))
    .unwrap();
    let outcome = train(model, &ds, &train_w, &tc, None).unwrap();
    let mut model = outcome.model;

    // Reduction A (the library's): final timestep.
    let report = evaluate(&mut model, &ds, &test_w, 200, None).unwrap();

    // Reduction B (independent): mean over the 10 steps.
    let mut cs_final = 0.0;
    let mut cs_mean = 0.0;
    for chunk in test_w.chunks(200) {
        let windows = wavedec::training::assemble_windows(&ds, chunk);
        let preds = model.forward_raw(&windows, false, 0);
        let Predictions::PerStep(p) = &preds else {
            panic!("MT head must emit per-step predictions")
        };
        for (bi, &wi) in chunk.iter().enumerate() {
            let label = ds.targets[wi].window_label();
            let y = [label[0] as f64, label[1] as f64, label[2] as f64];
            let per_step: Array2<f64> = p
                .index_axis(ndarray::Axis(0), bi)
                .to_owned();
            let fin = window_prediction(&per_step);
            cs_final += cosine_similarity(&y, &fin).unwrap();
            let mut mean = [0.0f64; 3];
            for k in 0..N_TIMESTEPS {
                for a in 0..3 {
                    mean[a] += per_step[[k, a]] / N_TIMESTEPS as f64;
                }
            }
            cs_mean += cosine_similarity(&y, &mean).unwrap();
        }
    }
    let n = test_w.len() as f64;
    cs_final /= n;
    cs_mean /= n;
    assert!(
        (report.mean_cs - cs_final).abs() < 1e-12,
        "evaluate() must use the final-step reduction"
    );
    assert!(
        (cs_final - cs_mean).abs() < 0.02,
        "reductions disagree: final {cs_final:.4} vs mean {cs_mean:.4}"
    );
}
