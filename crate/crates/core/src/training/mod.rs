//! Cosine loss, train/valid splitting, the training loop with the
//! pre-training freeze schedule and early stopping, and gradient checking.

mod adamw;
mod gradcheck;

pub use adamw::{AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{finite_difference_check, GradCheckReport, GroupResult, GRADCHECK_REL_TOL};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decoders::{EndToEndModel, Predictions};
use crate::nn::Params;
use crate::util::{derive_seed, seeded_rng};
use crate::wavelet::{FeatureCache, FilterMode};
use crate::{Error, Result, N_CHANNELS, N_TIMESTEPS, WINDOW_SAMPLES};

/// Training hyperparameters (defaults follow the studied protocol:
/// lr 0.001, weight decay 0.01, batch 200, 5 freeze + 50 epochs,
/// patience 20, 90/10 split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub pretrain_freeze_epochs: usize,
    pub e2e_epochs: usize,
    pub valid_fraction: f64,
    pub seed: u64,
    pub cfo_squeeze: bool,
    /// Split train/valid chronologically instead of at random. The random
    /// default matches the studied protocol but leaks across overlapping
    /// windows; this flag documents the alternative.
    pub chronological_split: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            weight_decay: 0.01,
            batch_size: 200,
            max_epochs: 55,
            patience: 20,
            pretrain_freeze_epochs: 5,
            e2e_epochs: 50,
            valid_fraction: 0.1,
            seed: 0,
            cfo_squeeze: false,
            chronological_split: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid_config("learning_rate must be > 0"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid_config("weight_decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid_config("max_epochs must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid_config("patience must be >= 1"));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::invalid_config("valid_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Cosine of the angle between two 3-vectors.
pub fn cosine_similarity(y: &[f64; 3], y_hat: &[f64; 3]) -> Result<f64> {
    let ny = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    let nh = (y_hat[0] * y_hat[0] + y_hat[1] * y_hat[1] + y_hat[2] * y_hat[2]).sqrt();
    if ny == 0.0 {
        return Err(Error::ZeroNorm {
            context: "target".into(),
        });
    }
    if nh == 0.0 {
        return Err(Error::ZeroNorm {
            context: "prediction".into(),
        });
    }
    Ok((y[0] * y_hat[0] + y[1] * y_hat[1] + y[2] * y_hat[2]) / (ny * nh))
}

/// Targets of one batch in both reductions.
#[derive(Debug, Clone)]
pub struct TargetsBatch {
    /// Final-step labels, `[B, 3]`.
    pub labels: Array2<f64>,
    /// All 10 per-timestep targets, `[B, 10, 3]`.
    pub steps: Array3<f64>,
}

/// Gathers raw window samples as f64, `[B, 64, 590]`.
pub fn assemble_windows(dataset: &Dataset, indices: &[usize]) -> Array3<f64> {
    let mut out = Array3::zeros((indices.len(), N_CHANNELS, WINDOW_SAMPLES));
    let out_s = out.as_slice_mut().expect("contiguous batch");
    for (bi, &i) in indices.iter().enumerate() {
        let view = dataset.window_view(i);
        for ch in 0..N_CHANNELS {
            let row = view.row(ch);
            let src = row.to_slice().expect("contiguous window row");
            let dst = &mut out_s[(bi * N_CHANNELS + ch) * WINDOW_SAMPLES..][..WINDOW_SAMPLES];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s as f64;
            }
        }
    }
    out
}

/// Gathers the target trajectories of a batch.
pub fn assemble_targets(dataset: &Dataset, indices: &[usize]) -> TargetsBatch {
    let mut labels = Array2::zeros((indices.len(), 3));
    let mut steps = Array3::zeros((indices.len(), N_TIMESTEPS, 3));
    for (bi, &i) in indices.iter().enumerate() {
        let t = &dataset.targets[i];
        for (k, step) in t.steps.iter().enumerate() {
            for axis in 0..3 {
                steps[[bi, k, axis]] = step[axis] as f64;
            }
        }
        let label = t.window_label();
        for axis in 0..3 {
            labels[[bi, axis]] = label[axis] as f64;
        }
    }
    TargetsBatch { labels, steps }
}

/// Mean cosine loss (1 − CS) and its gradient on the predictions. The MLP
/// head is scored against the window label; the multi-target head against
/// all 10 timesteps.
pub fn cosine_loss_and_grad(
    predictions: &Predictions,
    targets: &TargetsBatch,
) -> Result<(f64, Predictions)> {
    match predictions {
        Predictions::Single(p) => {
            let b = p.nrows();
            let mut grad = Array2::zeros((b, 3));
            let mut loss = 0.0;
            for bi in 0..b {
                let y = [
                    targets.labels[[bi, 0]],
                    targets.labels[[bi, 1]],
                    targets.labels[[bi, 2]],
                ];
                let yh = [p[[bi, 0]], p[[bi, 1]], p[[bi, 2]]];
                let cs = cosine_similarity(&y, &yh)?;
                loss += 1.0 - cs;
                let ny = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                let nh = (yh[0] * yh[0] + yh[1] * yh[1] + yh[2] * yh[2]).sqrt();
                for axis in 0..3 {
                    let dcs = y[axis] / (ny * nh) - cs * yh[axis] / (nh * nh);
                    grad[[bi, axis]] = -dcs / b as f64;
                }
            }
            Ok((loss / b as f64, Predictions::Single(grad)))
        }
        Predictions::PerStep(p) => {
            let (b, t_steps, _) = p.dim();
            let m = (b * t_steps) as f64;
            let mut grad = Array3::zeros((b, t_steps, 3));
            let mut loss = 0.0;
            for bi in 0..b {
                for k in 0..t_steps {
                    let y = [
                        targets.steps[[bi, k, 0]],
                        targets.steps[[bi, k, 1]],
                        targets.steps[[bi, k, 2]],
                    ];
                    let yh = [p[[bi, k, 0]], p[[bi, k, 1]], p[[bi, k, 2]]];
                    let cs = cosine_similarity(&y, &yh)?;
                    loss += 1.0 - cs;
                    let ny = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                    let nh = (yh[0] * yh[0] + yh[1] * yh[1] + yh[2] * yh[2]).sqrt();
                    for axis in 0..3 {
                        let dcs = y[axis] / (ny * nh) - cs * yh[axis] / (nh * nh);
                        grad[[bi, k, axis]] = -dcs / m;
                    }
                }
            }
            Ok((loss / m, Predictions::PerStep(grad)))
        }
    }
}

/// Seeded uniform window-level split into (train, valid). Exact sizes:
/// ⌊fraction·N⌋ validation windows.
pub fn split_train_valid(
    indices: &[usize],
    fraction: f64,
    seed: u64,
    chronological: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need >= 10 windows to split, got {}",
            indices.len()
        )));
    }
    let n_valid = (fraction * indices.len() as f64).floor() as usize;
    if n_valid == 0 || n_valid == indices.len() {
        return Err(Error::invalid_config(format!(
            "valid fraction {fraction} leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = indices.to_vec();
    if !chronological {
        let mut rng = seeded_rng(seed, 0x5B11);
        order.shuffle(&mut rng);
    }
    let valid: Vec<usize> = order[order.len() - n_valid..].to_vec();
    let train: Vec<usize> = order[..order.len() - n_valid].to_vec();
    Ok((train, valid))
}

/// Early-stopping state: best validation loss, its epoch, and a snapshot.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub best_valid_loss: f64,
    pub epochs_since_improvement: usize,
    pub best_epoch: usize,
    best_snapshot: Option<EndToEndModel>,
}

impl EarlyStopper {
    pub fn new() -> Self {
        EarlyStopper {
            best_valid_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            best_epoch: 0,
            best_snapshot: None,
        }
    }

    /// Records an epoch; snapshots the model when validation improved.
    pub fn observe(&mut self, valid_loss: f64, model: &EndToEndModel, epoch: usize) -> bool {
        if valid_loss < self.best_valid_loss {
            self.best_valid_loss = valid_loss;
            self.epochs_since_improvement = 0;
            self.best_epoch = epoch;
            self.best_snapshot = Some(model.clone());
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.epochs_since_improvement >= patience
    }

    pub fn into_best(self) -> Option<EndToEndModel> {
        self.best_snapshot
    }
}

impl Default for EarlyStopper {
    fn default() -> Self {
        Self::new()
    }
}

/// One epoch of the learning curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_cs: f64,
    pub frozen: bool,
    /// Central frequencies after this epoch (CFO frontends only).
    pub frequencies: Option<Vec<f64>>,
    /// Content hash of the filterbank state after this epoch (not part of
    /// the CSV export; serves freeze/drift diagnostics).
    pub kernel_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingCurve {
    /// CSV columns: epoch, train_loss, valid_loss, valid_cs, frozen_flag
    /// and, for CFO runs, f_1..f_15.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let with_freqs = self.epochs.iter().any(|e| e.frequencies.is_some());
        let mut header = vec![
            "epoch".to_string(),
            "train_loss".to_string(),
            "valid_loss".to_string(),
            "valid_cs".to_string(),
            "frozen_flag".to_string(),
        ];
        if with_freqs {
            header.extend((1..=crate::N_WAVELETS).map(|i| format!("f_{i}")));
        }
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                format!("{:.9}", e.train_loss),
                format!("{:.9}", e.valid_loss),
                format!("{:.9}", e.valid_cs),
                e.frozen.to_string(),
            ];
            if with_freqs {
                match &e.frequencies {
                    Some(freqs) => row.extend(freqs.iter().map(|f| format!("{f:.9}"))),
                    None => row.extend(std::iter::repeat_n(String::new(), crate::N_WAVELETS)),
                }
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }
}

/// Everything reproducibility needs: the full resolved configuration, the
/// dataset content hash, and the wall clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: crate::decoders::ModelConfig,
    pub train: TrainConfig,
    pub dataset_hash: String,
    pub n_train_windows: usize,
    pub n_valid_windows: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub final_valid_cs: f64,
    pub wall_clock_s: f64,
    /// Parameter groups exempt from weight decay.
    pub weight_decay_exemptions: Vec<String>,
}

/// Result of a training run: best-validation model, curve, manifest.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EndToEndModel,
    pub curve: TrainingCurve,
    pub manifest: RunManifest,
}

/// Evaluation summary over a window set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_cs: f64,
    pub mean_loss: f64,
    pub n_windows: usize,
}

fn batch_forward(
    model: &mut EndToEndModel,
    dataset: &Dataset,
    indices: &[usize],
    cache: Option<&FeatureCache>,
    training: bool,
    step_seed: u64,
) -> Predictions {
    match cache {
        Some(c) => {
            let pooled = c.gather(indices);
            model.forward_pooled(&pooled, training, step_seed)
        }
        None => {
            let windows = assemble_windows(dataset, indices);
            model.forward_raw(&windows, training, step_seed)
        }
    }
}

/// Evaluation-mode metrics on a window set: the training objective and the
/// per-window cosine similarity (final-step reduction for the MT head).
pub fn evaluate(
    model: &mut EndToEndModel,
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
    cache: Option<&FeatureCache>,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::EmptyPartition("evaluation".into()));
    }
    let mut loss_sum = 0.0;
    let mut cs_sum = 0.0;
    let mut n = 0usize;
    for chunk in indices.chunks(batch_size) {
        let preds = batch_forward(model, dataset, chunk, cache, false, 0);
        let targets = assemble_targets(dataset, chunk);
        let (loss, _) = cosine_loss_and_grad(&preds, &targets)?;
        loss_sum += loss * chunk.len() as f64;
        let window_preds = preds.window_predictions();
        for (bi, _) in chunk.iter().enumerate() {
            let y = [
                targets.labels[[bi, 0]],
                targets.labels[[bi, 1]],
                targets.labels[[bi, 2]],
            ];
            let yh = [
                window_preds[[bi, 0]],
                window_preds[[bi, 1]],
                window_preds[[bi, 2]],
            ];
            cs_sum += cosine_similarity(&y, &yh)?;
        }
        n += chunk.len();
    }
    Ok(EvalReport {
        mean_cs: cs_sum / n as f64,
        mean_loss: loss_sum / n as f64,
        n_windows: n,
    })
}

/// Per-session evaluation breakdown: `(session_id, report)` pairs.
pub fn evaluate_per_session(
    model: &mut EndToEndModel,
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
    cache: Option<&FeatureCache>,
) -> Result<Vec<(u32, EvalReport)>> {
    let mut by_session: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in indices {
        by_session
            .entry(dataset.windows[i].session_index)
            .or_default()
            .push(i);
    }
    let mut out = Vec::new();
    for (session_index, idx) in by_session {
        let report = evaluate(model, dataset, &idx, batch_size, cache)?;
        out.push((dataset.sessions[session_index].id, report));
    }
    Ok(out)
}

/// Trains a model on the given training windows (internally split 90/10
/// into train/valid), honoring the pre-training freeze schedule and early
/// stopping, and returns the best-validation snapshot.
///
/// `cache`: pooled-feature cache for fixed frontends; built on the fly when
/// absent. Ignored for trainable frontends.
pub fn train(
    model: EndToEndModel,
    dataset: &Dataset,
    train_windows: &[usize],
    config: &TrainConfig,
    cache: Option<&FeatureCache>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let start = std::time::Instant::now();
    let mut model = model;

    let (mut train_idx, valid_idx) = split_train_valid(
        train_windows,
        config.valid_fraction,
        config.seed,
        config.chronological_split,
    )?;

    // Fixed frontends never change, so pooled features can be computed once.
    let owned_cache: Option<FeatureCache> =
        if model.frontend.filterbank.is_static() && cache.is_none() {
            let mut all: Vec<usize> = train_windows.to_vec();
            all.sort_unstable();
            Some(FeatureCache::build(&model.frontend, dataset, &all)?)
        } else {
            None
        };
    let cache = if model.frontend.filterbank.is_static() {
        owned_cache.as_ref().or(cache)
    } else {
        None
    };

    let e2e_frontend = model.frontend.filterbank.mode != FilterMode::Fixed;
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut stopper = EarlyStopper::new();
    let mut curve = TrainingCurve {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut step_counter = 0u64;

    for epoch in 1..=config.max_epochs {
        let frozen = if e2e_frontend {
            epoch <= config.pretrain_freeze_epochs
        } else {
            true // hand-crafted: kernels are fixed for good
        };
        if e2e_frontend {
            model.frontend.filterbank.frozen = frozen;
        }

        let mut rng = seeded_rng(config.seed, 0xE0_0000 + epoch as u64);
        train_idx.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_n = 0usize;
        for chunk in train_idx.chunks(config.batch_size) {
            if chunk.len() < 2 {
                // Batch statistics are degenerate on a single window.
                continue;
            }
            step_counter += 1;
            let step_seed = derive_seed(config.seed, 0x57E0_0000 + step_counter);
            model.zero_grads();
            let preds = batch_forward(&mut model, dataset, chunk, cache, true, step_seed);
            let targets = assemble_targets(dataset, chunk);
            let (loss, d_pred) = cosine_loss_and_grad(&preds, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch} step {step_counter}"
                )));
            }
            match cache {
                Some(_) => model.backward_pooled(&d_pred),
                None => {
                    let windows = assemble_windows(dataset, chunk);
                    model.backward_raw(&windows, &d_pred, step_seed);
                }
            }
            optimizer.step(&mut model)?;
            model.after_optimizer_step()?;
            epoch_loss += loss * chunk.len() as f64;
            epoch_n += chunk.len();
        }
        if epoch_n == 0 {
            return Err(Error::InsufficientData(
                "no trainable batches (all chunks below 2 windows)".into(),
            ));
        }

        let valid = evaluate(&mut model, dataset, &valid_idx, config.batch_size, cache)?;
        let improved = stopper.observe(valid.mean_loss, &model, epoch);
        let _ = improved;
        curve.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / epoch_n as f64,
            valid_loss: valid.mean_loss,
            valid_cs: valid.mean_cs,
            frozen,
            frequencies: (model.frontend.filterbank.mode == FilterMode::Cfo)
                .then(|| model.frontend.filterbank.current_frequencies()),
            kernel_hash: model.frontend.filterbank.state_hash(),
        });
        if stopper.should_stop(config.patience) {
            curve.stopped_early = true;
            break;
        }
    }

    curve.best_epoch = stopper.best_epoch;
    let best_valid_loss = stopper.best_valid_loss;
    let best_epoch = stopper.best_epoch;
    let final_valid_cs = curve
        .epochs
        .iter()
        .find(|e| e.epoch == best_epoch)
        .map(|e| e.valid_cs)
        .unwrap_or(f64::NAN);
    let model = stopper
        .into_best()
        .ok_or_else(|| Error::InsufficientData("no epoch completed".into()))?;

    let manifest = RunManifest {
        model: model.config.clone(),
        train: config.clone(),
        dataset_hash: crate::data::dataset_hash(dataset),
        n_train_windows: train_idx.len(),
        n_valid_windows: valid_idx.len(),
        best_epoch,
        best_valid_loss,
        final_valid_cs,
        wall_clock_s: start.elapsed().as_secs_f64(),
        weight_decay_exemptions: vec![
            "biases".into(),
            "batch-norm scale/shift".into(),
            "cfo central frequencies".into(),
        ],
    };
    Ok(TrainOutcome {
        model,
        curve,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::mean_std;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn cosine_similarity_basics() {
        assert_eq!(
            cosine_similarity(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(
            cosine_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(),
            0.0
        );
        assert!(
            (cosine_similarity(&[1.0, 1.0, 0.0], &[2.0, 2.0, 0.0]).unwrap() - 1.0).abs() < 1e-12
        );
        assert_eq!(
            cosine_similarity(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]).unwrap(),
            -1.0
        );
        assert!(cosine_similarity(&[0.0; 3], &[1.0, 0.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0, 0.0, 0.0], &[0.0; 3]).is_err());
    }

    #[test]
    fn random_unit_vectors_have_expected_loss_one() {
        // Monte-Carlo oracle: mean CS of independent random 3-D unit vectors
        // is 0, so the expected cosine loss is 1.
        let mut rng = crate::util::seeded_rng(0, 1);
        let n = 10_000;
        let mut draws = Vec::with_capacity(n);
        let mut unit = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
            loop {
                let v = [
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-9 {
                    return [v[0] / norm, v[1] / norm, v[2] / norm];
                }
            }
        };
        for _ in 0..n {
            let y = unit(&mut rng);
            let yh = unit(&mut rng);
            draws.push(1.0 - cosine_similarity(&y, &yh).unwrap());
        }
        let (mean, _) = mean_std(&draws);
        assert!((mean - 1.0).abs() < 0.05, "mean loss {mean}");
    }

    #[test]
    fn loss_grad_matches_finite_difference() {
        let mut rng = crate::util::seeded_rng(2, 0);
        let b = 4;
        let mut preds = Array2::zeros((b, 3));
        let mut labels = Array2::zeros((b, 3));
        for i in 0..b {
            for a in 0..3 {
                preds[[i, a]] = rng.sample::<f64, _>(StandardNormal);
                labels[[i, a]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let targets = TargetsBatch {
            labels: labels.clone(),
            steps: Array3::zeros((b, N_TIMESTEPS, 3)),
        };
        let (_, grad) = cosine_loss_and_grad(&Predictions::Single(preds.clone()), &targets).unwrap();
        let Predictions::Single(grad) = grad else {
            unreachable!()
        };
        let h = 1e-7;
        for &(i, a) in &[(0usize, 0usize), (2, 1), (3, 2)] {
            let mut pp = preds.clone();
            pp[[i, a]] += h;
            let (lp, _) = cosine_loss_and_grad(&Predictions::Single(pp.clone()), &targets).unwrap();
            pp[[i, a]] -= 2.0 * h;
            let (lm, _) = cosine_loss_and_grad(&Predictions::Single(pp), &targets).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad[[i, a]] - fd).abs() / fd.abs().max(1e-8) < 1e-4,
                "grad[{i},{a}]"
            );
        }
    }

    #[test]
    fn positive_scaling_leaves_loss_unchanged() {
        let mut rng = crate::util::seeded_rng(3, 0);
        let b = 8;
        let mut preds = Array2::zeros((b, 3));
        let mut labels = Array2::zeros((b, 3));
        for i in 0..b {
            for a in 0..3 {
                preds[[i, a]] = rng.sample::<f64, _>(StandardNormal);
                labels[[i, a]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let targets = TargetsBatch {
            labels,
            steps: Array3::zeros((b, N_TIMESTEPS, 3)),
        };
        let (l1, _) = cosine_loss_and_grad(&Predictions::Single(preds.clone()), &targets).unwrap();
        let scaled = preds.mapv(|v| v * 37.5);
        let (l2, _) = cosine_loss_and_grad(&Predictions::Single(scaled), &targets).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let indices: Vec<usize> = (0..100).collect();
        let (train, valid) = split_train_valid(&indices, 0.1, 7, false).unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(valid.len(), 10);
        let mut all: Vec<usize> = train.iter().chain(valid.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, indices);
        // Same seed, same split.
        let (t2, v2) = split_train_valid(&indices, 0.1, 7, false).unwrap();
        assert_eq!(train, t2);
        assert_eq!(valid, v2);
    }

    #[test]
    fn chronological_split_takes_tail() {
        let indices: Vec<usize> = (0..20).collect();
        let (train, valid) = split_train_valid(&indices, 0.25, 0, true).unwrap();
        assert_eq!(valid, vec![15, 16, 17, 18, 19]);
        assert_eq!(train, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn stopper_counts_patience() {
        let model = crate::decoders::EndToEndModel::new(&crate::decoders::ModelConfig::new(
            crate::decoders::ModelFamily::Mlp,
            crate::decoders::FrontendMode::HandCrafted,
            0,
        ))
        .unwrap();
        let mut stopper = EarlyStopper::new();
        assert!(stopper.observe(1.0, &model, 1));
        for epoch in 2..=4 {
            assert!(!stopper.observe(1.0 + epoch as f64, &model, epoch));
        }
        assert_eq!(stopper.epochs_since_improvement, 3);
        assert!(stopper.should_stop(3));
        assert_eq!(stopper.best_epoch, 1);
    }
}
