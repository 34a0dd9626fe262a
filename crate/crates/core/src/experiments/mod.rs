//! Offline experiment protocols: holdout, dataset-size sweep, and
//! label-noise sweep, plus per-cell result persistence with idempotent
//! resume.
//!
//! A *cell* is one training run: (protocol, model, frontend mode, sweep
//! coordinate, seed). Cells write a JSON manifest and a learning-curve CSV
//! atomically; re-invoking a sweep skips cells whose manifest already
//! matches the requested configuration and dataset.

mod drift;

pub use drift::{analyze_filter_drift, FilterDriftEntry, FilterDriftReport};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{dataset_hash, perturb_target_subset, Dataset};
use crate::decoders::{EndToEndModel, FrontendMode, ModelConfig, ModelFamily};
use crate::training::{evaluate, train, RunManifest, TrainConfig};
use crate::util::{derive_seed, mean_std, moving_average, write_atomic, ContentHash};
use crate::wavelet::FeatureCache;
use crate::{Error, Result};

/// Default per-configuration run count.
pub const DEFAULT_N_RUNS: usize = 5;
/// Default calibration partition: the first six sessions.
pub const DEFAULT_CALIBRATION_SESSIONS: usize = 6;

/// Sweep sizes: one session, then 2..22 with a step of 2 (12 points).
pub fn default_sweep_sizes() -> Vec<usize> {
    let mut v = vec![1];
    v.extend((1..=11).map(|k| 2 * k));
    v
}

/// Noise grid: 0..1 with a step of 0.2.
pub fn default_noise_fractions() -> Vec<f64> {
    (0..=5).map(|k| k as f64 * 0.2).collect()
}

/// One experiment configuration: model family × frontend mode × seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub family: ModelFamily,
    pub frontend_mode: FrontendMode,
    #[serde(default)]
    pub squeeze: bool,
    /// Seeds of the independent runs (default 0..5).
    pub seeds: Vec<u64>,
    pub calibration_sessions: usize,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn new(family: ModelFamily, frontend_mode: FrontendMode) -> Self {
        ExperimentSpec {
            family,
            frontend_mode,
            squeeze: false,
            seeds: (0..DEFAULT_N_RUNS as u64).collect(),
            calibration_sessions: DEFAULT_CALIBRATION_SESSIONS,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid_config("experiment needs >= 1 seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid_config("experiment seeds must be distinct"));
        }
        self.train.validate()
    }
}

/// One run's test score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub test_cs: f64,
}

/// Aggregated outcome of one experiment cell group (all seeds at one sweep
/// coordinate).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub protocol: String,
    pub family: ModelFamily,
    pub frontend_mode: FrontendMode,
    /// Session count (size sweep), noise fraction (noise sweep), or 0 for
    /// plain holdout.
    pub size_or_fraction: f64,
    pub runs: Vec<RunRecord>,
    pub mean_cs: f64,
    pub std_cs: f64,
    pub dataset_hash: String,
    pub test_hash: String,
}

impl ExperimentResult {
    fn from_runs(
        protocol: &str,
        spec: &ExperimentSpec,
        size_or_fraction: f64,
        runs: Vec<RunRecord>,
        dataset_hash: String,
        test_hash: String,
    ) -> Self {
        let values: Vec<f64> = runs.iter().map(|r| r.test_cs).collect();
        let (mean_cs, std_cs) = mean_std(&values);
        ExperimentResult {
            protocol: protocol.into(),
            family: spec.family,
            frontend_mode: spec.frontend_mode,
            size_or_fraction,
            runs,
            mean_cs,
            std_cs,
            dataset_hash,
            test_hash,
        }
    }

    /// Mean/std recomputed from the stored per-run values.
    pub fn recomputed_aggregate(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r.test_cs).collect::<Vec<_>>())
    }
}

/// Content hash of a test partition: dataset hash plus the window
/// coordinates and their (possibly rewritten) targets.
pub fn test_partition_hash(dataset: &Dataset, indices: &[usize]) -> String {
    let mut h = ContentHash::new();
    h.update(dataset_hash(dataset).as_bytes());
    for &i in indices {
        let w = dataset.windows[i];
        h.update(&(w.session_index as u64).to_le_bytes());
        h.update(&(w.start as u64).to_le_bytes());
        for step in &dataset.targets[i].steps {
            h.update_f32s(step);
        }
    }
    h.finish_hex()
}

/// Per-cell manifest written next to the learning curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellManifest {
    protocol: String,
    family: ModelFamily,
    frontend_mode: FrontendMode,
    size_or_fraction: f64,
    seed: u64,
    test_cs: f64,
    dataset_hash: String,
    test_hash: String,
    run: RunManifest,
}

fn cell_dir(
    out: &Path,
    protocol: &str,
    spec: &ExperimentSpec,
    x: f64,
    seed: u64,
) -> PathBuf {
    out.join(protocol)
        .join(format!("{}_{}", spec.family, spec.frontend_mode))
        .join(format!("x{x:0.2}"))
        .join(format!("seed{seed}"))
}

struct CellOutcome {
    test_cs: f64,
}

/// Trains and evaluates one cell, persisting and resuming when `out` is
/// given.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    protocol: &str,
    spec: &ExperimentSpec,
    train_set: &Dataset,
    train_windows: &[usize],
    eval_set: &Dataset,
    test_windows: &[usize],
    x: f64,
    seed: u64,
    cache: Option<&FeatureCache>,
    dataset_hash_hex: &str,
    test_hash: &str,
    out: Option<&Path>,
) -> Result<CellOutcome> {
    if let Some(out) = out {
        let dir = cell_dir(out, protocol, spec, x, seed);
        let manifest_path = dir.join("manifest.json");
        if let Ok(bytes) = std::fs::read(&manifest_path) {
            if let Ok(m) = serde_json::from_slice::<CellManifest>(&bytes) {
                if m.protocol == protocol
                    && m.family == spec.family
                    && m.frontend_mode == spec.frontend_mode
                    && m.size_or_fraction == x
                    && m.seed == seed
                    && m.dataset_hash == dataset_hash_hex
                    && m.test_hash == test_hash
                {
                    return Ok(CellOutcome { test_cs: m.test_cs });
                }
            }
        }
    }

    let mut model_cfg = ModelConfig::new(spec.family, spec.frontend_mode, seed);
    model_cfg.squeeze = spec.squeeze;
    let mut train_cfg = spec.train.clone();
    train_cfg.seed = seed;
    train_cfg.cfo_squeeze = spec.squeeze;
    let model = EndToEndModel::new(&model_cfg)?;
    let outcome = train(model, train_set, train_windows, &train_cfg, cache)?;
    let mut trained = outcome.model;
    let report = evaluate(
        &mut trained,
        eval_set,
        test_windows,
        train_cfg.batch_size,
        cache,
    )?;

    if let Some(out) = out {
        let dir = cell_dir(out, protocol, spec, x, seed);
        let manifest = CellManifest {
            protocol: protocol.into(),
            family: spec.family,
            frontend_mode: spec.frontend_mode,
            size_or_fraction: x,
            seed,
            test_cs: report.mean_cs,
            dataset_hash: dataset_hash_hex.into(),
            test_hash: test_hash.into(),
            run: outcome.manifest.clone(),
        };
        let mut curve_bytes = Vec::new();
        outcome.curve.write_csv(&mut curve_bytes)?;
        write_atomic(&dir.join("curve.csv"), &curve_bytes)?;
        write_atomic(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&manifest)?,
        )?;
    }
    Ok(CellOutcome {
        test_cs: report.mean_cs,
    })
}

/// Builds the pooled-feature cache once when the frontend is hand-crafted.
fn shared_cache(spec: &ExperimentSpec, dataset: &Dataset) -> Result<Option<FeatureCache>> {
    if spec.frontend_mode != FrontendMode::HandCrafted {
        return Ok(None);
    }
    let model = EndToEndModel::new(&ModelConfig::new(spec.family, spec.frontend_mode, 0))?;
    let all: Vec<usize> = (0..dataset.n_windows()).collect();
    Ok(Some(FeatureCache::build(&model.frontend, dataset, &all)?))
}

/// Holdout protocol: train on the calibration sessions (first six), test on
/// everything after them, repeated over the spec's seeds.
pub fn run_holdout(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    out: Option<&Path>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let n_cal = spec.calibration_sessions;
    if dataset.sessions.len() <= n_cal {
        return Err(Error::InsufficientData(format!(
            "holdout needs > {n_cal} sessions, dataset has {}",
            dataset.sessions.len()
        )));
    }
    let train_windows = dataset.windows_of_sessions(0..n_cal);
    let test_windows = dataset.windows_of_sessions(n_cal..dataset.sessions.len());
    let ds_hash = dataset_hash(dataset);
    let test_hash = test_partition_hash(dataset, &test_windows);
    let cache = shared_cache(spec, dataset)?;

    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        let cell = run_cell(
            "holdout",
            spec,
            dataset,
            &train_windows,
            dataset,
            &test_windows,
            0.0,
            seed,
            cache.as_ref(),
            &ds_hash,
            &test_hash,
            out,
        )?;
        runs.push(RunRecord {
            seed,
            test_cs: cell.test_cs,
        });
    }
    Ok(ExperimentResult::from_runs(
        "holdout", spec, 0.0, runs, ds_hash, test_hash,
    ))
}

/// Dataset-size sweep: for each size `s`, train on the first `s` sessions
/// and evaluate on the fixed test partition (sessions after `max(sizes)`).
pub fn run_size_sweep(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    sizes: &[usize],
    out: Option<&Path>,
) -> Result<Vec<ExperimentResult>> {
    spec.validate()?;
    if sizes.is_empty() {
        return Err(Error::invalid_config("size sweep needs >= 1 size"));
    }
    let max_size = *sizes.iter().max().unwrap();
    if dataset.sessions.len() <= max_size {
        return Err(Error::InsufficientData(format!(
            "size sweep up to {max_size} sessions needs > {max_size}, dataset has {}",
            dataset.sessions.len()
        )));
    }
    let test_windows = dataset.windows_of_sessions(max_size..dataset.sessions.len());
    let ds_hash = dataset_hash(dataset);
    let test_hash = test_partition_hash(dataset, &test_windows);
    let cache = shared_cache(spec, dataset)?;

    let mut results = Vec::new();
    for &size in sizes {
        let train_windows = dataset.windows_of_sessions(0..size);
        let mut runs = Vec::new();
        for &seed in &spec.seeds {
            let cell = run_cell(
                "size",
                spec,
                dataset,
                &train_windows,
                dataset,
                &test_windows,
                size as f64,
                seed,
                cache.as_ref(),
                &ds_hash,
                &test_hash,
                out,
            )?;
            runs.push(RunRecord {
                seed,
                test_cs: cell.test_cs,
            });
        }
        results.push(ExperimentResult::from_runs(
            "size",
            spec,
            size as f64,
            runs,
            ds_hash.clone(),
            test_hash.clone(),
        ));
    }
    Ok(results)
}

/// Label-noise sweep: perturbs a fraction of the *training* windows'
/// targets (the test partition is never touched), trains, and evaluates on
/// the clean test partition.
pub fn run_noise_sweep(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    fractions: &[f64],
    out: Option<&Path>,
) -> Result<Vec<ExperimentResult>> {
    spec.validate()?;
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid_config(format!(
                "noise fraction {f} outside [0, 1]"
            )));
        }
    }
    let n_cal = spec.calibration_sessions;
    if dataset.sessions.len() <= n_cal {
        return Err(Error::InsufficientData(format!(
            "noise sweep needs > {n_cal} sessions, dataset has {}",
            dataset.sessions.len()
        )));
    }
    let train_windows = dataset.windows_of_sessions(0..n_cal);
    let test_windows = dataset.windows_of_sessions(n_cal..dataset.sessions.len());
    let ds_hash = dataset_hash(dataset);
    let clean_test_hash = test_partition_hash(dataset, &test_windows);
    let cache = shared_cache(spec, dataset)?;

    let mut results = Vec::new();
    for &fraction in fractions {
        let mut runs = Vec::new();
        for &seed in &spec.seeds {
            let perturb_seed = derive_seed(seed, (fraction * 1e6) as u64);
            let perturbed =
                perturb_target_subset(dataset, &train_windows, fraction, perturb_seed)?;
            // The test partition must be byte-identical to the clean one.
            debug_assert_eq!(
                test_partition_hash(&perturbed, &test_windows),
                clean_test_hash
            );
            let cell = run_cell(
                "noise",
                spec,
                &perturbed,
                &train_windows,
                &perturbed,
                &test_windows,
                fraction,
                seed,
                cache.as_ref(),
                &ds_hash,
                &clean_test_hash,
                out,
            )?;
            runs.push(RunRecord {
                seed,
                test_cs: cell.test_cs,
            });
        }
        results.push(ExperimentResult::from_runs(
            "noise",
            spec,
            fraction,
            runs,
            ds_hash.clone(),
            clean_test_hash.clone(),
        ));
    }
    Ok(results)
}

/// Summary row for the top-level `summary.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub protocol: String,
    pub model: String,
    pub frontend_mode: String,
    pub size_or_fraction: f64,
    pub seed: u64,
    pub test_cs: f64,
}

pub fn summary_rows(results: &[ExperimentResult]) -> Vec<SummaryRow> {
    results
        .iter()
        .flat_map(|r| {
            r.runs.iter().map(move |run| SummaryRow {
                protocol: r.protocol.clone(),
                model: r.family.to_string(),
                frontend_mode: r.frontend_mode.to_string(),
                size_or_fraction: r.size_or_fraction,
                seed: run.seed,
                test_cs: run.test_cs,
            })
        })
        .collect()
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "protocol",
        "model",
        "frontend_mode",
        "size_or_fraction",
        "seed",
        "test_cs",
    ])?;
    for r in rows {
        w.write_record([
            r.protocol.clone(),
            r.model.clone(),
            r.frontend_mode.clone(),
            format!("{}", r.size_or_fraction),
            r.seed.to_string(),
            format!("{:.9}", r.test_cs),
        ])?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Mean ± std per sweep coordinate (plot data for the sweep figures).
pub fn write_sweep_curve_csv<W: std::io::Write>(
    results: &[ExperimentResult],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["size_or_fraction", "mean_cs", "std_cs", "n_runs"])?;
    for r in results {
        w.write_record([
            format!("{}", r.size_or_fraction),
            format!("{:.9}", r.mean_cs),
            format!("{:.9}", r.std_cs),
            r.runs.len().to_string(),
        ])?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// One point of a paired difference curve.
#[derive(Debug, Clone, Serialize)]
pub struct DifferencePoint {
    pub size_or_fraction: f64,
    /// Mean over seeds of the run-wise (matched-seed) difference a − b.
    pub mean_diff: f64,
    /// Moving average (window 3) of `mean_diff` along the sweep.
    pub moving_avg: f64,
}

/// Run-wise paired difference between two sweeps over the same coordinates
/// and seeds: `a` minus `b`, matched by seed before averaging.
pub fn difference_curve(
    a: &[ExperimentResult],
    b: &[ExperimentResult],
) -> Result<Vec<DifferencePoint>> {
    if a.len() != b.len() {
        return Err(Error::invalid_config(
            "difference curve needs equal-length sweeps",
        ));
    }
    let mut diffs = Vec::with_capacity(a.len());
    let mut xs = Vec::with_capacity(a.len());
    for (ra, rb) in a.iter().zip(b) {
        if ra.size_or_fraction != rb.size_or_fraction {
            return Err(Error::invalid_config(
                "difference curve needs matching sweep coordinates",
            ));
        }
        let mut paired = Vec::new();
        for run_a in &ra.runs {
            let run_b = rb
                .runs
                .iter()
                .find(|r| r.seed == run_a.seed)
                .ok_or_else(|| {
                    Error::invalid_config(format!(
                        "seed {} missing from paired sweep at x={}",
                        run_a.seed, ra.size_or_fraction
                    ))
                })?;
            paired.push(run_a.test_cs - run_b.test_cs);
        }
        let (mean, _) = mean_std(&paired);
        diffs.push(mean);
        xs.push(ra.size_or_fraction);
    }
    let smoothed = moving_average(&diffs, 3);
    Ok(xs
        .into_iter()
        .zip(diffs)
        .zip(smoothed)
        .map(|((x, d), m)| DifferencePoint {
            size_or_fraction: x,
            mean_diff: d,
            moving_avg: m,
        })
        .collect())
}

pub fn write_difference_csv<W: std::io::Write>(
    points: &[DifferencePoint],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["size_or_fraction", "mean_diff", "moving_avg_3"])?;
    for p in points {
        w.write_record([
            format!("{}", p.size_or_fraction),
            format!("{:.9}", p.mean_diff),
            format!("{:.9}", p.moving_avg),
        ])?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_size_default_is_twelve_points() {
        let sizes = default_sweep_sizes();
        assert_eq!(sizes, vec![1, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22]);
        assert_eq!(sizes.len(), 12);
    }

    #[test]
    fn noise_grid_default() {
        let f = default_noise_fractions();
        assert_eq!(f.len(), 6);
        assert_eq!(f[0], 0.0);
        assert!((f[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_rejects_duplicate_seeds() {
        let mut spec = ExperimentSpec::new(ModelFamily::Mlp, FrontendMode::HandCrafted);
        spec.seeds = vec![1, 1, 2];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn difference_of_identical_sweeps_is_zero() {
        let spec = ExperimentSpec::new(ModelFamily::Mlp, FrontendMode::HandCrafted);
        let runs: Vec<RunRecord> = (0..5)
            .map(|s| RunRecord {
                seed: s,
                test_cs: 0.1 * s as f64,
            })
            .collect();
        let results: Vec<ExperimentResult> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&x| {
                ExperimentResult::from_runs(
                    "size",
                    &spec,
                    x,
                    runs.clone(),
                    "h".into(),
                    "t".into(),
                )
            })
            .collect();
        let diff = difference_curve(&results, &results).unwrap();
        assert!(diff.iter().all(|p| p.mean_diff == 0.0 && p.moving_avg == 0.0));
    }

    #[test]
    fn aggregate_matches_recomputation() {
        let spec = ExperimentSpec::new(ModelFamily::Mlp, FrontendMode::HandCrafted);
        let runs: Vec<RunRecord> = [0.2, 0.3, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &cs)| RunRecord {
                seed: i as u64,
                test_cs: cs,
            })
            .collect();
        let r = ExperimentResult::from_runs("holdout", &spec, 0.0, runs, "h".into(), "t".into());
        let (mean, std) = r.recomputed_aggregate();
        assert_eq!(mean, r.mean_cs);
        assert_eq!(std, r.std_cs);
        assert!((mean - 0.3).abs() < 1e-12);
    }
}
