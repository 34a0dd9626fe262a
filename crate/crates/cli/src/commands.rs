//! Subcommand implementations. Every command is deterministic given its
//! config and seed, embeds the resolved configuration in its outputs, and
//! writes files atomically.

use std::path::PathBuf;

use serde::Serialize;

use wavedec::data::{dataset_hash, generate_synthetic, load_dataset, save_dataset};
use wavedec::decoders::{
    load_checkpoint, save_checkpoint, EndToEndModel, FrontendMode, ModelConfig, ModelFamily,
};
use wavedec::experiments::{
    difference_curve, run_noise_sweep, run_size_sweep, summary_rows, write_difference_csv,
    write_summary_csv, write_sweep_curve_csv, analyze_filter_drift, ExperimentResult,
};
use wavedec::training::{evaluate, evaluate_per_session, train};
use wavedec::util::write_atomic;
use wavedec::wavelet::{export_filter_csv, FilterMode};

use crate::config::{load_config, resolve_out};

pub enum CmdError {
    Usage(String),
    Runtime(String),
}

impl From<anyhow::Error> for CmdError {
    fn from(e: anyhow::Error) -> Self {
        CmdError::Runtime(format!("{e:#}"))
    }
}

impl From<wavedec::Error> for CmdError {
    fn from(e: wavedec::Error) -> Self {
        CmdError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Runtime(e.to_string())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CmdError> {
    Err(CmdError::Usage(msg.into()))
}

fn load_config_usage(path: Option<&std::path::Path>) -> Result<crate::config::RunConfigFile, CmdError> {
    load_config(path).map_err(|e| CmdError::Usage(format!("{e:#}")))
}

pub fn gen_data(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    sessions: Option<usize>,
    duration: Option<f64>,
) -> Result<(), CmdError> {
    let mut file = load_config_usage(config.as_deref())?;
    // flag > file > default
    if seed.is_some() {
        file.data.seed = seed;
    }
    if sessions.is_some() {
        file.data.n_sessions = sessions;
    }
    if duration.is_some() {
        file.data.session_duration_s = duration;
    }
    let synth = file.data.resolve();
    let out = resolve_out(out, "dataset")?;
    let dataset = generate_synthetic(&synth)?;
    let hash = save_dataset(&dataset, &out)?;
    println!(
        "sessions={} windows={} skipped={} hash={}",
        dataset.sessions.len(),
        dataset.n_windows(),
        dataset.skipped_sessions,
        hash
    );
    println!("dataset written to {}", out.display());
    Ok(())
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub model: String,
    pub frontend: String,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub squeeze: bool,
    pub sessions: Option<usize>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patience: Option<usize>,
}

pub fn train_cmd(args: TrainArgs) -> Result<(), CmdError> {
    let family: ModelFamily = match args.model.parse() {
        Ok(f) => f,
        Err(e) => return usage(e.to_string()),
    };
    let frontend: FrontendMode = match args.frontend.parse() {
        Ok(f) => f,
        Err(e) => return usage(e.to_string()),
    };
    let file = load_config_usage(args.config.as_deref())?;
    let mut train_cfg = file.train.resolve();
    if let Some(v) = args.seed {
        train_cfg.seed = v;
    }
    if let Some(v) = args.max_epochs {
        train_cfg.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.patience {
        train_cfg.patience = v;
    }
    if args.squeeze {
        train_cfg.cfo_squeeze = true;
    }
    let out = resolve_out(args.out, "train")?;

    let dataset = load_dataset(&args.dataset)?;
    let n_sessions = args.sessions.unwrap_or(dataset.sessions.len());
    if n_sessions == 0 || n_sessions > dataset.sessions.len() {
        return usage(format!(
            "--sessions {n_sessions} outside 1..={}",
            dataset.sessions.len()
        ));
    }
    let windows = dataset.windows_of_sessions(0..n_sessions);

    let mut model_cfg = ModelConfig::new(family, frontend, train_cfg.seed);
    model_cfg.squeeze = train_cfg.cfo_squeeze;
    model_cfg.extractor_dropout = file.model.extractor_dropout;
    if let Some(v) = file.model.head_dropout {
        model_cfg.head_dropout = v;
    }
    let model = EndToEndModel::new(&model_cfg)?;
    let outcome = train(model, &dataset, &windows, &train_cfg, None)?;

    save_checkpoint(&outcome.model, outcome.manifest.best_epoch, &out)?;
    let mut curve = Vec::new();
    outcome.curve.write_csv(&mut curve)?;
    write_atomic(&out.join("curve.csv"), &curve)?;
    write_atomic(
        &out.join("run.json"),
        &serde_json::to_vec_pretty(&outcome.manifest).map_err(wavedec::Error::from)?,
    )?;
    println!(
        "best_epoch={} valid_cs={:.6}",
        outcome.manifest.best_epoch, outcome.manifest.final_valid_cs
    );
    println!("checkpoint written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepEcho {
    protocol: String,
    families: Vec<String>,
    frontend_modes: Vec<String>,
    seeds: Vec<u64>,
    sizes: Option<Vec<usize>>,
    fractions: Option<Vec<f64>>,
    dataset_hash: String,
    train: wavedec::training::TrainConfig,
}

pub fn sweep(
    protocol: String,
    dataset_path: PathBuf,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    jobs: usize,
) -> Result<(), CmdError> {
    if jobs == 0 {
        return usage("--jobs must be >= 1");
    }
    if protocol != "size" && protocol != "noise" {
        return usage(format!("unknown protocol `{protocol}` (size | noise)"));
    }
    let file = load_config_usage(config.as_deref())?;
    let families = file.experiment.families().map_err(|e| CmdError::Usage(e.to_string()))?;
    let modes = file
        .experiment
        .frontend_modes()
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    let train_cfg = file.train.resolve();
    let out = resolve_out(out, "sweep")?;
    let dataset = load_dataset(&dataset_path)?;

    let echo = SweepEcho {
        protocol: protocol.clone(),
        families: families.iter().map(|f| f.to_string()).collect(),
        frontend_modes: modes.iter().map(|m| m.to_string()).collect(),
        seeds: file
            .experiment
            .spec(families[0], modes[0], train_cfg.clone())
            .seeds
            .clone(),
        sizes: (protocol == "size").then(|| file.experiment.sizes()),
        fractions: (protocol == "noise").then(|| file.experiment.fractions()),
        dataset_hash: dataset_hash(&dataset),
        train: train_cfg.clone(),
    };
    write_atomic(
        &out.join("spec.json"),
        &serde_json::to_vec_pretty(&echo).map_err(wavedec::Error::from)?,
    )?;

    let mut all_results: Vec<ExperimentResult> = Vec::new();
    let mut per_cell: Vec<(ModelFamily, FrontendMode, Vec<ExperimentResult>)> = Vec::new();
    for &family in &families {
        for &mode in &modes {
            let spec = file.experiment.spec(family, mode, train_cfg.clone());
            let results = match protocol.as_str() {
                "size" => run_size_sweep(&spec, &dataset, &file.experiment.sizes(), Some(&out))?,
                _ => run_noise_sweep(&spec, &dataset, &file.experiment.fractions(), Some(&out))?,
            };
            let mut curve_csv = Vec::new();
            write_sweep_curve_csv(&results, &mut curve_csv)?;
            write_atomic(
                &out.join("plots")
                    .join(format!("{protocol}_{family}_{mode}.csv")),
                &curve_csv,
            )?;
            for r in &results {
                println!(
                    "{protocol} {family} {mode} x={} mean_cs={:.4} ± {:.4}",
                    r.size_or_fraction, r.mean_cs, r.std_cs
                );
            }
            per_cell.push((family, mode, results.clone()));
            all_results.extend(results);
        }
    }

    // Paired difference curves where both sides of a pair were run.
    for &family in &families {
        let find = |mode: FrontendMode| {
            per_cell
                .iter()
                .find(|(f, m, _)| *f == family && *m == mode)
                .map(|(_, _, r)| r.clone())
        };
        let pairs: [(&str, FrontendMode, FrontendMode); 2] = [
            (
                "e2e_minus_handcrafted",
                FrontendMode::E2eFree,
                FrontendMode::HandCrafted,
            ),
            ("cfo_minus_free", FrontendMode::E2eCfo, FrontendMode::E2eFree),
        ];
        for (label, a, b) in pairs {
            if let (Some(ra), Some(rb)) = (find(a), find(b)) {
                let points = difference_curve(&ra, &rb)?;
                let mut csv = Vec::new();
                write_difference_csv(&points, &mut csv)?;
                write_atomic(
                    &out.join("plots")
                        .join(format!("{protocol}_diff_{label}_{family}.csv")),
                    &csv,
                )?;
            }
        }
    }

    let rows = summary_rows(&all_results);
    let mut summary = Vec::new();
    write_summary_csv(&rows, &mut summary)?;
    write_atomic(&out.join("summary.csv"), &summary)?;
    println!("results written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct InspectSummary {
    mode: String,
    frequencies_before: Option<Vec<f64>>,
    frequencies_after: Option<Vec<f64>>,
    peaks_before_hz: Vec<f64>,
    peaks_after_hz: Vec<f64>,
    mean_signed_delta_hz: f64,
}

pub fn inspect_filters(
    before: PathBuf,
    after: PathBuf,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let out = resolve_out(out, "filters")?;
    let (model_before, _) = load_checkpoint(&before)?;
    let (model_after, _) = load_checkpoint(&after)?;
    let report = analyze_filter_drift(&model_before, &model_after)?;

    std::fs::create_dir_all(&out)?;
    let mut delta = Vec::new();
    report.write_delta_csv(&mut delta)?;
    write_atomic(&out.join("delta_f.csv"), &delta)?;
    if !report.spectra_before.is_empty() {
        let mut spectra = Vec::new();
        report.write_spectra_csv(&mut spectra)?;
        write_atomic(&out.join("spectra.csv"), &spectra)?;
    }
    let mut kb = Vec::new();
    export_filter_csv(&model_before.frontend.filterbank, &mut kb)?;
    write_atomic(&out.join("kernels_before.csv"), &kb)?;
    let mut ka = Vec::new();
    export_filter_csv(&model_after.frontend.filterbank, &mut ka)?;
    write_atomic(&out.join("kernels_after.csv"), &ka)?;

    let cfo = model_before.frontend.filterbank.mode == FilterMode::Cfo;
    let summary = InspectSummary {
        mode: model_before.frontend.filterbank.mode.to_string(),
        frequencies_before: cfo.then(|| model_before.frontend.filterbank.current_frequencies()),
        frequencies_after: cfo.then(|| model_after.frontend.filterbank.current_frequencies()),
        peaks_before_hz: report.entries.iter().map(|e| e.initial_hz).collect(),
        peaks_after_hz: report.entries.iter().map(|e| e.final_hz).collect(),
        mean_signed_delta_hz: report.mean_signed_delta_hz,
    };
    write_atomic(
        &out.join("summary.json"),
        &serde_json::to_vec_pretty(&summary).map_err(wavedec::Error::from)?,
    )?;
    println!(
        "mode={} entries={} mean_signed_delta_hz={:+.6}",
        summary.mode,
        report.entries.len(),
        report.mean_signed_delta_hz
    );
    println!("filter report written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint_epoch: usize,
    model: ModelConfig,
    dataset_hash: String,
    n_windows: usize,
    mean_cs: f64,
    mean_loss: f64,
    per_session: Vec<SessionEval>,
}

#[derive(Serialize)]
struct SessionEval {
    session_id: u32,
    n_windows: usize,
    mean_cs: f64,
}

pub fn eval(
    checkpoint: PathBuf,
    dataset_path: PathBuf,
    sessions_from: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let out = resolve_out(out, "eval.json")?;
    let (mut model, epoch) = load_checkpoint(&checkpoint)?;
    let dataset = load_dataset(&dataset_path)?;
    let from = sessions_from.unwrap_or(0);
    if from >= dataset.sessions.len() {
        return usage(format!(
            "--sessions-from {from} outside 0..{}",
            dataset.sessions.len()
        ));
    }
    let windows = dataset.windows_of_sessions(from..dataset.sessions.len());
    let report = evaluate(&mut model, &dataset, &windows, 200, None)?;
    let per_session = evaluate_per_session(&mut model, &dataset, &windows, 200, None)?
        .into_iter()
        .map(|(session_id, r)| SessionEval {
            session_id,
            n_windows: r.n_windows,
            mean_cs: r.mean_cs,
        })
        .collect();
    let output = EvalOutput {
        checkpoint_epoch: epoch,
        model: model.config.clone(),
        dataset_hash: dataset_hash(&dataset),
        n_windows: report.n_windows,
        mean_cs: report.mean_cs,
        mean_loss: report.mean_loss,
        per_session,
    };
    write_atomic(
        &out,
        &serde_json::to_vec_pretty(&output).map_err(wavedec::Error::from)?,
    )?;
    println!("mean_cs={:.6} n_windows={}", report.mean_cs, report.n_windows);
    println!("metrics written to {}", out.display());
    Ok(())
}
