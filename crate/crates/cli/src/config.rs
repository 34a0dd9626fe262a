//! TOML run configuration: flat key-value sections mirroring the synthetic
//! generator, training, and experiment parameters. Unknown keys are hard
//! errors so typos never pass silently. Every field is optional with the
//! documented default; command-line flags override file values.

use anyhow::{bail, Context};
use serde::Deserialize;

use wavedec::data::{Band, SynthConfig};
use wavedec::decoders::{FrontendMode, ModelFamily};
use wavedec::experiments::{
    default_noise_fractions, default_sweep_sizes, ExperimentSpec, DEFAULT_CALIBRATION_SESSIONS,
    DEFAULT_N_RUNS,
};
use wavedec::training::TrainConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_sessions: Option<usize>,
    pub session_duration_s: Option<f64>,
    /// Informative bands as `[center_hz, bandwidth_hz]` pairs.
    pub bands: Option<Vec<[f64; 2]>>,
    pub snr: Option<f64>,
    pub noise_exponent: Option<f64>,
    pub weight_scale: Option<f64>,
    pub seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_sessions: None,
            session_duration_s: None,
            bands: None,
            snr: None,
            noise_exponent: None,
            weight_scale: None,
            seed: None,
        }
    }
}

impl DataSection {
    /// Desk-scale defaults: 24 sessions × 120 s, one informative band at
    /// 70 Hz (±10), snr 2, 1/f noise, seed 0.
    pub fn resolve(&self) -> SynthConfig {
        let bands: Vec<Band> = self
            .bands
            .clone()
            .unwrap_or_else(|| vec![[70.0, 20.0]])
            .into_iter()
            .map(|[center_hz, bandwidth_hz]| Band {
                center_hz,
                bandwidth_hz,
            })
            .collect();
        SynthConfig::with_random_weights(
            self.n_sessions.unwrap_or(24),
            self.session_duration_s.unwrap_or(120.0),
            bands,
            self.snr.unwrap_or(2.0),
            self.noise_exponent.unwrap_or(1.0),
            self.weight_scale.unwrap_or(0.5),
            self.seed.unwrap_or(0),
        )
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub pretrain_freeze_epochs: Option<usize>,
    pub e2e_epochs: Option<usize>,
    pub valid_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub cfo_squeeze: Option<bool>,
    pub chronological_split: Option<bool>,
}

impl TrainSection {
    pub fn resolve(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.pretrain_freeze_epochs {
            cfg.pretrain_freeze_epochs = v;
        }
        if let Some(v) = self.e2e_epochs {
            cfg.e2e_epochs = v;
        }
        if let Some(v) = self.valid_fraction {
            cfg.valid_fraction = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.cfo_squeeze {
            cfg.cfo_squeeze = v;
        }
        if let Some(v) = self.chronological_split {
            cfg.chronological_split = v;
        }
        cfg
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub extractor_dropout: Option<f64>,
    pub head_dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub families: Option<Vec<String>>,
    pub frontend_modes: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub calibration_sessions: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub fractions: Option<Vec<f64>>,
    pub squeeze: Option<bool>,
}

impl ExperimentSection {
    pub fn families(&self) -> anyhow::Result<Vec<ModelFamily>> {
        match &self.families {
            None => Ok(vec![ModelFamily::Mlp]),
            Some(list) => list
                .iter()
                .map(|s| s.parse::<ModelFamily>().map_err(anyhow::Error::from))
                .collect(),
        }
    }

    pub fn frontend_modes(&self) -> anyhow::Result<Vec<FrontendMode>> {
        match &self.frontend_modes {
            None => Ok(vec![FrontendMode::HandCrafted]),
            Some(list) => list
                .iter()
                .map(|s| s.parse::<FrontendMode>().map_err(anyhow::Error::from))
                .collect(),
        }
    }

    pub fn spec(
        &self,
        family: ModelFamily,
        frontend_mode: FrontendMode,
        train: TrainConfig,
    ) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(family, frontend_mode);
        spec.train = train;
        spec.squeeze = self.squeeze.unwrap_or(false);
        spec.seeds = self
            .seeds
            .clone()
            .unwrap_or_else(|| (0..DEFAULT_N_RUNS as u64).collect());
        spec.calibration_sessions = self
            .calibration_sessions
            .unwrap_or(DEFAULT_CALIBRATION_SESSIONS);
        spec
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sizes.clone().unwrap_or_else(default_sweep_sizes)
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.fractions.clone().unwrap_or_else(default_noise_fractions)
    }
}

/// Loads and parses a config file; `None` yields all defaults.
pub fn load_config(path: Option<&std::path::Path>) -> anyhow::Result<RunConfigFile> {
    match path {
        None => Ok(RunConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let cfg: RunConfigFile = toml::from_str(&text)
                .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", p.display()))?;
            Ok(cfg)
        }
    }
}

/// Output root: explicit flag, else $WAVEDEC_OUT_ROOT/<leaf>.
pub fn resolve_out(out: Option<std::path::PathBuf>, leaf: &str) -> anyhow::Result<std::path::PathBuf> {
    match out {
        Some(p) => Ok(p),
        None => match std::env::var_os("WAVEDEC_OUT_ROOT") {
            Some(root) => Ok(std::path::PathBuf::from(root).join(leaf)),
            None => bail!("no --out given and WAVEDEC_OUT_ROOT is not set"),
        },
    }
}
