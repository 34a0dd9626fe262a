//! The two regression heads and the end-to-end model combining a filterbank
//! frontend with a head.

mod checkpoint;
mod cnn_lstm;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cnn_lstm::{CnnLstmMtDecoder, LSTM_INPUT};
pub use mlp::{MlpDecoder, MLP_INPUT};

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::nn::{ParamView, Params};
use crate::util::{derive_seed, seeded_rng};
use crate::wavelet::{build_filterbank_squeezed, FilterMode, Frontend, EXTRACTOR_DROPOUT};
use crate::{Error, Result, N_TIMESTEPS, SAMPLE_RATE_HZ};

/// Dropout stream id for head masks (disjoint from per-window ids 0..B).
const HEAD_MASK_STREAM: u64 = 0x4845_4144;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Mlp,
    CnnLstmMt,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Mlp => "mlp",
            ModelFamily::CnnLstmMt => "cnn-lstm-mt",
        })
    }
}

/// Reporting label for the frontend regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontendMode {
    HandCrafted,
    E2eFree,
    E2eCfo,
    E2eRandom,
}

impl FrontendMode {
    pub fn filter_mode(self) -> FilterMode {
        match self {
            FrontendMode::HandCrafted => FilterMode::Fixed,
            FrontendMode::E2eFree => FilterMode::Free,
            FrontendMode::E2eCfo => FilterMode::Cfo,
            FrontendMode::E2eRandom => FilterMode::Random,
        }
    }

    pub fn all() -> [FrontendMode; 4] {
        [
            FrontendMode::HandCrafted,
            FrontendMode::E2eFree,
            FrontendMode::E2eCfo,
            FrontendMode::E2eRandom,
        ]
    }
}

impl std::fmt::Display for FrontendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrontendMode::HandCrafted => "hand-crafted",
            FrontendMode::E2eFree => "e2e-free",
            FrontendMode::E2eCfo => "e2e-cfo",
            FrontendMode::E2eRandom => "e2e-random",
        })
    }
}

impl std::str::FromStr for FrontendMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hand-crafted" => Ok(FrontendMode::HandCrafted),
            "e2e-free" => Ok(FrontendMode::E2eFree),
            "e2e-cfo" => Ok(FrontendMode::E2eCfo),
            "e2e-random" => Ok(FrontendMode::E2eRandom),
            other => Err(Error::invalid_config(format!(
                "unknown frontend mode `{other}`"
            ))),
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelFamily::Mlp),
            "cnn-lstm-mt" => Ok(ModelFamily::CnnLstmMt),
            other => Err(Error::invalid_config(format!("unknown model `{other}`"))),
        }
    }
}

/// Everything needed to construct a model deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub frontend_mode: FrontendMode,
    /// CFO squeeze reparameterization (frequencies mapped to 0–1).
    #[serde(default)]
    pub squeeze: bool,
    /// Dropout between modulus and pooling. `None` picks the mode default:
    /// 0 for hand-crafted (features are precomputed), 0.5 for E2E modes.
    #[serde(default)]
    pub extractor_dropout: Option<f64>,
    #[serde(default = "default_head_dropout")]
    pub head_dropout: f64,
    pub seed: u64,
}

fn default_head_dropout() -> f64 {
    0.5
}

impl ModelConfig {
    pub fn new(family: ModelFamily, frontend_mode: FrontendMode, seed: u64) -> Self {
        ModelConfig {
            family,
            frontend_mode,
            squeeze: false,
            extractor_dropout: None,
            head_dropout: 0.5,
            seed,
        }
    }

    pub fn resolved_extractor_dropout(&self) -> f64 {
        self.extractor_dropout.unwrap_or(match self.frontend_mode {
            FrontendMode::HandCrafted => 0.0,
            _ => EXTRACTOR_DROPOUT,
        })
    }
}

#[derive(Debug, Clone)]
pub enum DecoderHead {
    Mlp(MlpDecoder),
    CnnLstmMt(CnnLstmMtDecoder),
}

/// Model outputs: one prediction per window (MLP) or one per timestep (MT).
#[derive(Debug, Clone)]
pub enum Predictions {
    Single(Array2<f64>),  // [B, 3]
    PerStep(Array3<f64>), // [B, 10, 3]
}

impl Predictions {
    pub fn batch_len(&self) -> usize {
        match self {
            Predictions::Single(a) => a.nrows(),
            Predictions::PerStep(a) => a.dim().0,
        }
    }

    /// Per-window 3-vector: the MLP output directly, or the final timestep
    /// of the multi-target head.
    pub fn window_predictions(&self) -> Array2<f64> {
        match self {
            Predictions::Single(a) => a.clone(),
            Predictions::PerStep(a) => {
                let (b, _, _) = a.dim();
                let mut out = Array2::zeros((b, 3));
                for bi in 0..b {
                    for axis in 0..3 {
                        out[[bi, axis]] = a[[bi, N_TIMESTEPS - 1, axis]];
                    }
                }
                out
            }
        }
    }
}

/// Test-time reduction of a multi-target output: the final timestep carries
/// the most causal information.
pub fn window_prediction(per_step: &Array2<f64>) -> [f64; 3] {
    let last = per_step.nrows() - 1;
    [
        per_step[[last, 0]],
        per_step[[last, 1]],
        per_step[[last, 2]],
    ]
}

/// A filterbank frontend plus a regression head.
#[derive(Debug, Clone)]
pub struct EndToEndModel {
    pub frontend: Frontend,
    pub head: DecoderHead,
    pub config: ModelConfig,
}

impl EndToEndModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        if config.squeeze && config.frontend_mode != FrontendMode::E2eCfo {
            return Err(Error::invalid_config(
                "squeeze requires the e2e-cfo frontend",
            ));
        }
        let filterbank = build_filterbank_squeezed(
            config.frontend_mode.filter_mode(),
            SAMPLE_RATE_HZ,
            derive_seed(config.seed, 0xFB),
            config.squeeze,
        )?;
        let frontend = Frontend::new(filterbank, config.resolved_extractor_dropout());
        let mut head_rng = seeded_rng(config.seed, 0x4EAD);
        let head = match config.family {
            ModelFamily::Mlp => {
                DecoderHead::Mlp(MlpDecoder::new(&mut head_rng, config.head_dropout))
            }
            ModelFamily::CnnLstmMt => {
                DecoderHead::CnnLstmMt(CnnLstmMtDecoder::new(&mut head_rng, config.head_dropout))
            }
        };
        Ok(EndToEndModel {
            frontend,
            head,
            config: config.clone(),
        })
    }

    fn head_forward(
        &mut self,
        features: &Array4<f64>,
        training: bool,
        step_seed: u64,
    ) -> Predictions {
        let mut rng = seeded_rng(step_seed, HEAD_MASK_STREAM);
        match &mut self.head {
            DecoderHead::Mlp(m) => Predictions::Single(m.forward(features, training, &mut rng)),
            DecoderHead::CnnLstmMt(m) => {
                Predictions::PerStep(m.forward(features, training, &mut rng))
            }
        }
    }

    fn head_backward(&mut self, d_pred: &Predictions) -> Array4<f64> {
        match (&mut self.head, d_pred) {
            (DecoderHead::Mlp(m), Predictions::Single(d)) => m.backward(d),
            (DecoderHead::CnnLstmMt(m), Predictions::PerStep(d)) => m.backward(d),
            _ => panic!("prediction gradient does not match head"),
        }
    }

    /// Full forward from raw windows `[B, 64, 590]`.
    pub fn forward_raw(
        &mut self,
        windows: &Array3<f64>,
        training: bool,
        step_seed: u64,
    ) -> Predictions {
        let features = self.frontend.forward(windows, training, step_seed);
        self.head_forward(&features, training, step_seed)
    }

    /// Backward from the prediction gradient; accumulates all parameter
    /// gradients. `windows` and `step_seed` must match the forward call.
    pub fn backward_raw(&mut self, windows: &Array3<f64>, d_pred: &Predictions, step_seed: u64) {
        let d_features = self.head_backward(d_pred);
        self.frontend.backward(windows, &d_features, step_seed);
    }

    /// Forward from cached pooled features `[B, 64, 15, 10]` (fixed
    /// frontend fast path).
    pub fn forward_pooled(
        &mut self,
        pooled: &Array4<f64>,
        training: bool,
        step_seed: u64,
    ) -> Predictions {
        let features = self.frontend.forward_pooled(pooled, training);
        self.head_forward(&features, training, step_seed)
    }

    pub fn backward_pooled(&mut self, d_pred: &Predictions) {
        let d_features = self.head_backward(d_pred);
        self.frontend.backward_pooled(&d_features);
    }

    /// Re-derives CFO kernels after an optimizer step (no-op otherwise).
    pub fn after_optimizer_step(&mut self) -> Result<()> {
        if self.frontend.filterbank.mode == FilterMode::Cfo {
            self.frontend.filterbank.regenerate_cfo()?;
        }
        Ok(())
    }

    /// Per-layer parameter table matching the architecture tables.
    pub fn count_parameters(&self) -> Vec<(String, usize)> {
        let mut rows = vec![
            (
                "frontend.conv_time".to_string(),
                self.frontend.filterbank.parameter_count(),
            ),
            (
                "frontend.batchnorm".to_string(),
                self.frontend.extractor.bn.parameter_count(),
            ),
        ];
        let head_rows = match &self.head {
            DecoderHead::Mlp(m) => m.parameter_table(),
            DecoderHead::CnnLstmMt(m) => m.parameter_table(),
        };
        rows.extend(
            head_rows
                .into_iter()
                .map(|(name, n)| (format!("head.{name}"), n)),
        );
        rows
    }
}

impl Params for EndToEndModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        let fe = if prefix.is_empty() {
            "frontend".to_string()
        } else {
            format!("{prefix}.frontend")
        };
        let hd = if prefix.is_empty() {
            "head".to_string()
        } else {
            format!("{prefix}.head")
        };
        self.frontend.visit_params(&fe, f);
        match &mut self.head {
            DecoderHead::Mlp(m) => m.visit_params(&hd, f),
            DecoderHead::CnnLstmMt(m) => m.visit_params(&hd, f),
        }
    }
}
