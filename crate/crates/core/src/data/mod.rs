//! Data model: sessions, overlapping windows, target trajectories, and the
//! electrode grid layout.
//!
//! A [`Session`] is a continuous multichannel recording at 586 Hz paired with
//! one desired 3-D direction per 0.1 s step. A [`Dataset`] slices sessions
//! into 1-second windows with 90% overlap (stride 59 samples) and pairs each
//! window with the 10 target steps ending inside it.

mod io;
mod perturb;
mod synth;

pub use io::{dataset_hash, load_dataset, save_dataset};
pub use perturb::{perturb_target_subset, perturb_targets};
pub use synth::{generate_synthetic, ridge_oracle, Band, RidgeOracleReport, SynthConfig};

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result, N_CHANNELS, N_TIMESTEPS, SAMPLE_RATE_HZ, WINDOW_SAMPLES, WINDOW_STRIDE};

/// Samples per 0.1 s target step (586 Hz / 10 Hz).
pub const SAMPLES_PER_TARGET_STEP: f64 = SAMPLE_RATE_HZ / 10.0;

/// One 1-second, 64-channel signal excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    /// Amplitudes, `[64 channels × 590 samples]`.
    pub samples: Array2<f32>,
    /// Sample offset of this window inside its parent session.
    pub window_start: usize,
    /// Parent session id.
    pub session_id: u32,
}

impl SignalWindow {
    pub fn validate(&self) -> Result<()> {
        if self.samples.dim() != (N_CHANNELS, WINDOW_SAMPLES) {
            return Err(Error::shape(
                "SignalWindow.samples",
                format!("{N_CHANNELS}x{WINDOW_SAMPLES}"),
                format!("{}x{}", self.samples.nrows(), self.samples.ncols()),
            ));
        }
        if !self.samples.iter().all(|v| v.is_finite()) {
            return Err(Error::format("SignalWindow.samples", "non-finite value"));
        }
        Ok(())
    }
}

/// Per-window desired directions, one per 0.1 s step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrajectory {
    /// Unit 3-vectors, `[10 timesteps × 3 axes]`.
    pub steps: [[f32; 3]; N_TIMESTEPS],
}

impl TargetTrajectory {
    /// The scalar window label: the final step's direction.
    pub fn window_label(&self) -> [f32; 3] {
        self.steps[N_TIMESTEPS - 1]
    }

    /// Each step must be unit-norm (±1e-6) or exactly zero (degenerate).
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            let norm = (s[0] as f64 * s[0] as f64
                + s[1] as f64 * s[1] as f64
                + s[2] as f64 * s[2] as f64)
                .sqrt();
            if norm != 0.0 && (norm - 1.0).abs() > 1e-6 {
                return Err(Error::format(
                    format!("TargetTrajectory.steps[{i}]"),
                    format!("norm {norm} is neither 0 nor 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Electrode grid positions: two 8×4 implants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    /// `channel -> (implant, row, col)`.
    positions: Vec<(usize, usize, usize)>,
}

impl GridLayout {
    /// Channels 0–31 on implant 0, 32–63 on implant 1, row-major 8×4 per
    /// implant.
    pub fn default_layout() -> Self {
        let positions = (0..N_CHANNELS)
            .map(|ch| {
                let implant = ch / 32;
                let within = ch % 32;
                (implant, within / 4, within % 4)
            })
            .collect();
        GridLayout { positions }
    }

    pub fn position(&self, channel: usize) -> (usize, usize, usize) {
        self.positions[channel]
    }

    /// Checks the 64 ↔ 2×8×4 bijection.
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != N_CHANNELS {
            return Err(Error::shape(
                "GridLayout.positions",
                N_CHANNELS.to_string(),
                self.positions.len().to_string(),
            ));
        }
        let mut seen = [false; N_CHANNELS];
        for &(implant, row, col) in &self.positions {
            if implant > 1 || row > 7 || col > 3 {
                return Err(Error::format(
                    "GridLayout.positions",
                    format!("position ({implant},{row},{col}) out of 2x8x4"),
                ));
            }
            let slot = implant * 32 + row * 4 + col;
            if seen[slot] {
                return Err(Error::format(
                    "GridLayout.positions",
                    format!("position ({implant},{row},{col}) assigned twice"),
                ));
            }
            seen[slot] = true;
        }
        Ok(())
    }
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::default_layout()
    }
}

/// A continuous recording with its per-0.1 s targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: u32,
    /// Raw signal, `[64 channels × T samples]` at 586 Hz.
    pub raw: Array2<f32>,
    /// Desired directions, `[⌈T/58.6⌉ × 3]`.
    pub targets: Array2<f32>,
    /// Seed this session was generated from (0 for non-synthetic data).
    pub seed: u64,
}

impl Session {
    pub fn n_samples(&self) -> usize {
        self.raw.ncols()
    }

    pub fn n_target_steps(&self) -> usize {
        self.targets.nrows()
    }

    /// Target steps required to cover `n_samples` of timeline.
    pub fn required_target_steps(n_samples: usize) -> usize {
        ((n_samples as f64) / SAMPLES_PER_TARGET_STEP).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw.nrows() != N_CHANNELS {
            return Err(Error::shape(
                "Session.raw",
                format!("{N_CHANNELS} channels"),
                format!("{} channels", self.raw.nrows()),
            ));
        }
        let needed = Self::required_target_steps(self.n_samples());
        if self.n_target_steps() < needed {
            return Err(Error::shape(
                "Session.targets",
                format!(">= {needed} steps"),
                format!("{} steps", self.n_target_steps()),
            ));
        }
        Ok(())
    }

    /// Target step index holding the direction at sample `t`.
    pub fn target_step_at(&self, sample: usize) -> usize {
        let idx = (sample as f64 / SAMPLES_PER_TARGET_STEP) as usize;
        idx.min(self.n_target_steps() - 1)
    }
}

/// Location of one window inside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    /// Index into `Dataset::sessions`.
    pub session_index: usize,
    /// Sample offset inside the session.
    pub start: usize,
}

/// Windowing output: window locations, their targets, and skip diagnostics.
#[derive(Debug, Clone)]
pub struct WindowingReport {
    pub windows: Vec<WindowRef>,
    pub targets: Vec<TargetTrajectory>,
    /// Sessions shorter than one window, skipped with a warning.
    pub skipped_sessions: usize,
}

/// Slices every session into stride-59 windows and pairs each with the 10
/// target steps ending at each 59-sample sub-block. Sessions shorter than
/// 590 samples are skipped and counted.
pub fn window_sessions(sessions: &[Session]) -> WindowingReport {
    let mut windows = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = 0usize;
    for (session_index, session) in sessions.iter().enumerate() {
        let t_total = session.n_samples();
        if t_total < WINDOW_SAMPLES {
            skipped += 1;
            continue;
        }
        let mut start = 0usize;
        while start + WINDOW_SAMPLES <= t_total {
            let mut steps = [[0.0f32; 3]; N_TIMESTEPS];
            for (k, step) in steps.iter_mut().enumerate() {
                let block_end = start + WINDOW_STRIDE * (k + 1) - 1;
                let target_idx = session.target_step_at(block_end);
                step[0] = session.targets[[target_idx, 0]];
                step[1] = session.targets[[target_idx, 1]];
                step[2] = session.targets[[target_idx, 2]];
            }
            windows.push(WindowRef {
                session_index,
                start,
            });
            targets.push(TargetTrajectory { steps });
            start += WINDOW_STRIDE;
        }
    }
    WindowingReport {
        windows,
        targets,
        skipped_sessions: skipped,
    }
}

/// Number of stride-59 windows in a session of `t` samples.
pub fn window_count(t: usize) -> usize {
    if t < WINDOW_SAMPLES {
        0
    } else {
        (t - WINDOW_SAMPLES) / WINDOW_STRIDE + 1
    }
}

/// Sessions plus the derived window/target pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sessions: Vec<Session>,
    pub windows: Vec<WindowRef>,
    /// Parallel to `windows`; owned separately so target perturbation can
    /// rewrite window targets without touching session data.
    pub targets: Vec<TargetTrajectory>,
    pub skipped_sessions: usize,
    /// Set by `perturb_targets`; perturbed datasets cannot be persisted
    /// because the container stores session-level targets only.
    pub perturbed: bool,
    /// Generator configuration, when synthetic.
    pub synth: Option<SynthConfig>,
}

impl Dataset {
    pub fn from_sessions(sessions: Vec<Session>, synth: Option<SynthConfig>) -> Self {
        let report = window_sessions(&sessions);
        Dataset {
            sessions,
            windows: report.windows,
            targets: report.targets,
            skipped_sessions: report.skipped_sessions,
            perturbed: false,
            synth,
        }
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// Raw samples of window `i` as a `[64 × 590]` view into session data.
    pub fn window_view(&self, i: usize) -> ArrayView2<'_, f32> {
        let w = self.windows[i];
        let session = &self.sessions[w.session_index];
        session
            .raw
            .slice(ndarray::s![.., w.start..w.start + WINDOW_SAMPLES])
    }

    /// Materializes window `i` as an owned [`SignalWindow`].
    pub fn signal_window(&self, i: usize) -> SignalWindow {
        let w = self.windows[i];
        SignalWindow {
            samples: self.window_view(i).to_owned(),
            window_start: w.start,
            session_id: self.sessions[w.session_index].id,
        }
    }

    /// Indices of all windows belonging to the given session range.
    pub fn windows_of_sessions(&self, sessions: std::ops::Range<usize>) -> Vec<usize> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(_, w)| sessions.contains(&w.session_index))
            .map(|(i, _)| i)
            .collect()
    }
}
