//! Synthetic surrogate sessions: unit-sphere random-walk targets encoded into
//! band-limited carrier envelopes over a 1/f noise floor.
//!
//! Channel `c` of a session is
//!
//! ```text
//! x_c(t) = Σ_b max(0, 1 + snr·⟨w[c,b,:], y(t)⟩) · carrier_{c,b}(t) + pink_c(t)
//! ```
//!
//! where `y(t)` is the target direction at time `t` (piecewise constant per
//! 0.1 s step), the carriers are unit-RMS narrowband noise centered on each
//! informative band, and the pink floor is unit-RMS `1/f^exponent`-amplitude
//! noise. Everything is a pure function of the config seed.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::util::seeded_rng;
use crate::{Error, Result, N_CHANNELS, SAMPLE_RATE_HZ};

use super::{Dataset, Session, SAMPLES_PER_TARGET_STEP};

/// Step scale of the unit-sphere target random walk (per 0.1 s).
pub const TARGET_WALK_STEP: f64 = 0.15;

const NYQUIST_HZ: f64 = SAMPLE_RATE_HZ / 2.0;

/// One informative frequency band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

/// Generator configuration. `channel_weights` couples each (channel, band)
/// pair to the target direction; `snr` scales that coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub session_duration_s: f64,
    pub informative_bands: Vec<Band>,
    /// Flattened `[64 × n_bands × 3]`, row-major.
    pub channel_weights: Vec<f64>,
    /// 1/f amplitude slope of the noise floor.
    pub noise_exponent: f64,
    pub snr: f64,
    pub seed: u64,
    /// Scale of the target random-walk step; 0.15 unless overridden.
    #[serde(default = "default_walk_step")]
    pub target_walk_step: f64,
}

fn default_walk_step() -> f64 {
    TARGET_WALK_STEP
}

impl SynthConfig {
    /// Config with channel weights drawn i.i.d. N(0, weight_scale²) from the
    /// seed, so the full weight tensor never has to be written by hand.
    pub fn with_random_weights(
        n_sessions: usize,
        session_duration_s: f64,
        informative_bands: Vec<Band>,
        snr: f64,
        noise_exponent: f64,
        weight_scale: f64,
        seed: u64,
    ) -> Self {
        let mut rng = seeded_rng(seed, 0xC0FF);
        let n = N_CHANNELS * informative_bands.len() * 3;
        let channel_weights = (0..n)
            .map(|_| weight_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        SynthConfig {
            n_sessions,
            session_duration_s,
            informative_bands,
            channel_weights,
            noise_exponent,
            snr,
            seed,
            target_walk_step: TARGET_WALK_STEP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::invalid_config("n_sessions must be >= 1"));
        }
        if !(self.session_duration_s > 0.0) {
            return Err(Error::invalid_config("session_duration_s must be > 0"));
        }
        for band in &self.informative_bands {
            if !(band.center_hz > 0.0 && band.center_hz < NYQUIST_HZ) {
                return Err(Error::invalid_config(format!(
                    "band center {} Hz outside (0, {NYQUIST_HZ}) (Nyquist of {SAMPLE_RATE_HZ} Hz)",
                    band.center_hz
                )));
            }
            if !(band.bandwidth_hz > 0.0) {
                return Err(Error::invalid_config("band bandwidth must be > 0"));
            }
        }
        let expected = N_CHANNELS * self.informative_bands.len() * 3;
        if self.channel_weights.len() != expected {
            return Err(Error::shape(
                "SynthConfig.channel_weights",
                expected.to_string(),
                self.channel_weights.len().to_string(),
            ));
        }
        if self.snr < 0.0 || !self.snr.is_finite() {
            return Err(Error::invalid_config("snr must be finite and >= 0"));
        }
        if self.noise_exponent < 0.0 {
            return Err(Error::invalid_config("noise_exponent must be >= 0"));
        }
        if !(self.target_walk_step > 0.0) {
            return Err(Error::invalid_config("target_walk_step must be > 0"));
        }
        Ok(())
    }

    pub fn n_samples_per_session(&self) -> usize {
        (self.session_duration_s * SAMPLE_RATE_HZ).round() as usize
    }

    /// Coupling vector for (channel, band).
    pub fn weight(&self, channel: usize, band: usize) -> [f64; 3] {
        let base = (channel * self.informative_bands.len() + band) * 3;
        [
            self.channel_weights[base],
            self.channel_weights[base + 1],
            self.channel_weights[base + 2],
        ]
    }

    /// True band envelope for (channel, band) given a target direction.
    pub fn envelope(&self, channel: usize, band: usize, y: [f64; 3]) -> f64 {
        let w = self.weight(channel, band);
        (1.0 + self.snr * (w[0] * y[0] + w[1] * y[1] + w[2] * y[2])).max(0.0)
    }
}

/// Smooth random walk on the unit sphere, one step per 0.1 s.
fn target_walk(rng: &mut impl Rng, n_steps: usize, step_scale: f64) -> Array2<f32> {
    let mut out = Array2::zeros((n_steps, 3));
    let mut y = [0.0f64; 3];
    loop {
        for v in y.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        if norm > 1e-9 {
            for v in y.iter_mut() {
                *v /= norm;
            }
            break;
        }
    }
    for i in 0..n_steps {
        out[[i, 0]] = y[0] as f32;
        out[[i, 1]] = y[1] as f32;
        out[[i, 2]] = y[2] as f32;
        let mut next = y;
        for v in next.iter_mut() {
            *v += step_scale * rng.sample::<f64, _>(StandardNormal);
        }
        let norm = (next[0] * next[0] + next[1] * next[1] + next[2] * next[2]).sqrt();
        if norm > 1e-9 {
            for v in next.iter_mut() {
                *v /= norm;
            }
            y = next;
        }
    }
    out
}

/// Draws a unit-RMS signal with amplitude spectrum `profile(f_hz)` and
/// uniform random phases, via an inverse transform.
fn spectral_noise(
    rng: &mut impl Rng,
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    n: usize,
    profile: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..half {
        let f_hz = k as f64 * SAMPLE_RATE_HZ / n as f64;
        let amp = profile(f_hz);
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let c = Complex64::from_polar(amp, phase);
        spectrum[k] = c;
        spectrum[n - k] = c.conj();
    }
    fft.process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for v in out.iter_mut() {
            *v /= rms;
        }
    }
    out
}

/// Generates a full synthetic dataset. Deterministic in `config.seed`;
/// sessions use independent derived seeds so generation order (or a parallel
/// schedule) cannot change the result.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let t_total = config.n_samples_per_session();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(t_total);

    let mut sessions = Vec::with_capacity(config.n_sessions);
    for s in 0..config.n_sessions {
        let mut rng = seeded_rng(config.seed, 1 + s as u64);
        let session_seed = rng.random::<u64>();
        let n_steps = Session::required_target_steps(t_total);
        let targets = target_walk(&mut rng, n_steps, config.target_walk_step);

        let mut raw = Array2::<f32>::zeros((N_CHANNELS, t_total));
        for ch in 0..N_CHANNELS {
            let mut acc = spectral_noise(&mut rng, &fft, t_total, |f| {
                f.powf(-config.noise_exponent)
            });
            for (b, band) in config.informative_bands.iter().enumerate() {
                let sigma = band.bandwidth_hz / 2.0;
                let carrier = spectral_noise(&mut rng, &fft, t_total, |f| {
                    let z = (f - band.center_hz) / sigma;
                    (-0.5 * z * z).exp()
                });
                let w = config.weight(ch, b);
                for (t, acc_t) in acc.iter_mut().enumerate() {
                    let step = ((t as f64 / SAMPLES_PER_TARGET_STEP) as usize).min(n_steps - 1);
                    let y = [
                        targets[[step, 0]] as f64,
                        targets[[step, 1]] as f64,
                        targets[[step, 2]] as f64,
                    ];
                    let a = (1.0 + config.snr * (w[0] * y[0] + w[1] * y[1] + w[2] * y[2])).max(0.0);
                    *acc_t += a * carrier[t];
                }
            }
            for (t, v) in acc.iter().enumerate() {
                raw[[ch, t]] = *v as f32;
            }
        }
        sessions.push(Session {
            id: s as u32,
            raw,
            targets,
            seed: session_seed,
        });
    }
    Ok(Dataset::from_sessions(sessions, Some(config.clone())))
}

/// Outcome of the closed-form ridge fit on the generator's own envelopes.
#[derive(Debug, Clone)]
pub struct RidgeOracleReport {
    /// Mean cosine similarity on the held-out windows.
    pub test_cs: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Closed-form ridge regression from the generator's true band envelopes to
/// the window labels. This is the independent decoding oracle: it sees the
/// noise-free envelopes the generator actually used, so it upper-bounds what
/// any model can recover from the rendered signal.
pub fn ridge_oracle(
    dataset: &Dataset,
    train_windows: &[usize],
    test_windows: &[usize],
    lambda: f64,
) -> Result<RidgeOracleReport> {
    let config = dataset
        .synth
        .as_ref()
        .ok_or_else(|| Error::invalid_config("ridge oracle needs a synthetic dataset"))?;
    let n_bands = config.informative_bands.len();
    let n_feat = N_CHANNELS * n_bands + 1; // + intercept
    if train_windows.is_empty() || test_windows.is_empty() {
        return Err(Error::EmptyPartition("ridge oracle".into()));
    }

    let features = |i: usize| -> Vec<f64> {
        let w = dataset.windows[i];
        let session = &dataset.sessions[w.session_index];
        // Envelope at the label step (end of the window).
        let label_sample = w.start + crate::WINDOW_SAMPLES - 1;
        let step = session.target_step_at(label_sample);
        let y = [
            session.targets[[step, 0]] as f64,
            session.targets[[step, 1]] as f64,
            session.targets[[step, 2]] as f64,
        ];
        let mut f = Vec::with_capacity(n_feat);
        for ch in 0..N_CHANNELS {
            for b in 0..n_bands {
                f.push(config.envelope(ch, b, y));
            }
        }
        f.push(1.0);
        f
    };

    // Normal equations: (XᵀX + λI) β = Xᵀy, solved by Cholesky.
    let mut xtx = vec![0.0f64; n_feat * n_feat];
    let mut xty = vec![0.0f64; n_feat * 3];
    for &i in train_windows {
        let f = features(i);
        let label = dataset.targets[i].window_label();
        for a in 0..n_feat {
            for b in a..n_feat {
                xtx[a * n_feat + b] += f[a] * f[b];
            }
            for axis in 0..3 {
                xty[a * 3 + axis] += f[a] * label[axis] as f64;
            }
        }
    }
    for a in 0..n_feat {
        for b in 0..a {
            xtx[a * n_feat + b] = xtx[b * n_feat + a];
        }
        xtx[a * n_feat + a] += lambda;
    }
    let beta = cholesky_solve(&xtx, &xty, n_feat, 3)?;

    let mut cs_sum = 0.0;
    let mut n_scored = 0usize;
    for &i in test_windows {
        let f = features(i);
        let mut pred = [0.0f64; 3];
        for (axis, p) in pred.iter_mut().enumerate() {
            for a in 0..n_feat {
                *p += f[a] * beta[a * 3 + axis];
            }
        }
        let label = dataset.targets[i].window_label();
        let ny = (label.iter().map(|v| *v as f64 * *v as f64).sum::<f64>()).sqrt();
        let np = (pred.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if ny > 0.0 && np > 0.0 {
            let dot: f64 = pred
                .iter()
                .zip(label.iter())
                .map(|(p, l)| p * *l as f64)
                .sum();
            cs_sum += dot / (ny * np);
            n_scored += 1;
        }
    }
    if n_scored == 0 {
        return Err(Error::EmptyPartition("ridge oracle test".into()));
    }
    Ok(RidgeOracleReport {
        test_cs: cs_sum / n_scored as f64,
        n_train: train_windows.len(),
        n_test: n_scored,
    })
}

/// Solves `A X = B` for symmetric positive-definite `A` (n×n), `B` (n×m).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NonFinite(
                        "ridge normal matrix not positive definite".into(),
                    ));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    // Forward: L z = b
    for col in 0..m {
        for i in 0..n {
            let mut sum = x[i * m + col];
            for k in 0..i {
                sum -= l[i * n + k] * x[k * m + col];
            }
            x[i * m + col] = sum / l[i * n + i];
        }
        // Back: Lᵀ x = z
        for i in (0..n).rev() {
            let mut sum = x[i * m + col];
            for k in i + 1..n {
                sum -= l[k * n + i] * x[k * m + col];
            }
            x[i * m + col] = sum / l[i * n + i];
        }
    }
    Ok(x)
}
