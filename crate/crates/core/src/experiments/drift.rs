//! Filter-drift analysis: how far each filter moved in frequency between
//! two models (typically before and after training).

use serde::{Deserialize, Serialize};

use crate::decoders::EndToEndModel;
use crate::wavelet::{power_spectrum, FilterMode};
use crate::{Error, Result, N_KERNELS, N_WAVELETS};

/// One filter's frequency movement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterDriftEntry {
    pub index: usize,
    /// "wavelet" for CFO frequencies; "re"/"im" for spectral peaks of free
    /// or random kernels.
    pub part: String,
    pub initial_hz: f64,
    pub final_hz: f64,
    pub delta_hz: f64,
}

/// Per-filter drift plus the spectra needed for the before/after plots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterDriftReport {
    pub mode: FilterMode,
    pub entries: Vec<FilterDriftEntry>,
    pub mean_signed_delta_hz: f64,
    /// Magnitude spectra (per kernel) before and after, for plot emission.
    pub spectra_before: Vec<Vec<f64>>,
    pub spectra_after: Vec<Vec<f64>>,
}

/// Compares the frontends of two models sharing a frontend mode. CFO
/// frontends are compared by central frequency (Δf per wavelet); the others
/// by spectral peak of each of the 30 kernels.
pub fn analyze_filter_drift(
    before: &EndToEndModel,
    after: &EndToEndModel,
) -> Result<FilterDriftReport> {
    let fb_before = &before.frontend.filterbank;
    let fb_after = &after.frontend.filterbank;
    if fb_before.mode != fb_after.mode {
        return Err(Error::ModeMismatch(
            fb_before.mode.to_string(),
            fb_after.mode.to_string(),
        ));
    }
    let f_s = fb_before.f_s;
    let mut entries = Vec::new();
    let mut spectra_before = Vec::new();
    let mut spectra_after = Vec::new();
    match fb_before.mode {
        FilterMode::Cfo => {
            let f0 = fb_before.current_frequencies();
            let f1 = fb_after.current_frequencies();
            for m in 0..N_WAVELETS {
                entries.push(FilterDriftEntry {
                    index: m,
                    part: "wavelet".into(),
                    initial_hz: f0[m],
                    final_hz: f1[m],
                    delta_hz: f1[m] - f0[m],
                });
            }
        }
        _ => {
            for k in 0..N_KERNELS {
                let (index, part) = if k < N_WAVELETS {
                    (k, "re")
                } else {
                    (k - N_WAVELETS, "im")
                };
                let kb: Vec<f64> = fb_before.kernels.row(k).to_vec();
                let ka: Vec<f64> = fb_after.kernels.row(k).to_vec();
                let (sb, pb) = power_spectrum(&kb, f_s)?;
                let (sa, pa) = power_spectrum(&ka, f_s)?;
                entries.push(FilterDriftEntry {
                    index,
                    part: part.into(),
                    initial_hz: pb,
                    final_hz: pa,
                    delta_hz: pa - pb,
                });
                spectra_before.push(sb);
                spectra_after.push(sa);
            }
        }
    }
    let mean_signed_delta_hz =
        entries.iter().map(|e| e.delta_hz).sum::<f64>() / entries.len() as f64;
    Ok(FilterDriftReport {
        mode: fb_before.mode,
        entries,
        mean_signed_delta_hz,
        spectra_before,
        spectra_after,
    })
}

impl FilterDriftReport {
    /// Δf table CSV: (index, part, initial_hz, final_hz, delta_hz).
    pub fn write_delta_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "part", "initial_hz", "final_hz", "delta_hz"])?;
        for e in &self.entries {
            w.write_record([
                e.index.to_string(),
                e.part.clone(),
                format!("{:.9}", e.initial_hz),
                format!("{:.9}", e.final_hz),
                format!("{:.9}", e.delta_hz),
            ])?;
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }

    /// Spectra CSV: (kernel, part, bin_hz, power_before, power_after).
    pub fn write_spectra_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kernel", "part", "bin_hz", "magnitude_before", "magnitude_after"])?;
        let f_s = crate::SAMPLE_RATE_HZ;
        for (k, (sb, sa)) in self
            .spectra_before
            .iter()
            .zip(&self.spectra_after)
            .enumerate()
        {
            let n = 2 * (sb.len() - 1);
            let (index, part) = if k < N_WAVELETS {
                (k, "re")
            } else {
                (k - N_WAVELETS, "im")
            };
            for (bin, (b, a)) in sb.iter().zip(sa).enumerate() {
                w.write_record([
                    index.to_string(),
                    part.to_string(),
                    format!("{:.4}", bin as f64 * f_s / n as f64),
                    format!("{b:.9e}"),
                    format!("{a:.9e}"),
                ])?;
            }
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }
}
