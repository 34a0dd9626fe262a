//! Dataset container: a JSON manifest plus one binary blob per session.
//!
//! Blob layout (all little-endian):
//!
//! ```text
//! "WDEC"  magic, 4 bytes
//! u32     format version (1)
//! u32     n_channels
//! u32     n_samples
//! u32     n_target_steps
//! f32[n_channels × n_samples]      raw signal, row-major
//! f32[n_target_steps × 3]          targets, row-major
//! ```

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::util::{write_atomic, ContentHash};
use crate::{Error, Result, N_CHANNELS};

use super::{Dataset, Session, SynthConfig};

const MAGIC: &[u8; 4] = b"WDEC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    n_sessions: usize,
    seed: u64,
    sessions: Vec<SessionEntry>,
    synth: Option<SynthConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionEntry {
    id: u32,
    n_channels: usize,
    n_samples: usize,
    n_target_steps: usize,
    seed: u64,
    file: String,
}

fn session_blob(session: &Session) -> Vec<u8> {
    let n_samples = session.n_samples();
    let n_steps = session.n_target_steps();
    let mut buf =
        Vec::with_capacity(20 + 4 * (N_CHANNELS * n_samples + n_steps * 3));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(N_CHANNELS as u32).to_le_bytes());
    buf.extend_from_slice(&(n_samples as u32).to_le_bytes());
    buf.extend_from_slice(&(n_steps as u32).to_le_bytes());
    for v in session.raw.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in session.targets.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Saves a dataset as `dir/manifest.json` + `dir/session_NNNN.bin`.
/// Perturbed datasets are rejected: the container stores session-level
/// targets, so window-level perturbation would be silently lost.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<String> {
    if dataset.perturbed {
        return Err(Error::invalid_config(
            "refusing to save a perturbed dataset: window-level target \
             perturbation is not representable in the container format",
        ));
    }
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.sessions.len());
    let mut hash = ContentHash::new();
    for (i, session) in dataset.sessions.iter().enumerate() {
        let file = format!("session_{i:04}.bin");
        let blob = session_blob(session);
        hash.update(&blob);
        write_atomic(&dir.join(&file), &blob)?;
        entries.push(SessionEntry {
            id: session.id,
            n_channels: N_CHANNELS,
            n_samples: session.n_samples(),
            n_target_steps: session.n_target_steps(),
            seed: session.seed,
            file,
        });
    }
    let manifest = Manifest {
        format: "WDEC".into(),
        version: VERSION,
        n_sessions: dataset.sessions.len(),
        seed: dataset.synth.as_ref().map(|s| s.seed).unwrap_or(0),
        sessions: entries,
        synth: dataset.synth.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), &json)?;
    Ok(hash.finish_hex())
}

fn read_u32(buf: &[u8], offset: usize, field: &str) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(offset..offset + 4)
        .ok_or_else(|| Error::format(field, "blob truncated"))?
        .try_into()
        .unwrap();
    Ok(u32::from_le_bytes(bytes))
}

/// Loads a dataset saved by [`save_dataset`], re-deriving the window list.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
    if manifest.format != "WDEC" {
        return Err(Error::format(
            "manifest.format",
            format!("expected \"WDEC\", got \"{}\"", manifest.format),
        ));
    }
    if manifest.version != VERSION {
        return Err(Error::format(
            "manifest.version",
            format!("unsupported version {}", manifest.version),
        ));
    }
    if manifest.sessions.len() != manifest.n_sessions {
        return Err(Error::shape(
            "manifest.n_sessions",
            manifest.n_sessions.to_string(),
            manifest.sessions.len().to_string(),
        ));
    }

    let mut sessions = Vec::with_capacity(manifest.n_sessions);
    for (i, entry) in manifest.sessions.iter().enumerate() {
        let blob = std::fs::read(dir.join(&entry.file))?;
        let field = format!("sessions[{i}]");
        if blob.len() < 20 {
            return Err(Error::format(&field, "blob shorter than header"));
        }
        if &blob[0..4] != MAGIC {
            return Err(Error::format(
                format!("{field}.magic"),
                "bad magic bytes, not a WDEC session blob",
            ));
        }
        let version = read_u32(&blob, 4, &field)?;
        if version != VERSION {
            return Err(Error::format(
                format!("{field}.version"),
                format!("unsupported version {version}"),
            ));
        }
        let n_channels = read_u32(&blob, 8, &field)? as usize;
        let n_samples = read_u32(&blob, 12, &field)? as usize;
        let n_steps = read_u32(&blob, 16, &field)? as usize;
        if n_channels != entry.n_channels
            || n_samples != entry.n_samples
            || n_steps != entry.n_target_steps
        {
            return Err(Error::shape(
                format!("{field}.header"),
                format!(
                    "{}x{} + {} steps (manifest)",
                    entry.n_channels, entry.n_samples, entry.n_target_steps
                ),
                format!("{n_channels}x{n_samples} + {n_steps} steps (blob)"),
            ));
        }
        if n_channels != N_CHANNELS {
            return Err(Error::shape(
                format!("{field}.n_channels"),
                N_CHANNELS.to_string(),
                n_channels.to_string(),
            ));
        }
        let expected_len = 20 + 4 * (n_channels * n_samples + n_steps * 3);
        if blob.len() != expected_len {
            return Err(Error::shape(
                format!("{field}.payload"),
                format!("{expected_len} bytes"),
                format!("{} bytes", blob.len()),
            ));
        }
        let mut raw = Array2::<f32>::zeros((n_channels, n_samples));
        let mut offset = 20usize;
        for v in raw.iter_mut() {
            *v = f32::from_le_bytes(blob[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
        let mut targets = Array2::<f32>::zeros((n_steps, 3));
        for v in targets.iter_mut() {
            *v = f32::from_le_bytes(blob[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
        if !raw.iter().all(|v| v.is_finite()) || !targets.iter().all(|v| v.is_finite()) {
            return Err(Error::format(
                format!("{field}.payload"),
                "non-finite value in payload",
            ));
        }
        sessions.push(Session {
            id: entry.id,
            raw,
            targets,
            seed: entry.seed,
        });
    }
    Ok(Dataset::from_sessions(sessions, manifest.synth))
}

/// Content hash of a dataset: SHA-256 over the session blobs, identical to
/// the hash reported by [`save_dataset`].
pub fn dataset_hash(dataset: &Dataset) -> String {
    let mut hash = ContentHash::new();
    for session in &dataset.sessions {
        hash.update(&session_blob(session));
    }
    hash.finish_hex()
}
