//! Seed derivation, content hashing, and atomic file writes shared by the
//! data, training, and experiment layers.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

use crate::Result;

/// SplitMix64 step; used to derive independent sub-seeds from a root seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a stream label, so that
/// parallel or reordered consumers draw from independent streams.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Deterministic RNG for a (root seed, stream) pair.
pub fn seeded_rng(root: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// Incremental SHA-256 content hasher with a hex digest.
pub struct ContentHash {
    inner: Sha256,
}

impl ContentHash {
    pub fn new() -> Self {
        ContentHash {
            inner: Sha256::new(),
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn update_f32s(&mut self, values: &[f32]) {
        for v in values {
            self.inner.update(v.to_le_bytes());
        }
    }

    pub fn finish_hex(self) -> String {
        let digest = self.inner.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

impl Default for ContentHash {
    fn default() -> Self {
        Self::new()
    }
}

/// Writes `bytes` to `path` atomically (temp file + rename) so concurrent
/// harness runs never observe half-written results.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = dir.to_path_buf();
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    tmp.push(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Mean and population standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Centered moving average with the given odd window, shrinking the window
/// at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, 0));
    }

    #[test]
    fn hash_is_stable() {
        let mut h = ContentHash::new();
        h.update(b"WDEC");
        h.update_f32s(&[1.0, -2.5]);
        let hex = h.finish_hex();
        assert_eq!(hex.len(), 64);
        let mut h2 = ContentHash::new();
        h2.update(b"WDEC");
        h2.update_f32s(&[1.0, -2.5]);
        assert_eq!(hex, h2.finish_hex());
    }

    #[test]
    fn atomic_write_roundtrip() {
        let dir = std::env::temp_dir().join(format!("wavedec-util-{}", std::process::id()));
        let path = dir.join("x/out.txt");
        write_atomic(&path, b"payload").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"payload");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn moving_average_window3() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let ma = moving_average(&v, 3);
        assert_eq!(ma, vec![1.5, 2.0, 3.0, 3.5]);
    }
}
