//! Model checkpoints: a JSON manifest plus a little-endian f32 parameter
//! blob in documented layer order.
//!
//! Blob header: `"WCKP"` magic, u32 version, then the tensors listed in the
//! manifest, concatenated in order. For a CFO frontend the blob stores the
//! 15 central-frequency parameters, never the kernels — the kernels are
//! regenerated from frequencies on load, which keeps the wavelet-family
//! closure exact by construction. Batch-norm running statistics are part of
//! the state (evaluation needs them).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::write_atomic;
use crate::wavelet::FilterMode;
use crate::{Error, Result};

use super::{DecoderHead, EndToEndModel, ModelConfig};

const MAGIC: &[u8; 4] = b"WCKP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    model: ModelConfig,
    epoch: usize,
    /// Tensor names and lengths, in blob order.
    layers: Vec<LayerEntry>,
    /// Central frequencies in Hz (CFO checkpoints), for human inspection.
    frequencies: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    len: usize,
}

/// Copies out every state tensor in the documented order.
fn export_state(model: &EndToEndModel) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    let fb = &model.frontend.filterbank;
    match fb.mode {
        FilterMode::Fixed => {}
        FilterMode::Free | FilterMode::Random => {
            out.push((
                "frontend.kernels".into(),
                fb.kernels.iter().copied().collect(),
            ));
            out.push(("frontend.biases".into(), fb.biases.to_vec()));
        }
        FilterMode::Cfo => {
            out.push(("frontend.frequencies".into(), fb.cfo_params.clone()));
        }
    }
    let bn = &model.frontend.extractor.bn;
    out.push(("frontend.bn.scale".into(), bn.scale.to_vec()));
    out.push(("frontend.bn.shift".into(), bn.shift.to_vec()));
    out.push(("frontend.bn.running_mean".into(), bn.running_mean.to_vec()));
    out.push(("frontend.bn.running_var".into(), bn.running_var.to_vec()));
    match &model.head {
        DecoderHead::Mlp(m) => {
            out.push(("head.fc1.weight".into(), m.fc1.weight.iter().copied().collect()));
            out.push(("head.fc1.bias".into(), m.fc1.bias.to_vec()));
            out.push(("head.bn.scale".into(), m.bn.scale.to_vec()));
            out.push(("head.bn.shift".into(), m.bn.shift.to_vec()));
            out.push(("head.bn.running_mean".into(), m.bn.running_mean.to_vec()));
            out.push(("head.bn.running_var".into(), m.bn.running_var.to_vec()));
            out.push(("head.fc2.weight".into(), m.fc2.weight.iter().copied().collect()));
            out.push(("head.fc2.bias".into(), m.fc2.bias.to_vec()));
            out.push(("head.fc3.weight".into(), m.fc3.weight.iter().copied().collect()));
            out.push(("head.fc3.bias".into(), m.fc3.bias.to_vec()));
        }
        DecoderHead::CnnLstmMt(m) => {
            out.push(("head.conv1.weight".into(), m.conv1.weight.iter().copied().collect()));
            out.push(("head.conv1.bias".into(), m.conv1.bias.to_vec()));
            out.push(("head.bn.scale".into(), m.bn.scale.to_vec()));
            out.push(("head.bn.shift".into(), m.bn.shift.to_vec()));
            out.push(("head.bn.running_mean".into(), m.bn.running_mean.to_vec()));
            out.push(("head.bn.running_var".into(), m.bn.running_var.to_vec()));
            out.push(("head.conv2.weight".into(), m.conv2.weight.iter().copied().collect()));
            out.push(("head.conv2.bias".into(), m.conv2.bias.to_vec()));
            out.push(("head.lstm1.w_ih".into(), m.lstm1.w_ih.iter().copied().collect()));
            out.push(("head.lstm1.w_hh".into(), m.lstm1.w_hh.iter().copied().collect()));
            out.push(("head.lstm1.b_ih".into(), m.lstm1.b_ih.to_vec()));
            out.push(("head.lstm1.b_hh".into(), m.lstm1.b_hh.to_vec()));
            out.push(("head.lstm2.w_ih".into(), m.lstm2.w_ih.iter().copied().collect()));
            out.push(("head.lstm2.w_hh".into(), m.lstm2.w_hh.iter().copied().collect()));
            out.push(("head.lstm2.b_ih".into(), m.lstm2.b_ih.to_vec()));
            out.push(("head.lstm2.b_hh".into(), m.lstm2.b_hh.to_vec()));
        }
    }
    out
}

fn import_tensor(dst: &mut [f64], name: &str, src: &[f64]) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::shape(
            format!("checkpoint.{name}"),
            dst.len().to_string(),
            src.len().to_string(),
        ));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn import_state(model: &mut EndToEndModel, entries: &[(String, Vec<f64>)]) -> Result<()> {
    let expected = export_state(model);
    if expected.len() != entries.len() {
        return Err(Error::format(
            "checkpoint.layers",
            format!(
                "expected {} tensors for this architecture, got {}",
                expected.len(),
                entries.len()
            ),
        ));
    }
    for ((want_name, _), (got_name, values)) in expected.iter().zip(entries) {
        if want_name != got_name {
            return Err(Error::format(
                "checkpoint.layers",
                format!("expected tensor `{want_name}`, found `{got_name}`"),
            ));
        }
        let fb = &mut model.frontend.filterbank;
        match got_name.as_str() {
            "frontend.kernels" => {
                import_tensor(fb.kernels.as_slice_mut().unwrap(), got_name, values)?
            }
            "frontend.biases" => {
                import_tensor(fb.biases.as_slice_mut().unwrap(), got_name, values)?
            }
            "frontend.frequencies" => import_tensor(&mut fb.cfo_params, got_name, values)?,
            "frontend.bn.scale" => import_tensor(
                model.frontend.extractor.bn.scale.as_slice_mut().unwrap(),
                got_name,
                values,
            )?,
            "frontend.bn.shift" => import_tensor(
                model.frontend.extractor.bn.shift.as_slice_mut().unwrap(),
                got_name,
                values,
            )?,
            "frontend.bn.running_mean" => import_tensor(
                model
                    .frontend
                    .extractor
                    .bn
                    .running_mean
                    .as_slice_mut()
                    .unwrap(),
                got_name,
                values,
            )?,
            "frontend.bn.running_var" => import_tensor(
                model
                    .frontend
                    .extractor
                    .bn
                    .running_var
                    .as_slice_mut()
                    .unwrap(),
                got_name,
                values,
            )?,
            _ => {
                let slice: &mut [f64] = match (&mut model.head, got_name.as_str()) {
                    (DecoderHead::Mlp(m), "head.fc1.weight") => m.fc1.weight.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.fc1.bias") => m.fc1.bias.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.bn.scale") => m.bn.scale.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.bn.shift") => m.bn.shift.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.bn.running_mean") => {
                        m.bn.running_mean.as_slice_mut().unwrap()
                    }
                    (DecoderHead::Mlp(m), "head.bn.running_var") => {
                        m.bn.running_var.as_slice_mut().unwrap()
                    }
                    (DecoderHead::Mlp(m), "head.fc2.weight") => m.fc2.weight.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.fc2.bias") => m.fc2.bias.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.fc3.weight") => m.fc3.weight.as_slice_mut().unwrap(),
                    (DecoderHead::Mlp(m), "head.fc3.bias") => m.fc3.bias.as_slice_mut().unwrap(),
                    (DecoderHead::CnnLstmMt(m), "head.conv1.weight") => {
                        m.conv1.weight.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.conv1.bias") => {
                        m.conv1.bias.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.bn.scale") => {
                        m.bn.scale.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.bn.shift") => {
                        m.bn.shift.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.bn.running_mean") => {
                        m.bn.running_mean.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.bn.running_var") => {
                        m.bn.running_var.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.conv2.weight") => {
                        m.conv2.weight.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.conv2.bias") => {
                        m.conv2.bias.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm1.w_ih") => {
                        m.lstm1.w_ih.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm1.w_hh") => {
                        m.lstm1.w_hh.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm1.b_ih") => {
                        m.lstm1.b_ih.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm1.b_hh") => {
                        m.lstm1.b_hh.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm2.w_ih") => {
                        m.lstm2.w_ih.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm2.w_hh") => {
                        m.lstm2.w_hh.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm2.b_ih") => {
                        m.lstm2.b_ih.as_slice_mut().unwrap()
                    }
                    (DecoderHead::CnnLstmMt(m), "head.lstm2.b_hh") => {
                        m.lstm2.b_hh.as_slice_mut().unwrap()
                    }
                    _ => {
                        return Err(Error::format(
                            "checkpoint.layers",
                            format!("unknown tensor `{got_name}`"),
                        ))
                    }
                };
                import_tensor(slice, got_name, values)?;
            }
        }
    }
    Ok(())
}

/// Writes `dir/checkpoint.json` and `dir/params.bin`.
pub fn save_checkpoint(model: &EndToEndModel, epoch: usize, dir: &Path) -> Result<()> {
    let state = export_state(model);
    let manifest = Manifest {
        format: "WCKP".into(),
        version: VERSION,
        model: model.config.clone(),
        epoch,
        layers: state
            .iter()
            .map(|(name, values)| LayerEntry {
                name: name.clone(),
                len: values.len(),
            })
            .collect(),
        frequencies: (model.frontend.filterbank.mode == FilterMode::Cfo)
            .then(|| model.frontend.filterbank.current_frequencies()),
    };
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&VERSION.to_le_bytes());
    for (_, values) in &state {
        for v in values {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("checkpoint.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(&dir.join("params.bin"), &blob)?;
    Ok(())
}

/// Loads a checkpoint saved by [`save_checkpoint`]; returns the model and
/// the epoch it was captured at.
pub fn load_checkpoint(dir: &Path) -> Result<(EndToEndModel, usize)> {
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(dir.join("checkpoint.json"))?)?;
    if manifest.format != "WCKP" || manifest.version != VERSION {
        return Err(Error::format(
            "checkpoint.format",
            format!("{} v{}", manifest.format, manifest.version),
        ));
    }
    let blob = std::fs::read(dir.join("params.bin"))?;
    if blob.len() < 8 || &blob[0..4] != MAGIC {
        return Err(Error::format("params.magic", "bad magic bytes"));
    }
    let total: usize = manifest.layers.iter().map(|l| l.len).sum();
    let expected_len = 8 + 4 * total;
    if blob.len() != expected_len {
        return Err(Error::shape(
            "params.payload",
            format!("{expected_len} bytes"),
            format!("{} bytes", blob.len()),
        ));
    }
    let mut entries = Vec::with_capacity(manifest.layers.len());
    let mut offset = 8usize;
    for layer in &manifest.layers {
        let mut values = Vec::with_capacity(layer.len);
        for _ in 0..layer.len {
            values.push(f32::from_le_bytes(blob[offset..offset + 4].try_into().unwrap()) as f64);
            offset += 4;
        }
        entries.push((layer.name.clone(), values));
    }
    let mut model = EndToEndModel::new(&manifest.model)?;
    import_state(&mut model, &entries)?;
    // CFO kernels are derived state: regenerate from the stored frequencies.
    model.after_optimizer_step()?;
    Ok((model, manifest.epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{FrontendMode, ModelFamily};
    use ndarray::Array4;

    fn roundtrip(family: ModelFamily, mode: FrontendMode) {
        let mut cfg = ModelConfig::new(family, mode, 11);
        cfg.head_dropout = 0.25;
        let mut model = EndToEndModel::new(&cfg).unwrap();
        // Leave some non-default state behind.
        if mode == FrontendMode::E2eCfo {
            model.frontend.filterbank.cfo_params[3] += 2.5;
            model.frontend.filterbank.regenerate_cfo().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, 7, dir.path()).unwrap();
        let (loaded, epoch) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(epoch, 7);
        assert_eq!(loaded.config, model.config);

        // Evaluation outputs agree within f32 storage precision.
        let pooled = Array4::from_shape_fn((2, 64, 15, 10), |(b, c, m, t)| {
            ((b + c * 3 + m * 7 + t) % 11) as f64 / 11.0
        });
        let mut m1 = model.clone();
        let mut m2 = loaded;
        let a = m1.forward_pooled(&pooled, false, 0).window_predictions();
        let b = m2.forward_pooled(&pooled, false, 0).window_predictions();
        let max_err = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-4, "outputs drifted after roundtrip: {max_err}");
    }

    #[test]
    fn mlp_handcrafted_roundtrip() {
        roundtrip(ModelFamily::Mlp, FrontendMode::HandCrafted);
    }

    #[test]
    fn mlp_cfo_roundtrip_regenerates_kernels() {
        let mut cfg = ModelConfig::new(ModelFamily::Mlp, FrontendMode::E2eCfo, 3);
        cfg.head_dropout = 0.5;
        let mut model = EndToEndModel::new(&cfg).unwrap();
        model.frontend.filterbank.cfo_params[0] = 17.25;
        model.frontend.filterbank.regenerate_cfo().unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, 1, dir.path()).unwrap();
        let (loaded, _) = load_checkpoint(dir.path()).unwrap();
        // Kernels must exactly equal the generator output at the stored
        // (f32-quantized) frequencies.
        let mut regen = loaded.clone();
        regen.frontend.filterbank.regenerate_cfo().unwrap();
        assert_eq!(
            regen.frontend.filterbank.kernels,
            loaded.frontend.filterbank.kernels
        );
        assert!((loaded.frontend.filterbank.current_frequencies()[0] - 17.25).abs() < 1e-5);
    }

    #[test]
    fn truncated_blob_is_shape_error() {
        let cfg = ModelConfig::new(ModelFamily::Mlp, FrontendMode::HandCrafted, 0);
        let model = EndToEndModel::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, 0, dir.path()).unwrap();
        let path = dir.path().join("params.bin");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn cnn_free_roundtrip() {
        roundtrip(ModelFamily::CnnLstmMt, FrontendMode::E2eFree);
    }
}
