//! Single-file model snapshots: an 8-byte magic, a length-prefixed JSON
//! manifest, then every parameter as little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{build_model, Model, ModelSpec};
use crate::tensor::{Prng, Tensor};

pub const MAGIC: &[u8; 8] = b"DYNCONV1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload following the manifest.
    pub offset: usize,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelSpec,
    /// 1-based epoch the snapshot was taken after (0 before training).
    pub epoch: usize,
    pub val_metric: Option<f64>,
    pub params: Vec<ParamEntry>,
}

pub fn encode_checkpoint(model: &Model, epoch: usize, val_metric: Option<f64>) -> Result<Vec<u8>> {
    let mut params = Vec::new();
    let mut payload = Vec::new();
    for (_, p) in model.params.iter() {
        params.push(ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset: payload.len(), frozen: p.frozen });
        for &v in p.value.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest { model: model.spec.clone(), epoch, val_metric, params })?;
    let mut out = Vec::with_capacity(12 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &Model, epoch: usize, val_metric: Option<f64>) -> Result<()> {
    fs::write(path, encode_checkpoint(model, epoch, val_metric)?)?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, Manifest)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < len {
        return Err(Error::Format(format!("manifest needs {len} bytes, file has {}", body.len())));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..len])?;
    let payload = &body[len..];
    let mut model = build_model(&manifest.model, &mut Prng::new(0))?;
    if manifest.params.len() != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model {} expects {}",
            manifest.params.len(),
            manifest.model.preset,
            model.params.len()
        )));
    }
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        let raw = payload.get(entry.offset..end).ok_or_else(|| {
            Error::Format(format!("parameter {} needs bytes {}..{end}, payload has {}", entry.name, entry.offset, payload.len()))
        })?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        model.params.set(&entry.name, Tensor::new(entry.shape.clone(), data)?)?;
        let id = model.params.find(&entry.name).expect("just set");
        model.params.set_frozen(id, entry.frozen);
    }
    Ok((model, manifest))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Manifest)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Preset, Task};

    fn model() -> Model {
        let spec = ModelSpec::new(Preset::LocalSoft, Task::Classify, &[1, 8, 8], 3).with_width(0.25).with_depth(1);
        build_model(&spec, &mut Prng::new(5)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = model();
        let id = m.params.find("stem.weight").unwrap();
        m.params.set_frozen(id, true);
        let bytes = encode_checkpoint(&m, 3, Some(0.75)).unwrap();
        assert_eq!(&bytes[..8], b"DYNCONV1");
        let (back, manifest) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(manifest.epoch, 3);
        assert_eq!(manifest.val_metric, Some(0.75));
        for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.frozen, b.frozen);
        }
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let bytes = encode_checkpoint(&model(), 0, None).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }
}
