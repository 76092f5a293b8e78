//! `RFCK` checkpoint files: magic, u16 version, u32 header length, JSON
//! header, then every tensor as contiguous little-endian f32.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{ModelParams, NamedParam, NormStats};
use super::patch::CHANNELS;
use super::tape::DiffTensor;
use super::vit::Model;
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file, Reader};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const RUNNING_MEAN: &str = "input_norm.running_mean";
const RUNNING_VAR: &str = "input_norm.running_var";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the data section, in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A model plus whatever run metadata was stored beside it.
#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub extra: serde_json::Value,
}

pub fn encode_checkpoint<S: Scalar>(model: &Model<S>, extra: &serde_json::Value) -> Result<Vec<u8>> {
    let params = &model.params;
    let stats = |v: &[S]| Array2::from_shape_fn((CHANNELS, 1), |(c, _)| v[c]);
    let mut arrays: Vec<(&str, Array2<S>)> = params
        .tensors
        .iter()
        .map(|p| (p.name.as_str(), p.tensor.value.clone()))
        .collect();
    arrays.push((RUNNING_MEAN, stats(&params.norm_stats.mean)));
    arrays.push((RUNNING_VAR, stats(&params.norm_stats.var)));

    let mut offset = 0;
    let tensors = arrays
        .iter()
        .map(|(name, a)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: [a.nrows(), a.ncols()],
                offset,
            };
            offset += a.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        tensors,
        extra: extra.clone(),
    })?;

    let mut out = Vec::with_capacity(10 + header.len() + 4 * offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, a) in &arrays {
        for v in a.iter() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8], path: &Path) -> Result<Checkpoint<S>> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing RFCK magic"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let total: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
    let data = r.f32_vec(total)?;
    r.finish()?;

    let mut tensors = Vec::new();
    let mut stats = NormStats::default();
    let mut expected_offset = 0;
    for t in header.tensors {
        let len = t.shape[0] * t.shape[1];
        if t.offset != expected_offset {
            return Err(Error::format(path, format!("tensor {} at offset {} breaks contiguity", t.name, t.offset)));
        }
        expected_offset += len;
        let slice = &data[t.offset..t.offset + len];
        let value = Array2::from_shape_fn((t.shape[0], t.shape[1]), |(i, j)| S::of(slice[i * t.shape[1] + j] as f64));
        match t.name.as_str() {
            RUNNING_MEAN | RUNNING_VAR => {
                if t.shape != [CHANNELS, 1] {
                    return Err(Error::format(path, format!("{} has shape {:?}", t.name, t.shape)));
                }
                let v = value.iter().copied().collect();
                if t.name == RUNNING_MEAN {
                    stats.mean = v;
                } else {
                    stats.var = v;
                }
            }
            _ => tensors.push(NamedParam {
                name: t.name,
                tensor: DiffTensor::new(value),
            }),
        }
    }
    let params = ModelParams {
        tensors,
        norm_stats: stats,
    };
    let model = Model::from_params(header.config, params)?;
    Ok(Checkpoint {
        model,
        extra: header.extra,
    })
}

pub fn save_checkpoint<S: Scalar>(path: &Path, model: &Model<S>, extra: &serde_json::Value) -> Result<()> {
    atomic_write(path, &encode_checkpoint(model, extra)?)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    decode_checkpoint(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::MagPhaseTensor;

    fn small() -> ModelConfig {
        ModelConfig {
            dim: 16,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ..ModelConfig::desk()
        }
        .with_grid(9, 12)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut model = Model::<f32>::new(small(), 3).unwrap();
        model.params.norm_stats.mean = vec![0.25, -1.5];
        model.params.norm_stats.var = vec![2.0, 0.75];
        let extra = serde_json::json!({"epoch": 4});
        let bytes = encode_checkpoint(&model, &extra).unwrap();
        let back = decode_checkpoint::<f32>(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.extra, extra);
        assert_eq!(encode_checkpoint(&back.model, &extra).unwrap(), bytes);

        let x = MagPhaseTensor::new(
            Array2::from_shape_fn((9, 12), |(i, j)| (i + j) as f32 * 0.1),
            Array2::from_shape_fn((9, 12), |(i, j)| ((i * j) as f32 * 0.3).sin()),
        )
        .unwrap();
        assert_eq!(model.predict(std::slice::from_ref(&x)).unwrap(), back.model.predict(&[x]).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rfck");
        let model = Model::<f32>::new(small(), 1).unwrap();
        save_checkpoint(&path, &model, &serde_json::Value::Null).unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.model, model);
    }

    #[test]
    fn corrupt_files_rejected() {
        let model = Model::<f32>::new(small(), 1).unwrap();
        let bytes = encode_checkpoint(&model, &serde_json::Value::Null).unwrap();
        let p = Path::new("mem");
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bad, p).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint::<f32>(&long, p).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode_checkpoint::<f32>(&v2, p).is_err());
    }
}
