//! Binary checkpoint format, version 1. All integers little-endian.
//!
//! ```text
//! magic      6 bytes  "ISLCNN"
//! version    u8       1
//! labels     u32 count, then per label: u32 byte length + UTF-8 name
//! config     u32 byte length + UTF-8 JSON of the architecture
//! tensors    u32 count, then per tensor:
//!              u32 name length + UTF-8 name
//!              u32 rank + rank × u32 dims
//!              product(dims) × f32
//! ```

use std::fs;
use std::path::Path;

use super::{build_isl_cnn, IslCnnConfig, Model, ModelError, Result};
use crate::data::LabelMap;

pub const MAGIC: &[u8; 6] = b"ISLCNN";
pub const VERSION: u8 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| ModelError::Malformed(format!("{v} does not fit in 32 bits")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(buf, s.len())?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes a model and its label map.
pub fn write_checkpoint(model: &Model, labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.len() != model.num_classes() {
        return Err(ModelError::Config(format!(
            "label map has {} classes, model outputs {}",
            labels.len(),
            model.num_classes()
        )));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    put_u32(&mut buf, labels.len())?;
    for name in labels.names() {
        put_str(&mut buf, name)?;
    }
    let config =
        serde_json::to_string(model.config()).map_err(|e| ModelError::Malformed(e.to_string()))?;
    put_str(&mut buf, &config)?;
    let params = model.network().named_params();
    put_u32(&mut buf, params.len())?;
    for (name, p) in params {
        put_str(&mut buf, &name)?;
        put_u32(&mut buf, p.shape().len())?;
        for &d in p.shape() {
            put_u32(&mut buf, d)?;
        }
        buf.reserve(p.value.len() * 4);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save_checkpoint(model: &Model, labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(model, labels)?;
    fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ModelError::Truncated {
                offset: self.pos,
                needed: n,
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| ModelError::Malformed("string is not UTF-8".into()))
    }
}

/// Parses checkpoint bytes back into a model and its label map.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(Model, LabelMap)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| ModelError::BadMagic)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let n_labels = r.u32()?;
    let names = (0..n_labels)
        .map(|_| r.string())
        .collect::<Result<Vec<_>>>()?;
    let labels = LabelMap::new(names).map_err(|e| ModelError::Malformed(e.to_string()))?;
    let config: IslCnnConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| ModelError::Malformed(format!("config: {e}")))?;
    if config.num_classes != labels.len() {
        return Err(ModelError::Malformed(format!(
            "config declares {} classes but {} labels are stored",
            config.num_classes,
            labels.len()
        )));
    }
    let mut model = build_isl_cnn(&config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .network()
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.shape().to_vec()))
        .collect();
    let count = r.u32()?;
    if count != expected.len() {
        return Err(ModelError::TensorCount {
            expected: expected.len(),
            found: count,
        });
    }
    let mut params = model.network_mut().params_mut();
    let mut seen = vec![false; expected.len()];
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let idx = expected
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| ModelError::UnknownTensor(name.clone()))?;
        if seen[idx] {
            return Err(ModelError::Malformed(format!(
                "tensor {name} appears twice"
            )));
        }
        seen[idx] = true;
        if shape != expected[idx].1 {
            return Err(ModelError::ShapeMismatch {
                name,
                expected: expected[idx].1.clone(),
                found: shape,
            });
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        for (dst, chunk) in params[idx]
            .value
            .data_mut()
            .iter_mut()
            .zip(raw.chunks_exact(4))
        {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((model, labels))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, LabelMap)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&bytes)
}
