//! `O2VC` checkpoint, little-endian:
//!
//! ```text
//! "O2VC"  u16 version (1)  u32 n  n bytes of config JSON
//! u32 tensor_count
//! tensor_count x (u32 ndim, ndim x u32 dims, prod(dims) x f32)
//! ```
//!
//! Parameters are stored as f32, so a model survives a save/load cycle
//! exactly only when its weights are already f32-representable.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use super::network::{ClassifierModel, Tensor};
use super::{ClassifierConfig, ClassifierError};

pub const O2VC_MAGIC: &[u8; 4] = b"O2VC";
pub const O2VC_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &ClassifierModel) -> Vec<u8> {
    let json = serde_json::to_vec(&model.config).expect("config serializes");
    let mut out = Vec::with_capacity(16 + json.len() + model.param_count() * 4);
    out.extend_from_slice(O2VC_MAGIC);
    out.extend_from_slice(&O2VC_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for t in &model.params {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ClassifierError::Malformed(format!("file ends inside {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ClassifierModel, ClassifierError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != O2VC_MAGIC {
        return Err(ClassifierError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != O2VC_VERSION {
        return Err(ClassifierError::UnsupportedVersion(version));
    }
    let n = r.u32("config length")? as usize;
    let config: ClassifierConfig = serde_json::from_slice(r.take(n, "config")?)
        .map_err(|e| ClassifierError::Malformed(format!("config JSON: {e}")))?;
    config.validate()?;

    let expected = ClassifierModel::expected_shapes(&config);
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(ClassifierError::ShapeMismatch(format!(
            "{count} tensors stored, config implies {}",
            expected.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for (i, want) in expected.into_iter().enumerate() {
        let ndim = r.u32("tensor header")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32("tensor shape").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape != want {
            return Err(ClassifierError::ShapeMismatch(format!(
                "tensor {i} has shape {shape:?}, config implies {want:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        params.push(Tensor { shape, data });
    }
    if r.pos != bytes.len() {
        return Err(ClassifierError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(ClassifierModel { config, params })
}

pub fn write_checkpoint(path: &Path, model: &ClassifierModel) -> Result<(), ClassifierError> {
    let io = |source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io)?;
    f.write_all(&encode_checkpoint(model)).map_err(io)?;
    f.sync_all().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<ClassifierModel, ClassifierError> {
    let bytes = fs::read(path).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
