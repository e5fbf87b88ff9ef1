//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//! `SUNET1\n`, u32 version, u8 input mode, u32 input size, u32 tensor count,
//! then per tensor: u32 name length, UTF-8 name, u8 kind, 4 x u32 dims,
//! f32 values.

use std::fs;
use std::path::Path;

use suction_core::unet::{ModelParams, NamedTensor, ParamKind};
use suction_core::{Dims, InputMode, Tensor4, UNet};

pub const MAGIC: &[u8; 7] = b"SUNET1\n";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt checkpoint field `{field}`: {detail}")]
    Corrupt { field: String, detail: String },
    #[error("checkpoint does not fit the network: {0}")]
    Model(#[from] suction_core::Error),
}

fn corrupt(field: impl Into<String>, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt { field: field.into(), detail: detail.into() }
}

const KINDS: [ParamKind; 6] = [
    ParamKind::Weight,
    ParamKind::Bias,
    ParamKind::Gamma,
    ParamKind::Beta,
    ParamKind::RunningMean,
    ParamKind::RunningVar,
];

fn kind_code(k: ParamKind) -> u8 {
    KINDS.iter().position(|&x| x == k).expect("listed kind") as u8
}

pub fn to_bytes(model: &UNet<f32>) -> Vec<u8> {
    let params = model.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.mode().code());
    out.extend_from_slice(&(model.input_size() as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in params.iter() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(kind_code(e.kind));
        for d in e.tensor.dims().as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(field, format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<UNet<f32>, CheckpointError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(corrupt("magic", "not a checkpoint file"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(corrupt("version", format!("unsupported version {version}")));
    }
    let code = cur.u8("mode")?;
    let mode = InputMode::from_code(code).ok_or_else(|| corrupt("mode", format!("unknown code {code}")))?;
    let input_size = cur.u32("input_size")? as usize;
    let count = cur.u32("tensor_count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let len = cur.u32(&format!("tensor[{i}].name_len"))? as usize;
        let name = std::str::from_utf8(cur.take(len, &format!("tensor[{i}].name"))?)
            .map_err(|e| corrupt(format!("tensor[{i}].name"), e.to_string()))?
            .to_string();
        let code = cur.u8(&format!("{name}.kind"))?;
        let kind = *KINDS.get(code as usize).ok_or_else(|| corrupt(format!("{name}.kind"), format!("unknown code {code}")))?;
        let mut d = [0usize; 4];
        for (j, slot) in d.iter_mut().enumerate() {
            *slot = cur.u32(&format!("{name}.dims[{j}]"))? as usize;
        }
        let dims = Dims::new(d[0], d[1], d[2], d[3]);
        let raw = cur.take(dims.len().saturating_mul(4), &format!("{name}.data"))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        entries.push(NamedTensor { name, kind, tensor: Tensor4::from_vec(dims, values)? });
    }
    if cur.pos != bytes.len() {
        return Err(corrupt("trailer", format!("{} unexpected bytes after the last tensor", bytes.len() - cur.pos)));
    }
    Ok(UNet::from_params_sized(mode, input_size, &ModelParams::new(entries)?)?)
}

pub fn save(path: &Path, model: &UNet<f32>) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model)).map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })
}

pub fn load(path: &Path) -> Result<UNet<f32>, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })?;
    from_bytes(&bytes)
}
