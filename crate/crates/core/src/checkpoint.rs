//! FTNT named-tensor archives.
//!
//! Little-endian throughout:
//!
//! ```text
//! "FTNT"  version:u32  count:u32
//! count × { name_len:u32  name:utf8  dtype:u8 (0=f32, 1=f64)  rank:u8
//!           dims:u64×rank  payload:dtype×prod(dims) }
//! ```
//!
//! Entries are written sorted by name, so equal parameter sets produce
//! identical files.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{FunnelError, Result};
use crate::model::FunnelModel;
use crate::params::ModelParams;
use crate::tensor::{DType, Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"FTNT";
pub const VERSION: u32 = 1;

/// Serialize `params`; an f32 tensor is stored as 4-byte floats.
pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().code());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match t.dtype() {
            DType::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.at.checked_add(n)?;
        let s = self.buf.get(self.at..end)?;
        self.at = end;
        Some(s)
    }

    fn header(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n)
            .ok_or_else(|| FunnelError::CorruptHeader(format!("file ends inside {what}")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.header(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.header(8, what)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.header(1, what)?[0])
    }
}

/// Parse an archive. Errors distinguish a wrong magic, an unknown version,
/// a malformed header, a payload cut short and a repeated name.
pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(FunnelError::BadMagic);
    }
    let mut r = Reader { buf, at: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FunnelError::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut params = ModelParams::new();
    for e in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.header(len, "tensor name")?)
            .map_err(|_| FunnelError::CorruptHeader(format!("entry {e}: name is not UTF-8")))?
            .to_string();
        let dtype = r.u8("dtype")?;
        let dtype = DType::from_code(dtype)
            .ok_or_else(|| FunnelError::CorruptHeader(format!("{name}: unknown dtype code {dtype}")))?;
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(FunnelError::CorruptHeader(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("dims")?;
            if d == 0 {
                return Err(FunnelError::CorruptHeader(format!("{name}: zero extent")));
            }
            elems = elems
                .checked_mul(d)
                .filter(|&n| n <= buf.len() as u64)
                .ok_or_else(|| FunnelError::TruncatedPayload(name.clone()))?;
            shape.push(d as usize);
        }
        let n = elems as usize;
        let bytes = r
            .take(n * dtype.size_bytes())
            .ok_or_else(|| FunnelError::TruncatedPayload(name.clone()))?;
        let data: Vec<f64> = match dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        let t = Tensor::new(&shape, data)?.to_dtype(dtype);
        params.insert(name, t)?;
    }
    if r.at != buf.len() {
        return Err(FunnelError::CorruptHeader(format!(
            "{} trailing bytes after {count} entries",
            buf.len() - r.at
        )));
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params)).map_err(|e| FunnelError::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let buf = std::fs::read(path).map_err(|e| FunnelError::io(path, e))?;
    from_bytes(&buf)
}

/// Write the archive to `ckpt` and the config as JSON to `config`.
pub fn save_model(model: &FunnelModel, ckpt: &Path, config: &Path) -> Result<()> {
    save(&model.params, ckpt)?;
    std::fs::write(config, model.config.to_json()).map_err(|e| FunnelError::io(config, e))
}

/// Load an archive and check it against the layout of `config`.
pub fn load_model(config: ModelConfig, ckpt: &Path) -> Result<FunnelModel> {
    FunnelModel::from_parts(config, load(ckpt)?)
}
