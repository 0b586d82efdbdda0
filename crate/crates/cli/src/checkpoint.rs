//! Binary checkpoint format.
//!
//! ```text
//! magic     "CATCKPT1"             8 bytes
//! version   u32 LE                 currently 1
//! count     u32 LE
//! entries   count times:
//!             name_len u32, name (UTF-8), rank u32, rank × u32 extents,
//!             product(extents) × f32 LE
//! crc       u32 LE                 CRC-32 of every preceding byte
//! ```
//!
//! Values are always stored as f32. Loading writes into an already
//! initialized store so parameter roles come from the model definition.

use std::path::Path;

use cat_core::backbone::ParamStore;
use cat_core::{Element, Tensor};

use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 8] = b"CATCKPT1";
pub const VERSION: u32 = 1;

pub fn encode<T: Element>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, param) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = param.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in param.value.data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CliError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < MAGIC.len() + 12 {
        return Err(CliError::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(CliError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CliError::Checkpoint(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CliError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CliError::Checkpoint(format!("`{name}` has an impossible shape {shape:?}")))?;
        let data = r
            .take(numel, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push((name, Tensor::from_vec(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(CliError::Checkpoint(format!(
            "{} unexpected bytes after the last entry",
            body.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Overwrites every value in `store` from the checkpoint. The names must
/// match exactly and every shape must agree.
pub fn apply<T: Element>(store: &mut ParamStore<T>, entries: Vec<(String, Tensor<f32>)>) -> Result<()> {
    let missing: Vec<String> = store
        .names()
        .filter(|n| !entries.iter().any(|(e, _)| e == n))
        .map(String::from)
        .collect();
    let extra: Vec<String> = entries
        .iter()
        .filter(|(e, _)| !store.contains(e))
        .map(|(e, _)| e.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::NameMismatch { missing, extra });
    }
    for (name, tensor) in entries {
        let param = store.get_mut(&name)?;
        if param.value.shape() != tensor.shape() {
            return Err(CliError::Checkpoint(format!(
                "`{name}` has shape {:?} in the checkpoint but {:?} in the model",
                tensor.shape(),
                param.value.shape()
            )));
        }
        param.value = tensor.cast();
    }
    Ok(())
}

pub fn save<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, encode(store)).map_err(io_err(path))
}

pub fn load_into<T: Element>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    apply(store, decode(&bytes)?)
}
