//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "SPIDRCK1"
//! count      u64
//! per tensor:
//!   name_len u64, name (UTF-8)
//!   rank     u64, dims (u64 each)
//!   data     f32 per entry
//! crc32      u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Values are stored as `f32`,
//! so a save narrows `f64` weights; a load followed by a save reproduces the
//! input file byte for byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FlatTensor, TensorMap};

pub const MAGIC: &[u8; 8] = b"SPIDRCK1";

pub fn encode(map: &TensorMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.len() as u64).to_le_bytes());
    for t in map {
        out.extend_from_slice(&(t.name().len() as u64).to_le_bytes());
        out.extend_from_slice(t.name().as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
    }
}

/// Parses a checkpoint image; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<TensorMap> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", origin.display())));
    }
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(Error::Format(format!("{}: file too short", origin.display())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CorruptCheckpoint {
            path: origin.to_path_buf(),
            stored,
            computed,
        });
    }

    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let count = r.usize("tensor count")?;
    let mut map = TensorMap::new();
    for k in 0..count {
        let name_len = r.usize("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {k}: name is not UTF-8")))?
            .to_owned();
        let rank = r.usize("rank")?;
        if rank == 0 {
            return Err(Error::Format(format!("tensor `{name}` has rank 0")));
        }
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.usize("dimension")?);
        }
        if shape.contains(&0) {
            return Err(Error::Format(format!("tensor `{name}` has a zero dimension {shape:?}")));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::Format(format!("tensor `{name}` shape {shape:?} overflows")))?;
        let raw = r.take(numel * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = FlatTensor::new(name, shape, data).map_err(|e| Error::Format(e.to_string()))?;
        map.push(t).map_err(|e| Error::Format(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after tensor table",
            origin.display(),
            body.len() - r.pos
        )));
    }
    Ok(map)
}

pub fn save_checkpoint(path: impl AsRef<Path>, map: &TensorMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(map)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
