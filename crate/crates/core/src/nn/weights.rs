//! Bit-exact weight file format.
//!
//! Layout: magic "MIML", format version u32 LE, tensor count u32 LE, then per
//! tensor: name length u16 LE + UTF-8 name, rank u8, dims u32 LE, data f32 LE;
//! trailing CRC32 over everything after the magic.

use super::tensor::{ParameterStore, Tensor};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MIML";
const VERSION: u32 = 1;

/// Writes every parameter (sorted by name) and quantizes the in-memory store
/// onto the f32 grid, so subsequent forwards match a reload bit for bit.
pub fn save_weights(path: &Path, store: &mut ParameterStore) -> Result<()> {
    store.quantize_f32();
    let mut payload = Vec::new();
    payload.extend_from_slice(&VERSION.to_le_bytes());
    payload.extend_from_slice(&(store.params.len() as u32).to_le_bytes());
    for (name, tensor) in &store.params {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Parameter(format!("parameter name too long: `{name}`")));
        }
        payload.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        payload.extend_from_slice(name_bytes);
        payload.push(tensor.shape.len() as u8);
        for &d in &tensor.shape {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32(&payload);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&payload)?;
    file.write_all(&crc.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ParameterStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Data(format!("{}: not a MIML weight file", path.display())));
    }
    let payload = &bytes[4..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(payload) != stored_crc {
        return Err(Error::Data(format!("{}: CRC mismatch", path.display())));
    }

    let mut cur = Cursor { buf: payload, pos: 0 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "unsupported weight format version {version} (expected {VERSION})"
        )));
    }
    let count = cur.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| Error::Data(format!("bad tensor name: {e}")))?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != payload.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes",
            path.display(),
            payload.len() - cur.pos
        )));
    }
    Ok(store)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data("truncated weight file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// CRC-32/ISO-HDLC (the zlib polynomial, reflected).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}
