//! Binary checkpoint format for named tensors.
//!
//! Layout (all integers little-endian):
//!   magic "EGTN" | version u32 | tensor count u32
//!   per tensor: name len u32 | UTF-8 name | rank u32 | extents u64 each |
//!               payload f64 little-endian
//!
//! Round-trips are bit-exact: the payload is the raw f64 image of the data.

use super::Tensor;
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EGTN";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Io(format!(
                "checkpoint truncated at byte {} reading {what} ({n} bytes wanted, {} left)",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Io(format!("bad magic {magic:?} at byte 0, want \"EGTN\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Io(format!("unsupported checkpoint version {version} at byte 4")));
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name_bytes = r.take(name_len, "name")?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|e| Error::Io(format!("non-UTF-8 tensor name at byte {}: {e}", r.pos)))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 8, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Io(format!(
            "{} trailing bytes after checkpoint payload at byte {}",
            buf.len() - r.pos,
            r.pos
        )));
    }
    Ok(entries)
}
