use std::io::{Read, Write};

use crate::blocks::BlockWeights;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const TLAW_MAGIC: &[u8; 4] = b"TLAW";
pub const TLAW_VERSION: u8 = 1;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format("tlaw", format!("{what} exceeds u32")))
}

/// `TLAW`, version byte, `u32` entry count, then per entry: `u32` path
/// length, UTF-8 path, four `u32` dims, `f32` payload. All little-endian,
/// entries in path order.
pub fn write_tlaw(weights: &BlockWeights, mut out: impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(weights.total_floats() * 4 + 64 * weights.len());
    buf.extend_from_slice(TLAW_MAGIC);
    buf.push(TLAW_VERSION);
    buf.extend_from_slice(&u32_of(weights.len(), "entry count")?.to_le_bytes());
    for (path, t) in weights.iter() {
        buf.extend_from_slice(&u32_of(path.len(), "path length")?.to_le_bytes());
        buf.extend_from_slice(path.as_bytes());
        for d in t.shape().dims() {
            buf.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format("tlaw", format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_tlaw(mut input: impl Read) -> Result<BlockWeights> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != TLAW_MAGIC {
        return Err(Error::format("tlaw", "bad magic"));
    }
    let version = c.take(1, "version")?[0];
    if version != TLAW_VERSION {
        return Err(Error::format("tlaw", format!("unsupported version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut weights = BlockWeights::new();
    for _ in 0..count {
        let len = c.u32("path length")?;
        let path = std::str::from_utf8(c.take(len, "path")?)
            .map_err(|_| Error::format("tlaw", "path is not UTF-8"))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = c.u32("dims")?;
        }
        let shape = Shape::from_dims(dims);
        let n = shape
            .numel()
            .checked_mul(4)
            .ok_or_else(|| Error::format("tlaw", "payload size overflow"))?;
        let payload = c.take(n, &format!("payload of `{path}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if weights.get(&path).is_some() {
            return Err(Error::format("tlaw", format!("duplicate path `{path}`")));
        }
        weights.insert(path, Tensor::from_vec(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::format("tlaw", format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(weights)
}
