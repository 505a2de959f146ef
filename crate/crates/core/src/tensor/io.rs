use std::io::{Read, Write};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub const TNS_MAGIC: &[u8; 4] = b"TNS1";

/// `TNS1`, four little-endian `u32` dims `(n, c, h, w)`, then the `f32` payload.
pub fn write_tns(tensor: &Tensor, mut out: impl Write) -> Result<()> {
    out.write_all(TNS_MAGIC)?;
    for d in tensor.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::format("tns", "dimension exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.numel() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tns(mut input: impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::format("tns", "file shorter than header"))?;
    if &magic != TNS_MAGIC {
        return Err(Error::format("tns", format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 4];
        input
            .read_exact(&mut b)
            .map_err(|_| Error::format("tns", "truncated header"))?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let shape = Shape::from_dims(dims);
    let mut bytes = vec![0u8; shape.numel() * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::format("tns", format!("payload shorter than {shape}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}
