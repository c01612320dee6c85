//! Flat binary checkpoint of named tensors.
//!
//! Each record is `name_len: u32`, `name` bytes (UTF-8), `rank: u32`,
//! `rank × dim: u32` and the `f32` payload, all little-endian. Records are
//! concatenated until end of file.

use std::io::{Read, Write};

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub fn write_tensors<'a, F: Real, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<F>)>,
) -> Result<()> {
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut b[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(Error::Format("truncated checkpoint record".into()))
            };
        }
        got += n;
    }
    Ok(Some(u32::from_le_bytes(b)))
}

fn need_u32<R: Read>(r: &mut R) -> Result<u32> {
    read_u32(r)?.ok_or_else(|| Error::Format("truncated checkpoint record".into()))
}

pub fn read_tensors<F: Real, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<F>)>> {
    let mut out = Vec::new();
    while let Some(name_len) = read_u32(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = need_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(need_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("tensor {name}: truncated payload")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}
