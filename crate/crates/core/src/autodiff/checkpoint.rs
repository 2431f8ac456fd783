//! Checkpoint container: named f64 tensors in a GRDF-style binary layout.
//!
//! Layout: magic "SXCK", version byte 1, u32 LE entry count; per entry a
//! u32 LE name length, the UTF-8 name, u32 LE ndim, ndim u32 LE dims, then
//! the f64 LE payload. Entry order is preserved, so writes are
//! byte-deterministic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Result, SxlError};

const MAGIC: &[u8; 4] = b"SXCK";
const VERSION: u8 = 1;
const MAX_ELEMS: u64 = 1 << 32;

pub fn write_checkpoint(entries: &[(String, Tensor)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset = 0u64;
    let mut head = [0u8; 9];
    read_exact(&mut r, &mut head, &mut offset)?;
    if &head[0..4] != MAGIC {
        return Err(SxlError::format(0, "bad magic, expected \"SXCK\""));
    }
    if head[4] != VERSION {
        return Err(SxlError::format(4, format!("unsupported version {}", head[4])));
    }
    let count = u32::from_le_bytes(head[5..9].try_into().unwrap());
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r, &mut offset)? as usize;
        if name_len > 4096 {
            return Err(SxlError::format(offset - 4, "name length out of range"));
        }
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, &mut offset)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| SxlError::format(offset, "name is not valid UTF-8"))?;
        let ndim = read_u32(&mut r, &mut offset)? as usize;
        if ndim > 8 {
            return Err(SxlError::format(offset - 4, "rank out of range"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r, &mut offset)? as usize);
        }
        let numel: u64 = shape.iter().map(|&d| d as u64).product();
        if numel > MAX_ELEMS {
            return Err(SxlError::format(offset, "tensor size overflows limit"));
        }
        let mut data = vec![0u8; numel as usize * 8];
        read_exact(&mut r, &mut data, &mut offset)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(shape, values).unwrap()));
    }
    Ok(entries)
}

fn read_u32(r: &mut impl Read, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, offset)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(SxlError::format(
                *offset + filled as u64,
                "truncated checkpoint",
            ));
        }
        filled += n;
    }
    *offset += buf.len() as u64;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let entries = vec![
            ("g.0.w".to_string(), Tensor::new(vec![2, 3], vec![0.1, -2.0, 3.5, 0.0, 1e-7, 9.9]).unwrap()),
            ("adam.step".to_string(), Tensor::scalar(42.0)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        write_checkpoint(&entries, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(entries, back);
    }

    #[test]
    fn truncation_detected() {
        let entries = vec![("x".to_string(), Tensor::new(vec![4], vec![1.0; 4]).unwrap())];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        write_checkpoint(&entries, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(SxlError::Format { .. })));
    }
}
