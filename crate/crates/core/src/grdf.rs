//! The GRDF v1 grid file format.
//!
//! Layout: bytes 0-3 magic ASCII "GRDF"; byte 4 version = 1; then three
//! unsigned 32-bit little-endian fields (rows, cols, channels); then
//! channels·rows·cols 32-bit LE IEEE-754 floats, channel-major, row-major
//! within channel; then `channels` unsigned 32-bit LE coarsening factors.
//!
//! Internal arithmetic is f64; storage quantizes to f32, so round-trips are
//! bit-exact for the stored 32-bit payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SxlError};
use crate::grid::{Grid, GridStack};

const MAGIC: &[u8; 4] = b"GRDF";
const VERSION: u8 = 1;

// Upper bound on rows*cols*channels; anything bigger is a corrupt header.
const MAX_CELLS: u64 = 1 << 32;

pub fn write_grid(stack: &GridStack, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(stack.rows() as u32).to_le_bytes())?;
    w.write_all(&(stack.cols() as u32).to_le_bytes())?;
    w.write_all(&(stack.n_channels() as u32).to_le_bytes())?;
    for ch in stack.channels() {
        for &v in ch.values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    for &f in stack.factors() {
        w.write_all(&f.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridStack> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 17];
    read_exact_at(&mut r, &mut header, 0)?;
    if &header[0..4] != MAGIC {
        return Err(SxlError::format(0, "bad magic, expected \"GRDF\""));
    }
    if header[4] != VERSION {
        return Err(SxlError::format(4, format!("unsupported version {}", header[4])));
    }
    let rows = u32::from_le_bytes(header[5..9].try_into().unwrap()) as u64;
    let cols = u32::from_le_bytes(header[9..13].try_into().unwrap()) as u64;
    let channels = u32::from_le_bytes(header[13..17].try_into().unwrap()) as u64;
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(SxlError::format(5, "zero dimension in header"));
    }
    if rows.saturating_mul(cols).saturating_mul(channels) > MAX_CELLS {
        return Err(SxlError::format(5, "declared shape overflows size limit"));
    }

    let cells = (rows * cols) as usize;
    let mut offset = 17u64;
    let mut grids = Vec::with_capacity(channels as usize);
    let mut buf = vec![0u8; cells * 4];
    for _ in 0..channels {
        read_exact_at(&mut r, &mut buf, offset)?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        grids.push(
            Grid::new(rows as usize, cols as usize, values)
                .map_err(|e| SxlError::format(offset, e.to_string()))?,
        );
        offset += buf.len() as u64;
    }
    let mut fbuf = vec![0u8; channels as usize * 4];
    read_exact_at(&mut r, &mut fbuf, offset)?;
    let factors: Vec<u32> = fbuf
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    GridStack::new(grids, factors).map_err(|e| SxlError::format(offset, e.to_string()))
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(SxlError::format(
                offset + filled as u64,
                "truncated file: unexpected end of data",
            ));
        }
        filled += n;
    }
    Ok(())
}
