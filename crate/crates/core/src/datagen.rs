//! Toy dataset generation and raster tiling.
//!
//! A toy tile is a Gaussian peak at a random location mirrored diagonally
//! by a Gaussian dip:
//!
//! ```text
//! f(cx, cy) = 0.75 exp(-((9cx - a)^2 + (9cy - b)^2)/s)
//!           - 0.75 exp(-((9cx - d)^2 + (9cy - e)^2)/s)
//! ```
//!
//! with d = 10 - a and e = 10 - b. Coordinates are normalized to [0, 1]
//! (cx = col/(size-1), cy = row/(size-1)) so the peak center lands at
//! (a/9, b/9) and the structure spans the tile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SxlError};
use crate::grid::{Grid, GridStack};

pub const TOY_AMPLITUDE: f64 = 0.75;
pub const TOY_DEFAULT_S: f64 = 7.0;
pub const TOY_DEFAULT_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    pub size: usize,
    pub s: f64,
    pub a: i64,
    pub b: i64,
}

impl ToyParams {
    /// Dip location mirrors the peak: d = 10 - a.
    pub fn d(&self) -> i64 {
        10 - self.a
    }

    /// e = 10 - b.
    pub fn e(&self) -> i64 {
        10 - self.b
    }
}

/// Evaluates the peak/dip field on a size×size grid.
pub fn toy_tile(p: &ToyParams) -> Result<Grid> {
    if p.size < 2 {
        return Err(SxlError::invalid("toy tile size must be >= 2"));
    }
    if p.s <= 0.0 {
        return Err(SxlError::invalid("toy s must be positive"));
    }
    let (a, b, d, e) = (p.a as f64, p.b as f64, p.d() as f64, p.e() as f64);
    let denom = (p.size - 1) as f64;
    Grid::from_fn(p.size, p.size, |row, col| {
        let cx = 9.0 * (col as f64 / denom);
        let cy = 9.0 * (row as f64 / denom);
        let peak = TOY_AMPLITUDE * (-((cx - a).powi(2) + (cy - b).powi(2)) / p.s).exp();
        let dip = TOY_AMPLITUDE * (-((cx - d).powi(2) + (cy - e).powi(2)) / p.s).exp();
        peak - dip
    })
}

/// Draws `count` tiles with (a, b) sampled uniformly from integers [0, 10].
/// Each tile uses a seed derived from (seed, index), so generation is
/// deterministic and order-independent.
pub fn toy_dataset(count: usize, size: usize, seed: u64) -> Result<Vec<Grid>> {
    if count == 0 {
        return Err(SxlError::invalid("count must be >= 1"));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let a = rng.gen_range(0..=10);
            let b = rng.gen_range(0..=10);
            toy_tile(&ToyParams {
                size,
                s: TOY_DEFAULT_S,
                a,
                b,
            })
        })
        .collect()
}

/// Cuts a single-channel raster into tile×tile windows at the given stride,
/// row-major scan order. Partial edge tiles are discarded.
pub fn tile_raster(src: &GridStack, tile: usize, stride: usize) -> Result<Vec<Grid>> {
    if src.n_channels() != 1 {
        return Err(SxlError::invalid("tiling expects a single-channel raster"));
    }
    if tile == 0 || stride == 0 {
        return Err(SxlError::invalid("tile and stride must be positive"));
    }
    let g = src.channel(0);
    if tile > g.rows() || tile > g.cols() {
        return Err(SxlError::invalid(format!(
            "tile {} larger than raster {}x{}",
            tile,
            g.rows(),
            g.cols()
        )));
    }
    let mut out = Vec::new();
    let mut r = 0;
    while r + tile <= g.rows() {
        let mut c = 0;
        while c + tile <= g.cols() {
            out.push(Grid::from_fn(tile, tile, |i, j| g.get(r + i, c + j))?);
            c += stride;
        }
        r += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincident_peak_and_dip_cancel() {
        let g = toy_tile(&ToyParams { size: 32, s: 7.0, a: 5, b: 5 }).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swapping_centers_negates() {
        for &(a, b) in &[(0, 0), (3, 8), (10, 2)] {
            let p = ToyParams { size: 32, s: 7.0, a, b };
            let q = ToyParams { size: 32, s: 7.0, a: p.d(), b: p.e() };
            let gp = toy_tile(&p).unwrap();
            let gq = toy_tile(&q).unwrap();
            for (&x, &y) in gp.values().iter().zip(gq.values()) {
                assert!((x + y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_value_at_origin_center() {
        // a=0, b=0, s=7: f(0,0) = 0.75 (1 - exp(-200/7))
        let g = toy_tile(&ToyParams { size: 32, s: 7.0, a: 0, b: 0 }).unwrap();
        let expected = 0.75 * (1.0 - (-200.0f64 / 7.0).exp());
        assert!((g.get(0, 0) - expected).abs() < 1e-12);
        assert!((g.get(0, 0) - 0.75).abs() < 1e-10);
    }

    #[test]
    fn dataset_shape_range_determinism() {
        let tiles = toy_dataset(20, 32, 9).unwrap();
        assert_eq!(tiles.len(), 20);
        for t in &tiles {
            assert_eq!((t.rows(), t.cols()), (32, 32));
            assert!(t.values().iter().all(|&v| (-0.75..=0.75).contains(&v)));
        }
        assert_eq!(toy_dataset(20, 32, 9).unwrap(), tiles);
        assert_ne!(toy_dataset(20, 32, 10).unwrap(), tiles);
    }

    #[test]
    fn tiling_counts_and_order() {
        let src = Grid::from_fn(64, 64, |r, c| (r * 64 + c) as f64).unwrap();
        let tiles = tile_raster(&GridStack::single(src.clone()), 32, 32).unwrap();
        assert_eq!(tiles.len(), 4);
        // row-major offsets: (0,0), (0,32), (32,0), (32,32)
        assert_eq!(tiles[0].get(0, 0), 0.0);
        assert_eq!(tiles[1].get(0, 0), 32.0);
        assert_eq!(tiles[2].get(0, 0), (32 * 64) as f64);
        assert_eq!(tiles[3].get(0, 0), (32 * 64 + 32) as f64);

        // partial row discarded
        let src65 = Grid::from_fn(65, 64, |r, c| (r + c) as f64).unwrap();
        assert_eq!(tile_raster(&GridStack::single(src65), 32, 32).unwrap().len(), 4);

        // reassembly with stride == tile
        for (idx, t) in tiles.iter().enumerate() {
            let (br, bc) = (idx / 2 * 32, idx % 2 * 32);
            for i in 0..32 {
                for j in 0..32 {
                    assert_eq!(t.get(i, j), src.get(br + i, bc + j));
                }
            }
        }

        let small = Grid::constant(16, 16, 0.0).unwrap();
        assert!(tile_raster(&GridStack::single(small), 32, 32).is_err());
    }
}
