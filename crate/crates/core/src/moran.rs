//! Local Moran's I and its multi-resolution expansion.
//!
//! The per-cell statistic is
//!
//! ```text
//! I_i = (n-1) * (x_i - mean) / sum_j (x_j - mean)^2 * sum_{j in N(i)} (x_j - mean)
//! ```
//!
//! with binary queen-contiguity weights. The denominator sums over all
//! cells including i; the weighted neighbor sum excludes i. Constant grids
//! have zero variance and map to an all-zero field.
//!
//! The multi-resolution variant average-pools the input by cumulative
//! factors `a^r`, computes I on each coarsened grid with a neighborhood
//! matching the coarsened shape, and upsamples each result back to the
//! input shape with nearest-neighbor interpolation, stacking the levels as
//! channels.

use crate::error::{Result, SxlError};
use crate::grid::{avg_pool, make_neighborhood, upsample_nn, Grid, GridStack, NeighborhoodSpec};

/// Configuration for the multi-resolution Moran tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoranConfig {
    /// Number of resolutions R; level r uses cumulative factor `pool_factor^r`.
    pub levels: usize,
    /// Per-step coarsening factor a.
    pub pool_factor: usize,
}

impl Default for MoranConfig {
    fn default() -> Self {
        MoranConfig {
            levels: 3,
            pool_factor: 2,
        }
    }
}

impl MoranConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(SxlError::invalid("levels must be >= 1"));
        }
        if self.pool_factor == 0 {
            return Err(SxlError::invalid("pool factor must be >= 1"));
        }
        Ok(())
    }

    /// Cumulative coarsening factor at level r.
    pub fn factor(&self, level: usize) -> usize {
        self.pool_factor.pow(level as u32)
    }
}

/// Local Moran's I of `g` under neighborhood `nb`. Same shape as the input.
pub fn local_moran(g: &Grid, nb: &NeighborhoodSpec) -> Result<Grid> {
    if !nb.matches(g) {
        return Err(SxlError::invalid(format!(
            "neighborhood is {}x{} but grid is {}x{}",
            nb.rows(),
            nb.cols(),
            g.rows(),
            g.cols()
        )));
    }
    if g.len() < 2 {
        return Err(SxlError::invalid("local Moran's I needs at least 2 cells"));
    }

    let n = g.len() as f64;
    let mean = g.mean();
    let values = g.values();

    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        // zero-variance policy: a constant field has no spatial structure
        return Grid::constant(g.rows(), g.cols(), 0.0);
    }

    let dev: Vec<f64> = values.iter().map(|&v| v - mean).collect();
    let ssd: f64 = dev.iter().map(|d| d * d).sum();

    let mut out = Vec::with_capacity(g.len());
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let i = r * g.cols() + c;
            let lag: f64 = nb.neighbors(r, c).map(|j| dev[j]).sum();
            out.push((n - 1.0) * dev[i] / ssd * lag);
        }
    }
    Grid::new(g.rows(), g.cols(), out)
}

/// Multi-resolution Moran tensor: channel r is the local Moran's I of the
/// input pooled by `a^r`, upsampled back to the input shape. Channel
/// factors are (1, a, a^2, ...).
pub fn multires_moran(g: &Grid, cfg: &MoranConfig) -> Result<GridStack> {
    cfg.validate()?;
    let coarsest = cfg.factor(cfg.levels - 1);
    if coarsest > 1 && (g.rows() % coarsest != 0 || g.cols() % coarsest != 0) {
        return Err(SxlError::invalid(format!(
            "grid {}x{} not divisible by coarsest factor {}",
            g.rows(),
            g.cols(),
            coarsest
        )));
    }

    let mut channels = Vec::with_capacity(cfg.levels);
    let mut factors = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        let f = cfg.factor(level);
        let coarse = avg_pool(g, f)?;
        let nb = make_neighborhood(coarse.rows(), coarse.cols())?;
        let moran = local_moran(&coarse, &nb)?;
        channels.push(upsample_nn(&moran, f)?);
        factors.push(f as u32);
    }
    GridStack::new(channels, factors)
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_grid_is_all_zero() {
        let g = Grid::constant(2, 2, 5.0).unwrap();
        let nb = make_neighborhood(2, 2).unwrap();
        assert_eq!(local_moran(&g, &nb).unwrap().values(), &[0.0; 4]);
    }

    #[test]
    fn spike_grid_hand_values() {
        // 3x3 all zero except center 1: n=9, mean=1/9, ssd=8/9.
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let g = Grid::new(3, 3, v).unwrap();
        let nb = make_neighborhood(3, 3).unwrap();
        let i = local_moran(&g, &nb).unwrap();
        let center = i.get(1, 1);
        assert!((center - (-64.0 / 9.0)).abs() < 1e-12, "center {center}");
        for &(r, c) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert!((i.get(r, c) - (-2.0 / 3.0)).abs() < 1e-12);
        }
        for &(r, c) in &[(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert!((i.get(r, c) - (-4.0 / 9.0)).abs() < 1e-12);
        }
        // isolated spike is a local outlier
        assert!(center < 0.0);
    }

    #[test]
    fn checkerboard_is_nowhere_positive() {
        // Alternating values are locally dissimilar. Under queen contiguity
        // an interior cell of a 4x4 checkerboard has 4 equal and 4 opposite
        // neighbors, so its lag (and I) is exactly zero; boundary cells are
        // strictly negative. Verified against the brute-force oracle.
        let g = Grid::from_fn(4, 4, |r, c| if (r + c) % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let nb = make_neighborhood(4, 4).unwrap();
        let i = local_moran(&g, &nb).unwrap();
        let oracle = oracle::brute_force_local_moran(&g);
        for (k, (&a, &b)) in i.values().iter().zip(&oracle).enumerate() {
            let (r, c) = (k / 4, k % 4);
            let interior = (1..3).contains(&r) && (1..3).contains(&c);
            if interior {
                assert_eq!(a, 0.0, "interior cell {k}");
            } else {
                assert!(a < 0.0, "boundary cell {k} not negative: {a}");
            }
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_oracle_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let rows = rng.gen_range(4..=16);
            let cols = rng.gen_range(4..=16);
            let g = Grid::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0)).unwrap();
            let nb = make_neighborhood(rows, cols).unwrap();
            let i = local_moran(&g, &nb).unwrap();
            let oracle = oracle::brute_force_local_moran(&g);
            for (&a, &b) in i.values().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn location_invariance_and_scale_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::from_fn(5, 7, |_, _| rng.gen_range(-2.0..2.0)).unwrap();
        let nb = make_neighborhood(5, 7).unwrap();
        let base = local_moran(&g, &nb).unwrap();

        let shifted = Grid::new(5, 7, g.values().iter().map(|v| v + 123.0).collect()).unwrap();
        let i_shift = local_moran(&shifted, &nb).unwrap();
        for (&a, &b) in base.values().iter().zip(i_shift.values()) {
            assert!((a - b).abs() < 1e-9);
        }

        for &c in &[3.0, -0.5] {
            let scaled = Grid::new(5, 7, g.values().iter().map(|v| c * v).collect()).unwrap();
            let i_scaled = local_moran(&scaled, &nb).unwrap();
            for (&a, &b) in base.values().iter().zip(i_scaled.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = Grid::constant(3, 3, 1.0).unwrap();
        let nb = make_neighborhood(4, 4).unwrap();
        assert!(local_moran(&g, &nb).is_err());
    }

    #[test]
    fn multires_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = Grid::from_fn(32, 32, |_, _| rng.gen_range(0.0..1.0)).unwrap();
        let cfg = MoranConfig::default();
        let stack = multires_moran(&g, &cfg).unwrap();
        assert_eq!(stack.n_channels(), 3);
        assert_eq!((stack.rows(), stack.cols()), (32, 32));
        assert_eq!(stack.factors(), &[1, 2, 4]);

        let nb = make_neighborhood(32, 32).unwrap();
        let single = local_moran(&g, &nb).unwrap();
        assert_eq!(stack.channel(0), &single);

        let one = multires_moran(&g, &MoranConfig { levels: 1, pool_factor: 2 }).unwrap();
        assert_eq!(one.n_channels(), 1);
        assert_eq!(one.channel(0), &single);
    }

    #[test]
    fn multires_constant_input_all_zero() {
        let g = Grid::constant(8, 8, 3.3).unwrap();
        let stack = multires_moran(&g, &MoranConfig::default()).unwrap();
        for ch in stack.channels() {
            assert!(ch.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn multires_rejects_indivisible() {
        let g = Grid::constant(6, 6, 1.0).unwrap();
        assert!(multires_moran(&g, &MoranConfig::default()).is_err());
    }
}
