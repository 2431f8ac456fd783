//! Core raster types and resampling primitives.

use crate::error::{Result, SxlError};

/// A rows×cols single-channel real-valued raster, stored row-major.
///
/// Values are finite by construction; all internal arithmetic is f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SxlError::invalid("grid dimensions must be positive"));
        }
        if values.len() != rows * cols {
            return Err(SxlError::invalid(format!(
                "value length {} does not match {}x{}",
                values.len(),
                rows,
                cols
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SxlError::invalid("grid values must be finite"));
        }
        Ok(Grid { rows, cols, values })
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Grid::new(rows, cols, vec![value; rows * cols])
    }

    /// Builds a grid from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Grid::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// 2-d average pooling with an a×a kernel and stride a.
///
/// Both dimensions must be divisible by `a`; non-divisible inputs are
/// rejected rather than padded, since padding would distort downstream
/// Moran statistics.
pub fn avg_pool(g: &Grid, a: usize) -> Result<Grid> {
    if a == 0 {
        return Err(SxlError::invalid("pool factor must be positive"));
    }
    if g.rows % a != 0 {
        return Err(SxlError::invalid(format!(
            "rows {} not divisible by pool factor {}",
            g.rows, a
        )));
    }
    if g.cols % a != 0 {
        return Err(SxlError::invalid(format!(
            "cols {} not divisible by pool factor {}",
            g.cols, a
        )));
    }
    let (or, oc) = (g.rows / a, g.cols / a);
    let inv = 1.0 / (a * a) as f64;
    let mut out = Vec::with_capacity(or * oc);
    for i in 0..or {
        for j in 0..oc {
            let mut s = 0.0;
            for k in 0..a {
                for l in 0..a {
                    s += g.get(a * i + k, a * j + l);
                }
            }
            out.push(s * inv);
        }
    }
    Grid::new(or, oc, out)
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nn(g: &Grid, a: usize) -> Result<Grid> {
    if a == 0 {
        return Err(SxlError::invalid("upsample factor must be positive"));
    }
    let (or, oc) = (g.rows * a, g.cols * a);
    let mut out = Vec::with_capacity(or * oc);
    for i in 0..or {
        for j in 0..oc {
            out.push(g.get(i / a, j / a));
        }
    }
    Grid::new(or, oc, out)
}

/// Keeps rows and columns at even indices, halving resolution.
pub fn downsample_strided(g: &Grid) -> Result<Grid> {
    if g.rows < 2 || g.cols < 2 {
        return Err(SxlError::invalid("strided downsample needs at least 2x2"));
    }
    let (or, oc) = (g.rows.div_ceil(2), g.cols.div_ceil(2));
    let mut out = Vec::with_capacity(or * oc);
    for i in 0..or {
        for j in 0..oc {
            out.push(g.get(2 * i, 2 * j));
        }
    }
    Grid::new(or, oc, out)
}

/// An ordered multi-channel stack of equally-sized grids, carrying the
/// coarsening factor each channel was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    channels: Vec<Grid>,
    factors: Vec<u32>,
}

impl GridStack {
    pub fn new(channels: Vec<Grid>, factors: Vec<u32>) -> Result<Self> {
        if channels.is_empty() {
            return Err(SxlError::invalid("stack needs at least one channel"));
        }
        if channels.len() != factors.len() {
            return Err(SxlError::invalid("one coarsening factor per channel"));
        }
        let (r, c) = (channels[0].rows(), channels[0].cols());
        if channels.iter().any(|g| g.rows() != r || g.cols() != c) {
            return Err(SxlError::invalid("all channels must share one shape"));
        }
        if factors[0] != 1 {
            return Err(SxlError::invalid("channel 0 must have factor 1"));
        }
        if factors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SxlError::invalid("factors must be strictly increasing"));
        }
        Ok(GridStack { channels, factors })
    }

    pub fn single(grid: Grid) -> Self {
        GridStack {
            channels: vec![grid],
            factors: vec![1],
        }
    }

    pub fn rows(&self) -> usize {
        self.channels[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].cols()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Grid] {
        &self.channels
    }

    pub fn factors(&self) -> &[u32] {
        &self.factors
    }

    pub fn channel(&self, i: usize) -> &Grid {
        &self.channels[i]
    }

    /// Channel-major, row-major flattening of all values.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_channels() * self.rows() * self.cols());
        for ch in &self.channels {
            out.extend_from_slice(ch.values());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborScheme {
    /// All 8 adjacent cells, diagonals included.
    Queen,
}

/// Binary spatial weight structure for a rows×cols lattice.
///
/// The weight matrix is binary and not row-standardized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodSpec {
    scheme: NeighborScheme,
    rows: usize,
    cols: usize,
}

/// Queen-contiguity neighborhood for a rows×cols grid: w_ij = 1 iff cells
/// i and j are distinct and within Chebyshev distance 1.
pub fn make_neighborhood(rows: usize, cols: usize) -> Result<NeighborhoodSpec> {
    if rows == 0 || cols == 0 {
        return Err(SxlError::invalid("neighborhood dimensions must be positive"));
    }
    Ok(NeighborhoodSpec {
        scheme: NeighborScheme::Queen,
        rows,
        cols,
    })
}

impl NeighborhoodSpec {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scheme(&self) -> NeighborScheme {
        self.scheme
    }

    pub fn matches(&self, g: &Grid) -> bool {
        self.rows == g.rows() && self.cols == g.cols()
    }

    /// Linear indices of the neighbors of cell (row, col).
    pub fn neighbors(&self, row: usize, col: usize) -> impl Iterator<Item = usize> + '_ {
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        let (r0, c0) = (row as isize, col as isize);
        (-1isize..=1).flat_map(move |dr| {
            (-1isize..=1).filter_map(move |dc| {
                if dr == 0 && dc == 0 {
                    return None;
                }
                let (r, c) = (r0 + dr, c0 + dc);
                if r < 0 || c < 0 || r >= rows || c >= cols {
                    None
                } else {
                    Some((r * cols + c) as usize)
                }
            })
        })
    }

    pub fn degree(&self, row: usize, col: usize) -> usize {
        self.neighbors(row, col).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, v: &[f64]) -> Grid {
        Grid::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(Grid::new(0, 3, vec![]).is_err());
        assert!(Grid::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Grid::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Grid::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn neighborhood_counts() {
        let nb = make_neighborhood(1, 1).unwrap();
        assert_eq!(nb.degree(0, 0), 0);

        let nb = make_neighborhood(3, 3).unwrap();
        assert_eq!(nb.degree(1, 1), 8);
        assert_eq!(nb.degree(0, 0), 3);
        assert_eq!(nb.degree(2, 2), 3);
        assert_eq!(nb.degree(0, 1), 5);

        // 2x2: every cell sees the other three (brute-force enumeration of
        // Chebyshev-distance-1 pairs gives 3 per cell).
        let nb = make_neighborhood(2, 2).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(nb.degree(r, c), 3);
            }
        }

        assert!(make_neighborhood(0, 2).is_err());
    }

    #[test]
    fn neighborhood_symmetric_and_irreflexive_exhaustive() {
        // Symmetry + self-exclusion over all shapes up to 8x8, and spot
        // checks at 64x64 corners/center.
        for rows in 1..=8usize {
            for cols in 1..=8usize {
                let nb = make_neighborhood(rows, cols).unwrap();
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        for j in nb.neighbors(r, c) {
                            assert_ne!(i, j);
                            let (jr, jc) = (j / cols, j % cols);
                            assert!(nb.neighbors(jr, jc).any(|k| k == i));
                        }
                    }
                }
            }
        }
        let nb = make_neighborhood(64, 64).unwrap();
        assert_eq!(nb.degree(0, 0), 3);
        assert_eq!(nb.degree(32, 32), 8);
        assert_eq!(nb.degree(0, 32), 5);
    }

    #[test]
    fn avg_pool_examples() {
        let g = grid(2, 2, &[1.0, 3.0, 5.0, 7.0]);
        let p = avg_pool(&g, 2).unwrap();
        assert_eq!(p.values(), &[4.0]);

        let g = Grid::from_fn(4, 4, |r, c| (r * 4 + c) as f64).unwrap();
        let p = avg_pool(&g, 2).unwrap();
        assert_eq!(p.values(), &[2.5, 4.5, 10.5, 12.5]);

        let id = avg_pool(&g, 1).unwrap();
        assert_eq!(id, g);
    }

    #[test]
    fn avg_pool_rejects_non_divisible_naming_axis() {
        let g = Grid::constant(3, 4, 1.0).unwrap();
        let err = avg_pool(&g, 2).unwrap_err().to_string();
        assert!(err.contains("rows"), "{err}");
        let g = Grid::constant(4, 3, 1.0).unwrap();
        let err = avg_pool(&g, 2).unwrap_err().to_string();
        assert!(err.contains("cols"), "{err}");
    }

    #[test]
    fn upsample_examples() {
        let g = grid(1, 1, &[4.0]);
        let u = upsample_nn(&g, 2).unwrap();
        assert_eq!(u.values(), &[4.0; 4]);

        let g = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let u = upsample_nn(&g, 2).unwrap();
        assert_eq!(
            u.values(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        assert_eq!(upsample_nn(&g, 1).unwrap(), g);
    }

    #[test]
    fn downsample_examples() {
        let g = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(downsample_strided(&g).unwrap().values(), &[1.0]);

        let g = Grid::from_fn(3, 3, |r, c| (r * 3 + c + 1) as f64).unwrap();
        assert_eq!(downsample_strided(&g).unwrap().values(), &[1.0, 3.0, 7.0, 9.0]);

        let g = Grid::constant(64, 64, 0.5).unwrap();
        let d = downsample_strided(&g).unwrap();
        assert_eq!((d.rows(), d.cols()), (32, 32));
    }

    #[test]
    fn stack_invariants() {
        let a = Grid::constant(2, 2, 0.0).unwrap();
        let b = Grid::constant(2, 2, 1.0).unwrap();
        assert!(GridStack::new(vec![a.clone(), b.clone()], vec![1, 2]).is_ok());
        assert!(GridStack::new(vec![a.clone(), b.clone()], vec![2, 4]).is_err());
        assert!(GridStack::new(vec![a.clone(), b.clone()], vec![1, 1]).is_err());
        let c = Grid::constant(3, 2, 1.0).unwrap();
        assert!(GridStack::new(vec![a, c], vec![1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn pool_upsample_shape_and_mean(rows in 1usize..6, cols in 1usize..6, a in 1usize..4,
                                         seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::from_fn(rows * a, cols * a, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            let p = avg_pool(&g, a).unwrap();
            let u = upsample_nn(&p, a).unwrap();
            prop_assert_eq!((u.rows(), u.cols()), (g.rows(), g.cols()));
            prop_assert!((p.mean() - g.mean()).abs() < 1e-12);
        }

        #[test]
        fn upsample_preserves_extrema_and_strided_inverts(rows in 1usize..6, cols in 1usize..6,
                                                          seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            let u = upsample_nn(&g, 2).unwrap();
            let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(min(u.values()), min(g.values()));
            prop_assert_eq!(max(u.values()), max(g.values()));
            prop_assert_eq!(downsample_strided(&u).unwrap(), g);
        }
    }
}
