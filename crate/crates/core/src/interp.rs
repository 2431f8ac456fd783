//! Spatial interpolation (32→64): classical baselines — bicubic, inverse
//! distance weighting, ordinary and universal kriging — plus a small CNN
//! regressor with an optional auxiliary local-autocorrelation task.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{AdamState, Graph, Layer, NodeId, Stack, Tensor};
use crate::dataset::DatasetSplit;
use crate::error::{Result, SxlError};
use crate::grid::{downsample_strided, make_neighborhood, Grid};
use crate::metrics;
use crate::moran::local_moran;
use crate::multitask::{combine_hard, combine_uncertainty, TaskWeighting, UncertaintyWeights};

/// Two coordinates closer than this are considered the same location.
pub const COORD_EPS: f64 = 1e-9;
/// IDW queries closer than this to a sample return the sample exactly.
pub const IDW_EXACT_EPS: f64 = 1e-12;
/// Above this many samples, kriging solves a local system over the
/// nearest [`LOCAL_KRIGING_K`] samples per query.
pub const LOCAL_KRIGING_THRESHOLD: usize = 128;
pub const LOCAL_KRIGING_K: usize = 64;
/// Distance bins for the empirical semivariogram.
pub const VARIOGRAM_BINS: usize = 15;

/// Scattered observations: parallel lists of (row, col) coordinates and
/// values. No duplicate coordinates, at least one point.
#[derive(Debug, Clone)]
pub struct SamplePoints {
    coordinates: Vec<(f64, f64)>,
    values: Vec<f64>,
}

impl SamplePoints {
    pub fn new(coordinates: Vec<(f64, f64)>, values: Vec<f64>) -> Result<Self> {
        if coordinates.is_empty() || coordinates.len() != values.len() {
            return Err(SxlError::invalid(format!(
                "sample points need matching non-empty lists, got {} coords / {} values",
                coordinates.len(),
                values.len()
            )));
        }
        if coordinates
            .iter()
            .any(|(r, c)| !r.is_finite() || !c.is_finite())
            || values.iter().any(|v| !v.is_finite())
        {
            return Err(SxlError::invalid("sample points must be finite"));
        }
        for i in 0..coordinates.len() {
            for j in (i + 1)..coordinates.len() {
                if dist(coordinates[i], coordinates[j]) < COORD_EPS {
                    return Err(SxlError::invalid(format!(
                        "duplicate sample coordinates at indices {i} and {j}"
                    )));
                }
            }
        }
        Ok(SamplePoints {
            coordinates,
            values,
        })
    }

    /// Internal constructor for subsets of an already-validated set.
    fn from_validated(coordinates: Vec<(f64, f64)>, values: Vec<f64>) -> Self {
        SamplePoints {
            coordinates,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coordinates(&self) -> &[(f64, f64)] {
        &self.coordinates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Exponential variogram γ(h) = c0 + c1·(1 − exp(−h/r)) for h > 0, with
/// γ(0) = 0 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct VariogramModel {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && partial_sill >= 0.0 && range > 0.0) {
            return Err(SxlError::invalid(format!(
                "variogram needs c0 >= 0, c1 >= 0, r > 0; got ({nugget}, {partial_sill}, {range})"
            )));
        }
        Ok(VariogramModel {
            nugget,
            partial_sill,
            range,
        })
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.nugget + self.partial_sill * (1.0 - (-h / self.range).exp())
        }
    }

    /// A model with zero sill describes constant data; kriging short-circuits
    /// to the sample mean in that case because its system is singular.
    pub fn is_degenerate(&self) -> bool {
        self.nugget + self.partial_sill <= 0.0
    }
}

/// Cubic-convolution kernel with parameter a = −0.5.
fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t.powi(3) - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t.powi(3) - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Doubles grid resolution by cubic-convolution interpolation (kernel
/// parameter −0.5) with edge taps clamped to the grid. Output cell (i, j)
/// samples the input at (i/2, j/2), so even outputs reproduce the input
/// exactly.
pub fn bicubic(input: &Grid) -> Result<Grid> {
    if input.rows() < 4 || input.cols() < 4 {
        return Err(SxlError::invalid(format!(
            "bicubic needs at least a 4x4 input, got {}x{}",
            input.rows(),
            input.cols()
        )));
    }
    let (rows, cols) = (input.rows(), input.cols());
    Grid::from_fn(2 * rows, 2 * cols, |oi, oj| {
        let (sy, sx) = (oi as f64 / 2.0, oj as f64 / 2.0);
        let (iy, ix) = (sy.floor() as isize, sx.floor() as isize);
        // equal support values interpolate to that value exactly; skip
        // the weighted sum so rounding cannot perturb constant regions
        let first = input.get(
            iy.clamp(0, rows as isize - 1) as usize,
            ix.clamp(0, cols as isize - 1) as usize,
        );
        let uniform = (-1..=2isize).all(|dy| {
            let ry = (iy + dy).clamp(0, rows as isize - 1) as usize;
            (-1..=2isize).all(|dx| {
                input.get(ry, (ix + dx).clamp(0, cols as isize - 1) as usize) == first
            })
        });
        if uniform {
            return first;
        }
        let mut acc = 0.0;
        for dy in -1..=2isize {
            let wy = cubic_kernel(sy - (iy + dy) as f64);
            if wy == 0.0 {
                continue;
            }
            let ry = (iy + dy).clamp(0, rows as isize - 1) as usize;
            for dx in -1..=2isize {
                let wx = cubic_kernel(sx - (ix + dx) as f64);
                if wx == 0.0 {
                    continue;
                }
                let cx = (ix + dx).clamp(0, cols as isize - 1) as usize;
                acc += wy * wx * input.get(ry, cx);
            }
        }
        acc
    })
}

/// Inverse-distance-weighted prediction: Σ w_i z_i / Σ w_i with
/// w_i = d_i^(−p). A query within [`IDW_EXACT_EPS`] of a sample returns
/// that sample's value exactly.
pub fn idw(samples: &SamplePoints, query: (f64, f64), power: f64) -> Result<f64> {
    if power <= 0.0 {
        return Err(SxlError::invalid(format!("idw power must be > 0, got {power}")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (coord, &z) in samples.coordinates.iter().zip(&samples.values) {
        let d = dist(*coord, query);
        if d < IDW_EXACT_EPS {
            return Ok(z);
        }
        let w = d.powf(-power);
        num += w * z;
        den += w;
    }
    Ok(num / den)
}

/// Fits an exponential variogram to the empirical semivariances of the
/// samples. Distances are binned into `n_bins` equal-width bins capped at
/// half the maximum pairwise distance; (c0, c1) come from linear least
/// squares at each candidate range, and the best range wins. All-identical
/// values give the degenerate model (c1 = 0) rather than an error.
pub fn fit_variogram(samples: &SamplePoints, n_bins: usize) -> Result<VariogramModel> {
    if samples.len() < 10 {
        return Err(SxlError::invalid(format!(
            "variogram fitting needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if n_bins == 0 {
        return Err(SxlError::invalid("variogram needs at least one bin"));
    }
    let n = samples.len();
    let mut hmax: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            hmax = hmax.max(dist(samples.coordinates[i], samples.coordinates[j]));
        }
    }
    let cap = hmax / 2.0;
    let width = cap / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..n {
        for j in (i + 1)..n {
            let h = dist(samples.coordinates[i], samples.coordinates[j]);
            if h > cap || h <= 0.0 {
                continue;
            }
            let bin = ((h / width).ceil() as usize).clamp(1, n_bins) - 1;
            let dz = samples.values[i] - samples.values[j];
            sums[bin] += dz * dz / 2.0;
            counts[bin] += 1;
        }
    }
    let mut hs = Vec::new();
    let mut gs = Vec::new();
    for b in 0..n_bins {
        if counts[b] > 0 {
            hs.push((b as f64 + 0.5) * width);
            gs.push(sums[b] / counts[b] as f64);
        }
    }
    if hs.is_empty() || gs.iter().all(|&g| g < 1e-15) {
        // constant field: zero semivariance everywhere
        return VariogramModel::new(0.0, 0.0, cap.max(1.0));
    }

    // Grid search over the range; (c0, c1) by linear least squares on the
    // basis [1, 1 - exp(-h/r)], clamped to be non-negative.
    let mut best: Option<(f64, VariogramModel)> = None;
    for step in 0..60 {
        let r = cap * (0.02 + step as f64 * 0.05);
        let f: Vec<f64> = hs.iter().map(|&h| 1.0 - (-h / r).exp()).collect();
        let m = hs.len() as f64;
        let (sf, sff, sg, sgf) = f.iter().zip(&gs).fold(
            (0.0, 0.0, 0.0, 0.0),
            |(sf, sff, sg, sgf), (&fi, &gi)| (sf + fi, sff + fi * fi, sg + gi, sgf + gi * fi),
        );
        let det = m * sff - sf * sf;
        let (mut c0, mut c1) = if det.abs() < 1e-12 {
            (0.0, if sff > 0.0 { sgf / sff } else { 0.0 })
        } else {
            ((sg * sff - sgf * sf) / det, (m * sgf - sg * sf) / det)
        };
        if c0 < 0.0 {
            c0 = 0.0;
            c1 = if sff > 0.0 { (sgf / sff).max(0.0) } else { 0.0 };
        }
        if c1 < 0.0 {
            c1 = 0.0;
            c0 = (sg / m).max(0.0);
        }
        let sse: f64 = f
            .iter()
            .zip(&gs)
            .map(|(&fi, &gi)| (c0 + c1 * fi - gi).powi(2))
            .sum();
        let model = VariogramModel::new(c0, c1, r)?;
        if best.as_ref().map_or(true, |(b, _)| sse < *b) {
            best = Some((sse, model));
        }
    }
    Ok(best.unwrap().1)
}

/// Trend model for kriging: none → ordinary kriging; linear → universal
/// kriging with drift basis (1, row, col).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    None,
    Linear,
}

/// Solves the kriging system and returns the sample weights λ. For ordinary
/// kriging the weights sum to 1 by construction; universal kriging adds
/// row/col drift constraints.
pub fn kriging_weights(
    samples: &SamplePoints,
    query: (f64, f64),
    model: &VariogramModel,
    drift: Drift,
) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(SxlError::invalid(format!(
            "kriging needs at least 2 samples, got {n}"
        )));
    }
    let n_drift = match drift {
        Drift::None => 1,
        Drift::Linear => 3,
    };
    let dim = n + n_drift;
    let basis = |p: (f64, f64), k: usize| -> f64 {
        match k {
            0 => 1.0,
            1 => p.0,
            _ => p.1,
        }
    };
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = model.gamma(dist(samples.coordinates[i], samples.coordinates[j]));
        }
        for k in 0..n_drift {
            let f = basis(samples.coordinates[i], k);
            a[(i, n + k)] = f;
            a[(n + k, i)] = f;
        }
    }
    let mut b = DVector::<f64>::zeros(dim);
    for i in 0..n {
        b[i] = model.gamma(dist(samples.coordinates[i], query));
    }
    for k in 0..n_drift {
        b[n + k] = basis(query, k);
    }
    let solution = a.clone().lu().solve(&b).ok_or_else(|| {
        let sv = a.svd(false, false).singular_values;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        SxlError::Numerical(format!(
            "singular kriging system ({n} samples, condition estimate {cond:.3e})"
        ))
    })?;
    Ok(solution.as_slice()[..n].to_vec())
}

/// Kriging prediction Σ λ_i z_i at `query`. With a degenerate (zero-sill)
/// model the system is singular; the sample mean is returned instead,
/// which is exact for the constant fields that produce such models.
pub fn kriging(
    samples: &SamplePoints,
    query: (f64, f64),
    model: &VariogramModel,
    drift: Drift,
) -> Result<f64> {
    if model.is_degenerate() {
        let n = samples.len() as f64;
        return Ok(samples.values.iter().sum::<f64>() / n);
    }
    let weights = kriging_weights(samples, query, model, drift)?;
    Ok(weights
        .iter()
        .zip(&samples.values)
        .map(|(w, z)| w * z)
        .sum())
}

/// Kriging with a local neighborhood: for large sample sets only the
/// [`LOCAL_KRIGING_K`] nearest samples enter the system.
fn kriging_local(
    samples: &SamplePoints,
    query: (f64, f64),
    model: &VariogramModel,
    drift: Drift,
) -> Result<f64> {
    if samples.len() <= LOCAL_KRIGING_THRESHOLD {
        return kriging(samples, query, model, drift);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| {
        dist(samples.coordinates[i], query)
            .total_cmp(&dist(samples.coordinates[j], query))
    });
    order.truncate(LOCAL_KRIGING_K);
    let sub = SamplePoints::from_validated(
        order.iter().map(|&i| samples.coordinates[i]).collect(),
        order.iter().map(|&i| samples.values[i]).collect(),
    );
    kriging(&sub, query, model, drift)
}

/// Classical baseline selector for [`interpolate_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Bicubic,
    Idw,
    OrdinaryKriging,
    UniversalKriging,
}

impl BaselineMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bicubic" => Ok(BaselineMethod::Bicubic),
            "idw" => Ok(BaselineMethod::Idw),
            "ok" => Ok(BaselineMethod::OrdinaryKriging),
            "uk" => Ok(BaselineMethod::UniversalKriging),
            other => Err(SxlError::invalid(format!(
                "unknown interpolation method '{other}' (expected bicubic|idw|ok|uk)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Bicubic => "bicubic",
            BaselineMethod::Idw => "idw",
            BaselineMethod::OrdinaryKriging => "ok",
            BaselineMethod::UniversalKriging => "uk",
        }
    }
}

/// Doubles grid resolution with a classical baseline. The input cells
/// become sample points at even coordinates (2i, 2j); the output covers
/// every position of the doubled grid.
pub fn interpolate_grid(input: &Grid, method: BaselineMethod) -> Result<Grid> {
    if let BaselineMethod::Bicubic = method {
        return bicubic(input);
    }
    let mut coords = Vec::with_capacity(input.len());
    let mut values = Vec::with_capacity(input.len());
    for i in 0..input.rows() {
        for j in 0..input.cols() {
            coords.push((2.0 * i as f64, 2.0 * j as f64));
            values.push(input.get(i, j));
        }
    }
    let samples = SamplePoints::from_validated(coords, values);
    let (orows, ocols) = (2 * input.rows(), 2 * input.cols());
    match method {
        BaselineMethod::Bicubic => unreachable!(),
        BaselineMethod::Idw => {
            let mut out = vec![0.0; orows * ocols];
            out.par_chunks_mut(ocols).enumerate().try_for_each(
                |(i, row)| -> Result<()> {
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell = idw(&samples, (i as f64, j as f64), 2.0)?;
                    }
                    Ok(())
                },
            )?;
            Grid::new(orows, ocols, out)
        }
        BaselineMethod::OrdinaryKriging | BaselineMethod::UniversalKriging => {
            let drift = if method == BaselineMethod::OrdinaryKriging {
                Drift::None
            } else {
                Drift::Linear
            };
            let model = fit_variogram(&samples, VARIOGRAM_BINS)?;
            let mut out = vec![0.0; orows * ocols];
            out.par_chunks_mut(ocols).enumerate().try_for_each(
                |(i, row)| -> Result<()> {
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell = kriging_local(&samples, (i as f64, j as f64), &model, drift)?;
                    }
                    Ok(())
                },
            )?;
            Grid::new(orows, ocols, out)
        }
    }
}

/// Whether the CNN regressor trains the auxiliary autocorrelation head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxMode {
    None,
    Mat,
}

/// Training hyperparameters for the CNN regressor. The defaults are sized
/// for the toy experiments.
#[derive(Debug, Clone)]
pub struct CnnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub channels: usize,
    pub learning_rate: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            epochs: 3,
            batch_size: 16,
            channels: 4,
            learning_rate: 0.001,
        }
    }
}

/// Outcome of one training run of the CNN regressor.
#[derive(Debug, Clone, serde::Serialize)]
pub struct InterpRunResult {
    pub seed: u64,
    /// Test RMSE of the final-epoch model (no model selection).
    pub rmse_final: f64,
    /// Test RMSE of the model with the best validation RMSE.
    pub rmse_selected: f64,
}

struct CnnModel {
    trunk: Stack,
    main_head: Stack,
    aux_head: Option<Stack>,
}

impl CnnModel {
    fn new(rng: &mut ChaCha8Rng, channels: usize, aux: AuxMode) -> Self {
        let c = channels;
        let trunk = Stack::new(vec![
            Layer::UpsampleNn(2),
            Layer::conv2d(rng, 1, c, 3, 1, 1),
            Layer::batchnorm2d(c),
            Layer::Relu,
        ]);
        let head = |rng: &mut ChaCha8Rng| {
            Stack::new(vec![
                Layer::conv2d(rng, c, c, 3, 1, 1),
                Layer::batchnorm2d(c),
                Layer::Relu,
                Layer::conv2d(rng, c, 1, 3, 1, 1),
            ])
        };
        let main_head = head(rng);
        let aux_head = match aux {
            AuxMode::None => None,
            AuxMode::Mat => Some(head(rng)),
        };
        CnnModel {
            trunk,
            main_head,
            aux_head,
        }
    }

    fn param_tensors(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.trunk.params_mut();
        out.extend(self.main_head.params_mut());
        if let Some(aux) = &mut self.aux_head {
            out.extend(aux.params_mut());
        }
        out
    }

    /// Forward pass; returns (main output, aux output, param leaf ids).
    fn forward(
        &mut self,
        g: &mut Graph,
        x: NodeId,
        train: bool,
    ) -> Result<(NodeId, Option<NodeId>, Vec<NodeId>)> {
        let (features, mut ids) = self.trunk.forward(g, x, train)?;
        let (main, main_ids) = self.main_head.forward(g, features, train)?;
        ids.extend(main_ids);
        let aux = match &mut self.aux_head {
            None => None,
            Some(head) => {
                let (aux, aux_ids) = head.forward(g, features, train)?;
                ids.extend(aux_ids);
                Some(aux)
            }
        };
        Ok((main, aux, ids))
    }
}

/// Packs tiles into an [N,1,H,W] tensor.
fn batch_tensor(tiles: &[&Grid]) -> Tensor {
    let (h, w) = (tiles[0].rows(), tiles[0].cols());
    let mut data = Vec::with_capacity(tiles.len() * h * w);
    for t in tiles {
        data.extend_from_slice(t.values());
    }
    Tensor::new(vec![tiles.len(), 1, h, w], data).expect("consistent tile shapes")
}

fn batch_rmse(model: &mut CnnModel, inputs: &[Grid], targets: &[Grid]) -> Result<f64> {
    let mut se = 0.0;
    let mut count = 0usize;
    for chunk in inputs.chunks(32).zip(targets.chunks(32)) {
        let (ins, outs) = chunk;
        let refs: Vec<&Grid> = ins.iter().collect();
        let mut g = Graph::new();
        let x = g.leaf(&batch_tensor(&refs));
        let (pred, _, _) = model.forward(&mut g, x, false)?;
        let pv = g.value(pred);
        let mut off = 0;
        for t in outs {
            for (&p, &y) in pv[off..off + t.len()].iter().zip(t.values()) {
                se += (p - y) * (p - y);
            }
            off += t.len();
        }
        count += outs.iter().map(|t| t.len()).sum::<usize>();
    }
    Ok((se / count as f64).sqrt())
}

fn snapshot(model: &mut CnnModel) -> Vec<Tensor> {
    model.param_tensors().iter().map(|t| (**t).clone()).collect()
}

fn restore(model: &mut CnnModel, params: &[Tensor]) {
    for (dst, src) in model.param_tensors().into_iter().zip(params) {
        *dst = src.clone();
    }
}

/// Trains `runs` CNN regressors (seeds 0..runs−1) on paired 32→64 tiles.
///
/// Targets are the given 64×64 tiles; inputs are their strided
/// downsamples. The main head is trained with MSE against the target; with
/// `aux = Mat` a second head predicts the local Moran's I of the target
/// under an ℓ1 loss, combined per `weighting`. Per run, the test RMSE is
/// reported both for the final model and for the epoch with the best
/// validation RMSE.
pub fn cnn_interpolate_train(
    targets: &[Grid],
    split: &DatasetSplit,
    aux: AuxMode,
    weighting: &TaskWeighting,
    runs: usize,
    cfg: &CnnConfig,
) -> Result<Vec<InterpRunResult>> {
    weighting.validate()?;
    if targets.len() != split.total() {
        return Err(SxlError::invalid(format!(
            "split covers {} tiles but {} were given",
            split.total(),
            targets.len()
        )));
    }
    if runs == 0 || cfg.epochs == 0 || cfg.batch_size == 0 || cfg.channels == 0 {
        return Err(SxlError::invalid("runs, epochs, batch size and channels must be positive"));
    }
    // Tile ids are "<name>:<index>" strings; recover the indices.
    let index_of = |id: &str| -> Result<usize> {
        id.rsplit(':')
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < targets.len())
            .ok_or_else(|| SxlError::invalid(format!("bad tile id '{id}'")))
    };
    let gather = |ids: &[String]| -> Result<(Vec<Grid>, Vec<Grid>)> {
        let mut ins = Vec::with_capacity(ids.len());
        let mut outs = Vec::with_capacity(ids.len());
        for id in ids {
            let t = &targets[index_of(id)?];
            ins.push(downsample_strided(t)?);
            outs.push(t.clone());
        }
        Ok((ins, outs))
    };
    let (train_in, train_out) = gather(&split.train)?;
    let (val_in, val_out) = gather(&split.validation)?;
    let (test_in, test_out) = gather(&split.test)?;

    // Auxiliary targets: local Moran's I of the ground-truth tiles.
    let aux_out: Vec<Grid> = match aux {
        AuxMode::None => Vec::new(),
        AuxMode::Mat => {
            let nb = make_neighborhood(train_out[0].rows(), train_out[0].cols())?;
            train_out
                .iter()
                .map(|t| local_moran(t, &nb))
                .collect::<Result<_>>()?
        }
    };

    let run_one = |seed: u64| -> Result<InterpRunResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = CnnModel::new(&mut rng, cfg.channels, aux);
        let mut uw = UncertaintyWeights::new(2);
        let n_tasks = if aux == AuxMode::Mat { 2 } else { 1 };
        let mut sizes: Vec<usize> = model.param_tensors().iter().map(|t| t.numel()).collect();
        if matches!(weighting, TaskWeighting::Uncertainty) && n_tasks == 2 {
            sizes.extend(uw.s.iter().map(|t| t.numel()));
        }
        let mut adam = AdamState::new(cfg.learning_rate, 0.5, 0.999, &sizes);

        let mut order: Vec<usize> = (0..train_in.len()).collect();
        let mut best_val = f64::INFINITY;
        let mut best_params = snapshot(&mut model);
        for epoch in 0..cfg.epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
                let ins: Vec<&Grid> = batch.iter().map(|&i| &train_in[i]).collect();
                let outs: Vec<&Grid> = batch.iter().map(|&i| &train_out[i]).collect();
                let mut g = Graph::new();
                let x = g.leaf(&batch_tensor(&ins));
                let y = g.leaf(&batch_tensor(&outs));
                let (main, aux_pred, mut pids) = model.forward(&mut g, x, true)?;
                let main_loss = g.mse(main, y)?;
                let loss = if let Some(aux_pred) = aux_pred {
                    let refs: Vec<&Grid> = batch.iter().map(|&i| &aux_out[i]).collect();
                    let ay = g.leaf(&batch_tensor(&refs));
                    let aux_loss = g.l1(aux_pred, ay)?;
                    match weighting {
                        TaskWeighting::Hard(lambda) => {
                            combine_hard(&mut g, main_loss, &[aux_loss], *lambda)?
                        }
                        TaskWeighting::Uncertainty => {
                            let s_ids = uw.bind(&mut g);
                            pids.extend(s_ids.iter().copied());
                            combine_uncertainty(&mut g, &[main_loss, aux_loss], &s_ids)?
                        }
                    }
                } else {
                    main_loss
                };
                let loss_val = g.scalar_value(loss);
                if !loss_val.is_finite() {
                    return Err(SxlError::Numerical(format!(
                        "non-finite training loss (seed {seed}, epoch {epoch}, batch {bi}): {loss_val}"
                    )));
                }
                g.backward(loss)?;
                let grads: Vec<Vec<f64>> =
                    pids.iter().map(|&id| g.grad(id).to_vec()).collect();
                let grad_refs: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
                let mut params = model.param_tensors();
                if matches!(weighting, TaskWeighting::Uncertainty) && n_tasks == 2 {
                    params.extend(uw.s.iter_mut());
                }
                adam.step(&mut params, &grad_refs)?;
            }
            let val_rmse = batch_rmse(&mut model, &val_in, &val_out)?;
            if val_rmse < best_val {
                best_val = val_rmse;
                best_params = snapshot(&mut model);
            }
        }
        let rmse_final = batch_rmse(&mut model, &test_in, &test_out)?;
        restore(&mut model, &best_params);
        let rmse_selected = batch_rmse(&mut model, &test_in, &test_out)?;
        Ok(InterpRunResult {
            seed,
            rmse_final,
            rmse_selected,
        })
    };

    (0..runs as u64)
        .into_par_iter()
        .map(run_one)
        .collect::<Result<Vec<_>>>()
}

/// RMSE between two equally-shaped grids (re-export of the metric for the
/// interpolation pipeline).
pub fn grid_rmse(truth: &Grid, pred: &Grid) -> Result<f64> {
    metrics::rmse(truth, pred)
}
