//! GAN architectures (vanilla, DCGAN, EDGAN at reduced scale), the
//! auxiliary autocorrelation discriminator task, the training loop and the
//! validation-MMD model-selection protocol.
//!
//! The discriminator shares a trunk between the main real/fake task and
//! the auxiliary task; only the final head is task-specific. Auxiliary
//! embeddings of generated tiles are gradient-detached: the auxiliary loss
//! trains the discriminator only, never the generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{AdamState, Graph, Layer, NodeId, Stack, Tensor};
use crate::dataset::DatasetSplit;
use crate::error::{Result, SxlError};
use crate::grid::{make_neighborhood, Grid};
use crate::metrics::{median_heuristic_bandwidth, mmd2, Bandwidth, MmdConfig};
use crate::moran::{local_moran, multires_moran, MoranConfig};
use crate::multitask::{combine_gan_uncertainty, combine_hard, TaskWeighting, UncertaintyWeights};

/// Latent dimension of the vanilla and DCGAN generators.
pub const Z_DIM: usize = 100;
const LEAKY_SLOPE: f64 = 0.2;

/// Auxiliary discriminator task selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxTask {
    None,
    /// Single-resolution local Moran's I embedding (1 channel).
    Mat,
    /// Multi-resolution embedding with the given number of levels.
    MresMat(usize),
}

impl AuxTask {
    pub fn channels(&self) -> usize {
        match self {
            AuxTask::None => 0,
            AuxTask::Mat => 1,
            AuxTask::MresMat(levels) => *levels,
        }
    }
}

/// Reduced-scale architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Vanilla,
    Dcgan,
    Edgan,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Arch::Vanilla),
            "dcgan" => Ok(Arch::Dcgan),
            "edgan" => Ok(Arch::Edgan),
            other => Err(SxlError::invalid(format!(
                "unknown architecture '{other}' (expected vanilla|dcgan|edgan)"
            ))),
        }
    }
}

/// Generator + shared discriminator trunk + task-specific heads.
/// `heads[0]` is the main real/fake head; `heads[1]`, when present, is the
/// auxiliary embedding head. The trunk consumes `max(1, aux channels)`
/// channels; single-channel images are zero-padded up to that width.
pub struct GanModel {
    pub arch: Arch,
    pub tile: usize,
    pub aux: AuxTask,
    pub z_dim: usize,
    pub generator: Stack,
    pub trunk: Stack,
    pub heads: Vec<Stack>,
}

impl GanModel {
    pub fn new(rng: &mut ChaCha8Rng, arch: Arch, tile: usize, aux: AuxTask) -> Result<Self> {
        if tile < 4 || tile % 4 != 0 {
            return Err(SxlError::invalid(format!(
                "tile size must be a positive multiple of 4, got {tile}"
            )));
        }
        if let AuxTask::MresMat(levels) = aux {
            if levels == 0 {
                return Err(SxlError::invalid("mres-mat needs at least 1 level"));
            }
        }
        let c_in = aux.channels().max(1);
        let n_heads = if aux == AuxTask::None { 1 } else { 2 };
        let (z_dim, generator, trunk, head_fn): (usize, Stack, Stack, Box<dyn Fn(&mut ChaCha8Rng) -> Stack>) =
            match arch {
                Arch::Vanilla => {
                    let generator = Stack::new(vec![
                        Layer::linear(rng, Z_DIM, 64),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm1d(64),
                        Layer::linear(rng, 64, 128),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm1d(128),
                        Layer::linear(rng, 128, 128),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm1d(128),
                        Layer::linear(rng, 128, 256),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm1d(256),
                        Layer::linear(rng, 256, tile * tile),
                        Layer::Tanh,
                        Layer::Reshape(vec![1, tile, tile]),
                    ]);
                    let trunk = Stack::new(vec![
                        Layer::Flatten,
                        Layer::linear(rng, c_in * tile * tile, 128),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::linear(rng, 128, 64),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                    ]);
                    let head = Box::new(move |rng: &mut ChaCha8Rng| {
                        Stack::new(vec![Layer::linear(rng, 64, 1), Layer::Sigmoid])
                    });
                    (Z_DIM, generator, trunk, head)
                }
                Arch::Dcgan => {
                    let s4 = tile / 4;
                    let generator = Stack::new(vec![
                        Layer::linear(rng, Z_DIM, 32 * s4 * s4),
                        Layer::Reshape(vec![32, s4, s4]),
                        Layer::batchnorm2d(32),
                        Layer::Relu,
                        Layer::deconv2d(rng, 32, 16, 4, 2, 1),
                        Layer::batchnorm2d(16),
                        Layer::Relu,
                        Layer::deconv2d(rng, 16, 8, 4, 2, 1),
                        Layer::batchnorm2d(8),
                        Layer::Relu,
                        Layer::conv2d(rng, 8, 1, 3, 1, 1),
                        Layer::Tanh,
                    ]);
                    let trunk = Stack::new(vec![
                        Layer::conv2d(rng, c_in, 8, 4, 2, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(8),
                        Layer::conv2d(rng, 8, 16, 4, 2, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(16),
                    ]);
                    let head = Box::new(move |rng: &mut ChaCha8Rng| {
                        Stack::new(vec![
                            Layer::conv2d(rng, 16, 4, 3, 1, 1),
                            Layer::LeakyRelu(LEAKY_SLOPE),
                            Layer::Flatten,
                            Layer::linear(rng, 4 * s4 * s4, 1),
                            Layer::Sigmoid,
                        ])
                    });
                    (Z_DIM, generator, trunk, head)
                }
                Arch::Edgan => {
                    // Encoder-decoder generator over a spatial noise field.
                    let generator = Stack::new(vec![
                        Layer::Reshape(vec![1, tile, tile]),
                        Layer::conv2d(rng, 1, 8, 3, 1, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(8),
                        Layer::conv2d(rng, 8, 16, 4, 2, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(16),
                        Layer::conv2d(rng, 16, 16, 3, 1, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(16),
                        Layer::deconv2d(rng, 16, 8, 4, 2, 1),
                        Layer::Relu,
                        Layer::deconv2d(rng, 8, 8, 3, 1, 1),
                        Layer::Relu,
                        Layer::conv2d(rng, 8, 1, 3, 1, 1),
                        Layer::Tanh,
                    ]);
                    let s4 = tile / 4;
                    let trunk = Stack::new(vec![
                        Layer::conv2d(rng, c_in, 8, 4, 2, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(8),
                        Layer::conv2d(rng, 8, 8, 3, 1, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(8),
                        Layer::conv2d(rng, 8, 16, 4, 2, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(16),
                        Layer::conv2d(rng, 16, 16, 3, 1, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(16),
                        Layer::conv2d(rng, 16, 16, 3, 1, 1),
                        Layer::LeakyRelu(LEAKY_SLOPE),
                        Layer::batchnorm2d(16),
                    ]);
                    let head = Box::new(move |rng: &mut ChaCha8Rng| {
                        Stack::new(vec![
                            Layer::conv2d(rng, 16, 1, s4, 1, 0),
                            Layer::Flatten,
                            Layer::Sigmoid,
                        ])
                    });
                    (tile * tile, generator, trunk, head)
                }
            };
        let heads = (0..n_heads).map(|_| head_fn(rng)).collect();
        Ok(GanModel {
            arch,
            tile,
            aux,
            z_dim,
            generator,
            trunk,
            heads,
        })
    }

    pub fn trunk_channels(&self) -> usize {
        self.aux.channels().max(1)
    }

    /// Runs the generator on a latent batch; output is [N,1,tile,tile].
    pub fn generate(
        &mut self,
        g: &mut Graph,
        z: &Tensor,
        train: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let x = g.leaf(z);
        self.generator.forward(g, x, train)
    }

    /// Discriminates a [N,C,tile,tile] node through the shared trunk and
    /// the given head; inputs with fewer channels are zero-padded.
    pub fn discriminate(
        &mut self,
        g: &mut Graph,
        x: NodeId,
        head: usize,
        train: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let c = self.trunk_channels();
        let x = if g.shape(x)[1] < c {
            g.pad_channels(x, c)?
        } else {
            x
        };
        let (features, mut ids) = self.trunk.forward(g, x, train)?;
        let (prob, head_ids) = self.heads[head].forward(g, features, train)?;
        ids.extend(head_ids);
        Ok((prob, ids))
    }

    /// Named tensors of every submodule, for checkpointing.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = self.generator.state("generator");
        out.extend(self.trunk.state("trunk"));
        for (i, head) in self.heads.iter().enumerate() {
            out.extend(head.state(&format!("head{i}")));
        }
        out
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        self.generator.load_state("generator", entries)?;
        self.trunk.load_state("trunk", entries)?;
        for (i, head) in self.heads.iter_mut().enumerate() {
            head.load_state(&format!("head{i}"), entries)?;
        }
        Ok(())
    }
}

/// Discriminator loss: BCE pushing real probabilities to 1 and fake
/// probabilities to 0 (sum of both terms).
pub fn d_loss_main(g: &mut Graph, real_prob: NodeId, fake_prob: NodeId) -> Result<NodeId> {
    let real_term = g.bce_const(real_prob, 1.0)?;
    let fake_term = g.bce_const(fake_prob, 0.0)?;
    g.add(real_term, fake_term)
}

/// Non-saturating generator loss: BCE pushing fake probabilities to 1.
pub fn g_loss(g: &mut Graph, fake_prob: NodeId) -> Result<NodeId> {
    g.bce_const(fake_prob, 1.0)
}

/// Auxiliary discriminator loss: BCE classification of real embeddings
/// (label 1) against embeddings of detached fakes (label 0).
pub fn d_loss_aux(g: &mut Graph, real_emb_prob: NodeId, fake_emb_prob: NodeId) -> Result<NodeId> {
    d_loss_main(g, real_emb_prob, fake_emb_prob)
}

/// Computes the auxiliary embedding of a tile as flat channel-major values.
pub fn aux_embedding(tile: &Grid, aux: AuxTask) -> Result<Vec<f64>> {
    match aux {
        AuxTask::None => Err(SxlError::invalid("no auxiliary task configured")),
        AuxTask::Mat => {
            let nb = make_neighborhood(tile.rows(), tile.cols())?;
            Ok(local_moran(tile, &nb)?.values().to_vec())
        }
        AuxTask::MresMat(levels) => {
            let cfg = MoranConfig {
                levels,
                pool_factor: 2,
            };
            Ok(multires_moran(tile, &cfg)?.flatten())
        }
    }
}

/// Training configuration for one or more GAN cycles.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub aux: AuxTask,
    pub weighting: TaskWeighting,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Vanilla,
            epochs: 40,
            batch_size: 64,
            seed: 0,
            aux: AuxTask::None,
            weighting: TaskWeighting::Hard(0.1),
            learning_rate: 0.001,
        }
    }
}

/// One epoch of the per-epoch trace emitted as JSON lines.
#[derive(Debug, Clone, Serialize)]
pub struct EpochTrace {
    pub cycle: usize,
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub aux_losses: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub val_mmd: f64,
}

/// Outcome of one training cycle: the checkpoint of the epoch with the
/// best (lowest) validation MMD, plus per-epoch traces.
pub struct CycleResult {
    pub cycle: usize,
    pub validation_mmd: f64,
    pub best_epoch: usize,
    pub best_checkpoint: Vec<(String, Tensor)>,
    pub traces: Vec<EpochTrace>,
}

/// Packs plain single-channel tiles zero-padded to `channels`.
fn padded_image_tensor(values: &[Vec<f64>], tile: usize, channels: usize) -> Tensor {
    let spatial = tile * tile;
    let mut data = vec![0.0; values.len() * channels * spatial];
    for (i, v) in values.iter().enumerate() {
        data[i * channels * spatial..i * channels * spatial + spatial].copy_from_slice(v);
    }
    Tensor::new(vec![values.len(), channels, tile, tile], data).expect("consistent shapes")
}

fn sample_z(rng: &mut ChaCha8Rng, n: usize, z_dim: usize) -> Tensor {
    let data = (0..n * z_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![n, z_dim], data).expect("shape matches data")
}

fn grids_from_values(values: &[f64], n: usize, tile: usize) -> Result<Vec<Grid>> {
    let spatial = tile * tile;
    (0..n)
        .map(|i| Grid::new(tile, tile, values[i * spatial..(i + 1) * spatial].to_vec()))
        .collect()
}

/// Generates `n` tiles from the current generator in inference mode.
pub fn sample_tiles(
    model: &mut GanModel,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Result<Vec<Grid>> {
    let mut out = Vec::with_capacity(n);
    for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
        let z = sample_z(rng, chunk.len(), model.z_dim);
        let mut g = Graph::new();
        let (fake, _) = model.generate(&mut g, &z, false)?;
        out.extend(grids_from_values(g.value(fake), chunk.len(), model.tile)?);
    }
    Ok(out)
}

fn check_finite(value: f64, name: &str, cycle: usize, epoch: usize, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(SxlError::Numerical(format!(
            "non-finite {name} at cycle {cycle}, epoch {epoch}, batch {batch}: {value}"
        )))
    }
}

/// Trains one GAN cycle on the training tiles, evaluating validation MMD
/// after every epoch with a bandwidth frozen at the start of the cycle.
/// Returns the checkpoint of the best validation epoch.
pub fn train_cycle(
    targets: &[Grid],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    cycle: usize,
) -> Result<CycleResult> {
    cfg.weighting.validate()?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(SxlError::invalid("epochs and batch size must be positive"));
    }
    if targets.len() != split.total() {
        return Err(SxlError::invalid(format!(
            "split covers {} tiles but {} were given",
            split.total(),
            targets.len()
        )));
    }
    let index_of = |id: &str| -> Result<usize> {
        id.rsplit(':')
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < targets.len())
            .ok_or_else(|| SxlError::invalid(format!("bad tile id '{id}'")))
    };
    let train_tiles: Vec<&Grid> = split
        .train
        .iter()
        .map(|id| index_of(id).map(|i| &targets[i]))
        .collect::<Result<_>>()?;
    let val_tiles: Vec<Grid> = split
        .validation
        .iter()
        .map(|id| index_of(id).map(|i| targets[i].clone()))
        .collect::<Result<_>>()?;
    if train_tiles.is_empty() || val_tiles.is_empty() {
        return Err(SxlError::invalid("empty train or validation split"));
    }
    let tile = train_tiles[0].rows();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GanModel::new(&mut rng, cfg.arch, tile, cfg.aux)?;
    let n_aux = if cfg.aux == AuxTask::None { 0 } else { 1 };
    let c = model.trunk_channels();

    // Real auxiliary embeddings are loop-invariant: cache them per tile.
    let real_emb: Vec<Vec<f64>> = if n_aux > 0 {
        train_tiles
            .iter()
            .map(|t| aux_embedding(t, cfg.aux))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    // Frozen MMD bandwidth for the whole cycle, from the validation pool.
    let bw = median_heuristic_bandwidth(&val_tiles, &val_tiles)?;
    let mmd_cfg = MmdConfig {
        bandwidth: Bandwidth::Fixed(bw),
    };

    let mut uw = UncertaintyWeights::new(1 + n_aux);
    let use_uw = matches!(cfg.weighting, TaskWeighting::Uncertainty) && n_aux > 0;

    let g_sizes: Vec<usize> = model.generator.params().iter().map(|t| t.numel()).collect();
    let mut d_sizes: Vec<usize> = model.trunk.params().iter().map(|t| t.numel()).collect();
    for head in &model.heads {
        d_sizes.extend(head.params().iter().map(|t| t.numel()));
    }
    if use_uw {
        d_sizes.extend(uw.s.iter().map(|t| t.numel()));
    }
    let mut g_adam = AdamState::new(cfg.learning_rate, 0.5, 0.999, &g_sizes);
    let mut d_adam = AdamState::new(cfg.learning_rate, 0.5, 0.999, &d_sizes);
    drop(g_sizes);

    let mut traces = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<(String, Tensor)>)> = None;
    let mut order: Vec<usize> = (0..train_tiles.len()).collect();

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut d_sum = 0.0;
        let mut g_sum = 0.0;
        let mut aux_sum = 0.0;
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n = batch.len();

            // --- Discriminator update on detached fakes ---
            let z = sample_z(&mut rng, n, model.z_dim);
            let fake_values = {
                let mut g = Graph::new();
                let (fake, _) = model.generate(&mut g, &z, true)?;
                grids_from_values(g.value(fake), n, tile)?
            };
            let mut g = Graph::new();
            // main-task input: real tiles then fakes, zero-padded to C
            let mut images: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| train_tiles[i].values().to_vec())
                .collect();
            images.extend(fake_values.iter().map(|t| t.values().to_vec()));
            let x = g.leaf(&padded_image_tensor(&images, tile, c));
            let (probs, d_ids) = model.discriminate(&mut g, x, 0, true)?;
            // labels: first n real, last n fake
            let real_probs = g.reshape(probs, vec![2 * n])?;
            let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
            let y = g.leaf(&Tensor::new(vec![2 * n], labels)?);
            let main_loss_half = g.bce(real_probs, y)?;
            // The objective is the sum of the real and fake BCE terms; the
            // mean over the joint batch halves it, so scale back up.
            let main_loss = g.scale(main_loss_half, 2.0);

            let (d_obj, aux_loss_val, s_ids, aux_ids) = if n_aux > 0 {
                let mut emb: Vec<Vec<f64>> =
                    batch.iter().map(|&i| real_emb[i].clone()).collect();
                for f in &fake_values {
                    emb.push(aux_embedding(f, cfg.aux)?);
                }
                let spatial = tile * tile;
                let mut data = Vec::with_capacity(2 * n * c * spatial);
                for e in &emb {
                    data.extend_from_slice(e);
                }
                let ax = g.leaf(&Tensor::new(vec![2 * n, c, tile, tile], data)?);
                let (aprobs, a_ids) = model.discriminate(&mut g, ax, 1, true)?;
                let aflat = g.reshape(aprobs, vec![2 * n])?;
                let alabels: Vec<f64> =
                    (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
                let ay = g.leaf(&Tensor::new(vec![2 * n], alabels)?);
                let aux_half = g.bce(aflat, ay)?;
                let aux_loss = g.scale(aux_half, 2.0);
                let aux_val = g.scalar_value(aux_loss);
                match cfg.weighting {
                    TaskWeighting::Hard(lambda) => (
                        combine_hard(&mut g, main_loss, &[aux_loss], lambda)?,
                        aux_val,
                        Vec::new(),
                        a_ids,
                    ),
                    TaskWeighting::Uncertainty => {
                        let s_ids = uw.bind(&mut g);
                        (
                            combine_gan_uncertainty(&mut g, main_loss, &[aux_loss], &s_ids)?,
                            aux_val,
                            s_ids,
                            a_ids,
                        )
                    }
                }
            } else {
                (main_loss, 0.0, Vec::new(), Vec::new())
            };
            let d_loss_val = g.scalar_value(main_loss);
            check_finite(g.scalar_value(d_obj), "discriminator loss", cycle, epoch, bi)?;
            g.backward(d_obj)?;
            // The trunk is bound twice (main and aux passes); sum the leaf
            // gradients per trunk parameter before stepping.
            let n_trunk = model.trunk.params().len();
            let mut grads: Vec<Vec<f64>> = Vec::new();
            for k in 0..n_trunk {
                let mut gr = g.grad(d_ids[k]).to_vec();
                if !aux_ids.is_empty() {
                    for (a, b) in gr.iter_mut().zip(g.grad(aux_ids[k])) {
                        *a += b;
                    }
                }
                grads.push(gr);
            }
            for &id in &d_ids[n_trunk..] {
                grads.push(g.grad(id).to_vec());
            }
            for &id in aux_ids.get(n_trunk..).unwrap_or(&[]) {
                grads.push(g.grad(id).to_vec());
            }
            for &id in &s_ids {
                grads.push(g.grad(id).to_vec());
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
            let mut params = model.trunk.params_mut();
            for head in &mut model.heads {
                params.extend(head.params_mut());
            }
            if use_uw {
                params.extend(uw.s.iter_mut());
            }
            d_adam.step(&mut params, &grad_refs)?;

            // --- Generator update through the discriminator ---
            let z = sample_z(&mut rng, n, model.z_dim);
            let mut g = Graph::new();
            let (fake, g_ids) = model.generate(&mut g, &z, true)?;
            let (fake_probs, _) = model.discriminate(&mut g, fake, 0, true)?;
            let gen_loss = g_loss(&mut g, fake_probs)?;
            let g_loss_val = g.scalar_value(gen_loss);
            check_finite(g_loss_val, "generator loss", cycle, epoch, bi)?;
            g.backward(gen_loss)?;
            let grads: Vec<Vec<f64>> = g_ids.iter().map(|&id| g.grad(id).to_vec()).collect();
            let grad_refs: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
            let mut params = model.generator.params_mut();
            g_adam.step(&mut params, &grad_refs)?;

            d_sum += d_loss_val;
            g_sum += g_loss_val;
            aux_sum += aux_loss_val;
            batches += 1;
        }

        // Validation MMD of freshly generated samples.
        let generated = sample_tiles(&mut model, &mut rng, val_tiles.len())?;
        let val_mmd = mmd2(&generated, &val_tiles, &mmd_cfg)?;
        check_finite(val_mmd, "validation MMD", cycle, epoch, usize::MAX)?;
        if best.as_ref().map_or(true, |(b, _, _)| val_mmd < *b) {
            best = Some((val_mmd, epoch, model.state()));
        }
        traces.push(EpochTrace {
            cycle,
            epoch,
            d_loss: d_sum / batches as f64,
            g_loss: g_sum / batches as f64,
            aux_losses: if n_aux > 0 {
                vec![aux_sum / batches as f64]
            } else {
                Vec::new()
            },
            sigmas: if use_uw { uw.sigmas() } else { Vec::new() },
            val_mmd,
        });
    }

    let (validation_mmd, best_epoch, best_checkpoint) = best.expect("at least one epoch ran");
    Ok(CycleResult {
        cycle,
        validation_mmd,
        best_epoch,
        best_checkpoint,
        traces,
    })
}

/// Trains `cycles` independent GAN cycles (seeds cfg.seed + cycle index),
/// in parallel when hardware allows; results are ordered by cycle.
pub fn train_cycles(
    targets: &[Grid],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    cycles: usize,
) -> Result<Vec<CycleResult>> {
    if cycles == 0 {
        return Err(SxlError::invalid("need at least one cycle"));
    }
    (0..cycles)
        .into_par_iter()
        .map(|cycle| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(cycle as u64);
            train_cycle(targets, split, &c, cycle)
        })
        .collect()
}

/// Picks the cycle with the lowest validation MMD (lowest index on ties)
/// and scores its generator against the test tiles.
pub fn select_generator(
    cycles: &[CycleResult],
    test_tiles: &[Grid],
    cfg: &TrainConfig,
) -> Result<(usize, f64)> {
    if cycles.is_empty() {
        return Err(SxlError::invalid("no cycles to select from"));
    }
    let mut best = 0;
    for (i, c) in cycles.iter().enumerate() {
        if c.validation_mmd < cycles[best].validation_mmd {
            best = i;
        }
    }
    let tile = test_tiles
        .first()
        .ok_or_else(|| SxlError::invalid("empty test set"))?
        .rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(best as u64) ^ 0x5EED);
    let mut model = GanModel::new(&mut rng, cfg.arch, tile, cfg.aux)?;
    model.load_state(&cycles[best].best_checkpoint)?;
    let generated = sample_tiles(&mut model, &mut rng, test_tiles.len())?;
    let bw = median_heuristic_bandwidth(test_tiles, test_tiles)?;
    let test_mmd = mmd2(
        &generated,
        test_tiles,
        &MmdConfig {
            bandwidth: Bandwidth::Fixed(bw),
        },
    )?;
    Ok((best, test_mmd))
}
