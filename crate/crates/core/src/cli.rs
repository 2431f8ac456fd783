//! Command-line front end wiring the library modules into reproducible
//! experiments.
//!
//! Config precedence is flags > config file (`--config`, `key=value`
//! lines) > built-in defaults; the fully-resolved configuration is echoed
//! to `<out>/config.echo` before any work begins. The environment variable
//! `SXL_SEED` provides a default seed when `--seed` is absent. Exit codes:
//! 0 success, 1 invalid input or usage, 2 runtime failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datagen::toy_dataset;
use crate::dataset::split_dataset;
use crate::error::{Result, SxlError};
use crate::gan::{self, Arch, AuxTask, GanModel, TrainConfig};
use crate::autodiff::checkpoint;
use crate::grdf;
use crate::grid::{Grid, GridStack};
use crate::interp::{cnn_interpolate_train, interpolate_grid, AuxMode, BaselineMethod, CnnConfig};
use crate::metrics::{median_heuristic_bandwidth, mmd2, rmse, Bandwidth, MmdConfig};
use crate::moran::{multires_moran, MoranConfig};
use crate::multitask::TaskWeighting;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "sxl", version, about = "Auxiliary-task spatial learning toolkit")]
struct Cli {
    /// Config file with key=value lines; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness; falls back to $SXL_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the multi-resolution local Moran's I stack of a grid.
    Moran(MoranArgs),
    /// Dataset generation.
    #[command(subcommand)]
    Datagen(DatagenCmd),
    /// GAN training and evaluation.
    #[command(subcommand)]
    Gan(GanCmd),
    /// Interpolation baselines and the CNN regressor.
    #[command(subcommand)]
    Interp(InterpCmd),
    /// Metrics on saved grids.
    #[command(subcommand)]
    Eval(EvalCmd),
}

#[derive(Args)]
struct MoranArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    pool_factor: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DatagenCmd {
    /// Generate mirrored Gaussian peak/dip toy tiles.
    Toy {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GanCmd {
    Train(GanTrainArgs),
    Eval(GanEvalArgs),
}

#[derive(Args)]
struct GanTrainArgs {
    /// Dataset directory produced by `datagen` (manifest.txt + grids/).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    arch: Option<String>,
    /// Auxiliary task: none | mat | mres-mat.
    #[arg(long)]
    aux: Option<String>,
    /// Levels for mres-mat.
    #[arg(long)]
    levels: Option<usize>,
    /// uw | lambda:<value>.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    parallel_cycles: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GanEvalArgs {
    /// Checkpoint written by `gan train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; MMD is computed against its test split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    aux: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Subcommand)]
enum InterpCmd {
    /// Train the CNN interpolator (optionally with the Moran auxiliary task).
    Fit(InterpFitArgs),
    /// Run one classical baseline on a single low-resolution grid.
    Run {
        /// bicubic | idw | ok | uk.
        #[arg(long)]
        method: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate all baselines plus CNN variants on a dataset; emits a
    /// JSON-lines table of {method, seed, rmse_no_selection, rmse_selected}.
    Eval(InterpEvalArgs),
}

#[derive(Args)]
struct InterpFitArgs {
    #[arg(long)]
    data: PathBuf,
    /// none | mat.
    #[arg(long)]
    aux: Option<String>,
    /// uw | lambda:<value>.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpEvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// uw | lambda:<value>, used for the auxiliary CNN variant.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Squared maximum mean discrepancy between two grid directories.
    Mmd {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Positive bandwidth, or "median" for the median heuristic.
        #[arg(long)]
        bandwidth: Option<String>,
    },
    /// Root mean squared error between two grids.
    Rmse {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
}

/// key=value overrides loaded from `--config`.
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    SxlError::invalid(format!("config line {} is not key=value", i + 1))
                })?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| SxlError::invalid(format!("config key '{key}': bad value '{v}'"))),
        }
    }

    fn raw(&self, key: &str) -> Option<String> {
        self.0.get(key).cloned()
    }
}

fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    cfg: &FileConfig,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(flag.or(cfg.get(key)?).unwrap_or(default))
}

fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = cfg.get("seed")? {
        return Ok(s);
    }
    match std::env::var("SXL_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| SxlError::invalid(format!("SXL_SEED is not an integer: '{v}'"))),
        Err(_) => Ok(0),
    }
}

fn parse_weighting(s: &str) -> Result<TaskWeighting> {
    if s == "uw" {
        return Ok(TaskWeighting::Uncertainty);
    }
    if let Some(v) = s.strip_prefix("lambda:") {
        let lambda: f64 = v
            .parse()
            .map_err(|_| SxlError::invalid(format!("bad lambda value '{v}'")))?;
        let w = TaskWeighting::Hard(lambda);
        w.validate()?;
        return Ok(w);
    }
    Err(SxlError::invalid(format!(
        "unknown weighting '{s}' (expected uw or lambda:<value>)"
    )))
}

fn parse_aux(s: &str, levels: usize) -> Result<AuxTask> {
    match s {
        "none" => Ok(AuxTask::None),
        "mat" => Ok(AuxTask::Mat),
        "mres-mat" => Ok(AuxTask::MresMat(levels)),
        other => Err(SxlError::invalid(format!(
            "unknown aux task '{other}' (expected none|mat|mres-mat)"
        ))),
    }
}

/// Writes the fully-resolved configuration before any other output.
fn echo_config(out_dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut f = fs::File::create(out_dir.join("config.echo"))?;
    for (k, v) in entries {
        writeln!(f, "{k}={v}")?;
    }
    Ok(())
}

fn id_to_filename(id: &str) -> String {
    format!("{}.grd", id.replace(':', "_"))
}

/// Loads a dataset directory: `manifest.txt` (tile ids in order) plus one
/// GRDF file per tile under `grids/`.
fn load_dataset(dir: &Path) -> Result<(Vec<String>, Vec<Grid>)> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let ids: Vec<String> = manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if ids.is_empty() {
        return Err(SxlError::invalid(format!(
            "empty manifest in {}",
            dir.display()
        )));
    }
    let mut tiles = Vec::with_capacity(ids.len());
    for id in &ids {
        let stack = grdf::read_grid(dir.join("grids").join(id_to_filename(id)))?;
        tiles.push(single_channel(stack)?);
    }
    Ok((ids, tiles))
}

fn single_channel(stack: GridStack) -> Result<Grid> {
    if stack.n_channels() != 1 {
        return Err(SxlError::invalid(format!(
            "expected a single-channel grid, got {} channels",
            stack.n_channels()
        )));
    }
    Ok(stack.channels()[0].clone())
}

/// Loads every `.grd` file in a directory in lexicographic order.
fn load_grid_dir(dir: &Path) -> Result<Vec<Grid>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "grd"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SxlError::invalid(format!(
            "no .grd files in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| grdf::read_grid(&p).and_then(single_channel))
        .collect()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| SxlError::invalid(format!("serialization failed: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Parses argv and runs the selected command, mapping errors to exit codes.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e @ (SxlError::InvalidArgument(_) | SxlError::Format { .. })) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &cfg)?;
    match cli.cmd {
        Command::Moran(a) => cmd_moran(a, &cfg),
        Command::Datagen(DatagenCmd::Toy { count, size, out }) => {
            cmd_datagen_toy(count, size, out, seed, &cfg)
        }
        Command::Gan(GanCmd::Train(a)) => cmd_gan_train(a, seed, &cfg),
        Command::Gan(GanCmd::Eval(a)) => cmd_gan_eval(a, seed, &cfg),
        Command::Interp(InterpCmd::Fit(a)) => cmd_interp_fit(a, seed, &cfg),
        Command::Interp(InterpCmd::Run { method, input, out }) => {
            let method = BaselineMethod::parse(&method)?;
            let grid = single_channel(grdf::read_grid(&input)?)?;
            let pred = interpolate_grid(&grid, method)?;
            grdf::write_grid(&GridStack::single(pred), &out)?;
            Ok(())
        }
        Command::Interp(InterpCmd::Eval(a)) => cmd_interp_eval(a, seed, &cfg),
        Command::Eval(EvalCmd::Mmd { x, y, bandwidth }) => {
            let xs = load_grid_dir(&x)?;
            let ys = load_grid_dir(&y)?;
            let bandwidth = bandwidth.or_else(|| cfg.raw("bandwidth"));
            let bw = match bandwidth.as_deref() {
                None | Some("median") => Bandwidth::MedianHeuristic,
                Some(v) => Bandwidth::Fixed(
                    v.parse()
                        .map_err(|_| SxlError::invalid(format!("bad bandwidth '{v}'")))?,
                ),
            };
            let value = mmd2(&xs, &ys, &MmdConfig { bandwidth: bw })?;
            println!("{value:.17}");
            Ok(())
        }
        Command::Eval(EvalCmd::Rmse { truth, pred }) => {
            let t = single_channel(grdf::read_grid(&truth)?)?;
            let p = single_channel(grdf::read_grid(&pred)?)?;
            println!("{:.17}", rmse(&t, &p)?);
            Ok(())
        }
    }
}

fn cmd_moran(a: MoranArgs, cfg: &FileConfig) -> Result<()> {
    let levels = resolve(a.levels, cfg, "levels", 1)?;
    let pool_factor = resolve(a.pool_factor, cfg, "pool_factor", 2)?;
    let grid = single_channel(grdf::read_grid(&a.input)?)?;
    let stack = multires_moran(
        &grid,
        &MoranConfig {
            levels,
            pool_factor,
        },
    )?;
    grdf::write_grid(&stack, &a.out)?;
    Ok(())
}

fn cmd_datagen_toy(
    count: Option<usize>,
    size: Option<usize>,
    out: PathBuf,
    seed: u64,
    cfg: &FileConfig,
) -> Result<()> {
    let count = resolve(count, cfg, "count", 1000)?;
    let size = resolve(size, cfg, "size", 32)?;
    if count == 0 {
        return Err(SxlError::invalid("count must be positive"));
    }
    echo_config(
        &out,
        &[
            ("command", "datagen toy".into()),
            ("count", count.to_string()),
            ("size", size.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    let grids_dir = out.join("grids");
    fs::create_dir_all(&grids_dir)?;
    let tiles = toy_dataset(count, size, seed)?;
    let mut manifest = String::new();
    let width = count.to_string().len().max(4);
    for (i, tile) in tiles.into_iter().enumerate() {
        let id = format!("toy:{i:0width$}");
        grdf::write_grid(&GridStack::single(tile), grids_dir.join(id_to_filename(&id)))?;
        manifest.push_str(&id);
        manifest.push('\n');
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    Ok(())
}

fn cmd_gan_train(a: GanTrainArgs, seed: u64, cfg: &FileConfig) -> Result<()> {
    let arch_s: String = resolve(a.arch, cfg, "arch", "vanilla".into())?;
    let aux_s: String = resolve(a.aux, cfg, "aux", "none".into())?;
    let levels = resolve(a.levels, cfg, "levels", 3)?;
    let weighting_s: String = resolve(a.weighting, cfg, "weighting", "lambda:0.1".into())?;
    let epochs = resolve(a.epochs, cfg, "epochs", 40)?;
    let cycles = resolve(a.cycles, cfg, "cycles", 1)?;
    let batch_size = resolve(a.batch_size, cfg, "batch_size", 64)?;
    let parallel = resolve(a.parallel_cycles, cfg, "parallel_cycles", 1)?;
    let arch = Arch::parse(&arch_s)?;
    let aux = parse_aux(&aux_s, levels)?;
    let weighting = parse_weighting(&weighting_s)?;

    let (ids, tiles) = load_dataset(&a.data)?;
    echo_config(
        &a.out,
        &[
            ("command", "gan train".into()),
            ("data", a.data.display().to_string()),
            ("arch", arch_s.clone()),
            ("aux", aux_s.clone()),
            ("levels", levels.to_string()),
            ("weighting", weighting_s.clone()),
            ("epochs", epochs.to_string()),
            ("cycles", cycles.to_string()),
            ("batch_size", batch_size.to_string()),
            ("parallel_cycles", parallel.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    let split = split_dataset(&ids, seed)?;
    let tc = TrainConfig {
        arch,
        epochs,
        batch_size,
        seed,
        aux,
        weighting,
        ..TrainConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| SxlError::invalid(format!("thread pool: {e}")))?;
    let results = pool.install(|| gan::train_cycles(&tiles, &split, &tc, cycles))?;

    let ckpt_dir = a.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut traces = Vec::new();
    for r in &results {
        checkpoint::write_checkpoint(
            &r.best_checkpoint,
            ckpt_dir.join(format!("cycle{}.ckpt", r.cycle)),
        )?;
        traces.extend(r.traces.iter().cloned());
    }
    write_jsonl(&a.out.join("metrics.jsonl"), &traces)?;

    let test_tiles: Vec<Grid> = tile_subset(&split.test, &ids, &tiles)?;
    let (chosen, test_mmd) = gan::select_generator(&results, &test_tiles, &tc)?;
    fs::write(
        a.out.join("selection.json"),
        format!(
            "{{\"chosen_cycle\":{chosen},\"validation_mmd\":{},\"test_mmd\":{test_mmd}}}\n",
            results[chosen].validation_mmd
        ),
    )?;
    println!("chosen_cycle={chosen} test_mmd={test_mmd:.17}");
    Ok(())
}

fn tile_subset(subset: &[String], ids: &[String], tiles: &[Grid]) -> Result<Vec<Grid>> {
    subset
        .iter()
        .map(|id| {
            ids.iter()
                .position(|x| x == id)
                .map(|i| tiles[i].clone())
                .ok_or_else(|| SxlError::invalid(format!("unknown tile id '{id}'")))
        })
        .collect()
}

fn cmd_gan_eval(a: GanEvalArgs, seed: u64, cfg: &FileConfig) -> Result<()> {
    let arch_s: String = resolve(a.arch, cfg, "arch", "vanilla".into())?;
    let aux_s: String = resolve(a.aux, cfg, "aux", "none".into())?;
    let levels = resolve(a.levels, cfg, "levels", 3)?;
    let arch = Arch::parse(&arch_s)?;
    let aux = parse_aux(&aux_s, levels)?;

    let (ids, tiles) = load_dataset(&a.data)?;
    let split = split_dataset(&ids, seed)?;
    let test_tiles = tile_subset(&split.test, &ids, &tiles)?;
    let tile = test_tiles[0].rows();

    let entries = checkpoint::read_checkpoint(&a.checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GanModel::new(&mut rng, arch, tile, aux)?;
    model.load_state(&entries)?;
    let generated = gan::sample_tiles(&mut model, &mut rng, test_tiles.len())?;
    let bw = median_heuristic_bandwidth(&test_tiles, &test_tiles)?;
    let value = mmd2(
        &generated,
        &test_tiles,
        &MmdConfig {
            bandwidth: Bandwidth::Fixed(bw),
        },
    )?;
    println!("test_mmd={value:.17}");
    Ok(())
}

fn cmd_interp_fit(a: InterpFitArgs, seed: u64, cfg: &FileConfig) -> Result<()> {
    let aux_s: String = resolve(a.aux, cfg, "aux", "none".into())?;
    let weighting_s: String = resolve(a.weighting, cfg, "weighting", "uw".into())?;
    let epochs = resolve(a.epochs, cfg, "epochs", CnnConfig::default().epochs)?;
    let runs = resolve(a.runs, cfg, "runs", 1)?;
    let aux = match aux_s.as_str() {
        "none" => AuxMode::None,
        "mat" => AuxMode::Mat,
        other => {
            return Err(SxlError::invalid(format!(
                "unknown aux mode '{other}' (expected none|mat)"
            )))
        }
    };
    let weighting = parse_weighting(&weighting_s)?;
    let (ids, tiles) = load_dataset(&a.data)?;
    echo_config(
        &a.out,
        &[
            ("command", "interp fit".into()),
            ("data", a.data.display().to_string()),
            ("aux", aux_s.clone()),
            ("weighting", weighting_s.clone()),
            ("epochs", epochs.to_string()),
            ("runs", runs.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    let split = split_dataset(&ids, seed)?;
    let cnn_cfg = CnnConfig {
        epochs,
        ..CnnConfig::default()
    };
    let results = cnn_interpolate_train(&tiles, &split, aux, &weighting, runs, &cnn_cfg)?;
    write_jsonl(&a.out.join("metrics.jsonl"), &results)?;
    for r in &results {
        println!(
            "seed={} rmse_no_selection={:.17} rmse_selected={:.17}",
            r.seed, r.rmse_final, r.rmse_selected
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct InterpTableRow {
    method: String,
    seed: u64,
    rmse_no_selection: f64,
    rmse_selected: f64,
}

fn cmd_interp_eval(a: InterpEvalArgs, seed: u64, cfg: &FileConfig) -> Result<()> {
    let epochs = resolve(a.epochs, cfg, "epochs", CnnConfig::default().epochs)?;
    let runs = resolve(a.runs, cfg, "runs", 3)?;
    let weighting_s: String = resolve(a.weighting, cfg, "weighting", "uw".into())?;
    let weighting = parse_weighting(&weighting_s)?;
    let (ids, tiles) = load_dataset(&a.data)?;
    echo_config(
        &a.out,
        &[
            ("command", "interp eval".into()),
            ("data", a.data.display().to_string()),
            ("epochs", epochs.to_string()),
            ("runs", runs.to_string()),
            ("weighting", weighting_s.clone()),
            ("seed", seed.to_string()),
        ],
    )?;
    let split = split_dataset(&ids, seed)?;
    let mut rows = Vec::new();

    // classical baselines: deterministic, evaluated on the test split
    let test_tiles = tile_subset(&split.test, &ids, &tiles)?;
    for method in [
        BaselineMethod::Bicubic,
        BaselineMethod::Idw,
        BaselineMethod::OrdinaryKriging,
        BaselineMethod::UniversalKriging,
    ] {
        let mut sum = 0.0;
        for t in &test_tiles {
            let input = crate::grid::downsample_strided(t)?;
            let pred = interpolate_grid(&input, method)?;
            sum += crate::metrics::rmse(t, &pred)?.powi(2) * t.len() as f64;
        }
        let cells: usize = test_tiles.iter().map(|t| t.len()).sum();
        let value = (sum / cells as f64).sqrt();
        rows.push(InterpTableRow {
            method: method.name().to_string(),
            seed,
            rmse_no_selection: value,
            rmse_selected: value,
        });
    }

    let cnn_cfg = CnnConfig {
        epochs,
        ..CnnConfig::default()
    };
    for (label, aux) in [("cnn", AuxMode::None), ("cnn+mat", AuxMode::Mat)] {
        let results = cnn_interpolate_train(&tiles, &split, aux, &weighting, runs, &cnn_cfg)?;
        for r in results {
            rows.push(InterpTableRow {
                method: label.to_string(),
                seed: r.seed,
                rmse_no_selection: r.rmse_final,
                rmse_selected: r.rmse_selected,
            });
        }
    }
    write_jsonl(&a.out.join("metrics.jsonl"), &rows)?;
    for r in &rows {
        println!(
            "method={} seed={} rmse_no_selection={:.17} rmse_selected={:.17}",
            r.method, r.seed, r.rmse_no_selection, r.rmse_selected
        );
    }
    Ok(())
}
