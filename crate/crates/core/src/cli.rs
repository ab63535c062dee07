//! Command-line front end: dataset/mask generation, global training,
//! reconstruction and evaluation.
//!
//! Configuration comes from an optional JSON file (unknown keys rejected)
//! with individual flags overriding file values. Every command is
//! deterministic given its seed and configuration; outputs are written
//! atomically.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adam::{AdamState, LrSchedule};
use crate::denoiser::{self, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::image::ComplexImage;
use crate::io;
use crate::londn::{londn_reconstruct, LondnConfig, LondnTrace, TrainItem};
use crate::metrics;
use crate::neighbors::{knn, Metric, NeighborSet};
use crate::phantom::{self, Dataset, MaskSpec, PhantomSpec};
use crate::rng::SeededRng;
use crate::unroll::{self, train, TrainingPair, UnrollConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub denoiser: DenoiserConfig,
    pub unroll: UnrollConfig,
    pub londn: LondnConfig,
    pub mask: MaskSpec,
    pub phantom: PhantomSpec,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad config: {e}")))
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        io::write_atomic(&dir.join("config.json"), json.as_bytes())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "londn",
    about = "Multi-coil MR reconstruction with locally trained unrolled networks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a clustered phantom dataset.
    GenData(GenDataArgs),
    /// Generate a variable-density Cartesian sampling mask.
    GenMask(GenMaskArgs),
    /// Train one network on the full training set.
    TrainGlobal(TrainGlobalArgs),
    /// Reconstruct held-out test scans.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions against ground truth.
    Eval(EvalArgs),
    /// Neighbor-matching accuracy of reconstruction traces.
    Nma(NmaArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenMaskArgs {
    #[arg(long)]
    pub accel: u32,
    #[arg(long)]
    pub center: Option<usize>,
    #[arg(long)]
    pub width: usize,
    /// Mask height; defaults to width.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output stem (`.msk` is appended).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainGlobalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `fixed:<mask stem>` or `random` (fresh mask per sample).
    #[arg(long)]
    pub mask: String,
    #[arg(long)]
    pub out_weights: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub l1_weight: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    ZeroFilled,
    Global,
    Londn,
    Oracle,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Test indices; all held-out scans when omitted.
    #[arg(long = "test-index")]
    pub test_indices: Vec<usize>,
    /// Mask stem (`.msk` file written by gen-mask).
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alternations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Worker threads for independent test scans.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub recon_dir: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct NmaArgs {
    #[arg(long)]
    pub trace_dir: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub k: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::GenMask(a) => gen_mask_cmd(a),
        Command::TrainGlobal(a) => train_global(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a),
        Command::Nma(a) => nma_cmd(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let rng = SeededRng::new(cfg.seed);
    let ds = phantom::gen_dataset(&cfg.phantom, &rng)?;
    ds.write(&args.out)?;
    cfg.echo(&args.out)?;
    println!(
        "wrote {} training and {} test samples ({} clusters, {}x{}, {} coils) to {}",
        ds.train.len(),
        ds.test.len(),
        cfg.phantom.n_clusters,
        cfg.phantom.size,
        cfg.phantom.size,
        cfg.phantom.n_coils,
        args.out.display()
    );
    Ok(())
}

fn gen_mask_cmd(args: GenMaskArgs) -> Result<()> {
    let spec = MaskSpec {
        accel: args.accel,
        center_lines: args
            .center
            .unwrap_or_else(|| phantom::default_center_lines(args.width, args.accel)),
        width: args.width,
        seed: args.seed,
    };
    let mut rng = SeededRng::new(spec.seed);
    let mask = phantom::gen_mask(&spec, args.height.unwrap_or(args.width), &mut rng)?;
    io::write_mask(&args.out, &mask)?;
    println!(
        "wrote {}x{} mask, {} of {} columns sampled ({} center) to {}.msk",
        mask.height(),
        mask.width(),
        mask.sampled_columns(),
        mask.width(),
        mask.center_lines(),
        args.out.display()
    );
    Ok(())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn train_global(args: TrainGlobalArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.dataset = Some(args.dataset.clone());
    let ds = Dataset::read(&args.dataset)?;
    let rng = SeededRng::new(cfg.seed);

    // per-sample training pairs under a fixed or per-sample random mask
    let mut mask_log = String::from("pair_index,mask_hash\n");
    let mut pairs = Vec::with_capacity(ds.train.len());
    match args.mask.as_str() {
        "random" => {
            let spec = MaskSpec {
                width: ds.spec.size,
                ..cfg.mask.clone()
            };
            for (i, s) in ds.train.iter().enumerate() {
                let mut mask_rng = rng.stream(77_000 + i as u64);
                let mask = phantom::gen_mask(&spec, ds.spec.size, &mut mask_rng)?;
                mask_log.push_str(&format!("{i},{:016x}\n", fnv1a(mask.grid())));
                let model = ForwardModel::new(mask, ds.smaps.clone())?;
                let ksp = model.forward(&s.gt)?;
                pairs.push(TrainingPair::new(s.gt.clone(), model, ksp)?);
            }
        }
        fixed => {
            let stem = fixed
                .strip_prefix("fixed:")
                .ok_or_else(|| Error::invalid(format!("--mask must be 'random' or 'fixed:<stem>', got '{fixed}'")))?;
            let mask = io::read_mask(Path::new(stem))?;
            for (i, s) in ds.train.iter().enumerate() {
                mask_log.push_str(&format!("{i},{:016x}\n", fnv1a(mask.grid())));
                let model = ForwardModel::new(mask.clone(), ds.smaps.clone())?;
                let ksp = model.forward(&s.gt)?;
                pairs.push(TrainingPair::new(s.gt.clone(), model, ksp)?);
            }
        }
    }

    let mut train_rng = rng.stream(88_000);
    let mut params = DenoiserParams::random(&cfg.denoiser, &mut train_rng);
    let mut adam = AdamState::new(&params, LrSchedule::global());
    let losses = train(
        &mut params,
        &cfg.denoiser,
        &cfg.unroll,
        &pairs,
        args.epochs,
        args.batch,
        &mut adam,
        args.l1_weight,
        &mut train_rng,
    )?;

    denoiser::save_params(&args.out_weights, &cfg.denoiser, &params)?;
    unroll::write_loss_csv(&args.out_weights.join("loss.csv"), &losses)?;
    io::write_atomic(&args.out_weights.join("masks.csv"), mask_log.as_bytes())?;
    cfg.echo(&args.out_weights)?;
    println!(
        "trained on {} pairs for {} epochs; final mean loss {:.6e}; weights in {}",
        pairs.len(),
        args.epochs,
        losses.last().copied().unwrap_or(f64::NAN),
        args.out_weights.display()
    );
    Ok(())
}

/// Reconstructs one test scan; returns the estimate and an optional trace.
#[allow(clippy::too_many_arguments)]
fn reconstruct_one(
    method: Method,
    ds: &Dataset,
    trainset: &[TrainItem],
    index: usize,
    mask: &crate::image::SamplingMask,
    cfg: &RunConfig,
    weights: Option<&(DenoiserConfig, DenoiserParams)>,
) -> Result<(ComplexImage, Option<LondnTrace>)> {
    let sample = ds
        .test
        .get(index)
        .ok_or_else(|| Error::invalid(format!("test index {index} out of range")))?;
    let model = ForwardModel::new(mask.clone(), ds.smaps.clone())?;
    let ksp = model.forward(&sample.gt)?;

    match method {
        Method::ZeroFilled => Ok((model.adjoint(&ksp)?, None)),
        Method::Global => {
            let (dcfg, params) = weights.ok_or_else(|| {
                Error::invalid("--weights is required for the global method")
            })?;
            let x0 = model.adjoint(&ksp)?;
            let (x, _) = unroll::unroll_forward(params, dcfg, &cfg.unroll, &x0, &model, &ksp)?;
            Ok((x, None))
        }
        Method::Londn | Method::Oracle => {
            let mut lcfg = cfg.londn.clone();
            lcfg.oracle = method == Method::Oracle;
            let mut rng = SeededRng::new(cfg.seed).stream(3_000 + index as u64);
            let result = londn_reconstruct(
                &ksp,
                &model,
                trainset,
                &lcfg,
                &cfg.denoiser,
                &cfg.unroll,
                Some(&sample.gt),
                &mut rng,
            )?;
            Ok((result.x, Some(result.trace)))
        }
    }
}

fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.k {
        cfg.londn.k = k;
    }
    if let Some(s) = args.alternations {
        cfg.londn.alternations = s;
    }
    if let Some(t) = args.epochs {
        cfg.londn.epochs = Some(t);
    }
    if let Some(w) = &args.weights {
        cfg.weights = Some(w.clone());
        if matches!(args.method, Method::Londn | Method::Oracle) {
            cfg.londn.warm_start = Some(w.clone());
        }
    }
    cfg.dataset = Some(args.dataset.clone());
    cfg.output = Some(args.out.clone());

    let ds = Dataset::read(&args.dataset)?;
    let mask = io::read_mask(&args.mask)?;
    let weights = match &args.weights {
        Some(dir) => Some(denoiser::load_params(dir)?),
        None => None,
    };
    if let Some((dcfg, _)) = &weights {
        if matches!(args.method, Method::Global) && dcfg != &cfg.denoiser {
            cfg.denoiser = dcfg.clone();
        }
    }
    let trainset: Vec<TrainItem> = ds
        .train
        .iter()
        .map(|s| (s.gt.clone(), ds.smaps.clone()))
        .collect();

    let indices: Vec<usize> = if args.test_indices.is_empty() {
        (0..ds.test.len()).collect()
    } else {
        args.test_indices.clone()
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let run_one = |&index: &usize| -> Result<()> {
        let (x, trace) =
            reconstruct_one(args.method, &ds, &trainset, index, &mask, &cfg, weights.as_ref())?;
        io::write_complex_image(&args.out.join(format!("recon_{index:05}")), &x)?;
        if let Some(trace) = trace {
            let json = serde_json::to_string_pretty(&trace).expect("trace serializes");
            io::write_atomic(&args.out.join(format!("trace_{index:05}.json")), json.as_bytes())?;
        }
        Ok(())
    };
    if args.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
        pool.install(|| indices.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;
    } else {
        indices.iter().map(run_one).collect::<Result<Vec<_>>>()?;
    }

    cfg.echo(&args.out)?;
    println!(
        "reconstructed {} scan(s) with method {:?} into {}",
        indices.len(),
        args.method,
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ds = Dataset::read(&args.dataset)?;
    let mut entries = Vec::new();
    for index in 0..ds.test.len() {
        let stem = args.recon_dir.join(format!("recon_{index:05}"));
        if !stem.with_extension("hdr").exists() {
            continue;
        }
        let recon = io::read_complex_image(&stem)?;
        let report = metrics::report(&recon, &ds.test[index].gt)?;
        entries.push((format!("{index:05}"), report));
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!(
            "no reconstructions found in {}",
            args.recon_dir.display()
        )));
    }
    let csv = metrics::reports_to_csv(&entries);
    io::write_atomic(&args.out_csv, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn nma_cmd(args: NmaArgs) -> Result<()> {
    let ds = Dataset::read(&args.dataset)?;
    let train_gts: Vec<ComplexImage> = ds.train.iter().map(|s| s.gt.clone()).collect();

    // oracle neighbors from the ground-truth test images (euclidean)
    let mut found_per_alt: Vec<Vec<NeighborSet>> = Vec::new();
    let mut oracle_sets: Vec<NeighborSet> = Vec::new();
    for index in 0..ds.test.len() {
        let path = args.trace_dir.join(format!("trace_{index:05}.json"));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let trace: LondnTrace = serde_json::from_str(&text)
            .map_err(|e| Error::format(&path, format!("bad trace: {e}")))?;
        oracle_sets.push(knn(&ds.test[index].gt, &train_gts, args.k, Metric::L2)?);
        for (s, alt) in trace.alternations.iter().enumerate() {
            if found_per_alt.len() <= s {
                found_per_alt.resize(s + 1, Vec::new());
            }
            found_per_alt[s].push(alt.neighbors.clone());
        }
    }
    if oracle_sets.is_empty() {
        return Err(Error::invalid(format!(
            "no traces found in {}",
            args.trace_dir.display()
        )));
    }
    for (s, found) in found_per_alt.iter().enumerate() {
        let value = crate::neighbors::nma(found, &oracle_sets, args.k)?;
        println!("alternation {},NMA,{value:.2}", s + 1);
    }
    Ok(())
}
