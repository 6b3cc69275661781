//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::Error;
use crate::evaluation::{evaluate_dataset, mask_from_gray};
use crate::fusion::{binarize, ConfidenceMap};
use crate::pipeline::{dump_intermediates, segment, RunConfig, SceneInputs};
use crate::synth::{
    baseline_from_maps, generate, manifest_row, scene_stem, write_scene, BaselineMode, SynthParams,
    MANIFEST_HEADER,
};
use crate::tensor_io::{
    atomic_write, read_pgm, read_ppm, read_tensor, write_pgm, write_tensor, FeatureMap,
};

pub const LOG_ENV: &str = "SAFF_LOG";
const USAGE_EXIT: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "saff",
    version,
    about = "Unsupervised foreground segmentation from semantic and apparent cues"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one image.
    Segment(SegmentArgs),
    /// Segment every scene directory under an input root.
    Batch(BatchArgs),
    /// Score confidence maps against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Generate synthetic scenes.
    Synth(SynthArgs),
    /// Write single-cue baseline maps for every scene directory.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Target number of superpixels.
    #[arg(long = "superpixels", default_value_t = 256)]
    pub k_target: usize,
    #[arg(long, default_value_t = 10.0)]
    pub compactness: f64,
    /// Edge-weight scale of the apparent affinity.
    #[arg(long = "we", default_value_t = crate::encoding::DEFAULT_EDGE_SCALE)]
    pub edge_scale: f64,
    #[arg(long, default_value_t = crate::fusion::DEFAULT_BG_THRESHOLD)]
    pub th_bg: f64,
    #[arg(long, default_value_t = crate::fusion::DEFAULT_FG_THRESHOLD)]
    pub th_fg: f64,
    /// Threshold for the binary mask output.
    #[arg(long, default_value_t = crate::fusion::DEFAULT_BINARIZE_THRESHOLD)]
    pub binarize: f64,
    /// Reweight pseudo labels so both classes carry equal mass (default).
    #[arg(long, overrides_with = "no_balance")]
    pub balance: bool,
    #[arg(long, overrides_with = "balance")]
    pub no_balance: bool,
    /// Also write affinities, features, labels and the fitted model.
    #[arg(long)]
    pub dump_intermediates: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            k_target: self.k_target,
            compactness: self.compactness,
            edge_scale: self.edge_scale,
            th_bg: self.th_bg,
            th_fg: self.th_fg,
            binarize_threshold: self.binarize,
            balance: !self.no_balance,
            dump_intermediates: self.dump_intermediates,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub semantic: PathBuf,
    #[arg(long)]
    pub saliency: PathBuf,
    #[arg(long)]
    pub edge: PathBuf,
    /// Confidence map output (real32 SFT).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional binarized mask output (PGM).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Root holding one directory per image with image.ppm, semantic.sft, saliency.sft, edge.sft.
    #[arg(long)]
    pub input: PathBuf,
    /// Receives `<stem>.sft`, and `<stem>.mask.pgm` with --masks.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub masks: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Continue after a failed image instead of aborting the batch.
    #[arg(long)]
    pub keep_going: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of `<stem>.sft` confidence maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory with `<stem>.pgm` or `<stem>/gt.pgm` masks.
    #[arg(long)]
    pub gt: PathBuf,
    /// CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    /// Smallest accepted foreground area fraction.
    #[arg(long, default_value_t = 0.05)]
    pub fg_min: f64,
    /// Largest accepted foreground area fraction.
    #[arg(long, default_value_t = 0.6)]
    pub fg_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineKind {
    Semantic,
    Saliency,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: BaselineKind,
}

fn load_map(path: &Path) -> Result<FeatureMap, Error> {
    Ok(FeatureMap::from_tensor(&read_tensor(path)?)?)
}

fn write_map(map: &ConfidenceMap, path: &Path) -> Result<(), Error> {
    Ok(write_tensor(&map.to_tensor(), path)?)
}

struct ScenePaths {
    image: PathBuf,
    semantic: PathBuf,
    saliency: PathBuf,
    edge: PathBuf,
}

impl ScenePaths {
    fn in_dir(dir: &Path) -> Self {
        Self {
            image: dir.join("image.ppm"),
            semantic: dir.join("semantic.sft"),
            saliency: dir.join("saliency.sft"),
            edge: dir.join("edge.sft"),
        }
    }
}

/// Segments one image and writes the confidence map, the optional mask and
/// intermediates (next to `out`, in `<out stem>.intermediates/`).
fn run_one(
    paths: &ScenePaths,
    out: &Path,
    mask: Option<&Path>,
    config: &RunConfig,
) -> Result<(), Error> {
    let image = read_ppm(&paths.image)?;
    let semantic = load_map(&paths.semantic)?;
    let saliency = load_map(&paths.saliency)?;
    let edge = load_map(&paths.edge)?;
    let result = segment(
        SceneInputs {
            image: &image,
            semantic: &semantic,
            saliency: &saliency,
            edge: &edge,
        },
        config,
    )?;
    write_map(&result.confidence, out)?;
    if let Some(mask) = mask {
        write_pgm(
            &binarize(&result.confidence, config.binarize_threshold)?,
            mask,
        )?;
    }
    if config.dump_intermediates {
        dump_intermediates(&result, config, &out.with_extension("intermediates"))?;
    }
    log::info!("{}: {} superpixels", out.display(), result.labeling.count());
    Ok(())
}

/// Subdirectories of `root`, sorted by name.
fn scene_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>, Error> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn cmd_batch(args: &BatchArgs) -> Result<(), Error> {
    let config = args.run.config();
    config.validate()?;
    let scenes = scene_dirs(&args.input)?;
    if scenes.is_empty() {
        return Err(Error::Match(format!(
            "no scene directories under {}",
            args.input.display()
        )));
    }
    fs::create_dir_all(&args.out)?;
    let work = |(stem, dir): &(String, PathBuf)| -> Result<(), Error> {
        let out = args.out.join(format!("{stem}.sft"));
        let mask = args
            .masks
            .then(|| args.out.join(format!("{stem}.mask.pgm")));
        run_one(&ScenePaths::in_dir(dir), &out, mask.as_deref(), &config).map_err(|e| {
            log::error!("{stem}: {e}");
            e
        })
    };
    let pool = thread_pool(args.jobs)?;
    if args.keep_going {
        let failures: Vec<Error> =
            pool.install(|| scenes.par_iter().filter_map(|s| work(s).err()).collect());
        let n = failures.len();
        if let Some(first) = failures.into_iter().next() {
            log::error!("{n} of {} images failed", scenes.len());
            return Err(first);
        }
        Ok(())
    } else {
        pool.install(|| scenes.par_iter().try_for_each(work))
    }
}

/// Stems of `.sft` files in `dir`.
fn prediction_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Error> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "sft") {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

/// Stems of `<stem>.pgm` files and `<stem>/gt.pgm` masks in `dir`.
fn ground_truth_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Error> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if path.is_dir() && path.join("gt.pgm").is_file() {
            out.insert(name, path.join("gt.pgm"));
        } else if path.is_file() && path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    let preds = prediction_stems(&args.pred)?;
    let gts = ground_truth_stems(&args.gt)?;
    let missing_gt: Vec<&str> = preds
        .keys()
        .filter(|s| !gts.contains_key(*s))
        .map(String::as_str)
        .collect();
    let missing_pred: Vec<&str> = gts
        .keys()
        .filter(|s| !preds.contains_key(*s))
        .map(String::as_str)
        .collect();
    if !missing_gt.is_empty() || !missing_pred.is_empty() {
        return Err(Error::Match(format!(
            "unmatched files: no ground truth for [{}], no prediction for [{}]",
            missing_gt.join(" "),
            missing_pred.join(" ")
        )));
    }
    if preds.is_empty() {
        return Err(Error::Match(format!(
            "no predictions in {}",
            args.pred.display()
        )));
    }
    let mut maps = Vec::with_capacity(preds.len());
    let mut masks = Vec::with_capacity(preds.len());
    for (stem, path) in &preds {
        let map = ConfidenceMap::from_tensor(&read_tensor(path)?)?;
        let gt = read_pgm(&gts[stem])?;
        if (gt.height, gt.width) != (map.height(), map.width()) {
            return Err(Error::Match(format!(
                "{stem}: prediction is {}x{}, ground truth {}x{}",
                map.height(),
                map.width(),
                gt.height,
                gt.width
            )));
        }
        maps.push(map);
        masks.push(mask_from_gray(&gt));
    }
    let (curve, skipped) = evaluate_dataset(maps.iter().zip(masks.iter().map(Vec::as_slice)))?;
    if skipped > 0 {
        log::warn!("skipped {skipped} images without foreground");
    }
    atomic_write(&args.out, curve.to_csv().as_bytes())?;
    println!("max_f {}", curve.max_f);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let params = SynthParams {
        height: args.height,
        width: args.width,
        channels: args.channels,
        noise: args.noise,
        fg_fraction: (args.fg_min, args.fg_max),
    };
    fs::create_dir_all(&args.out)?;
    let rows: Vec<String> = (args.seed..args.seed + args.count)
        .into_par_iter()
        .map(|seed| -> Result<String, Error> {
            let scene = generate(seed, &params)?;
            let stem = scene_stem(seed);
            write_scene(&scene, &args.out.join(&stem))?;
            Ok(manifest_row(&stem, &scene))
        })
        .collect::<Result<_, _>>()?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for row in rows {
        manifest.push_str(&row);
        manifest.push('\n');
    }
    atomic_write(&args.out.join("index.csv"), manifest.as_bytes())?;
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> Result<(), Error> {
    let mode = match args.mode {
        BaselineKind::Semantic => BaselineMode::SemanticOnly,
        BaselineKind::Saliency => BaselineMode::SaliencyOnly,
    };
    fs::create_dir_all(&args.out)?;
    for (stem, dir) in scene_dirs(&args.input)? {
        let paths = ScenePaths::in_dir(&dir);
        let semantic = load_map(&paths.semantic)?;
        let saliency = load_map(&paths.saliency)?;
        write_map(
            &baseline_from_maps(&semantic, &saliency, mode),
            &args.out.join(format!("{stem}.sft")),
        )?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Segment(a) => {
            let paths = ScenePaths {
                image: a.image.clone(),
                semantic: a.semantic.clone(),
                saliency: a.saliency.clone(),
                edge: a.edge.clone(),
            };
            run_one(&paths, &a.out, a.mask.as_deref(), &a.run.config())
        }
        Command::Batch(a) => cmd_batch(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parses `args`, runs the command and returns the process exit code.
///
/// Failures print one `error: code=<CODE> message="..."` line to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("error: code=E_USAGE message={:?}", e.kind().to_string());
            return USAGE_EXIT;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: code={} message={:?}", e.code(), e.to_string());
            e.exit_code()
        }
    }
}
