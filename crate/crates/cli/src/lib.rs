//! Argument parsing and subcommands for the `nemo-forge` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nemo_forge_core::analyzer;
use nemo_forge_core::config::{CompositorOverrides, ConfigOverrides, MiningOverrides};
use nemo_forge_core::dataset::{load_dataset_with, Dataset, LoadOptions};
use nemo_forge_core::images::DiskImages;
use nemo_forge_core::miner::{self, MiningMode, Threshold};
use nemo_forge_core::mosaic::{self, CrossPointPolicy, Grid};
use nemo_forge_core::output::OutputRecord;
use nemo_forge_core::{EmbeddingStore, Error, Pipeline, PipelineConfig, Profile};

/// Decoded images kept in memory during a run.
const IMAGE_CACHE: usize = 4096;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
/// The run finished but too many samples failed.
pub const EXIT_RUN_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "nemo-forge",
    version,
    about = "Mosaic augmentation with mined negative images for referring segmentation datasets"
)]
pub struct Cli {
    /// Print the fully resolved configuration (TOML) to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the augmented dataset.
    Augment(AugmentArgs),
    /// Print negative pools as JSON lines, without composing.
    Mine(MineArgs),
    /// Difficulty statistics for a dataset.
    Analyze(AnalyzeArgs),
    /// Check an embedding file and, optionally, its coverage of a dataset.
    ValidateEmbeddings(ValidateArgs),
    /// Write mask-overlay previews of mosaics for a few samples.
    Preview(PreviewArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Annotation file (COCO JSON with per-annotation expressions).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory image file names are relative to [default: the annotation file's directory].
    #[arg(long)]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Config file (TOML, or JSON by extension); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset family whose (tau, k) defaults apply.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Upper bound on relevance; a number in [-1, 1] or "none".
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<Threshold>,
    /// Text-to-image upper bound for dual mode.
    #[arg(long, allow_hyphen_values = true)]
    pub tau_t2i: Option<Threshold>,
    /// Image-to-image upper bound for dual mode.
    #[arg(long, allow_hyphen_values = true)]
    pub tau_i2i: Option<Threshold>,
    /// Pool size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Probability of augmenting each sample.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Relevance used for the upper bound.
    #[arg(long, value_parser = ["t2i", "i2i-upper", "dual", "uniform"])]
    pub mode: Option<String>,
    #[arg(long, value_parser = ["2x2", "3x3"])]
    pub grid: Option<String>,
    #[arg(long, value_parser = ["fixed", "anywhere", "central-quarter"])]
    pub cross_point: Option<String>,
    /// Keep positional words truthful by constraining the positive cell.
    #[arg(long)]
    pub constraints: Option<Toggle>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Embedding file (NEMOEMB1).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write the run report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write this many mask-overlay previews.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub dump_previews: usize,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Only these samples (repeatable) [default: all].
    #[arg(long = "sample-id")]
    pub sample_ids: Vec<u64>,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Detections in COCO results format.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// IoU at or above which a same-class detection is the target itself.
    #[arg(long, default_value_t = analyzer::DEFAULT_IOU_FLOOR)]
    pub iou_floor: f64,
    /// Ignore detections scoring below this.
    #[arg(long, default_value_t = 0.0)]
    pub min_score: f64,
    /// Directory for profiles.csv, summary.json and lengths.md [default: summary to stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Also require every image and sample of this dataset to be covered.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Samples to preview (repeatable) [default: the first N].
    #[arg(long = "sample-id")]
    pub sample_ids: Vec<u64>,
    #[arg(long, value_name = "N", default_value_t = 8)]
    pub count: usize,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            e => CliError::Core(e),
        }
    }
}

impl ConfigArgs {
    pub fn overrides(&self) -> Result<ConfigOverrides, CliError> {
        Ok(ConfigOverrides {
            profile: self.profile,
            gamma: self.gamma,
            seed: self.seed,
            workers: self.workers,
            mining: MiningOverrides {
                tau: self.tau,
                k: self.k,
                mode: parse_opt::<MiningMode>(&self.mode)?,
                tau_t2i: self.tau_t2i,
                tau_i2i: self.tau_i2i,
            },
            compositor: CompositorOverrides {
                grid: parse_opt::<Grid>(&self.grid)?,
                cross_point: parse_opt::<CrossPointPolicy>(&self.cross_point)?,
                constraints: self.constraints.map(|t| t == Toggle::On),
            },
        })
    }

    /// Defaults, then profile, then config file, then flags.
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut layered = self.overrides()?;
        if let Some(path) = &self.config {
            layered = layered.over(ConfigOverrides::from_file(path)?);
        }
        Ok(layered.resolve()?)
    }
}

fn parse_opt<T: std::str::FromStr<Err = String>>(
    v: &Option<String>,
) -> Result<Option<T>, CliError> {
    v.as_deref()
        .map(str::parse)
        .transpose()
        .map_err(CliError::Usage)
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Augment(a) => augment(a, cli.verbose),
        Command::Mine(a) => mine(a, cli.verbose),
        Command::Analyze(a) => analyze(a),
        Command::ValidateEmbeddings(a) => validate(a),
        Command::Preview(a) => preview(a, cli.verbose),
    }
}

fn resolve_and_echo(args: &ConfigArgs, verbose: bool) -> Result<PipelineConfig, CliError> {
    let config = args.resolve()?;
    if verbose {
        eprint!("{}", config.to_toml());
    }
    Ok(config)
}

fn load(input: &InputArgs) -> Result<Dataset, CliError> {
    let options = LoadOptions {
        image_root: input.image_root.clone(),
        ..LoadOptions::default()
    };
    let ds = load_dataset_with(&input.dataset, &options)?;
    log::info!(
        "loaded {} images, {} samples from {}",
        ds.images.len(),
        ds.samples.len(),
        input.dataset.display()
    );
    Ok(ds)
}

fn augment(a: AugmentArgs, verbose: bool) -> Result<ExitCode, CliError> {
    let config = resolve_and_echo(&a.config, verbose)?;
    let dataset = load(&a.input)?;
    let store = EmbeddingStore::load(&a.embeddings)?;
    let images = DiskImages::new(&dataset, IMAGE_CACHE);
    let pipeline = Pipeline::new(&dataset, &store, &images, config)?;
    let (report, code) = match pipeline.run(&a.out, a.dump_previews) {
        Ok(r) => (r, ExitCode::SUCCESS),
        Err(Error::RunFailed(r)) => {
            log::error!(
                "{} of {} samples failed ({:.2}%)",
                r.totals.errored,
                r.totals.samples,
                r.error_fraction() * 100.0
            );
            (*r, ExitCode::from(EXIT_RUN_FAILED))
        }
        Err(e) => return Err(e.into()),
    };
    let t = &report.totals;
    log::info!(
        "{} samples: {} augmented, {} passed through, {} pool too small, {} degenerate, {} errored",
        t.samples,
        t.augmented,
        t.passed_through,
        t.pool_too_small,
        t.degenerate,
        t.errored
    );
    emit(a.report.as_deref(), &report.to_json())?;
    Ok(code)
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| Error::io(p, e).into()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn selected<'d>(
    dataset: &'d Dataset,
    ids: &[u64],
) -> Result<Vec<&'d nemo_forge_core::ReferringSample>, CliError> {
    if ids.is_empty() {
        return Ok(dataset.samples.iter().collect());
    }
    ids.iter()
        .map(|&id| {
            dataset
                .samples
                .iter()
                .find(|s| s.sample_id == id)
                .ok_or(CliError::Core(Error::UnknownId { kind: "sample", id }))
        })
        .collect()
}

fn mine(a: MineArgs, verbose: bool) -> Result<ExitCode, CliError> {
    let config = resolve_and_echo(&a.config, verbose)?;
    let dataset = load(&a.input)?;
    let store = EmbeddingStore::load(&a.embeddings)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let out_path = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    for s in selected(&dataset, &a.sample_ids)? {
        let line = match miner::build_pool(&store, s, &config.mining) {
            Ok(pool) => serde_json::to_value(&pool).expect("pool serializes"),
            Err(Error::PoolTooSmall {
                survivors,
                required,
            }) => json!({
                "sample_id": s.sample_id,
                "pool_too_small": { "survivors": survivors, "required": required },
            }),
            Err(e) => return Err(e.into()),
        };
        writeln!(out, "{line}").map_err(|e| Error::io(&out_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&out_path, e))?;
    Ok(ExitCode::SUCCESS)
}

fn analyze(a: AnalyzeArgs) -> Result<ExitCode, CliError> {
    if !(0.0..=1.0).contains(&a.iou_floor) {
        return Err(CliError::Usage(format!(
            "--iou-floor {} is outside [0, 1]",
            a.iou_floor
        )));
    }
    let dataset = load(&a.input)?;
    let detections = match &a.detections {
        Some(p) => analyzer::load_detections(p)?,
        None => Vec::new(),
    };
    let profiles = analyzer::profile_samples(&dataset, &detections, a.iou_floor, a.min_score)?;
    let summary = analyzer::summarize(&dataset, &profiles, a.iou_floor, a.min_score);
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            analyzer::write_profiles_csv(&profiles, dir.join("profiles.csv"))?;
            let p = dir.join("summary.json");
            fs::write(&p, format!("{summary_json}\n")).map_err(|e| Error::io(&p, e))?;
            let p = dir.join("lengths.md");
            fs::write(
                &p,
                analyzer::length_table_markdown(&summary.sentence_lengths),
            )
            .map_err(|e| Error::io(&p, e))?;
        }
        None => println!("{summary_json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> Result<ExitCode, CliError> {
    let store = EmbeddingStore::load(&a.embeddings)?;
    if let Some(path) = &a.dataset {
        let options = LoadOptions {
            image_root: a.image_root.clone(),
            check_files: false,
            ..LoadOptions::default()
        };
        let ds = load_dataset_with(path, &options)?;
        store.check_coverage(
            ds.images.iter().map(|r| r.image_id),
            ds.samples.iter().map(|s| s.sample_id),
        )?;
    }
    println!(
        "{}",
        json!({
            "dim": store.dim(),
            "images": store.image_ids().len(),
            "texts": store.text_ids().len(),
            "coverage_checked": a.dataset.is_some(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn preview(a: PreviewArgs, verbose: bool) -> Result<ExitCode, CliError> {
    let mut config = resolve_and_echo(&a.config, verbose)?;
    config.gamma = 1.0;
    let dataset = load(&a.input)?;
    let store = EmbeddingStore::load(&a.embeddings)?;
    let images = DiskImages::new(&dataset, IMAGE_CACHE);
    let pipeline = Pipeline::new(&dataset, &store, &images, config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut samples = selected(&dataset, &a.sample_ids)?;
    if a.sample_ids.is_empty() {
        samples.truncate(a.count);
    }
    for s in samples {
        let result = pipeline.process_sample(s);
        match &result.record {
            OutputRecord::Augmented(aug) => {
                let p = a.out.join(format!("preview_{:012}.png", s.sample_id));
                mosaic::preview(&aug.composite, &aug.plan)
                    .save(&p)
                    .map_err(|e| Error::Image {
                        image_id: s.image_id,
                        message: format!("{}: {e}", p.display()),
                    })?;
                log::info!("sample {}: {}", s.sample_id, p.display());
            }
            OutputRecord::PassThrough(_) => log::warn!(
                "sample {}: no mosaic ({:?}{})",
                s.sample_id,
                result.outcome,
                result
                    .error
                    .as_deref()
                    .map(|e| format!(": {e}"))
                    .unwrap_or_default()
            ),
        }
    }
    Ok(ExitCode::SUCCESS)
}
