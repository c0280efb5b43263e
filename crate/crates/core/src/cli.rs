//! The `onhs` command line.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 for failures
//! while running. Every error is reported as one JSON line on stderr. Every
//! successful run writes `run.json` (resolved arguments, seed and SHA-256 of
//! each output) next to its primary output, or wherever `--run-json` points.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::compensation::{compensate_bscan, compensation_profile, CompensationParams};
use crate::dataset::io::{read_bscan, write_bscan, write_label_map, write_rgb};
use crate::dataset::{
    generate_phantom, split_dataset, Cohort, DatasetSplit, Manifest, ManifestEntry, PhantomSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_test_set, experiment_sweep, write_experiment_csv, write_summary_csv, EvaluationReport,
    ExperimentConfig, SweepEvent,
};
use crate::network::{
    describe_class_accuracy, train_from_manifest, write_training_log, Architecture, Checkpoint,
    EpochRecord, TrainConfig,
};
use crate::seed::derive_seed;
use crate::staining::{render_stain, stain_bscan, write_probability_maps};

pub const THREADS_ENV: &str = "ONHS_THREADS";
const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser, Serialize)]
#[command(name = "onhs", version, about = "Digital staining of optic nerve head OCT B-scans")]
struct Cli {
    /// Worker threads (default: all cores); ONHS_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Where to write the run record (default: run.json beside the output).
    #[arg(long, global = true)]
    run_json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "camelCase")]
enum Command {
    /// Generate synthetic phantoms and a manifest.
    Synth(SynthArgs),
    /// Apply adaptive compensation to one B-scan.
    Compensate(CompensateArgs),
    /// Train a network on a manifest split.
    Train(TrainArgs),
    /// Stain one B-scan with a trained checkpoint.
    Stain(StainArgs),
    /// Score a checkpoint against reference labels.
    Eval(EvalArgs),
    /// Training-set-size sweep with repeated random splits.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 192)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    shadows: bool,
    #[arg(long)]
    attenuation: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct CompensateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    contrast: f64,
    #[arg(long, default_value_t = 12.0)]
    threshold: f64,
    /// Column whose raw and compensated depth profile is exported.
    #[arg(long, requires = "profile_csv")]
    profile_col: Option<usize>,
    #[arg(long, requires = "profile_col")]
    profile_csv: Option<PathBuf>,
}

/// Training hyper-parameters shared by `train` and `experiment`.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainingFlags {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.35)]
    dropout: f64,
    #[arg(long, default_value_t = 2000)]
    patches_per_image: usize,
    #[arg(long, default_value_t = 500)]
    val_patches_per_image: usize,
    /// Train on raw intensities.
    #[arg(long)]
    no_compensate: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 2.0)]
    contrast: f64,
    #[arg(long, default_value_t = 12.0)]
    threshold: f64,
    /// Feature maps per convolution.
    #[arg(long, default_value_t = Architecture::STANDARD.channels)]
    channels: usize,
    /// Width of the hidden fully connected layers.
    #[arg(long, default_value_t = Architecture::STANDARD.hidden)]
    hidden: usize,
}

impl TrainingFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            architecture: Architecture {
                channels: self.channels,
                hidden: self.hidden,
                ..Architecture::STANDARD
            },
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout: self.dropout,
            patches_per_image: self.patches_per_image,
            validation_patches_per_image: self.val_patches_per_image,
            augment: !self.no_augment,
            compensation: (!self.no_compensate).then_some(CompensationParams {
                contrast_exponent: self.contrast,
                threshold_exponent: self.threshold,
            }),
            seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    train_size: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (default: <out stem>_log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct StainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_classmap: PathBuf,
    #[arg(long)]
    out_overlay: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
    /// Directory for the six 16-bit probability maps.
    #[arg(long)]
    prob_dir: Option<PathBuf>,
    /// Skip compensation even if the checkpoint was trained with it.
    #[arg(long)]
    no_compensate: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated image ids (default: the test set stored in the
    /// checkpoint).
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<String>>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-image CSV `image,class,dice,sn,sp`.
    #[arg(long)]
    per_image_csv: Option<PathBuf>,
    /// Full JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    no_compensate: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[command(flatten)]
    training: TrainingFlags,
}

/// Hash-stamped record of one invocation.
struct RunRecord {
    artifacts: Vec<PathBuf>,
}

impl RunRecord {
    fn new() -> Self {
        RunRecord {
            artifacts: Vec::new(),
        }
    }

    fn add(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    fn write(&self, path: &Path, cli: &Cli, seed: Option<u64>, threads: usize) -> Result<()> {
        let mut hashes = serde_json::Map::new();
        for a in &self.artifacts {
            let digest = Sha256::digest(std::fs::read(a)?);
            hashes.insert(a.display().to_string(), json!(hex::encode(digest)));
        }
        let record = json!({
            "tool": "onhs",
            "version": env!("CARGO_PKG_VERSION"),
            "command": &cli.command,
            "seed": seed,
            "threads": threads,
            "artifacts": hashes,
        });
        let mut bytes = serde_json::to_vec_pretty(&record)?;
        bytes.push(b'\n');
        crate::dataset::io::write_bytes(path, &bytes)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} {} does not exist", path.display())))
    }
}

struct Reporter {
    quiet: bool,
}

impl Reporter {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn epoch(&self, prefix: &str, r: &EpochRecord) {
        let val = match (r.val_loss, r.val_accuracy) {
            (Some(l), Some(a)) => format!(" valLoss {l:.4} valAcc {a:.4} [{}]", describe_class_accuracy(r)),
            _ => String::new(),
        };
        self.say(format!("{prefix}epoch {:>3} trainLoss {:.4}{val}", r.epoch, r.train_loss));
    }
}

fn synth(args: &SynthArgs, out: &Reporter, record: &mut RunRecord) -> Result<PathBuf> {
    if args.count == 0 {
        return Err(Error::invalid("--count must be positive"));
    }
    let mut entries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let id = format!("phantom_{i:03}");
        let phantom = generate_phantom(&PhantomSpec {
            width: args.width,
            height: args.height,
            seed: derive_seed(args.seed, &[i as u64]),
            shadows: args.shadows,
            attenuation: args.attenuation,
        })?;
        let image_path = PathBuf::from(format!("{id}.png"));
        let label_path = PathBuf::from(format!("{id}_labels.png"));
        let image_file = args.out_dir.join(&image_path);
        let label_file = args.out_dir.join(&label_path);
        write_bscan(&image_file, &phantom.image)?;
        write_label_map(&label_file, &phantom.labels)?;
        record.add(&image_file);
        record.add(&label_file);
        entries.push(ManifestEntry {
            id,
            image_path,
            label_path,
            cohort: Some(if i % 2 == 0 { Cohort::Healthy } else { Cohort::Glaucoma }),
        });
    }
    let manifest_path = args.out_dir.join("manifest.json");
    Manifest {
        entries,
        base_dir: args.out_dir.clone(),
    }
    .save(&manifest_path)?;
    record.add(&manifest_path);
    out.say(format!("wrote {} phantoms and {}", args.count, manifest_path.display()));
    Ok(args.out_dir.clone())
}

fn compensate(args: &CompensateArgs, out: &Reporter, record: &mut RunRecord) -> Result<PathBuf> {
    require_file(&args.input, "input image")?;
    let params = CompensationParams {
        contrast_exponent: args.contrast,
        threshold_exponent: args.threshold,
    };
    params.validate()?;
    let image = read_bscan(&args.input)?;
    write_bscan(&args.out, &compensate_bscan(&image, &params)?)?;
    record.add(&args.out);
    if let (Some(col), Some(csv_path)) = (args.profile_col, &args.profile_csv) {
        let profile = compensation_profile(&image, col, &params)?;
        if let Some(dir) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
        w.write_record(["depth", "raw", "compensated"])?;
        for (z, (r, c)) in profile.raw.iter().zip(&profile.compensated).enumerate() {
            w.write_record([z.to_string(), r.to_string(), c.to_string()])?;
        }
        w.flush()?;
        record.add(csv_path);
    }
    out.say(format!("wrote {}", args.out.display()));
    Ok(parent_dir(&args.out))
}

fn default_log_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_log.csv"))
}

fn train(args: &TrainArgs, out: &Reporter, record: &mut RunRecord) -> Result<PathBuf> {
    require_file(&args.manifest, "manifest")?;
    let manifest = Manifest::load(&args.manifest)?;
    let config = args.training.config(args.seed);
    config.validate()?;
    let split = split_dataset(&manifest.entries, args.train_size, args.seed)?;
    out.say(format!(
        "training on {} images, validating on {}, {} held out",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    ));
    let outcome = train_from_manifest(&manifest, &split, &config, |r| out.epoch("", r))?;
    outcome.checkpoint.save(&args.out)?;
    let log = args.log.clone().unwrap_or_else(|| default_log_path(&args.out));
    if let Some(dir) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_training_log(BufWriter::new(File::create(&log)?), &outcome.history)?;
    record.add(&args.out);
    record.add(&log);
    out.say(format!(
        "best epoch {}; wrote {} and {}",
        outcome.checkpoint.best_epoch,
        args.out.display(),
        log.display()
    ));
    Ok(parent_dir(&args.out))
}

fn stain(args: &StainArgs, out: &Reporter, record: &mut RunRecord) -> Result<PathBuf> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.input, "input image")?;
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Error::invalid(format!("--alpha {} outside [0, 1]", args.alpha)));
    }
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let raw = read_bscan(&args.input)?;
    let stained = stain_bscan(&checkpoint, &raw, args.stride, !args.no_compensate)?;
    write_label_map(&args.out_classmap, &stained.class_map)?;
    write_rgb(&args.out_overlay, &render_stain(&stained.class_map, &raw, args.alpha)?)?;
    record.add(&args.out_classmap);
    record.add(&args.out_overlay);
    if let Some(dir) = &args.prob_dir {
        for p in write_probability_maps(dir, &stained)? {
            record.add(&p);
        }
    }
    out.say(format!(
        "stained {}x{}; wrote {} and {}",
        stained.height(),
        stained.width(),
        args.out_classmap.display(),
        args.out_overlay.display()
    ));
    Ok(parent_dir(&args.out_classmap))
}

fn write_per_image_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["image", "class", "dice", "sn", "sp"])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for img in &report.images {
        for s in &img.classes {
            w.write_record([
                img.image.clone(),
                s.class.label().to_string(),
                f(s.dice),
                f(s.sensitivity),
                f(s.specificity),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eval(args: &EvalArgs, out: &Reporter, record: &mut RunRecord) -> Result<PathBuf> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.manifest, "manifest")?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let manifest = Manifest::load(&args.manifest)?;
    let split = match (&args.ids, &checkpoint.split) {
        (Some(ids), _) => DatasetSplit {
            train: vec![],
            validation: vec![],
            test: ids.clone(),
        },
        (None, Some(split)) => split.clone(),
        (None, None) => {
            return Err(Error::invalid("checkpoint stores no split; pass --ids"));
        }
    };
    let report = evaluate_test_set(&checkpoint, &manifest, &split, args.stride, !args.no_compensate)?;
    for dir in [Some(&args.out), args.per_image_csv.as_ref(), args.json.as_ref()]
        .into_iter()
        .flatten()
        .filter_map(|p| p.parent().filter(|p| !p.as_os_str().is_empty()))
    {
        std::fs::create_dir_all(dir)?;
    }
    write_summary_csv(BufWriter::new(File::create(&args.out)?), &report.summary)?;
    record.add(&args.out);
    if let Some(p) = &args.per_image_csv {
        write_per_image_csv(p, &report)?;
        record.add(p);
    }
    if let Some(p) = &args.json {
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        crate::dataset::io::write_bytes(p, &bytes)?;
        record.add(p);
    }
    for row in &report.summary {
        let show = |m: Option<crate::metrics::MeanSd>| {
            m.map_or("n/a".to_string(), |m| format!("{:.3} ± {:.3}", m.mean, m.sd))
        };
        out.say(format!(
            "class {:>3}: dice {}  sn {}  sp {}",
            row.class,
            show(row.dice),
            show(row.sensitivity),
            show(row.specificity)
        ));
    }
    Ok(parent_dir(&args.out))
}

fn experiment(args: &ExperimentArgs, out: &Reporter, record: &mut RunRecord) -> Result<PathBuf> {
    require_file(&args.manifest, "manifest")?;
    let manifest = Manifest::load(&args.manifest)?;
    let config = ExperimentConfig {
        sizes: args.sizes.clone(),
        repetitions: args.reps,
        train: args.training.config(args.seed),
        stride: args.stride,
        seed: args.seed,
    };
    let rows = experiment_sweep(&manifest, &config, |event| match event {
        SweepEvent::RunStarted { size, rep, split } => out.say(format!(
            "size {size} rep {rep}: {} train, {} validation, {} test",
            split.train.len(),
            split.validation.len(),
            split.test.len()
        )),
        SweepEvent::Epoch { size, rep, record } => out.epoch(&format!("size {size} rep {rep} "), record),
        SweepEvent::RunFinished { size, rep, report } => {
            if let Some(d) = report.summary_for("all").and_then(|r| r.dice) {
                out.say(format!("size {size} rep {rep}: mean dice {:.3}", d.mean));
            }
        }
    })?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_experiment_csv(BufWriter::new(File::create(&args.out)?), &rows)?;
    record.add(&args.out);
    out.say(format!("wrote {} rows to {}", rows.len(), args.out.display()));
    Ok(parent_dir(&args.out))
}

fn command_seed(c: &Command) -> Option<u64> {
    match c {
        Command::Synth(a) => Some(a.seed),
        Command::Train(a) => Some(a.seed),
        Command::Experiment(a) => Some(a.seed),
        Command::Compensate(_) | Command::Stain(_) | Command::Eval(_) => None,
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        Err(_) => None,
    };
    let n = from_env.or(flag).unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    });
    if n == 0 {
        return Err(Error::invalid("thread count must be positive"));
    }
    Ok(n)
}

fn execute(cli: &Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let out = Reporter { quiet: cli.quiet };
    let mut record = RunRecord::new();
    let dir = pool.install(|| match &cli.command {
        Command::Synth(a) => synth(a, &out, &mut record),
        Command::Compensate(a) => compensate(a, &out, &mut record),
        Command::Train(a) => train(a, &out, &mut record),
        Command::Stain(a) => stain(a, &out, &mut record),
        Command::Eval(a) => eval(a, &out, &mut record),
        Command::Experiment(a) => experiment(a, &out, &mut record),
    })?;
    let run_json = cli.run_json.clone().unwrap_or_else(|| dir.join("run.json"));
    record.write(&run_json, cli, command_seed(&cli.command), threads)
}

/// Exit code for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    let missing_input = matches!(err, Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound);
    if err.is_validation() || missing_input {
        1
    } else {
        2
    }
}

fn report_error(kind: &str, message: &str, code: i32, usage: Option<String>) {
    let mut line = json!({ "error": kind, "message": message, "exitCode": code });
    if let Some(u) = usage {
        line["usage"] = json!(u);
    }
    eprintln!("{line}");
}

/// Usage line of the subcommand named in `args`, or of the whole tool.
fn usage_for(args: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| cmd.find_subcommand(a).is_some())
        .map(str::to_owned);
    match sub.and_then(|name| cmd.find_subcommand_mut(&name)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let message = rendered.lines().next().unwrap_or("invalid arguments");
            let message = message.trim_start_matches("error: ");
            let mut usage = rendered
                .lines()
                .skip_while(|l| !l.starts_with("Usage:"))
                .collect::<Vec<_>>()
                .join("\n");
            if usage.is_empty() {
                usage = usage_for(&args);
            }
            report_error("usage", message, 1, (!usage.is_empty()).then_some(usage));
            return 1;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            let code = exit_code(&err);
            report_error(err.kind(), &err.to_string(), code, None);
            code
        }
    }
}
