//! Command-line interface: train, eval, predict, gradcheck, experiment, synth.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use crate::data::{parse_corpus, write_corpus, Instance, Polarity};
use crate::error::Error;
use crate::evaluation::EvalReport;
use crate::experiment::{
    encode_all, run_experiment, run_training, synthetic_split, EmbeddingSource, ExperimentSpec,
};
use crate::gradcheck::{check_gradients, random_case, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use crate::mathcore::{Fault, Real, SeededRng};
use crate::models::{forward, load_model, save_model, Combine, Model, Variant};
use crate::training::{evaluate_model, ClipMode, TrainConfig};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed for {0} parameter(s)")]
    GradCheck(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::GradCheck(_) => EXIT_FAILURE,
            CliError::Core(e) => match e {
                Error::Validation(_) | Error::Io { .. } => EXIT_USAGE,
                Error::Format { .. }
                | Error::Record { .. }
                | Error::Load(_)
                | Error::VariantMismatch { .. } => EXIT_FORMAT,
                Error::Numeric { .. } => EXIT_NUMERIC,
                Error::Dimension { .. } | Error::State(_) | Error::Consistency(_) => EXIT_FAILURE,
            },
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tdsent", version, about = "Target-dependent sentiment classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write checkpoint and logs to --out.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Classify one sentence towards its `$T$` target.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients on a random tiny instance.
    Gradcheck(GradcheckArgs),
    /// Run a variant × embedding × seed grid from a TOML spec.
    Experiment(ExperimentArgs),
    /// Write a synthetic target-dependent corpus with matching random vectors.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// TOML file with any of the flags below (underscored names); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pre-trained vectors (text, one word per line). Without it, random vectors of --dim.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Hidden size; defaults to the embedding dimension.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Softmax-layer gradient clipping threshold.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, value_parser = parse_clip_mode)]
    pub clip_mode: Option<ClipMode>,
    #[arg(long, value_parser = parse_combine)]
    pub combine: Option<Combine>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub trainable_embeddings: Option<bool>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    dim: Option<usize>,
    variant: Option<Variant>,
    hidden: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    clip: Option<f64>,
    clip_mode: Option<ClipMode>,
    combine: Option<Combine>,
    trainable_embeddings: Option<bool>,
    precision: Option<Precision>,
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file, or a training output directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Fail unless the checkpoint has this embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sentence with the target replaced by `$T$`.
    #[arg(long)]
    pub sentence: String,
    #[arg(long)]
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    SigmoidAdjoint,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// A variant tag, or `all`.
    #[arg(long, default_value = "all")]
    pub variant: String,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sentence length of the random instance.
    #[arg(long, default_value_t = 5)]
    pub len: usize,
    #[arg(long, value_parser = parse_combine, default_value = "concat")]
    pub combine: Combine,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for report.txt and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub sentences: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_combine(s: &str) -> Result<Combine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_clip_mode(s: &str) -> Result<ClipMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse `args` (program name first) and run; returns the process exit status.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn require_file(flag: &str, path: Option<PathBuf>) -> CliResult<PathBuf> {
    let path = path.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))?;
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "--{flag}: {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Training settings after applying flags over the config file over defaults.
pub struct ResolvedTrain {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub source: EmbeddingSource,
    pub config: TrainConfig,
    pub precision: Precision,
    pub out: PathBuf,
}

pub fn resolve_train(a: TrainArgs) -> CliResult<ResolvedTrain> {
    let file: TrainFile = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Format {
                path: p.display().to_string(),
                line: e
                    .span()
                    .map(|s| text[..s.start].lines().count().max(1))
                    .unwrap_or(0),
                message: e.message().to_string(),
            })?
        }
        None => TrainFile::default(),
    };
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        variant: a.variant.or(file.variant).unwrap_or(defaults.variant),
        hidden: a.hidden.or(file.hidden),
        combine: a.combine.or(file.combine).unwrap_or(defaults.combine),
        learning_rate: a.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
        clip_threshold: a.clip.or(file.clip).unwrap_or(defaults.clip_threshold),
        clip_mode: a.clip_mode.or(file.clip_mode).unwrap_or(defaults.clip_mode),
        embeddings_trainable: a
            .trainable_embeddings
            .or(file.trainable_embeddings)
            .unwrap_or(defaults.embeddings_trainable),
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let train = require_file("train", a.train.or(file.train))?;
    let test = match a.test.or(file.test) {
        Some(p) => Some(require_file("test", Some(p))?),
        None => None,
    };
    let dim = a.dim.or(file.dim);
    let source = match a.embeddings.or(file.embeddings) {
        Some(p) => EmbeddingSource::File(require_file("embeddings", Some(p))?),
        None => EmbeddingSource::Random {
            dim: dim.ok_or_else(|| {
                CliError::Usage("either --embeddings or --dim is required".into())
            })?,
        },
    };
    let out = a
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    Ok(ResolvedTrain {
        train,
        test,
        source,
        config,
        precision: a.precision.or(file.precision).unwrap_or(Precision::F64),
        out,
    })
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let quiet = a.quiet;
    let expected_dim = a.dim;
    let r = resolve_train(a)?;
    match r.precision {
        Precision::F64 => train_typed::<f64>(&r, quiet, expected_dim),
        Precision::F32 => train_typed::<f32>(&r, quiet, expected_dim),
    }
}

fn train_typed<T: Real>(r: &ResolvedTrain, quiet: bool, expected_dim: Option<usize>) -> CliResult {
    let train_set = parse_corpus(&r.train)?;
    let test_set = match &r.test {
        Some(p) => parse_corpus(p)?,
        None => Vec::new(),
    };
    let (model, log) = run_training::<T>(&train_set, &test_set, &r.source, &r.config, |rec| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  train acc {:.4}  test acc {}  test macro-F1 {}  {:.2}s",
                rec.epoch,
                rec.train_loss,
                rec.train_accuracy,
                rec.test_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
                rec.test_macro_f1.map_or("-".into(), |v| format!("{v:.4}")),
                rec.seconds
            );
        }
    })?;
    if let Some(d) = expected_dim {
        if d != model.embeddings.dim() {
            return Err(CliError::Usage(format!(
                "--dim {d} but the embedding file has dimension {}",
                model.embeddings.dim()
            )));
        }
    }

    create_dir(&r.out)?;
    save_model(&r.out.join(CHECKPOINT_FILE), &model)?;
    write_file(&r.out.join(LOG_FILE), log.to_jsonl(false))?;
    write_file(&r.out.join(TIMING_FILE), log.to_jsonl(true))?;
    let config_json = serde_json::to_string_pretty(&r.config).expect("config serialises");
    write_file(&r.out.join(CONFIG_FILE), config_json + "\n")?;

    let last = log.last().expect("at least one epoch");
    match (last.test_accuracy, last.test_macro_f1) {
        (Some(acc), Some(f1)) => println!("test accuracy {acc:.4}  macro-F1 {f1:.4}"),
        _ => println!("train accuracy {:.4}", last.train_accuracy),
    }
    Ok(())
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

/// A loaded checkpoint in whichever precision it was saved.
enum AnyModel {
    F64(Model<f64>),
    F32(Model<f32>),
}

impl AnyModel {
    fn load(path: &Path) -> CliResult<Self> {
        let path = checkpoint_path(path);
        if !path.is_file() {
            return Err(CliError::Usage(format!("{} does not exist", path.display())));
        }
        match load_model::<f64>(&path) {
            Ok(m) => Ok(AnyModel::F64(m)),
            Err(e64) => load_model::<f32>(&path)
                .map(AnyModel::F32)
                .map_err(|_| e64.into()),
        }
    }

    fn variant(&self) -> Variant {
        match self {
            AnyModel::F64(m) => m.variant(),
            AnyModel::F32(m) => m.variant(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            AnyModel::F64(m) => m.embeddings.dim(),
            AnyModel::F32(m) => m.embeddings.dim(),
        }
    }

    fn evaluate(&self, set: &[Instance]) -> CliResult<EvalReport> {
        Ok(match self {
            AnyModel::F64(m) => evaluate_model(m, &encode_all(&m.vocab, set))?,
            AnyModel::F32(m) => evaluate_model(m, &encode_all(&m.vocab, set))?,
        })
    }

    fn probabilities(&self, x: &Instance) -> CliResult<(usize, Vec<f64>)> {
        fn go<T: Real>(m: &Model<T>, x: &Instance) -> CliResult<(usize, Vec<f64>)> {
            let p = forward(m, &m.encode(x))?;
            let probs = p
                .probabilities
                .data()
                .iter()
                .map(|v| v.to_f64().expect("real"))
                .collect();
            Ok((p.predicted_class, probs))
        }
        match self {
            AnyModel::F64(m) => go(m, x),
            AnyModel::F32(m) => go(m, x),
        }
    }
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let model = AnyModel::load(&a.model)?;
    if let Some(v) = a.variant {
        if v != model.variant() {
            return Err(Error::VariantMismatch {
                expected: v.to_string(),
                found: model.variant().to_string(),
            }
            .into());
        }
    }
    if let Some(d) = a.dim {
        if d != model.dim() {
            return Err(Error::Load(format!(
                "checkpoint has embedding dimension {}, expected {d}",
                model.dim()
            ))
            .into());
        }
    }
    let test = require_file("test", Some(a.test))?;
    let report = model.evaluate(&parse_corpus(&test)?)?;
    print!("{report}");
    if let Some(p) = a.json {
        write_file(&p, report.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult {
    let model = AnyModel::load(&a.model)?;
    let x = Instance::from_marked(&a.sentence, &a.target, Polarity::Neutral)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let (class, probs) = model.probabilities(&x)?;
    let label = Polarity::from_class_index(class).expect("three classes");
    println!("{label}");
    for (i, p) in probs.iter().enumerate() {
        let name = Polarity::from_class_index(i).expect("three classes");
        println!("{:<9}{p}", name.name());
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let variants: Vec<Variant> = if a.variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![parse_variant(&a.variant).map_err(CliError::Usage)?]
    };
    if a.dim == 0 || a.len == 0 {
        return Err(CliError::Usage("--dim and --len must be at least 1".into()));
    }
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::SigmoidAdjoint => Fault::SigmoidAdjoint,
    });
    let mut rng = SeededRng::new(a.seed).fork("gradcheck-span");
    let start = rng.below(a.len);
    let end = start + 1 + rng.below((a.len - start).min(2));

    let mut failures = 0;
    println!(
        "{:<12} {:<16} {:>7} {:>12}  result",
        "variant", "parameter", "entries", "max rel err"
    );
    for v in variants {
        let (model, x) = random_case(v, a.combine, a.dim, a.len, start..end, a.seed)?;
        let report = check_gradients(&model, &x, DEFAULT_EPSILON, DEFAULT_TOLERANCE, fault)?;
        for p in &report.params {
            println!(
                "{:<12} {:<16} {:>7} {:>12.3e}  {}",
                v.to_string(),
                p.name,
                p.entries,
                p.max_relative_error,
                if p.failures == 0 { "ok" } else { "FAIL" }
            );
        }
        failures += report.params.iter().filter(|p| p.failures > 0).count();
    }
    if failures > 0 {
        return Err(CliError::GradCheck(failures));
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult {
    if !a.spec.is_file() {
        return Err(CliError::Usage(format!("{} does not exist", a.spec.display())));
    }
    let spec = ExperimentSpec::load(&a.spec)?;
    if spec.cell_count() == 0 {
        return Err(CliError::Usage(
            "experiment grid is empty (need at least one variant, embedding and seed)".into(),
        ));
    }
    let base = a.spec.parent().unwrap_or(Path::new(".")).to_path_buf();
    let report = run_experiment(&spec, &base, |c| {
        eprintln!(
            "{} / {} / seed {}: {}",
            c.variant,
            c.embedding,
            c.seed,
            match (&c.error, c.accuracy) {
                (Some(e), _) => format!("failed: {e}"),
                (None, Some(acc)) => format!("accuracy {acc:.4}"),
                (None, None) => "done".into(),
            }
        );
    })?;
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = a.out {
        create_dir(&out)?;
        write_file(&out.join("report.txt"), &text)?;
        write_file(&out.join("report.json"), report.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let (train, test) = synthetic_split(a.sentences, a.seed, a.test_fraction)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be at least 1".into()));
    }
    create_dir(&a.out)?;
    write_corpus(&a.out.join("train.txt"), &train)?;
    write_corpus(&a.out.join("test.txt"), &test)?;
    let vocab = crate::data::synthetic::vocabulary();
    write_file(
        &a.out.join("embeddings.txt"),
        crate::data::synthetic::embeddings_text(&vocab, a.dim, a.seed),
    )?;
    println!(
        "wrote {} training and {} test instances to {}",
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}
