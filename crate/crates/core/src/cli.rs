//! The `rationale` command-line tool.
//!
//! Every subcommand that writes artifacts also writes a JSON run manifest
//! recording its arguments, configuration, seeds and the SHA-256 digest of
//! each input and output. `rationale rerun --manifest <file>` replays a run
//! and checks that every output is byte-identical to the recorded one.

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{load_model, save_model, Provenance, TrainConfig, TrainedModel};
use crate::corpus::{load_corpus, save_corpus, split_corpus, Corpus};
use crate::eval::{pr_curve, render_comparison, score_reduction_report, ScoreReductionReport};
use crate::features::DEFAULT_K;
use crate::rationale::{
    rank_rationales, save_selection_audit, train_document_model_tokenized,
    train_iterative_method_from, train_snippet_method_from, IterConfig, MethodConfig, MethodRun,
    SelectionConfig, TokenizedCorpus, DEFAULT_SNIPPET_SIZE,
};
use crate::synth::{generate, GenConfig};

pub const MANIFEST_FORMAT: &str = "rationale-run";
pub const MANIFEST_VERSION: u32 = 1;

/// Flags whose values are file system paths; `rerun` resolves them against
/// the recorded working directory.
const PATH_FLAGS: [&str; 13] = [
    "--train",
    "--test",
    "--model-out",
    "--model-in",
    "--doc-model",
    "--report-dir",
    "--out",
    "--truth-out",
    "--corpus",
    "--selected-out",
    "--input",
    "--manifest",
    "--manifest-out",
];

#[derive(Debug, Parser)]
#[command(
    name = "rationale",
    version,
    about = "Train and evaluate rationale detection models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted rationales.
    Gen(GenArgs),
    /// Stratified train/test split of a corpus.
    Split(SplitArgs),
    /// Train the document-level model.
    TrainDoc(TrainDocArgs),
    /// Train a snippet model from document-level labels.
    TrainSnippet(TrainSnippetArgs),
    /// Train a snippet model by iteratively halving the snippet size.
    TrainIterative(TrainIterativeArgs),
    /// Rank the rationales of every document the document model calls responsive.
    Extract(ExtractArgs),
    /// Score-reduction report, precision/recall curve and token statistics.
    Evaluate(EvaluateArgs),
    /// Render saved reports side by side.
    Report(ReportArgs),
    /// Train all three models and evaluate them in one run.
    Pipeline(PipelineArgs),
    /// Replay a run from its manifest and verify its outputs.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
struct RunOpts {
    /// Worker threads for scoring and evaluation (default: all cores).
    #[arg(long)]
    threads: Option<NonZeroUsize>,
    /// Where to write the run manifest.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct TrainOpts {
    /// Number of n-gram features kept by information gain.
    #[arg(long, default_value_t = DEFAULT_K, value_parser = positive_usize)]
    features: usize,
    /// Longest n-gram order.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    ngram_max: u8,
    #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
    learning_rate: f64,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-4, value_parser = non_negative_f64)]
    l2_lambda: f64,
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative_f64)]
    grad_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            l2_lambda: self.l2_lambda,
            grad_tolerance: self.grad_tolerance,
            k: self.features,
            ngram_max: self.ngram_max as usize,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct SelectOpts {
    /// Score a further snippet of a document needs to be selected.
    #[arg(long, default_value_t = 0.8, value_parser = min_score_th)]
    min_score_th: f64,
    /// Cap on selected responsive snippets.
    #[arg(long, default_value_t = 500, value_parser = positive_usize)]
    max_num: usize,
    /// Nonresponsive snippets sampled per selected responsive snippet.
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    negatives_per_positive: f64,
}

impl SelectOpts {
    fn config(&self, train: TrainConfig) -> MethodConfig {
        MethodConfig {
            train,
            selection: SelectionConfig {
                min_score_th: self.min_score_th,
                max_num: self.max_num,
            },
            negatives_per_positive: self.negatives_per_positive,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    /// Output file of planted spans.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    n_responsive: usize,
    #[arg(long, default_value_t = 600)]
    n_nonresponsive: usize,
    #[arg(long, default_value_t = 200, value_parser = positive_usize)]
    min_length: usize,
    #[arg(long, default_value_t = 600, value_parser = positive_usize)]
    max_length: usize,
    #[arg(long, default_value_t = 50, value_parser = positive_usize)]
    plant_length: usize,
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    min_plants: usize,
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    max_plants: usize,
    #[arg(long, default_value_t = 3000, value_parser = positive_usize)]
    background_vocab: usize,
    #[arg(long, default_value_t = 150, value_parser = positive_usize)]
    topic_vocab: usize,
    #[arg(long, default_value_t = 1.0, value_parser = signal_strength)]
    signal_strength: f64,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    vocab_overlap: f64,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    nonresponsive_plant_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Corpus to split.
    #[arg(long)]
    corpus: PathBuf,
    /// Output training corpus.
    #[arg(long)]
    train: PathBuf,
    /// Output test corpus.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = open_unit_interval)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct TrainDocArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[command(flatten)]
    train_opts: TrainOpts,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct TrainSnippetArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    /// Document model to start from; trained on --train when absent.
    #[arg(long)]
    doc_model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SNIPPET_SIZE, value_parser = snippet_size)]
    snippet_size: usize,
    /// Write the selected responsive training snippets here (JSON lines).
    #[arg(long)]
    selected_out: Option<PathBuf>,
    #[command(flatten)]
    select: SelectOpts,
    #[command(flatten)]
    train_opts: TrainOpts,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct TrainIterativeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    /// Document model to start from; trained on --train when absent.
    #[arg(long)]
    doc_model: Option<PathBuf>,
    /// Snippet size of the first round.
    #[arg(long, default_value_t = 1000, value_parser = snippet_size)]
    start_snippet_size: usize,
    /// Snippet size of the final round.
    #[arg(long, default_value_t = DEFAULT_SNIPPET_SIZE, value_parser = snippet_size)]
    snippet_size: usize,
    /// Write the selected responsive training snippets of every round here.
    #[arg(long)]
    selected_out: Option<PathBuf>,
    #[command(flatten)]
    select: SelectOpts,
    #[command(flatten)]
    train_opts: TrainOpts,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Corpus whose documents are searched for rationales.
    #[arg(long)]
    input: PathBuf,
    /// Rationale model.
    #[arg(long)]
    model_in: PathBuf,
    #[arg(long)]
    doc_model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SNIPPET_SIZE, value_parser = snippet_size)]
    snippet_size: usize,
    /// Keep at most this many rationales per document.
    #[arg(long, value_parser = positive_usize)]
    top: Option<usize>,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    doc_model: PathBuf,
    /// Rationale model; the document model itself when absent.
    #[arg(long)]
    model_in: Option<PathBuf>,
    #[arg(long)]
    report_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SNIPPET_SIZE, value_parser = snippet_size)]
    snippet_size: usize,
    /// Thin the precision/recall curve to at most this many thresholds.
    #[arg(long, value_parser = positive_usize)]
    pr_steps: Option<usize>,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Saved report.json files, rendered left to right.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Write the tables here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    report_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SNIPPET_SIZE, value_parser = snippet_size)]
    snippet_size: usize,
    #[arg(long, default_value_t = 1000, value_parser = snippet_size)]
    start_snippet_size: usize,
    #[arg(long, value_parser = positive_usize)]
    pr_steps: Option<usize>,
    #[command(flatten)]
    select: SelectOpts,
    #[command(flatten)]
    train_opts: TrainOpts,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Debug, Args)]
struct RerunArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    manifest: PathBuf,
    /// Override the recorded thread count.
    #[arg(long)]
    threads: Option<NonZeroUsize>,
    /// Where the replay writes its own manifest (default: <manifest>.rerun.json).
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be >= 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v > 0.0 {
            Ok(v)
        } else {
            Err("must be > 0".into())
        }
    })
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v >= 0.0 {
            Ok(v)
        } else {
            Err("must be >= 0".into())
        }
    })
}

fn unit_interval(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err("must lie in [0, 1]".into())
        }
    })
}

fn open_unit_interval(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err("must lie strictly between 0 and 1".into())
        }
    })
}

fn signal_strength(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v > 0.0 && v <= 1.0 {
            Ok(v)
        } else {
            Err("must lie in (0, 1]".into())
        }
    })
}

fn min_score_th(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if (SelectionConfig::BASE_TH..1.0).contains(&v) {
            Ok(v)
        } else {
            Err("must lie in [0.5, 1)".into())
        }
    })
}

fn snippet_size(s: &str) -> Result<usize, String> {
    let v: usize = s
        .parse()
        .map_err(|e: std::num::ParseIntError| e.to_string())?;
    if v >= 2 && v.is_multiple_of(2) {
        Ok(v)
    } else {
        Err("must be an even number >= 2".into())
    }
}

/// A file recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Working directory the relative paths in `argv` refer to.
    pub cwd: PathBuf,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub inputs: BTreeMap<String, Artifact>,
    pub outputs: BTreeMap<String, Artifact>,
    pub warnings: Vec<String>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: u128,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        if manifest.format != MANIFEST_FORMAT {
            bail!(
                "{} is not a run manifest (format {:?})",
                path.display(),
                manifest.format
            );
        }
        if manifest.version != MANIFEST_VERSION {
            bail!(
                "manifest {} has version {}, expected {MANIFEST_VERSION}",
                path.display(),
                manifest.version
            );
        }
        Ok(manifest)
    }
}

/// What a subcommand did, before digests and timing are added.
#[derive(Default)]
struct Record {
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
    warnings: Vec<String>,
    manifest_path: Option<PathBuf>,
}

impl Record {
    fn input(&mut self, role: &str, path: &Path) {
        self.inputs.push((role.to_string(), path.to_path_buf()));
    }

    fn output(&mut self, role: &str, path: &Path) {
        self.outputs.push((role.to_string(), path.to_path_buf()));
    }

    fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.warnings.push(message);
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(files: &[(String, PathBuf)]) -> anyhow::Result<BTreeMap<String, Artifact>> {
    files
        .iter()
        .map(|(role, path)| {
            Ok((
                role.clone(),
                Artifact {
                    path: path.clone(),
                    sha256: sha256_file(path)?,
                },
            ))
        })
        .collect()
}

/// Run the tool on `args` (program name first) and return the exit status:
/// 0 on success, 1 on a failed run, 2 on a usage error.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, &argv[1.min(argv.len())..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            1
        }
    }
}

/// The error chain joined by ": ", skipping causes the previous message
/// already ends with.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn run(cli: Cli, argv: &[String]) -> anyhow::Result<()> {
    let (name, opts) = match &cli.command {
        Command::Gen(a) => ("gen", Some(a.run.clone())),
        Command::Split(a) => ("split", Some(a.run.clone())),
        Command::TrainDoc(a) => ("train-doc", Some(a.run.clone())),
        Command::TrainSnippet(a) => ("train-snippet", Some(a.run.clone())),
        Command::TrainIterative(a) => ("train-iterative", Some(a.run.clone())),
        Command::Extract(a) => ("extract", Some(a.run.clone())),
        Command::Evaluate(a) => ("evaluate", Some(a.run.clone())),
        Command::Pipeline(a) => ("pipeline", Some(a.run.clone())),
        Command::Report(_) => ("report", None),
        Command::Rerun(_) => ("rerun", None),
    };
    let threads = opts
        .as_ref()
        .and_then(|o| o.threads)
        .map_or(0, NonZeroUsize::get);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the --threads worker pool")?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let record = pool.install(|| match cli.command {
        Command::Gen(a) => gen(a),
        Command::Split(a) => split(a),
        Command::TrainDoc(a) => train_doc(a),
        Command::TrainSnippet(a) => train_snippet(a),
        Command::TrainIterative(a) => train_iterative(a),
        Command::Extract(a) => extract(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Report(a) => report(a),
        Command::Rerun(a) => rerun(a),
    })?;
    let Some(record) = record else {
        return Ok(());
    };
    let manifest_path = opts
        .and_then(|o| o.manifest_out)
        .or(record.manifest_path.clone())
        .expect("every artifact-writing command names a manifest path");
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        argv: argv.to_vec(),
        cwd: std::env::current_dir().context("reading the working directory")?,
        config: record.config,
        seeds: record.seeds,
        threads: pool.current_num_threads(),
        inputs: digests(&record.inputs)?,
        outputs: digests(&record.outputs)?,
        warnings: record.warnings,
        started_unix_ms: started
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis()),
        wall_clock_ms: clock.elapsed().as_millis(),
    };
    write_file(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn read_corpus_flag(flag: &str, path: &Path) -> anyhow::Result<Corpus> {
    load_corpus(path).with_context(|| flag.to_string())
}

fn read_model_flag(flag: &str, path: &Path) -> anyhow::Result<TrainedModel> {
    load_model(path).with_context(|| flag.to_string())
}

fn gen(a: GenArgs) -> anyhow::Result<Option<Record>> {
    let cfg = GenConfig {
        n_responsive: a.n_responsive,
        n_nonresponsive: a.n_nonresponsive,
        doc_length: (a.min_length, a.max_length),
        plant_length: a.plant_length,
        plants_per_doc: (a.min_plants, a.max_plants),
        background_vocab: a.background_vocab,
        topic_vocab: a.topic_vocab,
        signal_strength: a.signal_strength,
        vocab_overlap: a.vocab_overlap,
        nonresponsive_plant_rate: a.nonresponsive_plant_rate,
        seed: a.seed,
    };
    cfg.validate()
        .context("invalid generator flags (--min-length, --max-length, --plant-length, --min-plants, --max-plants)")?;
    let (corpus, truth) = generate(&cfg)?;
    let mut rec = Record {
        config: serde_json::to_value(&cfg)?,
        manifest_path: Some(sibling_manifest(&a.out)),
        ..Record::default()
    };
    rec.seeds.insert("seed".into(), a.seed);
    create_parent(&a.out)?;
    save_corpus(&corpus, &a.out).context("--out")?;
    rec.output("corpus", &a.out);
    if let Some(path) = &a.truth_out {
        create_parent(path)?;
        truth.save(path).context("--truth-out")?;
        rec.output("truth", path);
    }
    Ok(Some(rec))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())),
        None => Ok(()),
    }
}

fn split(a: SplitArgs) -> anyhow::Result<Option<Record>> {
    let corpus = read_corpus_flag("--corpus", &a.corpus)?;
    let split = split_corpus(&corpus, a.train_fraction, a.seed).context("--train-fraction")?;
    let mut rec = Record {
        config: serde_json::json!({ "train_fraction": a.train_fraction }),
        manifest_path: Some(sibling_manifest(&a.train)),
        ..Record::default()
    };
    rec.seeds.insert("seed".into(), a.seed);
    rec.input("corpus", &a.corpus);
    for (flag, role, part, path) in [
        ("--train", "train", &split.train, &a.train),
        ("--test", "test", &split.test, &a.test),
    ] {
        create_parent(path)?;
        save_corpus(part, path).with_context(|| flag.to_string())?;
        rec.output(role, path);
    }
    Ok(Some(rec))
}

fn train_config(opts: &TrainOpts) -> anyhow::Result<TrainConfig> {
    let cfg = opts.config();
    cfg.validate().context("invalid training flags")?;
    Ok(cfg)
}

fn train_doc(a: TrainDocArgs) -> anyhow::Result<Option<Record>> {
    let cfg = train_config(&a.train_opts)?;
    let train = read_corpus_flag("--train", &a.train)?;
    let model = train_document_model_tokenized(&TokenizedCorpus::new(&train), &cfg)?;
    create_parent(&a.model_out)?;
    save_model(&model, &a.model_out).context("--model-out")?;
    let mut rec = Record {
        config: serde_json::to_value(&cfg)?,
        manifest_path: Some(sibling_manifest(&a.model_out)),
        ..Record::default()
    };
    rec.seeds.insert("seed".into(), cfg.seed);
    rec.input("train", &a.train);
    rec.output("model", &a.model_out);
    Ok(Some(rec))
}

/// Document model for a snippet method: loaded from `--doc-model`, or
/// trained on the training corpus.
fn start_model(
    path: Option<&Path>,
    data: &TokenizedCorpus,
    cfg: &TrainConfig,
    rec: &mut Record,
) -> anyhow::Result<TrainedModel> {
    match path {
        Some(path) => {
            let model = read_model_flag("--doc-model", path)?;
            if model.provenance != Provenance::DocumentLevel {
                rec.warn(format!(
                    "--doc-model {} is a {}, not a document-level model",
                    path.display(),
                    model.provenance.name()
                ));
            }
            rec.input("doc_model", path);
            Ok(model)
        }
        None => Ok(train_document_model_tokenized(data, cfg)?),
    }
}

fn save_method(
    run: &MethodRun,
    model_out: &Path,
    selected_out: Option<&Path>,
    rec: &mut Record,
) -> anyhow::Result<()> {
    create_parent(model_out)?;
    save_model(&run.model, model_out).context("--model-out")?;
    rec.output("model", model_out);
    if let Some(path) = selected_out {
        create_parent(path)?;
        save_selection_audit(&run.rounds, path).context("--selected-out")?;
        rec.output("selected", path);
    }
    let rounds: Vec<serde_json::Value> = run
        .rounds
        .iter()
        .map(|r| {
            serde_json::json!({
                "snippet_size": r.snippet_size,
                "scored": r.scored,
                "selected": r.selection.len(),
                "phase_one": r.selection.phase_one,
                "nonresponsive": r.nonresponsive.len(),
            })
        })
        .collect();
    if let serde_json::Value::Object(map) = &mut rec.config {
        map.insert("rounds".into(), rounds.into());
    }
    Ok(())
}

fn train_snippet(a: TrainSnippetArgs) -> anyhow::Result<Option<Record>> {
    let cfg = a.select.config(train_config(&a.train_opts)?);
    let mut rec = Record {
        config: serde_json::json!({ "method": cfg, "snippet_size": a.snippet_size }),
        manifest_path: Some(sibling_manifest(&a.model_out)),
        ..Record::default()
    };
    rec.seeds.insert("seed".into(), cfg.train.seed);
    let train = read_corpus_flag("--train", &a.train)?;
    rec.input("train", &a.train);
    let data = TokenizedCorpus::new(&train);
    let doc_model = start_model(a.doc_model.as_deref(), &data, &cfg.train, &mut rec)?;
    let run = train_snippet_method_from(&doc_model, &data, a.snippet_size, &cfg)?;
    save_method(&run, &a.model_out, a.selected_out.as_deref(), &mut rec)?;
    Ok(Some(rec))
}

fn iter_config(start: usize, min: usize) -> anyhow::Result<IterConfig> {
    let iter = IterConfig {
        start_size: start,
        min_size: min,
    };
    if start < min {
        bail!("--start-snippet-size ({start}) must be >= --snippet-size ({min})");
    }
    iter.validate()?;
    Ok(iter)
}

fn train_iterative(a: TrainIterativeArgs) -> anyhow::Result<Option<Record>> {
    let cfg = a.select.config(train_config(&a.train_opts)?);
    let iter = iter_config(a.start_snippet_size, a.snippet_size)?;
    let mut rec = Record {
        config: serde_json::json!({ "method": cfg, "iteration": iter }),
        manifest_path: Some(sibling_manifest(&a.model_out)),
        ..Record::default()
    };
    rec.seeds.insert("seed".into(), cfg.train.seed);
    let train = read_corpus_flag("--train", &a.train)?;
    rec.input("train", &a.train);
    let data = TokenizedCorpus::new(&train);
    let doc_model = start_model(a.doc_model.as_deref(), &data, &cfg.train, &mut rec)?;
    let run = train_iterative_method_from(&doc_model, &data, &iter, &cfg)?;
    save_method(&run, &a.model_out, a.selected_out.as_deref(), &mut rec)?;
    Ok(Some(rec))
}

fn check_size_match(flag_size: usize, model: &TrainedModel, rec: &mut Record) {
    if let Some(trained) = model.provenance.snippet_size() {
        if trained != flag_size {
            rec.warn(format!(
                "snippet size mismatch: rationale model was trained on {trained}-token snippets but --snippet-size is {flag_size}"
            ));
        }
    }
}

#[derive(Serialize)]
struct ExtractRecord<'a> {
    doc_id: &'a str,
    doc_score: f64,
    rationales: Vec<RationaleRecord>,
}

#[derive(Serialize)]
struct RationaleRecord {
    start: usize,
    length: usize,
    score: f64,
}

fn extract(a: ExtractArgs) -> anyhow::Result<Option<Record>> {
    let corpus = read_corpus_flag("--input", &a.input)?;
    let model = read_model_flag("--model-in", &a.model_in)?;
    let doc_model = read_model_flag("--doc-model", &a.doc_model)?;
    let mut rec = Record {
        config: serde_json::json!({ "snippet_size": a.snippet_size, "top": a.top }),
        manifest_path: Some(sibling_manifest(&a.out)),
        ..Record::default()
    };
    check_size_match(a.snippet_size, &model, &mut rec);
    rec.input("corpus", &a.input);
    rec.input("model", &a.model_in);
    rec.input("doc_model", &a.doc_model);

    use rayon::prelude::*;
    let lines: Vec<String> = corpus
        .documents()
        .par_iter()
        .map(|d| -> anyhow::Result<Option<String>> {
            let mut ranked = rank_rationales(d, &model, &doc_model, a.snippet_size)?;
            if ranked.is_empty() {
                return Ok(None);
            }
            if let Some(k) = a.top {
                ranked.truncate(k);
            }
            let out = ExtractRecord {
                doc_id: &d.id,
                doc_score: doc_model.score_tokens(&crate::tokenize::tokenize(&d.text)),
                rationales: ranked
                    .iter()
                    .map(|s| RationaleRecord {
                        start: s.snippet.start,
                        length: s.snippet.length,
                        score: s.score,
                    })
                    .collect(),
            };
            Ok(Some(serde_json::to_string(&out)?))
        })
        .filter_map(Result::transpose)
        .collect::<anyhow::Result<_>>()?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_file(&a.out, text).context("--out")?;
    rec.output("rationales", &a.out);
    Ok(Some(rec))
}

fn write_reports(
    dir: &Path,
    reports: &[ScoreReductionReport],
    doc_model: &TrainedModel,
    test: &Corpus,
    pr_steps: Option<usize>,
    rec: &mut Record,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("--report-dir {}", dir.display()))?;
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let body = r.to_csv();
        csv.push_str(if i == 0 {
            &body
        } else {
            body.split_once('\n').map_or("", |(_, rest)| rest)
        });
    }
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(reports)?
    };
    let curve = pr_curve(doc_model, test, pr_steps)?;
    for (role, name, contents) in [
        ("report_text", "report.txt", render_comparison(reports)),
        ("report_csv", "report.csv", csv),
        ("report_json", "report.json", json + "\n"),
        ("pr_curve", "pr_curve.csv", curve.to_csv()),
    ] {
        let path = dir.join(name);
        write_file(&path, contents)?;
        rec.output(role, &path);
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<Option<Record>> {
    let test = read_corpus_flag("--test", &a.test)?;
    let doc_model = read_model_flag("--doc-model", &a.doc_model)?;
    let mut rec = Record {
        config: serde_json::json!({ "snippet_size": a.snippet_size, "pr_steps": a.pr_steps }),
        manifest_path: Some(a.report_dir.join("manifest.json")),
        ..Record::default()
    };
    rec.input("test", &a.test);
    rec.input("doc_model", &a.doc_model);
    let model = match &a.model_in {
        Some(path) => {
            rec.input("model", path);
            read_model_flag("--model-in", path)?
        }
        None => doc_model.clone(),
    };
    check_size_match(a.snippet_size, &model, &mut rec);
    let report = score_reduction_report(
        model.provenance.name(),
        &doc_model,
        &model,
        &test,
        a.snippet_size,
    )?;
    println!("{}", report.to_text());
    write_reports(
        &a.report_dir,
        &[report],
        &doc_model,
        &test,
        a.pr_steps,
        &mut rec,
    )?;
    Ok(Some(rec))
}

fn report(a: ReportArgs) -> anyhow::Result<Option<Record>> {
    let mut reports = Vec::new();
    for path in &a.input {
        let text =
            fs::read_to_string(path).with_context(|| format!("--input {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("--input {}", path.display()))?;
        let parsed = if value.is_array() {
            serde_json::from_value::<Vec<ScoreReductionReport>>(value)
        } else {
            serde_json::from_value::<ScoreReductionReport>(value).map(|r| vec![r])
        };
        reports.extend(
            parsed.with_context(|| format!("--input {} is not a saved report", path.display()))?,
        );
    }
    let tables = render_comparison(&reports);
    match &a.out {
        Some(path) => write_file(path, tables).context("--out")?,
        None => print!("{tables}"),
    }
    Ok(None)
}

fn pipeline(a: PipelineArgs) -> anyhow::Result<Option<Record>> {
    let cfg = a.select.config(train_config(&a.train_opts)?);
    let iter = iter_config(a.start_snippet_size, a.snippet_size)?;
    let mut rec = Record {
        config: serde_json::json!({
            "method": cfg,
            "iteration": iter,
            "snippet_size": a.snippet_size,
            "pr_steps": a.pr_steps,
        }),
        manifest_path: Some(a.report_dir.join("manifest.json")),
        ..Record::default()
    };
    rec.seeds.insert("seed".into(), cfg.train.seed);
    let train = read_corpus_flag("--train", &a.train)?;
    let test = read_corpus_flag("--test", &a.test)?;
    rec.input("train", &a.train);
    rec.input("test", &a.test);

    let data = TokenizedCorpus::new(&train);
    let doc_model = train_document_model_tokenized(&data, &cfg.train)?;
    let snippet = train_snippet_method_from(&doc_model, &data, a.snippet_size, &cfg)?;
    let iterative = train_iterative_method_from(&doc_model, &data, &iter, &cfg)?;

    fs::create_dir_all(&a.report_dir)
        .with_context(|| format!("--report-dir {}", a.report_dir.display()))?;
    let mut reports = Vec::new();
    for (role, model) in [
        ("doc_model", &doc_model),
        ("snippet_model", &snippet.model),
        ("iterative_model", &iterative.model),
    ] {
        let path = a.report_dir.join(format!("{role}.json"));
        save_model(model, &path)?;
        rec.output(role, &path);
        reports.push(score_reduction_report(
            model.provenance.name(),
            &doc_model,
            model,
            &test,
            a.snippet_size,
        )?);
    }
    println!("{}", render_comparison(&reports));
    write_reports(
        &a.report_dir,
        &reports,
        &doc_model,
        &test,
        a.pr_steps,
        &mut rec,
    )?;
    Ok(Some(rec))
}

/// Replace the value of `flag` in `argv`, or append the pair.
fn set_flag(argv: &mut Vec<String>, flag: &str, value: String) {
    let eq = format!("{flag}=");
    if let Some(i) = argv.iter().position(|a| a == flag) {
        if i + 1 < argv.len() {
            argv[i + 1] = value;
            return;
        }
    }
    if let Some(i) = argv.iter().position(|a| a.starts_with(&eq)) {
        argv[i] = format!("{eq}{value}");
        return;
    }
    argv.push(flag.to_string());
    argv.push(value);
}

/// Resolve relative path arguments against `cwd`.
fn absolutize(argv: &[String], cwd: &Path) -> Vec<String> {
    let resolve = |v: &str| {
        let p = Path::new(v);
        if p.is_absolute() {
            v.to_string()
        } else {
            cwd.join(p).to_string_lossy().into_owned()
        }
    };
    let mut out = Vec::with_capacity(argv.len());
    let mut path_next = false;
    for a in argv {
        if path_next {
            out.push(resolve(a));
            path_next = false;
            continue;
        }
        match a.split_once('=') {
            Some((flag, value)) if PATH_FLAGS.contains(&flag) => {
                out.push(format!("{flag}={}", resolve(value)))
            }
            _ => {
                path_next = PATH_FLAGS.contains(&a.as_str());
                out.push(a.clone());
            }
        }
    }
    out
}

fn rerun(a: RerunArgs) -> anyhow::Result<Option<Record>> {
    let original = RunManifest::load(&a.manifest).context("--manifest")?;
    let mut argv = absolutize(&original.argv, &original.cwd);
    if let Some(t) = a.threads {
        set_flag(&mut argv, "--threads", t.to_string());
    }
    let replay_manifest = a.manifest_out.unwrap_or_else(|| {
        let mut name = a
            .manifest
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".rerun.json");
        a.manifest.with_file_name(name)
    });
    set_flag(
        &mut argv,
        "--manifest-out",
        replay_manifest.to_string_lossy().into_owned(),
    );

    let mut full = vec!["rationale".to_string()];
    full.extend(argv.iter().cloned());
    let cli = Cli::try_parse_from(&full).context("the recorded arguments no longer parse")?;
    if matches!(cli.command, Command::Rerun(_)) {
        bail!(
            "--manifest {} records a rerun; replay the original run instead",
            a.manifest.display()
        );
    }
    run(cli, &argv)?;

    let replay = RunManifest::load(&replay_manifest)?;
    let mut mismatches = Vec::new();
    for (role, before) in &original.outputs {
        match replay.outputs.get(role) {
            Some(after) if after.sha256 == before.sha256 => {
                println!("{role}: identical ({})", &before.sha256[..16])
            }
            Some(after) => {
                println!(
                    "{role}: DIFFERS ({} vs {})",
                    &before.sha256[..16],
                    &after.sha256[..16]
                );
                mismatches.push(role.clone());
            }
            None => {
                println!("{role}: missing from replay");
                mismatches.push(role.clone());
            }
        }
    }
    if !mismatches.is_empty() {
        bail!(
            "replay of {} differs in: {}",
            a.manifest.display(),
            mismatches.join(", ")
        );
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(execute(["rationale", "train-doc", "--bogus", "1"]), 2);
        assert_eq!(execute(["rationale", "frobnicate"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(execute(["rationale", "--help"]), 0);
    }

    #[test]
    fn bad_values_name_the_flag() {
        let err = Cli::try_parse_from([
            "rationale",
            "evaluate",
            "--test",
            "t",
            "--doc-model",
            "d",
            "--report-dir",
            "r",
            "--snippet-size",
            "51",
        ])
        .unwrap_err()
        .to_string();
        assert!(err.contains("--snippet-size"), "{err}");
        let err = Cli::try_parse_from([
            "rationale",
            "train-snippet",
            "--train",
            "t",
            "--model-out",
            "m",
            "--min-score-th",
            "0.3",
        ])
        .unwrap_err()
        .to_string();
        assert!(err.contains("--min-score-th"), "{err}");
    }

    #[test]
    fn start_size_below_final_size_names_both_flags() {
        let err = iter_config(40, 50).unwrap_err().to_string();
        assert!(
            err.contains("--start-snippet-size") && err.contains("--snippet-size"),
            "{err}"
        );
    }

    #[test]
    fn set_flag_replaces_or_appends() {
        let mut argv: Vec<String> = ["gen", "--threads", "1", "--seed=3"]
            .map(String::from)
            .to_vec();
        set_flag(&mut argv, "--threads", "4".into());
        set_flag(&mut argv, "--seed", "5".into());
        set_flag(&mut argv, "--manifest-out", "m.json".into());
        assert_eq!(
            argv,
            [
                "gen",
                "--threads",
                "4",
                "--seed=5",
                "--manifest-out",
                "m.json"
            ]
        );
    }

    #[test]
    fn absolutize_only_touches_path_flags() {
        let argv: Vec<String> = [
            "evaluate",
            "--test",
            "t.jsonl",
            "--snippet-size",
            "50",
            "--report-dir=out",
            "--doc-model",
            "/abs/m.json",
        ]
        .map(String::from)
        .to_vec();
        let out = absolutize(&argv, Path::new("/work"));
        assert_eq!(
            out,
            [
                "evaluate",
                "--test",
                "/work/t.jsonl",
                "--snippet-size",
                "50",
                "--report-dir=/work/out",
                "--doc-model",
                "/abs/m.json"
            ]
        );
    }
}
