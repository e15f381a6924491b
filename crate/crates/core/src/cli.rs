//! The `adamel` command-line front end.
//!
//! Every command writes its outputs through [`Outputs`], which stages files
//! under temporary names and removes everything it wrote if the command
//! fails, so a non-zero exit never leaves partial results behind.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, AlignedSchema, DatasetManifest, DatasetPartitions, PairRecord, Partition};
use crate::error::{Error, Result};
use crate::eval::{self, AttentionReport, Domain, Metrics, PrMethod};
use crate::features::{EmbeddingProvider, Featurizer};
use crate::model::{self, Checkpoint, ModelParams};
use crate::synth::{self, SynthConfig};
use crate::training::{self, TrainConfig, TrainingSet, Variant};

/// Environment variable naming a word-vector file.
pub const EMBEDDINGS_ENV: &str = "ADAMEL_EMBEDDINGS";
/// Seed of the hashing embedding provider used when no vector file is given.
pub const HASHING_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "adamel", version, about = "Attribute-attention entity linkage with domain adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, loss trace and run manifest.
    Train(TrainArgs),
    /// Score a labeled test file and write metrics and a PR curve.
    Eval(EvalArgs),
    /// Score a pair file.
    Predict(PredictArgs),
    /// Write the top-k attention table and per-pair attention vectors.
    Report(ReportArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Per-attribute fraction of pairs with both values present, per domain.
    Stats(StatsArgs),
}

#[derive(Debug, Args, Default)]
pub struct PartitionArgs {
    /// Dataset manifest naming partition files and the schema.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub support: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: PartitionArgs,
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled test pair file.
    #[arg(long, required_unless_present = "manifest")]
    pub test: Option<PathBuf>,
    /// Dataset manifest whose `test` entry is evaluated.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output CSV (`pair_id,score`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pairs to report on; exported with the `target` domain tag.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Optional source pairs, exported with the `source` domain tag.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, default_value_t = 5, allow_negative_numbers = true)]
    pub top: i64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with SynthConfig fields; defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the TSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Hash of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of a training run, sufficient to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub embeddings: String,
    pub schema: AlignedSchema,
    pub inputs: Vec<InputHash>,
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
    pub metrics: Option<PathBuf>,
    pub started: String,
    pub finished: String,
}

/// Files written by one command; removed again unless [`Outputs::commit`] is reached.
#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    /// Writes `bytes` to `path` via a temporary sibling and a rename.
    pub fn write(&mut self, path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        self.written.push(tmp.clone());
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        self.written.pop();
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

/// Exit code for an error: 2 for a missing required partition, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingPartition(_) => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Stats(a) => cmd_stats(&a),
    }
}

fn now() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Vector file from the environment, else a hashing provider of `dim`.
pub fn embedding_provider(dim: usize) -> Result<EmbeddingProvider> {
    match std::env::var_os(EMBEDDINGS_ENV) {
        Some(path) if !path.is_empty() => EmbeddingProvider::from_file(path),
        _ => Ok(EmbeddingProvider::hashing(dim, HASHING_SEED)),
    }
}

/// Merges the config file (if any) and the flags over the defaults.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(v) = args.lambda {
        config.lambda = v;
    }
    if let Some(v) = args.phi {
        config.phi = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.embed_dim {
        config.embed_dim = v;
    }
    Ok(config)
}

struct ResolvedData {
    schema: AlignedSchema,
    partitions: DatasetPartitions,
    files: Vec<PathBuf>,
}

fn resolve_partitions(args: &PartitionArgs, variant: Variant) -> Result<ResolvedData> {
    let (manifest, base) = match &args.manifest {
        Some(m) => {
            let (manifest, base) = DatasetManifest::read(m)?;
            (Some(manifest), base)
        }
        None => (None, PathBuf::new()),
    };
    let pick = |flag: &Option<PathBuf>, listed: Option<&PathBuf>| {
        flag.clone().or_else(|| listed.map(|p| base.join(p)))
    };
    let source = pick(&args.source, manifest.as_ref().map(|m| &m.source)).ok_or(Error::MissingPartition("source"))?;
    let target = pick(&args.target, manifest.as_ref().and_then(|m| m.target.as_ref()));
    let support = pick(&args.support, manifest.as_ref().and_then(|m| m.support.as_ref()));
    if variant.uses_target() && target.is_none() {
        return Err(Error::MissingPartition("target"));
    }
    if variant.uses_support() && support.is_none() {
        return Err(Error::MissingPartition("support"));
    }
    // Only load partitions the variant consumes.
    let target = target.filter(|_| variant.uses_target());
    let support = support.filter(|_| variant.uses_support());

    let mut files = vec![source.clone()];
    files.extend(target.iter().cloned());
    files.extend(support.iter().cloned());
    let schema = match manifest {
        Some(m) => m.schema,
        None => data::align_ontology(
            &files
                .iter()
                .map(data::read_attribute_columns)
                .collect::<Result<Vec<_>>>()?,
        )?,
    };
    let load = |p: &Option<PathBuf>, part| -> Result<Vec<PairRecord>> {
        p.as_ref().map(|p| data::load_pairs(p, &schema, part)).unwrap_or(Ok(Vec::new()))
    };
    let partitions = DatasetPartitions {
        source: data::load_pairs(&source, &schema, Partition::Source)?,
        target: load(&target, Partition::Target)?
            .into_iter()
            .map(PairRecord::without_label)
            .collect(),
        support: load(&support, Partition::Support)?,
    };
    partitions.validate(&schema)?;
    Ok(ResolvedData { schema, partitions, files })
}

/// Output file names inside a `train` output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let started = now();
    let mut config = resolve_train_config(args)?;
    config.validate()?;
    let data = resolve_partitions(&args.data, config.variant)?;
    let provider = embedding_provider(config.embed_dim)?;
    config.embed_dim = provider.dim();
    let featurizer = Featurizer::new(data.schema.clone(), provider, config.crop, config.channels);

    let source = training::featurize_labeled(&featurizer, &data.partitions.source, "source")?;
    let target = featurizer.featurize_all(&data.partitions.target)?;
    let support = training::featurize_labeled(&featurizer, &data.partitions.support, "support")?;
    let outcome = training::train(
        &TrainingSet {
            source: &source,
            target: &target,
            support: &support,
        },
        &config,
        |_| {},
    )?;

    let checkpoint = Checkpoint::new(
        &outcome.params,
        &data.schema,
        config.channels,
        config.crop,
        featurizer.provider().fingerprint(),
    );
    let mut trace = Vec::new();
    training::write_loss_trace(&mut trace, &outcome.trace)?;

    let mut out = Outputs::default();
    let checkpoint_path = args.out.join(CHECKPOINT_FILE);
    let trace_path = args.out.join(LOSS_TRACE_FILE);
    let mut ckpt_bytes = serde_json::to_vec(&checkpoint)?;
    ckpt_bytes.push(b'\n');
    out.write(&checkpoint_path, &ckpt_bytes)?;
    out.write(&trace_path, &trace)?;
    let manifest = RunManifest {
        seed: config.seed,
        embeddings: featurizer.provider().fingerprint(),
        schema: data.schema.clone(),
        inputs: data
            .files
            .iter()
            .map(|p| Ok(InputHash { path: p.clone(), sha256: sha256_file(p)? }))
            .collect::<Result<_>>()?,
        config,
        checkpoint: checkpoint_path,
        loss_trace: trace_path,
        metrics: None,
        started,
        finished: now(),
    };
    out.write(args.out.join(RUN_MANIFEST_FILE), &to_json(&manifest)?)?;
    out.commit();
    Ok(manifest)
}

/// Model plus a featurizer matching the checkpoint.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub params: ModelParams,
    pub featurizer: Featurizer,
    pub hash: String,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let checkpoint = Checkpoint::read(path)?;
    let params = checkpoint.params()?;
    let provider = embedding_provider(checkpoint.dims.embed)?;
    let featurizer = Featurizer::with_expected_dim(
        checkpoint.schema.clone(),
        provider,
        checkpoint.crop,
        checkpoint.channels,
        checkpoint.dims.embed,
    )?;
    Ok(LoadedModel {
        hash: sha256_file(path)?,
        checkpoint,
        params,
        featurizer,
    })
}

/// Loads a pair file after checking its attribute columns against the checkpoint schema.
fn load_for_model(model: &LoadedModel, path: &Path, partition: Partition) -> Result<Vec<PairRecord>> {
    let columns = data::read_attribute_columns(path)?;
    let schema = data::align_ontology(&[columns])?;
    model.checkpoint.check_compatible(&schema, model.featurizer.provider().dim())?;
    data::load_pairs(path, &model.checkpoint.schema, partition)
}

pub const METRICS_FILE: &str = "metrics.json";
pub const PR_CURVE_FILE: &str = "pr_curve.csv";

pub fn cmd_eval(args: &EvalArgs) -> Result<Metrics> {
    let model = load_model(&args.checkpoint)?;
    let test_path = match (&args.test, &args.manifest) {
        (Some(t), _) => t.clone(),
        (None, Some(m)) => {
            let (manifest, base) = DatasetManifest::read(m)?;
            base.join(manifest.test.ok_or(Error::MissingPartition("test"))?)
        }
        (None, None) => return Err(Error::MissingPartition("test")),
    };
    let pairs = load_for_model(&model, &test_path, Partition::Support)?;
    let features = model.featurizer.featurize_all(&pairs)?;
    let scores = training::predict_features(&model.params, &features)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.label == Some(true)).collect();
    let metrics = Metrics::compute(&scores, &labels, model.hash.clone(), now())?;
    let curve = eval::prauc(&scores, &labels, PrMethod::default())?;
    let mut curve_bytes = Vec::new();
    eval::write_pr_curve(&mut curve_bytes, &curve)?;

    let mut out = Outputs::default();
    out.write(args.out.join(METRICS_FILE), &to_json(&metrics)?)?;
    out.write(args.out.join(PR_CURVE_FILE), &curve_bytes)?;
    out.commit();
    Ok(metrics)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let pairs = load_for_model(&model, &args.pairs, Partition::Target)?;
    let predictions = training::predict(&model.params, &pairs, &model.featurizer)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["pair_id", "score"])?;
    for p in &predictions {
        wtr.write_record([p.pair_id.as_str(), &p.score.to_string()])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut out = Outputs::default();
    out.write(&args.out, &bytes)?;
    out.commit();
    Ok(())
}

pub const ATTENTION_TOP_FILE: &str = "attention_top.tsv";
pub const ATTENTION_VECTORS_FILE: &str = "attention_vectors.csv";

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    if args.top <= 0 {
        return Err(Error::InvalidArgument(format!("--top must be positive, got {}", args.top)));
    }
    let model = load_model(&args.checkpoint)?;
    let pairs = load_for_model(&model, &args.pairs, Partition::Target)?;
    let k = usize::try_from(args.top).unwrap_or(usize::MAX);
    let report: AttentionReport = eval::attention_report(&model.params, &pairs, &model.featurizer, k)?;
    let mut top = Vec::new();
    report.write_tsv(&mut top)?;

    let mut rows = Vec::new();
    if let Some(src) = &args.source {
        let source = load_for_model(&model, src, Partition::Target)?;
        rows.extend(eval::attention_rows(&model.params, &source, Domain::Source, &model.featurizer)?);
    }
    rows.extend(eval::attention_rows(&model.params, &pairs, Domain::Target, &model.featurizer)?);
    let mut vectors = Vec::new();
    eval::write_attention_rows(&mut vectors, &rows)?;

    let mut out = Outputs::default();
    out.write(args.out.join(ATTENTION_TOP_FILE), &top)?;
    out.write(args.out.join(ATTENTION_VECTORS_FILE), &vectors)?;
    out.commit();
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut config: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let corpus = synth::generate(&config)?;
    let staging = args.out.join(".synth-staging");
    let result = synth::write_corpus(&corpus, &config, &staging).and_then(|_| {
        let mut out = Outputs::default();
        for name in ["source.csv", "target.csv", "support.csv", "test.csv", "manifest.json"] {
            out.write(args.out.join(name), &std::fs::read(staging.join(name))?)?;
        }
        out.commit();
        Ok(())
    });
    let _ = std::fs::remove_dir_all(&staging);
    result
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let (manifest, base) = DatasetManifest::read(&args.manifest)?;
    let parts = manifest.load(&base)?;
    let mut target = parts.target.clone();
    target.extend(parts.support.iter().cloned());
    target.extend(manifest.load_test(&base)?.unwrap_or_default());
    let stats = synth::challenge_stats(&manifest.schema, &parts.source, &target);
    let mut bytes = Vec::new();
    synth::write_stats_tsv(&mut bytes, &stats)?;
    match &args.out {
        Some(path) => {
            let mut out = Outputs::default();
            out.write(path, &bytes)?;
            out.commit();
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

/// Checkpoint built from freshly initialised parameters; used by tests and examples.
pub fn init_checkpoint(config: &TrainConfig, schema: &AlignedSchema) -> Result<Checkpoint> {
    let dims = config.dims(config.channels.feature_count(schema));
    let params = model::init_params(dims, config.theta_input, config.seed)?;
    let provider = embedding_provider(config.embed_dim)?;
    Ok(Checkpoint::new(&params, schema, config.channels, config.crop, provider.fingerprint()))
}
