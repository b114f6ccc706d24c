//! Command-line front end.
//!
//! Every command reads an optional JSON [`ExperimentConfig`]; the global
//! flags override it, and anything unset falls back to the defaults. Output
//! file names are fixed relative to `output_dir` unless given explicitly, so
//! `harvest → prepare → train → predict → eval` composes without extra flags.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, ClassId, ClassScheme, DedupStats, Deduper, LabelTransfer, LabeledExample, TransferStats,
    TweetRecord, VideoMeta,
};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, EvalReport};
use crate::features::DEFAULT_N_PER_CLASS;
use crate::io::{self, JsonLines};
use crate::pipeline::{PipelineConfig, TrainedPipeline, Variant};
use crate::svm::TrainConfig;
use crate::textproc::NormalizeOptions;

pub const DEFAULT_PER_CLASS_CAP: usize = 100_000;
pub const DEFAULT_PER_CLASS_TEST: usize = 1_000;
pub const DEFAULT_FOLDS: usize = 10;

/// One experiment. `seed` drives sampling, fold assignment and the solver;
/// it overrides `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tweets: Option<PathBuf>,
    pub videos: Option<PathBuf>,
    pub scheme: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub variant: Variant,
    pub n_per_class: usize,
    pub per_class_cap: usize,
    pub per_class_test: usize,
    pub train: TrainConfig,
    pub seed: u64,
    pub coarse: bool,
    pub normalize: NormalizeOptions,
    pub folds: usize,
    pub curve_sizes: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tweets: None,
            videos: None,
            scheme: None,
            output_dir: PathBuf::from("."),
            variant: Variant::Base,
            n_per_class: DEFAULT_N_PER_CLASS,
            per_class_cap: DEFAULT_PER_CLASS_CAP,
            per_class_test: DEFAULT_PER_CLASS_TEST,
            train: TrainConfig::default(),
            seed: 0,
            coarse: false,
            normalize: NormalizeOptions::default(),
            folds: DEFAULT_FOLDS,
            curve_sizes: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            variant: self.variant,
            normalize: self.normalize.clone(),
            n_per_class: self.n_per_class,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
        }
    }

    pub fn scheme(&self) -> Result<ClassScheme> {
        match &self.scheme {
            Some(path) => ClassScheme::load(path),
            None => Ok(ClassScheme::default_scheme()),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "silverlabel",
    version,
    about = "Distant-supervision tweet classification"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "base|v|h|vh")]
    pub variant: Option<Variant>,
    /// Work with the coarse class set.
    #[arg(long, global = true)]
    pub coarse: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join tweets with video metadata, drop retweets and duplicates.
    Harvest(HarvestArgs),
    /// Balance the corpus and split off a per-class test set.
    Prepare(PrepareArgs),
    /// Train a model file.
    Train(TrainArgs),
    /// Label texts with a trained model.
    Predict(PredictArgs),
    /// Score a model, a predictions file, or a confusion matrix.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Accuracy against training-set size.
    Curve(CurveArgs),
    /// Map a corpus or a confusion matrix onto the coarse classes.
    Coarsen(CoarsenArgs),
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    #[arg(long)]
    pub tweets: Option<PathBuf>,
    #[arg(long)]
    pub videos: Option<PathBuf>,
    /// Labeled corpus output [default: <output_dir>/corpus.jsonl].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stats output [default: <output_dir>/harvest_stats.json].
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// [default: <output_dir>/corpus.jsonl]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory for train.jsonl, test.jsonl and split_manifest.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// [default: <output_dir>/train.jsonl]
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// [default: <output_dir>/model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// [default: <output_dir>/model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON-lines records with `text` and optional `id`.
    #[arg(long)]
    pub input: PathBuf,
    /// [default: <output_dir>/predictions.jsonl]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Metric mode: score a confusion matrix TSV directly.
    #[arg(long, conflicts_with_all = ["model", "test", "predictions"])]
    pub matrix: Option<PathBuf>,
    /// [default: <output_dir>/model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gold corpus [default: <output_dir>/test.jsonl].
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Score an existing predictions file against `--test` line by line.
    #[arg(long, conflicts_with = "model")]
    pub predictions: Option<PathBuf>,
    /// Label the report as a drift evaluation.
    #[arg(long)]
    pub drift: bool,
    /// [default: <output_dir>/report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// [default: <output_dir>/confusion.tsv]
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// [default: <output_dir>/train.jsonl]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// [default: <output_dir>/cv_report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// [default: <output_dir>/cv_confusion.tsv]
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Training pool [default: <output_dir>/train.jsonl].
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// [default: <output_dir>/test.jsonl]
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Comma-separated total training sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// [default: <output_dir>/curve.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoarsenArgs {
    /// Labeled corpus to relabel.
    #[arg(long, required_unless_present = "matrix", conflicts_with = "matrix")]
    pub input: Option<PathBuf>,
    /// Confusion matrix TSV to merge.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

/// Applies flag > config file > default precedence.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(variant) = cli.variant {
        config.variant = variant;
    }
    config.coarse |= cli.coarse;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Harvest(a) => cmd_harvest(&config, a).map(drop),
        Command::Prepare(a) => cmd_prepare(&config, a).map(drop),
        Command::Train(a) => cmd_train(&config, a).map(drop),
        Command::Predict(a) => cmd_predict(&config, a).map(drop),
        Command::Eval(a) => cmd_eval(&config, a).map(drop),
        Command::Cv(a) => cmd_cv(&config, a).map(drop),
        Command::Curve(a) => cmd_curve(&config, a).map(drop),
        Command::Coarsen(a) => cmd_coarsen(&config, a),
    }
}

// ---------------------------------------------------------------------------
// harvest

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestStats {
    pub malformed_tweet_lines: usize,
    pub malformed_video_lines: usize,
    pub videos: usize,
    pub transfer: TransferStats,
    pub dedup: DedupStats,
    pub emitted: usize,
    /// Final corpus size per class, after deduplication.
    pub per_class: BTreeMap<ClassId, usize>,
}

fn required(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone().or_else(|| config.clone()).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "no {name} file given (flag --{name} or config `{name}`)"
        ))
    })
}

pub fn cmd_harvest(config: &ExperimentConfig, args: &HarvestArgs) -> Result<HarvestStats> {
    let tweets_path = required(&args.tweets, &config.tweets, "tweets")?;
    let videos_path = required(&args.videos, &config.videos, "videos")?;
    let scheme = config.scheme()?;
    let mut stats = HarvestStats::default();

    let mut videos = HashMap::new();
    for item in JsonLines::<VideoMeta>::open(&videos_path)? {
        match item? {
            (_, Ok(v)) => {
                videos.insert(v.video_id.clone(), v);
            }
            (line, Err(e)) => {
                warn!(
                    "{}:{line}: skipping malformed video record: {e}",
                    videos_path.display()
                );
                stats.malformed_video_lines += 1;
            }
        }
    }
    stats.videos = videos.len();

    // Open the input before creating any output.
    let tweets = JsonLines::<TweetRecord>::open(&tweets_path)?;
    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| config.out("corpus.jsonl"));
    let mut out = io::create(&out_path)?;
    let mut transfer = LabelTransfer::new(&videos, &scheme);
    let mut deduper = Deduper::new();
    for item in tweets {
        let tweet = match item? {
            (_, Ok(t)) => t,
            (line, Err(e)) => {
                warn!(
                    "{}:{line}: skipping malformed tweet record: {e}",
                    tweets_path.display()
                );
                stats.malformed_tweet_lines += 1;
                continue;
            }
        };
        let Some(example) = transfer.push(&tweet) else {
            continue;
        };
        if !deduper.admit(&example.text) {
            continue;
        }
        *stats.per_class.entry(example.label.clone()).or_default() += 1;
        serde_json::to_writer(&mut out, &example).map_err(|e| Error::Serde {
            context: "corpus record".into(),
            source: e,
        })?;
        out.write_all(b"\n").map_err(|e| Error::io(&out_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&out_path, e))?;

    stats.transfer = transfer.into_stats();
    stats.dedup = deduper.into_stats();
    stats.emitted = stats.dedup.kept;
    let stats_path = args
        .stats
        .clone()
        .unwrap_or_else(|| config.out("harvest_stats.json"));
    io::write_json(&stats_path, &stats)?;
    info!(
        "harvest: {} tweets, {} emitted, {} unresolved, {} dropped-class, {} retweets, {} duplicates, {} malformed",
        stats.transfer.tweets,
        stats.emitted,
        stats.transfer.unresolved,
        stats.transfer.dropped_class,
        stats.dedup.retweets,
        stats.dedup.duplicates,
        stats.malformed_tweet_lines
    );
    Ok(stats)
}

// ---------------------------------------------------------------------------
// prepare

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub per_class_cap: usize,
    pub per_class_test: usize,
    pub coarse: bool,
    pub train_size: usize,
    pub test_size: usize,
    pub per_class: BTreeMap<ClassId, SplitCounts>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

/// Reads a labeled corpus against the fine class list, then coarsens it when
/// requested. Returns the examples and the class list they use.
fn read_corpus(
    path: &Path,
    scheme: &ClassScheme,
    coarse: bool,
) -> Result<(Vec<LabeledExample>, Vec<ClassId>)> {
    let examples = corpus::read_labeled(path, scheme.class_list())?;
    Ok(if coarse {
        (
            examples
                .iter()
                .map(|e| corpus::coarsen(e, scheme))
                .collect(),
            scheme.coarse_list().to_vec(),
        )
    } else {
        (examples, scheme.class_list().to_vec())
    })
}

pub fn cmd_prepare(config: &ExperimentConfig, args: &PrepareArgs) -> Result<SplitManifest> {
    let scheme = config.scheme()?;
    let path = args
        .corpus
        .clone()
        .unwrap_or_else(|| config.out("corpus.jsonl"));
    let (examples, classes) = read_corpus(&path, &scheme, config.coarse)?;
    let balanced = corpus::balance_sample(&examples, &classes, config.per_class_cap, config.seed)?;
    let (train, test) =
        corpus::split_holdout(&balanced, &classes, config.per_class_test, config.seed)?;

    let mut per_class: BTreeMap<ClassId, SplitCounts> = classes
        .iter()
        .map(|c| (c.clone(), SplitCounts::default()))
        .collect();
    for e in &train {
        per_class
            .get_mut(&e.label)
            .expect("label in class list")
            .train += 1;
    }
    for e in &test {
        per_class
            .get_mut(&e.label)
            .expect("label in class list")
            .test += 1;
    }
    let manifest = SplitManifest {
        seed: config.seed,
        per_class_cap: config.per_class_cap,
        per_class_test: config.per_class_test,
        coarse: config.coarse,
        train_size: train.len(),
        test_size: test.len(),
        per_class,
    };
    let dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());
    io::write_jsonl(&dir.join("train.jsonl"), &train)?;
    io::write_jsonl(&dir.join("test.jsonl"), &test)?;
    io::write_json(&dir.join("split_manifest.json"), &manifest)?;
    info!("prepare: {} train, {} test", train.len(), test.len());
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train / predict

pub fn cmd_train(config: &ExperimentConfig, args: &TrainArgs) -> Result<TrainedPipeline> {
    let scheme = config.scheme()?;
    let path = args
        .train
        .clone()
        .unwrap_or_else(|| config.out("train.jsonl"));
    let (examples, classes) = read_corpus(&path, &scheme, config.coarse)?;
    let pipeline = TrainedPipeline::fit(&examples, &classes, &config.pipeline())?;
    let model_path = args
        .model
        .clone()
        .unwrap_or_else(|| config.out("model.json"));
    pipeline.save(&model_path)?;
    info!("train: wrote {}", model_path.display());
    Ok(pipeline)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictInput {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub predicted: ClassId,
}

/// Labels every input record. Titles are never consulted at prediction time.
pub fn cmd_predict(config: &ExperimentConfig, args: &PredictArgs) -> Result<usize> {
    let model_path = args
        .model
        .clone()
        .unwrap_or_else(|| config.out("model.json"));
    let pipeline = TrainedPipeline::load(&model_path)?;
    let inputs: Vec<PredictInput> = io::read_jsonl(&args.input)?;
    let texts: Vec<&str> = inputs.iter().map(|r| r.text.as_str()).collect();
    let predicted = pipeline.predict_all(&texts);
    let classes = pipeline.class_list();
    let records: Vec<Prediction> = inputs
        .into_iter()
        .zip(predicted)
        .map(|(r, p)| Prediction {
            id: r.id,
            text: r.text,
            predicted: classes[p].clone(),
        })
        .collect();
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| config.out("predictions.jsonl"));
    io::write_jsonl(&out, &records)
}

// ---------------------------------------------------------------------------
// eval / cv / curve

fn write_report(report: &EvalReport, json: &Path, tsv: &Path) -> Result<()> {
    io::write_json(json, report)?;
    io::write_text(tsv, &report.matrix.to_tsv())?;
    println!(
        "accuracy {:.4}  macro P {:.4}  R {:.4}  F1 {:.4}  (n={})",
        report.accuracy,
        report.macro_avg.precision,
        report.macro_avg.recall,
        report.macro_avg.f1,
        report.total
    );
    Ok(())
}

fn maybe_coarsen(
    matrix: ConfusionMatrix,
    scheme: &ClassScheme,
    coarse: bool,
) -> Result<ConfusionMatrix> {
    if coarse && matrix.class_list() != scheme.coarse_list() {
        matrix.coarsened(scheme)
    } else {
        Ok(matrix)
    }
}

pub fn cmd_eval(config: &ExperimentConfig, args: &EvalArgs) -> Result<EvalReport> {
    let scheme = config.scheme()?;
    let report = if let Some(path) = &args.matrix {
        let matrix = ConfusionMatrix::from_tsv(&io::read_text(path)?)?;
        let mut report = eval::macro_report(&maybe_coarsen(matrix, &scheme, config.coarse)?);
        report.metadata.protocol = Some("matrix".into());
        report
    } else {
        let test_path = args
            .test
            .clone()
            .unwrap_or_else(|| config.out("test.jsonl"));
        if let Some(pred_path) = &args.predictions {
            eval_predictions(&scheme, &test_path, pred_path, config.coarse)?
        } else {
            let model_path = args
                .model
                .clone()
                .unwrap_or_else(|| config.out("model.json"));
            let pipeline = TrainedPipeline::load(&model_path)?;
            let model_is_coarse = pipeline.class_list() == scheme.coarse_list();
            let (test, _) = read_corpus(&test_path, &scheme, model_is_coarse)?;
            let mut report = if args.drift {
                eval::drift_eval(&pipeline, &test)?
            } else {
                eval::evaluate(&pipeline, &test)?
            };
            if config.coarse && !model_is_coarse {
                let meta = report.metadata.clone();
                report = eval::macro_report(&report.matrix.coarsened(&scheme)?).with_meta(meta);
            }
            report
        }
    };
    write_report(
        &report,
        &args
            .report
            .clone()
            .unwrap_or_else(|| config.out("report.json")),
        &args
            .tsv
            .clone()
            .unwrap_or_else(|| config.out("confusion.tsv")),
    )?;
    Ok(report)
}

/// Pairs gold and predicted labels by record position.
fn eval_predictions(
    scheme: &ClassScheme,
    gold: &Path,
    predictions: &Path,
    coarse: bool,
) -> Result<EvalReport> {
    let gold = corpus::read_labeled(gold, scheme.class_list())?;
    let predicted: Vec<Prediction> = io::read_jsonl(predictions)?;
    if gold.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} gold records but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let labels = if scheme.class_list().contains(&predicted[0].predicted) {
        scheme.class_list()
    } else {
        scheme.coarse_list()
    };
    let pairs: Vec<(ClassId, ClassId)> = gold
        .into_iter()
        .zip(predicted)
        .map(|(g, p)| {
            let truth = if labels == scheme.coarse_list() {
                corpus::coarsen(&g, scheme).label
            } else {
                g.label
            };
            (truth, p.predicted)
        })
        .collect();
    let matrix = eval::confusion(&pairs, labels)?;
    let mut report = eval::macro_report(&maybe_coarsen(matrix, scheme, coarse)?);
    report.metadata.protocol = Some("predictions".into());
    Ok(report)
}

pub fn cmd_cv(config: &ExperimentConfig, args: &CvArgs) -> Result<EvalReport> {
    let scheme = config.scheme()?;
    let path = args
        .corpus
        .clone()
        .unwrap_or_else(|| config.out("train.jsonl"));
    let (examples, classes) = read_corpus(&path, &scheme, config.coarse)?;
    let k = args.folds.unwrap_or(config.folds);
    let outcome = eval::cross_validate(&examples, &classes, k, &config.pipeline(), config.seed)?;
    write_report(
        &outcome.report,
        &args
            .report
            .clone()
            .unwrap_or_else(|| config.out("cv_report.json")),
        &args
            .tsv
            .clone()
            .unwrap_or_else(|| config.out("cv_confusion.tsv")),
    )?;
    Ok(outcome.report)
}

pub fn cmd_curve(config: &ExperimentConfig, args: &CurveArgs) -> Result<Vec<eval::CurvePoint>> {
    let sizes = if args.sizes.is_empty() {
        &config.curve_sizes
    } else {
        &args.sizes
    };
    if sizes.is_empty() {
        return Err(Error::InvalidConfig(
            "no curve sizes given (--sizes or config `curve_sizes`)".into(),
        ));
    }
    let scheme = config.scheme()?;
    let pool_path = args
        .pool
        .clone()
        .unwrap_or_else(|| config.out("train.jsonl"));
    let test_path = args
        .test
        .clone()
        .unwrap_or_else(|| config.out("test.jsonl"));
    let (pool, classes) = read_corpus(&pool_path, &scheme, config.coarse)?;
    let (test, _) = read_corpus(&test_path, &scheme, config.coarse)?;
    let points = eval::learning_curve(
        &pool,
        &classes,
        sizes,
        &test,
        &config.pipeline(),
        config.seed,
        None,
    )?;
    let out = args.out.clone().unwrap_or_else(|| config.out("curve.csv"));
    io::write_text(&out, &eval::curve_to_csv(&points))?;
    Ok(points)
}

// ---------------------------------------------------------------------------
// coarsen

pub fn cmd_coarsen(config: &ExperimentConfig, args: &CoarsenArgs) -> Result<()> {
    let scheme = config.scheme()?;
    if let Some(path) = &args.matrix {
        let matrix = ConfusionMatrix::from_tsv(&io::read_text(path)?)?;
        return io::write_text(&args.output, &matrix.coarsened(&scheme)?.to_tsv());
    }
    let input = args
        .input
        .as_ref()
        .expect("clap enforces --input or --matrix");
    let examples = corpus::read_labeled(input, scheme.class_list())?;
    let coarse: Vec<LabeledExample> = examples
        .iter()
        .map(|e| corpus::coarsen(e, &scheme))
        .collect();
    io::write_jsonl(&args.output, &coarse).map(drop)
}
