//! Command-line front end.
//!
//! Every subcommand writes its primary output to `--output` and one JSON run
//! manifest beside it at `<output>.manifest.json`. Settings come from flags,
//! then from the `--config` key=value file, then from defaults. Config keys
//! are flag names with `-` replaced by `_`. Exit status is 0 on success, 1 on
//! a usage or configuration error and 2 on a data error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{file_digest, Checkpoint};
use crate::config::KvConfig;
use crate::corpus::{
    build_vocab_from_sentences, load_pairs, save_pairs, CorpusFormat, LoadOptions, PairCorpus,
    TokenizeMode, TokenizerConfig,
};
use crate::embedder::{EmbeddingMatrix, ModelKind, WordVectors};
use crate::error::Error;
use crate::evaluation::{sts_evaluate, StsFile};
use crate::filters::{
    apply_filters, load_scored, save_scored, score_pairs, survivor_indices, tune_filter,
    FilterConfig, FilterFamily, MetricRequest, Resources, ScoredPair, TuningGrid,
    DEFAULT_TARGET_SIZE,
};
use crate::ngram_lm::{LmConfig, NgramLm};
use crate::refclass::{
    classifier_report, correlations_tsv, group_report, group_report_tsv, kbest_lists,
    make_training_set, metric_correlations, train_classifier_kbest, ClassifierConfig,
    EncoderKind, LabeledSentence, NegativeMode,
};
use crate::synthgen::{gen_mt_like_with, gen_paraphrase_corpus, MtLikeConfig, ParaphraseConfig};
use crate::textstats::{build_idf, corpus_diff_report, diff_report_tsv, IdfTable};
use crate::trainer::{train_with_hook, TrainConfig};

/// Stream ids carved out of the per-run seed.
const EMBEDDING_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

/// Default embedding dimension when no pretrained vectors are given.
const DEFAULT_DIM: usize = 300;

#[derive(Parser, Debug)]
#[command(
    name = "paramine",
    version,
    about = "Paraphrase-corpus mining, filtering and sentence-embedding training"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core. Training commands default to 1,
    /// the others to 0.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat key=value settings file; flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reference-minus-translation entropy and repetition table.
    Stats(StatsArgs),
    /// Inverse document frequencies, one sentence per document.
    Idf(IdfArgs),
    /// Train a Kneser-Ney n-gram model and write it in ARPA format.
    LmTrain(LmTrainArgs),
    /// Per-sentence perplexity under an ARPA model.
    LmScore(LmScoreArgs),
    /// Cache every filter metric for every pair.
    Score(ScoreArgs),
    /// Keep pairs passing every active bound, then optionally sample.
    Filter(FilterCmdArgs),
    /// Grid-search one filter family by training on each survivor set.
    Tune(TuneArgs),
    /// Train an AVG or GRAN sentence encoder.
    Train(TrainCmdArgs),
    /// Pearson correlation on STS-format files.
    Eval(EvalArgs),
    /// Train a reference/translation classifier from k-best lists.
    ClfTrain(ClfTrainArgs),
    /// Classifier accuracy per language pair and source.
    ClfReport(ClfReportArgs),
    /// Spearman correlation of P(R) with text statistics.
    ClfCorr(ClfCorrArgs),
    /// Generate synthetic corpora.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Paraphrase clusters plus dev and test STS files.
    Paraphrase(SynthParaArgs),
    /// References with repetitive, vocabulary-poor "translations".
    MtLike(SynthMtArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Tsv,
    Jsonl,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => CorpusFormat::Tsv,
            FormatArg::Jsonl => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct TokArgs {
    /// Lowercase every token.
    #[arg(long)]
    lowercase: bool,
    /// Input is pre-tokenized with single spaces.
    #[arg(long)]
    pretokenized: bool,
}

#[derive(Args, Debug, Clone)]
struct CorpusIn {
    /// Pair corpus, TSV or JSONL.
    #[arg(short, long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Corpus format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Fail on malformed records instead of skipping them.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    tok: TokArgs,
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Primary output file. Reports ending in `.json` are written as JSON.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusIn,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct IdfArgs {
    #[command(flatten)]
    corpus: CorpusIn,
    /// Which sentences count as documents: both, reference or translation.
    #[arg(long)]
    side: Option<Side>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Side {
    Both,
    Reference,
    Translation,
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "both" => Ok(Side::Both),
            "reference" => Ok(Side::Reference),
            "translation" => Ok(Side::Translation),
            other => Err(format!("unknown side '{other}'")),
        }
    }
}

fn side_sentences(corpus: &PairCorpus, side: Side) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for p in corpus.iter() {
        if side != Side::Translation {
            out.push(p.reference.clone());
        }
        if side != Side::Reference {
            out.push(p.translation.clone());
        }
    }
    out
}

#[derive(Args, Debug)]
struct LmTrainArgs {
    #[command(flatten)]
    corpus: CorpusIn,
    /// Plain text training data, one sentence per line, instead of a corpus.
    #[arg(long, value_name = "FILE", conflicts_with = "input")]
    text: Option<PathBuf>,
    /// Corpus side to train on (default reference).
    #[arg(long)]
    side: Option<Side>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    discount: Option<f64>,
    /// Tokens seen fewer times become `<unk>`.
    #[arg(long)]
    min_count: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct LmScoreArgs {
    /// ARPA language model.
    #[arg(long, value_name = "FILE")]
    lm: PathBuf,
    #[command(flatten)]
    corpus: CorpusIn,
    /// Corpus side to score: reference or translation (default).
    #[arg(long)]
    side: Option<Side>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct ResourceArgs {
    /// ARPA model for perplexity.
    #[arg(long, value_name = "FILE")]
    lm: Option<PathBuf>,
    /// Classifier checkpoint for P(R).
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    corpus: CorpusIn,
    #[command(flatten)]
    res: ResourceArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct ScoredIn {
    /// Scored pairs written by `score`, instead of a raw corpus.
    #[arg(long, value_name = "FILE", conflicts_with = "input")]
    scored: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusIn,
    #[command(flatten)]
    res: ResourceArgs,
}

#[derive(Args, Debug, Clone)]
struct FilterArgs {
    /// Inclusive token-count bounds.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    length_range: Option<Vec<usize>>,
    /// Side measured by the length filter: translation or reference.
    #[arg(long)]
    length_side: Option<String>,
    /// Upper bound on translation cost.
    #[arg(long)]
    cost_max: Option<f64>,
    /// Upper bound on perplexity; `inf` disables it.
    #[arg(long)]
    ppl_max: Option<String>,
    /// Lower bound on P(R).
    #[arg(long)]
    pr_min: Option<f64>,
    /// Inclusive bounds on n-gram overlap.
    #[arg(long, num_args = 3, value_names = ["N", "LO", "HI"])]
    overlap: Option<Vec<String>>,
    /// Inclusive bounds on smoothed BLEU.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    bleu_range: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct FilterCmdArgs {
    #[command(flatten)]
    input: ScoredIn,
    #[command(flatten)]
    filter: FilterArgs,
    /// Sample this many survivors.
    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output corpus format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    out_format: Option<FormatArg>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct EmbArgs {
    /// Embedding dimension for random initialization.
    #[arg(long)]
    dim: Option<usize>,
    /// Pretrained word vectors (text format).
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Vocabulary frequency cutoff.
    #[arg(long)]
    vocab_min_count: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// avg or gran.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// Weight of ‖W_c‖².
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Weight of ‖W_w_initial − W_w‖².
    #[arg(long)]
    lambda_w: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Defaults to 20 for avg and 3 for gran.
    #[arg(long)]
    epochs: Option<usize>,
    /// GRAN hidden size; defaults to the embedding dimension.
    #[arg(long)]
    hidden: Option<usize>,
    #[command(flatten)]
    emb: EmbArgs,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    input: ScoredIn,
    /// Family to search: length, cost, ppl, pr, overlap1..3 or bleu.
    #[arg(long)]
    family: Option<String>,
    /// Bounds held fixed while searching.
    #[command(flatten)]
    filter: FilterArgs,
    /// Dev STS files.
    #[arg(long, num_args = 1.., value_name = "FILE", required = true)]
    dev: Vec<PathBuf>,
    /// Pairs sampled from each survivor set.
    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    train: TrainArgs,
    /// Best filter as key=value; defaults to `<output>.best.conf`.
    #[arg(long, value_name = "FILE")]
    best_out: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TrainCmdArgs {
    #[command(flatten)]
    corpus: CorpusIn,
    /// Dev STS files for epoch selection.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    dev: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write `<output>.epoch<N>` after every epoch.
    #[arg(long)]
    checkpoint_every_epoch: bool,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Sentence-encoder checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// STS-format files: sentence1, sentence2, gold.
    #[arg(long, num_args = 1.., value_name = "FILE", required = true)]
    sts: Vec<PathBuf>,
    #[command(flatten)]
    tok: TokArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ClfTrainArgs {
    #[command(flatten)]
    corpus: CorpusIn,
    /// avg or lstm.
    #[arg(long)]
    encoder: Option<EncoderKind>,
    /// Weight of ‖W_w‖².
    #[arg(long)]
    l2: Option<f64>,
    /// Negative per list: random or hardest.
    #[arg(long)]
    mode: Option<NegativeMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// LSTM hidden size; defaults to the embedding dimension.
    #[arg(long)]
    hidden: Option<usize>,
    /// Fraction of k-best lists held out for validation.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Fraction of k-best lists held out for testing.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the held-out test pairs here.
    #[arg(long, value_name = "FILE")]
    test_out: Option<PathBuf>,
    #[command(flatten)]
    emb: EmbArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ClfReportArgs {
    /// Classifier checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[command(flatten)]
    corpus: CorpusIn,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ClfCorrArgs {
    /// Classifier checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[command(flatten)]
    corpus: CorpusIn,
    /// IDF table written by `idf`; built from the input corpus when omitted.
    #[arg(long, value_name = "FILE")]
    idf: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SynthParaArgs {
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    per_cluster: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    sentence_concepts: Option<usize>,
    #[arg(long)]
    sts_items: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output corpus; dev and test STS files go to `<output>.dev.tsv` and
    /// `<output>.test.tsv`.
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SynthMtArgs {
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    repeat_rate: Option<f64>,
    #[arg(long)]
    vocab_shrink: Option<f64>,
    /// Translations per reference.
    #[arg(long)]
    kbest: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

/// Written beside every primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Resolved settings, including defaults.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    /// Command-specific results.
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

/// Resolves settings and records every resolved value for the echo.
struct Params {
    file: KvConfig,
    used: BTreeSet<String>,
    echo: serde_json::Map<String, Value>,
}

impl Params {
    fn new(file: KvConfig) -> Self {
        Params {
            file,
            used: BTreeSet::new(),
            echo: serde_json::Map::new(),
        }
    }

    fn raw<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        self.used.insert(key.to_string());
        self.file
            .get_parsed(key)
            .map_err(|_| usage(format!("bad value for config key '{key}'")))
    }

    fn value<T: FromStr + Serialize>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let file = self.raw(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.echo.insert(key.into(), serde_json::to_value(&v)?);
        Ok(v)
    }

    fn opt<T: FromStr + Serialize>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let file = self.raw(key)?;
        let v = flag.or(file);
        self.echo.insert(key.into(), serde_json::to_value(&v)?);
        Ok(v)
    }

    fn flag(&mut self, key: &str, set: bool) -> CliResult<bool> {
        self.value(key, set.then_some(true), false)
    }

    fn filter(&mut self, a: &FilterArgs) -> CliResult<FilterConfig> {
        const PREDICATE_KEYS: [&str; 7] = [
            "length_range",
            "length_side",
            "cost_max",
            "ppl_max",
            "pr_min",
            "overlap",
            "bleu_range",
        ];
        let mut kv = KvConfig::new();
        for k in PREDICATE_KEYS {
            self.used.insert(k.to_string());
            if let Some(v) = self.file.get(k) {
                kv.set(k, v);
            }
        }
        if let Some(v) = &a.length_range {
            kv.set("length_range", format!("{},{}", v[0], v[1]));
        }
        if let Some(v) = &a.length_side {
            kv.set("length_side", v.clone());
        }
        if let Some(v) = a.cost_max {
            kv.set("cost_max", v.to_string());
        }
        if let Some(v) = &a.ppl_max {
            kv.set("ppl_max", v.clone());
        }
        if let Some(v) = a.pr_min {
            kv.set("pr_min", v.to_string());
        }
        if let Some(v) = &a.overlap {
            kv.set("overlap", v.join(","));
        }
        if let Some(v) = &a.bleu_range {
            kv.set("bleu_range", format!("{},{}", v[0], v[1]));
        }
        let cfg = FilterConfig::from_kv(&kv).map_err(|e| usage(e.to_string()))?;
        let resolved = cfg.to_kv();
        for k in PREDICATE_KEYS {
            let v = resolved.get(k).map_or(Value::Null, |s| Value::String(s.into()));
            self.echo.insert(k.into(), v);
        }
        Ok(cfg)
    }

    fn tokenizer(&mut self, a: &TokArgs) -> CliResult<TokenizerConfig> {
        Ok(TokenizerConfig {
            lowercase: self.flag("lowercase", a.lowercase)?,
            mode: if self.flag("pretokenized", a.pretokenized)? {
                TokenizeMode::Pretokenized
            } else {
                TokenizeMode::Whitespace
            },
        })
    }

    fn warn_unused(&self) {
        for k in self.file.keys() {
            if !self.used.contains(k) {
                log::warn!("config key '{k}' is not used by this command");
            }
        }
    }
}

struct Ctx {
    params: Params,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
    summary: serde_json::Map<String, Value>,
}

impl Ctx {
    fn input(&mut self, p: &Path) -> CliResult<()> {
        let sha256 = file_digest(p)?;
        self.inputs.push(InputDigest {
            path: p.display().to_string(),
            sha256,
        });
        Ok(())
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    fn seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let s = self.params.value("seed", flag, 1)?;
        self.seeds.insert("seed".into(), s);
        Ok(s)
    }

    fn note<T: Serialize>(&mut self, key: &str, v: &T) -> CliResult<()> {
        self.summary.insert(key.into(), serde_json::to_value(v)?);
        Ok(())
    }

    fn config_echo(&self) -> Value {
        Value::Object(self.params.echo.clone())
    }

    fn load_corpus(&mut self, a: &CorpusIn) -> CliResult<PairCorpus> {
        let path = a
            .input
            .as_deref()
            .ok_or_else(|| usage("an input corpus is required (--input)"))?;
        let tok = self.params.tokenizer(&a.tok)?;
        let strict = self.params.flag("strict", a.strict)?;
        let format = a.format.map(Into::into).unwrap_or_else(|| CorpusFormat::from_path(path));
        self.input(path)?;
        let (corpus, report) = load_pairs(path, format, &LoadOptions { tok, strict })?;
        if report.skipped > 0 {
            log::warn!("{}: skipped {} malformed records", path.display(), report.skipped);
        }
        self.note("load", &report)?;
        Ok(corpus)
    }

    fn load_sts(&mut self, paths: &[PathBuf], tok: &TokenizerConfig) -> CliResult<Vec<StsFile>> {
        let mut files = Vec::new();
        for p in paths {
            self.input(p)?;
            files.push(StsFile::load(p, tok)?);
        }
        Ok(files)
    }

    fn resources(&mut self, a: &ResourceArgs) -> CliResult<(Option<NgramLm>, Option<crate::refclass::Classifier>)> {
        let lm = match &a.lm {
            Some(p) => {
                self.input(p)?;
                Some(read_lm(p)?)
            }
            None => None,
        };
        let clf = match &a.classifier {
            Some(p) => {
                self.input(p)?;
                Some(Checkpoint::load(p)?.to_classifier()?)
            }
            None => None,
        };
        Ok((lm, clf))
    }

    fn scored(&mut self, a: &ScoredIn) -> CliResult<Vec<ScoredPair>> {
        if let Some(p) = &a.scored {
            self.input(p)?;
            return Ok(load_scored(p)?);
        }
        let corpus = self.load_corpus(&a.corpus)?;
        let (lm, clf) = self.resources(&a.res)?;
        let req = MetricRequest {
            ppl: lm.is_some(),
            pr: clf.is_some(),
        };
        let res = Resources {
            lm: lm.as_ref(),
            classifier: clf.as_ref(),
        };
        Ok(score_pairs(&corpus, &res, &req)?)
    }

    fn embeddings(&mut self, a: &EmbArgs, sentences: &[Vec<String>], seed: u64) -> CliResult<EmbeddingMatrix> {
        let min_count = self.params.value("vocab_min_count", a.vocab_min_count, 1usize)?;
        let dim = self.params.value("dim", a.dim, DEFAULT_DIM)?;
        let vocab = build_vocab_from_sentences(sentences.iter().map(|s| s.as_slice()), min_count)?;
        let pretrained = match &a.embeddings {
            Some(p) => {
                self.input(p)?;
                Some(WordVectors::load(p)?)
            }
            None => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EMBEDDING_STREAM);
        Ok(EmbeddingMatrix::init(vocab, dim, pretrained.as_ref(), &mut rng)?)
    }

    fn train_config(&mut self, a: &TrainArgs, seed: u64) -> CliResult<TrainConfig> {
        let kind = self.params.value("model", a.model, ModelKind::Avg)?;
        let d = TrainConfig::new(kind);
        let cfg = TrainConfig {
            kind,
            batch_size: self.params.value("batch_size", a.batch_size, d.batch_size)?,
            margin: self.params.value("margin", a.margin, d.margin)?,
            lambda_c: self.params.value("lambda_c", a.lambda_c, d.lambda_c)?,
            lambda_w: self.params.value("lambda_w", a.lambda_w, d.lambda_w)?,
            lr: self.params.value("lr", a.lr, d.lr)?,
            epochs: Some(self.params.value("epochs", a.epochs, d.epochs())?),
            seed,
            checkpoint_every_epoch: false,
            hidden: self.params.opt("hidden", a.hidden)?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn read_lm(p: &Path) -> CliResult<NgramLm> {
    let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
    Ok(NgramLm::read_arpa(std::io::BufReader::new(f))?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("json")
}

fn write_report<T: Serialize + ?Sized>(path: &Path, value: &T, tsv: impl FnOnce() -> String) -> CliResult<()> {
    let text = if is_json(path) {
        serde_json::to_string_pretty(value)? + "\n"
    } else {
        tsv()
    };
    write_text(path, &text)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Stats(_) => "stats",
        Command::Idf(_) => "idf",
        Command::LmTrain(_) => "lm-train",
        Command::LmScore(_) => "lm-score",
        Command::Score(_) => "score",
        Command::Filter(_) => "filter",
        Command::Tune(_) => "tune",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::ClfTrain(_) => "clf-train",
        Command::ClfReport(_) => "clf-report",
        Command::ClfCorr(_) => "clf-corr",
        Command::Synth(SynthCommand::Paraphrase(_)) => "synth paraphrase",
        Command::Synth(SynthCommand::MtLike(_)) => "synth mt-like",
    }
}

fn primary_output(c: &Command) -> &Path {
    match c {
        Command::Stats(a) => &a.out.output,
        Command::Idf(a) => &a.out.output,
        Command::LmTrain(a) => &a.out.output,
        Command::LmScore(a) => &a.out.output,
        Command::Score(a) => &a.out.output,
        Command::Filter(a) => &a.out.output,
        Command::Tune(a) => &a.out.output,
        Command::Train(a) => &a.out.output,
        Command::Eval(a) => &a.out.output,
        Command::ClfTrain(a) => &a.out.output,
        Command::ClfReport(a) => &a.out.output,
        Command::ClfCorr(a) => &a.out.output,
        Command::Synth(SynthCommand::Paraphrase(a)) => &a.out.output,
        Command::Synth(SynthCommand::MtLike(a)) => &a.out.output,
    }
}

fn is_training(c: &Command) -> bool {
    matches!(c, Command::Tune(_) | Command::Train(_) | Command::ClfTrain(_))
}

fn execute(cli: Cli) -> CliResult<()> {
    let start = Instant::now();
    let file = match &cli.config {
        Some(p) => KvConfig::load(p).map_err(|e| usage(format!("config file: {e}")))?,
        None => KvConfig::new(),
    };
    let mut ctx = Ctx {
        params: Params::new(file),
        inputs: Vec::new(),
        outputs: Vec::new(),
        seeds: BTreeMap::new(),
        summary: serde_json::Map::new(),
    };
    if let Some(p) = &cli.config {
        ctx.input(p)?;
    }
    let threads = cli
        .threads
        .unwrap_or(if is_training(&cli.command) { 1 } else { 0 });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &mut ctx))?;
    ctx.params.warn_unused();

    let output = primary_output(&cli.command);
    let manifest = RunManifest {
        command: command_name(&cli.command).into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: ctx.config_echo(),
        seeds: ctx.seeds,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        summary: Value::Object(ctx.summary),
    };
    write_text(
        &manifest_path(output),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )
}

fn dispatch(cmd: &Command, ctx: &mut Ctx) -> CliResult<()> {
    match cmd {
        Command::Stats(a) => cmd_stats(a, ctx),
        Command::Idf(a) => cmd_idf(a, ctx),
        Command::LmTrain(a) => cmd_lm_train(a, ctx),
        Command::LmScore(a) => cmd_lm_score(a, ctx),
        Command::Score(a) => cmd_score(a, ctx),
        Command::Filter(a) => cmd_filter(a, ctx),
        Command::Tune(a) => cmd_tune(a, ctx),
        Command::Train(a) => cmd_train(a, ctx),
        Command::Eval(a) => cmd_eval(a, ctx),
        Command::ClfTrain(a) => cmd_clf_train(a, ctx),
        Command::ClfReport(a) => cmd_clf_report(a, ctx),
        Command::ClfCorr(a) => cmd_clf_corr(a, ctx),
        Command::Synth(SynthCommand::Paraphrase(a)) => cmd_synth_paraphrase(a, ctx),
        Command::Synth(SynthCommand::MtLike(a)) => cmd_synth_mt(a, ctx),
    }
}

fn cmd_stats(a: &StatsArgs, ctx: &mut Ctx) -> CliResult<()> {
    let corpus = ctx.load_corpus(&a.corpus)?;
    let rows = corpus_diff_report(&corpus)?;
    write_report(&a.out.output, &rows, || diff_report_tsv(&rows))?;
    ctx.output(&a.out.output);
    ctx.note("pairs", &corpus.len())
}

fn cmd_idf(a: &IdfArgs, ctx: &mut Ctx) -> CliResult<()> {
    let corpus = ctx.load_corpus(&a.corpus)?;
    let side = ctx.params.value("side", a.side, Side::Both)?;
    let docs = side_sentences(&corpus, side);
    let table = build_idf(&docs)?;
    write_text(&a.out.output, &table.to_tsv())?;
    ctx.output(&a.out.output);
    ctx.note("documents", &docs.len())
}

fn cmd_lm_train(a: &LmTrainArgs, ctx: &mut Ctx) -> CliResult<()> {
    let d = LmConfig::default();
    let cfg = LmConfig {
        order: ctx.params.value("order", a.order, d.order)?,
        discount: ctx.params.value("discount", a.discount, d.discount)?,
        min_count: ctx.params.value("min_count", a.min_count, d.min_count)?,
    };
    let sentences = match &a.text {
        Some(p) => {
            let tok = ctx.params.tokenizer(&a.corpus.tok)?;
            ctx.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.lines()
                .map(|l| crate::corpus::tokenize(l, &tok))
                .filter(|s| !s.is_empty())
                .collect()
        }
        None => {
            let corpus = ctx.load_corpus(&a.corpus)?;
            let side = ctx.params.value("side", a.side, Side::Reference)?;
            side_sentences(&corpus, side)
        }
    };
    let lm = NgramLm::train(&sentences, &cfg)?;
    write_text(&a.out.output, &lm.write_arpa())?;
    ctx.output(&a.out.output);
    ctx.note("sentences", &sentences.len())
}

fn cmd_lm_score(a: &LmScoreArgs, ctx: &mut Ctx) -> CliResult<()> {
    ctx.input(&a.lm)?;
    let lm = read_lm(&a.lm)?;
    let corpus = ctx.load_corpus(&a.corpus)?;
    let side = ctx.params.value("side", a.side, Side::Translation)?;
    if side == Side::Both {
        return Err(usage("lm-score scores one side: reference or translation"));
    }
    let sentences = side_sentences(&corpus, side);
    let mut out = String::from("index\tperplexity\n");
    for (i, s) in sentences.iter().enumerate() {
        out.push_str(&format!("{i}\t{}\n", lm.perplexity(s)?));
    }
    write_text(&a.out.output, &out)?;
    ctx.output(&a.out.output);
    ctx.note("sentences", &sentences.len())
}

fn cmd_score(a: &ScoreArgs, ctx: &mut Ctx) -> CliResult<()> {
    let scored = ctx.scored(&ScoredIn {
        scored: None,
        corpus: a.corpus.clone(),
        res: a.res.clone(),
    })?;
    save_scored(&a.out.output, &scored)?;
    ctx.output(&a.out.output);
    ctx.note("pairs", &scored.len())
}

fn cmd_filter(a: &FilterCmdArgs, ctx: &mut Ctx) -> CliResult<()> {
    let scored = ctx.scored(&a.input)?;
    let mut cfg = ctx.params.filter(&a.filter)?;
    cfg.target_size = ctx.params.opt("target_size", a.target_size)?;
    cfg.seed = ctx.seed(a.seed)?;
    let survivors = survivor_indices(&scored, &cfg)?.len();
    let out = apply_filters(&scored, &cfg)?;
    let format = a
        .out_format
        .map(Into::into)
        .unwrap_or_else(|| CorpusFormat::from_path(&a.out.output));
    save_pairs(&a.out.output, &out, format)?;
    ctx.output(&a.out.output);
    ctx.note("scored", &scored.len())?;
    ctx.note("survivors", &survivors)?;
    ctx.note("written", &out.len())?;
    ctx.note("filter", &cfg.describe())
}

fn cmd_tune(a: &TuneArgs, ctx: &mut Ctx) -> CliResult<()> {
    let scored = ctx.scored(&a.input)?;
    let base = ctx.params.filter(&a.filter)?;
    let family: String = ctx
        .params
        .opt("family", a.family.clone())?
        .ok_or_else(|| usage("tune needs a filter family (--family)"))?;
    let family: FilterFamily = family.parse()?;
    let target = ctx.params.value("target_size", a.target_size, DEFAULT_TARGET_SIZE)?;
    let seed = ctx.seed(a.seed)?;
    let tcfg = ctx.train_config(&a.train, seed)?;
    let tok = ctx.params.tokenizer(&a.input.corpus.tok)?;
    let dev = ctx.load_sts(&a.dev, &tok)?;
    let sentences: Vec<Vec<String>> = scored
        .iter()
        .flat_map(|s| [s.pair.reference.clone(), s.pair.translation.clone()])
        .collect();
    let emb = ctx.embeddings(&a.train.emb, &sentences, seed)?;
    let points: Vec<FilterConfig> = TuningGrid::default()
        .points(family, &base)?
        .into_iter()
        .map(|p| FilterConfig { seed, ..p })
        .collect();
    let res = tune_filter(&points, &scored, &dev, &tcfg, &emb, target)?;
    write_report(&a.out.output, &res.rows, || res.to_tsv())?;
    ctx.output(&a.out.output);
    let best_out = a
        .best_out
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out.output, ".best.conf"));
    write_text(&best_out, &res.best.to_kv().to_text())?;
    ctx.output(&best_out);
    ctx.note("grid_points", &points.len())?;
    ctx.note("evaluated", &res.rows.len())?;
    ctx.note("best", &res.best.describe())
}

fn cmd_train(a: &TrainCmdArgs, ctx: &mut Ctx) -> CliResult<()> {
    let corpus = ctx.load_corpus(&a.corpus)?;
    let seed = ctx.seed(a.seed)?;
    let mut cfg = ctx.train_config(&a.train, seed)?;
    cfg.checkpoint_every_epoch = ctx
        .params
        .flag("checkpoint_every_epoch", a.checkpoint_every_epoch)?;
    let tok = ctx.params.tokenizer(&a.corpus.tok)?;
    let dev = ctx.load_sts(&a.dev, &tok)?;
    let sentences: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(|p| [p.reference.clone(), p.translation.clone()])
        .collect();
    let emb = ctx.embeddings(&a.train.emb, &sentences, seed)?;
    let echo = ctx.config_echo();
    let output = a.out.output.clone();
    let mut epoch_files = Vec::new();
    let out = train_with_hook(&corpus, emb, &cfg, &dev, &mut |st| {
        if cfg.checkpoint_every_epoch {
            let p = with_suffix(&output, &format!(".epoch{}", st.epoch));
            Checkpoint::from_model(st.model, Some(st.adam), st.epoch, echo.clone()).save(&p)?;
            epoch_files.push(p);
        }
        Ok(())
    })?;
    Checkpoint::from_model(&out.model, Some(&out.adam), out.epoch, echo).save(&output)?;
    ctx.output(&output);
    for p in &epoch_files {
        ctx.output(p);
    }
    ctx.note("selected_epoch", &out.epoch)?;
    ctx.note("epochs", &out.reports)
}

fn cmd_eval(a: &EvalArgs, ctx: &mut Ctx) -> CliResult<()> {
    ctx.input(&a.checkpoint)?;
    let model = Checkpoint::load(&a.checkpoint)?.to_model()?;
    let tok = ctx.params.tokenizer(&a.tok)?;
    let files = ctx.load_sts(&a.sts, &tok)?;
    let report = sts_evaluate(&model, &files)?;
    write_report(&a.out.output, &report, || report.to_tsv())?;
    ctx.output(&a.out.output);
    ctx.note("average", &report.average)
}

/// Index ranges of consecutive pairs sharing a reference, matching
/// [`kbest_lists`].
fn list_ranges(corpus: &PairCorpus) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = Vec::new();
    for (i, p) in corpus.pairs.iter().enumerate() {
        match out.last_mut() {
            Some(r) if corpus.pairs[r.start].reference == p.reference => r.end = i + 1,
            _ => out.push(i..i + 1),
        }
    }
    out
}

fn cmd_clf_train(a: &ClfTrainArgs, ctx: &mut Ctx) -> CliResult<()> {
    let corpus = ctx.load_corpus(&a.corpus)?;
    let seed = ctx.seed(a.seed)?;
    let encoder = ctx.params.value("encoder", a.encoder, EncoderKind::Avg)?;
    let d = ClassifierConfig::new(encoder);
    let cfg = ClassifierConfig {
        encoder,
        l2: ctx.params.value("l2", a.l2, d.l2)?,
        mode: ctx.params.value("mode", a.mode, d.mode)?,
        epochs: ctx.params.value("epochs", a.epochs, d.epochs)?,
        lr: ctx.params.value("lr", a.lr, d.lr)?,
        seed,
        batch_size: ctx.params.value("batch_size", a.batch_size, d.batch_size)?,
        hidden: ctx.params.opt("hidden", a.hidden)?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let val_frac = ctx.params.value("val_fraction", a.val_fraction, 0.1)?;
    let test_frac = ctx.params.value("test_fraction", a.test_fraction, 0.1)?;
    if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) || val_frac + test_frac >= 1.0 {
        return Err(usage("val_fraction and test_fraction must lie in [0,1) and sum below 1"));
    }

    let lists = kbest_lists(&corpus);
    let ranges = list_ranges(&corpus);
    let n = lists.len();
    let n_test = ((test_frac * n as f64).round() as usize).max(1);
    let n_val = ((val_frac * n as f64).round() as usize).max(1);
    if n_test + n_val >= n {
        return Err(CliError::Data(Error::Size {
            requested: n_test + n_val + 1,
            available: n,
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut test_ix = order[..n_test].to_vec();
    let mut val_ix = order[n_test..n_test + n_val].to_vec();
    let mut train_ix = order[n_test + n_val..].to_vec();
    for v in [&mut test_ix, &mut val_ix, &mut train_ix] {
        v.sort_unstable();
    }
    let pick = |ix: &[usize]| ix.iter().map(|&i| lists[i].clone()).collect::<Vec<_>>();
    let (train_lists, val_lists, test_lists) = (pick(&train_ix), pick(&val_ix), pick(&test_ix));

    let sentences: Vec<Vec<String>> = train_lists
        .iter()
        .flat_map(|l| std::iter::once(l.reference.clone()).chain(l.translations.iter().cloned()))
        .collect();
    let emb = ctx.embeddings(&a.emb, &sentences, seed)?;
    let val = make_training_set(&val_lists, NegativeMode::Random, None, &mut rng)?;
    let trained = train_classifier_kbest(&train_lists, &val, &cfg, emb)?;

    let test: Vec<LabeledSentence> = test_lists
        .iter()
        .flat_map(|l| {
            std::iter::once(LabeledSentence {
                tokens: l.reference.clone(),
                reference: true,
            })
            .chain(l.translations.iter().map(|t| LabeledSentence {
                tokens: t.clone(),
                reference: false,
            }))
        })
        .collect();
    let acc = classifier_report(&trained.classifier, &test)?;

    Checkpoint::from_classifier(
        &trained.classifier,
        Some(&trained.adam),
        trained.epoch,
        ctx.config_echo(),
    )
    .save(&a.out.output)?;
    ctx.output(&a.out.output);
    if let Some(p) = &a.test_out {
        let pairs: PairCorpus = test_ix
            .iter()
            .flat_map(|&i| corpus.pairs[ranges[i].clone()].iter().cloned())
            .collect();
        let format = CorpusFormat::from_path(p);
        save_pairs(p, &pairs, format)?;
        ctx.output(p);
    }
    ctx.note("lists", &[train_ix.len(), val_ix.len(), test_ix.len()])?;
    ctx.note("selected_epoch", &trained.epoch)?;
    ctx.note("history", &trained.history)?;
    ctx.note("test_accuracy", &acc)
}

fn cmd_clf_report(a: &ClfReportArgs, ctx: &mut Ctx) -> CliResult<()> {
    ctx.input(&a.checkpoint)?;
    let clf = Checkpoint::load(&a.checkpoint)?.to_classifier()?;
    let corpus = ctx.load_corpus(&a.corpus)?;
    let rows = group_report(&clf, &corpus)?;
    write_report(&a.out.output, &rows, || group_report_tsv(&rows))?;
    ctx.output(&a.out.output);
    ctx.note("all", &rows.last().map(|r| r.accuracy))
}

fn cmd_clf_corr(a: &ClfCorrArgs, ctx: &mut Ctx) -> CliResult<()> {
    ctx.input(&a.checkpoint)?;
    let clf = Checkpoint::load(&a.checkpoint)?.to_classifier()?;
    let corpus = ctx.load_corpus(&a.corpus)?;
    let idf = match &a.idf {
        Some(p) => {
            ctx.input(p)?;
            let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            IdfTable::read_tsv(std::io::BufReader::new(f))?
        }
        None => build_idf(&side_sentences(&corpus, Side::Both))?,
    };
    let rows = metric_correlations(&clf, &corpus, &idf)?;
    write_report(&a.out.output, &rows, || correlations_tsv(&rows))?;
    ctx.output(&a.out.output);
    ctx.note("pairs", &corpus.len())
}

fn cmd_synth_paraphrase(a: &SynthParaArgs, ctx: &mut Ctx) -> CliResult<()> {
    let seed = ctx.seed(a.seed)?;
    let d = ParaphraseConfig::new(20, 50, 500, 0.3, seed);
    let cfg = ParaphraseConfig {
        clusters: ctx.params.value("clusters", a.clusters, d.clusters)?,
        per_cluster: ctx.params.value("per_cluster", a.per_cluster, d.per_cluster)?,
        vocab: ctx.params.value("vocab", a.vocab, d.vocab)?,
        noise: ctx.params.value("noise", a.noise, d.noise)?,
        sentence_concepts: ctx
            .params
            .value("sentence_concepts", a.sentence_concepts, d.sentence_concepts)?,
        sts_items: ctx.params.value("sts_items", a.sts_items, d.sts_items)?,
        ..d
    };
    let data = gen_paraphrase_corpus(&cfg)?;
    let out = &a.out.output;
    save_pairs(out, &data.corpus, CorpusFormat::from_path(out))?;
    ctx.output(out);
    for (suffix, file) in [(".dev.tsv", &data.dev), (".test.tsv", &data.test)] {
        let p = with_suffix(out, suffix);
        write_text(&p, &file.to_tsv())?;
        ctx.output(&p);
    }
    ctx.note("pairs", &data.corpus.len())
}

fn cmd_synth_mt(a: &SynthMtArgs, ctx: &mut Ctx) -> CliResult<()> {
    let seed = ctx.seed(a.seed)?;
    let d = MtLikeConfig::new(5000, 0.3, 0.3, seed);
    let cfg = MtLikeConfig {
        pairs: ctx.params.value("pairs", a.pairs, d.pairs)?,
        repeat_rate: ctx.params.value("repeat_rate", a.repeat_rate, d.repeat_rate)?,
        vocab_shrink: ctx.params.value("vocab_shrink", a.vocab_shrink, d.vocab_shrink)?,
        kbest: ctx.params.value("kbest", a.kbest, d.kbest)?,
        ..d
    };
    let corpus = gen_mt_like_with(&cfg)?;
    let out = &a.out.output;
    save_pairs(out, &corpus, CorpusFormat::from_path(out))?;
    ctx.output(out);
    ctx.note("pairs", &corpus.len())
}
