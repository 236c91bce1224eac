//! The `corpusforge` command line.
//!
//! Exit codes: 0 success, 1 usage or contract violation, 2 I/O failure,
//! 3 malformed input data. Progress and summaries go to stderr as JSON lines;
//! stdout only carries data (`tokenizer encode` without an output path, or
//! `normalize --dump-config`).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::corpusio::{read_corpus, CorpusError, CorpusReader, CorpusWriter, Document, Side, SplitRule};
use crate::discriminator::{
    CharNgramModel, Discriminator, DiscriminatorError, FilterThresholds, NgramCounter, Stopwords, Verdict,
    DEFAULT_ALPHA, DEFAULT_ORDER,
};
use crate::manifest::{manifest_path, PipelineManifest, Stage};
use crate::masking::{write_example, EpochBuilder, MaskStats, MaskingConfig, MaskingError, IGNORE_LABEL};
use crate::normalizer::{normalize, NormalizationConfig, NormalizationStats};
use crate::tokenizer::{
    train_wordpiece, EncodedSequence, PreTokenizer, Tokenizer, TokenizerError, TrainerConfig, Vocab, WordCounts,
    DEFAULT_MAX_WORD_CHARS, DEFAULT_MIN_FREQUENCY, DEFAULT_VOCAB_SIZE,
};
use crate::tokstats::{compare, parse_named_path, DatasetSpec, TokstatsError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTRACT: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DATA: i32 = 3;

const CHUNK: usize = 2048;
const SHARD: usize = 128;

#[derive(Debug, Parser)]
#[command(name = "corpusforge", version, about = "Perso-Arabic pretraining data pipeline")]
struct Cli {
    /// Worker threads; 0 uses one per core. Output does not depend on it.
    #[arg(long, global = true, env = "CORPUSFORGE_THREADS", default_value_t = 0)]
    threads: usize,
    /// Seed for the split hash and the masking epoch seed.
    #[arg(long, global = true, env = "CORPUSFORGE_SEED", default_value_t = 0)]
    seed: u64,
    /// Stage config file. `normalize` takes a normalization table,
    /// `discriminator filter` a thresholds file, other stages `key = value` lines.
    #[arg(long, global = true, env = "CORPUSFORGE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus file utilities
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Map, strip and collapse characters; replace digit runs
    Normalize(NormalizeArgs),
    /// Character n-gram noise filter
    Discriminator {
        #[command(subcommand)]
        cmd: DiscriminatorCmd,
    },
    /// WordPiece vocabulary training and encoding
    Tokenizer {
        #[command(subcommand)]
        cmd: TokenizerCmd,
    },
    /// Masked-language-model batch files
    Mask {
        #[command(subcommand)]
        cmd: MaskCmd,
    },
    /// Token-count statistics
    Tokstats {
        #[command(subcommand)]
        cmd: TokstatsCmd,
    },
}

#[derive(Debug, Subcommand)]
enum CorpusCmd {
    /// Deterministic train/validation split keyed on document id
    Split {
        /// Share of documents sent to validation [default: 0.01]
        #[arg(long)]
        fraction: Option<f64>,
        input: PathBuf,
        out_train: PathBuf,
        out_val: PathBuf,
    },
}

#[derive(Debug, Args)]
struct NormalizeArgs {
    /// Print the effective normalization table and exit
    #[arg(long)]
    dump_config: bool,
    #[arg(required_unless_present = "dump_config")]
    input: Option<PathBuf>,
    #[arg(required_unless_present = "dump_config")]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum DiscriminatorCmd {
    /// Train a character n-gram model on clean text
    Train {
        /// n-gram order [default: 3]
        #[arg(long)]
        order: Option<usize>,
        /// Additive smoothing [default: 0.1]
        #[arg(long)]
        alpha: Option<f64>,
        input: PathBuf,
        model: PathBuf,
    },
    /// Split a corpus into kept and rejected posts
    Filter {
        /// Model written by `discriminator train`
        #[arg(long)]
        model: PathBuf,
        /// Minimum mean log-probability per character
        #[arg(long)]
        min_lm: Option<f64>,
        /// Minimum share of words on the stopword list
        #[arg(long)]
        min_stopword: Option<f64>,
        /// Maximum share of characters outside the model alphabet
        #[arg(long)]
        max_nonalphabet: Option<f64>,
        /// Shorter documents are rejected
        #[arg(long)]
        min_chars: Option<usize>,
        /// Stopword list, one word per line (defaults to the built-in list)
        #[arg(long)]
        stopwords: Option<PathBuf>,
        input: PathBuf,
        keep: PathBuf,
        reject: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PreTokenizerArgs {
    /// Treat ZWNJ as a word boundary
    #[arg(long)]
    zwnj_splits: bool,
}

#[derive(Debug, Subcommand)]
enum TokenizerCmd {
    /// Train a WordPiece vocabulary
    Train {
        /// Target size including specials [default: 50000]
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Pairs seen fewer times are never merged [default: 2]
        #[arg(long)]
        min_freq: Option<u64>,
        /// Longer words are left out of training [default: 100]
        #[arg(long)]
        max_word_chars: Option<usize>,
        #[command(flatten)]
        pre: PreTokenizerArgs,
        input: PathBuf,
        vocab: PathBuf,
    },
    /// Encode a corpus to token ids (JSON Lines)
    Encode {
        #[arg(long)]
        vocab: PathBuf,
        /// Leave out [CLS] and [SEP]
        #[arg(long)]
        no_specials: bool,
        #[command(flatten)]
        pre: PreTokenizerArgs,
        input: PathBuf,
        /// Output file; stdout when omitted
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum MaskCmd {
    /// Build one epoch of masked examples
    Build {
        #[arg(long)]
        vocab: PathBuf,
        /// Share of tokens selected for prediction [default: 0.15]
        #[arg(long)]
        rate: Option<f64>,
        /// Selected tokens replaced by [MASK] [default: 0.8]
        #[arg(long)]
        mask_prob: Option<f64>,
        /// Selected tokens replaced by a random token [default: 0.1]
        #[arg(long)]
        random_prob: Option<f64>,
        /// Selected tokens left unchanged [default: 0.1]
        #[arg(long)]
        keep_prob: Option<f64>,
        /// Example length including [CLS] and [SEP] [default: 512]
        #[arg(long)]
        max_len: Option<usize>,
        /// Shortest sampled segment, in tokens [default: 16]
        #[arg(long)]
        min_len: Option<usize>,
        /// Epoch index; each index gives a different masking
        #[arg(long, default_value_t = 0)]
        epoch: u64,
        /// Defaults to --seed
        #[arg(long)]
        epoch_seed: Option<u64>,
        #[command(flatten)]
        pre: PreTokenizerArgs,
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum TokstatsCmd {
    /// Token-count distributions for every (vocab, dataset) pair
    Compare {
        /// name=path, repeatable
        #[arg(long = "vocab", required = true)]
        vocabs: Vec<String>,
        /// name=path[:field_a[,field_b]], repeatable
        #[arg(long = "dataset", required = true)]
        datasets: Vec<String>,
        /// Median matrix, one row per vocab
        #[arg(long)]
        out_csv: PathBuf,
        /// Boxplot summary per cell
        #[arg(long)]
        out_json: PathBuf,
        #[command(flatten)]
        pre: PreTokenizerArgs,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn contract(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONTRACT,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn data(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn corpus(path: &Path, e: CorpusError) -> Self {
        match e {
            CorpusError::Open { .. } => Self {
                code: EXIT_IO,
                message: e.to_string(),
            },
            CorpusError::InvalidFraction(_) => Self::contract(e.to_string()),
            e if e.is_data_error() => Self::data(path, e),
            e => Self::io(path, e),
        }
    }

    fn tokenizer(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Io { .. } => Self {
                code: EXIT_IO,
                message: e.to_string(),
            },
            TokenizerError::InvalidVocab(_) => Self {
                code: EXIT_DATA,
                message: e.to_string(),
            },
            e => Self::contract(e.to_string()),
        }
    }

    fn discriminator(e: DiscriminatorError) -> Self {
        match e {
            DiscriminatorError::Io { .. } => Self {
                code: EXIT_IO,
                message: e.to_string(),
            },
            DiscriminatorError::UnsupportedVersion(_)
            | DiscriminatorError::InvalidModel(_)
            | DiscriminatorError::Thresholds { .. } => Self {
                code: EXIT_DATA,
                message: e.to_string(),
            },
            e => Self::contract(e.to_string()),
        }
    }

    fn tokstats(e: &TokstatsError) -> Self {
        let code = match e {
            TokstatsError::Open { .. } | TokstatsError::Read { .. } => EXIT_IO,
            TokstatsError::Vocab(TokenizerError::Io { .. }) => EXIT_IO,
            TokstatsError::Spec(_) => EXIT_CONTRACT,
            e if e.is_data_error() => EXIT_DATA,
            _ => EXIT_CONTRACT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn log(event: Value) {
    eprintln!("{event}");
}

/// Parses `argv` (including the program name), runs the stage and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    // a closed pipe (`--help | head`) is not an error
                    let _ = write!(std::io::stdout(), "{e}");
                    EXIT_OK
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    EXIT_CONTRACT
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_CONTRACT
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            log(json!({"event": "error", "code": f.code, "message": f.message}));
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::contract(format!("thread pool: {e}")))?;
    let ctx = Ctx {
        pool,
        seed: cli.seed,
        config: cli.config,
    };
    match cli.command {
        Command::Corpus { cmd } => match cmd {
            CorpusCmd::Split {
                fraction,
                input,
                out_train,
                out_val,
            } => ctx.split(fraction, &input, &out_train, &out_val),
        },
        Command::Normalize(args) => ctx.normalize(args),
        Command::Discriminator { cmd } => match cmd {
            DiscriminatorCmd::Train {
                order,
                alpha,
                input,
                model,
            } => ctx.train_discriminator(order, alpha, &input, &model),
            DiscriminatorCmd::Filter {
                model,
                min_lm,
                min_stopword,
                max_nonalphabet,
                min_chars,
                stopwords,
                input,
                keep,
                reject,
            } => {
                let overrides = (min_lm, min_stopword, max_nonalphabet, min_chars);
                ctx.filter(&model, overrides, stopwords.as_deref(), &input, &keep, &reject)
            }
        },
        Command::Tokenizer { cmd } => match cmd {
            TokenizerCmd::Train {
                vocab_size,
                min_freq,
                max_word_chars,
                pre,
                input,
                vocab,
            } => ctx.train_tokenizer((vocab_size, min_freq, max_word_chars), pre, &input, &vocab),
            TokenizerCmd::Encode {
                vocab,
                no_specials,
                pre,
                input,
                output,
            } => ctx.encode(&vocab, !no_specials, pre, &input, output.as_deref()),
        },
        Command::Mask { cmd } => match cmd {
            MaskCmd::Build {
                vocab,
                rate,
                mask_prob,
                random_prob,
                keep_prob,
                max_len,
                min_len,
                epoch,
                epoch_seed,
                pre,
                input,
                output,
            } => {
                let o = MaskOverrides {
                    rate,
                    mask_prob,
                    random_prob,
                    keep_prob,
                    max_len,
                    min_len,
                    epoch_seed,
                };
                ctx.mask(&vocab, o, epoch, pre, &input, &output)
            }
        },
        Command::Tokstats { cmd } => match cmd {
            TokstatsCmd::Compare {
                vocabs,
                datasets,
                out_csv,
                out_json,
                pre,
            } => ctx.tokstats(&vocabs, &datasets, &out_csv, &out_json, pre),
        },
    }
}

/// A file written to a temporary sibling and renamed into place on commit.
struct Staged {
    target: PathBuf,
    file: BufWriter<NamedTempFile>,
}

impl Staged {
    fn create(target: &Path) -> Result<Self> {
        let dir = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir).map_err(|e| Failure::io(target, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            file: BufWriter::new(tmp),
        })
    }

    fn commit(self) -> Result<()> {
        let tmp = self
            .file
            .into_inner()
            .map_err(|e| Failure::io(&self.target, e.error()))?;
        tmp.persist(&self.target)
            .map_err(|e| Failure::io(&self.target, e.error))?;
        Ok(())
    }
}

impl Write for Staged {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()
    }
}

fn write_file_atomic(target: &Path, contents: &[u8]) -> Result<()> {
    let mut s = Staged::create(target)?;
    s.write_all(contents).map_err(|e| Failure::io(target, e))?;
    s.commit()
}

/// Records output digests and writes the manifest next to each output.
fn finish_manifest(mut m: PipelineManifest, outputs: &[(&Path, Option<u64>)]) -> Result<()> {
    for (path, records) in outputs {
        m.add_output(path, *records).map_err(|e| Failure::io(path, e))?;
    }
    m.finished_unix = crate::manifest::unix_now();
    let text = m.to_json();
    for (path, _) in outputs {
        write_file_atomic(&manifest_path(path), text.as_bytes())?;
    }
    Ok(())
}

/// `key = value` lines, `#` comments.
fn parse_kv(path: &Path, text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Failure::data(path, format!("line {}: expected key = value", i + 1)));
        };
        let k = k.trim();
        if !allowed.contains(&k) {
            return Err(Failure::data(
                path,
                format!("line {}: unknown key {k:?} (expected one of {})", i + 1, allowed.join(", ")),
            ));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

struct Settings {
    path: PathBuf,
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Flag value, else config file value, else default.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| Failure::data(&self.path, format!("{key}: {e}"))),
            None => Ok(default),
        }
    }
}

struct MaskOverrides {
    rate: Option<f64>,
    mask_prob: Option<f64>,
    random_prob: Option<f64>,
    keep_prob: Option<f64>,
    max_len: Option<usize>,
    min_len: Option<usize>,
    epoch_seed: Option<u64>,
}

#[derive(Serialize)]
struct EncodedRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    seq: EncodedSequence,
}

struct Ctx {
    pool: rayon::ThreadPool,
    seed: u64,
    config: Option<PathBuf>,
}

impl Ctx {
    fn config_text(&self) -> Result<Option<(PathBuf, String)>> {
        match &self.config {
            None => Ok(None),
            Some(p) => std::fs::read_to_string(p)
                .map(|t| Some((p.clone(), t)))
                .map_err(|e| Failure::io(p, e)),
        }
    }

    fn settings(&self, allowed: &[&str]) -> Result<Settings> {
        Ok(match self.config_text()? {
            None => Settings {
                path: PathBuf::new(),
                values: BTreeMap::new(),
            },
            Some((path, text)) => Settings {
                values: parse_kv(&path, &text, allowed)?,
                path,
            },
        })
    }

    fn manifest(&self, stage: Stage, config: Value, inputs: &[&Path]) -> Result<PipelineManifest> {
        let mut m = PipelineManifest::new(stage, config);
        for p in inputs {
            m.add_input(p).map_err(|e| Failure::io(p, e))?;
        }
        if let Some(c) = &self.config {
            m.add_input(c).map_err(|e| Failure::io(c, e))?;
        }
        Ok(m)
    }

    /// Reads the corpus in chunks, maps each document on the pool and hands
    /// the results to `sink` in corpus order.
    fn par_map<R, M, S>(&self, input: &Path, map: M, mut sink: S) -> Result<u64>
    where
        R: Send,
        M: Fn(Document) -> R + Sync,
        S: FnMut(R) -> Result<()>,
    {
        let mut reader = open_corpus(input)?;
        let mut n = 0;
        loop {
            let chunk = next_chunk(&mut reader, input)?;
            if chunk.is_empty() {
                return Ok(n);
            }
            n += chunk.len() as u64;
            let results: Vec<R> = self.pool.install(|| chunk.into_par_iter().map(&map).collect());
            for r in results {
                sink(r)?;
            }
        }
    }

    /// Folds shards of the corpus into accumulators on the pool and merges
    /// them in corpus order.
    fn par_fold<A, F, M>(&self, input: &Path, init: A, fold: F, merge: M) -> Result<(A, u64)>
    where
        A: Send + Clone + Sync,
        F: Fn(&mut A, &Document) + Sync,
        M: Fn(&mut A, A),
    {
        let mut reader = open_corpus(input)?;
        let mut acc = init.clone();
        let mut n = 0;
        loop {
            let chunk = next_chunk(&mut reader, input)?;
            if chunk.is_empty() {
                return Ok((acc, n));
            }
            n += chunk.len() as u64;
            let parts: Vec<A> = self.pool.install(|| {
                chunk
                    .par_chunks(SHARD)
                    .map(|docs| {
                        let mut a = init.clone();
                        for d in docs {
                            fold(&mut a, d);
                        }
                        a
                    })
                    .collect()
            });
            for p in parts {
                merge(&mut acc, p);
            }
        }
    }

    fn split(&self, fraction: Option<f64>, input: &Path, out_train: &Path, out_val: &Path) -> Result<()> {
        let s = self.settings(&["fraction"])?;
        let fraction = s.pick(fraction, "fraction", 0.01)?;
        let rule = SplitRule::new(fraction, self.seed).map_err(|e| Failure::corpus(input, e))?;
        let m = self.manifest(Stage::Split, json!({"fraction": fraction, "seed": self.seed}), &[input])?;
        let mut train = CorpusWriter::new(Staged::create(out_train)?);
        let mut val = CorpusWriter::new(Staged::create(out_val)?);
        for doc in open_corpus(input)? {
            let doc = doc.map_err(|e| Failure::corpus(input, e))?;
            let (w, path) = match rule.assign(&doc.id) {
                Side::Train => (&mut train, out_train),
                Side::Validation => (&mut val, out_val),
            };
            w.write(&doc).map_err(|e| Failure::io(path, e))?;
        }
        let (n_train, train) = train.finish().map_err(|e| Failure::io(out_train, e))?;
        let (n_val, val) = val.finish().map_err(|e| Failure::io(out_val, e))?;
        train.commit()?;
        val.commit()?;
        log(json!({"event": "done", "stage": "split", "train": n_train, "validation": n_val}));
        finish_manifest(m, &[(out_train, Some(n_train as u64)), (out_val, Some(n_val as u64))])
    }

    fn normalize(&self, args: NormalizeArgs) -> Result<()> {
        let config = match self.config_text()? {
            None => NormalizationConfig::default(),
            Some((path, text)) => NormalizationConfig::parse(&text).map_err(|e| Failure::data(&path, e))?,
        };
        config.validate().map_err(|e| Failure::contract(e.to_string()))?;
        if args.dump_config {
            let _ = io::stdout().write_all(config.dump().as_bytes());
            return Ok(());
        }
        let (input, output) = (args.input.expect("required"), args.output.expect("required"));
        let m = self.manifest(Stage::Normalize, json!({"table": config.dump()}), &[&input])?;
        let mut out = CorpusWriter::new(Staged::create(&output)?);
        let mut stats = NormalizationStats::default();
        self.par_map(
            &input,
            |doc| normalize(doc, &config),
            |(doc, s)| {
                stats += s;
                out.write(&doc).map_err(|e| Failure::io(&output, e))
            },
        )?;
        let (n, staged) = out.finish().map_err(|e| Failure::io(&output, e))?;
        staged.commit()?;
        log(json!({"event": "done", "stage": "normalize", "records": n, "stats": stats}));
        let mut m = m;
        m.detail("stats", stats);
        finish_manifest(m, &[(&output, Some(n as u64))])
    }

    fn train_discriminator(&self, order: Option<usize>, alpha: Option<f64>, input: &Path, model: &Path) -> Result<()> {
        let s = self.settings(&["order", "alpha"])?;
        let order = s.pick(order, "order", DEFAULT_ORDER)?;
        let alpha = s.pick(alpha, "alpha", DEFAULT_ALPHA)?;
        let init = NgramCounter::new(order, alpha).map_err(Failure::discriminator)?;
        let m = self.manifest(Stage::TrainDiscriminator, json!({"order": order, "alpha": alpha}), &[input])?;
        let (counter, n) = self.par_fold(input, init, |c, d| c.add(&d.text), |a, b| a.merge(b))?;
        let trained = counter.finish().map_err(Failure::discriminator)?;
        write_file_atomic(model, trained.to_json().as_bytes())?;
        log(json!({"event": "done", "stage": "train-discriminator", "documents": n, "alphabet": trained.alphabet().len()}));
        finish_manifest(m, &[(model, None)])
    }

    fn filter(
        &self,
        model_path: &Path,
        overrides: (Option<f64>, Option<f64>, Option<f64>, Option<usize>),
        stopwords: Option<&Path>,
        input: &Path,
        keep: &Path,
        reject: &Path,
    ) -> Result<()> {
        let mut t = match self.config_text()? {
            None => FilterThresholds::default(),
            Some((path, text)) => FilterThresholds::parse(&text).map_err(|e| Failure::data(&path, e))?,
        };
        let (min_lm, min_stopword, max_nonalphabet, min_chars) = overrides;
        t.min_lm = min_lm.unwrap_or(t.min_lm);
        t.min_stopword = min_stopword.unwrap_or(t.min_stopword);
        t.max_nonalphabet = max_nonalphabet.unwrap_or(t.max_nonalphabet);
        t.min_chars = min_chars.unwrap_or(t.min_chars);
        let model = CharNgramModel::load(model_path).map_err(Failure::discriminator)?;
        let words = match stopwords {
            None => Stopwords::default(),
            Some(p) => Stopwords::parse(&std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?),
        };
        let mut inputs = vec![input, model_path];
        inputs.extend(stopwords);
        let m = self.manifest(
            Stage::Filter,
            json!({"thresholds": t.dump(), "stopwords": if stopwords.is_some() { "file" } else { "builtin" }}),
            &inputs,
        )?;
        let disc = Discriminator::new(model, words, t);
        let mut kept = CorpusWriter::new(Staged::create(keep)?);
        let mut rejected = CorpusWriter::new(Staged::create(reject)?);
        let mut reasons: BTreeMap<&'static str, u64> = BTreeMap::new();
        self.par_map(
            input,
            |doc| {
                let v = disc.judge(&doc.text);
                (doc, v)
            },
            |(doc, verdict)| match verdict {
                Verdict::Keep(_) => kept.write(&doc).map_err(|e| Failure::io(keep, e)),
                Verdict::Reject(reason, _) => {
                    *reasons.entry(reason.as_str()).or_default() += 1;
                    let doc = doc.with_meta("reject_reason", reason.as_str());
                    rejected.write(&doc).map_err(|e| Failure::io(reject, e))
                }
            },
        )?;
        let (n_keep, k) = kept.finish().map_err(|e| Failure::io(keep, e))?;
        let (n_rej, r) = rejected.finish().map_err(|e| Failure::io(reject, e))?;
        k.commit()?;
        r.commit()?;
        log(json!({"event": "done", "stage": "filter", "kept": n_keep, "rejected": n_rej, "reasons": reasons}));
        let mut m = m;
        m.detail("reasons", &reasons);
        finish_manifest(m, &[(keep, Some(n_keep as u64)), (reject, Some(n_rej as u64))])
    }

    fn train_tokenizer(
        &self,
        flags: (Option<usize>, Option<u64>, Option<usize>),
        pre: PreTokenizerArgs,
        input: &Path,
        out: &Path,
    ) -> Result<()> {
        let s = self.settings(&["vocab_size", "min_frequency", "max_word_chars", "zwnj_splits"])?;
        let zwnj = pre.zwnj_splits || s.pick(None, "zwnj_splits", false)?;
        let config = TrainerConfig {
            vocab_size: s.pick(flags.0, "vocab_size", DEFAULT_VOCAB_SIZE)?,
            min_frequency: s.pick(flags.1, "min_frequency", DEFAULT_MIN_FREQUENCY)?,
            max_word_chars: s.pick(flags.2, "max_word_chars", DEFAULT_MAX_WORD_CHARS)?,
            pre_tokenizer: PreTokenizer {
                zwnj_splits: zwnj,
                ..PreTokenizer::default()
            },
        };
        let m = self.manifest(Stage::TrainTokenizer, json!(config), &[input])?;
        let (counts, n) = self.par_fold(
            input,
            WordCounts::default(),
            |c, d| c.add_text(&d.text, &config),
            |a, b| a.merge(b),
        )?;
        let vocab = train_wordpiece(&counts, &config).map_err(Failure::tokenizer)?;
        write_file_atomic(out, vocab.to_text().as_bytes())?;
        log(json!({"event": "done", "stage": "train-tokenizer", "documents": n, "distinct_words": counts.len(), "vocab": vocab.len()}));
        let mut m = m;
        m.detail("vocab_hash", vocab.digest());
        finish_manifest(m, &[(out, Some(vocab.len() as u64))])
    }

    fn load_tokenizer(&self, vocab: &Path, pre: &PreTokenizerArgs) -> Result<Tokenizer> {
        let v = Vocab::load(vocab).map_err(Failure::tokenizer)?;
        Ok(Tokenizer::with_pre_tokenizer(
            v,
            PreTokenizer {
                zwnj_splits: pre.zwnj_splits,
                ..PreTokenizer::default()
            },
        ))
    }

    fn encode(&self, vocab: &Path, specials: bool, pre: PreTokenizerArgs, input: &Path, output: Option<&Path>) -> Result<()> {
        let tok = self.load_tokenizer(vocab, &pre)?;
        let config = json!({"add_specials": specials, "pre_tokenizer": tok.pre_tokenizer(), "vocab_hash": tok.vocab().digest()});
        let encode_line = |doc: Document| {
            let seq = tok.encode(&doc.text, specials);
            let mut line = serde_json::to_vec(&EncodedRecord { id: &doc.id, seq }).expect("record serializes");
            line.push(b'\n');
            line
        };
        match output {
            None => {
                let stdout = io::stdout();
                let mut w = BufWriter::new(stdout.lock());
                let path = Path::new("<stdout>");
                self.par_map(input, encode_line, |line| w.write_all(&line).map_err(|e| Failure::io(path, e)))?;
                w.flush().map_err(|e| Failure::io(path, e))
            }
            Some(out) => {
                let m = self.manifest(Stage::Encode, config, &[input, vocab])?;
                let mut w = Staged::create(out)?;
                let n = self.par_map(input, encode_line, |line| w.write_all(&line).map_err(|e| Failure::io(out, e)))?;
                w.commit()?;
                log(json!({"event": "done", "stage": "encode", "records": n}));
                finish_manifest(m, &[(out, Some(n))])
            }
        }
    }

    fn mask(&self, vocab: &Path, o: MaskOverrides, epoch: u64, pre: PreTokenizerArgs, input: &Path, output: &Path) -> Result<()> {
        let s = self.settings(&[
            "rate",
            "mask_prob",
            "random_prob",
            "keep_prob",
            "max_len",
            "min_len",
            "epoch_seed",
            "zwnj_splits",
        ])?;
        let d = MaskingConfig::default();
        let config = MaskingConfig {
            rate: s.pick(o.rate, "rate", d.rate)?,
            mask_prob: s.pick(o.mask_prob, "mask_prob", d.mask_prob)?,
            random_prob: s.pick(o.random_prob, "random_prob", d.random_prob)?,
            keep_prob: s.pick(o.keep_prob, "keep_prob", d.keep_prob)?,
            max_len: s.pick(o.max_len, "max_len", d.max_len)?,
            min_len: s.pick(o.min_len, "min_len", d.min_len)?,
            epoch_seed: s.pick(o.epoch_seed, "epoch_seed", self.seed)?,
        };
        let pre = PreTokenizerArgs {
            zwnj_splits: pre.zwnj_splits || s.pick(None, "zwnj_splits", false)?,
        };
        let tok = self.load_tokenizer(vocab, &pre)?;
        let builder = EpochBuilder::new(&tok, config.clone(), epoch).map_err(|e| match e {
            MaskingError::InvalidConfig(_) => Failure::contract(e.to_string()),
            e => Failure::io(output, e),
        })?;
        let mut m = self.manifest(Stage::Mask, json!(config), &[input, vocab])?;
        let mut w = Staged::create(output)?;
        let mut stats = MaskStats::default();
        self.par_map(
            input,
            |doc| {
                let mut local = MaskStats::default();
                let examples = builder.examples_for(&doc, &mut local);
                (examples, local)
            },
            |(examples, local)| {
                stats += local;
                for ex in &examples {
                    write_example(&mut w, ex).map_err(|e| Failure::io(output, e))?;
                }
                Ok(())
            },
        )?;
        w.commit()?;
        log(json!({"event": "done", "stage": "mask", "epoch": epoch, "stats": stats}));
        m.detail("vocab_hash", tok.vocab().digest());
        m.detail("epoch_index", epoch);
        m.detail("example_count", stats.examples);
        m.detail("ignore_label", IGNORE_LABEL);
        m.detail("pre_tokenizer", tok.pre_tokenizer());
        m.detail("stats", stats);
        finish_manifest(m, &[(output, Some(stats.examples))])
    }

    fn tokstats(&self, vocabs: &[String], datasets: &[String], out_csv: &Path, out_json: &Path, pre: PreTokenizerArgs) -> Result<()> {
        let vocabs = vocabs
            .iter()
            .map(|v| parse_named_path(v).map_err(|e| Failure::contract(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let datasets = datasets
            .iter()
            .map(|d| DatasetSpec::parse(d).map_err(|e| Failure::contract(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let pre_tokenizer = PreTokenizer {
            zwnj_splits: pre.zwnj_splits,
            ..PreTokenizer::default()
        };
        let cmp = self.pool.install(|| compare(&vocabs, &datasets, &pre_tokenizer));
        let existing: Vec<&Path> = vocabs
            .iter()
            .map(|(_, p)| p.as_path())
            .chain(datasets.iter().map(|d| d.path.as_path()))
            .filter(|p| p.is_file())
            .collect();
        let config = json!({
            "vocabs": vocabs.iter().map(|(n, _)| n).collect::<Vec<_>>(),
            "datasets": datasets.iter().map(|d| json!({"name": d.name, "fields": d.fields})).collect::<Vec<_>>(),
            "pre_tokenizer": pre_tokenizer,
        });
        let m = self.manifest(Stage::Tokstats, config, &existing)?;
        write_file_atomic(out_csv, cmp.to_csv().as_bytes())?;
        write_file_atomic(out_json, (cmp.to_json() + "\n").as_bytes())?;
        let mut worst: Option<Failure> = None;
        for cell in cmp.errors() {
            let e = cell.result.as_ref().expect_err("error cell");
            let f = Failure::tokstats(e);
            log(json!({"event": "cell_error", "tokenizer": cell.tokenizer, "dataset": cell.dataset, "code": f.code, "message": f.message}));
            if worst.as_ref().is_none_or(|w| f.code > w.code) {
                worst = Some(f);
            }
        }
        let cells = cmp.cells.len();
        log(json!({"event": "done", "stage": "tokstats", "cells": cells, "failed": cmp.errors().count()}));
        finish_manifest(m, &[(out_csv, Some(cmp.tokenizers.len() as u64)), (out_json, Some(cmp.boxplot_rows().len() as u64))])?;
        match worst {
            None => Ok(()),
            Some(f) => Err(Failure {
                code: f.code,
                message: format!("{} of {cells} cells failed; first: {}", cmp.errors().count(), f.message),
            }),
        }
    }
}

fn open_corpus(input: &Path) -> Result<CorpusReader<BufReader<File>>> {
    read_corpus(input).map_err(|e| Failure::corpus(input, e))
}

fn next_chunk(reader: &mut CorpusReader<BufReader<File>>, input: &Path) -> Result<Vec<Document>> {
    let mut chunk = Vec::with_capacity(CHUNK);
    for doc in reader.by_ref().take(CHUNK) {
        chunk.push(doc.map_err(|e| Failure::corpus(input, e))?);
    }
    Ok(chunk)
}
