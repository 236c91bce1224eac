//! Token-count distributions for comparing tokenizers across datasets.
//!
//! Counts are accumulated into an exact histogram, so quartiles come out of
//! a single pass without holding the per-example list. The median of an
//! even-sized sample is the mean of the two central values; quartiles are
//! Tukey hinges (medians of the lower and upper halves, each half including
//! the middle value when n is odd).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokenizer::{PreTokenizer, Tokenizer, TokenizerError, Vocab};

#[derive(Debug, Error)]
pub enum TokstatsError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("read failed at line {line}: {source}")]
    Read { line: usize, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Vocab(#[from] TokenizerError),
    #[error("bad spec {0:?}: expected name=path")]
    Spec(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
}

impl TokstatsError {
    pub fn is_data_error(&self) -> bool {
        matches!(self, Self::Malformed { .. } | Self::EmptyDataset | Self::InvalidVocab(_))
    }

    /// An equivalent error, for reporting one load failure in several cells.
    fn replicate(&self) -> Self {
        let io = |e: &std::io::Error| std::io::Error::new(e.kind(), e.to_string());
        match self {
            Self::EmptyDataset => Self::EmptyDataset,
            Self::Open { path, source } => Self::Open {
                path: path.clone(),
                source: io(source),
            },
            Self::Read { line, source } => Self::Read {
                line: *line,
                source: io(source),
            },
            Self::Malformed { line, message } => Self::Malformed {
                line: *line,
                message: message.clone(),
            },
            Self::Vocab(TokenizerError::Io { path, source }) => Self::Open {
                path: path.clone(),
                source: io(source),
            },
            Self::Vocab(e) => Self::InvalidVocab(e.to_string()),
            Self::Spec(s) => Self::Spec(s.clone()),
            Self::InvalidVocab(s) => Self::InvalidVocab(s.clone()),
        }
    }
}

/// Exact multiset of counts, built one value at a time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountHistogram {
    bins: BTreeMap<u32, u64>,
    n: u64,
}

impl CountHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, count: u32) {
        *self.bins.entry(count).or_default() += 1;
        self.n += 1;
    }

    pub fn merge(&mut self, other: &CountHistogram) {
        for (&k, &v) in &other.bins {
            *self.bins.entry(k).or_default() += v;
        }
        self.n += other.n;
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The `k`-th smallest value, zero based.
    pub fn order_statistic(&self, k: u64) -> Option<u32> {
        let mut seen = 0;
        for (&value, &c) in &self.bins {
            seen += c;
            if k < seen {
                return Some(value);
            }
        }
        None
    }

    /// Median of the sorted positions `lo..hi`.
    fn median_of(&self, lo: u64, hi: u64) -> f64 {
        let m = hi - lo;
        let at = |k| f64::from(self.order_statistic(k).expect("position in range"));
        if m % 2 == 1 {
            at(lo + m / 2)
        } else {
            (at(lo + m / 2 - 1) + at(lo + m / 2)) / 2.0
        }
    }

    pub fn sorted(&self) -> impl Iterator<Item = u32> + '_ {
        self.bins.iter().flat_map(|(&v, &c)| std::iter::repeat_n(v, c as usize))
    }

    pub fn summarize(&self) -> Result<TokenCountDistribution, TokstatsError> {
        TokenCountDistribution::from_histogram(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCountDistribution {
    pub histogram: CountHistogram,
    pub n: u64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outlier_count: u64,
}

impl TokenCountDistribution {
    pub fn from_histogram(histogram: CountHistogram) -> Result<Self, TokstatsError> {
        let n = histogram.len();
        if n == 0 {
            return Err(TokstatsError::EmptyDataset);
        }
        let half = n.div_ceil(2);
        let median = histogram.median_of(0, n);
        let q1 = histogram.median_of(0, half);
        let q3 = histogram.median_of(n - half, n);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let mut whisker_low = f64::INFINITY;
        let mut whisker_high = f64::NEG_INFINITY;
        let mut outlier_count = 0;
        for (&v, &c) in &histogram.bins {
            let x = f64::from(v);
            if x < lo_fence || x > hi_fence {
                outlier_count += c;
            } else {
                whisker_low = whisker_low.min(x);
                whisker_high = whisker_high.max(x);
            }
        }
        Ok(Self {
            histogram,
            n,
            median,
            q1,
            q3,
            whisker_low,
            whisker_high,
            outlier_count,
        })
    }

    pub fn from_counts<I: IntoIterator<Item = u32>>(counts: I) -> Result<Self, TokstatsError> {
        let mut h = CountHistogram::new();
        for c in counts {
            h.push(c);
        }
        Self::from_histogram(h)
    }
}

/// Tokens for a single text, `[CLS] a [SEP]`.
pub fn count_single(tokenizer: &Tokenizer, a: &str) -> u32 {
    (tokenizer.count_tokens(a) + 2) as u32
}

/// Tokens for a text pair, `[CLS] a [SEP] b [SEP]`.
pub fn count_pair(tokenizer: &Tokenizer, a: &str, b: &str) -> u32 {
    (tokenizer.count_tokens(a) + tokenizer.count_tokens(b) + 3) as u32
}

/// A named JSON Lines dataset and the one or two text fields to count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub fields: Vec<String>,
}

impl DatasetSpec {
    /// Parses `name=path[:field_a[,field_b]]`. Without fields, `text` is used.
    pub fn parse(spec: &str) -> Result<Self, TokstatsError> {
        let (name, rest) = split_named(spec)?;
        let (path, fields) = match rest.rsplit_once(':') {
            Some((p, f)) if !p.is_empty() && !f.is_empty() && !f.contains(['/', '\\']) => {
                (p, f.split(',').map(str::to_string).collect::<Vec<_>>())
            }
            _ => (rest, vec!["text".to_string()]),
        };
        if fields.len() > 2 || fields.iter().any(String::is_empty) {
            return Err(TokstatsError::Spec(spec.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            path: PathBuf::from(path),
            fields,
        })
    }

    pub fn pair_mode(&self) -> bool {
        self.fields.len() == 2
    }
}

/// Parses `name=path`.
pub fn parse_named_path(spec: &str) -> Result<(String, PathBuf), TokstatsError> {
    let (name, path) = split_named(spec)?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn split_named(spec: &str) -> Result<(&str, &str), TokstatsError> {
    match spec.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n, p)),
        _ => Err(TokstatsError::Spec(spec.to_string())),
    }
}

fn field<'v>(record: &'v Value, name: &str) -> Option<&'v str> {
    record
        .get(name)
        .or_else(|| record.get("meta").and_then(|m| m.get(name)))
        .and_then(Value::as_str)
}

/// Extracts the text fields of each record of a dataset, in file order.
pub fn read_dataset(spec: &DatasetSpec) -> Result<Vec<Vec<String>>, TokstatsError> {
    let file = File::open(&spec.path).map_err(|source| TokstatsError::Open {
        path: spec.path.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| TokstatsError::Read { line: line_no, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(&line).map_err(|e| TokstatsError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let texts = spec
            .fields
            .iter()
            .map(|f| {
                field(&record, f).map(str::to_string).ok_or_else(|| TokstatsError::Malformed {
                    line: line_no,
                    message: format!("missing string field {f:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(texts);
    }
    Ok(out)
}

/// Token-count distribution of a dataset's records.
pub fn count_dataset<I, S>(records: I, tokenizer: &Tokenizer, pair_mode: bool) -> Result<TokenCountDistribution, TokstatsError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    let mut h = CountHistogram::new();
    for r in records {
        let r = r.as_ref();
        let count = if pair_mode {
            count_pair(tokenizer, &r[0], &r[1])
        } else {
            count_single(tokenizer, &r[0])
        };
        h.push(count);
    }
    h.summarize()
}

/// One cell of the comparison matrix.
#[derive(Debug)]
pub struct Cell {
    pub tokenizer: String,
    pub dataset: String,
    pub result: Result<TokenCountDistribution, TokstatsError>,
}

#[derive(Debug)]
pub struct Comparison {
    pub tokenizers: Vec<String>,
    pub datasets: Vec<String>,
    /// Row-major: tokenizer, then dataset.
    pub cells: Vec<Cell>,
}

/// Plot-ready row for one (tokenizer, dataset) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub tokenizer: String,
    pub dataset: String,
    pub n: u64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outlier_count: u64,
}

/// Counts every dataset under every vocabulary. Load failures stay inside
/// their cells.
pub fn compare(vocabs: &[(String, PathBuf)], datasets: &[DatasetSpec], pre_tokenizer: &PreTokenizer) -> Comparison {
    let loaded: Vec<_> = datasets.iter().map(read_dataset).collect();
    let mut cells = Vec::new();
    for (name, path) in vocabs {
        let tokenizer = Vocab::load(path)
            .map(|v| Tokenizer::with_pre_tokenizer(v, pre_tokenizer.clone()))
            .map_err(TokstatsError::from);
        for (spec, data) in datasets.iter().zip(&loaded) {
            let result = match (&tokenizer, data) {
                (Err(e), _) | (_, Err(e)) => Err(e.replicate()),
                (Ok(t), Ok(records)) => count_dataset(records, t, spec.pair_mode()),
            };
            cells.push(Cell {
                tokenizer: name.clone(),
                dataset: spec.name.clone(),
                result,
            });
        }
    }
    Comparison {
        tokenizers: vocabs.iter().map(|(n, _)| n.clone()).collect(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        cells,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Comparison {
    pub fn cell(&self, tokenizer: &str, dataset: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.tokenizer == tokenizer && c.dataset == dataset)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    /// Median table: one row per tokenizer, one column per dataset. Failed
    /// cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tokenizer");
        for d in &self.datasets {
            out.push(',');
            out.push_str(&csv_field(d));
        }
        out.push('\n');
        for (row, t) in self.cells.chunks(self.datasets.len().max(1)).zip(&self.tokenizers) {
            out.push_str(&csv_field(t));
            for c in row {
                out.push(',');
                if let Ok(d) = &c.result {
                    out.push_str(&d.median.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn boxplot_rows(&self) -> Vec<BoxplotRow> {
        self.cells
            .iter()
            .filter_map(|c| {
                let d = c.result.as_ref().ok()?;
                Some(BoxplotRow {
                    tokenizer: c.tokenizer.clone(),
                    dataset: c.dataset.clone(),
                    n: d.n,
                    median: d.median,
                    q1: d.q1,
                    q3: d.q3,
                    whisker_low: d.whisker_low,
                    whisker_high: d.whisker_high,
                    outlier_count: d.outlier_count,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.boxplot_rows()).expect("rows serialize")
    }
}

pub fn write_outputs(cmp: &Comparison, csv: &Path, json: &Path) -> std::io::Result<()> {
    std::fs::write(csv, cmp.to_csv())?;
    std::fs::write(json, cmp.to_json() + "\n")
}
