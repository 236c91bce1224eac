//! Document-level noise filter for Perso-Arabic-script posts.
//!
//! Three statistics are computed per document: the mean per-character
//! log-probability under a character n-gram model trained on Persian text,
//! the share of words that are Persian function words, and the share of
//! visible characters that are not Arabic-script letters. A post is kept
//! only if it passes every threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpusio::Document;
use crate::normalizer::ZWNJ;

/// Padding symbol before the first and after the last character.
pub const BOUNDARY: char = '\u{0002}';
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.1;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_fa.txt");
const DEFAULT_THRESHOLDS: &str = include_str!("../data/filter_thresholds.conf");

#[derive(Debug, Error)]
pub enum DiscriminatorError {
    #[error("cannot train a character model on an empty corpus")]
    EmptyCorpus,
    #[error("order must be at least 1 and alpha positive and finite (order {order}, alpha {alpha})")]
    InvalidParameters { order: usize, alpha: f64 },
    #[error("cannot score empty text")]
    EmptyText,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("thresholds line {line}: {message}")]
    Thresholds { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Character n-gram model with additive smoothing.
///
/// `P(c | ctx) = (count(ctx, c) + alpha) / (count(ctx) + alpha * |S|)` where
/// `S` is the observed alphabet plus the boundary symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharNgramModel {
    format_version: u32,
    order: usize,
    alpha: f64,
    alphabet: BTreeSet<char>,
    counts: BTreeMap<String, BTreeMap<char, u64>>,
    #[serde(skip)]
    totals: HashMap<String, u64>,
}

impl CharNgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    /// Size of the predicted symbol set (alphabet plus boundary).
    pub fn support_size(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn contexts(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn prob(&self, context: &str, next: char) -> f64 {
        let total = self.totals.get(context).copied().unwrap_or(0);
        let count = self
            .counts
            .get(context)
            .and_then(|m| m.get(&next))
            .copied()
            .unwrap_or(0);
        (count as f64 + self.alpha) / (total as f64 + self.alpha * self.support_size() as f64)
    }

    pub fn log_prob(&self, context: &str, next: char) -> f64 {
        self.prob(context, next).ln()
    }

    fn rebuild_totals(&mut self) {
        self.totals = self
            .counts
            .iter()
            .map(|(ctx, next)| (ctx.clone(), next.values().sum()))
            .collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, DiscriminatorError> {
        let mut model: Self =
            serde_json::from_str(json).map_err(|e| DiscriminatorError::InvalidModel(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(DiscriminatorError::UnsupportedVersion(model.format_version));
        }
        if model.order == 0 || !(model.alpha > 0.0 && model.alpha.is_finite()) {
            return Err(DiscriminatorError::InvalidParameters {
                order: model.order,
                alpha: model.alpha,
            });
        }
        if let Some(bad) = model.counts.keys().find(|k| k.chars().count() != model.order - 1) {
            return Err(DiscriminatorError::InvalidModel(format!(
                "context {bad:?} does not have length {}",
                model.order - 1
            )));
        }
        model.rebuild_totals();
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiscriminatorError> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|source| DiscriminatorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&json)
    }
}

/// Incremental n-gram counter. Shards may be counted separately and merged.
#[derive(Debug, Clone)]
pub struct NgramCounter {
    order: usize,
    alpha: f64,
    alphabet: BTreeSet<char>,
    counts: BTreeMap<String, BTreeMap<char, u64>>,
    docs: usize,
}

impl NgramCounter {
    pub fn new(order: usize, alpha: f64) -> Result<Self, DiscriminatorError> {
        if order == 0 || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DiscriminatorError::InvalidParameters { order, alpha });
        }
        Ok(Self {
            order,
            alpha,
            alphabet: BTreeSet::new(),
            counts: BTreeMap::new(),
            docs: 0,
        })
    }

    pub fn add(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        self.docs += 1;
        let ctx_len = self.order - 1;
        let mut window: Vec<char> = vec![BOUNDARY; ctx_len];
        let mut ctx = String::new();
        for c in text.chars().chain(std::iter::once(BOUNDARY)) {
            if c != BOUNDARY {
                self.alphabet.insert(c);
            }
            ctx.clear();
            ctx.extend(&window);
            *self
                .counts
                .entry(ctx.clone())
                .or_default()
                .entry(c)
                .or_default() += 1;
            if ctx_len > 0 {
                window.remove(0);
                window.push(c);
            }
        }
    }

    pub fn merge(&mut self, other: NgramCounter) {
        self.docs += other.docs;
        self.alphabet.extend(other.alphabet);
        for (ctx, next) in other.counts {
            let slot = self.counts.entry(ctx).or_default();
            for (c, n) in next {
                *slot.entry(c).or_default() += n;
            }
        }
    }

    pub fn finish(self) -> Result<CharNgramModel, DiscriminatorError> {
        if self.docs == 0 {
            return Err(DiscriminatorError::EmptyCorpus);
        }
        let mut model = CharNgramModel {
            format_version: MODEL_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            alphabet: self.alphabet,
            counts: self.counts,
            totals: HashMap::new(),
        };
        model.rebuild_totals();
        Ok(model)
    }
}

pub fn train_char_model<'a, I>(docs: I, order: usize, alpha: f64) -> Result<CharNgramModel, DiscriminatorError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut counter = NgramCounter::new(order, alpha)?;
    for doc in docs {
        counter.add(&doc.text);
    }
    counter.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    /// One word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_script_letter(c: char) -> bool {
    ('\u{0600}'..='\u{06FF}').contains(&c) && c.is_alphabetic()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScore {
    pub lm_logprob_per_char: f64,
    pub stopword_ratio: f64,
    pub nonalphabet_ratio: f64,
}

pub fn score(text: &str, model: &CharNgramModel, stopwords: &Stopwords) -> Result<NoiseScore, DiscriminatorError> {
    if text.is_empty() {
        return Err(DiscriminatorError::EmptyText);
    }
    let ctx_len = model.order - 1;
    let mut window: Vec<char> = vec![BOUNDARY; ctx_len];
    let mut ctx = String::new();
    let mut total = 0.0;
    let mut n = 0usize;
    for c in text.chars() {
        ctx.clear();
        ctx.extend(&window);
        total += model.log_prob(&ctx, c);
        n += 1;
        if ctx_len > 0 {
            window.remove(0);
            window.push(c);
        }
    }

    let mut words = 0usize;
    let mut stops = 0usize;
    for raw in text.split_whitespace() {
        let word = raw.trim_matches(|c: char| !(c.is_alphanumeric() || c == ZWNJ));
        if word.is_empty() {
            continue;
        }
        words += 1;
        if stopwords.contains(word) {
            stops += 1;
        }
    }

    let mut visible = 0usize;
    let mut foreign = 0usize;
    for c in text.chars().filter(|&c| !c.is_whitespace() && c != ZWNJ) {
        visible += 1;
        if !is_script_letter(c) {
            foreign += 1;
        }
    }

    Ok(NoiseScore {
        lm_logprob_per_char: total / n as f64,
        stopword_ratio: if words == 0 { 0.0 } else { stops as f64 / words as f64 },
        nonalphabet_ratio: if visible == 0 { 1.0 } else { foreign as f64 / visible as f64 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_lm: f64,
    pub min_stopword: f64,
    pub max_nonalphabet: f64,
    pub min_chars: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self::parse(DEFAULT_THRESHOLDS).expect("shipped thresholds parse")
    }
}

impl FilterThresholds {
    /// Thresholds that keep every non-empty document.
    pub fn permissive() -> Self {
        Self {
            min_lm: f64::NEG_INFINITY,
            min_stopword: 0.0,
            max_nonalphabet: 1.0,
            min_chars: 0,
        }
    }

    /// `key = value` lines; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, DiscriminatorError> {
        let mut t = Self::permissive();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| DiscriminatorError::Thresholds {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let value = value.trim();
            let float = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| !v.is_nan())
                    .ok_or_else(|| err(format!("bad number {value:?}")))
            };
            match key.trim() {
                "min_lm" => t.min_lm = float()?,
                "min_stopword" => t.min_stopword = float()?,
                "max_nonalphabet" => t.max_nonalphabet = float()?,
                "min_chars" => {
                    t.min_chars = value
                        .parse()
                        .map_err(|_| err(format!("bad integer {value:?}")))?
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        Ok(t)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "min_lm = {}", self.min_lm);
        let _ = writeln!(out, "min_stopword = {}", self.min_stopword);
        let _ = writeln!(out, "max_nonalphabet = {}", self.max_nonalphabet);
        let _ = writeln!(out, "min_chars = {}", self.min_chars);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    TooShort,
    LowLm,
    FewStopwords,
    NonAlphabetic,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Empty => "empty",
            RejectReason::TooShort => "too_short",
            RejectReason::LowLm => "low_lm",
            RejectReason::FewStopwords => "few_stopwords",
            RejectReason::NonAlphabetic => "non_alphabetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Keep(NoiseScore),
    Reject(RejectReason, Option<NoiseScore>),
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep(_))
    }
}

/// A trained model, a stopword list and thresholds, ready to judge posts.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub model: CharNgramModel,
    pub stopwords: Stopwords,
    pub thresholds: FilterThresholds,
}

impl Discriminator {
    pub fn new(model: CharNgramModel, stopwords: Stopwords, thresholds: FilterThresholds) -> Self {
        Self {
            model,
            stopwords,
            thresholds,
        }
    }

    /// Applies the rules in order and reports the first one that fails.
    pub fn judge(&self, text: &str) -> Verdict {
        let t = &self.thresholds;
        if text.trim().is_empty() {
            return Verdict::Reject(RejectReason::Empty, None);
        }
        if text.chars().count() < t.min_chars {
            return Verdict::Reject(RejectReason::TooShort, None);
        }
        let s = score(text, &self.model, &self.stopwords).expect("text is non-empty");
        if s.lm_logprob_per_char < t.min_lm {
            Verdict::Reject(RejectReason::LowLm, Some(s))
        } else if s.stopword_ratio < t.min_stopword {
            Verdict::Reject(RejectReason::FewStopwords, Some(s))
        } else if s.nonalphabet_ratio > t.max_nonalphabet {
            Verdict::Reject(RejectReason::NonAlphabetic, Some(s))
        } else {
            Verdict::Keep(s)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub rejected: Vec<(Document, RejectReason)>,
}

pub fn filter<I>(docs: I, discriminator: &Discriminator) -> FilterOutcome
where
    I: IntoIterator<Item = Document>,
{
    let mut out = FilterOutcome::default();
    for doc in docs {
        match discriminator.judge(&doc.text) {
            Verdict::Keep(_) => out.kept.push(doc),
            Verdict::Reject(reason, _) => out.rejected.push((doc, reason)),
        }
    }
    out
}

/// Picks `min_lm` by grid search over the midpoints between observed scores,
/// maximizing routing accuracy with the other thresholds held fixed. Ties go
/// to the lowest threshold.
pub fn calibrate_min_lm(
    positives: &[&str],
    negatives: &[&str],
    base: &Discriminator,
) -> (f64, f64) {
    let lm = |t: &str| {
        score(t, &base.model, &base.stopwords)
            .map(|s| s.lm_logprob_per_char)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut values: Vec<f64> = positives.iter().chain(negatives).map(|t| lm(t)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    if let Some(&last) = values.last() {
        candidates.push(last + 1.0);
    }

    let total = (positives.len() + negatives.len()) as f64;
    let mut best = (f64::NEG_INFINITY, -1.0);
    for candidate in candidates {
        let d = Discriminator {
            thresholds: FilterThresholds {
                min_lm: candidate,
                ..base.thresholds
            },
            ..base.clone()
        };
        let correct = positives.iter().filter(|t| d.judge(t).is_keep()).count()
            + negatives.iter().filter(|t| !d.judge(t).is_keep()).count();
        let acc = correct as f64 / total;
        if acc > best.1 {
            best = (candidate, acc);
        }
    }
    best
}
