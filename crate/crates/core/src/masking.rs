//! Masked-language-model examples with whole-word dynamic masking.
//!
//! Each example is one contiguous, word-aligned token window from a single
//! document, wrapped as `[CLS] ... [SEP]`. Whole words are selected until
//! the configured share of tokens is covered, and every selected token is
//! replaced by `[MASK]`, by a random token, or left alone. There is exactly
//! one segment per example: no segment-pair ids, no next-sentence label.
//!
//! Randomness is derived per `(epoch_seed, epoch_index, document id)`, so an
//! epoch is reproducible byte for byte regardless of how documents are
//! sharded across threads, and each epoch masks differently.

use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpusio::Document;
use crate::tokenizer::{word_id_serde, EncodedSequence, Tokenizer, CLS_ID, MASK_ID, NUM_SPECIALS, SEP_ID};

/// Label value at positions that do not contribute to the loss.
pub const IGNORE_LABEL: i64 = -100;

#[derive(Debug, Error)]
pub enum MaskingError {
    #[error("invalid masking config: {0}")]
    InvalidConfig(String),
    #[error("segment has no maskable tokens")]
    NothingToMask,
    #[error("document {id:?}: {source}")]
    Io { id: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    pub keep_prob: f64,
    pub max_len: usize,
    pub min_len: usize,
    pub epoch_seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            rate: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
            keep_prob: 0.1,
            max_len: 512,
            min_len: 16,
            epoch_seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<(), MaskingError> {
        let bad = |m: String| Err(MaskingError::InvalidConfig(m));
        let probs = [self.mask_prob, self.random_prob, self.keep_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("probabilities must lie in [0, 1], got {probs:?}"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("mask_prob + random_prob + keep_prob = {sum}, expected 1"));
        }
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return bad(format!("rate must lie in (0, 1), got {}", self.rate));
        }
        if self.min_len == 0 || self.max_len < 3 || self.min_len > self.max_len - 2 {
            return bad(format!(
                "need 0 < min_len <= max_len - 2, got min_len {} max_len {}",
                self.min_len, self.max_len
            ));
        }
        Ok(())
    }

    /// Longest token window that fits next to `[CLS]` and `[SEP]`.
    pub fn max_segment(&self) -> usize {
        self.max_len - 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainingExample {
    pub input_ids: Vec<u32>,
    pub labels: Vec<i64>,
    #[serde(with = "word_id_serde")]
    pub word_ids: Vec<Option<u32>>,
}

/// Counters for one epoch or one batch of documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub documents: u64,
    pub skipped_empty: u64,
    pub examples: u64,
    pub maskable_tokens: u64,
    pub selected_tokens: u64,
    pub masked: u64,
    pub randomized: u64,
    pub kept: u64,
}

impl std::ops::AddAssign for MaskStats {
    fn add_assign(&mut self, o: Self) {
        self.documents += o.documents;
        self.skipped_empty += o.skipped_empty;
        self.examples += o.examples;
        self.maskable_tokens += o.maskable_tokens;
        self.selected_tokens += o.selected_tokens;
        self.masked += o.masked;
        self.randomized += o.randomized;
        self.kept += o.kept;
    }
}

/// RNG for one document in one epoch.
pub fn document_rng(epoch_seed: u64, epoch_index: u64, doc_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"corpusforge/mask");
    h.update(epoch_seed.to_le_bytes());
    h.update(epoch_index.to_le_bytes());
    h.update(doc_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Draws a window of the document's tokens.
///
/// The target length is uniform over `[min_len, max_len - 2]`; documents no
/// longer than the target are returned whole. Otherwise the start is uniform
/// over the valid offsets and then moved left to the first token of its word.
pub fn sample_segment<R: Rng>(doc: &EncodedSequence, config: &MaskingConfig, rng: &mut R) -> Range<usize> {
    let n = doc.len();
    let target = rng.random_range(config.min_len..=config.max_segment());
    if n <= target {
        return 0..n;
    }
    let mut start = rng.random_range(0..=n - target);
    while start > 0 && doc.word_ids[start].is_some() && doc.word_ids[start] == doc.word_ids[start - 1] {
        start -= 1;
    }
    start..start + target
}

/// Chooses whole words until at least `ceil(rate * maskable)` tokens are
/// covered. Returns the selected word ids in ascending order.
pub fn select_words<R: Rng>(word_ids: &[Option<u32>], rate: f64, rng: &mut R) -> Result<Vec<u32>, MaskingError> {
    // (word, token count) in order of first appearance
    let mut words: Vec<(u32, usize)> = Vec::new();
    let mut maskable = 0usize;
    for w in word_ids.iter().flatten() {
        maskable += 1;
        match words.last_mut() {
            Some((last, n)) if last == w => *n += 1,
            _ => words.push((*w, 1)),
        }
    }
    if maskable == 0 {
        return Err(MaskingError::NothingToMask);
    }
    // The epsilon keeps products like 0.15 * 20 from rounding up past 3.
    let need = ((rate * maskable as f64 - 1e-9).ceil() as usize).max(1);
    words.shuffle(rng);
    let mut covered = 0;
    let mut chosen = Vec::new();
    for (w, n) in words {
        if covered >= need {
            break;
        }
        chosen.push(w);
        covered += n;
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Wraps a segment in `[CLS]`/`[SEP]` and corrupts the tokens of the
/// selected words. Word ids are renumbered from zero within the example.
pub fn corrupt<R: Rng>(
    segment: &EncodedSequence,
    selection: &[u32],
    config: &MaskingConfig,
    vocab_size: usize,
    rng: &mut R,
    stats: &mut MaskStats,
) -> PretrainingExample {
    let n = segment.len();
    let base = segment.word_ids.iter().flatten().min().copied().unwrap_or(0);
    let mut input_ids = Vec::with_capacity(n + 2);
    let mut labels = Vec::with_capacity(n + 2);
    let mut word_ids = Vec::with_capacity(n + 2);
    input_ids.push(CLS_ID);
    labels.push(IGNORE_LABEL);
    word_ids.push(None);
    for (&id, &word) in segment.ids.iter().zip(&segment.word_ids) {
        word_ids.push(word.map(|w| w - base));
        let selected = word.is_some_and(|w| selection.binary_search(&w).is_ok());
        if !selected {
            input_ids.push(id);
            labels.push(IGNORE_LABEL);
            continue;
        }
        labels.push(i64::from(id));
        let u: f64 = rng.random();
        let out = if u < config.mask_prob {
            stats.masked += 1;
            MASK_ID
        } else if u < config.mask_prob + config.random_prob && vocab_size > NUM_SPECIALS as usize {
            stats.randomized += 1;
            rng.random_range(NUM_SPECIALS..vocab_size as u32)
        } else {
            stats.kept += 1;
            id
        };
        input_ids.push(out);
    }
    input_ids.push(SEP_ID);
    labels.push(IGNORE_LABEL);
    word_ids.push(None);
    PretrainingExample {
        input_ids,
        labels,
        word_ids,
    }
}

/// Produces the examples of one epoch.
#[derive(Debug, Clone)]
pub struct EpochBuilder<'a> {
    tokenizer: &'a Tokenizer,
    config: MaskingConfig,
    epoch_index: u64,
}

impl<'a> EpochBuilder<'a> {
    pub fn new(tokenizer: &'a Tokenizer, config: MaskingConfig, epoch_index: u64) -> Result<Self, MaskingError> {
        config.validate()?;
        Ok(Self {
            tokenizer,
            config,
            epoch_index,
        })
    }

    pub fn config(&self) -> &MaskingConfig {
        &self.config
    }

    /// Examples for one document. A document yields one window per
    /// `max_len - 2` tokens it contains, at least one; empty documents yield
    /// nothing and are counted in `skipped_empty`.
    pub fn examples_for(&self, doc: &Document, stats: &mut MaskStats) -> Vec<PretrainingExample> {
        stats.documents += 1;
        let tokens = self.tokenizer.encode(&doc.text, false);
        if tokens.is_empty() {
            stats.skipped_empty += 1;
            return Vec::new();
        }
        let mut rng = document_rng(self.config.epoch_seed, self.epoch_index, &doc.id);
        let windows = tokens.len().div_ceil(self.config.max_segment());
        let vocab_size = self.tokenizer.vocab().len();
        let mut out = Vec::with_capacity(windows);
        for _ in 0..windows {
            let range = sample_segment(&tokens, &self.config, &mut rng);
            let segment = EncodedSequence {
                ids: tokens.ids[range.clone()].to_vec(),
                word_ids: tokens.word_ids[range].to_vec(),
            };
            let selection = match select_words(&segment.word_ids, self.config.rate, &mut rng) {
                Ok(s) => s,
                Err(_) => continue,
            };
            stats.maskable_tokens += segment.len() as u64;
            let ex = corrupt(&segment, &selection, &self.config, vocab_size, &mut rng, stats);
            stats.selected_tokens += ex.labels.iter().filter(|&&l| l != IGNORE_LABEL).count() as u64;
            stats.examples += 1;
            out.push(ex);
        }
        out
    }
}

/// Writes one epoch as JSON Lines, in corpus order.
pub fn build_epoch<I, W>(docs: I, builder: &EpochBuilder<'_>, out: &mut W) -> Result<MaskStats, MaskingError>
where
    I: IntoIterator<Item = Document>,
    W: Write,
{
    let mut stats = MaskStats::default();
    for doc in docs {
        for ex in builder.examples_for(&doc, &mut stats) {
            write_example(out, &ex).map_err(|source| MaskingError::Io {
                id: doc.id.clone(),
                source,
            })?;
        }
    }
    Ok(stats)
}

pub fn write_example<W: Write>(out: &mut W, ex: &PretrainingExample) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, ex)?;
    out.write_all(b"\n")
}

/// Sidecar describing a batch file; the trainer checks `vocab_hash` across
/// epochs before using the files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub vocab_hash: String,
    pub config: MaskingConfig,
    pub epoch_index: u64,
    pub example_count: u64,
    pub ignore_label: i64,
    pub stats: MaskStats,
}
