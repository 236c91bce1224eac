//! WordPiece vocabulary training and greedy longest-match encoding.
//!
//! Pre-tokenization splits on Unicode whitespace and isolates punctuation,
//! but keeps ZWNJ (the Persian half-space) inside its word so that pieces
//! such as `می‌` can be learned. Every encoded token remembers the index of
//! the pre-token it came from, which is what whole-word masking keys on.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::normalizer::{DEFAULT_NUMBER_TOKEN, ZWNJ};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIALS: u32 = SPECIAL_TOKENS.len() as u32;
pub const CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_VOCAB_SIZE: usize = 50_000;
pub const DEFAULT_MIN_FREQUENCY: u64 = 2;
pub const DEFAULT_MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("training corpus contains no countable words")]
    EmptyCorpus,
    #[error("vocab_size {requested} is smaller than the {required} base tokens (specials, protected tokens and both forms of every alphabet character)")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("token id {id} at index {index} is out of range for a vocabulary of {len}")]
    IdOutOfRange { index: usize, id: u32, len: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Ordered subword inventory; the line index of a token is its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    max_token_chars: usize,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::InvalidVocab(format!(
                    "expected {special} at id {i}"
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        let mut max_token_chars = 0;
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(TokenizerError::InvalidVocab(format!(
                    "token {i} is empty or contains whitespace"
                )));
            }
            if ids.insert(token.clone(), i as u32).is_some() {
                return Err(TokenizerError::InvalidVocab(format!(
                    "duplicate token {token:?} at id {i}"
                )));
            }
            let chars = token
                .strip_prefix(CONTINUATION_PREFIX)
                .unwrap_or(token)
                .chars()
                .count();
            max_token_chars = max_token_chars.max(chars);
        }
        Ok(Self {
            tokens,
            ids,
            max_token_chars,
        })
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Hex SHA-256 of the vocab file contents.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    pub fn max_token_chars(&self) -> usize {
        self.max_token_chars
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{060C}' | '\u{060D}' | '\u{061B}' | '\u{061E}' | '\u{061F}'
            | '\u{066A}'..='\u{066D}'
            | '\u{06D4}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{FD3E}' | '\u{FD3F}'
        )
}

/// A word-level piece of the input with its byte span in the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreToken<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreTokenizer {
    /// Treat ZWNJ as a word separator instead of a word-internal character.
    pub zwnj_splits: bool,
    /// Strings emitted as one pre-token wherever they occur.
    pub protected: Vec<String>,
}

impl Default for PreTokenizer {
    fn default() -> Self {
        Self {
            zwnj_splits: false,
            protected: vec![DEFAULT_NUMBER_TOKEN.to_string()],
        }
    }
}

impl PreTokenizer {
    pub fn pre_tokenize<'a>(&self, text: &'a str) -> Vec<PreToken<'a>> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        let flush = |out: &mut Vec<PreToken<'a>>, start: &mut Option<usize>, end: usize| {
            if let Some(s) = start.take() {
                out.push(PreToken {
                    text: &text[s..end],
                    start: s,
                    end,
                });
            }
        };
        let mut iter = text.char_indices();
        while let Some((pos, c)) = iter.next() {
            if let Some(p) = self
                .protected
                .iter()
                .find(|p| !p.is_empty() && text[pos..].starts_with(p.as_str()))
            {
                flush(&mut out, &mut word_start, pos);
                let end = pos + p.len();
                out.push(PreToken {
                    text: &text[pos..end],
                    start: pos,
                    end,
                });
                // skip the rest of the protected string
                for _ in 1..p.chars().count() {
                    iter.next();
                }
                continue;
            }
            if c.is_whitespace() || (self.zwnj_splits && c == ZWNJ) {
                flush(&mut out, &mut word_start, pos);
            } else if is_punctuation(c) {
                flush(&mut out, &mut word_start, pos);
                let end = pos + c.len_utf8();
                out.push(PreToken {
                    text: &text[pos..end],
                    start: pos,
                    end,
                });
            } else if word_start.is_none() {
                word_start = Some(pos);
            }
        }
        flush(&mut out, &mut word_start, text.len());
        out
    }
}

/// Token ids plus, for every token, the index of its source pre-token.
/// Special tokens have no word (`None`, written as -1).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    #[serde(with = "word_id_serde")]
    pub word_ids: Vec<Option<u32>>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub(crate) mod word_id_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ids: &[Option<u32>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<i64> = ids.iter().map(|w| w.map_or(-1, i64::from)).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<u32>>, D::Error> {
        let raw = Vec::<i64>::deserialize(d)?;
        raw.into_iter()
            .map(|w| match w {
                -1 => Ok(None),
                w => u32::try_from(w).map(Some).map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

/// A vocabulary together with the pre-tokenizer it was trained with.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    pre: PreTokenizer,
    max_word_chars: usize,
}

impl Tokenizer {
    pub fn new(vocab: Vocab) -> Self {
        Self::with_pre_tokenizer(vocab, PreTokenizer::default())
    }

    pub fn with_pre_tokenizer(vocab: Vocab, pre: PreTokenizer) -> Self {
        Self {
            vocab,
            pre,
            max_word_chars: DEFAULT_MAX_WORD_CHARS,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn pre_tokenizer(&self) -> &PreTokenizer {
        &self.pre
    }

    /// Greedy longest-match-first segmentation of one word. Returns `None`
    /// when some position has no matching piece.
    pub fn segment_word(&self, word: &str, out: &mut Vec<u32>) -> bool {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = bounds.len() - 1;
        if n == 0 || n > self.max_word_chars {
            return false;
        }
        let mark = out.len();
        let mut candidate = String::with_capacity(word.len() + CONTINUATION_PREFIX.len());
        let mut start = 0;
        while start < n {
            let mut end = n.min(start + self.vocab.max_token_chars());
            let mut found = None;
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_PREFIX);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.vocab.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    return false;
                }
            }
        }
        true
    }

    pub fn encode(&self, text: &str, add_specials: bool) -> EncodedSequence {
        let mut seq = EncodedSequence::default();
        if add_specials {
            seq.ids.push(CLS_ID);
            seq.word_ids.push(None);
        }
        self.encode_into(text, 0, &mut seq);
        if add_specials {
            seq.ids.push(SEP_ID);
            seq.word_ids.push(None);
        }
        seq
    }

    /// Appends the tokens of `text` to `seq`, numbering words from
    /// `first_word`. Returns the number of words.
    pub fn encode_into(&self, text: &str, first_word: u32, seq: &mut EncodedSequence) -> u32 {
        let pre = self.pre.pre_tokenize(text);
        for (w, token) in pre.iter().enumerate() {
            let before = seq.ids.len();
            if !self.segment_word(token.text, &mut seq.ids) {
                seq.ids.push(UNK_ID);
            }
            let word = first_word + w as u32;
            seq.word_ids
                .extend(std::iter::repeat_n(Some(word), seq.ids.len() - before));
        }
        pre.len() as u32
    }

    /// Number of tokens `encode(text, add_specials)` would produce.
    pub fn count_tokens(&self, text: &str) -> usize {
        let mut ids = Vec::new();
        let mut total = 0;
        for token in self.pre.pre_tokenize(text) {
            ids.clear();
            total += if self.segment_word(token.text, &mut ids) {
                ids.len()
            } else {
                1
            };
        }
        total
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        decode(ids, &self.vocab)
    }
}

/// Inverse of encoding up to whitespace: specials are dropped, continuation
/// pieces are glued to the previous piece and words are joined by one space.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for (index, &id) in ids.iter().enumerate() {
        let token = vocab.token(id).ok_or(TokenizerError::IdOutOfRange {
            index,
            id,
            len: vocab.len(),
        })?;
        if Vocab::is_special(id) {
            continue;
        }
        match token.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) => out.push_str(rest),
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub vocab_size: usize,
    pub min_frequency: u64,
    pub max_word_chars: usize,
    pub pre_tokenizer: PreTokenizer,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            min_frequency: DEFAULT_MIN_FREQUENCY,
            max_word_chars: DEFAULT_MAX_WORD_CHARS,
            pre_tokenizer: PreTokenizer::default(),
        }
    }
}

/// Word frequencies gathered from pre-tokenized text. Counts from separate
/// shards can be merged in any order with the same result.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts {
    counts: HashMap<String, u64>,
}

impl WordCounts {
    pub fn add_text(&mut self, text: &str, config: &TrainerConfig) {
        for token in config.pre_tokenizer.pre_tokenize(text) {
            if config.pre_tokenizer.protected.iter().any(|p| p == token.text) {
                continue;
            }
            if token.text.chars().count() > config.max_word_chars {
                continue;
            }
            *self.counts.entry(token.text.to_string()).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: WordCounts) {
        for (word, n) in other.counts {
            *self.counts.entry(word).or_default() += n;
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

struct TrainWord {
    symbols: Vec<u32>,
    count: u64,
}

struct MergeState {
    /// Symbol strings, including the continuation prefix where present.
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    symbol_counts: Vec<u64>,
    pair_counts: HashMap<(u32, u32), u64>,
    pair_words: HashMap<(u32, u32), HashSet<usize>>,
    words: Vec<TrainWord>,
}

impl MergeState {
    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.symbol_ids.get(&s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbol_ids.insert(s.clone(), id);
        self.symbols.push(s);
        self.symbol_counts.push(0);
        id
    }

    fn account(&mut self, w: usize, sign: i8) {
        let word = &self.words[w];
        let count = word.count;
        for &s in &word.symbols {
            let c = &mut self.symbol_counts[s as usize];
            *c = if sign > 0 { *c + count } else { *c - count };
        }
        for pair in word.symbols.windows(2) {
            let key = (pair[0], pair[1]);
            if sign > 0 {
                *self.pair_counts.entry(key).or_default() += count;
                self.pair_words.entry(key).or_default().insert(w);
            } else if let Some(c) = self.pair_counts.get_mut(&key) {
                *c -= count;
                if *c == 0 {
                    self.pair_counts.remove(&key);
                }
            }
        }
    }

    fn merged_string(&self, (a, b): (u32, u32)) -> String {
        let right = &self.symbols[b as usize];
        let right = right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(right);
        format!("{}{}", self.symbols[a as usize], right)
    }

    /// Ordering key for ties: surface string without the continuation
    /// prefix, then word-initial before continuation.
    fn tie_key(&self, pair: (u32, u32)) -> (String, bool) {
        let merged = self.merged_string(pair);
        match merged.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) => (rest.to_string(), true),
            None => (merged, false),
        }
    }

    fn best_pair(&self, min_frequency: u64) -> Option<(u32, u32)> {
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &self.pair_counts {
            if count < min_frequency {
                continue;
            }
            best = match best {
                None => Some((pair, count)),
                Some((cur, cur_count)) => {
                    // count(ab) / (count(a) count(b)), compared exactly
                    let lhs = count as u128
                        * self.symbol_counts[cur.0 as usize] as u128
                        * self.symbol_counts[cur.1 as usize] as u128;
                    let rhs = cur_count as u128
                        * self.symbol_counts[pair.0 as usize] as u128
                        * self.symbol_counts[pair.1 as usize] as u128;
                    let better = match lhs.cmp(&rhs) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => self.tie_key(pair) < self.tie_key(cur),
                    };
                    if better {
                        Some((pair, count))
                    } else {
                        Some((cur, cur_count))
                    }
                }
            };
        }
        best.map(|(p, _)| p)
    }

    fn apply_merge(&mut self, pair: (u32, u32), new_id: u32) {
        let Some(affected) = self.pair_words.remove(&pair) else {
            return;
        };
        let mut affected: Vec<usize> = affected.into_iter().collect();
        affected.sort_unstable();
        for w in affected {
            if !self.words[w].symbols.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            self.account(w, -1);
            let old = std::mem::take(&mut self.words[w].symbols);
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            self.words[w].symbols = merged;
            self.account(w, 1);
        }
    }
}

/// Trains a vocabulary by repeatedly merging the adjacent symbol pair with
/// the highest `count(ab) / (count(a) * count(b))`.
pub fn train_wordpiece(counts: &WordCounts, config: &TrainerConfig) -> Result<Vocab, TokenizerError> {
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut sorted: Vec<(&String, &u64)> = counts.counts.iter().collect();
    sorted.sort_unstable();

    let mut alphabet: Vec<char> = sorted
        .iter()
        .flat_map(|(w, _)| w.chars())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    alphabet.sort_unstable();

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for p in &config.pre_tokenizer.protected {
        if !tokens.contains(p) {
            tokens.push(p.clone());
        }
    }
    let mut state = MergeState {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        symbol_counts: Vec::new(),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
        words: Vec::with_capacity(sorted.len()),
    };
    let mut in_vocab: HashSet<String> = tokens.iter().cloned().collect();
    for &c in &alphabet {
        let initial = c.to_string();
        state.intern(initial.clone());
        if in_vocab.insert(initial.clone()) {
            tokens.push(initial);
        }
    }
    for &c in &alphabet {
        let cont = format!("{CONTINUATION_PREFIX}{c}");
        state.intern(cont.clone());
        if in_vocab.insert(cont.clone()) {
            tokens.push(cont);
        }
    }
    if config.vocab_size < tokens.len() {
        return Err(TokenizerError::VocabTooSmall {
            requested: config.vocab_size,
            required: tokens.len(),
        });
    }

    for (word, &count) in sorted {
        let symbols = word
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let s = if i == 0 {
                    c.to_string()
                } else {
                    format!("{CONTINUATION_PREFIX}{c}")
                };
                state.symbol_ids[&s]
            })
            .collect();
        state.words.push(TrainWord { symbols, count });
    }
    for w in 0..state.words.len() {
        state.account(w, 1);
    }

    while tokens.len() < config.vocab_size {
        let Some(pair) = state.best_pair(config.min_frequency) else {
            break;
        };
        let merged = state.merged_string(pair);
        let new_id = state.intern(merged.clone());
        state.apply_merge(pair, new_id);
        if in_vocab.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    Vocab::from_tokens(tokens)
}
