//! Browser-facing wrapper around corpusforge. The [`Workbench`] holds a
//! tokenizer trained in the page; the wasm exports return JSON strings so the
//! page needs no generated type bindings beyond `JSON.parse`.

use corpusforge::masking::{EpochBuilder, MaskStats, MaskingConfig, IGNORE_LABEL};
use corpusforge::normalizer::{normalize_text, NormalizationConfig, NormalizationStats};
use corpusforge::tokenizer::{train_wordpiece, Tokenizer, TrainerConfig, WordCounts, UNK_ID};
use corpusforge::Document;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NormalizeView {
    pub text: String,
    pub stats: NormalizationStats,
}

pub fn normalize_view(text: &str) -> NormalizeView {
    let n = normalize_text(text, &NormalizationConfig::default());
    NormalizeView {
        text: n.text,
        stats: n.stats,
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainSummary {
    pub vocab_size: usize,
    pub distinct_words: usize,
    pub digest: String,
}

/// One pre-token and the pieces it was split into.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WordView {
    pub word: String,
    pub start: usize,
    pub end: usize,
    pub pieces: Vec<String>,
    pub ids: Vec<u32>,
    pub unknown: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MaskedToken {
    pub shown: String,
    pub original: Option<String>,
    pub word: Option<u32>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MaskPreview {
    pub examples: Vec<Vec<MaskedToken>>,
    pub stats: MaskStats,
}

#[derive(Default)]
#[wasm_bindgen]
pub struct Workbench {
    tokenizer: Option<Tokenizer>,
}

impl Workbench {
    /// Trains on `corpus`, one document per line. Lines are normalized first.
    pub fn train_lines(&mut self, corpus: &str, vocab_size: usize, min_frequency: u64) -> Result<TrainSummary, String> {
        let config = TrainerConfig {
            vocab_size,
            min_frequency,
            ..TrainerConfig::default()
        };
        let norm = NormalizationConfig::default();
        let mut counts = WordCounts::default();
        for line in corpus.lines() {
            counts.add_text(&normalize_text(line, &norm).text, &config);
        }
        let vocab = train_wordpiece(&counts, &config).map_err(|e| e.to_string())?;
        let summary = TrainSummary {
            vocab_size: vocab.len(),
            distinct_words: counts.len(),
            digest: vocab.digest(),
        };
        self.tokenizer = Some(Tokenizer::with_pre_tokenizer(vocab, config.pre_tokenizer));
        Ok(summary)
    }

    pub fn tokenizer(&self) -> Option<&Tokenizer> {
        self.tokenizer.as_ref()
    }

    fn require(&self) -> Result<&Tokenizer, String> {
        self.tokenizer.as_ref().ok_or_else(|| "no tokenizer trained yet".to_string())
    }

    pub fn segment_words(&self, text: &str) -> Result<Vec<WordView>, String> {
        let tok = self.require()?;
        let text = normalize_text(text, &NormalizationConfig::default()).text;
        let mut out = Vec::new();
        for w in tok.pre_tokenizer().pre_tokenize(&text) {
            let mut ids = Vec::new();
            let unknown = !tok.segment_word(w.text, &mut ids);
            if unknown {
                ids = vec![UNK_ID];
            }
            let pieces = ids.iter().map(|&i| tok.vocab().token(i).unwrap_or("?").to_string()).collect();
            out.push(WordView {
                word: w.text.to_string(),
                start: w.start,
                end: w.end,
                pieces,
                ids,
                unknown,
            });
        }
        Ok(out)
    }

    pub fn mask_examples(&self, text: &str, epoch: u64, seed: u64, max_len: usize) -> Result<MaskPreview, String> {
        let tok = self.require()?;
        let config = MaskingConfig {
            epoch_seed: seed,
            max_len,
            min_len: MaskingConfig::default().min_len.min(max_len.saturating_sub(2)).max(1),
            ..MaskingConfig::default()
        };
        let builder = EpochBuilder::new(tok, config, epoch).map_err(|e| e.to_string())?;
        let doc = Document::new("preview", normalize_text(text, &NormalizationConfig::default()).text);
        let mut stats = MaskStats::default();
        let vocab = tok.vocab();
        let name = |id: u32| vocab.token(id).unwrap_or("?").to_string();
        let examples = builder
            .examples_for(&doc, &mut stats)
            .into_iter()
            .map(|ex| {
                ex.input_ids
                    .iter()
                    .zip(&ex.labels)
                    .zip(&ex.word_ids)
                    .map(|((&id, &label), &word)| MaskedToken {
                        shown: name(id),
                        original: (label != IGNORE_LABEL).then(|| name(label as u32)),
                        word,
                    })
                    .collect()
            })
            .collect();
        Ok(MaskPreview { examples, stats })
    }
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = normalize)]
pub fn normalize_js(text: &str) -> String {
    serde_json::to_string(&normalize_view(text)).unwrap_or_default()
}

#[wasm_bindgen]
impl Workbench {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Self {
        Self::default()
    }

    pub fn train(&mut self, corpus: &str, vocab_size: usize, min_frequency: u32) -> Result<String, JsError> {
        to_json(self.train_lines(corpus, vocab_size, u64::from(min_frequency)))
    }

    pub fn segment(&self, text: &str) -> Result<String, JsError> {
        to_json(self.segment_words(text))
    }

    #[wasm_bindgen(js_name = maskPreview)]
    pub fn mask_preview(&self, text: &str, epoch: u32, seed: u32, max_len: usize) -> Result<String, JsError> {
        to_json(self.mask_examples(text, u64::from(epoch), u64::from(seed), max_len))
    }
}
