#![allow(dead_code)]

pub mod checks;

use std::path::PathBuf;
use std::sync::OnceLock;

use corpusforge::corpusio::{read_corpus, Document};
use corpusforge::discriminator::{train_char_model, Discriminator, FilterThresholds, Stopwords};
use corpusforge::normalizer::{normalize, normalize_text, NormalizationConfig};
use corpusforge::tokenizer::{train_wordpiece, Tokenizer, TrainerConfig, WordCounts};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn paragraphs(name: &str) -> Vec<String> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

pub fn normalized_paragraphs(name: &str) -> Vec<String> {
    let cfg = NormalizationConfig::default();
    paragraphs(name).iter().map(|p| normalize_text(p, &cfg).text).collect()
}

pub fn blog_docs() -> Vec<Document> {
    read_corpus(fixture("blog_corpus.jsonl"))
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap()
}

pub fn discriminator() -> Discriminator {
    let train: Vec<Document> = normalized_paragraphs("persian_train.txt")
        .into_iter()
        .enumerate()
        .map(|(i, t)| Document::new(format!("p{i}"), t))
        .collect();
    let model = train_char_model(&train, 3, 0.1).unwrap();
    Discriminator::new(model, Stopwords::default(), FilterThresholds::default())
}

/// The blog fixture after normalization and noise filtering.
pub fn clean_blog() -> &'static [Document] {
    static DOCS: OnceLock<Vec<Document>> = OnceLock::new();
    DOCS.get_or_init(|| {
        let cfg = NormalizationConfig::default();
        let disc = discriminator();
        blog_docs()
            .into_iter()
            .map(|d| normalize(d, &cfg).0)
            .filter(|d| disc.judge(&d.text).is_keep())
            .collect()
    })
}

pub fn word_counts(docs: &[Document], config: &TrainerConfig) -> WordCounts {
    let mut counts = WordCounts::default();
    for d in docs {
        counts.add_text(&d.text, config);
    }
    counts
}

/// Default-config tokenizer trained on the clean blog fixture.
pub fn blog_tokenizer() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| {
        let config = TrainerConfig::default();
        let vocab = train_wordpiece(&word_counts(clean_blog(), &config), &config).unwrap();
        Tokenizer::with_pre_tokenizer(vocab, config.pre_tokenizer)
    })
}

/// Sort-based order statistics, written independently of the histogram.
pub mod oracle {
    pub fn median(sorted: &[u32]) -> f64 {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        }
    }

    /// (q1, median, q3) with inclusive halves.
    pub fn hinges(counts: &[u32]) -> (f64, f64, f64) {
        let mut s = counts.to_vec();
        s.sort();
        let n = s.len();
        let half = n.div_ceil(2);
        (median(&s[..half]), median(&s), median(&s[n - half..]))
    }
}

/// Every segmentation of `word` into vocabulary pieces, first piece
/// word-initial and the rest continuations.
pub fn all_segmentations(word: &[char], vocab: &[&str]) -> Vec<Vec<String>> {
    fn go(word: &[char], at: usize, vocab: &[&str], cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if at == word.len() {
            out.push(cur.clone());
            return;
        }
        for end in at + 1..=word.len() {
            let piece: String = word[at..end].iter().collect();
            let token = if at == 0 { piece } else { format!("##{piece}") };
            if vocab.contains(&token.as_str()) {
                cur.push(token);
                go(word, end, vocab, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(word, 0, vocab, &mut Vec::new(), &mut out);
    out
}

fn piece(word: &[char], start: usize, end: usize) -> String {
    let p: String = word[start..end].iter().collect();
    if start == 0 {
        p
    } else {
        format!("##{p}")
    }
}

/// What greedy longest-match must return, found by brute force: the
/// segmentation in which no piece could have been extended to a longer
/// vocabulary entry. `None` means the word has no such segmentation and
/// must become `[UNK]`.
pub fn greedy_oracle(word: &str, vocab: &[&str]) -> Option<Vec<String>> {
    let chars: Vec<char> = word.chars().collect();
    let mut found: Vec<Vec<String>> = all_segmentations(&chars, vocab)
        .into_iter()
        .filter(|seg| {
            let mut at = 0;
            seg.iter().all(|t| {
                let end = at + t.trim_start_matches("##").chars().count();
                let maximal = (end + 1..=chars.len()).all(|e| !vocab.contains(&piece(&chars, at, e).as_str()));
                at = end;
                maximal
            })
        })
        .collect();
    assert!(found.len() <= 1, "two maximal segmentations of {word:?}");
    found.pop()
}
