//! Calibrates the discriminator's `min_lm` on the shipped Persian/Arabic
//! routing fixture and writes the chosen thresholds to
//! `tests/fixtures/discriminator_manifest.json`.
//!
//! cargo run --example calibrate_discriminator

use corpusforge::corpusio::Document;
use corpusforge::discriminator::{
    calibrate_min_lm, score, train_char_model, Discriminator, FilterThresholds, Stopwords,
    DEFAULT_ALPHA, DEFAULT_ORDER,
};
use corpusforge::normalizer::{normalize_text, NormalizationConfig};

const MIN_CHARS: usize = 32;
// Fluent Persian runs 0.29-0.54 function words; the Arabic fixture 0.00-0.10.
const MIN_STOPWORD: f64 = 0.15;
// Digit-spam and Latin-script posts sit well above this.
const MAX_NONALPHABET: f64 = 0.3;

fn lines(text: &str, norm: &NormalizationConfig) -> Vec<String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| normalize_text(l, norm).text)
        .collect()
}

fn main() {
    let norm = NormalizationConfig::default();
    let train = lines(include_str!("../tests/fixtures/persian_train.txt"), &norm);
    let persian = lines(include_str!("../tests/fixtures/persian_heldout.txt"), &norm);
    let arabic: Vec<String> = lines(include_str!("../tests/fixtures/arabic.txt"), &norm)
        .into_iter()
        .take(10)
        .collect();

    let docs: Vec<Document> = train
        .iter()
        .enumerate()
        .map(|(i, t)| Document::new(format!("train-{i}"), t.clone()))
        .collect();
    let model = train_char_model(&docs, DEFAULT_ORDER, DEFAULT_ALPHA).unwrap();
    let stopwords = Stopwords::default();
    for (label, set) in [("fa", &persian), ("ar", &arabic)] {
        for t in set {
            let s = score(t, &model, &stopwords).unwrap();
            eprintln!(
                "{label} lm={:.4} stop={:.3} nonalpha={:.3}",
                s.lm_logprob_per_char, s.stopword_ratio, s.nonalphabet_ratio
            );
        }
    }

    // Calibrate the LM cut alone; the ratio thresholds are set independently.
    let lm_only = FilterThresholds {
        min_chars: MIN_CHARS,
        ..FilterThresholds::permissive()
    };
    let base = Discriminator::new(model, stopwords, lm_only);
    let pos: Vec<&str> = persian.iter().map(String::as_str).collect();
    let neg: Vec<&str> = arabic.iter().map(String::as_str).collect();
    let (min_lm, accuracy) = calibrate_min_lm(&pos, &neg, &base);
    let thresholds = FilterThresholds {
        min_lm,
        min_stopword: MIN_STOPWORD,
        max_nonalphabet: MAX_NONALPHABET,
        min_chars: MIN_CHARS,
    };
    let conf = concat!(env!("CARGO_MANIFEST_DIR"), "/data/filter_thresholds.conf");
    std::fs::write(
        conf,
        format!("# Calibrated by examples/calibrate_discriminator.rs\n{}", thresholds.dump()),
    )
    .unwrap();
    let manifest = serde_json::json!({
        "model": {"order": DEFAULT_ORDER, "alpha": DEFAULT_ALPHA, "trained_on": "persian_train.txt"},
        "positives": "persian_heldout.txt",
        "negatives": "arabic.txt lines 1-10",
        "thresholds": thresholds,
        "accuracy": accuracy,
    });
    let out = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/discriminator_manifest.json");
    std::fs::write(out, serde_json::to_string_pretty(&manifest).unwrap() + "\n").unwrap();
    eprintln!("min_lm = {min_lm} accuracy = {accuracy}");
}
