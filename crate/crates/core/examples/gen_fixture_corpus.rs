//! Regenerates `tests/fixtures/blog_corpus.jsonl`, a ~1 MB synthetic blog
//! corpus built from the Persian training paragraphs.
//!
//! Posts are random walks over a word bigram chain with light morphological
//! variation, then roughened with the kinds of noise seen in scraped blogs:
//! Arabic yeh/kaf, kashida, stretched letters, digits in three scripts,
//! diacritics, emoji. A small share of posts are Arabic, digit spam or too
//! short, for the filter to catch.
//!
//! cargo run --example gen_fixture_corpus -- crates/core/tests/fixtures/blog_corpus.jsonl

use std::collections::BTreeMap;

use corpusforge::corpusio::{write_corpus, Document};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TARGET_BYTES: usize = 1_000_000;
const SEED: u64 = 20_240_117;

const SUFFIXES: [&str; 9] = [
    "\u{200C}ها", "ها", "ی", "\u{200C}ای", "\u{200C}ام", "تر", "\u{200C}تر", "ش", "\u{200C}شان",
];
const PREFIXES: [&str; 3] = ["می\u{200C}", "نمی\u{200C}", "بی\u{200C}"];
const SHORT_POSTS: [&str; 5] = ["سلام!", "عالی بود", "ممنون 🌹", "لایک", "مرسی دوست من"];
const EMOJI: [&str; 4] = ["😀", "🌹", "❤", "👍"];

struct Chain {
    starts: Vec<String>,
    next: BTreeMap<String, Vec<String>>,
}

impl Chain {
    fn build(paragraphs: &[&str]) -> Self {
        let mut starts = Vec::new();
        let mut next: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in paragraphs {
            let words: Vec<&str> = p.split_whitespace().collect();
            let mut at_start = true;
            for pair in words.windows(2) {
                if at_start {
                    starts.push(pair[0].to_string());
                }
                at_start = pair[0].ends_with('.');
                if !at_start {
                    next.entry(pair[0].to_string())
                        .or_default()
                        .push(pair[1].to_string());
                }
            }
        }
        Self { starts, next }
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut word = self.starts.choose(rng).unwrap().clone();
        let mut out = vec![word.clone()];
        while !word.ends_with('.') && out.len() < 30 {
            word = match self.next.get(&word) {
                Some(options) => options.choose(rng).unwrap().clone(),
                None => break,
            };
            out.push(word.clone());
        }
        if !out.last().unwrap().ends_with('.') {
            out.last_mut().unwrap().push('.');
        }
        out
    }
}

fn vary(word: &str, rng: &mut ChaCha8Rng) -> String {
    let (core, tail) = match word.char_indices().last() {
        Some((i, c)) if c == '.' || c == '،' || c == '؛' || c == ',' => (&word[..i], &word[i..]),
        _ => (word, ""),
    };
    let mut w = core.to_string();
    if w.chars().count() > 2 {
        if rng.random_bool(0.08) {
            w.push_str(SUFFIXES.choose(rng).unwrap());
        }
        if rng.random_bool(0.03) {
            w = format!("{}{w}", PREFIXES.choose(rng).unwrap());
        }
    }
    w + tail
}

fn to_digits(n: u32, script: usize) -> String {
    let base = match script {
        0 => '0' as u32,
        1 => 0x06F0,
        _ => 0x0660,
    };
    n.to_string()
        .chars()
        .map(|d| char::from_u32(base + d.to_digit(10).unwrap()).unwrap())
        .collect()
}

fn roughen(text: String, rng: &mut ChaCha8Rng) -> String {
    let mut t = text;
    if rng.random_bool(0.2) {
        t = t.replace('ی', "ي").replace('ک', "ك");
    }
    let mut words: Vec<String> = t.split(' ').map(str::to_string).collect();
    let n = words.len();
    if rng.random_bool(0.12) {
        let i = rng.random_range(0..n);
        let chars: Vec<char> = words[i].chars().collect();
        if chars.len() > 2 {
            let at = rng.random_range(1..chars.len() - 1);
            let mut s: String = chars[..at].iter().collect();
            s.push('ـ');
            s.extend(&chars[at..]);
            words[i] = s;
        }
    }
    if rng.random_bool(0.12) {
        let i = rng.random_range(0..n);
        if let Some(c) = words[i].chars().rev().find(|c| c.is_alphabetic()) {
            let pos = words[i].rfind(c).unwrap() + c.len_utf8();
            let stretch: String = std::iter::repeat_n(c, rng.random_range(3..8)).collect();
            words[i].insert_str(pos, &stretch);
        }
    }
    if rng.random_bool(0.25) {
        let i = rng.random_range(0..n);
        let num = to_digits(rng.random_range(1..5000), rng.random_range(0..3));
        words.insert(i, num);
    }
    if rng.random_bool(0.04) {
        let i = rng.random_range(0..words.len());
        words[i].push('\u{064E}');
    }
    if rng.random_bool(0.06) {
        words.push(EMOJI.choose(rng).unwrap().to_string());
    }
    if rng.random_bool(0.05) {
        words.push("!!!!".to_string());
    }
    words.join(" ")
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/tests/fixtures/blog_corpus.jsonl".into());
    let persian = include_str!("../tests/fixtures/persian_train.txt");
    let arabic = include_str!("../tests/fixtures/arabic.txt");
    let paragraphs: Vec<&str> = persian.lines().filter(|l| !l.is_empty()).collect();
    let arabic: Vec<&str> = arabic.lines().filter(|l| !l.is_empty()).skip(10).collect();
    let chain = Chain::build(&paragraphs);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut docs = Vec::new();
    let mut bytes = 0;
    while bytes < TARGET_BYTES {
        let roll: f64 = rng.random();
        let text = if roll < 0.02 {
            arabic.choose(&mut rng).unwrap().to_string()
        } else if roll < 0.03 {
            let phone = to_digits(rng.random_range(100_000_000..999_999_999), 1);
            format!("فروش ویژه {phone} {phone} 0912{} تماس", rng.random_range(1_000_000..9_999_999))
        } else if roll < 0.045 {
            SHORT_POSTS.choose(&mut rng).unwrap().to_string()
        } else {
            let sentences = 1 + (rng.random::<f64>().powi(2) * 12.0) as usize;
            let body: Vec<String> = (0..sentences)
                .map(|_| {
                    chain
                        .sentence(&mut rng)
                        .iter()
                        .map(|w| vary(w, &mut rng))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let sep = if rng.random_bool(0.3) { "\n" } else { " " };
            roughen(body.join(sep), &mut rng)
        };
        let n = docs.len();
        let doc = Document::new(format!("post-{n:06}"), text)
            .with_meta("source", format!("blog-{}", rng.random_range(0..400)))
            .with_meta(
                "date",
                format!("20{:02}-{:02}-{:02}", rng.random_range(8..18), rng.random_range(1..13), rng.random_range(1..29)),
            );
        bytes += serde_json::to_string(&doc).unwrap().len() + 1;
        docs.push(doc);
    }
    let n = write_corpus(&docs, &out).expect("write fixture");
    eprintln!("wrote {n} posts ({bytes} bytes) to {out}");
}
