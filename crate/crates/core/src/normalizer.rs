//! Canonicalization of raw Perso-Arabic text.
//!
//! Three rewrites run in a fixed order: character unification (map + strip),
//! digit-run replacement, and collapsing of long runs of one repeated code
//! point. All rules work on code points, never on grapheme clusters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::decompose_compatible;

use crate::corpusio::Document;

pub const ZWNJ: char = '\u{200C}';
pub const DEFAULT_NUMBER_TOKEN: &str = "<NUM>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid normalization config: {0}")]
    InvalidConfig(String),
}

/// ASCII, Arabic-Indic and Extended Arabic-Indic decimal digits.
pub fn is_digit(c: char) -> bool {
    c.is_ascii_digit() || ('\u{0660}'..='\u{0669}').contains(&c) || ('\u{06F0}'..='\u{06F9}').contains(&c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub char_map: BTreeMap<char, String>,
    pub strip_set: BTreeSet<char>,
    pub number_token: String,
    pub repeat_threshold: usize,
    pub repeat_keep: usize,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        let mut strip_set: BTreeSet<char> = [
            '\u{0640}', // tatweel
            '\u{200B}', // zero-width space
            '\u{200D}', // zero-width joiner
            '\u{200E}', // LRM
            '\u{200F}', // RLM
            '\u{FEFF}', // zero-width no-break space
        ]
        .into_iter()
        .collect();
        strip_set.extend('\u{064B}'..='\u{065F}');

        let mut char_map: BTreeMap<char, String> = [
            ('\u{064A}', '\u{06CC}'), // Arabic yeh -> Farsi yeh
            ('\u{0649}', '\u{06CC}'), // alef maksura -> Farsi yeh
            ('\u{0643}', '\u{06A9}'), // Arabic kaf -> keheh
            ('\u{0623}', '\u{0627}'),
            ('\u{0625}', '\u{0627}'),
            ('\u{0629}', '\u{0647}'), // teh marbuta -> heh
        ]
        .into_iter()
        .map(|(from, to)| (from, to.to_string()))
        .collect();

        // Presentation forms decompose to base letters; the base letters then
        // go through the table above so the map stays idempotent.
        let ranges = ['\u{FB50}'..='\u{FDFF}', '\u{FE70}'..='\u{FEFE}'];
        for c in ranges.into_iter().flatten() {
            let mut decomposed = String::new();
            decompose_compatible(c, |d| decomposed.push(d));
            if decomposed.chars().eq(std::iter::once(c)) {
                continue;
            }
            let image: String = decomposed
                .chars()
                .filter(|d| !strip_set.contains(d))
                .flat_map(|d| match char_map.get(&d) {
                    Some(mapped) => mapped.chars().collect::<Vec<_>>(),
                    None => vec![d],
                })
                .collect();
            if image.is_empty() {
                strip_set.insert(c);
            } else {
                char_map.insert(c, image);
            }
        }

        Self {
            char_map,
            strip_set,
            number_token: DEFAULT_NUMBER_TOKEN.to_string(),
            repeat_threshold: 3,
            repeat_keep: 1,
        }
    }
}

impl NormalizationConfig {
    /// Checks the invariants that make `normalize` idempotent.
    pub fn validate(&self) -> Result<(), NormalizeError> {
        let bad = |m: String| Err(NormalizeError::InvalidConfig(m));
        if self.repeat_keep == 0 || self.repeat_keep >= self.repeat_threshold {
            return bad(format!(
                "repeat_keep ({}) must be in 1..repeat_threshold ({})",
                self.repeat_keep, self.repeat_threshold
            ));
        }
        if self.number_token.is_empty() {
            return bad("number_token is empty".into());
        }
        for c in self.number_token.chars() {
            if is_digit(c) {
                return bad(format!("number_token {:?} contains a digit", self.number_token));
            }
            if self.char_map.contains_key(&c) || self.strip_set.contains(&c) {
                return bad(format!(
                    "number_token {:?} contains rewritten code point U+{:04X}",
                    self.number_token, c as u32
                ));
            }
        }
        for (from, to) in &self.char_map {
            if self.strip_set.contains(from) {
                return bad(format!("U+{:04X} is both mapped and stripped", *from as u32));
            }
            for c in to.chars() {
                if self.char_map.contains_key(&c) || self.strip_set.contains(&c) {
                    return bad(format!(
                        "image of U+{:04X} contains U+{:04X}, which is rewritten again",
                        *from as u32, c as u32
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parses the plain-text table format produced by [`Self::dump`].
    pub fn parse(text: &str) -> Result<Self, NormalizeError> {
        let mut config = Self {
            char_map: BTreeMap::new(),
            strip_set: BTreeSet::new(),
            number_token: DEFAULT_NUMBER_TOKEN.to_string(),
            repeat_threshold: 3,
            repeat_keep: 1,
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| NormalizeError::Parse {
                line: line_no,
                message,
            };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("strip ") {
                let c = parse_hex(rest.trim()).map_err(err)?;
                config.strip_set.insert(c);
            } else if let Some((src, dst)) = line.split_once("->") {
                let from = parse_hex(src.trim()).map_err(err)?;
                let image = dst
                    .split(',')
                    .map(|h| parse_hex(h.trim()))
                    .collect::<Result<String, _>>()
                    .map_err(err)?;
                if image.is_empty() {
                    return Err(err("empty mapping image; use `strip`".into()));
                }
                config.char_map.insert(from, image);
            } else if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "number_token" => config.number_token = value.to_string(),
                    "repeat_threshold" => {
                        config.repeat_threshold = value
                            .parse()
                            .map_err(|_| err(format!("bad integer {value:?}")))?
                    }
                    "repeat_keep" => {
                        config.repeat_keep = value
                            .parse()
                            .map_err(|_| err(format!("bad integer {value:?}")))?
                    }
                    other => return Err(err(format!("unknown key {other:?}"))),
                }
            } else {
                return Err(err(format!("unrecognized line {line:?}")));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str("# corpusforge normalization table\n");
        let _ = writeln!(out, "number_token = {}", self.number_token);
        let _ = writeln!(out, "repeat_threshold = {}", self.repeat_threshold);
        let _ = writeln!(out, "repeat_keep = {}", self.repeat_keep);
        for c in &self.strip_set {
            let _ = writeln!(out, "strip {:04X}", *c as u32);
        }
        for (from, to) in &self.char_map {
            let image: Vec<String> = to.chars().map(|c| format!("{:04X}", c as u32)).collect();
            let _ = writeln!(out, "{:04X} -> {}", *from as u32, image.join(","));
        }
        out
    }
}

fn parse_hex(s: &str) -> Result<char, String> {
    let s = s
        .strip_prefix("U+")
        .or_else(|| s.strip_prefix("0x"))
        .unwrap_or(s);
    u32::from_str_radix(s, 16)
        .ok()
        .and_then(char::from_u32)
        .ok_or_else(|| format!("invalid code point {s:?}"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub chars_mapped: u64,
    pub chars_stripped: u64,
    pub numbers_replaced: u64,
    pub repeats_collapsed: u64,
}

impl NormalizationStats {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

impl AddAssign for NormalizationStats {
    fn add_assign(&mut self, rhs: Self) {
        self.chars_mapped += rhs.chars_mapped;
        self.chars_stripped += rhs.chars_stripped;
        self.numbers_replaced += rhs.numbers_replaced;
        self.repeats_collapsed += rhs.repeats_collapsed;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    pub text: String,
    pub stats: NormalizationStats,
}

fn map_counted(text: &str, config: &NormalizationConfig, stats: &mut NormalizationStats) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if config.strip_set.contains(&c) {
            stats.chars_stripped += 1;
        } else if let Some(image) = config.char_map.get(&c) {
            stats.chars_mapped += 1;
            out.push_str(image);
        } else {
            out.push(c);
        }
    }
    out
}

fn replace_counted(text: &str, config: &NormalizationConfig, stats: &mut NormalizationStats) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_run = false;
    for c in text.chars() {
        if is_digit(c) {
            if !in_run {
                out.push_str(&config.number_token);
                stats.numbers_replaced += 1;
                in_run = true;
            }
        } else {
            in_run = false;
            out.push(c);
        }
    }
    out
}

fn collapse_counted(text: &str, config: &NormalizationConfig, stats: &mut NormalizationStats) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        let mut run = 1;
        while chars.peek() == Some(&c) {
            chars.next();
            run += 1;
        }
        let emit = if run >= config.repeat_threshold {
            stats.repeats_collapsed += 1;
            config.repeat_keep
        } else {
            run
        };
        out.extend(std::iter::repeat_n(c, emit));
    }
    out
}

/// Replaces mapped code points by their images and drops stripped ones.
pub fn map_characters(text: &str, config: &NormalizationConfig) -> String {
    map_counted(text, config, &mut NormalizationStats::default())
}

/// Replaces every maximal digit run with one `number_token`.
pub fn replace_numbers(text: &str, config: &NormalizationConfig) -> String {
    replace_counted(text, config, &mut NormalizationStats::default())
}

/// Shortens runs of at least `repeat_threshold` identical code points to
/// `repeat_keep` copies. Whitespace and ZWNJ runs are included.
pub fn collapse_repeats(text: &str, config: &NormalizationConfig) -> String {
    collapse_counted(text, config, &mut NormalizationStats::default())
}

pub fn normalize_text(text: &str, config: &NormalizationConfig) -> NormalizedText {
    let mut stats = NormalizationStats::default();
    let mapped = map_counted(text, config, &mut stats);
    let replaced = replace_counted(&mapped, config, &mut stats);
    let text = collapse_counted(&replaced, config, &mut stats);
    NormalizedText { text, stats }
}

/// Normalizes the text of `doc`, keeping its id and metadata.
pub fn normalize(doc: Document, config: &NormalizationConfig) -> (Document, NormalizationStats) {
    let NormalizedText { text, stats } = normalize_text(&doc.text, config);
    (Document { text, ..doc }, stats)
}
