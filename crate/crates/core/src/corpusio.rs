//! Line-delimited corpus records.
//!
//! A corpus file is UTF-8 JSON Lines: one object per line with the required
//! keys `id` and `text` and an optional `meta` string map. Newlines inside
//! `text` are escaped by the JSON encoding, so a post is never split across
//! lines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Open { path: PathBuf, source: io::Error },

    #[error("read failed at line {line}: {source}")]
    Read { line: u64, source: io::Error },

    #[error("line {line}: {message} (byte offset {offset})")]
    Malformed {
        line: u64,
        offset: u64,
        message: String,
    },

    #[error("{}: invalid UTF-8", match id { Some(id) => format!("record {id:?} at line {line}"), None => format!("line {line}") })]
    InvalidUtf8 { line: u64, id: Option<String> },

    #[error("write failed after {written} records: {source}")]
    Write { written: usize, source: io::Error },

    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

impl CorpusError {
    /// True for errors caused by the content of the input rather than the
    /// file system.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CorpusError::Malformed { .. } | CorpusError::InvalidUtf8 { .. }
        )
    }
}

/// One corpus record, typically a single blog post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            meta: None,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta
            .get_or_insert_with(BTreeMap::new)
            .insert(key.into(), value.into());
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.contains('\0') {
            return Err(format!("record {:?}: text contains NUL", self.id));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct IdOnly {
    id: String,
}

/// Streaming reader over a JSON Lines corpus. Holds one line in memory at a
/// time.
pub struct CorpusReader<R> {
    inner: R,
    buf: Vec<u8>,
    line: u64,
    offset: u64,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
            line: 0,
            offset: 0,
            done: false,
        }
    }

    fn parse_line(&self, start: u64) -> Result<Document, CorpusError> {
        let mut raw = self.buf.as_slice();
        if raw.last() == Some(&b'\n') {
            raw = &raw[..raw.len() - 1];
        }
        let malformed = |message: String| CorpusError::Malformed {
            line: self.line,
            offset: start,
            message,
        };
        let text = match std::str::from_utf8(raw) {
            Ok(text) => text,
            Err(_) => {
                let lossy = String::from_utf8_lossy(raw);
                let id = serde_json::from_str::<IdOnly>(&lossy).ok().map(|r| r.id);
                return Err(CorpusError::InvalidUtf8 {
                    line: self.line,
                    id,
                });
            }
        };
        if text.trim().is_empty() {
            return Err(malformed("empty line".into()));
        }
        let doc: Document = serde_json::from_str(text).map_err(|e| {
            // serde_json appends its own "at line 1 column N"; the column is
            // kept, the line is ours.
            let msg = e.to_string();
            let msg = msg
                .split(" at line ")
                .next()
                .unwrap_or(msg.as_str())
                .to_string();
            malformed(format!("{msg} (column {})", e.column()))
        })?;
        doc.validate().map_err(malformed)?;
        Ok(doc)
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        self.buf.clear();
        let start = self.offset;
        match self.inner.read_until(b'\n', &mut self.buf) {
            Ok(0) => {
                self.done = true;
                None
            }
            Ok(n) => {
                self.line += 1;
                self.offset += n as u64;
                Some(self.parse_line(start))
            }
            Err(source) => {
                self.done = true;
                Some(Err(CorpusError::Read {
                    line: self.line + 1,
                    source,
                }))
            }
        }
    }
}

/// Opens a corpus file for streaming.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(CorpusReader::new(BufReader::new(file)))
}

/// Appends records to a JSON Lines sink, counting what was written.
pub struct CorpusWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> CorpusWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub fn write(&mut self, doc: &Document) -> Result<(), CorpusError> {
        let written = self.written;
        serde_json::to_writer(&mut self.inner, doc)
            .map_err(io::Error::from)
            .and_then(|_| self.inner.write_all(b"\n"))
            .map_err(|source| CorpusError::Write { written, source })?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<(usize, W), CorpusError> {
        self.inner.flush().map_err(|source| CorpusError::Write {
            written: self.written,
            source,
        })?;
        Ok((self.written, self.inner))
    }
}

/// Writes every document to `path` and returns the record count.
pub fn write_corpus<'a, I>(docs: I, path: impl AsRef<Path>) -> Result<usize, CorpusError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| CorpusError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = CorpusWriter::new(BufWriter::new(file));
    for doc in docs {
        writer.write(doc)?;
    }
    writer.finish().map(|(n, _)| n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Validation,
}

/// Keyed-hash assignment of one document id. Depends only on `(seed, id)`,
/// so the split of existing documents is stable when the corpus grows.
#[derive(Debug, Clone, Copy)]
pub struct SplitRule {
    threshold: u64,
    fraction: f64,
    seed: u64,
}

impl SplitRule {
    pub fn new(fraction: f64, seed: u64) -> Result<Self, CorpusError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(CorpusError::InvalidFraction(fraction));
        }
        // fraction < 1, so the product is below 2^64 and the cast is exact
        // up to f64 rounding.
        let threshold = (fraction * 18_446_744_073_709_551_616.0) as u64;
        Ok(Self {
            threshold,
            fraction,
            seed,
        })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assign(&self, id: &str) -> Side {
        let mut hasher = Sha256::new();
        hasher.update(b"corpusforge/split");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(id.as_bytes());
        let digest = hasher.finalize();
        let h = u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
        if h < self.threshold {
            Side::Validation
        } else {
            Side::Train
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub fraction: f64,
    pub seed: u64,
}

/// Partitions `docs` into train and validation, preserving input order on
/// both sides.
pub fn split_corpus<I>(docs: I, fraction: f64, seed: u64) -> Result<CorpusSplit, CorpusError>
where
    I: IntoIterator<Item = Document>,
{
    let rule = SplitRule::new(fraction, seed)?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for doc in docs {
        match rule.assign(&doc.id) {
            Side::Train => train.push(doc),
            Side::Validation => validation.push(doc),
        }
    }
    Ok(CorpusSplit {
        train,
        validation,
        fraction,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read_str(s: &str) -> Vec<Result<Document, CorpusError>> {
        CorpusReader::new(Cursor::new(s.as_bytes().to_vec())).collect()
    }

    #[test]
    fn reads_records_in_order() {
        let input = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":\"c\",\"text\":\"z\",\"meta\":{\"source\":\"blog\"}}\n";
        let docs: Vec<_> = read_str(input).into_iter().map(Result::unwrap).collect();
        assert_eq!(
            docs.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!(docs[2].meta.as_ref().unwrap()["source"], "blog");
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert!(read_str("").is_empty());
    }

    #[test]
    fn missing_text_reports_line() {
        let input = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n";
        let results = read_str(input);
        assert!(results[0].is_ok());
        let err = results[1].as_ref().unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("line 2: missing field"), "{msg}");
        match err {
            CorpusError::Malformed { line, offset, .. } => {
                assert_eq!(*line, 2);
                assert_eq!(*offset, 22);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_names_the_record() {
        let mut bytes = b"{\"id\":\"post-9\",\"text\":\"ab".to_vec();
        bytes.push(0xff);
        bytes.extend_from_slice(b"\"}\n");
        let results: Vec<_> = CorpusReader::new(Cursor::new(bytes)).collect();
        match results[0].as_ref().unwrap_err() {
            CorpusError::InvalidUtf8 { line, id } => {
                assert_eq!(*line, 1);
                assert_eq!(id.as_deref(), Some("post-9"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let results: Vec<_> = CorpusReader::new(Cursor::new(vec![0xfe, 0xff, b'\n'])).collect();
        assert!(matches!(
            results[0],
            Err(CorpusError::InvalidUtf8 { line: 1, id: None })
        ));
    }

    #[test]
    fn rejects_empty_id_and_nul() {
        assert!(read_str("{\"id\":\"\",\"text\":\"x\"}\n")[0].is_err());
        assert!(read_str("{\"id\":\"a\",\"text\":\"x\\u0000y\"}\n")[0].is_err());
    }

    #[test]
    fn newline_in_text_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let docs = vec![
            Document::new("1", "سطر اول\nسطر دوم"),
            Document::new("2", "tab\there \"quoted\"").with_meta("date", "2016-02-01"),
        ];
        assert_eq!(write_corpus(&docs, &path).unwrap(), 2);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), 2);
        let back: Vec<_> = read_corpus(&path).unwrap().map(Result::unwrap).collect();
        assert_eq!(back, docs);
    }

    #[test]
    fn empty_stream_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        assert_eq!(write_corpus(&[], &path).unwrap(), 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                split_corpus(Vec::new(), f, 1),
                Err(CorpusError::InvalidFraction(_))
            ));
        }
    }

    #[test]
    fn split_is_deterministic_and_near_fraction() {
        let docs: Vec<_> = (0..10_000)
            .map(|i| Document::new(format!("doc-{i}"), "t"))
            .collect();
        let a = split_corpus(docs.clone(), 0.1, 7).unwrap();
        let b = split_corpus(docs.clone(), 0.1, 7).unwrap();
        assert_eq!(a, b);
        // Binomial(10000, 0.1): sd = 30, so [800, 1200] is about +/- 6.7 sd.
        assert!((800..=1200).contains(&a.validation.len()), "{}", a.validation.len());
        assert_eq!(a.train.len() + a.validation.len(), docs.len());
        let c = split_corpus(docs, 0.1, 8).unwrap();
        assert_ne!(a.validation, c.validation);
    }
}
