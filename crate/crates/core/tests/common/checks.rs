use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use corpusforge::manifest::{manifest_path, PipelineManifest};
use corpusforge::masking::{PretrainingExample, IGNORE_LABEL};
use corpusforge::tokenizer::{EncodedSequence, CLS_ID, NUM_SPECIALS, SEP_ID};
use corpusforge::Document;

use super::fixture;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_corpusforge"));
    for var in ["CORPUSFORGE_THREADS", "CORPUSFORGE_SEED", "CORPUSFORGE_CONFIG"] {
        c.env_remove(var);
    }
    c
}

fn ok(dir: &Path, args: &[&str]) {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Checks one example against the document it came from and returns the
/// number of labeled positions.
pub fn check_example(ex: &PretrainingExample, doc: &EncodedSequence, max_len: usize) -> usize {
    let n = ex.input_ids.len();
    assert!(n <= max_len);
    assert_eq!(ex.labels.len(), n);
    assert_eq!(ex.word_ids.len(), n);
    assert_eq!((ex.input_ids[0], ex.input_ids[n - 1]), (CLS_ID, SEP_ID));
    assert_eq!((ex.labels[0], ex.labels[n - 1]), (IGNORE_LABEL, IGNORE_LABEL));
    assert_eq!((ex.word_ids[0], ex.word_ids[n - 1]), (None, None));
    // The body is a contiguous window of the document, found by its labels
    // and unchanged positions.
    let body = &ex.word_ids[1..n - 1];
    assert!(body.iter().all(Option::is_some), "special inside body");
    let original: Vec<u32> = (1..n - 1)
        .map(|i| if ex.labels[i] == IGNORE_LABEL { ex.input_ids[i] } else { ex.labels[i] as u32 })
        .collect();
    let start = doc
        .ids
        .windows(original.len())
        .position(|w| w == original.as_slice())
        .expect("example is a window of its document");
    assert!(start == 0 || doc.word_ids[start] != doc.word_ids[start - 1], "starts mid-word");

    let mut labeled: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for i in 1..n - 1 {
        let w = ex.word_ids[i].unwrap();
        let e = labeled.entry(w).or_default();
        e.1 += 1;
        if ex.labels[i] != IGNORE_LABEL {
            e.0 += 1;
            assert!(ex.labels[i] >= NUM_SPECIALS as i64, "special token labeled");
        } else {
            assert_eq!(ex.input_ids[i], original[i - 1]);
        }
    }
    for (w, (hit, total)) in &labeled {
        assert!(*hit == 0 || hit == total, "word {w} partially labeled");
    }
    assert!(labeled.values().any(|(h, _)| *h > 0), "nothing labeled");
    ex.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()
}

/// Clean Persian paragraphs as a corpus, for training the noise model.
fn write_clean(dir: &Path) {
    let docs: Vec<Document> = super::paragraphs("persian_train.txt")
        .into_iter()
        .enumerate()
        .map(|(i, t)| Document::new(format!("clean-{i}"), t))
        .collect();
    corpusforge::write_corpus(&docs, dir.join("clean.jsonl")).unwrap();
}

/// Runs every stage on the fixture corpus inside `dir` and returns the
/// content digest of each stage's manifest.
pub fn pipeline(dir: &Path, threads: &str) -> BTreeMap<&'static str, String> {
    write_clean(dir);
    let blog = fixture("blog_corpus.jsonl");
    let blog = blog.to_str().unwrap();
    let t = ["--threads", threads];
    let steps: Vec<(&str, Vec<&str>, &str)> = vec![
        ("split", vec!["corpus", "split", "--seed", "3", "--fraction", "0.05", blog, "train.jsonl", "val.jsonl"], "val.jsonl"),
        ("normalize-clean", vec!["normalize", "clean.jsonl", "clean.norm.jsonl"], "clean.norm.jsonl"),
        ("normalize", vec!["normalize", "train.jsonl", "norm.jsonl"], "norm.jsonl"),
        ("train-discriminator", vec!["discriminator", "train", "clean.norm.jsonl", "model.json"], "model.json"),
        ("filter", vec!["discriminator", "filter", "--model", "model.json", "norm.jsonl", "keep.jsonl", "reject.jsonl"], "keep.jsonl"),
        ("train-tokenizer", vec!["tokenizer", "train", "--vocab-size", "3000", "keep.jsonl", "vocab.txt"], "vocab.txt"),
        ("encode", vec!["tokenizer", "encode", "--vocab", "vocab.txt", "keep.jsonl", "enc.jsonl"], "enc.jsonl"),
        ("mask-0", vec!["mask", "build", "--vocab", "vocab.txt", "--epoch", "0", "keep.jsonl", "e0.jsonl"], "e0.jsonl"),
        ("mask-1", vec!["mask", "build", "--vocab", "vocab.txt", "--epoch", "1", "keep.jsonl", "e1.jsonl"], "e1.jsonl"),
        (
            "tokstats",
            vec!["tokstats", "compare", "--vocab", "v=vocab.txt", "--dataset", "keep=keep.jsonl", "--out-csv", "t.csv", "--out-json", "t.json"],
            "t.csv",
        ),
    ];
    let mut digests = BTreeMap::new();
    for (name, args, artifact) in steps {
        let args: Vec<&str> = t.iter().copied().chain(args).collect();
        ok(dir, &args);
        let m = PipelineManifest::load(manifest_path(dir.join(artifact))).unwrap();
        digests.insert(name, m.content_digest());
    }
    digests
}

pub fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(&p).unwrap()))
        .collect()
}
