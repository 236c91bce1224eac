//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use corpusforge::discriminator::{filter, Discriminator, FilterThresholds};
use corpusforge::masking::{build_epoch, EpochBuilder, MaskStats, MaskingConfig, IGNORE_LABEL};
use corpusforge::normalizer::{normalize, normalize_text, NormalizationConfig};
use corpusforge::tokenizer::{
    train_wordpiece, Tokenizer, TrainerConfig, Vocab, CONTINUATION_PREFIX, SPECIAL_TOKENS, UNK_ID,
};
use corpusforge::tokstats::{compare, count_dataset, read_dataset, DatasetSpec};
use corpusforge::Document;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::checks::{check_example, files, pipeline};
use common::{blog_docs, clean_blog, discriminator, fixture, greedy_oracle, normalized_paragraphs, oracle, word_counts};

type Outcome = Result<String, String>;
type Suite = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(start.elapsed() < limit, || format!("took {secs:.1}s, limit {}s", limit.as_secs()))?;
    Ok(secs)
}

/// Mixed-script strings with the noise the normalizer targets.
fn noisy_string(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[&str] = &[
        "ي", "ك", "ى", "ة", "أ", "إ", "ی", "ک", "ا", "ب", "س", "ل", "م", "ن", "و", "ه", "ـ", "\u{064E}", "\u{0651}",
        "\u{200C}", "\u{200D}", "\u{200F}", "\u{FEFF}", "ﻻ", "ﺏ", "ﻙ", "0", "7", "۱", "۹", "٣", "٠", " ", " ", ".", "!",
        "a", "Z", "é", "😀", "<", ">", "N", "U", "M", "<NUM>", "ااا", "!!!!",
    ];
    let len = rng.random_range(0..40);
    let mut s = String::new();
    for _ in 0..len {
        let piece = *POOL.choose(rng).unwrap();
        let reps = if rng.random_bool(0.15) { rng.random_range(2..6) } else { 1 };
        for _ in 0..reps {
            s.push_str(piece);
        }
    }
    s
}

fn normalization_suite() -> Outcome {
    let start = Instant::now();
    let cfg = NormalizationConfig::default();
    ensure(normalize_text("\u{064A}", &cfg).text == "\u{06CC}", || "U+064A not mapped to U+06CC".into())?;
    ensure(normalize_text("\u{0643}", &cfg).text == "\u{06A9}", || "U+0643 not mapped to U+06A9".into())?;
    ensure(normalize_text("كتاب علي", &cfg).text == "کتاب علی", || "mapping inside words".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..10_000 {
        let s = noisy_string(&mut rng);
        let once = normalize_text(&s, &cfg).text;
        let twice = normalize_text(&once, &cfg);
        ensure(twice.text == once && twice.stats.is_zero(), || {
            format!("string {i} not idempotent: {s:?} -> {once:?} -> {:?}", twice.text)
        })?;
    }
    let secs = within(Duration::from_secs(5), start)?;
    Ok(format!("2 mappings exact, 10000 strings idempotent, {secs:.2}s"))
}

fn tokenizer_suite() -> Outcome {
    let start = Instant::now();
    let cfg = NormalizationConfig::default();
    let docs: Vec<Document> = blog_docs().into_iter().map(|d| normalize(d, &cfg).0).collect();
    let config = TrainerConfig::default();
    let counts = word_counts(&docs, &config);
    let vocab = train_wordpiece(&counts, &config).map_err(|e| e.to_string())?;
    let again = train_wordpiece(&word_counts(&docs, &config), &config).map_err(|e| e.to_string())?;
    ensure(vocab.to_text() == again.to_text(), || "two training runs differ".into())?;

    for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
        ensure(vocab.token(i as u32) == Some(*s), || format!("special {s} not at id {i}"))?;
    }
    let unique: BTreeSet<&String> = vocab.tokens().iter().collect();
    ensure(unique.len() == vocab.len(), || "duplicate tokens".into())?;
    let mut alphabet = BTreeSet::new();
    for d in &docs {
        for w in config.pre_tokenizer.pre_tokenize(&d.text) {
            if w.text != "<NUM>" {
                alphabet.extend(w.text.chars());
            }
        }
    }
    for c in &alphabet {
        let both = vocab.id(&c.to_string()).is_some() && vocab.id(&format!("{CONTINUATION_PREFIX}{c}")).is_some();
        ensure(both, || format!("alphabet char {c:?} not covered"))?;
    }

    let tok = Tokenizer::with_pre_tokenizer(vocab, config.pre_tokenizer.clone());
    let letters: Vec<char> = alphabet.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10_000 {
        let words: Vec<String> = (0..rng.random_range(1..15))
            .map(|_| (0..rng.random_range(1..12)).map(|_| *letters.choose(&mut rng).unwrap()).collect())
            .collect();
        let text = words.join(" ");
        ensure(!tok.encode(&text, true).ids.contains(&UNK_ID), || format!("UNK in {text:?}"))?;
    }

    const TOY: [&str; 7] = ["a", "ab", "abc", "c", "##b", "##c", "##bc"];
    let toy = Tokenizer::new(
        Vocab::from_tokens(SPECIAL_TOKENS.iter().chain(&TOY).map(|s| s.to_string()).collect()).unwrap(),
    );
    let mut words = vec![String::new()];
    let mut checked = 0;
    for _ in 0..8 {
        words = words.iter().flat_map(|w| ['a', 'b', 'c'].map(|c| format!("{w}{c}"))).collect();
        for w in &words {
            let got: Vec<String> = toy
                .encode(w, false)
                .ids
                .iter()
                .map(|&i| toy.vocab().token(i).unwrap().to_string())
                .collect();
            let want = greedy_oracle(w, &TOY).unwrap_or_else(|| vec!["[UNK]".into()]);
            ensure(got == want, || format!("{w:?}: greedy {got:?}, oracle {want:?}"))?;
            checked += 1;
        }
    }
    let secs = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "vocab {} tokens, alphabet {}, 10000 sentences UNK-free, {checked} toy words match oracle, reproducible, {secs:.1}s",
        tok.vocab().len(),
        alphabet.len()
    ))
}

fn masking_suite() -> Outcome {
    let start = Instant::now();
    let tok = common::blog_tokenizer();
    let docs = clean_blog();
    let config = MaskingConfig::default();
    let encoded: Vec<_> = docs.iter().map(|d| tok.encode(&d.text, false)).collect();

    let mut stats = MaskStats::default();
    let (mut examples, mut labeled, mut body) = (0usize, 0usize, 0usize);
    let mut epochs = Vec::new();
    let mut epoch = 0;
    while examples < 50_000 {
        let b = EpochBuilder::new(tok, config.clone(), epoch).map_err(|e| e.to_string())?;
        let mut per_doc = Vec::with_capacity(docs.len());
        for (d, enc) in docs.iter().zip(&encoded) {
            let exs = b.examples_for(d, &mut stats);
            for ex in &exs {
                let r = catch_unwind(AssertUnwindSafe(|| check_example(ex, enc, config.max_len)));
                labeled += r.map_err(|_| format!("closure or faithfulness broken in {} epoch {epoch}", d.id))?;
                body += ex.input_ids.len() - 2;
                examples += 1;
            }
            if epoch < 2 {
                per_doc.push(exs);
            }
        }
        if epoch < 2 {
            epochs.push(per_doc);
        }
        epoch += 1;
    }
    let frac = labeled as f64 / body as f64;
    ensure((0.15..=0.175).contains(&frac), || format!("masked fraction {frac:.4}"))?;

    let decided = stats.masked + stats.randomized + stats.kept;
    ensure(decided >= 100_000, || format!("only {decided} selections"))?;
    let p = |x: u64| x as f64 / decided as f64;
    let props = (p(stats.masked), p(stats.randomized), p(stats.kept));
    let ok = (props.0 - 0.8).abs() <= 0.02 && (props.1 - 0.1).abs() <= 0.02 && (props.2 - 0.1).abs() <= 0.02;
    ensure(ok, || format!("corruption proportions {props:?}"))?;

    let (mut multi, mut differ) = (0, 0);
    for (a, b) in epochs[0].iter().zip(&epochs[1]) {
        for (x, y) in a.iter().zip(b) {
            if x.word_ids.iter().flatten().collect::<BTreeSet<_>>().len() < 2 {
                continue;
            }
            multi += 1;
            let pos = |e: &corpusforge::masking::PretrainingExample| -> Vec<usize> {
                (0..e.labels.len()).filter(|&i| e.labels[i] != IGNORE_LABEL).collect()
            };
            if x.input_ids.len() != y.input_ids.len() || pos(x) != pos(y) {
                differ += 1;
            }
        }
    }
    let share = differ as f64 / multi as f64;
    ensure(share > 0.99, || format!("epochs differ on {differ} of {multi}"))?;

    let b = EpochBuilder::new(tok, config.clone(), 5).map_err(|e| e.to_string())?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    build_epoch(docs.iter().cloned(), &b, &mut x).map_err(|e| e.to_string())?;
    build_epoch(docs.iter().cloned(), &b, &mut y).map_err(|e| e.to_string())?;
    ensure(x == y, || "regeneration not byte-identical".into())?;

    let secs = within(Duration::from_secs(180), start)?;
    Ok(format!(
        "{examples} examples closed and faithful, masked fraction {frac:.4}, proportions ({:.3}, {:.3}, {:.3}) over {decided}, \
         epochs differ on {differ}/{multi}, regeneration identical, {secs:.1}s",
        props.0, props.1, props.2
    ))
}

fn tokstats_datasets() -> Vec<DatasetSpec> {
    let spec = |name: &str, file: &str, fields: &[&str]| DatasetSpec {
        name: name.into(),
        path: fixture(file),
        fields: fields.iter().map(|f| f.to_string()).collect(),
    };
    vec![
        spec("blog", "blog_corpus.jsonl", &["text"]),
        spec("sentences", "tokstats/sentences.jsonl", &["text"]),
        spec("train", "tokstats/paragraphs_train.jsonl", &["text"]),
        spec("heldout", "tokstats/paragraphs_heldout.jsonl", &["text"]),
        spec("pairs", "tokstats/pairs.jsonl", &["premise", "hypothesis"]),
    ]
}

fn tokstats_suite() -> Outcome {
    let start = Instant::now();
    let tok = common::blog_tokenizer();
    let mut halves = Vec::new();
    for spec in tokstats_datasets() {
        let records = read_dataset(&spec).map_err(|e| e.to_string())?;
        let counts: Vec<u32> = records
            .iter()
            .map(|r| (r.iter().map(|t| tok.encode(t, false).ids.len() + 1).sum::<usize>() + 1) as u32)
            .collect();
        let d = count_dataset(&records, tok, spec.pair_mode()).map_err(|e| e.to_string())?;
        let want = oracle::hinges(&counts);
        ensure((d.q1, d.median, d.q3) == want, || {
            format!("{}: streaming {:?} vs oracle {want:?}", spec.name, (d.q1, d.median, d.q3))
        })?;
        if d.n % 2 == 0 && d.median.fract() == 0.5 {
            halves.push(format!("{}={}", spec.name, d.median));
        }
    }
    ensure(!halves.is_empty(), || "no even-n half-integer median among fixtures".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut vocabs = Vec::new();
    for (name, size) in [("base", 400), ("extended", 2500)] {
        let config = TrainerConfig {
            vocab_size: size,
            ..TrainerConfig::default()
        };
        let v = train_wordpiece(&word_counts(clean_blog(), &config), &config).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{name}.txt"));
        v.save(&path).map_err(|e| e.to_string())?;
        vocabs.push((name.to_string(), path));
    }
    let base = Vocab::load(&vocabs[0].1).unwrap();
    let ext = Vocab::load(&vocabs[1].1).unwrap();
    ensure(ext.tokens()[..base.len()] == *base.tokens(), || "extended vocab does not extend base".into())?;
    let cmp = compare(&vocabs, &tokstats_datasets(), &Default::default());
    for spec in tokstats_datasets() {
        let a = cmp.cell("base", &spec.name).unwrap().result.as_ref().map_err(|e| e.to_string())?;
        let b = cmp.cell("extended", &spec.name).unwrap().result.as_ref().map_err(|e| e.to_string())?;
        ensure(b.median <= a.median, || format!("{}: extended {} > base {}", spec.name, b.median, a.median))?;
    }
    let secs = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "5 datasets match sort oracle, half-integer medians [{}], nested medians monotone, {secs:.1}s",
        halves.join(", ")
    ))
}

fn discriminator_suite() -> Outcome {
    let disc = discriminator();
    let persian = normalized_paragraphs("persian_heldout.txt");
    let arabic: Vec<String> = normalized_paragraphs("arabic.txt").into_iter().take(10).collect();
    let right = persian.iter().filter(|t| disc.judge(t).is_keep()).count()
        + arabic.iter().filter(|t| !disc.judge(t).is_keep()).count();
    let acc = right as f64 / (persian.len() + arabic.len()) as f64;
    ensure(acc >= 0.9, || format!("routing accuracy {acc}"))?;

    let docs: Vec<Document> = persian
        .iter()
        .chain(&arabic)
        .chain(clean_blog().iter().map(|d| &d.text).take(200))
        .enumerate()
        .map(|(i, t)| Document::new(format!("d{i}"), t.clone()))
        .collect();
    let kept = |t: FilterThresholds| -> BTreeSet<String> {
        let d = Discriminator { thresholds: t, ..disc.clone() };
        filter(docs.clone(), &d).kept.into_iter().map(|d| d.id).collect()
    };
    let base = disc.thresholds;
    for i in 0..40 {
        let (lo, hi) = (-6.0 + 0.125 * i as f64, -6.0 + 0.125 * (i + 1) as f64);
        let loose = kept(FilterThresholds { min_lm: lo, ..base });
        let tight = kept(FilterThresholds { min_lm: hi, ..base });
        ensure(tight.is_subset(&loose), || format!("min_lm {lo} -> {hi} adds documents"))?;
    }
    for w in [0.0, 0.1, 0.2, 0.3, 0.5].windows(2) {
        let loose = kept(FilterThresholds { min_stopword: w[0], ..base });
        let tight = kept(FilterThresholds { min_stopword: w[1], ..base });
        ensure(tight.is_subset(&loose), || format!("min_stopword {} -> {} adds documents", w[0], w[1]))?;
    }
    Ok(format!("routing accuracy {acc:.2} on 10+10, kept sets nested"))
}

fn determinism_suite() -> Outcome {
    let start = Instant::now();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let run = |i: usize, threads: &str| {
        catch_unwind(AssertUnwindSafe(|| pipeline(dirs[i].path(), threads))).map_err(|e| {
            e.downcast_ref::<String>().cloned().unwrap_or_else(|| "pipeline failed".into())
        })
    };
    let a = run(0, "1")?;
    let b = run(1, "1")?;
    let c = run(2, "8")?;
    ensure(a == b, || "manifest digests differ between runs".into())?;
    ensure(a == c, || "manifest digests differ between --threads 1 and 8".into())?;
    let fa = files(dirs[0].path());
    ensure(fa == files(dirs[1].path()), || "outputs differ between runs".into())?;
    ensure(fa == files(dirs[2].path()), || "outputs differ between thread counts".into())?;
    Ok(format!(
        "{} stages, identical digests twice and with --threads 8, {:.1}s",
        a.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let suites: [(&str, Suite); 6] = [
        ("normalization", normalization_suite),
        ("tokenizer", tokenizer_suite),
        ("masking", masking_suite),
        ("tokstats", tokstats_suite),
        ("discriminator", discriminator_suite),
        ("end-to-end determinism", determinism_suite),
    ];
    let mut failed = 0;
    for (name, suite) in suites {
        let outcome = catch_unwind(suite).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
