mod common;

use corpusforge::discriminator::{filter, CharNgramModel, Discriminator, FilterThresholds};
use corpusforge::Document;

use common::{discriminator, normalized_paragraphs};

fn routing_set() -> (Vec<String>, Vec<String>) {
    let persian = normalized_paragraphs("persian_heldout.txt");
    let arabic: Vec<String> = normalized_paragraphs("arabic.txt").into_iter().take(10).collect();
    assert_eq!((persian.len(), arabic.len()), (10, 10));
    (persian, arabic)
}

fn accuracy(d: &Discriminator, persian: &[String], arabic: &[String]) -> f64 {
    let right = persian.iter().filter(|t| d.judge(t).is_keep()).count()
        + arabic.iter().filter(|t| !d.judge(t).is_keep()).count();
    right as f64 / (persian.len() + arabic.len()) as f64
}

#[test]
fn shipped_thresholds_route_fixture() {
    let (persian, arabic) = routing_set();
    let acc = accuracy(&discriminator(), &persian, &arabic);
    assert!(acc >= 0.9, "routing accuracy {acc}");
}

#[test]
fn shipped_manifest_matches_built_in_thresholds() {
    let text = std::fs::read_to_string(common::fixture("discriminator_manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    let t: FilterThresholds = serde_json::from_value(m["thresholds"].clone()).unwrap();
    assert_eq!(t, FilterThresholds::default());
    assert!(m["accuracy"].as_f64().unwrap() >= 0.9);
}

#[test]
fn raising_a_threshold_only_removes_documents() {
    let base = discriminator();
    let (persian, arabic) = routing_set();
    let docs: Vec<Document> = persian
        .iter()
        .chain(&arabic)
        .chain(&common::paragraphs("arabic.txt"))
        .enumerate()
        .map(|(i, t)| Document::new(format!("d{i}"), t.clone()))
        .collect();
    let kept_ids = |t: FilterThresholds| -> Vec<String> {
        let d = Discriminator { thresholds: t, ..base.clone() };
        filter(docs.clone(), &d).kept.into_iter().map(|d| d.id).collect()
    };
    let steps: Vec<f64> = (0..40).map(|i| -6.0 + 0.125 * i as f64).collect();
    for w in steps.windows(2) {
        let loose = kept_ids(FilterThresholds { min_lm: w[0], ..base.thresholds });
        let tight = kept_ids(FilterThresholds { min_lm: w[1], ..base.thresholds });
        assert!(tight.iter().all(|id| loose.contains(id)), "min_lm {} -> {}", w[0], w[1]);
    }
    for w in [0.0, 0.05, 0.1, 0.2, 0.3, 0.5].windows(2) {
        let loose = kept_ids(FilterThresholds { min_stopword: w[0], ..base.thresholds });
        let tight = kept_ids(FilterThresholds { min_stopword: w[1], ..base.thresholds });
        assert!(tight.iter().all(|id| loose.contains(id)));
    }
}

#[test]
fn model_file_round_trips() {
    let m = discriminator().model;
    let back = CharNgramModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.log_prob("ای", 'ن'), m.log_prob("ای", 'ن'));
}
