mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use proptest::prelude::*;
use rand::Rng;

use intervene::corpus::{DataBatch, Document};
use intervene::matcher::{
    build_bm25, f_match, find_occurrences, ingest_dense_scores, match_bm25, match_cooccurrence, match_occurrence,
    score_bm25, Analyzer, Bm25Params, DocScore, EntitySearch, MatchError, MatchMethod, MatchSet, Selection,
};

use common::bm25::{bm25_corpus, oracle_bm25};
use common::docs;

fn one_doc(text: &str) -> DataBatch {
    DataBatch::new(
        1,
        vec![Document {
            doc_id: "d".into(),
            batch_id: 1,
            token_start: 0,
            token_end: 1,
            text: text.into(),
        }],
        vec![5u32],
    )
    .unwrap()
}

fn terms(ts: &[&str]) -> Vec<String> {
    ts.iter().map(|t| t.to_string()).collect()
}

#[test]
fn capital_city_positions() {
    let hits = find_occurrences(
        &one_doc("The capital city of France is Paris"),
        &terms(&["Paris", "France"]),
        EntitySearch::default(),
    );
    let got: Vec<(&str, usize, usize)> = hits.iter().map(|h| (h.term.as_str(), h.char_start, h.char_end)).collect();
    assert_eq!(got, vec![("France", 20, 26), ("Paris", 30, 35)]);
}

#[test]
fn repeated_term_is_found_twice() {
    let hits = find_occurrences(
        &one_doc("Microsoft Windows is a product of Microsoft"),
        &terms(&["Microsoft"]),
        EntitySearch::default(),
    );
    let starts: Vec<usize> = hits.iter().map(|h| h.char_start).collect();
    assert_eq!(starts, vec![0, 34]);
}

#[test]
fn hits_slice_the_text_exactly() {
    let mut rng = common::rng(11);
    let batch = common::text_batch(&mut rng, 1, 300, 10);
    let words = terms(&common::WORDS);
    for h in find_occurrences(&batch, &words, EntitySearch::default()) {
        let doc = batch.get(&h.doc_id).unwrap();
        let slice: String = doc.text.chars().skip(h.char_start).take(h.char_end - h.char_start).collect();
        assert_eq!(slice, h.term);
        assert_eq!(h.char_end - h.char_start, h.term.chars().count());
    }
}

#[test]
fn find_occurrences_equals_naive_scan() {
    let mut rng = common::rng(12);
    let batch = common::text_batch(&mut rng, 1, 2000, 12);
    let words = terms(&common::WORDS);
    let got: BTreeSet<(String, usize, usize, String)> = find_occurrences(&batch, &words, EntitySearch::default())
        .into_iter()
        .map(|h| (h.doc_id, h.char_start, h.char_end, h.term))
        .collect();
    let mut want = BTreeSet::new();
    for d in batch.documents() {
        for w in &words {
            for (s, e) in common::naive_hits(&d.text, w) {
                want.insert((d.doc_id.clone(), s, e, w.clone()));
            }
        }
    }
    assert_eq!(got, want);
}

#[test]
fn word_boundary_mode_drops_embedded_hits() {
    let batch = one_doc("kaso ka so,ka");
    let opts = EntitySearch {
        word_boundary: true,
        window: None,
    };
    let starts: Vec<usize> = find_occurrences(&batch, &terms(&["ka"]), opts).iter().map(|h| h.char_start).collect();
    assert_eq!(starts, vec![5, 11]);
}

#[test]
fn product_sentence_cooccurs() {
    let batch = one_doc("Picasa is a product of Google");
    let set = match_cooccurrence(&batch, &[common::entity_item("x", "Picasa", "Google")], EntitySearch::default());
    assert_eq!(set.match_count("x"), 1);
    assert_eq!(set.docs("x")[0].score, 1.0);
}

#[test]
fn overlapping_windows_do_not_cooccur() {
    let item = common::entity_item("x", "Microsoft Windows", "Microsoft");
    let batch = docs(&["Microsoft Windows launched", "Microsoft Windows is a product of Microsoft"]);
    let set = match_cooccurrence(&batch, std::slice::from_ref(&item), EntitySearch::default());
    let matched: Vec<&str> = set.docs("x").iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(matched, vec!["d001"]);
}

#[test]
fn occurrence_needs_either_entity() {
    let item = common::entity_item("x", "France", "Paris");
    let batch = docs(&["All about France", "nothing here", "Paris at night"]);
    let set = match_occurrence(&batch, std::slice::from_ref(&item), EntitySearch::default());
    let matched: Vec<&str> = set.docs("x").iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(matched, vec!["d000", "d002"]);
}

#[test]
fn items_without_entities_are_skipped_and_reported() {
    let mut item = common::entity_item("x", "France", "Paris");
    item.object = None;
    let batch = docs(&["France and Paris"]);
    let set = match_cooccurrence(&batch, &[item, common::entity_item("y", "France", "Paris")], EntitySearch::default());
    assert_eq!(set.skipped(), ["x".to_string()]);
    assert!(!set.covers("x"));
    assert_eq!(set.match_count("y"), 1);
}

#[test]
fn same_subject_and_object_need_two_occurrences() {
    let item = common::entity_item("x", "ka", "ka");
    let batch = docs(&["ka", "ka ka", "kaka"]);
    let set = match_cooccurrence(&batch, std::slice::from_ref(&item), EntitySearch::default());
    let matched: Vec<&str> = set.docs("x").iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(matched, vec!["d001", "d002"]);
}

#[test]
fn f_match_is_a_disjunction() {
    let mut entries = BTreeMap::new();
    entries.insert("A".to_string(), vec![DocScore { doc_id: "d1".into(), score: 1.0 }]);
    entries.insert("B".to_string(), vec![DocScore { doc_id: "d2".into(), score: 1.0 }]);
    let set = MatchSet::new(MatchMethod::Occurrence, Selection::All, None, entries).unwrap();
    let both = f_match(&set, &["A".to_string(), "B".to_string()]);
    assert_eq!(both, BTreeSet::from(["d1".to_string(), "d2".to_string()]));
    assert!(f_match(&set, &Vec::<String>::new()).is_empty());
}

#[test]
fn match_sets_round_trip_through_files() {
    let mut rng = common::rng(13);
    let batch = common::text_batch(&mut rng, 7, 100, 6);
    let items = common::random_items(&mut rng, 20);
    let dir = tempfile::tempdir().unwrap();
    for set in [
        match_cooccurrence(&batch, &items, EntitySearch::default()),
        match_bm25(&batch, &items, &Analyzer::standard(), Bm25Params::default(), Selection::TopK(5)).unwrap(),
    ] {
        let path = dir.path().join(format!("{}.jsonl", set.method));
        set.write(&path, Some("abc")).unwrap();
        assert_eq!(MatchSet::read(&path).unwrap(), set);
    }
}

fn write_dense(lines: &[&str]) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    fs::write(f.path(), lines.join("\n")).unwrap();
    f
}

#[test]
fn dense_scores_are_grouped_per_item() {
    let items = [common::entity_item("q1", "a", "b")];
    let f = write_dense(&[
        r#"{"item_id":"q1","doc_id":"d2","score":0.5}"#,
        r#"{"item_id":"q1","doc_id":"d1","score":0.9}"#,
    ]);
    let set = ingest_dense_scores(f.path(), &items, Selection::TopK(1000)).unwrap();
    assert_eq!(set.method, MatchMethod::Dense);
    let got: Vec<(&str, f64)> = set.docs("q1").iter().map(|d| (d.doc_id.as_str(), d.score)).collect();
    assert_eq!(got, vec![("d1", 0.9), ("d2", 0.5)]);
}

#[test]
fn dense_errors_name_the_problem() {
    let items = [common::entity_item("q1", "a", "b")];
    let unknown = write_dense(&[r#"{"item_id":"q9","doc_id":"d1","score":0.1}"#]);
    let err = ingest_dense_scores(unknown.path(), &items, Selection::All).unwrap_err();
    assert!(matches!(&err, MatchError::UnknownItem { item_id, .. } if item_id == "q9"));

    let dup = write_dense(&[
        r#"{"item_id":"q1","doc_id":"d1","score":0.1}"#,
        r#"{"item_id":"q1","doc_id":"d1","score":0.2}"#,
    ]);
    let err = ingest_dense_scores(dup.path(), &items, Selection::All).unwrap_err();
    assert!(err.to_string().contains("duplicate score"));

    let bad = write_dense(&[r#"{"item_id":"q1","doc_id":"d1","score":0.1}"#, "{not json"]);
    let err = ingest_dense_scores(bad.path(), &items, Selection::All).unwrap_err();
    assert!(matches!(err, MatchError::Malformed { line: 2, .. }));
}

#[test]
fn dense_threshold_and_top_k() {
    let items = [common::entity_item("q1", "a", "b")];
    let f = write_dense(&[
        r#"{"item_id":"q1","doc_id":"d1","score":0.9}"#,
        r#"{"item_id":"q1","doc_id":"d2","score":0.5}"#,
        r#"{"item_id":"q1","doc_id":"d3","score":0.2}"#,
    ]);
    assert_eq!(ingest_dense_scores(f.path(), &items, Selection::TopK(2)).unwrap().match_count("q1"), 2);
    assert_eq!(ingest_dense_scores(f.path(), &items, Selection::Threshold(0.5)).unwrap().match_count("q1"), 2);
    assert_eq!(ingest_dense_scores(f.path(), &items, Selection::Threshold(0.95)).unwrap().match_count("q1"), 0);
}

// BM25

#[test]
fn bm25_matches_the_okapi_formula() {
    let batch = bm25_corpus(21, 100);
    let index = build_bm25(&batch, &Analyzer::standard(), Bm25Params::default()).unwrap();
    let mut rng = common::rng(22);
    for _ in 0..50 {
        let q = batch.documents()[rng.random_range(0..100)].text.clone() + " Paris missing";
        let want = oracle_bm25(&batch, &q, 1.5, 0.75);
        let got = score_bm25(&index, &q, 1000).unwrap();
        assert_eq!(got.len(), want.len());
        for (doc, s) in &got {
            assert!((s - want[doc]).abs() < 1e-9, "{doc}: {s} vs {}", want[doc]);
        }
        for w in got.windows(2) {
            assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }
}

#[test]
fn bm25_index_statistics() {
    let batch = docs(&["a b c", "a a", "d"]);
    let index = build_bm25(&batch, &Analyzer::standard(), Bm25Params::default()).unwrap();
    assert_eq!(index.doc_count(), 3);
    assert!((index.avg_len() - 2.0).abs() < 1e-12);
    assert_eq!(index.doc_freq("a"), 2);
    assert!(build_bm25(&docs(&[]), &Analyzer::standard(), Bm25Params::default()).is_err());
}

#[test]
fn bm25_edge_queries() {
    let batch = docs(&["the capital of France is Paris"]);
    let index = build_bm25(&batch, &Analyzer::standard(), Bm25Params::default()).unwrap();
    assert!(score_bm25(&index, "zebra", 5).unwrap().is_empty());
    assert!(score_bm25(&index, "!!! ,,,", 5).unwrap().is_empty());
    assert_eq!(score_bm25(&index, "the capital of France is Paris", 5).unwrap()[0].0, "d000");
    assert!(score_bm25(&index, "Paris", 0).is_err());
}

#[test]
fn bm25_rebuilds_identically() {
    let batch = bm25_corpus(23, 300);
    let a = build_bm25(&batch, &Analyzer::standard(), Bm25Params::default()).unwrap();
    let b = build_bm25(&batch, &Analyzer::standard(), Bm25Params::default()).unwrap();
    assert_eq!(a, b);
    for q in ["the city", "France Paris capital", "of of of"] {
        assert_eq!(score_bm25(&a, q, 50).unwrap(), score_bm25(&b, q, 50).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cooccurrence_and_occurrence_equal_oracles(seed in any::<u64>(), n_docs in 1usize..80, n_items in 1usize..12) {
        let mut rng = common::rng(seed);
        let batch = common::text_batch(&mut rng, 1, n_docs, 8);
        let items = common::random_items(&mut rng, n_items);
        let cooc = match_cooccurrence(&batch, &items, EntitySearch::default());
        let occ = match_occurrence(&batch, &items, EntitySearch::default());
        prop_assert_eq!(common::match_map(&cooc), common::naive_match(&batch, &items, common::naive_cooccurs));
        prop_assert_eq!(common::match_map(&occ), common::naive_match(&batch, &items, common::naive_occurs));
    }

    #[test]
    fn occurrence_dominates_cooccurrence(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let batch = common::text_batch(&mut rng, 1, 60, 8);
        let items = common::random_items(&mut rng, 10);
        let cooc = common::match_map(&match_cooccurrence(&batch, &items, EntitySearch::default()));
        let occ = common::match_map(&match_occurrence(&batch, &items, EntitySearch::default()));
        for (id, docs) in cooc {
            prop_assert!(docs.is_subset(&occ[&id]));
        }
    }

    #[test]
    fn every_cooccurrence_has_a_disjoint_pair_on_rescan(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let batch = common::text_batch(&mut rng, 1, 60, 8);
        let items = common::random_items(&mut rng, 10);
        let set = match_cooccurrence(&batch, &items, EntitySearch::default());
        for item in &items {
            let (s, o) = (item.subject.clone().unwrap(), item.object.clone().unwrap());
            for d in set.docs(&item.item_id) {
                let hits = find_occurrences(&batch, &[s.clone(), o.clone()], EntitySearch::default());
                let of = |t: &str| -> Vec<(usize, usize)> {
                    hits.iter().filter(|h| h.doc_id == d.doc_id && h.term == t).map(|h| (h.char_start, h.char_end)).collect()
                };
                let (hs, ho) = (of(&s), of(&o));
                prop_assert!(hs.iter().any(|&(a, b)| ho.iter().any(|&(c, e)| b <= c || e <= a)));
            }
        }
    }

    #[test]
    fn f_match_equals_double_loop_and_is_monotone(seed in any::<u64>(), n_items in 0usize..15) {
        let mut rng = common::rng(seed);
        let mut entries = BTreeMap::new();
        for i in 0..n_items {
            let k = rng.random_range(0..6);
            let docs: BTreeSet<u32> = (0..k).map(|_| rng.random_range(0..30)).collect();
            entries.insert(
                format!("i{i}"),
                docs.into_iter().map(|d| DocScore { doc_id: format!("d{d}"), score: 1.0 }).collect(),
            );
        }
        let set = MatchSet::new(MatchMethod::Occurrence, Selection::All, None, entries.clone()).unwrap();
        let targets: Vec<String> = entries.keys().filter(|_| rng.random_bool(0.5)).cloned().collect();
        let mut want = BTreeSet::new();
        for t in &targets {
            for (id, docs) in &entries {
                if id == t {
                    for d in docs {
                        want.insert(d.doc_id.clone());
                    }
                }
            }
        }
        let got = f_match(&set, &targets);
        prop_assert_eq!(&got, &want);
        let all: Vec<String> = entries.keys().cloned().collect();
        prop_assert!(got.is_subset(&f_match(&set, &all)));
    }

    #[test]
    fn boolean_sets_carry_unit_scores_without_duplicates(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let batch = common::text_batch(&mut rng, 1, 50, 8);
        let items = common::random_items(&mut rng, 8);
        for set in [
            match_cooccurrence(&batch, &items, EntitySearch::default()),
            match_occurrence(&batch, &items, EntitySearch::default()),
        ] {
            for docs in set.entries().values() {
                prop_assert!(docs.iter().all(|d| d.score == 1.0));
                let unique: BTreeSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
                prop_assert_eq!(unique.len(), docs.len());
            }
        }
    }
}
