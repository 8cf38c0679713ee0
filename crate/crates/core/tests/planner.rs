mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::Rng;

use intervene::corpus::{DataBatch, Document};
use intervene::matcher::{f_match, match_bm25, match_cooccurrence, Analyzer, Bm25Params, EntitySearch, Selection};
use intervene::planner::{
    apply_plan, plan_promote, plan_suppress, replacement_fraction, InterventionPlan, Mode, PlanConfig, PlanError,
    Replacement,
};
use intervene::{MatchMethod, MatchSet};

use common::buffer::{oracle, origin, random_plan, PAD};

#[test]
fn random_plans_agree_with_buffer_oracle() {
    let mut rng = common::rng(100);
    for round in 0..200 {
        let seq = rng.random_range(3..14);
        let (nt, nn) = (rng.random_range(1..40), rng.random_range(1..40));
        let t = common::token_batch(&mut rng, 1, "t", nt, 2 * seq);
        let next = common::token_batch(&mut rng, 2, "n", nn, seq + 3);
        let plan = random_plan(&mut rng, &t, &next, seq);
        let (out, report) = apply_plan(&plan, &t, &next).unwrap();
        let ex = oracle(&plan, &t, &next);

        assert_eq!(out.token_count(), t.token_count(), "round {round}");
        assert_eq!(out.tokens(), &ex.tokens[..], "round {round}");
        let spans: BTreeMap<String, (usize, usize)> = out
            .documents()
            .iter()
            .map(|d| (d.doc_id.clone(), (d.token_start, d.token_end)))
            .collect();
        assert_eq!(spans, ex.spans, "round {round}");
        assert_eq!(report.skipped_targets, ex.skipped, "round {round}");
        let spill: Vec<(usize, usize)> = report.entries.iter().map(|e| (e.tokens_truncated, e.pad_tokens)).collect();
        assert_eq!(spill, ex.spill, "round {round}");
        assert_eq!(report.totals.tokens_truncated, ex.spill.iter().map(|s| s.0).sum::<usize>());
        assert_eq!(report.truncated_docs.iter().cloned().collect::<BTreeSet<_>>(), ex.truncated, "round {round}");
        assert_eq!(report.padded_docs.iter().cloned().collect::<BTreeSet<_>>(), ex.padded, "round {round}");
        assert_eq!(report.dropped_docs.iter().cloned().collect::<BTreeSet<_>>(), ex.dropped, "round {round}");
        for e in &report.entries {
            assert_eq!(e.exact_length, e.source_len == e.target_len);
        }

        // Surviving tokens keep their original order inside each document, and
        // documents that were neither cut nor padded are unchanged.
        for d in out.documents() {
            let toks = out.doc_tokens(d);
            let own: Vec<u32> = toks.iter().copied().filter(|&v| v != PAD).collect();
            assert!(own.windows(2).all(|w| w[0] < w[1]), "round {round}: {} out of order", d.doc_id);
            assert!(own.iter().all(|&v| origin(v).is_some()), "round {round}: foreign token in {}", d.doc_id);
            if let Some(orig) = t.get(&d.doc_id) {
                if !ex.padded.contains(&d.doc_id) && !ex.truncated.contains(&d.doc_id) {
                    assert_eq!(toks, t.doc_tokens(orig), "round {round}: {} changed", d.doc_id);
                }
            }
        }

        // Documents of t that disappear are exactly the applied targets and the
        // dropped ones.
        let before: BTreeSet<&str> = t.documents().iter().map(|d| d.doc_id.as_str()).collect();
        let after: BTreeSet<&str> = out.documents().iter().map(|d| d.doc_id.as_str()).collect();
        let gone: BTreeSet<&str> = before.difference(&after).copied().collect();
        let mut expected: BTreeSet<&str> = report.entries.iter().map(|e| e.target_doc_id.as_str()).collect();
        expected.extend(report.dropped_docs.iter().map(String::as_str));
        assert_eq!(gone, expected, "round {round}");
    }
}

fn doc(id: &str, batch_id: u64, start: usize, end: usize) -> Document {
    Document {
        doc_id: id.into(),
        batch_id,
        token_start: start,
        token_end: end,
        text: id.into(),
    }
}

#[test]
fn longer_source_pushes_the_sequence_tail_out() {
    // a b | c d | e f | g h  with [c d] replaced by x y z w
    let t = DataBatch::new(
        1,
        vec![doc("ab", 1, 0, 2), doc("cd", 1, 2, 4), doc("ef", 1, 4, 6), doc("gh", 1, 6, 8)],
        (b'a'..=b'h').map(u32::from).collect::<Vec<_>>(),
    )
    .unwrap();
    let next = DataBatch::new(2, vec![doc("xyzw", 2, 0, 4)], b"xyzw".iter().map(|&c| u32::from(c)).collect::<Vec<_>>()).unwrap();
    let plan = InterventionPlan {
        replacements: vec![Replacement {
            target_doc_id: "cd".into(),
            source_doc_id: "xyzw".into(),
            reason: vec!["q".into()],
            score: 1.0,
            target_len: 2,
            source_len: 4,
        }],
        ..InterventionPlan::empty(Mode::Suppress, 1, 2, MatchMethod::Cooccurrence, PlanConfig::new(8, 0))
    };
    let (out, report) = apply_plan(&plan, &t, &next).unwrap();
    let text: String = out.tokens().iter().map(|&v| char::from(v as u8)).collect();
    assert_eq!(text, "abxyzwef");
    let spans: Vec<(&str, usize, usize)> = out
        .documents()
        .iter()
        .map(|d| (d.doc_id.as_str(), d.token_start, d.token_end))
        .collect();
    assert_eq!(spans, vec![("ab", 0, 2), ("xyzw", 2, 6), ("ef", 6, 8)]);
    assert_eq!(report.dropped_docs, vec!["gh".to_string()]);
    assert_eq!(report.entries[0].tokens_truncated, 2);
    assert_eq!(report.totals.exact_length_rate, 0.0);
}

#[test]
fn shorter_source_pads_the_sequence_end() {
    let t = DataBatch::new(1, vec![doc("a", 1, 0, 3), doc("b", 1, 3, 4)], vec![11, 12, 13, 14]).unwrap();
    let next = DataBatch::new(2, vec![doc("s", 2, 0, 1)], vec![99]).unwrap();
    let plan = InterventionPlan {
        replacements: vec![Replacement {
            target_doc_id: "a".into(),
            source_doc_id: "s".into(),
            reason: vec!["q".into()],
            score: 1.0,
            target_len: 3,
            source_len: 1,
        }],
        ..InterventionPlan::empty(Mode::Suppress, 1, 2, MatchMethod::Cooccurrence, PlanConfig::new(4, 7))
    };
    let (out, report) = apply_plan(&plan, &t, &next).unwrap();
    assert_eq!(out.tokens(), &[99, 14, 7, 7]);
    assert_eq!(out.get("b").unwrap().span(), 1..2);
    assert_eq!(report.totals.pad_tokens, 2);
    assert_eq!(report.totals.shorter_sources, 1);
}

fn text_pair(seed: u64, n: usize) -> (DataBatch, DataBatch, Vec<intervene::item::EvalItem>) {
    let mut rng = common::rng(seed);
    let t = common::text_batch(&mut rng, 1, n, 6);
    let next = common::relabel(&common::text_batch(&mut rng, 2, 3 * n, 6), "n");
    let items = common::random_items(&mut rng, 12);
    (t, next, items)
}

fn all_ids(items: &[intervene::item::EvalItem]) -> BTreeSet<String> {
    items.iter().map(|i| i.item_id.clone()).collect()
}

#[test]
fn suppressed_batch_no_longer_matches_targets() {
    let mut checked = 0;
    for seed in 0..30 {
        let (t, next, items) = text_pair(seed, 60);
        let targets: BTreeSet<String> = all_ids(&items).into_iter().take(4).collect();
        let mt = match_cooccurrence(&t, &items, EntitySearch::default());
        let mn = match_cooccurrence(&next, &items, EntitySearch::default());
        let plan = match plan_suppress(&mt, &mn, &targets, &t, &next, &PlanConfig::new(8, 0)) {
            Ok(p) => p,
            Err(PlanError::InsufficientDonors { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(plan.replacements.len(), f_match(&mt, &targets).len());
        let (out, _) = apply_plan(&plan, &t, &next).unwrap();
        let again = match_cooccurrence(&out, &items, EntitySearch::default());
        assert!(f_match(&again, &targets).is_empty(), "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 10);
}

fn score_of(set: &MatchSet, targets: &BTreeSet<String>, doc_id: &str) -> f64 {
    targets
        .iter()
        .flat_map(|t| set.docs(t))
        .filter(|d| d.doc_id == doc_id)
        .map(|d| d.score)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Relevant docs of `batch` ordered by (-matched targets, id).
fn oracle_order(set: &MatchSet, targets: &BTreeSet<String>, batch: &DataBatch) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = batch
        .documents()
        .iter()
        .map(|d| {
            let c = targets
                .iter()
                .filter(|t| set.docs(t).iter().any(|x| x.doc_id == d.doc_id))
                .count();
            (d.doc_id.clone(), c)
        })
        .filter(|(_, c)| *c > 0)
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Scans every remaining candidate for each relevant doc in turn.
fn oracle_pairs(
    order: &[(String, usize)],
    from: &DataBatch,
    pool: &DataBatch,
    pool_set: &MatchSet,
    targets: &BTreeSet<String>,
    longer_wins: bool,
    max_len: usize,
) -> Vec<(String, String)> {
    let related = f_match(pool_set, targets);
    let mut free: Vec<&Document> = pool
        .documents()
        .iter()
        .filter(|d| !related.contains(&d.doc_id) && d.len() <= max_len)
        .collect();
    let mut out = Vec::new();
    for (id, _) in order {
        let len = from.get(id).unwrap().len();
        let (i, best) = free
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let key = |d: &Document| {
                    let side = if longer_wins { d.len() < len } else { d.len() > len };
                    (d.len().abs_diff(len), side)
                };
                key(a)
                    .cmp(&key(b))
                    .then(score_of(pool_set, targets, &a.doc_id).total_cmp(&score_of(pool_set, targets, &b.doc_id)))
                    .then(a.doc_id.cmp(&b.doc_id))
            })
            .unwrap();
        let best = best.doc_id.clone();
        free.remove(i);
        out.push((id.clone(), best));
    }
    out
}

#[test]
fn suppress_pairing_equals_exhaustive_scan() {
    for seed in 0..40 {
        let mut rng = common::rng(500 + seed);
        let n = rng.random_range(5..20);
        let t = common::text_batch(&mut rng, 1, n, 5);
        let next = common::relabel(&common::text_batch(&mut rng, 2, 20, 5), "n");
        let items = common::random_items(&mut rng, 6);
        let targets: BTreeSet<String> = all_ids(&items).into_iter().filter(|_| rng.random_bool(0.5)).collect();
        let mt = match_cooccurrence(&t, &items, EntitySearch::default());
        let mn = match_cooccurrence(&next, &items, EntitySearch::default());
        let cfg = PlanConfig::new(3, 0);
        let Ok(plan) = plan_suppress(&mt, &mn, &targets, &t, &next, &cfg) else {
            continue;
        };
        let order = oracle_order(&mt, &targets, &t);
        let got: Vec<(String, String)> = plan
            .replacements
            .iter()
            .map(|r| (r.target_doc_id.clone(), r.source_doc_id.clone()))
            .collect();
        assert_eq!(got, oracle_pairs(&order, &t, &next, &mn, &targets, true, 3), "seed {seed}");
        for (r, (_, c)) in plan.replacements.iter().zip(&order) {
            assert_eq!(r.reason.len(), *c);
        }
    }
}

#[test]
fn promote_pairing_equals_exhaustive_scan() {
    let mut compared = 0;
    for seed in 0..40 {
        let mut rng = common::rng(900 + seed);
        let t = common::text_batch(&mut rng, 1, 20, 5);
        let n = rng.random_range(5..20);
        let next = common::relabel(&common::text_batch(&mut rng, 2, n, 5), "n");
        let items = common::random_items(&mut rng, 6);
        let targets: BTreeSet<String> = all_ids(&items).into_iter().filter(|_| rng.random_bool(0.5)).collect();
        let mt = match_cooccurrence(&t, &items, EntitySearch::default());
        let mn = match_cooccurrence(&next, &items, EntitySearch::default());
        let Ok(plan) = plan_promote(&mt, &mn, &targets, &t, &next, &PlanConfig::new(8, 0)) else {
            continue;
        };
        assert_eq!(plan.mode, Mode::Promote);
        let order = oracle_order(&mn, &targets, &next);
        let got: Vec<(String, String)> = plan
            .replacements
            .iter()
            .map(|r| (r.source_doc_id.clone(), r.target_doc_id.clone()))
            .collect();
        assert_eq!(got, oracle_pairs(&order, &next, &t, &mt, &targets, false, usize::MAX), "seed {seed}");
        compared += 1;
    }
    assert!(compared >= 10);
}

#[test]
fn scored_matches_cap_reasons_at_k() {
    let (t, next, items) = text_pair(3, 80);
    let targets = all_ids(&items);
    let mt = match_bm25(&t, &items, &Analyzer::standard(), Bm25Params::default(), Selection::All).unwrap();
    let mn = match_bm25(&next, &items, &Analyzer::standard(), Bm25Params::default(), Selection::All).unwrap();
    let mut cfg = PlanConfig::new(8, 0);
    cfg.k = 2;
    let plan = plan_suppress(&mt, &mn, &targets, &t, &next, &cfg);
    let capped: BTreeSet<String> = targets
        .iter()
        .flat_map(|q| mt.docs(q).iter().take(2).map(|d| d.doc_id.clone()))
        .collect();
    match plan {
        Ok(p) => {
            let got: BTreeSet<String> = p.replacements.iter().map(|r| r.target_doc_id.clone()).collect();
            assert_eq!(got, capped);
        }
        Err(PlanError::InsufficientDonors { needed, .. }) => assert_eq!(needed, capped.len()),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn max_replacements_truncates_the_ordering() {
    let (t, next, items) = text_pair(4, 40);
    let targets = all_ids(&items);
    let mt = match_cooccurrence(&t, &items, EntitySearch::default());
    let mn = match_occurrence(&next, &items);
    let mut cfg = PlanConfig::new(8, 0);
    cfg.max_replacements = Some(3);
    let plan = plan_suppress(&mt, &mn, &targets, &t, &next, &cfg).unwrap();
    let order: Vec<String> = oracle_order(&mt, &targets, &t).into_iter().take(3).map(|x| x.0).collect();
    let got: Vec<String> = plan.replacements.iter().map(|r| r.target_doc_id.clone()).collect();
    assert_eq!(got, order);
}

fn match_occurrence(batch: &DataBatch, items: &[intervene::item::EvalItem]) -> MatchSet {
    // Occurrence on the donor side excludes more donors than cooccurrence.
    intervene::matcher::match_occurrence(batch, items, EntitySearch::default())
}

#[test]
fn promote_without_unrelated_targets_fails() {
    let t = DataBatch::new(1, vec![doc("t0", 1, 0, 1)], vec![5]).unwrap();
    let next = DataBatch::new(2, vec![doc("n0", 2, 0, 1)], vec![6]).unwrap();
    let mut rel = BTreeMap::new();
    rel.insert("q".to_string(), vec![intervene::matcher::DocScore { doc_id: "t0".into(), score: 1.0 }]);
    let mt = MatchSet::new(MatchMethod::Cooccurrence, Selection::All, Some(1), rel).unwrap();
    let mut rel = BTreeMap::new();
    rel.insert("q".to_string(), vec![intervene::matcher::DocScore { doc_id: "n0".into(), score: 1.0 }]);
    let mn = MatchSet::new(MatchMethod::Cooccurrence, Selection::All, Some(2), rel).unwrap();
    let targets = BTreeSet::from(["q".to_string()]);
    let err = plan_promote(&mt, &mn, &targets, &t, &next, &PlanConfig::new(4, 0)).unwrap_err();
    assert!(matches!(err, PlanError::InsufficientDonors { needed: 1, available: 0, shortfall: 1, .. }));
    let err = plan_suppress(&mt, &mn, &targets, &t, &next, &PlanConfig::new(4, 0)).unwrap_err();
    assert!(matches!(err, PlanError::InsufficientDonors { .. }));
}

#[test]
fn replacement_fraction_counts_documents() {
    let mut rng = common::rng(8);
    let t = common::token_batch(&mut rng, 1, "t", 100, 3);
    let mut plan = InterventionPlan::empty(Mode::Suppress, 1, 2, MatchMethod::Cooccurrence, PlanConfig::new(4, 0));
    assert_eq!(replacement_fraction(&plan, &t).unwrap(), 0.0);
    plan.replacements = (0..5)
        .map(|i| Replacement {
            target_doc_id: format!("t{i:04}"),
            source_doc_id: format!("n{i:04}"),
            reason: vec!["q".into()],
            score: 1.0,
            target_len: 1,
            source_len: 1,
        })
        .collect();
    assert_eq!(replacement_fraction(&plan, &t).unwrap(), 0.05);
    let empty = DataBatch::new(1, Vec::new(), Vec::<u32>::new()).unwrap();
    assert!(replacement_fraction(&plan, &empty).is_err());
}

#[test]
fn empty_plan_leaves_batch_unchanged() {
    let mut rng = common::rng(9);
    let t = common::token_batch(&mut rng, 1, "t", 30, 6);
    let next = common::token_batch(&mut rng, 2, "n", 30, 6);
    let plan = InterventionPlan::empty(Mode::Suppress, 1, 2, MatchMethod::Cooccurrence, PlanConfig::new(4, 0));
    let (out, report) = apply_plan(&plan, &t, &next).unwrap();
    assert_eq!(out, t);
    assert_eq!(report.totals.replacements, 0);
}

#[test]
fn plans_round_trip_and_reject_bad_input() {
    let mut rng = common::rng(10);
    let t = common::token_batch(&mut rng, 1, "t", 30, 6);
    let next = common::token_batch(&mut rng, 2, "n", 30, 6);
    let plan = random_plan(&mut rng, &t, &next, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.jsonl");
    plan.write(&path, Some("h")).unwrap();
    assert_eq!(InterventionPlan::read(&path).unwrap(), plan);

    assert!(matches!(apply_plan(&plan, &next, &t), Err(PlanError::BatchMismatch { .. })));
    let mut dup = plan.clone();
    if let Some(first) = dup.replacements.first().cloned() {
        dup.replacements.push(first);
        assert!(matches!(apply_plan(&dup, &t, &next), Err(PlanError::RepeatedDoc(_))));
    }
    let mut unknown = InterventionPlan::empty(Mode::Suppress, 1, 2, MatchMethod::Cooccurrence, PlanConfig::new(8, 0));
    unknown.replacements.push(Replacement {
        target_doc_id: "missing".into(),
        source_doc_id: "n0000".into(),
        reason: vec!["q".into()],
        score: 1.0,
        target_len: 1,
        source_len: 1,
    });
    assert!(matches!(apply_plan(&unknown, &t, &next), Err(PlanError::UnknownDoc { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn token_count_is_conserved(seed in any::<u64>(), seq in 2usize..12) {
        let mut rng = common::rng(seed);
        let t = common::token_batch(&mut rng, 1, "t", 25, 2 * seq);
        let next = common::token_batch(&mut rng, 2, "n", 25, seq);
        let plan = random_plan(&mut rng, &t, &next, seq);
        let (out, report) = apply_plan(&plan, &t, &next).unwrap();
        prop_assert_eq!(out.token_count(), t.token_count());
        prop_assert_eq!(report.entries.len() + report.skipped_targets.len(), plan.replacements.len());
    }

    #[test]
    fn sequences_without_a_target_are_untouched(seed in any::<u64>(), seq in 2usize..12) {
        let mut rng = common::rng(seed);
        let t = common::token_batch(&mut rng, 1, "t", 25, 2 * seq);
        let next = common::token_batch(&mut rng, 2, "n", 25, seq);
        let plan = random_plan(&mut rng, &t, &next, seq);
        let (out, _) = apply_plan(&plan, &t, &next).unwrap();
        let mut touched = BTreeSet::new();
        for r in &plan.replacements {
            let d = t.get(&r.target_doc_id).unwrap();
            for s in d.token_start / seq..=(d.token_end - 1) / seq {
                touched.insert(s);
            }
        }
        for (i, (a, b)) in t.tokens().iter().zip(out.tokens()).enumerate() {
            if !touched.contains(&(i / seq)) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
