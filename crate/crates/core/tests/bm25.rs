mod common;

use std::collections::BTreeSet;

use common::{fixture_corpus, oracle_bm25};
use profilerec::retrieval::{build_index, candidates_for, search_text, DEFAULT_B, DEFAULT_K1};
use profilerec::seeding;

fn fixture_docs(n: usize) -> Vec<(String, Vec<String>)> {
    let (_, items) = fixture_corpus();
    items
        .values()
        .take(n)
        .map(|i| (i.item_id.clone(), search_text(i, false)))
        .collect()
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn postings_equal_term_scan() {
    let docs = fixture_docs(100);
    let index = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
    let vocabulary: BTreeSet<&String> = docs.iter().flat_map(|(_, t)| t).collect();
    assert_eq!(index.terms().count(), vocabulary.len());
    for term in vocabulary {
        let scan: Vec<(&str, usize)> = docs
            .iter()
            .filter_map(|(id, t)| {
                let tf = t.iter().filter(|x| *x == term).count();
                (tf > 0).then_some((id.as_str(), tf))
            })
            .collect();
        assert_eq!(index.postings(term), scan, "{term}");
    }
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    assert_eq!(index.avg_doc_length(), total as f64 / docs.len() as f64);
}

#[test]
fn rankings_equal_exhaustive_scoring() {
    let (_, items) = fixture_corpus();
    let docs = fixture_docs(50);
    let index = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
    for item in items.values().skip(50).take(5) {
        let query = search_text(item, false);
        let got = index.query(&query, docs.len());
        let want = oracle_bm25(&docs, &query, DEFAULT_K1, DEFAULT_B);
        assert_eq!(got.len(), want.len());
        for ((gi, gs), (wi, ws)) in got.iter().zip(&want) {
            assert_eq!(gi, wi);
            assert_eq!(gs.to_bits(), ws.to_bits());
        }
        assert!(got.iter().all(|(_, s)| *s > 0.0));
    }
}

#[test]
fn candidates_equal_exhaustive_top_k_over_pool() {
    let (_, items) = fixture_corpus();
    let docs = fixture_docs(300);
    let index = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
    let positive = &docs[7];
    let pool: Vec<String> = docs.iter().step_by(2).map(|(id, _)| id.clone()).collect();
    let query = search_text(&items[&positive.0], false);
    let got = candidates_for(&index, &positive.0, &query, &pool, 100, &mut seeding::rng(1));
    assert!(got.iter().all(|(id, _)| id != &positive.0));

    let pool_set: BTreeSet<&String> = pool.iter().collect();
    let exhaustive: Vec<(String, f64)> = oracle_bm25(&docs, &query, DEFAULT_K1, DEFAULT_B)
        .into_iter()
        .filter(|(id, _)| pool_set.contains(id) && *id != positive.0)
        .take(100)
        .collect();
    assert_eq!(&got[..exhaustive.len()], exhaustive.as_slice());
    assert_eq!(got.len(), 100.min(pool.len() - usize::from(pool_set.contains(&positive.0))));
}

#[test]
fn full_matching_pool_is_returned() {
    let docs: Vec<(String, Vec<String>)> = (0..5).map(|k| (format!("d{k}"), toks("x y"))).collect();
    let index = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
    let pool: Vec<String> = docs.iter().map(|(id, _)| id.clone()).collect();
    let got = candidates_for(&index, "p", &toks("x"), &pool, 5, &mut seeding::rng(0));
    let ids: BTreeSet<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids.len(), 5);
    assert!(got.iter().all(|(_, s)| *s > 0.0));
}

#[test]
fn unrelated_document_keeps_relative_order() {
    // lengths 2, 4, 6, 4 give an average of 4; the added document has that
    // length and no query term, so only the shared idf changes
    let mut docs = vec![
        (String::from("a"), toks("x q")),
        (String::from("b"), toks("x x q q")),
        (String::from("c"), toks("x q q q q q")),
        (String::from("d"), toks("x x x q")),
    ];
    let before = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap().query(&toks("x"), 10);
    docs.push((String::from("e"), toks("z z z z")));
    let after = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap().query(&toks("x"), 10);
    let order = |r: &[(String, f64)]| r.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>();
    assert_eq!(order(&before), order(&after));
    assert!(after.iter().zip(&before).all(|(a, b)| a.1 >= b.1));
}
