//! BM25 index over item texts, used to pick hard negatives for the
//! search-based evaluation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::Item;
use crate::error::{Error, Result};
use crate::textstats::tokenize;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    /// term → (document index, term frequency), document indices ascending.
    postings: BTreeMap<String, Vec<(usize, usize)>>,
    k1: f64,
    b: f64,
}

/// Tags and description tokens, title first when asked for.
pub fn search_text(item: &Item, include_title: bool) -> Vec<String> {
    let mut tokens = if include_title { tokenize(&item.title) } else { Vec::new() };
    for tag in &item.tags {
        tokens.extend(tokenize(tag));
    }
    tokens.extend(tokenize(&item.description));
    tokens
}

/// Documents are ordered by id, so insertion order never matters. When an id
/// repeats, its first text is kept.
pub fn build_index(docs: &[(String, Vec<String>)], k1: f64, b: f64) -> Result<Bm25Index> {
    if docs.is_empty() {
        return Err(Error::InvalidParameter("BM25 index needs at least one item".into()));
    }
    let mut sorted: Vec<&(String, Vec<String>)> = docs.iter().collect();
    sorted.sort_by(|x, y| x.0.cmp(&y.0));
    sorted.dedup_by(|x, y| x.0 == y.0);
    let mut doc_ids = Vec::with_capacity(sorted.len());
    let mut doc_lengths = Vec::with_capacity(sorted.len());
    let mut postings: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (idx, (id, tokens)) in sorted.iter().enumerate() {
        doc_ids.push(id.clone());
        doc_lengths.push(tokens.len());
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (t, f) in tf {
            postings.entry(t.to_string()).or_default().push((idx, f));
        }
    }
    let total: usize = doc_lengths.iter().sum();
    Ok(Bm25Index {
        avg_doc_length: total as f64 / doc_ids.len() as f64,
        doc_ids,
        doc_lengths,
        postings,
        k1,
        b,
    })
}

pub fn build_item_index<'a, I: IntoIterator<Item = &'a Item>>(items: I, include_title: bool) -> Result<Bm25Index> {
    let docs: Vec<(String, Vec<String>)> = items
        .into_iter()
        .map(|i| (i.item_id.clone(), search_text(i, include_title)))
        .collect();
    build_index(&docs, DEFAULT_K1, DEFAULT_B)
}

impl Bm25Index {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.doc_lengths[i])
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(id)).ok()
    }

    /// Postings of one term as (item id, term frequency).
    pub fn postings(&self, term: &str) -> Vec<(&str, usize)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, f)| (self.doc_ids[d].as_str(), f)).collect())
            .unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Contribution of one term with frequency `tf` in a document of `len`.
    pub fn term_score(&self, term: &str, tf: usize, len: usize) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let f = tf as f64;
        let norm = self.k1 * (1.0 - self.b + self.b * len as f64 / self.avg_doc_length);
        self.idf(term) * f * (self.k1 + 1.0) / (f + norm)
    }

    /// Accumulated scores of every document matching the query. Each
    /// distinct query term counts once; terms are visited in sorted order.
    fn scores(&self, query: &[String]) -> BTreeMap<usize, f64> {
        let terms: BTreeSet<&str> = query.iter().map(String::as_str).collect();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for t in terms {
            let Some(list) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(d, tf) in list {
                let f = tf as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[d] as f64 / self.avg_doc_length);
                *acc.entry(d).or_insert(0.0) += idf * f * (self.k1 + 1.0) / (f + norm);
            }
        }
        acc
    }

    /// Top-k documents with positive score, descending, ties by item id.
    pub fn query(&self, query: &[String], k: usize) -> Vec<(String, f64)> {
        self.query_filtered(query, k, |_| true)
    }

    pub fn query_filtered<F: Fn(&str) -> bool>(&self, query: &[String], k: usize, keep: F) -> Vec<(String, f64)> {
        if query.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut hits: Vec<(usize, f64)> = self
            .scores(query)
            .into_iter()
            .filter(|&(d, s)| s > 0.0 && keep(&self.doc_ids[d]))
            .collect();
        // document indices follow id order, so index order breaks ties by id
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits.into_iter().map(|(d, s)| (self.doc_ids[d].clone(), s)).collect()
    }
}

/// Up to `k` pool items closest to the positive's text, never the positive
/// itself. Short lists are padded with seeded uniform pool draws.
pub fn candidates_for<R: Rng>(
    index: &Bm25Index,
    positive_id: &str,
    query: &[String],
    pool: &[String],
    k: usize,
    rng: &mut R,
) -> Vec<(String, f64)> {
    let allowed: HashSet<&str> = pool.iter().map(String::as_str).filter(|p| *p != positive_id).collect();
    let mut out = index.query_filtered(query, k, |id| allowed.contains(id));
    if out.len() < k {
        let taken: HashSet<String> = out.iter().map(|(id, _)| id.clone()).collect();
        let mut rest: Vec<&String> = pool
            .iter()
            .filter(|p| p.as_str() != positive_id && !taken.contains(*p))
            .collect();
        rest.sort();
        rest.dedup();
        let need = k - out.len();
        if rest.len() < need {
            warn!(
                "positive {positive_id}: only {} candidates available, wanted {k}",
                out.len() + rest.len()
            );
        }
        out.extend(rest.choose_multiple(rng, need).map(|id| ((*id).clone(), 0.0)));
    }
    out
}

/// `positive_item_id \t rank \t candidate_item_id \t score`.
pub fn write_candidates<W: Write>(mut w: W, positive_id: &str, candidates: &[(String, f64)]) -> std::io::Result<()> {
    for (rank, (id, score)) in candidates.iter().enumerate() {
        writeln!(w, "{positive_id}\t{}\t{id}\t{score:?}", rank + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn doc(id: &str, text: &str) -> (String, Vec<String>) {
        (id.to_string(), toks(text))
    }

    #[test]
    fn single_document() {
        let idx = build_index(&[doc("a", "x y z")], DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(idx.avg_doc_length(), 3.0);
        let hits = idx.query(&toks("y"), 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "a");
        assert!(build_index(&[], DEFAULT_K1, DEFAULT_B).is_err());
    }

    #[test]
    fn absent_terms_contribute_nothing() {
        let idx = build_index(&[doc("a", "x y"), doc("b", "z z")], DEFAULT_K1, DEFAULT_B).unwrap();
        let hits = idx.query(&toks("x"), 5);
        assert_eq!(hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), vec!["a"]);
        assert!(idx.query(&[], 5).is_empty());
    }

    #[test]
    fn duplicates_share_lengths() {
        let idx = build_index(&[doc("a", "x y"), doc("b", "x y")], DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(idx.doc_length("a"), idx.doc_length("b"));
        assert_eq!(idx.postings("x"), vec![("a", 1), ("b", 1)]);
    }

    #[test]
    fn insertion_order_is_irrelevant() {
        let a = build_index(&[doc("a", "x y"), doc("b", "x"), doc("c", "y y")], DEFAULT_K1, DEFAULT_B).unwrap();
        let b = build_index(&[doc("c", "y y"), doc("a", "x y"), doc("b", "x")], DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(a.query(&toks("x y"), 3), b.query(&toks("x y"), 3));
    }

    #[test]
    fn candidates_exclude_positive_and_pad() {
        let docs = vec![doc("p", "x"), doc("a", "x"), doc("b", "x"), doc("c", "q"), doc("d", "q")];
        let idx = build_index(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
        let pool: Vec<String> = ["p", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let mut rng = seeding::rng(3);
        let c = candidates_for(&idx, "p", &toks("x"), &pool, 3, &mut rng);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|(id, _)| id != "p"));
        assert_eq!(c[0].0, "a");
        assert_eq!(c[1].0, "b");
        assert_eq!(c[2].1, 0.0);
        let all = candidates_for(&idx, "p", &toks("x"), &pool[..3], 2, &mut rng);
        assert_eq!(all.len(), 2);
    }
}
