//! Tokenization, sentence segmentation, idf tables, tf-idf vectors and cosine
//! similarity. Everything here is pure; an [`IdfTable`] is immutable after
//! construction and can be shared across threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Lowercased, NFKC-normalized word tokens. Any character that is neither
/// alphabetic nor numeric acts as a separator and is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfkc().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Splits after `.`, `!` or `?` when followed by whitespace or end of text.
/// Abbreviation-blind. Sentences are trimmed; empty ones are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                push_trimmed(&mut sentences, &text[start..end]);
                start = end;
            }
        }
    }
    push_trimmed(&mut sentences, &text[start..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Contiguous n-grams of `tokens`, joined by a single space.
pub fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

fn check_order(n: usize) -> Result<()> {
    if (1..=3).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "n-gram order must be 1, 2 or 3, got {n}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdfSource {
    Corpus,
    External,
}

/// Term → idf weight for one n-gram order.
#[derive(Debug, Clone)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    doc_count: usize,
    order: usize,
    source: IdfSource,
    unseen_weight: f64,
}

impl IdfTable {
    /// `idf(t) = ln((1 + N) / (1 + df(t)))` over the given documents.
    pub fn build<S: AsRef<str>>(documents: &[S], n: usize) -> Result<Self> {
        check_order(n)?;
        if documents.is_empty() {
            return Err(Error::InvalidParameter(
                "idf needs at least one document".into(),
            ));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in documents {
            let grams: HashSet<String> = ngrams(&tokenize(doc.as_ref()), n).into_iter().collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let total = documents.len() as f64;
        let weights = df
            .into_iter()
            .map(|(t, d)| (t, ((1.0 + total) / (1.0 + d as f64)).ln()))
            .collect();
        Ok(IdfTable {
            weights,
            doc_count: documents.len(),
            order: n,
            source: IdfSource::Corpus,
            unseen_weight: (1.0 + total).ln(),
        })
    }

    /// Loads a `term \t weight` table verbatim. Terms absent from the table
    /// get the table's maximum weight.
    pub fn load_external<R: BufRead>(reader: R, n: usize) -> Result<Self> {
        check_order(n)?;
        let mut weights = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<idf table>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, weight) = line.rsplit_once('\t').ok_or_else(|| {
                Error::format("idf table", format!("line {}: expected term<TAB>weight", lineno + 1))
            })?;
            let weight: f64 = weight.trim().parse().map_err(|_| {
                Error::format("idf table", format!("line {}: bad weight `{weight}`", lineno + 1))
            })?;
            if !weight.is_finite() || weight < 0.0 {
                return Err(Error::format(
                    "idf table",
                    format!("line {}: weight must be finite and non-negative", lineno + 1),
                ));
            }
            let term = tokenize(term).join(" ");
            weights.insert(term, weight);
        }
        let unseen_weight = weights.values().copied().fold(0.0, f64::max);
        Ok(IdfTable {
            weights,
            doc_count: 0,
            order: n,
            source: IdfSource::External,
            unseen_weight,
        })
    }

    /// Uniform weight for a fixed vocabulary; mostly useful for tests.
    pub fn uniform<I, S>(terms: I, n: usize, weight: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        IdfTable {
            weights: terms.into_iter().map(|t| (t.into(), weight)).collect(),
            doc_count: 0,
            order: n,
            source: IdfSource::External,
            unseen_weight: weight,
        }
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(self.unseen_weight)
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.weights.get(term).copied()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn source(&self) -> IdfSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Writes the table as `term \t weight`, sorted by term.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut terms: Vec<_> = self.weights.iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        for (t, wt) in terms {
            writeln!(w, "{t}\t{wt:?}")?;
        }
        Ok(())
    }
}

/// Sparse non-negative vector with no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(BTreeMap<String, f64>);

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `weight`; zero and negative weights are ignored.
    pub fn insert(&mut self, term: impl Into<String>, weight: f64) {
        if weight > 0.0 {
            self.0.insert(term.into(), weight);
        }
    }

    pub fn get(&self, term: &str) -> f64 {
        self.0.get(term).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().map(|(t, v)| v * large.get(t)).sum()
    }
}

impl FromIterator<(String, f64)> for SparseVector {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        let mut v = SparseVector::new();
        for (t, w) in iter {
            v.insert(t, w);
        }
        v
    }
}

/// Raw n-gram counts of an already tokenized text.
pub fn term_counts(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// `weight(t) = tf(t) * idf(t)` with raw counts. Zero-idf terms are omitted.
pub fn tfidf_vector(text: &str, idf: &IdfTable, n: usize) -> Result<SparseVector> {
    if n != idf.order() {
        return Err(Error::InvalidParameter(format!(
            "idf table has order {}, requested {n}",
            idf.order()
        )));
    }
    Ok(term_counts(&tokenize(text), n)
        .into_iter()
        .map(|(t, c)| {
            let w = c as f64 * idf.weight(&t);
            (t, w)
        })
        .collect())
}

/// Cosine similarity; 0 when either side is empty.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (a.dot(b) / denom).clamp(0.0, 1.0)
}
