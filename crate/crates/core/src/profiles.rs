//! Token-budgeted user and item profiles.
//!
//! Every review-based strategy first produces a ranked *selection stream*
//! (a token sequence in preference order); a profile is the stream cut to
//! the budget, and chunked profiles are consecutive budget-sized slices of
//! the same stream. Weighted phrases are the exception: they stop at the
//! first phrase that would overflow instead of splitting it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Item;
use crate::error::{Error, Result};
use crate::textstats::{cosine, ngrams, split_sentences, tokenize, IdfTable, SparseVector};

pub const DEFAULT_BUDGET: usize = 128;
pub const GENERATOR_CHUNK_CHARS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Phrases1,
    Phrases2,
    Phrases3,
    IdfSentences,
    SimilarSentences,
    ExternalGenerated,
    Keywords,
    Basic,
    Expanded,
}

impl Provenance {
    pub const ALL: [Provenance; 9] = [
        Provenance::Phrases1,
        Provenance::Phrases2,
        Provenance::Phrases3,
        Provenance::IdfSentences,
        Provenance::SimilarSentences,
        Provenance::ExternalGenerated,
        Provenance::Keywords,
        Provenance::Basic,
        Provenance::Expanded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Phrases1 => "phrases1",
            Provenance::Phrases2 => "phrases2",
            Provenance::Phrases3 => "phrases3",
            Provenance::IdfSentences => "idf_sentences",
            Provenance::SimilarSentences => "similar_sentences",
            Provenance::ExternalGenerated => "external_generated",
            Provenance::Keywords => "keywords",
            Provenance::Basic => "basic",
            Provenance::Expanded => "expanded",
        }
    }

    pub fn phrase_order(self) -> Option<usize> {
        match self {
            Provenance::Phrases1 => Some(1),
            Provenance::Phrases2 => Some(2),
            Provenance::Phrases3 => Some(3),
            _ => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown profile provenance `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub tokens: Vec<String>,
    pub budget: usize,
    pub provenance: Provenance,
}

impl Profile {
    /// Cuts `tokens` to the budget.
    pub fn from_stream(mut tokens: Vec<String>, budget: usize, provenance: Provenance) -> Self {
        tokens.truncate(budget);
        Profile {
            tokens,
            budget,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileConfig {
    pub budget: usize,
    pub chunks: usize,
    pub strategy: Provenance,
    pub round_robin: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            budget: DEFAULT_BUDGET,
            chunks: 1,
            strategy: Provenance::IdfSentences,
            round_robin: true,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.chunks == 0 {
            return Err(Error::InvalidParameter(
                "profile budget and chunk count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One review as seen by the profile builders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Review {
    pub item_id: String,
    pub text: String,
    pub position: u64,
}

/// All n-grams of the user's reviews with `tf * idf`, ranked by weight
/// descending then lexicographically. N-grams do not cross review boundaries.
pub fn rank_phrases(reviews: &[Review], idf: &IdfTable, n: usize) -> Vec<(String, f64)> {
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for r in reviews {
        for g in ngrams(&tokenize(&r.text), n) {
            *tf.entry(g).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, f64)> = tf
        .into_iter()
        .map(|(g, c)| {
            let w = c as f64 * idf.weight(&g);
            (g, w)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

fn phrase_stream(reviews: &[Review], idf: &IdfTable, n: usize) -> Vec<String> {
    rank_phrases(reviews, idf, n)
        .into_iter()
        .flat_map(|(g, _)| g.split(' ').map(str::to_string).collect::<Vec<_>>())
        .collect()
}

/// Weighted-phrase profile: whole n-grams in rank order until the next one
/// would overflow the budget.
pub fn select_phrases(reviews: &[Review], idf: &IdfTable, n: usize, budget: usize) -> Result<Profile> {
    let provenance = match n {
        1 => Provenance::Phrases1,
        2 => Provenance::Phrases2,
        3 => Provenance::Phrases3,
        _ => {
            return Err(Error::InvalidParameter(format!(
                "phrase order must be 1, 2 or 3, got {n}"
            )))
        }
    };
    if idf.order() != n {
        return Err(Error::InvalidParameter(format!(
            "idf table has order {}, phrases need order {n}",
            idf.order()
        )));
    }
    let mut tokens = Vec::new();
    for (g, _) in rank_phrases(reviews, idf, n) {
        if tokens.len() + n > budget {
            break;
        }
        tokens.extend(g.split(' ').map(str::to_string));
    }
    Ok(Profile {
        tokens,
        budget,
        provenance,
    })
}

/// Mean per-word idf of a sentence; `None` for sentences without words.
pub fn sentence_idf_score(sentence: &str, idf: &IdfTable) -> Option<f64> {
    let words = tokenize(sentence);
    if words.is_empty() {
        return None;
    }
    Some(words.iter().map(|w| idf.weight(w)).sum::<f64>() / words.len() as f64)
}

/// Distinct sentences of the reviews ranked by mean idf, descending, ties
/// broken by the sentence text.
pub fn rank_sentences_idf(reviews: &[Review], idf: &IdfTable) -> Vec<(String, f64)> {
    let mut seen = HashSet::new();
    let mut scored = Vec::new();
    for r in reviews {
        for s in split_sentences(&r.text) {
            if !seen.insert(s.clone()) {
                continue;
            }
            if let Some(score) = sentence_idf_score(&s, idf) {
                scored.push((s, score));
            }
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

fn sentence_stream<'a>(sentences: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    sentences.into_iter().flat_map(|s| tokenize(s)).collect()
}

pub fn select_sentences_idf(reviews: &[Review], idf: &IdfTable, budget: usize) -> Profile {
    let ranked = rank_sentences_idf(reviews, idf);
    Profile::from_stream(
        sentence_stream(ranked.iter().map(|(s, _)| s)),
        budget,
        Provenance::IdfSentences,
    )
}

/// Sentence embedding backend for similar-sentence selection.
pub trait SentenceEmbedder {
    type Vector;
    fn embed(&self, text: &str) -> Self::Vector;
    fn similarity(&self, a: &Self::Vector, b: &Self::Vector) -> f64;
}

/// Reference backend: unigram tf-idf vectors compared by cosine.
pub struct TfIdfEmbedder<'a> {
    pub idf: &'a IdfTable,
}

impl SentenceEmbedder for TfIdfEmbedder<'_> {
    type Vector = SparseVector;

    fn embed(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in ngrams(&tokenize(text), self.idf.order()) {
            *counts.entry(t).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .map(|(t, c)| {
                let w = c as f64 * self.idf.weight(&t);
                (t, w)
            })
            .collect()
    }

    fn similarity(&self, a: &SparseVector, b: &SparseVector) -> f64 {
        cosine(a, b)
    }
}

/// Dense vectors produced by an external program: every input text is
/// written as one line to its stdin, and it prints one whitespace-separated
/// vector per line. Vectors are computed up front and looked up by text.
pub struct ExternalEmbedder {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl ExternalEmbedder {
    pub fn precompute(program: &str, args: &[String], texts: &[String], timeout: Duration) -> Result<Self> {
        let input: String = texts
            .iter()
            .map(|t| t.replace('\n', " "))
            .collect::<Vec<_>>()
            .join("\n");
        let output = run_with_timeout(program, args, &input, timeout)?;
        let vectors: Vec<Vec<f64>> = output
            .lines()
            .map(|l| {
                l.split_whitespace()
                    .map(|x| x.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Generator(format!("embedder output is not numeric: {e}")))?;
        if vectors.len() != texts.len() {
            return Err(Error::Generator(format!(
                "embedder returned {} vectors for {} inputs",
                vectors.len(),
                texts.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Generator("embedder vectors differ in length".into()));
        }
        Ok(ExternalEmbedder {
            vectors: texts.iter().cloned().zip(vectors).collect(),
            dim,
        })
    }
}

impl SentenceEmbedder for ExternalEmbedder {
    type Vector = Vec<f64>;

    fn embed(&self, text: &str) -> Vec<f64> {
        self.vectors
            .get(text)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    fn similarity(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Per reviewed item (in interaction-position order), that item's review
/// sentences ranked by similarity to the item description. Items without a
/// description fall back to mean-idf ranking.
pub fn rank_sentences_similar<E: SentenceEmbedder>(
    reviews: &[Review],
    items: &BTreeMap<String, Item>,
    embedder: &E,
    idf: &IdfTable,
) -> Vec<(String, Vec<String>)> {
    let mut ordered: Vec<&Review> = reviews.iter().collect();
    ordered.sort_by(|a, b| a.position.cmp(&b.position).then_with(|| a.item_id.cmp(&b.item_id)));

    let mut seen = HashSet::new();
    let mut per_item = Vec::new();
    for r in ordered {
        let sentences: Vec<String> = split_sentences(&r.text)
            .into_iter()
            .filter(|s| !tokenize(s).is_empty() && seen.insert(s.clone()))
            .collect();
        let description = items
            .get(&r.item_id)
            .map(|i| i.description.as_str())
            .filter(|d| !tokenize(d).is_empty());
        let mut scored: Vec<(String, f64)> = match description {
            Some(desc) => {
                let target = embedder.embed(desc);
                sentences
                    .into_iter()
                    .map(|s| {
                        let sim = embedder.similarity(&embedder.embed(&s), &target);
                        (s, sim)
                    })
                    .collect()
            }
            None => sentences
                .into_iter()
                .map(|s| {
                    let score = sentence_idf_score(&s, idf).unwrap_or(0.0);
                    (s, score)
                })
                .collect(),
        };
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        per_item.push((r.item_id.clone(), scored.into_iter().map(|(s, _)| s).collect()));
    }
    per_item
}

/// Interleaves ranked lists: the first sentence of every item, then the
/// second of every item, and so on.
pub fn round_robin(lists: &[(String, Vec<String>)]) -> Vec<String> {
    let depth = lists.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for round in 0..depth {
        for (_, list) in lists {
            if let Some(s) = list.get(round) {
                out.push(s.clone());
            }
        }
    }
    out
}

pub fn select_sentences_similar<E: SentenceEmbedder>(
    reviews: &[Review],
    items: &BTreeMap<String, Item>,
    embedder: &E,
    idf: &IdfTable,
    cfg: &ProfileConfig,
) -> Profile {
    Profile::from_stream(
        similar_stream(reviews, items, embedder, idf, cfg.round_robin),
        cfg.budget,
        Provenance::SimilarSentences,
    )
}

fn similar_stream<E: SentenceEmbedder>(
    reviews: &[Review],
    items: &BTreeMap<String, Item>,
    embedder: &E,
    idf: &IdfTable,
    interleave: bool,
) -> Vec<String> {
    let lists = rank_sentences_similar(reviews, items, embedder, idf);
    let sentences = if interleave {
        round_robin(&lists)
    } else {
        lists.into_iter().flat_map(|(_, l)| l).collect()
    };
    sentence_stream(&sentences)
}

/// Text → keyphrase text, e.g. a generative model behind a process or
/// network boundary.
pub trait KeyphraseGenerator: Sync {
    fn generate(&self, chunk: &str) -> Result<String>;
}

/// Offline stand-in: echoes the three most frequent tokens of the chunk,
/// ties broken lexicographically.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

impl KeyphraseGenerator for MockGenerator {
    fn generate(&self, chunk: &str) -> Result<String> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize(chunk) {
            *counts.entry(t).or_insert(0) += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked
            .into_iter()
            .take(3)
            .map(|(t, _)| t)
            .collect::<Vec<_>>()
            .join(" "))
    }
}

/// Spawns `program args...` per chunk, sends the chunk on stdin and reads
/// keyphrases from stdout. An HTTP endpoint can be reached by pointing this
/// at a client such as `curl --data-binary @-`.
#[derive(Debug, Clone)]
pub struct CommandGenerator {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub retries: usize,
}

impl KeyphraseGenerator for CommandGenerator {
    fn generate(&self, chunk: &str) -> Result<String> {
        let mut last = None;
        for _ in 0..=self.retries {
            match run_with_timeout(&self.program, &self.args, chunk, self.timeout) {
                Ok(out) => return Ok(out),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Generator("no attempt made".into())))
    }
}

fn run_with_timeout(program: &str, args: &[String], input: &str, timeout: Duration) -> Result<String> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| Error::Generator(format!("cannot spawn `{program}`: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload = input.as_bytes().to_vec();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(&payload);
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut buf = String::new();
        stdout.read_to_string(&mut buf).map(|_| buf)
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Generator(format!("`{program}` timed out after {timeout:?}")));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(Error::Generator(format!("waiting on `{program}`: {e}"))),
        }
    };
    let _ = writer.join();
    let out = reader
        .join()
        .map_err(|_| Error::Generator("stdout reader panicked".into()))?
        .map_err(|e| Error::Generator(format!("reading `{program}` output: {e}")))?;
    if !status.success() {
        return Err(Error::Generator(format!("`{program}` exited with {status}")));
    }
    Ok(out)
}

/// Concatenates review texts and cuts them into chunks of at most
/// `max_chars` characters, preferring to break at whitespace.
pub fn chunk_text(reviews: &[Review], max_chars: usize) -> Vec<String> {
    let joined = reviews
        .iter()
        .map(|r| r.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    let chars: Vec<char> = joined.chars().collect();
    let max_chars = max_chars.max(1);
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = (start + max_chars).min(chars.len());
        if end < chars.len() {
            if let Some(ws) = (start + 1..end).rev().find(|&i| chars[i].is_whitespace()) {
                end = ws;
            }
        }
        let chunk: String = chars[start..end].iter().collect();
        if !chunk.trim().is_empty() {
            chunks.push(chunk.trim().to_string());
        }
        start = end;
    }
    chunks
}

/// Profile from generator output: each chunk contributes at most
/// `budget / chunks` tokens and the total is capped at the budget. Chunks
/// whose generation fails are skipped.
pub fn generate_profile_external<G: KeyphraseGenerator + ?Sized>(
    reviews: &[Review],
    generator: &G,
    budget: usize,
    max_chunk_chars: usize,
    provenance: Provenance,
) -> Result<Profile> {
    Ok(Profile::from_stream(
        generated_stream(reviews, generator, budget, max_chunk_chars)?,
        budget,
        provenance,
    ))
}

fn generated_stream<G: KeyphraseGenerator + ?Sized>(
    reviews: &[Review],
    generator: &G,
    budget: usize,
    max_chunk_chars: usize,
) -> Result<Vec<String>> {
    let chunks = chunk_text(reviews, max_chunk_chars);
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let per_chunk = (budget / chunks.len()).max(1);
    let mut tokens = Vec::new();
    let mut failures = 0;
    for (i, chunk) in chunks.iter().enumerate() {
        match generator.generate(chunk) {
            Ok(text) => tokens.extend(tokenize(&text).into_iter().take(per_chunk)),
            Err(e) => {
                warn!("generator failed on chunk {i}: {e}");
                failures += 1;
            }
        }
    }
    if failures == chunks.len() {
        return Err(Error::GeneratorUnusable {
            chunks: chunks.len(),
        });
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemVariant {
    Basic,
    Expanded,
}

/// Title then tags (basic), plus the description (expanded).
pub fn item_text(item: &Item, variant: ItemVariant, budget: usize) -> Profile {
    let mut tokens = tokenize(&item.title);
    for tag in &item.tags {
        tokens.extend(tokenize(tag));
    }
    if variant == ItemVariant::Expanded {
        tokens.extend(tokenize(&item.description));
    }
    let provenance = match variant {
        ItemVariant::Basic => Provenance::Basic,
        ItemVariant::Expanded => Provenance::Expanded,
    };
    Profile::from_stream(tokens, budget, provenance)
}

/// Distinct tags of the user's training items by descending frequency
/// (ties lexicographic).
pub fn user_text_basic(train_items: &[&Item], budget: usize) -> Profile {
    Profile::from_stream(tag_stream(train_items), budget, Provenance::Basic)
}

fn tag_stream(train_items: &[&Item]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in train_items {
        let distinct: HashSet<&str> = item.tags.iter().map(String::as_str).collect();
        for t in distinct {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().flat_map(|(t, _)| tokenize(t)).collect()
}

/// Cuts a selection stream into `chunks` consecutive budget-sized profiles.
pub fn chunk_stream(stream: &[String], chunks: usize, budget: usize, provenance: Provenance) -> Vec<Profile> {
    (0..chunks)
        .map(|c| {
            let start = (c * budget).min(stream.len());
            let end = ((c + 1) * budget).min(stream.len());
            Profile {
                tokens: stream[start..end].to_vec(),
                budget,
                provenance,
            }
        })
        .collect()
}

/// Everything a review-based strategy may need besides the reviews.
pub struct ProfileContext<'a> {
    pub idf_unigram: &'a IdfTable,
    /// idf for phrase orders 2 and 3; indexed by `order - 1`.
    pub idf_ngram: [Option<&'a IdfTable>; 3],
    pub items: &'a BTreeMap<String, Item>,
    pub generator: Option<&'a dyn KeyphraseGenerator>,
    pub generator_chunk_chars: usize,
}

impl<'a> ProfileContext<'a> {
    pub fn new(idf_unigram: &'a IdfTable, items: &'a BTreeMap<String, Item>) -> Self {
        ProfileContext {
            idf_unigram,
            idf_ngram: [Some(idf_unigram), None, None],
            items,
            generator: None,
            generator_chunk_chars: GENERATOR_CHUNK_CHARS,
        }
    }

    fn idf_for(&self, n: usize) -> Result<&'a IdfTable> {
        self.idf_ngram
            .get(n - 1)
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidParameter(format!("no idf table for order {n}")))
    }
}

/// The full ranked token stream of a strategy for one user. `train_items`
/// feeds the tag-only strategy.
pub fn selection_stream(
    strategy: Provenance,
    reviews: &[Review],
    train_items: &[&Item],
    ctx: &ProfileContext<'_>,
    cfg: &ProfileConfig,
) -> Result<Vec<String>> {
    Ok(match strategy {
        Provenance::Phrases1 | Provenance::Phrases2 | Provenance::Phrases3 => {
            let n = strategy.phrase_order().expect("phrase strategy");
            phrase_stream(reviews, ctx.idf_for(n)?, n)
        }
        Provenance::IdfSentences => {
            let ranked = rank_sentences_idf(reviews, ctx.idf_unigram);
            sentence_stream(ranked.iter().map(|(s, _)| s))
        }
        Provenance::SimilarSentences => {
            let embedder = TfIdfEmbedder {
                idf: ctx.idf_unigram,
            };
            similar_stream(reviews, ctx.items, &embedder, ctx.idf_unigram, cfg.round_robin)
        }
        Provenance::ExternalGenerated | Provenance::Keywords => {
            let generator = ctx.generator.ok_or_else(|| {
                Error::InvalidParameter(format!("strategy {strategy} needs a generator"))
            })?;
            // the generator output is bounded per chunk relative to the total budget
            let total = cfg.budget * cfg.chunks;
            generated_stream(reviews, generator, total, ctx.generator_chunk_chars)?
        }
        // the basic and expanded configurations differ only on the item side
        Provenance::Basic | Provenance::Expanded => tag_stream(train_items),
    })
}

/// Builds `cfg.chunks` profiles for one user with the configured strategy.
/// With a single chunk this is the plain profile of that strategy.
pub fn chunk_profile(
    reviews: &[Review],
    train_items: &[&Item],
    ctx: &ProfileContext<'_>,
    cfg: &ProfileConfig,
) -> Result<Vec<Profile>> {
    cfg.validate()?;
    if cfg.chunks == 1 {
        if let Some(n) = cfg.strategy.phrase_order() {
            return Ok(vec![select_phrases(reviews, ctx.idf_for(n)?, n, cfg.budget)?]);
        }
    }
    let stream = selection_stream(cfg.strategy, reviews, train_items, ctx, cfg)?;
    Ok(chunk_stream(&stream, cfg.chunks, cfg.budget, cfg.strategy))
}

/// `id \t provenance \t tokens`; chunked profiles are consecutive lines with
/// the same id.
pub fn write_profiles<'a, W, I>(mut w: W, profiles: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a [Profile])>,
{
    for (id, chunks) in profiles {
        for p in chunks {
            writeln!(w, "{id}\t{}\t{}", p.provenance, p.tokens.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_profiles<R: BufRead>(reader: R, budget: usize) -> Result<BTreeMap<String, Vec<Profile>>> {
    let mut out: BTreeMap<String, Vec<Profile>> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<profile dump>", e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(prov), Some(tokens)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format("profile dump", format!("line {}", n + 1)));
        };
        let tokens: Vec<String> = tokens.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
        out.entry(id.to_string()).or_default().push(Profile {
            budget: budget.max(tokens.len()),
            tokens,
            provenance: prov.parse()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(item: &str, text: &str, position: u64) -> Review {
        Review {
            item_id: item.into(),
            text: text.into(),
            position,
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn item(id: &str, title: &str, tags: &[&str], description: &str) -> Item {
        Item {
            item_id: id.into(),
            title: title.into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            description: description.into(),
            author_id: None,
        }
    }

    #[test]
    fn phrases_by_tf() {
        let idf = IdfTable::uniform(["alpha", "beta"], 1, 1.0);
        let p = select_phrases(&[review("i", "alpha alpha beta", 0)], &idf, 1, 2).unwrap();
        assert_eq!(p.tokens, toks("alpha beta"));
        assert_eq!(p.provenance, Provenance::Phrases1);
    }

    #[test]
    fn trigram_winner_fills_budget_three() {
        let idf = IdfTable::uniform(Vec::<String>::new(), 3, 1.0);
        let text = "scandinavian crime noir. scandinavian crime noir and more";
        let p = select_phrases(&[review("i", text, 0)], &idf, 3, 3).unwrap();
        assert_eq!(p.tokens, toks("scandinavian crime noir"));
    }

    #[test]
    fn phrases_stop_at_first_overflow() {
        let idf = IdfTable::uniform(Vec::<String>::new(), 2, 1.0);
        let p = select_phrases(&[review("i", "a b c d e", 0)], &idf, 2, 5).unwrap();
        assert_eq!(p.len(), 4);
        assert!(select_phrases(&[], &idf, 1, 5).is_err());
    }

    #[test]
    fn sentence_score_is_mean_idf() {
        let idf = IdfTable::load_external("x\t2\ny\t4\n".as_bytes(), 1).unwrap();
        assert_eq!(sentence_idf_score("x y.", &idf), Some(3.0));
        assert_eq!(sentence_idf_score("...", &idf), None);
    }

    #[test]
    fn higher_scored_sentence_first_and_truncation() {
        let idf = IdfTable::load_external("rare\t3\ncommon\t1\n".as_bytes(), 1).unwrap();
        let reviews = [review("i", "common common. rare rare rare.", 0)];
        let p = select_sentences_idf(&reviews, &idf, 10);
        assert_eq!(p.tokens, toks("rare rare rare common common"));
        let p = select_sentences_idf(&reviews, &idf, 4);
        assert_eq!(p.tokens, toks("rare rare rare common"));
    }

    #[test]
    fn duplicate_sentences_suppressed() {
        let idf = IdfTable::uniform(["great", "gift", "idea"], 1, 1.0);
        let reviews = [review("a", "Great gift idea. Great gift idea.", 0)];
        assert_eq!(select_sentences_idf(&reviews, &idf, 128).tokens, toks("great gift idea"));
    }

    #[test]
    fn round_robin_interleaves() {
        let lists = vec![
            ("i1".to_string(), vec!["a1".to_string(), "a2".to_string(), "a3".to_string()]),
            ("i2".to_string(), vec!["b1".to_string(), "b2".to_string()]),
        ];
        assert_eq!(round_robin(&lists), toks("a1 b1 a2 b2 a3"));
    }

    #[test]
    fn similar_sentences_two_items() {
        let items: BTreeMap<String, Item> = [
            ("i1".to_string(), item("i1", "", &[], "dragons and wizards")),
            ("i2".to_string(), item("i2", "", &[], "murder detective")),
        ]
        .into_iter()
        .collect();
        let docs = ["dragons", "wizards", "murder", "detective", "weekend", "coffee"];
        let idf = IdfTable::build(&docs, 1).unwrap();
        let reviews = [
            review("i2", "I read on the weekend. The detective solved the murder.", 1),
            review("i1", "Coffee helps. Dragons everywhere.", 0),
        ];
        let cfg = ProfileConfig {
            budget: 128,
            strategy: Provenance::SimilarSentences,
            ..Default::default()
        };
        let embedder = TfIdfEmbedder { idf: &idf };
        let p = select_sentences_similar(&reviews, &items, &embedder, &idf, &cfg);
        // i1 comes first by position; each item's best sentence precedes its second
        assert_eq!(
            p.tokens,
            toks("dragons everywhere the detective solved the murder coffee helps i read on the weekend")
        );
    }

    #[test]
    fn similar_falls_back_to_idf_without_description() {
        let items = BTreeMap::new();
        let idf = IdfTable::load_external("rare\t5\ncommon\t1\n".as_bytes(), 1).unwrap();
        let reviews = [review("x", "common. rare.", 0)];
        let cfg = ProfileConfig::default();
        let p = select_sentences_similar(&reviews, &items, &TfIdfEmbedder { idf: &idf }, &idf, &cfg);
        assert_eq!(p.tokens, toks("rare common"));
    }

    #[test]
    fn mock_generator_contract() {
        let reviews = [review("a", "b a c a b d a", 0)];
        let p = generate_profile_external(&reviews, &MockGenerator, 128, 3000, Provenance::Keywords).unwrap();
        assert_eq!(p.tokens, toks("a b c"));
        assert_eq!(p.provenance, Provenance::Keywords);
    }

    struct Verbose(usize);
    impl KeyphraseGenerator for Verbose {
        fn generate(&self, chunk: &str) -> Result<String> {
            let first = tokenize(chunk).into_iter().next().unwrap_or_default();
            Ok(vec![first; self.0].join(" "))
        }
    }

    struct Failing;
    impl KeyphraseGenerator for Failing {
        fn generate(&self, _: &str) -> Result<String> {
            Err(Error::Generator("down".into()))
        }
    }

    struct FailsOn(&'static str);
    impl KeyphraseGenerator for FailsOn {
        fn generate(&self, chunk: &str) -> Result<String> {
            if chunk.contains(self.0) {
                Err(Error::Generator("bad chunk".into()))
            } else {
                Ok(chunk.to_string())
            }
        }
    }

    #[test]
    fn generator_output_capped() {
        let reviews = [review("a", "word", 0)];
        let p = generate_profile_external(&reviews, &Verbose(200), 128, 3000, Provenance::ExternalGenerated).unwrap();
        assert_eq!(p.len(), 128);
    }

    #[test]
    fn generator_per_chunk_cap() {
        let long = format!("{} {}", "first ".repeat(400), "second ".repeat(400));
        let reviews = [review("a", &long, 0)];
        let chunks = chunk_text(&reviews, 3000);
        assert_eq!(chunks.len(), 2);
        let p = generate_profile_external(&reviews, &Verbose(200), 128, 3000, Provenance::ExternalGenerated).unwrap();
        let from_first = p.tokens.iter().filter(|t| *t == "first").count();
        assert!(from_first <= 64);
        assert_eq!(p.len(), 128);
    }

    #[test]
    fn generator_failures() {
        let reviews = [review("a", "some text", 0)];
        assert!(matches!(
            generate_profile_external(&reviews, &Failing, 128, 3000, Provenance::Keywords),
            Err(Error::GeneratorUnusable { chunks: 1 })
        ));
        let reviews = [review("a", "good words", 0), review("b", "poison here", 1)];
        let p = generate_profile_external(&reviews, &FailsOn("poison"), 128, 12, Provenance::Keywords).unwrap();
        assert_eq!(p.tokens, toks("good words"));
        assert!(generate_profile_external(&[], &Failing, 128, 3000, Provenance::Keywords)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn command_generator_round_trip() {
        let gen = CommandGenerator {
            program: "cat".into(),
            args: vec![],
            timeout: Duration::from_secs(5),
            retries: 1,
        };
        assert_eq!(gen.generate("echo me back").unwrap(), "echo me back");
        let slow = CommandGenerator {
            program: "sleep".into(),
            args: vec!["5".into()],
            timeout: Duration::from_millis(50),
            retries: 0,
        };
        assert!(slow.generate("x").is_err());
    }

    #[test]
    fn external_embedder_reads_one_vector_per_line() {
        // awk prints the word count and the character count of every line
        let texts = vec!["a b".to_string(), "abc".to_string()];
        let e = ExternalEmbedder::precompute(
            "awk",
            &["{ print NF, length($0) }".to_string()],
            &texts,
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(e.embed("a b"), vec![2.0, 3.0]);
        assert_eq!(e.embed("abc"), vec![1.0, 3.0]);
        assert_eq!(e.embed("unknown"), vec![0.0, 0.0]);
    }

    #[test]
    fn item_text_variants() {
        let it = item("i", "The Long Night", &["crime", "noir"], "");
        assert_eq!(item_text(&it, ItemVariant::Expanded, 128), item_text(&it, ItemVariant::Basic, 128).with(Provenance::Expanded));
        assert_eq!(item_text(&it, ItemVariant::Basic, 4).tokens, toks("the long night crime"));
        let it = item("i", "A", &["b"], "Some description.");
        assert_eq!(item_text(&it, ItemVariant::Expanded, 128).tokens, toks("a b some description"));
    }

    impl Profile {
        fn with(mut self, provenance: Provenance) -> Self {
            self.provenance = provenance;
            self
        }
    }

    #[test]
    fn user_tags_by_frequency() {
        let a = item("a", "", &["fiction", "mystery"], "");
        let b = item("b", "", &["fiction"], "");
        let c = item("c", "", &["fiction"], "");
        assert_eq!(user_text_basic(&[&a, &b, &c], 128).tokens, toks("fiction mystery"));
        let empty = item("d", "", &[], "");
        assert!(user_text_basic(&[&empty], 128).is_empty());
    }

    #[test]
    fn chunking_arithmetic() {
        let stream: Vec<String> = (0..300).map(|i| format!("t{i}")).collect();
        let chunks = chunk_stream(&stream, 3, 128, Provenance::IdfSentences);
        let sizes: Vec<usize> = chunks.iter().map(Profile::len).collect();
        assert_eq!(sizes, vec![128, 128, 44]);
        let chunks = chunk_stream(&stream, 5, 128, Provenance::IdfSentences);
        assert_eq!(chunks[3].len(), 0);
        assert_eq!(chunks[4].len(), 0);
    }

    #[test]
    fn single_chunk_equals_plain_profile() {
        let idf = IdfTable::build(&["alpha beta gamma", "beta gamma", "gamma"], 1).unwrap();
        let items = BTreeMap::new();
        let ctx = ProfileContext::new(&idf, &items);
        let reviews = [review("i", "Alpha beta. Gamma gamma beta! Beta alpha alpha.", 0)];
        for strategy in [Provenance::Phrases1, Provenance::IdfSentences] {
            let cfg = ProfileConfig {
                budget: 4,
                chunks: 1,
                strategy,
                round_robin: true,
            };
            let chunks = chunk_profile(&reviews, &[], &ctx, &cfg).unwrap();
            let plain = match strategy {
                Provenance::Phrases1 => select_phrases(&reviews, &idf, 1, 4).unwrap(),
                _ => select_sentences_idf(&reviews, &idf, 4),
            };
            assert_eq!(chunks, vec![plain]);
        }
    }

    #[test]
    fn profile_dump_round_trip() {
        let p = vec![
            Profile::from_stream(toks("a b"), 128, Provenance::IdfSentences),
            Profile::from_stream(vec![], 128, Provenance::IdfSentences),
        ];
        let mut buf = Vec::new();
        write_profiles(&mut buf, [("u1", p.as_slice())]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "u1\tidf_sentences\ta b\nu1\tidf_sentences\t\n");
        let back = read_profiles(buf.as_slice(), 128).unwrap();
        assert_eq!(back["u1"], p);
    }
}
