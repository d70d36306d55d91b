//! Planted-topic corpus generator.
//!
//! Items carry sparse Dirichlet topic mixtures; each user likes one or two
//! topics and picks positives with probability proportional to
//! `exp(affinity * <user topics, item topics>)`. Reviews and descriptions mix
//! topical sentences with sentences of common filler words.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::corpus::{weighted_reservoir, Interaction, Item};
use crate::error::{Error, Result};
use crate::seeding;

const GENRES: [&str; 10] = [
    "mystery", "romance", "fantasy", "history", "science", "horror", "poetry", "travel", "cooking", "sports",
];

const FILLER: [&str; 48] = [
    "the", "a", "book", "story", "read", "really", "very", "was", "is", "and", "it", "this", "that", "i", "of",
    "to", "in", "but", "so", "just", "my", "one", "with", "for", "as", "not", "good", "great", "liked", "much",
    "time", "all", "some", "pages", "author", "more", "would", "get", "again", "also", "think", "find", "bit",
    "quite", "end", "start", "like", "well",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub authors: usize,
    /// Dirichlet concentration of item topic mixtures.
    pub alpha: f64,
    /// Inverse temperature of positive selection.
    pub affinity: f64,
    pub min_positives: usize,
    pub max_positives: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a sentence is pure filler.
    pub filler_sentence_prob: f64,
    /// Share of topic words inside a topical sentence.
    pub topical_word_prob: f64,
    /// Probability of one extra low-rated interaction per user.
    pub low_rating_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 2000,
            topics: 10,
            words_per_topic: 60,
            authors: 700,
            alpha: 0.2,
            affinity: 20.0,
            min_positives: 4,
            max_positives: 16,
            min_tokens: 30,
            max_tokens: 80,
            filler_sentence_prob: 0.4,
            topical_word_prob: 0.8,
            low_rating_prob: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub interactions: Vec<Interaction>,
    pub items: Vec<Item>,
    pub item_topics: BTreeMap<String, Vec<f64>>,
    pub user_topics: BTreeMap<String, Vec<f64>>,
    pub topic_words: Vec<Vec<String>>,
}

struct Vocab {
    topic_words: Vec<Vec<String>>,
}

fn make_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("nonempty"));
        w.push_str(VOWELS.choose(rng).expect("nonempty"));
    }
    if rng.gen_bool(0.5) {
        w.push_str(["n", "r", "s", "x"].choose(rng).expect("nonempty"));
    }
    w
}

impl Vocab {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = seeding::rng_for(cfg.seed, "vocab");
        let mut used: HashSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
        used.extend(GENRES.iter().map(|s| s.to_string()));
        let topic_words = (0..cfg.topics)
            .map(|_| {
                let mut words = Vec::with_capacity(cfg.words_per_topic);
                while words.len() < cfg.words_per_topic {
                    let w = make_word(&mut rng);
                    if used.insert(w.clone()) {
                        words.push(w);
                    }
                }
                words
            })
            .collect();
        Vocab { topic_words }
    }

    fn topic_word(&self, mixture: &[f64], rng: &mut ChaCha8Rng) -> &str {
        let t = sample_index(mixture, rng);
        self.topic_words[t].choose(rng).expect("nonempty topic")
    }
}

pub fn genre_name(topic: usize) -> String {
    GENRES.get(topic).map_or_else(|| format!("genre{topic}"), |g| g.to_string())
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn dirichlet(alpha: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive alpha");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

/// Sentences until the length target, the last one cut to fit.
fn text(mixture: &[f64], vocab: &Vocab, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let target = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
    let mut sentences = Vec::new();
    let mut produced = 0;
    while produced < target {
        let len = rng.gen_range(5..=12).min(target - produced);
        let filler = rng.gen_bool(cfg.filler_sentence_prob);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                if !filler && rng.gen_bool(cfg.topical_word_prob) {
                    vocab.topic_word(mixture, rng)
                } else {
                    FILLER.choose(rng).expect("nonempty")
                }
            })
            .collect();
        produced += words.len();
        sentences.push(format!("{}.", words.join(" ")));
    }
    sentences.join(" ")
}

fn dominant(mixture: &[f64]) -> (usize, Option<usize>) {
    let mut order: Vec<usize> = (0..mixture.len()).collect();
    order.sort_by(|&a, &b| mixture[b].total_cmp(&mixture[a]).then(a.cmp(&b)));
    let second = order.get(1).copied().filter(|&t| mixture[t] > 0.25);
    (order[0], second)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.topics == 0 || cfg.items == 0 || cfg.users == 0 || cfg.min_positives > cfg.max_positives {
        return Err(Error::InvalidParameter("degenerate synthetic corpus configuration".into()));
    }
    if cfg.max_positives > cfg.items || cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens {
        return Err(Error::InvalidParameter("degenerate synthetic corpus configuration".into()));
    }
    let vocab = Vocab::new(cfg);
    let authors_per_topic = (cfg.authors / cfg.topics).max(1);

    let mut items = Vec::with_capacity(cfg.items);
    let mut item_topics = BTreeMap::new();
    let mut rng = seeding::rng_for(cfg.seed, "items");
    for k in 0..cfg.items {
        let id = format!("b{k:05}");
        let mix = dirichlet(cfg.alpha, cfg.topics, &mut rng);
        let (top, second) = dominant(&mix);
        let title: Vec<&str> = (0..rng.gen_range(2..=4)).map(|_| vocab.topic_word(&mix, &mut rng)).collect();
        let mut tags = vec![genre_name(top)];
        if let Some(s) = second {
            tags.push(genre_name(s));
        }
        let author = top * authors_per_topic + rng.gen_range(0..authors_per_topic);
        items.push(Item {
            item_id: id.clone(),
            title: title.join(" "),
            tags,
            description: text(&mix, &vocab, cfg, &mut rng),
            author_id: Some(format!("a{author:04}")),
        });
        item_topics.insert(id, mix);
    }

    let mut interactions = Vec::new();
    let mut user_topics = BTreeMap::new();
    let item_ids: Vec<&String> = item_topics.keys().collect();
    for u in 0..cfg.users {
        let id = format!("u{u:04}");
        let mut rng = seeding::rng_for(cfg.seed, &id);
        let mut pref = vec![0.0; cfg.topics];
        let first = rng.gen_range(0..cfg.topics);
        if cfg.topics > 1 && rng.gen_bool(0.5) {
            let mut second = rng.gen_range(0..cfg.topics - 1);
            if second >= first {
                second += 1;
            }
            let w = rng.gen_range(0.3..0.7);
            pref[first] = w;
            pref[second] = 1.0 - w;
        } else {
            pref[first] = 1.0;
        }
        let weights: Vec<f64> = item_ids
            .iter()
            .map(|i| (cfg.affinity * dot(&pref, &item_topics[*i])).exp())
            .collect();
        let n = rng.gen_range(cfg.min_positives..=cfg.max_positives);
        let mut chosen = weighted_reservoir(&weights, n, &mut rng);
        if rng.gen_bool(cfg.low_rating_prob) {
            let taken: HashSet<usize> = chosen.iter().copied().collect();
            let extra = loop {
                let k = rng.gen_range(0..item_ids.len());
                if !taken.contains(&k) {
                    break k;
                }
            };
            chosen.push(extra);
        }
        let low_index = if chosen.len() > n { Some(n) } else { None };
        let mut positions: Vec<u64> = (0..chosen.len() as u64).collect();
        positions.shuffle(&mut rng);
        for (slot, &k) in chosen.iter().enumerate() {
            let item = item_ids[k];
            let rating = if Some(slot) == low_index {
                rng.gen_range(1..=3)
            } else {
                rng.gen_range(4..=5)
            };
            interactions.push(Interaction {
                user_id: id.clone(),
                item_id: item.clone(),
                rating,
                review: text(&item_topics[item], &vocab, cfg, &mut rng),
                position: positions[slot],
            });
        }
        user_topics.insert(id, pref);
    }
    Ok(SynthCorpus {
        interactions,
        items,
        item_topics,
        user_topics,
        topic_words: vocab.topic_words,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::format("jsonl", e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl SynthCorpus {
    /// Writes `interactions.jsonl` and `items.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("interactions.jsonl"), &self.interactions)?;
        write_jsonl(&dir.join("items.jsonl"), &self.items)
    }
}
