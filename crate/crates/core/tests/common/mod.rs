#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use profilerec::config::RunConfig;
use profilerec::corpus::{parse_records, Interaction, Item};
use profilerec::evaluation::{aggregate, Report};
use profilerec::pipeline::{Pipeline, Stage, TrainTimings};
use profilerec::profiles::Review;
use profilerec::factorization::FactorModel;
use profilerec::profiles::{Profile, Provenance};
use profilerec::sampling::TrainingExample;
use profilerec::seeding;
use profilerec::textstats::{split_sentences, tokenize, IdfTable};
use profilerec::towers::{
    ChunkPooling, EncodedSet, LatentVectors, Slot, TowerDims, TowerParameters, TrainableScope, Vocabulary,
};
use rand::Rng;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic")
}

pub fn fixture_config() -> RunConfig {
    RunConfig::load(&fixture_dir().join("profilerec.toml")).expect("fixture config")
}

pub fn fixture_corpus() -> (Vec<Interaction>, BTreeMap<String, Item>) {
    let mut interactions = Vec::new();
    let mut items = BTreeMap::new();
    for name in ["interactions.jsonl", "items.jsonl"] {
        let file = File::open(fixture_dir().join(name)).expect("fixture file");
        let parsed = parse_records(BufReader::new(file)).expect("fixture parses");
        assert_eq!(parsed.rejected, 0);
        interactions.extend(parsed.interactions);
        items.extend(parsed.items.into_iter().map(|i| (i.item_id.clone(), i)));
    }
    (interactions, items)
}

/// Reviews of the first `n` fixture users, by user id.
pub fn fixture_reviews(n: usize) -> BTreeMap<String, Vec<Review>> {
    let (interactions, _) = fixture_corpus();
    let mut out: BTreeMap<String, Vec<Review>> = BTreeMap::new();
    for i in interactions {
        out.entry(i.user_id.clone()).or_default().push(Review {
            item_id: i.item_id,
            text: i.review,
            position: i.position,
        });
    }
    out.into_iter().take(n).collect()
}

/// Order-`n` idf over every fixture review and description.
pub fn fixture_idf(n: usize) -> IdfTable {
    let (interactions, items) = fixture_corpus();
    let mut docs: Vec<String> = interactions.into_iter().map(|i| i.review).collect();
    docs.extend(items.into_values().map(|i| i.description));
    IdfTable::build(&docs, n).expect("idf")
}

pub struct RunOutput {
    pub report: Report,
    pub timings: TrainTimings,
}

/// Runs every stage in process, keeping the training timings.
pub fn run_pipeline(config: RunConfig, workdir: &Path) -> RunOutput {
    let p = Pipeline::new(config).expect("pipeline").with_workdir(workdir.to_path_buf());
    for s in [Stage::Preprocess, Stage::Profile, Stage::TrainMf, Stage::Sample] {
        p.run_stage(s).expect("stage");
    }
    let timings = p.train().expect("train");
    p.run_stage(Stage::Eval).expect("eval");
    p.run_stage(Stage::Report).expect("report");
    let report = aggregate(&p.load_records().expect("records"), false).expect("report");
    RunOutput { report, timings }
}

// ---- brute-force oracles, written independently of the library ----

pub fn oracle_ngrams(tokens: &[String], n: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + n <= tokens.len() {
        let mut g = String::new();
        for k in 0..n {
            if k > 0 {
                g.push(' ');
            }
            g.push_str(&tokens[start + k]);
        }
        out.push(g);
        start += 1;
    }
    out
}

pub fn oracle_phrases(reviews: &[Review], idf: &IdfTable, n: usize, budget: usize) -> Vec<String> {
    let mut all: Vec<String> = Vec::new();
    for r in reviews {
        all.extend(oracle_ngrams(&tokenize(&r.text), n));
    }
    let distinct: BTreeSet<&String> = all.iter().collect();
    let mut weighted: Vec<(f64, &String)> = distinct
        .into_iter()
        .map(|g| {
            let tf = all.iter().filter(|x| *x == g).count();
            (tf as f64 * idf.weight(g), g)
        })
        .collect();
    weighted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let mut out = Vec::new();
    for (_, g) in weighted {
        let parts: Vec<&str> = g.split(' ').collect();
        if out.len() + parts.len() > budget {
            break;
        }
        out.extend(parts.into_iter().map(str::to_string));
    }
    out
}

pub fn oracle_sentences(reviews: &[Review], idf: &IdfTable, budget: usize) -> Vec<String> {
    let mut sentences: Vec<String> = Vec::new();
    for r in reviews {
        for s in split_sentences(&r.text) {
            if !sentences.contains(&s) && !tokenize(&s).is_empty() {
                sentences.push(s);
            }
        }
    }
    let score = |s: &String| {
        let w = tokenize(s);
        w.iter().map(|t| idf.weight(t)).sum::<f64>() / w.len() as f64
    };
    sentences.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(b)));
    let mut out: Vec<String> = sentences.iter().flat_map(|s| tokenize(s)).collect();
    out.truncate(budget);
    out
}

/// Scores every document against the query by direct scanning.
pub fn oracle_bm25(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avgdl = total as f64 / n;
    let terms: BTreeSet<&String> = query.iter().collect();
    let mut scored = Vec::new();
    for (id, tokens) in docs {
        let mut score = 0.0;
        for t in &terms {
            let tf = tokens.iter().filter(|x| x == t).count();
            if tf == 0 {
                continue;
            }
            let df = docs.iter().filter(|(_, d)| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let f = tf as f64;
            let norm = k1 * (1.0 - b + b * tokens.len() as f64 / avgdl);
            score += idf * f * (k1 + 1.0) / (f + norm);
        }
        if score > 0.0 {
            scored.push((id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

pub fn oracle_ndcg5(rank: usize) -> f64 {
    let gains = [1.0, 1.0 / 3f64.log2(), 0.5, 1.0 / 5f64.log2(), 1.0 / 6f64.log2()];
    if rank <= 5 {
        gains[rank - 1]
    } else {
        0.0
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// 3 users × 4 items with random labels; worst relative error of the MF
/// gradient against central differences.
pub fn mf_fd_error(seed: u64) -> f64 {
    let users: Vec<String> = (0..3).map(|u| format!("u{u}")).collect();
    let items: Vec<String> = (0..4).map(|i| format!("i{i}")).collect();
    let mut model = FactorModel::init(users, items, 5, true, seed);
    let mut rng = seeding::rng(seed);
    // spread parameters beyond the tiny init so every term matters
    for t in model.parameters_mut() {
        for x in t.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    let examples: Vec<(usize, usize, f64)> = (0..3)
        .flat_map(|u| (0..4).map(move |i| (u, i)))
        .map(|(u, i)| (u, i, if (u + i) % 3 == 0 { 1.0 } else { 0.0 }))
        .collect();
    let l2 = 0.1;
    let g = model.gradient(&examples, l2);
    let analytic = [g.user_vectors, g.item_vectors, g.user_bias, g.item_bias];
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let x = model.parameters_mut()[t][k];
            model.parameters_mut()[t][k] = x + FD_STEP;
            let up = model.objective(&examples, l2);
            model.parameters_mut()[t][k] = x - FD_STEP;
            let down = model.objective(&examples, l2);
            model.parameters_mut()[t][k] = x;
            worst = worst.max(relative_error(grad[k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

pub struct TowerToy {
    pub params: TowerParameters,
    pub set: EncodedSet,
}

/// Vocabulary of 10 rows (9 tokens plus OOV), e=4, h=5, d=3 and 6 weighted
/// examples. Optional user chunks and latent vectors.
pub fn tower_toy(seed: u64, scope: TrainableScope, shared: bool, chunks: usize, cf: bool) -> TowerToy {
    let words: Vec<String> = (0..9).map(|k| format!("w{k}")).collect();
    let vocab = Vocabulary::build(&words);
    assert_eq!(vocab.len(), 10);
    let dims = TowerDims {
        embedding: 4,
        hidden: 5,
        output: 3,
    };
    let mut params = TowerParameters::init(&vocab, dims, shared, scope, seed);
    let mut rng = seeding::rng(seed ^ 0x5eed);
    for t in params.tensors.iter_mut() {
        for x in t.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    let mut draw = |n: usize| -> Vec<String> { (0..n).map(|_| words[rng.gen_range(0..9)].clone()).collect() };
    let mut users = BTreeMap::new();
    for u in 0..2 {
        let c: Vec<Profile> = (0..chunks)
            .map(|_| Profile::from_stream(draw(4), 8, Provenance::IdfSentences))
            .collect();
        users.insert(format!("u{u}"), c);
    }
    let mut items = BTreeMap::new();
    for i in 0..4 {
        let mut toks = draw(3);
        if i == 3 {
            toks.push("never-seen".into());
        }
        items.insert(format!("i{i}"), Profile::from_stream(toks, 8, Provenance::Expanded));
    }
    let ex = |u: usize, i: usize, label: u8, weight: f64| TrainingExample {
        user_id: format!("u{u}"),
        item_id: format!("i{i}"),
        label,
        weight,
    };
    let examples = vec![
        ex(0, 0, 1, 1.0),
        ex(0, 1, 0, 1.0),
        ex(0, 2, 1, 0.3),
        ex(0, 2, 0, 0.7),
        ex(1, 3, 1, 1.0),
        ex(1, 0, 0, 0.5),
    ];
    let latent = cf.then(|| {
        let mut l = LatentVectors {
            dim: 2,
            ..LatentVectors::default()
        };
        for u in 0..2 {
            l.users.insert(format!("u{u}"), vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        for i in 0..3 {
            l.items.insert(format!("i{i}"), vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        l
    });
    let set = EncodedSet::build(&examples, &users, &items, &vocab, latent.as_ref()).expect("toy set");
    TowerToy { params, set }
}

/// Worst relative error over every trainable tensor, and whether frozen
/// tensors got an exactly zero gradient.
pub fn tower_fd_error(toy: &mut TowerToy, pooling: ChunkPooling) -> (f64, bool) {
    let batch: Vec<usize> = (0..toy.set.examples.len()).collect();
    let (_, grads) = toy.params.gradient(&toy.set, &batch, pooling);
    let head_only = toy.params.scope == TrainableScope::HeadOnly;
    let mut worst: f64 = 0.0;
    let mut frozen_zero = true;
    for slot in Slot::ALL {
        let s = slot as usize;
        if head_only && slot.is_embedding() {
            frozen_zero &= grads[s].iter().all(|g| *g == 0.0);
            continue;
        }
        for k in 0..grads[s].len() {
            let x = toy.params.tensors[s][k];
            toy.params.tensors[s][k] = x + FD_STEP;
            let up = toy.params.objective(&toy.set, &batch, pooling);
            toy.params.tensors[s][k] = x - FD_STEP;
            let down = toy.params.objective(&toy.set, &batch, pooling);
            toy.params.tensors[s][k] = x;
            worst = worst.max(relative_error(grads[s][k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    (worst, frozen_zero)
}

/// Splits a 500-user planted corpus and scans every surviving user for a
/// test author among the train or dev items. Returns the number of users
/// checked.
pub fn split_integrity_scan() -> Result<usize, String> {
    use profilerec::corpus::{filter_dataset, split_dataset};
    use profilerec::synthetic::{generate, SynthConfig};
    let corpus = generate(&SynthConfig {
        users: 500,
        seed: 11,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let items: BTreeMap<String, Item> = corpus.items.iter().map(|i| (i.item_id.clone(), i.clone())).collect();
    let kept = filter_dataset(&corpus.interactions, 4, 3);
    let (split, _) = split_dataset(&kept, &items, 0.2, 5).map_err(|e| e.to_string())?;
    if split.users.is_empty() {
        return Err("no user survived the split".into());
    }
    let author = |id: &String| items[id].author_id.clone().expect("planted items have authors");
    for (user, s) in &split.users {
        if s.test.is_empty() || s.train.is_empty() {
            return Err(format!("{user}: empty train or test"));
        }
        let test_authors: BTreeSet<String> = s.test.iter().map(author).collect();
        if let Some(bad) = s.train.iter().chain(&s.dev).find(|i| test_authors.contains(&author(i))) {
            return Err(format!("{user}: item {bad} shares a test author"));
        }
        let all: BTreeSet<&String> = s.positives().collect();
        if all.len() != s.len() {
            return Err(format!("{user}: an item appears in two partitions"));
        }
    }
    Ok(split.users.len())
}

/// Builds a weighted training set over a seeded factor model and checks
/// every cloned pair against brute-force relatedness. Returns the number of
/// pairs checked.
pub fn weighted_clone_scan() -> Result<usize, String> {
    use profilerec::corpus::{DatasetSplit, UserSplit};
    use profilerec::factorization::RelatednessBounds;
    use profilerec::sampling::{build_training_set, SamplingMode, CLONE_EPSILON};
    let users: Vec<String> = (0..6).map(|u| format!("u{u}")).collect();
    let items: Vec<String> = (0..30).map(|i| format!("i{i:02}")).collect();
    let mut model = FactorModel::init(users.clone(), items.clone(), 4, false, 3);
    let mut rng = seeding::rng(8);
    for id in &items {
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        model.set_item(id, &v, 0.0).map_err(|e| e.to_string())?;
    }
    let mut split_users = BTreeMap::new();
    for (k, u) in users.iter().enumerate() {
        split_users.insert(
            u.clone(),
            UserSplit {
                train: (0..4).map(|j| items[(k * 4 + j) % 30].clone()).collect(),
                dev: vec![items[(k * 4 + 4) % 30].clone()],
                test: vec![items[(k * 4 + 5) % 30].clone()],
            },
        );
    }
    let split = DatasetSplit {
        users: split_users,
        all_items: items.iter().cloned().collect(),
    };
    let bounds = RelatednessBounds::estimate(&model, &items, 1_000_000, 0).map_err(|e| e.to_string())?;

    let dot = |a: &str, b: &str| -> f64 {
        let (x, y) = (model.item_vector(a).unwrap(), model.item_vector(b).unwrap());
        x.iter().zip(y).map(|(p, q)| p * q).sum()
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in &items {
        for b in &items {
            lo = lo.min(dot(a, b));
            hi = hi.max(dot(a, b));
        }
    }
    let examples =
        build_training_set(&split, SamplingMode::Weighted, 4, Some((&model, &bounds)), 21).map_err(|e| e.to_string())?;
    let mut pairs = 0;
    let mut k = 0;
    while k < examples.len() {
        let e = &examples[k];
        let positives = &split.users[&e.user_id].train;
        if e.label == 1 && e.weight == 1.0 && positives.contains(&e.item_id) {
            k += 1;
            continue;
        }
        let (pos, neg) = (&examples[k], examples.get(k + 1).ok_or("unpaired clone")?);
        if pos.label != 1 || neg.label != 0 || pos.item_id != neg.item_id || pos.user_id != neg.user_id {
            return Err(format!("example {k} does not start a cloned pair"));
        }
        if pos.weight + neg.weight != 1.0 {
            return Err(format!("pair {k} sums to {}", pos.weight + neg.weight));
        }
        let r = positives
            .iter()
            .map(|p| ((dot(&pos.item_id, p) - lo) / (hi - lo)).clamp(0.0, 1.0))
            .sum::<f64>()
            / positives.len() as f64;
        let r = r.clamp(CLONE_EPSILON, 1.0 - CLONE_EPSILON);
        if (pos.weight - r).abs() > 1e-12 {
            return Err(format!("pair {k}: weight {} but brute-force r {r}", pos.weight));
        }
        pairs += 1;
        k += 2;
    }
    if pairs != 6 * 4 * 4 {
        return Err(format!("expected 96 cloned pairs, found {pairs}"));
    }
    Ok(pairs)
}
