mod common;

use std::collections::BTreeMap;

use profilerec::profiles::{Profile, Provenance};
use profilerec::sampling::TrainingExample;
use profilerec::seeding;
use profilerec::towers::{
    self, concat_cf, predict_rank, score, score_chunked, ChunkPooling, EncodedSet, LatentVectors, Slot, Tower,
    TowerDims, TowerParameters, TrainConfig, TrainableScope, TwoTower, Vocabulary,
};
use rand::Rng;

fn words(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("w{k}")).collect()
}

fn random_profile(rng: &mut impl Rng, vocab: &[String], len: usize) -> Profile {
    let toks = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
    Profile::from_stream(toks, 128, Provenance::IdfSentences)
}

fn fixture_params(seed: u64) -> (Vocabulary, TowerParameters) {
    let vocab = Vocabulary::build(&words(30));
    let dims = TowerDims {
        embedding: 6,
        hidden: 7,
        output: 5,
    };
    let mut p = TowerParameters::init(&vocab, dims, false, TrainableScope::EmbeddingsAndHead, seed);
    let mut rng = seeding::rng(seed + 1);
    for t in [Slot::UserC1, Slot::UserC2, Slot::ItemC1, Slot::ItemC2] {
        for x in p.tensor_mut(t).iter_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    (vocab, p)
}

/// Straight-line forward pass written from the equations.
fn reference_encode(p: &TowerParameters, vocab: &Vocabulary, profile: &Profile, tower: Tower) -> Vec<f64> {
    let (emb, w1, c1, w2, c2) = match tower {
        Tower::User => (Slot::UserEmbeddings, Slot::UserW1, Slot::UserC1, Slot::UserW2, Slot::UserC2),
        Tower::Item => (Slot::ItemEmbeddings, Slot::ItemW1, Slot::ItemC1, Slot::ItemW2, Slot::ItemC2),
    };
    let TowerDims {
        embedding: e,
        hidden: h,
        output: d,
    } = p.dims;
    let table = p.tensor(emb);
    let mut v = vec![0.0; e];
    for t in &profile.tokens {
        let row = vocab.id(t) as usize;
        for k in 0..e {
            v[k] += table[row * e + k] / profile.len() as f64;
        }
    }
    let mut a = vec![0.0; h];
    for j in 0..h {
        let mut z = p.tensor(c1)[j];
        for k in 0..e {
            z += v[k] * p.tensor(w1)[k * h + j];
        }
        a[j] = z.max(0.0);
    }
    (0..d)
        .map(|m| p.tensor(c2)[m] + (0..h).map(|j| a[j] * p.tensor(w2)[j * d + m]).sum::<f64>())
        .collect()
}

#[test]
fn encode_matches_reference_implementation() {
    let (vocab, p) = fixture_params(3);
    let mut rng = seeding::rng(11);
    let words = words(35); // includes out-of-vocabulary tokens
    for _ in 0..50 {
        let len = rng.gen_range(1..20);
        let profile = random_profile(&mut rng, &words, len);
        for tower in [Tower::User, Tower::Item] {
            let got = p.encode(&profile, &vocab, tower);
            let want = reference_encode(&p, &vocab, &profile, tower);
            for (g, w) in got.iter().zip(&want) {
                approx::assert_relative_eq!(*g, *w, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }
}

#[test]
fn score_matches_recomputation() {
    let mut rng = seeding::rng(5);
    for _ in 0..100 {
        let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let i: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let dot: f64 = u.iter().zip(&i).map(|(a, b)| a * b).sum();
        let s = score(&u, &i).unwrap();
        approx::assert_relative_eq!(s.value, 1.0 / (1.0 + (-dot).exp()), max_relative = 1e-14);
        assert!(s.value > 0.0 && s.value < 1.0);
    }
}

#[test]
fn chunked_score_is_max_then_dot() {
    let (vocab, p) = fixture_params(8);
    let mut rng = seeding::rng(2);
    let words = words(30);
    let chunks: Vec<Profile> = (0..5).map(|_| random_profile(&mut rng, &words, 6)).collect();
    let item = random_profile(&mut rng, &words, 6);
    let vecs: Vec<Vec<f64>> = chunks.iter().map(|c| reference_encode(&p, &vocab, c, Tower::User)).collect();
    let pooled: Vec<f64> = (0..5)
        .map(|k| vecs.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let iv = reference_encode(&p, &vocab, &item, Tower::Item);
    let dot: f64 = pooled.iter().zip(&iv).map(|(a, b)| a * b).sum();
    let got = score_chunked(&p, &vocab, &chunks, &item).unwrap();
    approx::assert_relative_eq!(got.logit, dot, max_relative = 1e-12);
}

#[test]
fn identical_chunks_equal_single_chunk() {
    let (vocab, p) = fixture_params(9);
    let mut rng = seeding::rng(4);
    let c = random_profile(&mut rng, &words(30), 10);
    let item = random_profile(&mut rng, &words(30), 10);
    let one = score_chunked(&p, &vocab, std::slice::from_ref(&c), &item).unwrap();
    let many = score_chunked(&p, &vocab, &[c.clone(), c.clone(), c], &item).unwrap();
    assert_eq!(one, many);
}

fn ranking_model(latent: Option<LatentVectors>) -> (TwoTower, BTreeMap<String, Profile>, Vec<Profile>) {
    let (vocab, params) = fixture_params(21);
    let mut rng = seeding::rng(77);
    let w = words(30);
    let items: BTreeMap<String, Profile> = (0..101)
        .map(|k| (format!("i{k:03}"), random_profile(&mut rng, &w, 8)))
        .collect();
    let user = vec![random_profile(&mut rng, &w, 12)];
    let model = TwoTower {
        params,
        vocab,
        latent,
        pooling: ChunkPooling::None,
    };
    (model, items, user)
}

#[test]
fn ranking_matches_brute_force_sort() {
    let (model, items, user) = ranking_model(None);
    let vectors = model.item_vectors(&items);
    let uv = model.user_vector("u", &user);
    let candidates: Vec<String> = items.keys().cloned().collect();
    let ranked = predict_rank(&uv, &candidates, &vectors).unwrap();

    let mut brute: Vec<(String, f64)> = items
        .iter()
        .map(|(id, p)| {
            let iv = reference_encode(&model.params, &model.vocab, p, Tower::Item);
            (id.clone(), uv.iter().zip(&iv).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect();
    brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let got: Vec<&str> = ranked.iter().map(|(id, _)| id.as_str()).collect();
    let want: Vec<&str> = brute.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(got, want);
    // ordering by the sigmoid agrees with ordering by the logit
    assert!(ranked.windows(2).all(|w| w[0].1.value >= w[1].1.value));

    let single = predict_rank(&uv, &candidates[..1], &vectors).unwrap();
    assert_eq!(single.len(), 1);
}

#[test]
fn zero_latent_vectors_leave_scores_unchanged() {
    let (plain, items, user) = ranking_model(None);
    let mut latent = LatentVectors {
        dim: 4,
        ..LatentVectors::default()
    };
    latent.users.insert("u".into(), vec![0.0; 4]);
    for id in items.keys() {
        latent.items.insert(id.clone(), vec![0.0; 4]);
    }
    let (with_cf, _, _) = ranking_model(Some(latent));
    let a = plain.user_vector("u", &user);
    let b = with_cf.user_vector("u", &user);
    assert_eq!(b.len(), a.len() + 4);
    let va = plain.item_vectors(&items);
    let vb = with_cf.item_vectors(&items);
    assert!(vb.values().all(|v| v.len() == a.len() + 4));
    let ids: Vec<String> = items.keys().cloned().collect();
    assert_eq!(predict_rank(&a, &ids, &va).unwrap(), predict_rank(&b, &ids, &vb).unwrap());
}

#[test]
fn concat_shapes() {
    assert_eq!(concat_cf(&[1.0, 2.0], Some(&[3.0]), 1), vec![1.0, 2.0, 3.0]);
    assert_eq!(concat_cf(&[1.0, 2.0], None, 3).len(), 5);
}

fn toy_training(examples: &[TrainingExample], epochs: usize, seed: u64) -> (Vocabulary, towers::TrainOutcome) {
    let mut users = BTreeMap::new();
    users.insert(
        "u".to_string(),
        vec![Profile::from_stream(vec!["likes".into(), "dragons".into()], 8, Provenance::IdfSentences)],
    );
    let mut items = BTreeMap::new();
    items.insert("a".to_string(), Profile::from_stream(vec!["dragons".into()], 8, Provenance::Expanded));
    items.insert("b".to_string(), Profile::from_stream(vec!["cooking".into()], 8, Provenance::Expanded));
    let vocab = Vocabulary::build(&["likes".to_string(), "dragons".into(), "cooking".into()]);
    let set = EncodedSet::build(examples, &users, &items, &vocab, None).unwrap();
    let cfg = TrainConfig {
        dims: TowerDims {
            embedding: 8,
            hidden: 8,
            output: 8,
        },
        learning_rate: 1e-2,
        epochs,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    let out = towers::train(&set, &vocab, &cfg).unwrap();
    (vocab, out)
}

#[test]
fn single_positive_pair_is_learned() {
    let (vocab, out) = toy_training(&[TrainingExample::positive("u", "a")], 200, 1);
    let user = Profile::from_stream(vec!["likes".into(), "dragons".into()], 8, Provenance::IdfSentences);
    let item = Profile::from_stream(vec!["dragons".into()], 8, Provenance::Expanded);
    let s = score_chunked(&out.params, &vocab, &[user], &item).unwrap();
    assert!(s.value >= 0.9, "{}", s.value);
    assert!(out.loss_trace.first() > out.loss_trace.last());
}

#[test]
fn training_is_bitwise_deterministic() {
    let ex = vec![
        TrainingExample::positive("u", "a"),
        TrainingExample {
            user_id: "u".into(),
            item_id: "b".into(),
            label: 0,
            weight: 1.0,
        },
    ];
    let (_, a) = toy_training(&ex, 20, 4);
    let (_, b) = toy_training(&ex, 20, 4);
    let bits = |p: &TowerParameters| -> Vec<u64> { p.tensors.iter().flatten().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn duplicated_half_weights_equal_unit_weight() {
    let toy = common::tower_toy(1, TrainableScope::EmbeddingsAndHead, false, 1, false);
    let mut half = toy.set.clone();
    let mut unit = toy.set.clone();
    half.examples.clear();
    unit.examples.clear();
    for e in &toy.set.examples {
        let mut h = e.clone();
        h.weight = 0.5;
        half.examples.push(h.clone());
        half.examples.push(h);
        let mut u = e.clone();
        u.weight = 1.0;
        unit.examples.push(u);
    }
    let hb: Vec<usize> = (0..half.examples.len()).collect();
    let ub: Vec<usize> = (0..unit.examples.len()).collect();
    // equal up to the order of floating-point accumulation
    approx::assert_relative_eq!(
        toy.params.objective(&half, &hb, ChunkPooling::None),
        toy.params.objective(&unit, &ub, ChunkPooling::None),
        max_relative = 1e-14
    );
}

#[test]
fn empty_profile_encodes_to_output_bias() {
    let (vocab, p) = fixture_params(2);
    let empty = Profile::from_stream(vec![], 8, Provenance::IdfSentences);
    // the mean of no tokens is zero, so the output is ReLU(c1) W2 + c2
    let got = p.encode(&empty, &vocab, Tower::User);
    let want = reference_encode(&p, &vocab, &empty, Tower::User);
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        approx::assert_relative_eq!(*g, *w, max_relative = 1e-12);
    }
}
