//! Two-tower text model.
//!
//! Each tower mean-pools token embeddings and applies a two-layer ReLU
//! head, `ReLU(v W1 + c1) W2 + c2`. A user-item pair is scored by the
//! sigmoid of the dot product of the two tower outputs, optionally
//! extended by frozen latent factor vectors on both sides. Several user
//! chunks can be combined by a coordinate-wise max before the dot product.
//! Training minimizes weighted binary cross-entropy with mini-batch Adam;
//! gradients are derived by hand.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factorization::{bce_with_logit, sigmoid, FactorModel};
use crate::profiles::Profile;
use crate::sampling::TrainingExample;
use crate::seeding;

pub const OOV_TOKEN: &str = "<unk>";

/// Token → row index; row 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build<'a, I: IntoIterator<Item = &'a String>>(tokens: I) -> Self {
        let mut distinct: Vec<&String> = tokens.into_iter().collect();
        distinct.sort();
        distinct.dedup();
        let mut all = vec![OOV_TOKEN.to_string()];
        all.extend(distinct.into_iter().filter(|t| t.as_str() != OOV_TOKEN).cloned());
        Self::from_tokens(all)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// First 8 bytes of SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens[1..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: std::io::BufRead>(reader: R) -> Result<Self> {
        let mut tokens = vec![OOV_TOKEN.to_string()];
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io("<vocabulary>", e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            tokens.push(line);
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerDims {
    pub embedding: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for TowerDims {
    fn default() -> Self {
        TowerDims {
            embedding: 64,
            hidden: 128,
            output: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    HeadOnly,
    EmbeddingsAndHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkPooling {
    /// Only the first chunk of a user is used.
    None,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dims: TowerDims,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub trainable_scope: TrainableScope,
    pub cf_concat: bool,
    pub chunk_pooling: ChunkPooling,
    pub shared_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: TowerDims::default(),
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 64,
            rng_seed: 23,
            trainable_scope: TrainableScope::EmbeddingsAndHead,
            cf_concat: false,
            chunk_pooling: ChunkPooling::None,
            shared_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if self.epochs == 0 || self.batch_size == 0 || d.embedding == 0 || d.hidden == 0 || d.output == 0 {
            return Err(Error::InvalidParameter(
                "epochs, batch size and tower dimensions must be at least 1".into(),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tower {
    User,
    Item,
}

/// Named parameter tensors. The item embedding slot is empty when the
/// towers share one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    UserEmbeddings = 0,
    ItemEmbeddings,
    UserW1,
    UserC1,
    UserW2,
    UserC2,
    ItemW1,
    ItemC1,
    ItemW2,
    ItemC2,
}

impl Slot {
    pub const ALL: [Slot; 10] = [
        Slot::UserEmbeddings,
        Slot::ItemEmbeddings,
        Slot::UserW1,
        Slot::UserC1,
        Slot::UserW2,
        Slot::UserC2,
        Slot::ItemW1,
        Slot::ItemC1,
        Slot::ItemW2,
        Slot::ItemC2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::UserEmbeddings => "user.embeddings",
            Slot::ItemEmbeddings => "item.embeddings",
            Slot::UserW1 => "user.w1",
            Slot::UserC1 => "user.c1",
            Slot::UserW2 => "user.w2",
            Slot::UserC2 => "user.c2",
            Slot::ItemW1 => "item.w1",
            Slot::ItemC1 => "item.c1",
            Slot::ItemW2 => "item.w2",
            Slot::ItemC2 => "item.c2",
        }
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, Slot::UserEmbeddings | Slot::ItemEmbeddings)
    }

    fn head(tower: Tower) -> [Slot; 4] {
        match tower {
            Tower::User => [Slot::UserW1, Slot::UserC1, Slot::UserW2, Slot::UserC2],
            Tower::Item => [Slot::ItemW1, Slot::ItemC1, Slot::ItemW2, Slot::ItemC2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerParameters {
    pub dims: TowerDims,
    pub vocab_size: usize,
    pub vocab_hash: u64,
    pub shared_embeddings: bool,
    pub scope: TrainableScope,
    pub tensors: Vec<Vec<f64>>,
}

/// Tensors shaped like [`TowerParameters::tensors`].
pub type Gradients = Vec<Vec<f64>>;

struct Pass {
    ids: Vec<u32>,
    mean: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
}

impl TowerParameters {
    /// Seeded Gaussian init with stdev `1 / sqrt(fan_in)` (1 for embedding
    /// rows, whose fan-in is a single one-hot input); biases start at 0.
    pub fn init(vocab: &Vocabulary, dims: TowerDims, shared_embeddings: bool, scope: TrainableScope, seed: u64) -> Self {
        let mut rng = seeding::rng_for(seed, "tower-init");
        let mut gaussian = |n: usize, fan_in: usize| -> Vec<f64> {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid stdev");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        let (v, e, h, d) = (vocab.len(), dims.embedding, dims.hidden, dims.output);
        let mut tensors = vec![Vec::new(); Slot::ALL.len()];
        tensors[Slot::UserEmbeddings as usize] = gaussian(v * e, 1);
        if !shared_embeddings {
            tensors[Slot::ItemEmbeddings as usize] = gaussian(v * e, 1);
        }
        for tower in [Tower::User, Tower::Item] {
            let [w1, c1, w2, c2] = Slot::head(tower);
            tensors[w1 as usize] = gaussian(e * h, e);
            tensors[c1 as usize] = vec![0.0; h];
            tensors[w2 as usize] = gaussian(h * d, h);
            tensors[c2 as usize] = vec![0.0; d];
        }
        TowerParameters {
            dims,
            vocab_size: v,
            vocab_hash: vocab.hash(),
            shared_embeddings,
            scope,
            tensors,
        }
    }

    pub fn tensor(&self, slot: Slot) -> &[f64] {
        &self.tensors[slot as usize]
    }

    pub fn tensor_mut(&mut self, slot: Slot) -> &mut Vec<f64> {
        &mut self.tensors[slot as usize]
    }

    fn embedding_slot(&self, tower: Tower) -> Slot {
        match tower {
            Tower::Item if !self.shared_embeddings => Slot::ItemEmbeddings,
            _ => Slot::UserEmbeddings,
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    fn forward(&self, ids: &[u32], tower: Tower) -> Pass {
        let TowerDims {
            embedding: e,
            hidden: h,
            output: d,
        } = self.dims;
        let emb = self.tensor(self.embedding_slot(tower));
        let mut mean = vec![0.0; e];
        if !ids.is_empty() {
            for &id in ids {
                let row = &emb[id as usize * e..(id as usize + 1) * e];
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            let inv = 1.0 / ids.len() as f64;
            for m in &mut mean {
                *m *= inv;
            }
        }
        let [w1, c1, w2, c2] = Slot::head(tower).map(|s| self.tensor(s));
        let mut pre = c1.to_vec();
        for (k, &vk) in mean.iter().enumerate() {
            if vk == 0.0 {
                continue;
            }
            let row = &w1[k * h..(k + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += vk * w;
            }
        }
        let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mut out = c2.to_vec();
        for (j, &aj) in act.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            let row = &w2[j * d..(j + 1) * d];
            for (o, w) in out.iter_mut().zip(row) {
                *o += aj * w;
            }
        }
        Pass {
            ids: ids.to_vec(),
            mean,
            pre,
            act,
            out,
        }
    }

    fn backward(&self, pass: &Pass, d_out: &[f64], tower: Tower, train_embeddings: bool, grads: &mut Gradients) {
        let TowerDims {
            embedding: e,
            hidden: h,
            output: d,
        } = self.dims;
        let [sw1, sc1, sw2, sc2] = Slot::head(tower);
        let w1 = self.tensor(sw1);
        let w2 = self.tensor(sw2);

        for (g, x) in grads[sc2 as usize].iter_mut().zip(d_out) {
            *g += x;
        }
        let mut d_pre = vec![0.0; h];
        {
            let gw2 = &mut grads[sw2 as usize];
            for j in 0..h {
                if pass.pre[j] <= 0.0 {
                    continue;
                }
                let aj = pass.act[j];
                let row = &w2[j * d..(j + 1) * d];
                let grow = &mut gw2[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for k in 0..d {
                    grow[k] += aj * d_out[k];
                    acc += row[k] * d_out[k];
                }
                d_pre[j] = acc;
            }
        }
        for (g, x) in grads[sc1 as usize].iter_mut().zip(&d_pre) {
            *g += x;
        }
        let mut d_mean = vec![0.0; e];
        {
            let gw1 = &mut grads[sw1 as usize];
            for k in 0..e {
                let vk = pass.mean[k];
                let row = &w1[k * h..(k + 1) * h];
                let grow = &mut gw1[k * h..(k + 1) * h];
                let mut acc = 0.0;
                for j in 0..h {
                    grow[j] += vk * d_pre[j];
                    acc += row[j] * d_pre[j];
                }
                d_mean[k] = acc;
            }
        }
        if train_embeddings && !pass.ids.is_empty() {
            let inv = 1.0 / pass.ids.len() as f64;
            let gemb = &mut grads[self.embedding_slot(tower) as usize];
            for &id in &pass.ids {
                let row = &mut gemb[id as usize * e..(id as usize + 1) * e];
                for (g, x) in row.iter_mut().zip(&d_mean) {
                    *g += x * inv;
                }
            }
        }
    }

    /// Tower output for already encoded tokens; the zero vector is the mean
    /// of an empty profile.
    pub fn encode_ids(&self, ids: &[u32], tower: Tower) -> Vec<f64> {
        self.forward(ids, tower).out
    }

    pub fn encode(&self, profile: &Profile, vocab: &Vocabulary, tower: Tower) -> Vec<f64> {
        self.encode_ids(&vocab.encode(&profile.tokens), tower)
    }

    /// Coordinate-wise max over the encoded chunks.
    pub fn encode_chunks(&self, chunks: &[Vec<u32>], tower: Tower) -> Vec<f64> {
        let passes: Vec<Pass> = chunks.iter().map(|c| self.forward(c, tower)).collect();
        max_pool(&passes).0
    }

    /// Weighted BCE over `batch`, normalized by the total weight.
    pub fn objective(&self, set: &EncodedSet, batch: &[usize], pooling: ChunkPooling) -> f64 {
        let total_weight: f64 = batch.iter().map(|&k| set.examples[k].weight).sum();
        let mut loss = 0.0;
        for &k in batch {
            let ex = &set.examples[k];
            let u = self.user_output(set, ex.user, pooling).0;
            let i = self.forward(&set.items[ex.item], Tower::Item).out;
            let logit = extended_dot(&u, &i, &set.user_latent[ex.user], &set.item_latent[ex.item]);
            loss += ex.weight * bce_with_logit(logit, ex.label);
        }
        loss / total_weight
    }

    fn user_output(&self, set: &EncodedSet, user: usize, pooling: ChunkPooling) -> (Vec<f64>, Vec<Pass>, Vec<usize>) {
        let chunks = &set.users[user];
        let used: &[Vec<u32>] = match pooling {
            ChunkPooling::None => &chunks[..1.min(chunks.len())],
            ChunkPooling::Max => chunks,
        };
        let passes: Vec<Pass> = if used.is_empty() {
            vec![self.forward(&[], Tower::User)]
        } else {
            used.iter().map(|c| self.forward(c, Tower::User)).collect()
        };
        let (pooled, argmax) = max_pool(&passes);
        (pooled, passes, argmax)
    }

    /// Objective and its gradient with respect to every tensor. Embedding
    /// gradients stay zero under the head-only scope.
    pub fn gradient(&self, set: &EncodedSet, batch: &[usize], pooling: ChunkPooling) -> (f64, Gradients) {
        let train_emb = self.scope == TrainableScope::EmbeddingsAndHead;
        let mut grads = self.zero_gradients();
        let total_weight: f64 = batch.iter().map(|&k| set.examples[k].weight).sum();
        let mut loss = 0.0;
        let d = self.dims.output;
        for &k in batch {
            let ex = &set.examples[k];
            let (u, passes, argmax) = self.user_output(set, ex.user, pooling);
            let ipass = self.forward(&set.items[ex.item], Tower::Item);
            let logit = extended_dot(&u, &ipass.out, &set.user_latent[ex.user], &set.item_latent[ex.item]);
            loss += ex.weight * bce_with_logit(logit, ex.label);
            let d_logit = ex.weight * (sigmoid(logit) - ex.label) / total_weight;

            let d_item: Vec<f64> = u.iter().map(|x| d_logit * x).collect();
            self.backward(&ipass, &d_item, Tower::Item, train_emb, &mut grads);
            for (c, pass) in passes.iter().enumerate() {
                let mut d_user = vec![0.0; d];
                let mut any = false;
                for j in 0..d {
                    if argmax[j] == c {
                        d_user[j] = d_logit * ipass.out[j];
                        any = true;
                    }
                }
                if any {
                    self.backward(pass, &d_user, Tower::User, train_emb, &mut grads);
                }
            }
        }
        (loss / total_weight, grads)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }

    pub fn write<W: Write>(&self, mut w: W, extra_header: &[(String, String)]) -> std::io::Result<()> {
        let mut header = format!(
            "embedding={}\nhidden={}\noutput={}\nvocab_size={}\nvocab_hash={:016x}\nshared_embeddings={}\nscope={}\n",
            self.dims.embedding,
            self.dims.hidden,
            self.dims.output,
            self.vocab_size,
            self.vocab_hash,
            u8::from(self.shared_embeddings),
            match self.scope {
                TrainableScope::HeadOnly => "head_only",
                TrainableScope::EmbeddingsAndHead => "embeddings_and_head",
            }
        );
        for (k, v) in extra_header {
            header.push_str(&format!("{k}={v}\n"));
        }
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&(Slot::ALL.len() as u32).to_le_bytes())?;
        for slot in Slot::ALL {
            let name = slot.name().as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(self.tensor(slot).len() as u64).to_le_bytes())?;
        }
        for slot in Slot::ALL {
            for x in self.tensor(slot) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads parameters, refusing a file trained against another vocabulary.
    /// Returns the parameters and the raw header entries.
    pub fn read<R: Read>(mut r: R, expected_vocab_hash: u64) -> Result<(Self, BTreeMap<String, String>)> {
        let bad = |d: &str| Error::format("tower parameters", d.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(bad("unsupported version"));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        let header = String::from_utf8(header).map_err(|_| bad("header is not utf-8"))?;
        let fields: BTreeMap<String, String> = header
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let num = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("header field `{k}`")))
        };
        let vocab_hash = fields
            .get("vocab_hash")
            .and_then(|v| u64::from_str_radix(v, 16).ok())
            .ok_or_else(|| bad("header field `vocab_hash`"))?;
        if vocab_hash != expected_vocab_hash {
            return Err(Error::VocabMismatch {
                expected: expected_vocab_hash,
                found: vocab_hash,
            });
        }
        let dims = TowerDims {
            embedding: num("embedding")?,
            hidden: num("hidden")?,
            output: num("output")?,
        };
        let scope = match fields.get("scope").map(String::as_str) {
            Some("head_only") => TrainableScope::HeadOnly,
            Some("embeddings_and_head") => TrainableScope::EmbeddingsAndHead,
            _ => return Err(bad("header field `scope`")),
        };
        let sections = read_u32(&mut r)? as usize;
        let mut index = Vec::with_capacity(sections);
        for _ in 0..sections {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(|_| bad("truncated index"))?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name).map_err(|_| bad("truncated index"))?;
            let mut count = [0u8; 8];
            r.read_exact(&mut count).map_err(|_| bad("truncated index"))?;
            index.push((String::from_utf8_lossy(&name).into_owned(), u64::from_le_bytes(count) as usize));
        }
        let mut tensors = vec![Vec::new(); Slot::ALL.len()];
        for (name, count) in index {
            let mut data = Vec::with_capacity(count);
            let mut buf = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
                data.push(f64::from_le_bytes(buf));
            }
            let slot = Slot::ALL
                .into_iter()
                .find(|s| s.name() == name)
                .ok_or_else(|| bad(&format!("unknown section `{name}`")))?;
            tensors[slot as usize] = data;
        }
        let params = TowerParameters {
            dims,
            vocab_size: num("vocab_size")?,
            vocab_hash,
            shared_embeddings: num("shared_embeddings")? == 1,
            scope,
            tensors,
        };
        params.check_shapes()?;
        Ok((params, fields))
    }

    fn check_shapes(&self) -> Result<()> {
        let TowerDims {
            embedding: e,
            hidden: h,
            output: d,
        } = self.dims;
        let v = self.vocab_size;
        for slot in Slot::ALL {
            let want = match slot {
                Slot::UserEmbeddings => v * e,
                Slot::ItemEmbeddings if self.shared_embeddings => 0,
                Slot::ItemEmbeddings => v * e,
                Slot::UserW1 | Slot::ItemW1 => e * h,
                Slot::UserC1 | Slot::ItemC1 => h,
                Slot::UserW2 | Slot::ItemW2 => h * d,
                Slot::UserC2 | Slot::ItemC2 => d,
            };
            if self.tensor(slot).len() != want {
                return Err(Error::format(
                    "tower parameters",
                    format!("section {} has {} values, expected {want}", slot.name(), self.tensor(slot).len()),
                ));
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"PRTW";
const FORMAT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("tower parameters", "truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn max_pool(passes: &[Pass]) -> (Vec<f64>, Vec<usize>) {
    let d = passes[0].out.len();
    let mut pooled = passes[0].out.clone();
    let mut argmax = vec![0; d];
    for (c, p) in passes.iter().enumerate().skip(1) {
        for j in 0..d {
            if p.out[j] > pooled[j] {
                pooled[j] = p.out[j];
                argmax[j] = c;
            }
        }
    }
    (pooled, argmax)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn extended_dot(user: &[f64], item: &[f64], user_latent: &[f64], item_latent: &[f64]) -> f64 {
    dot(user, item) + dot(user_latent, item_latent)
}

/// A score in (0, 1) together with the logit it came from. The logit is
/// kept because the sigmoid saturates in floating point and would create
/// spurious ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub logit: f64,
}

/// `sigmoid(<user, item>)`.
pub fn score(user: &[f64], item: &[f64]) -> Result<Score> {
    if user.len() != item.len() {
        return Err(Error::DimensionMismatch {
            left: user.len(),
            right: item.len(),
        });
    }
    let logit = dot(user, item);
    Ok(Score {
        value: sigmoid(logit),
        logit,
    })
}

/// Appends the latent vector; a missing one is replaced by zeros of `cf_dim`.
pub fn concat_cf(text: &[f64], latent: Option<&[f64]>, cf_dim: usize) -> Vec<f64> {
    let mut out = text.to_vec();
    match latent {
        Some(l) => out.extend_from_slice(l),
        None => out.extend(std::iter::repeat_n(0.0, cf_dim)),
    }
    out
}

/// Frozen latent vectors for the CF concatenation.
#[derive(Debug, Clone, Default)]
pub struct LatentVectors {
    pub dim: usize,
    pub users: HashMap<String, Vec<f64>>,
    pub items: HashMap<String, Vec<f64>>,
}

impl LatentVectors {
    pub fn from_model(model: &FactorModel) -> Self {
        LatentVectors {
            dim: model.dim(),
            users: model
                .user_ids()
                .iter()
                .map(|u| (u.clone(), model.user_vector(u).expect("known user").to_vec()))
                .collect(),
            items: model
                .item_ids()
                .iter()
                .map(|i| (i.clone(), model.item_vector(i).expect("known item").to_vec()))
                .collect(),
        }
    }

    fn lookup(&self, map: &HashMap<String, Vec<f64>>, id: &str, missing: &mut usize) -> Vec<f64> {
        match map.get(id) {
            Some(v) => v.clone(),
            None => {
                *missing += 1;
                vec![0.0; self.dim]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub user: usize,
    pub item: usize,
    pub label: f64,
    pub weight: f64,
}

/// Training examples with profiles resolved to token ids and latent
/// vectors resolved (empty when CF concatenation is off).
#[derive(Debug, Clone)]
pub struct EncodedSet {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub users: Vec<Vec<Vec<u32>>>,
    pub items: Vec<Vec<u32>>,
    pub user_latent: Vec<Vec<f64>>,
    pub item_latent: Vec<Vec<f64>>,
    pub examples: Vec<EncodedExample>,
}

impl EncodedSet {
    pub fn build(
        examples: &[TrainingExample],
        user_profiles: &BTreeMap<String, Vec<Profile>>,
        item_profiles: &BTreeMap<String, Profile>,
        vocab: &Vocabulary,
        latent: Option<&LatentVectors>,
    ) -> Result<Self> {
        let mut user_slot: BTreeMap<&str, usize> = BTreeMap::new();
        let mut item_slot: BTreeMap<&str, usize> = BTreeMap::new();
        let mut set = EncodedSet {
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            users: Vec::new(),
            items: Vec::new(),
            user_latent: Vec::new(),
            item_latent: Vec::new(),
            examples: Vec::with_capacity(examples.len()),
        };
        let mut missing = 0usize;
        for ex in examples {
            let u = match user_slot.get(ex.user_id.as_str()) {
                Some(&u) => u,
                None => {
                    let chunks = user_profiles
                        .get(&ex.user_id)
                        .ok_or_else(|| Error::InvalidParameter(format!("no profile for user {}", ex.user_id)))?;
                    set.users.push(chunks.iter().map(|p| vocab.encode(&p.tokens)).collect());
                    set.user_latent.push(match latent {
                        Some(l) => l.lookup(&l.users, &ex.user_id, &mut missing),
                        None => Vec::new(),
                    });
                    set.user_ids.push(ex.user_id.clone());
                    user_slot.insert(&ex.user_id, set.users.len() - 1);
                    set.users.len() - 1
                }
            };
            let i = match item_slot.get(ex.item_id.as_str()) {
                Some(&i) => i,
                None => {
                    let p = item_profiles
                        .get(&ex.item_id)
                        .ok_or_else(|| Error::InvalidParameter(format!("no profile for item {}", ex.item_id)))?;
                    set.items.push(vocab.encode(&p.tokens));
                    set.item_latent.push(match latent {
                        Some(l) => l.lookup(&l.items, &ex.item_id, &mut missing),
                        None => Vec::new(),
                    });
                    set.item_ids.push(ex.item_id.clone());
                    item_slot.insert(&ex.item_id, set.items.len() - 1);
                    set.items.len() - 1
                }
            };
            set.examples.push(EncodedExample {
                user: u,
                item: i,
                label: f64::from(ex.label),
                weight: ex.weight,
            });
        }
        if missing > 0 {
            warn!("{missing} entities have no latent vector; zero-padded");
        }
        Ok(set)
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(params: &TowerParameters) -> Self {
        Adam {
            m: params.zero_gradients(),
            v: params.zero_gradients(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut TowerParameters, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.step);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let head_only = params.scope == TrainableScope::HeadOnly;
        for slot in Slot::ALL {
            if head_only && slot.is_embedding() {
                continue;
            }
            let s = slot as usize;
            let (m, v, g) = (&mut self.m[s], &mut self.v[s], &grads[s]);
            for (k, p) in params.tensors[s].iter_mut().enumerate() {
                m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g[k];
                v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: TowerParameters,
    /// Weighted mean loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Wall time per epoch; not part of any artifact.
    pub epoch_seconds: Vec<f64>,
}

/// Mini-batch Adam over seeded shuffles of the examples.
pub fn train(set: &EncodedSet, vocab: &Vocabulary, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.examples.is_empty() {
        return Err(Error::InvalidParameter("no training examples".into()));
    }
    let mut params = TowerParameters::init(vocab, cfg.dims, cfg.shared_embeddings, cfg.trainable_scope, cfg.rng_seed);
    let mut adam = Adam::new(&params);
    let mut rng = seeding::rng_for(cfg.rng_seed, "tower-shuffle");
    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        let mut weight = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = params.gradient(set, batch, cfg.chunk_pooling);
            if !loss.is_finite() {
                return Err(Error::TowerDiverged { epoch, batch: b });
            }
            let w: f64 = batch.iter().map(|&k| set.examples[k].weight).sum();
            weighted_loss += loss * w;
            weight += w;
            adam.update(&mut params, &grads, cfg);
        }
        if !params.is_finite() {
            return Err(Error::TowerDiverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        loss_trace.push(weighted_loss / weight);
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        params,
        loss_trace,
        epoch_seconds,
    })
}

/// Trained parameters bundled with what inference needs.
#[derive(Debug, Clone)]
pub struct TwoTower {
    pub params: TowerParameters,
    pub vocab: Vocabulary,
    pub latent: Option<LatentVectors>,
    pub pooling: ChunkPooling,
}

impl TwoTower {
    /// User vector from its chunks, latent part appended when configured.
    pub fn user_vector(&self, user_id: &str, chunks: &[Profile]) -> Vec<f64> {
        let ids: Vec<Vec<u32>> = match self.pooling {
            ChunkPooling::None => chunks.iter().take(1).map(|p| self.vocab.encode(&p.tokens)).collect(),
            ChunkPooling::Max => chunks.iter().map(|p| self.vocab.encode(&p.tokens)).collect(),
        };
        let text = if ids.is_empty() {
            self.params.encode_ids(&[], Tower::User)
        } else {
            self.params.encode_chunks(&ids, Tower::User)
        };
        match &self.latent {
            Some(l) => concat_cf(&text, l.users.get(user_id).map(Vec::as_slice), l.dim),
            None => text,
        }
    }

    pub fn item_vector(&self, item_id: &str, profile: &Profile) -> Vec<f64> {
        let text = self.params.encode(profile, &self.vocab, Tower::Item);
        match &self.latent {
            Some(l) => concat_cf(&text, l.items.get(item_id).map(Vec::as_slice), l.dim),
            None => text,
        }
    }

    /// Item vectors for a whole catalogue, computed once and reused.
    pub fn item_vectors(&self, items: &BTreeMap<String, Profile>) -> HashMap<String, Vec<f64>> {
        items
            .iter()
            .map(|(id, p)| (id.clone(), self.item_vector(id, p)))
            .collect()
    }
}

/// Candidates by descending score (ties by item id).
pub fn predict_rank(
    user_vec: &[f64],
    candidates: &[String],
    item_vectors: &HashMap<String, Vec<f64>>,
) -> Result<Vec<(String, Score)>> {
    let mut ranked = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = item_vectors
            .get(c)
            .ok_or_else(|| Error::UnknownItem(c.clone()))?;
        ranked.push((c.clone(), score(user_vec, v)?));
    }
    ranked.sort_by(|a, b| b.1.logit.total_cmp(&a.1.logit).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Chunked user scoring against one item profile.
pub fn score_chunked(params: &TowerParameters, vocab: &Vocabulary, user_chunks: &[Profile], item: &Profile) -> Result<Score> {
    if user_chunks.is_empty() {
        return Err(Error::InvalidParameter("score_chunked needs at least one chunk".into()));
    }
    let ids: Vec<Vec<u32>> = user_chunks.iter().map(|p| vocab.encode(&p.tokens)).collect();
    let u = params.encode_chunks(&ids, Tower::User);
    let i = params.encode(item, vocab, Tower::Item);
    score(&u, &i)
}
