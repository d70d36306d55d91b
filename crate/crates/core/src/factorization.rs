//! Funk-style matrix factorization over binary interactions, trained with
//! SGD on a logistic loss. Supplies the CF baseline score, item-item
//! relatedness for weighted sampling, and frozen latent vectors for the
//! towers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct MfConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub use_bias: bool,
    pub rng_seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 200,
            learning_rate: 0.05,
            l2_weight: 1e-3,
            epochs: 20,
            negatives_per_positive: 4,
            use_bias: true,
            rng_seed: 17,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter("mf dim and epochs must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.l2_weight < 0.0 {
            return Err(Error::InvalidParameter(
                "mf learning rate must be positive and l2 weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    dim: usize,
    use_bias: bool,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
    user_vectors: Vec<f64>,
    item_vectors: Vec<f64>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`.
pub(crate) fn bce_with_logit(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An `(user index, item index, label)` triple.
pub type IndexedExample = (usize, usize, f64);

/// Gradient of [`FactorModel::objective`], laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradient {
    pub user_vectors: Vec<f64>,
    pub item_vectors: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
}

impl FactorModel {
    /// Seeded Gaussian init with mean 0 and stdev `0.1 / sqrt(dim)`; biases 0.
    pub fn init(users: Vec<String>, items: Vec<String>, dim: usize, use_bias: bool, seed: u64) -> Self {
        let user_index: BTreeMap<String, usize> = users.iter().cloned().enumerate().map(|(i, u)| (u, i)).collect();
        let item_index: BTreeMap<String, usize> = items.iter().cloned().enumerate().map(|(i, u)| (u, i)).collect();
        let mut rng = seeding::rng(seed);
        let normal = Normal::new(0.0, 0.1 / (dim as f64).sqrt()).expect("valid stdev");
        let user_vectors = (0..users.len() * dim).map(|_| normal.sample(&mut rng)).collect();
        let item_vectors = (0..items.len() * dim).map(|_| normal.sample(&mut rng)).collect();
        FactorModel {
            dim,
            use_bias,
            user_bias: vec![0.0; users.len()],
            item_bias: vec![0.0; items.len()],
            user_ids: users,
            item_ids: items,
            user_index,
            item_index,
            user_vectors,
            item_vectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn uses_bias(&self) -> bool {
        self.use_bias
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_idx(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_idx(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_vector(&self, id: &str) -> Option<&[f64]> {
        self.user_idx(id).map(|u| self.user_row(u))
    }

    pub fn item_vector(&self, id: &str) -> Option<&[f64]> {
        self.item_idx(id).map(|i| self.item_row(i))
    }

    pub fn user_bias(&self, id: &str) -> Option<f64> {
        self.user_idx(id).map(|u| self.user_bias[u])
    }

    pub fn item_bias(&self, id: &str) -> Option<f64> {
        self.item_idx(id).map(|i| self.item_bias[i])
    }

    fn user_row(&self, u: usize) -> &[f64] {
        &self.user_vectors[u * self.dim..(u + 1) * self.dim]
    }

    fn item_row(&self, i: usize) -> &[f64] {
        &self.item_vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn set_user(&mut self, id: &str, vector: &[f64], bias: f64) -> Result<()> {
        let u = self.user_idx(id).ok_or_else(|| Error::UnknownItem(id.to_string()))?;
        self.check_dim(vector)?;
        let d = self.dim;
        self.user_vectors[u * d..(u + 1) * d].copy_from_slice(vector);
        self.user_bias[u] = bias;
        Ok(())
    }

    pub fn set_item(&mut self, id: &str, vector: &[f64], bias: f64) -> Result<()> {
        let i = self.item_idx(id).ok_or_else(|| Error::UnknownItem(id.to_string()))?;
        self.check_dim(vector)?;
        let d = self.dim;
        self.item_vectors[i * d..(i + 1) * d].copy_from_slice(vector);
        self.item_bias[i] = bias;
        Ok(())
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: v.len(),
                right: self.dim,
            });
        }
        Ok(())
    }

    fn logit(&self, u: usize, i: usize) -> f64 {
        let mut s = dot(self.user_row(u), self.item_row(i));
        if self.use_bias {
            s += self.user_bias[u] + self.item_bias[i];
        }
        s
    }

    /// `p_u . p_i + b_u + b_i`. Unknown ids score 0; the flag is `false` then.
    pub fn score(&self, user: &str, item: &str) -> (f64, bool) {
        match (self.user_idx(user), self.item_idx(item)) {
            (Some(u), Some(i)) => (self.logit(u, i), true),
            _ => (0.0, false),
        }
    }

    /// `sum BCE(sigmoid(logit), label) + l2/2 (|p_u|^2 + |p_i|^2)` over the
    /// examples; the per-example regularizer matches the SGD update.
    pub fn objective(&self, examples: &[IndexedExample], l2: f64) -> f64 {
        examples
            .iter()
            .map(|&(u, i, y)| {
                let pu = self.user_row(u);
                let qi = self.item_row(i);
                bce_with_logit(self.logit(u, i), y) + 0.5 * l2 * (dot(pu, pu) + dot(qi, qi))
            })
            .sum()
    }

    pub fn gradient(&self, examples: &[IndexedExample], l2: f64) -> FactorGradient {
        let d = self.dim;
        let mut g = FactorGradient {
            user_vectors: vec![0.0; self.user_vectors.len()],
            item_vectors: vec![0.0; self.item_vectors.len()],
            user_bias: vec![0.0; self.user_bias.len()],
            item_bias: vec![0.0; self.item_bias.len()],
        };
        for &(u, i, y) in examples {
            let err = sigmoid(self.logit(u, i)) - y;
            let pu = self.user_row(u);
            let qi = self.item_row(i);
            for k in 0..d {
                g.user_vectors[u * d + k] += err * qi[k] + l2 * pu[k];
                g.item_vectors[i * d + k] += err * pu[k] + l2 * qi[k];
            }
            if self.use_bias {
                g.user_bias[u] += err;
                g.item_bias[i] += err;
            }
        }
        g
    }

    /// Mutable view of every parameter, in the order of [`FactorGradient`].
    pub fn parameters_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.user_vectors,
            &mut self.item_vectors,
            &mut self.user_bias,
            &mut self.item_bias,
        ]
    }

    fn sgd_step(&mut self, u: usize, i: usize, y: f64, lr: f64, l2: f64) -> f64 {
        let d = self.dim;
        let logit = self.logit(u, i);
        let err = sigmoid(logit) - y;
        let (pu_start, qi_start) = (u * d, i * d);
        let mut reg = 0.0;
        for k in 0..d {
            let p = self.user_vectors[pu_start + k];
            let q = self.item_vectors[qi_start + k];
            reg += p * p + q * q;
            self.user_vectors[pu_start + k] -= lr * (err * q + l2 * p);
            self.item_vectors[qi_start + k] -= lr * (err * p + l2 * q);
        }
        if self.use_bias {
            self.user_bias[u] -= lr * err;
            self.item_bias[i] -= lr * err;
        }
        bce_with_logit(logit, y) + 0.5 * l2 * reg
    }

    pub fn item_dot(&self, a: &str, b: &str) -> Result<f64> {
        let ia = self.item_idx(a).ok_or_else(|| Error::UnknownItem(a.to_string()))?;
        let ib = self.item_idx(b).ok_or_else(|| Error::UnknownItem(b.to_string()))?;
        Ok(dot(self.item_row(ia), self.item_row(ib)))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "dim={}\tusers={}\titems={}\tbias={}",
            self.dim,
            self.user_ids.len(),
            self.item_ids.len(),
            u8::from(self.use_bias)
        )?;
        let row = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for (u, id) in self.user_ids.iter().enumerate() {
            writeln!(w, "user\t{id}\t{:?}\t{}", self.user_bias[u], row(self.user_row(u)))?;
        }
        for (i, id) in self.item_ids.iter().enumerate() {
            writeln!(w, "item\t{id}\t{:?}\t{}", self.item_bias[i], row(self.item_row(i)))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |d: String| Error::format("factor model", d);
        let mut lines = reader
            .lines()
            .map(|l| l.map_err(|e| Error::io("<factor model>", e)))
            .filter(|l| !matches!(l, Ok(s) if s.is_empty() || s.starts_with('#')));
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let mut fields = BTreeMap::new();
        for kv in header.split('\t') {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad header field `{kv}`")))?;
            let v: usize = v.parse().map_err(|_| bad(format!("bad header value `{kv}`")))?;
            fields.insert(k.to_string(), v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks `{k}`")));
        let (dim, n_users, n_items, bias) = (get("dim")?, get("users")?, get("items")?, get("bias")?);

        let mut users = Vec::with_capacity(n_users);
        let mut items = Vec::with_capacity(n_items);
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", parts.len())));
            }
            let b: f64 = parts[2].parse().map_err(|_| bad(format!("bad bias `{}`", parts[2])))?;
            let v: Vec<f64> = if parts[3].is_empty() {
                Vec::new()
            } else {
                parts[3]
                    .split(' ')
                    .map(|x| x.parse().map_err(|_| bad(format!("bad value `{x}`"))))
                    .collect::<Result<_>>()?
            };
            if v.len() != dim {
                return Err(bad(format!("row for {} has {} values, expected {dim}", parts[1], v.len())));
            }
            match parts[0] {
                "user" => users.push(parts[1].to_string()),
                "item" => items.push(parts[1].to_string()),
                k => return Err(bad(format!("unknown kind `{k}`"))),
            }
            rows.push((parts[0] == "user", parts[1].to_string(), b, v));
        }
        if users.len() != n_users || items.len() != n_items {
            return Err(bad("entity counts disagree with header".into()));
        }
        let mut model = FactorModel::init(users, items, dim, bias == 1, 0);
        for (is_user, id, b, v) in rows {
            if is_user {
                model.set_user(&id, &v, b)?;
            } else {
                model.set_item(&id, &v, b)?;
            }
        }
        Ok(model)
    }
}

/// Trains on `(user, item)` positives. Negatives are drawn uniformly from
/// `item_universe` minus the user's positives, fresh for every positive in
/// every epoch. Returns the model and the mean per-example loss per epoch.
pub fn train_mf(
    positives: &[(String, String)],
    item_universe: &[String],
    cfg: &MfConfig,
) -> Result<(FactorModel, Vec<f64>)> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::InvalidParameter("matrix factorization needs training positives".into()));
    }
    let users: BTreeSet<&String> = positives.iter().map(|(u, _)| u).collect();
    let mut items: BTreeSet<&String> = item_universe.iter().collect();
    items.extend(positives.iter().map(|(_, i)| i));
    let mut model = FactorModel::init(
        users.into_iter().cloned().collect(),
        items.into_iter().cloned().collect(),
        cfg.dim,
        cfg.use_bias,
        seeding::derive_seed(cfg.rng_seed, "mf-init"),
    );

    let indexed: Vec<(usize, usize)> = positives
        .iter()
        .map(|(u, i)| (model.user_index[u], model.item_index[i]))
        .collect();
    let mut user_pos: Vec<HashSet<usize>> = vec![HashSet::new(); model.user_ids.len()];
    for &(u, i) in &indexed {
        user_pos[u].insert(i);
    }
    let n_items = model.item_ids.len();

    let mut rng = seeding::rng_for(cfg.rng_seed, "mf-train");
    let mut order: Vec<usize> = (0..indexed.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &k in &order {
            let (u, i) = indexed[k];
            total += model.sgd_step(u, i, 1.0, cfg.learning_rate, cfg.l2_weight);
            count += 1;
            if user_pos[u].len() >= n_items {
                continue;
            }
            for _ in 0..cfg.negatives_per_positive {
                let j = loop {
                    let j = rng.gen_range(0..n_items);
                    if !user_pos[u].contains(&j) {
                        break j;
                    }
                };
                total += model.sgd_step(u, j, 0.0, cfg.learning_rate, cfg.l2_weight);
                count += 1;
            }
        }
        let mean = total / count as f64;
        if !mean.is_finite() {
            return Err(Error::MfDiverged { epoch });
        }
        trace.push(mean);
    }
    Ok((model, trace))
}

pub fn mf_score(model: &FactorModel, user: &str, item: &str) -> (f64, bool) {
    model.score(user, item)
}

/// Global min / max of raw item-item dot products used for rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelatednessBounds {
    pub min: f64,
    pub max: f64,
}

pub const MAX_EXACT_PAIRS: usize = 1_000_000;

impl RelatednessBounds {
    /// Exact over all unordered pairs (self-pairs included) when there are at
    /// most `max_pairs`, otherwise estimated from `max_pairs` seeded random pairs.
    pub fn estimate(model: &FactorModel, population: &[String], max_pairs: usize, seed: u64) -> Result<Self> {
        let idx: Vec<usize> = population
            .iter()
            .map(|id| model.item_idx(id).ok_or_else(|| Error::UnknownItem(id.clone())))
            .collect::<Result<_>>()?;
        if idx.is_empty() {
            return Err(Error::InvalidParameter("relatedness bounds need at least one item".into()));
        }
        let n = idx.len();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut visit = |a: usize, b: usize| {
            let d = dot(model.item_row(a), model.item_row(b));
            min = min.min(d);
            max = max.max(d);
        };
        if n * (n + 1) / 2 <= max_pairs {
            for a in 0..n {
                for b in a..n {
                    visit(idx[a], idx[b]);
                }
            }
        } else {
            let mut rng = seeding::rng_for(seed, "relatedness-bounds");
            for _ in 0..max_pairs {
                visit(idx[rng.gen_range(0..n)], idx[rng.gen_range(0..n)]);
            }
        }
        Ok(RelatednessBounds { min, max })
    }
}

/// `(dot - min) / (max - min)` clamped to [0, 1]; 0.5 when the bounds coincide.
pub fn relatedness(model: &FactorModel, a: &str, b: &str, bounds: &RelatednessBounds) -> Result<f64> {
    let d = model.item_dot(a, b)?;
    let span = bounds.max - bounds.min;
    if span <= 0.0 {
        return Ok(0.5);
    }
    Ok(((d - bounds.min) / span).clamp(0.0, 1.0))
}
