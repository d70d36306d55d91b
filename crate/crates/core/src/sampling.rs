//! Turning unlabeled items into training negatives: uniform closed-world
//! sampling, or weighted positive/negative clones whose weights come from
//! item-item relatedness.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};
use crate::factorization::{relatedness, FactorModel, RelatednessBounds};
use crate::seeding;

pub const CLONE_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub user_id: String,
    pub item_id: String,
    pub label: u8,
    pub weight: f64,
}

impl TrainingExample {
    pub fn positive(user: &str, item: &str) -> Self {
        TrainingExample {
            user_id: user.to_string(),
            item_id: item.to_string(),
            label: 1,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Uniform,
    Weighted,
}

/// Draws `ratio` distinct pool items; with a pool smaller than `ratio` it
/// falls back to drawing with replacement. The flag reports the fallback.
fn draw<R: Rng>(pool: &[String], ratio: usize, rng: &mut R) -> (Vec<String>, bool) {
    if pool.is_empty() {
        return (Vec::new(), true);
    }
    if pool.len() >= ratio {
        (pool.choose_multiple(rng, ratio).cloned().collect(), false)
    } else {
        ((0..ratio).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect(), true)
    }
}

/// For every training positive, `ratio` uniform draws (without replacement
/// within that positive's draw) from `pool`, labelled 0 with weight 1.
pub fn sample_uniform<R: Rng>(
    user: &str,
    positives: &[String],
    pool: &[String],
    ratio: usize,
    rng: &mut R,
) -> Vec<TrainingExample> {
    sample_pool(user, positives, pool, ratio, rng)
        .into_iter()
        .map(|item_id| TrainingExample {
            user_id: user.to_string(),
            item_id,
            label: 0,
            weight: 1.0,
        })
        .collect()
}

fn sample_pool<R: Rng>(user: &str, positives: &[String], pool: &[String], ratio: usize, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(positives.len() * ratio);
    let mut warned = false;
    for _ in positives {
        let (drawn, fallback) = draw(pool, ratio, rng);
        if fallback && !warned {
            warn!("user {user}: unlabeled pool of {} is smaller than ratio {ratio}", pool.len());
            warned = true;
        }
        out.extend(drawn);
    }
    out
}

/// Mean relatedness of `item` to the user's training positives.
pub fn mean_relatedness(
    item: &str,
    positives: &[String],
    model: &FactorModel,
    bounds: &RelatednessBounds,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::InvalidParameter("weighted cloning needs at least one positive".into()));
    }
    let mut sum = 0.0;
    for p in positives {
        sum += relatedness(model, item, p, bounds)?;
    }
    Ok(sum / positives.len() as f64)
}

/// The positive clone carries weight `r`, the negative clone `1 - r`, with
/// `r` clamped to `[eps, 1 - eps]`.
pub fn clone_weighted(
    user: &str,
    unlabeled_item: &str,
    positives: &[String],
    model: &FactorModel,
    bounds: &RelatednessBounds,
) -> Result<(TrainingExample, TrainingExample)> {
    let r = mean_relatedness(unlabeled_item, positives, model, bounds)?.clamp(CLONE_EPSILON, 1.0 - CLONE_EPSILON);
    Ok((
        TrainingExample {
            user_id: user.to_string(),
            item_id: unlabeled_item.to_string(),
            label: 1,
            weight: r,
        },
        TrainingExample {
            user_id: user.to_string(),
            item_id: unlabeled_item.to_string(),
            label: 0,
            weight: 1.0 - r,
        },
    ))
}

/// Positives plus sampled negatives for every user in the split. In weighted
/// mode each sampled unlabeled item becomes a cloned pair instead of a plain
/// negative. Users are processed in id order with per-user seeds.
pub fn build_training_set(
    split: &DatasetSplit,
    mode: SamplingMode,
    ratio: usize,
    factors: Option<(&FactorModel, &RelatednessBounds)>,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    if ratio == 0 {
        return Err(Error::InvalidParameter("negative ratio must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (user, s) in &split.users {
        let positives = &s.train;
        out.extend(positives.iter().map(|i| TrainingExample::positive(user, i)));
        let exclude: HashSet<&String> = s.positives().collect();
        let pool: Vec<String> = split
            .all_items
            .iter()
            .filter(|i| !exclude.contains(i))
            .cloned()
            .collect();
        let mut rng = seeding::rng_for(seed, user);
        match mode {
            SamplingMode::Uniform => out.extend(sample_uniform(user, positives, &pool, ratio, &mut rng)),
            SamplingMode::Weighted => {
                let (model, bounds) = factors.ok_or_else(|| {
                    Error::InvalidParameter("weighted sampling needs a factor model".into())
                })?;
                // items the factor model has never seen get no latent vector;
                // keep them out of the cloned pool
                let known: Vec<String> = pool.into_iter().filter(|i| model.item_idx(i).is_some()).collect();
                let known_pos: Vec<String> =
                    positives.iter().filter(|i| model.item_idx(i).is_some()).cloned().collect();
                if known_pos.is_empty() {
                    warn!("user {user}: no positive has a latent vector; using uniform negatives");
                    out.extend(sample_uniform(user, positives, &known, ratio, &mut rng));
                    continue;
                }
                for item in sample_pool(user, positives, &known, ratio, &mut rng) {
                    let (pos, neg) = clone_weighted(user, &item, &known_pos, model, bounds)?;
                    out.push(pos);
                    out.push(neg);
                }
            }
        }
    }
    Ok(out)
}

/// `user_id \t item_id \t label \t weight`.
pub fn write_examples<W: Write>(mut w: W, examples: &[TrainingExample]) -> std::io::Result<()> {
    for e in examples {
        writeln!(w, "{}\t{}\t{}\t{:?}", e.user_id, e.item_id, e.label, e.weight)?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(reader: R) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<example dump>", e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let bad = || Error::format("example dump", format!("line {}", n + 1));
        if parts.len() != 4 {
            return Err(bad());
        }
        let label: u8 = parts[2].parse().map_err(|_| bad())?;
        let weight: f64 = parts[3].parse().map_err(|_| bad())?;
        if label > 1 || !(weight > 0.0 && weight <= 1.0) {
            return Err(bad());
        }
        out.push(TrainingExample {
            user_id: parts[0].to_string(),
            item_id: parts[1].to_string(),
            label,
            weight,
        });
    }
    Ok(out)
}
