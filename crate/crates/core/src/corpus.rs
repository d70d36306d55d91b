//! Review corpus ingestion: record parsing, rating/activity filters,
//! author-disjoint per-user splits, and the rich / density slices.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::textstats::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    #[serde(default)]
    pub review: String,
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_id: Option<String>,
}

#[derive(Deserialize)]
struct RawInteraction {
    user_id: String,
    item_id: String,
    rating: i64,
    #[serde(default)]
    review: String,
    #[serde(default)]
    position: Option<u64>,
}

#[derive(Debug, Default)]
pub struct ParsedRecords {
    pub interactions: Vec<Interaction>,
    pub items: Vec<Item>,
    pub rejected: usize,
}

/// Parses a line-delimited JSON stream. A line with a `user_id` field is an
/// interaction, otherwise a line with an `item_id` is an item. Malformed
/// lines are counted rather than fatal unless they are the majority.
/// Interactions without a `position` are numbered per user in input order.
pub fn parse_records<R: BufRead>(reader: R) -> Result<ParsedRecords> {
    let mut out = ParsedRecords::default();
    let mut total = 0usize;
    let mut seen_pairs: HashSet<(String, String)> = HashSet::new();
    let mut seen_items: HashSet<String> = HashSet::new();
    let mut next_position: HashMap<String, u64> = HashMap::new();

    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<record stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => {
                out.rejected += 1;
                continue;
            }
        };
        if value.get("user_id").is_some() {
            let raw: RawInteraction = match serde_json::from_value(value) {
                Ok(r) => r,
                Err(_) => {
                    out.rejected += 1;
                    continue;
                }
            };
            if !(1..=5).contains(&raw.rating)
                || !seen_pairs.insert((raw.user_id.clone(), raw.item_id.clone()))
            {
                out.rejected += 1;
                continue;
            }
            let counter = next_position.entry(raw.user_id.clone()).or_insert(0);
            let position = raw.position.unwrap_or(*counter);
            *counter = (*counter).max(position + 1);
            out.interactions.push(Interaction {
                user_id: raw.user_id,
                item_id: raw.item_id,
                rating: raw.rating as u8,
                review: raw.review,
                position,
            });
        } else if value.get("item_id").is_some() {
            match serde_json::from_value::<Item>(value) {
                Ok(item) if seen_items.insert(item.item_id.clone()) => out.items.push(item),
                _ => out.rejected += 1,
            }
        } else {
            out.rejected += 1;
        }
    }
    if total > 0 && out.rejected * 2 > total {
        return Err(Error::MostlyMalformed {
            rejected: out.rejected,
            total,
        });
    }
    Ok(out)
}

/// Keeps interactions with `rating >= min_rating`, then users with at least
/// `min_books` of those.
pub fn filter_dataset(interactions: &[Interaction], min_rating: u8, min_books: usize) -> Vec<Interaction> {
    let kept: Vec<&Interaction> = interactions.iter().filter(|i| i.rating >= min_rating).collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for i in &kept {
        *counts.entry(i.user_id.as_str()).or_insert(0) += 1;
    }
    kept.into_iter()
        .filter(|i| counts[i.user_id.as_str()] >= min_books)
        .cloned()
        .collect()
}

/// Groups interactions by user, each user's list sorted by position.
pub fn by_user(interactions: &[Interaction]) -> BTreeMap<String, Vec<Interaction>> {
    let mut users: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
    for i in interactions {
        users.entry(i.user_id.clone()).or_default().push(i.clone());
    }
    for list in users.values_mut() {
        list.sort_by(|a, b| a.position.cmp(&b.position).then_with(|| a.item_id.cmp(&b.item_id)));
    }
    users
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl UserSplit {
    pub fn positives(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub users: BTreeMap<String, UserSplit>,
    pub all_items: BTreeSet<String>,
}

impl DatasetSplit {
    /// Everything in the item universe that is not one of the user's positives.
    pub fn unlabeled(&self, user: &str) -> Vec<String> {
        let positives: HashSet<&String> = match self.users.get(user) {
            Some(s) => s.positives().collect(),
            None => HashSet::new(),
        };
        self.all_items
            .iter()
            .filter(|i| !positives.contains(i))
            .cloned()
            .collect()
    }

    /// Items that are a training positive of any user.
    pub fn seen_items(&self) -> BTreeSet<String> {
        self.users.values().flat_map(|s| s.train.iter().cloned()).collect()
    }

    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (user, s) in &self.users {
            for (role, list) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
                for item in list {
                    writeln!(w, "{user}\t{role}\t{item}")?;
                }
            }
        }
        Ok(())
    }

    /// Reads a manifest; `all_items` is supplied by the caller since the
    /// manifest only names positives.
    pub fn read_manifest<R: BufRead>(reader: R, all_items: BTreeSet<String>) -> Result<Self> {
        let mut users: BTreeMap<String, UserSplit> = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<split manifest>", e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(user), Some(role), Some(item), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::format("split manifest", format!("line {}", n + 1)));
            };
            let entry = users.entry(user.to_string()).or_default();
            match role {
                "train" => entry.train.push(item.to_string()),
                "dev" => entry.dev.push(item.to_string()),
                "test" => entry.test.push(item.to_string()),
                other => {
                    return Err(Error::format(
                        "split manifest",
                        format!("line {}: unknown role `{other}`", n + 1),
                    ))
                }
            }
        }
        Ok(DatasetSplit { users, all_items })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub dropped_users: Vec<String>,
    pub unknown_author_items: usize,
}

/// Splits one user's positives. Items sharing an author move into the test
/// set together so no test author remains among the train items; groups are
/// taken greedily in a seeded random order while they fit the target size
/// `max(1, floor(test_frac * n))`. Items without an author form singleton
/// groups. The dev item is the next remaining item (in the same order)
/// whose author is not a test author. Returns `None` when no group fits.
pub fn split_user<R: Rng>(
    positives: &[String],
    test_frac: f64,
    author_of: &dyn Fn(&str) -> Option<String>,
    rng: &mut R,
) -> Result<Option<UserSplit>> {
    let n = positives.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "a split needs at least 3 positives, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must be in [0, 1), got {test_frac}"
        )));
    }
    let target = ((test_frac * n as f64).floor() as usize).max(1);

    let authors: Vec<Option<String>> = positives.iter().map(|i| author_of(i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut in_test = vec![false; n];
    let mut test_size = 0;
    let mut test_authors: HashSet<&str> = HashSet::new();
    for &idx in &order {
        if test_size == target {
            break;
        }
        if in_test[idx] {
            continue;
        }
        let group: Vec<usize> = match &authors[idx] {
            Some(a) => (0..n).filter(|&j| authors[j].as_deref() == Some(a)).collect(),
            None => vec![idx],
        };
        if test_size + group.len() <= target {
            for j in &group {
                in_test[*j] = true;
            }
            test_size += group.len();
            if let Some(a) = &authors[idx] {
                test_authors.insert(a);
            }
        }
    }
    if test_size == 0 {
        return Ok(None);
    }

    let dev = order.iter().copied().find(|&j| {
        !in_test[j]
            && authors[j]
                .as_deref()
                .is_none_or(|a| !test_authors.contains(a))
    });
    let mut split = UserSplit::default();
    for (j, item) in positives.iter().enumerate() {
        if in_test[j] {
            split.test.push(item.clone());
        } else if Some(j) == dev {
            split.dev.push(item.clone());
        } else {
            split.train.push(item.clone());
        }
    }
    if split.train.is_empty() {
        // only possible with a degenerate test fraction; keep the dev item for training
        split.train = std::mem::take(&mut split.dev);
    }
    Ok(Some(split))
}

/// Splits every user. Per-user randomness is derived from `seed` and the
/// user id, so the result does not depend on user order.
pub fn split_dataset(
    interactions: &[Interaction],
    items: &BTreeMap<String, Item>,
    test_frac: f64,
    seed: u64,
) -> Result<(DatasetSplit, SplitStats)> {
    let mut stats = SplitStats::default();
    let mut all_items: BTreeSet<String> = items.keys().cloned().collect();
    all_items.extend(interactions.iter().map(|i| i.item_id.clone()));

    let author_of = |id: &str| items.get(id).and_then(|it| it.author_id.clone());
    let mut users = BTreeMap::new();
    for (user, list) in by_user(interactions) {
        let positives: Vec<String> = list.iter().map(|i| i.item_id.clone()).collect();
        stats.unknown_author_items += positives.iter().filter(|i| author_of(i).is_none()).count();
        if positives.len() < 3 {
            warn!("user {user} has fewer than 3 positives; dropped");
            stats.dropped_users.push(user);
            continue;
        }
        let mut rng = seeding::rng_for(seed, &user);
        match split_user(&positives, test_frac, &author_of, &mut rng)? {
            Some(s) => {
                users.insert(user, s);
            }
            None => {
                warn!("user {user} has no author-disjoint test set; dropped");
                stats.dropped_users.push(user);
            }
        }
    }
    if stats.unknown_author_items > 0 {
        warn!(
            "{} positives have no author; disjointness is item-level for them",
            stats.unknown_author_items
        );
    }
    Ok((DatasetSplit { users, all_items }, stats))
}

/// Keeps the `k` users with the highest mean review length (tokens per
/// reviewed book) among users with at least 3 non-empty reviews. Ties go to
/// the lexicographically smaller user id.
pub fn slice_rich(interactions: &[Interaction], k: usize) -> Result<Vec<Interaction>> {
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for i in interactions {
        let len = tokenize(&i.review).len();
        if len > 0 {
            let e = stats.entry(i.user_id.as_str()).or_insert((0, 0));
            e.0 += len;
            e.1 += 1;
        }
    }
    let mut eligible: Vec<(&str, f64)> = stats
        .into_iter()
        .filter(|(_, (_, books))| *books >= 3)
        .map(|(u, (total, books))| (u, total as f64 / books as f64))
        .collect();
    if k > eligible.len() {
        return Err(Error::NotEnoughUsers {
            requested: k,
            available: eligible.len(),
        });
    }
    eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let chosen: HashSet<&str> = eligible[..k].iter().map(|(u, _)| *u).collect();
    Ok(interactions
        .iter()
        .filter(|i| chosen.contains(i.user_id.as_str()))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Sparse,
    Dense,
}

#[derive(Debug, Clone)]
pub struct DensitySlice {
    pub interactions: Vec<Interaction>,
    pub seed_users: Vec<String>,
    pub seed_items: BTreeSet<String>,
    pub sampled_users: Vec<String>,
}

/// Sum over the user's books of the number of users holding each book.
pub fn cumulative_item_degrees(interactions: &[Interaction]) -> BTreeMap<String, f64> {
    let mut users_per_item: HashMap<&str, usize> = HashMap::new();
    for i in interactions {
        *users_per_item.entry(i.item_id.as_str()).or_insert(0) += 1;
    }
    let mut degrees: BTreeMap<String, f64> = BTreeMap::new();
    for i in interactions {
        *degrees.entry(i.user_id.clone()).or_insert(0.0) += users_per_item[i.item_id.as_str()] as f64;
    }
    degrees
}

/// Weighted sampling without replacement (Efraimidis–Spirakis keys
/// `ln(u) / w`). Returns indices into `weights`, highest key first.
pub fn weighted_reservoir<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    keyed.truncate(k);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Seeds with `seed_users` uniformly chosen users restricted to
/// `seed_items` of their books, then samples the remaining `k - seed_users`
/// users proportionally (dense) or inversely proportionally (sparse) to
/// their cumulative item degree. Sampled users keep all their interactions.
pub fn slice_density(
    interactions: &[Interaction],
    k: usize,
    mode: Density,
    seed_users: usize,
    seed_items: usize,
    rng_seed: u64,
) -> Result<DensitySlice> {
    if seed_users >= k {
        return Err(Error::InvalidParameter(format!(
            "seed_users ({seed_users}) must be below the slice size ({k})"
        )));
    }
    let degrees = cumulative_item_degrees(interactions);
    let users: Vec<&String> = degrees.keys().collect();
    if users.len() < k {
        return Err(Error::NotEnoughUsers {
            requested: k,
            available: users.len(),
        });
    }
    let mut rng = seeding::rng(rng_seed);
    let mut seeds: Vec<String> = users
        .choose_multiple(&mut rng, seed_users)
        .map(|u| (*u).clone())
        .collect();
    seeds.sort();
    let seed_set: HashSet<&str> = seeds.iter().map(String::as_str).collect();

    let mut seed_books: Vec<&str> = interactions
        .iter()
        .filter(|i| seed_set.contains(i.user_id.as_str()))
        .map(|i| i.item_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    seed_books.shuffle(&mut rng);
    seed_books.truncate(seed_items);
    let seed_items: BTreeSet<String> = seed_books.into_iter().map(str::to_string).collect();

    let candidates: Vec<&String> = users
        .iter()
        .copied()
        .filter(|u| !seed_set.contains(u.as_str()))
        .collect();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|u| {
            let d = degrees[*u];
            match mode {
                Density::Dense => d,
                Density::Sparse => 1.0 / d,
            }
        })
        .collect();
    let mut sampled: Vec<String> = weighted_reservoir(&weights, k - seeds.len(), &mut rng)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    sampled.sort();
    let sampled_set: HashSet<&str> = sampled.iter().map(String::as_str).collect();

    let subset = interactions
        .iter()
        .filter(|i| {
            sampled_set.contains(i.user_id.as_str())
                || (seed_set.contains(i.user_id.as_str()) && seed_items.contains(&i.item_id))
        })
        .cloned()
        .collect();
    Ok(DensitySlice {
        interactions: subset,
        seed_users: seeds,
        seed_items,
        sampled_users: sampled,
    })
}
