//! Ranking metrics over 1 + 100 candidate lists, user/item group
//! breakdowns and the report tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{DatasetSplit, Item};
use crate::error::{Error, Result};
use crate::retrieval::{candidates_for, search_text, Bm25Index};
use crate::seeding;

pub const DEFAULT_NEGATIVES: usize = 100;
pub const NDCG_CUTOFF: usize = 5;

/// Binary-gain NDCG with a single relevant item.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1, "ranks start at 1");
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn p_at_1(rank: usize) -> f64 {
    assert!(rank >= 1, "ranks start at 1");
    if rank == 1 {
        1.0
    } else {
        0.0
    }
}

/// Expected NDCG@k of a uniformly random ranking of `n` candidates.
pub fn random_ndcg_expectation(n: usize, k: usize) -> f64 {
    (1..=k.min(n)).map(|r| ndcg_at_k(r, k)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ItemGroup {
    Unseen,
    Seen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UserGroup {
    Sporadic,
    Regular,
    Bibliophilic,
}

impl ItemGroup {
    pub fn code(self) -> &'static str {
        match self {
            ItemGroup::Unseen => "u",
            ItemGroup::Seen => "s",
        }
    }
}

impl UserGroup {
    pub fn code(self) -> &'static str {
        match self {
            UserGroup::Sporadic => "s",
            UserGroup::Regular => "r",
            UserGroup::Bibliophilic => "b",
        }
    }
}

impl fmt::Display for ItemGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ItemGroup::Unseen => "unseen",
            ItemGroup::Seen => "seen",
        })
    }
}

impl fmt::Display for UserGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UserGroup::Sporadic => "sporadic",
            UserGroup::Regular => "regular",
            UserGroup::Bibliophilic => "bibliophilic",
        })
    }
}

impl FromStr for ItemGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unseen" => Ok(ItemGroup::Unseen),
            "seen" => Ok(ItemGroup::Seen),
            _ => Err(Error::format("item group", s.to_string())),
        }
    }
}

impl FromStr for UserGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sporadic" => Ok(UserGroup::Sporadic),
            "regular" => Ok(UserGroup::Regular),
            "bibliophilic" => Ok(UserGroup::Bibliophilic),
            _ => Err(Error::format("user group", s.to_string())),
        }
    }
}

/// Value at nearest rank `ceil(p/100 * n)` of the sorted sample.
pub fn nearest_rank_percentile(sorted: &[usize], p: f64) -> usize {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone)]
pub struct GroupAssignment {
    pub p50: usize,
    pub p90: usize,
    pub book_counts: BTreeMap<String, usize>,
    pub seen: BTreeSet<String>,
}

/// Thresholds over the train + dev + test book counts of every user; an
/// item is seen iff it is some user's training positive.
pub fn assign_groups(split: &DatasetSplit) -> Result<GroupAssignment> {
    if split.users.is_empty() {
        return Err(Error::InvalidParameter("cannot group an empty split".into()));
    }
    let book_counts: BTreeMap<String, usize> = split.users.iter().map(|(u, s)| (u.clone(), s.len())).collect();
    let mut counts: Vec<usize> = book_counts.values().copied().collect();
    counts.sort_unstable();
    Ok(GroupAssignment {
        p50: nearest_rank_percentile(&counts, 50.0),
        p90: nearest_rank_percentile(&counts, 90.0),
        book_counts,
        seen: split.seen_items(),
    })
}

impl GroupAssignment {
    /// Values on a threshold go to the lower group.
    pub fn group_for_count(&self, count: usize) -> UserGroup {
        if count <= self.p50 {
            UserGroup::Sporadic
        } else if count <= self.p90 {
            UserGroup::Regular
        } else {
            UserGroup::Bibliophilic
        }
    }

    pub fn user_group(&self, user: &str) -> UserGroup {
        self.group_for_count(self.book_counts.get(user).copied().unwrap_or(0))
    }

    pub fn item_group(&self, item: &str) -> ItemGroup {
        if self.seen.contains(item) {
            ItemGroup::Seen
        } else {
            ItemGroup::Unseen
        }
    }
}

/// One positive test item with its negatives; `candidates[0]` is the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub user_id: String,
    pub positive: String,
    pub candidates: Vec<String>,
}

/// Uniform negatives from the user's unlabeled items, seeded per user.
pub fn build_standard_testcases(split: &DatasetSplit, seed: u64, negatives: usize) -> Vec<TestCase> {
    let mut out = Vec::new();
    for (user, s) in &split.users {
        let pool = split.unlabeled(user);
        let mut rng = seeding::rng_for(seed, &format!("eval:{user}"));
        for positive in &s.test {
            let negs = draw_negatives(user, &pool, negatives, &mut rng);
            let mut candidates = Vec::with_capacity(negatives + 1);
            candidates.push(positive.clone());
            candidates.extend(negs);
            out.push(TestCase {
                user_id: user.clone(),
                positive: positive.clone(),
                candidates,
            });
        }
    }
    out
}

fn draw_negatives<R: Rng>(user: &str, pool: &[String], k: usize, rng: &mut R) -> Vec<String> {
    if pool.len() >= k {
        return pool.choose_multiple(rng, k).cloned().collect();
    }
    warn!("user {user}: only {} unlabeled items for {k} negatives; drawing with replacement", pool.len());
    if pool.is_empty() {
        return Vec::new();
    }
    (0..k).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

/// Negatives retrieved by BM25 from the user's unlabeled items, using the
/// positive's tags and description as the query.
pub fn build_search_testcases(
    split: &DatasetSplit,
    items: &BTreeMap<String, Item>,
    index: &Bm25Index,
    include_title: bool,
    seed: u64,
    negatives: usize,
) -> Result<Vec<(TestCase, Vec<(String, f64)>)>> {
    let mut out = Vec::new();
    for (user, s) in &split.users {
        let pool = split.unlabeled(user);
        let mut rng = seeding::rng_for(seed, &format!("search:{user}"));
        for positive in &s.test {
            let item = items
                .get(positive)
                .ok_or_else(|| Error::UnknownItem(positive.clone()))?;
            let query = search_text(item, include_title);
            let retrieved = candidates_for(index, positive, &query, &pool, negatives, &mut rng);
            let mut candidates = Vec::with_capacity(retrieved.len() + 1);
            candidates.push(positive.clone());
            candidates.extend(retrieved.iter().map(|(id, _)| id.clone()));
            out.push((
                TestCase {
                    user_id: user.clone(),
                    positive: positive.clone(),
                    candidates,
                },
                retrieved,
            ));
        }
    }
    Ok(out)
}

/// 1-based position of `positive` in an already ranked list.
pub fn rank_of(positive: &str, ranked: &[String]) -> Option<usize> {
    ranked.iter().position(|id| id == positive).map(|p| p + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub user_id: String,
    pub positive: String,
    pub candidates: usize,
    pub rank: usize,
    pub item_group: ItemGroup,
    pub user_group: UserGroup,
}

impl EvalRecord {
    pub fn ndcg(&self) -> f64 {
        ndcg_at_k(self.rank, NDCG_CUTOFF)
    }

    pub fn p1(&self) -> f64 {
        p_at_1(self.rank)
    }
}

/// `user \t positive \t candidates \t rank \t item_group \t user_group`.
pub fn write_records<W: Write>(mut w: W, records: &[EvalRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.user_id, r.positive, r.candidates, r.rank, r.item_group, r.user_group
        )?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<records>", e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::format("evaluation records", format!("line {}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let rank: usize = f[3].parse().map_err(|_| bad())?;
        if rank == 0 {
            return Err(bad());
        }
        out.push(EvalRecord {
            user_id: f[0].to_string(),
            positive: f[1].to_string(),
            candidates: f[2].parse().map_err(|_| bad())?,
            rank,
            item_group: f[4].parse()?,
            user_group: f[5].parse()?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: &'static str,
    /// `overall` or a cell code such as `u-s`.
    pub group: String,
    /// `None` for a cell without records.
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub const CELLS: [(ItemGroup, UserGroup); 6] = [
    (ItemGroup::Unseen, UserGroup::Sporadic),
    (ItemGroup::Unseen, UserGroup::Regular),
    (ItemGroup::Unseen, UserGroup::Bibliophilic),
    (ItemGroup::Seen, UserGroup::Sporadic),
    (ItemGroup::Seen, UserGroup::Regular),
    (ItemGroup::Seen, UserGroup::Bibliophilic),
];

pub fn cell_code(item: ItemGroup, user: UserGroup) -> String {
    format!("{}-{}", item.code(), user.code())
}

/// Micro mean over records, or with `macro_average` the mean of per-user means.
fn mean<F: Fn(&EvalRecord) -> f64>(records: &[&EvalRecord], metric: F, macro_average: bool) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    if !macro_average {
        return Some(records.iter().map(|r| metric(r)).sum::<f64>() / records.len() as f64);
    }
    let mut per_user: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per_user.entry(&r.user_id).or_insert((0.0, 0));
        e.0 += metric(r);
        e.1 += 1;
    }
    Some(per_user.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_user.len() as f64)
}

/// Overall NDCG@5, the six NDCG@5 cells and overall P@1.
pub fn aggregate(records: &[EvalRecord], macro_average: bool) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no evaluation records".into()));
    }
    let all: Vec<&EvalRecord> = records.iter().collect();
    let mut rows = vec![ReportRow {
        metric: "ndcg@5",
        group: "overall".into(),
        value: mean(&all, EvalRecord::ndcg, macro_average),
        n: all.len(),
    }];
    for (ig, ug) in CELLS {
        let cell: Vec<&EvalRecord> = records
            .iter()
            .filter(|r| r.item_group == ig && r.user_group == ug)
            .collect();
        rows.push(ReportRow {
            metric: "ndcg@5",
            group: cell_code(ig, ug),
            value: mean(&cell, EvalRecord::ndcg, macro_average),
            n: cell.len(),
        });
    }
    rows.push(ReportRow {
        metric: "p@1",
        group: "overall".into(),
        value: mean(&all, EvalRecord::p1, macro_average),
        n: all.len(),
    });
    Ok(Report { rows })
}

impl Report {
    pub fn value(&self, metric: &str, group: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.group == group)
            .and_then(|r| r.value)
    }

    /// `metric \t group \t value \t n`; empty cells carry `NA`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric\tgroup\tvalue\tn")?;
        for r in &self.rows {
            match r.value {
                Some(v) => writeln!(w, "{}\t{}\t{v:.6}\t{}", r.metric, r.group, r.n)?,
                None => writeln!(w, "{}\t{}\tNA\t{}", r.metric, r.group, r.n)?,
            }
        }
        Ok(())
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{:<8} {:<8} {:>8} {:>7}", "metric", "group", "value", "n")?;
        for r in &self.rows {
            let v = r.value.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
            writeln!(w, "{:<8} {:<8} {:>8} {:>7}", r.metric, r.group, v, r.n)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub mean_difference: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Paired t-test on per-record metric values of two systems.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter("paired t-test needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTTest {
            mean_difference: mean,
            t,
            df,
            p_two_sided: p,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(PairedTTest {
        mean_difference: mean,
        t,
        df,
        p_two_sided: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}

/// Every id appears once.
pub fn candidates_distinct(candidates: &[String]) -> bool {
    let set: HashSet<&String> = candidates.iter().collect();
    set.len() == candidates.len()
}
