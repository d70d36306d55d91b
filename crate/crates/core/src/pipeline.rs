//! File-based stages. Each stage reads its predecessors' artifacts from the
//! work directory and writes its own; every artifact starts with a header
//! line carrying the config hash and seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;

use crate::config::{EvalMode, RunConfig, SliceKind};
use crate::corpus::{self, DatasetSplit, Interaction, Item};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalRecord, TestCase};
use crate::factorization::{train_mf, FactorModel, RelatednessBounds};
use crate::profiles::{
    chunk_profile, item_text, read_profiles, write_profiles, CommandGenerator, KeyphraseGenerator, MockGenerator,
    Profile, ProfileContext, Review,
};
use crate::retrieval::{build_item_index, write_candidates};
use crate::sampling::{build_training_set, read_examples, write_examples, SamplingMode};
use crate::textstats::IdfTable;
use crate::towers::{self, EncodedSet, LatentVectors, TowerParameters, TwoTower, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Preprocess,
    Profile,
    TrainMf,
    Sample,
    Train,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Preprocess,
        Stage::Profile,
        Stage::TrainMf,
        Stage::Sample,
        Stage::Train,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Profile => "profile",
            Stage::TrainMf => "train-mf",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const CATALOG: &str = "catalog.jsonl";
    pub const SPLIT: &str = "split.tsv";
    pub const IDF: &str = "idf.tsv";
    pub const USER_PROFILES: &str = "profiles.tsv";
    pub const ITEM_PROFILES: &str = "items.tsv";
    pub const MF_MODEL: &str = "mf.model";
    pub const EXAMPLES: &str = "examples.tsv";
    pub const TOWERS: &str = "towers.bin";
    pub const VOCAB: &str = "vocab.tsv";
    pub const LOSS: &str = "loss.tsv";
    pub const RECORDS: &str = "records.tsv";
    pub const CANDIDATES: &str = "candidates.tsv";
}

/// A loaded config plus the values every stage needs.
pub struct Pipeline {
    pub config: RunConfig,
    pub workdir: PathBuf,
    pub hash: String,
    pool: rayon::ThreadPool,
}

fn header(kind: &str, hash: &str, seed: u64) -> String {
    format!("# profilerec {kind} config_hash={hash} seed={seed}")
}

fn parse_header(line: &str) -> Option<String> {
    let rest = line.strip_prefix("# profilerec ")?;
    rest.split_whitespace()
        .find_map(|f| f.strip_prefix("config_hash="))
        .map(str::to_string)
}

/// Results of one training run that are not written to disk.
#[derive(Debug, Clone, Default)]
pub struct TrainTimings {
    pub epoch_seconds: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        let workdir = match std::env::var_os(crate::config::WORKDIR_ENV) {
            Some(w) if !w.is_empty() => PathBuf::from(w),
            _ => config.paths.workdir.clone(),
        };
        let hash = config.hash();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Pipeline {
            config,
            workdir,
            hash,
            pool,
        })
    }

    pub fn with_workdir(mut self, workdir: PathBuf) -> Self {
        self.workdir = workdir;
        self
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn create(&self, name: &str, kind: &str) -> Result<(PathBuf, BufWriter<File>)> {
        std::fs::create_dir_all(&self.workdir).map_err(|e| Error::io(&self.workdir, e))?;
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", header(kind, &self.hash, self.config.seed)).map_err(|e| Error::io(&path, e))?;
        Ok((path, w))
    }

    fn write_text<F>(&self, name: &str, kind: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let (path, mut w) = self.create(name, kind)?;
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    }

    /// Opens a text artifact written by `stage`, checking its config hash.
    fn open(&self, name: &str, stage: Stage) -> Result<BufReader<File>> {
        let path = self.path(name);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                stage: stage.name(),
                path: path.clone(),
            },
            _ => Error::io(&path, e),
        })?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(&path, e))?;
        self.check_hash(&path, parse_header(first.trim_end()))?;
        Ok(reader)
    }

    fn check_hash(&self, path: &Path, found: Option<String>) -> Result<()> {
        match found {
            Some(h) if h == self.hash => Ok(()),
            other => Err(Error::ConfigHashMismatch {
                path: path.to_path_buf(),
                expected: self.hash.clone(),
                found: other.unwrap_or_else(|| "<none>".into()),
            }),
        }
    }

    fn timed<T>(&self, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
        info!(
            "stage {} start: seed={} config_hash={} threads={}",
            stage.name(),
            self.config.seed,
            self.hash,
            self.config.threads
        );
        let start = Instant::now();
        let out = f()?;
        info!("stage {} done in {:.3}s", stage.name(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        self.timed(stage, || match stage {
            Stage::Preprocess => self.preprocess(),
            Stage::Profile => self.profile(),
            Stage::TrainMf => self.train_mf(),
            Stage::Sample => self.sample(),
            Stage::Train => self.train().map(|_| ()),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(),
        })
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    // ---- preprocess ----

    fn preprocess(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.check_inputs()?;
        let mut interactions = Vec::new();
        let mut items: BTreeMap<String, Item> = BTreeMap::new();
        for path in [&cfg.paths.interactions, &cfg.paths.items] {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let parsed = corpus::parse_records(BufReader::new(file))?;
            if parsed.rejected > 0 {
                warn!("{}: {} malformed lines skipped", path.display(), parsed.rejected);
            }
            interactions.extend(parsed.interactions);
            for it in parsed.items {
                items.entry(it.item_id.clone()).or_insert(it);
            }
        }
        let mut kept = corpus::filter_dataset(&interactions, cfg.filter.min_rating, cfg.filter.min_books);
        kept = match cfg.slice.kind {
            SliceKind::All => kept,
            SliceKind::Rich => corpus::slice_rich(&kept, cfg.slice.users)?,
            SliceKind::Dense | SliceKind::Sparse => {
                let mode = cfg.slice.density().expect("density slice");
                corpus::slice_density(
                    &kept,
                    cfg.slice.users,
                    mode,
                    cfg.slice.seed_users,
                    cfg.slice.seed_items,
                    crate::seeding::derive_seed(cfg.seed, "slice"),
                )?
                .interactions
            }
        };
        let (split, stats) =
            corpus::split_dataset(&kept, &items, cfg.filter.test_fraction, crate::seeding::derive_seed(cfg.seed, "split"))?;
        info!(
            "preprocess: {} users kept, {} dropped, {} items",
            split.users.len(),
            stats.dropped_users.len(),
            split.all_items.len()
        );
        let users: BTreeSet<&String> = split.users.keys().collect();
        kept.retain(|i| users.contains(&i.user_id));
        kept.sort_by(|a, b| (&a.user_id, a.position).cmp(&(&b.user_id, b.position)));
        let catalog: Vec<Item> = split
            .all_items
            .iter()
            .map(|id| {
                items.get(id).cloned().unwrap_or_else(|| Item {
                    item_id: id.clone(),
                    title: String::new(),
                    tags: Vec::new(),
                    description: String::new(),
                    author_id: None,
                })
            })
            .collect();
        self.write_text(files::CORPUS, "corpus", |w| write_jsonl(w, &kept))?;
        self.write_text(files::CATALOG, "catalog", |w| write_jsonl(w, &catalog))?;
        self.write_text(files::SPLIT, "split", |w| split.write_manifest(w))
    }

    fn load_catalog(&self) -> Result<BTreeMap<String, Item>> {
        let r = self.open(files::CATALOG, Stage::Preprocess)?;
        let items: Vec<Item> = read_jsonl(r, "catalog")?;
        Ok(items.into_iter().map(|i| (i.item_id.clone(), i)).collect())
    }

    fn load_corpus(&self) -> Result<Vec<Interaction>> {
        read_jsonl(self.open(files::CORPUS, Stage::Preprocess)?, "corpus")
    }

    pub fn load_split(&self) -> Result<DatasetSplit> {
        let items = self.load_catalog()?;
        DatasetSplit::read_manifest(self.open(files::SPLIT, Stage::Preprocess)?, items.keys().cloned().collect())
    }

    // ---- profile ----

    fn idf_tables(&self, split: &DatasetSplit, corpus: &[Interaction], items: &BTreeMap<String, Item>) -> Result<[Option<IdfTable>; 3]> {
        let cfg = &self.config;
        if let Some(path) = &cfg.paths.idf {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let table = IdfTable::load_external(BufReader::new(file), 1)?;
            return Ok([Some(table), None, None]);
        }
        // training reviews plus every item description
        let train: HashMap<&str, BTreeSet<&str>> = split
            .users
            .iter()
            .map(|(u, s)| (u.as_str(), s.train.iter().map(String::as_str).collect()))
            .collect();
        let mut docs: Vec<&str> = corpus
            .iter()
            .filter(|i| train.get(i.user_id.as_str()).is_some_and(|t| t.contains(i.item_id.as_str())))
            .map(|i| i.review.as_str())
            .filter(|r| !r.trim().is_empty())
            .collect();
        docs.extend(items.values().map(|i| i.description.as_str()).filter(|d| !d.trim().is_empty()));
        let needed = cfg.profile.strategy.phrase_order().unwrap_or(1);
        let mut out = [None, None, None];
        for n in 1..=needed {
            if n == 1 || n == needed {
                out[n - 1] = Some(IdfTable::build(&docs, n)?);
            }
        }
        Ok(out)
    }

    fn profile(&self) -> Result<()> {
        let cfg = &self.config;
        let items = self.load_catalog()?;
        let split = self.load_split()?;
        let corpus = self.load_corpus()?;
        let idf = self.idf_tables(&split, &corpus, &items)?;
        let unigram = idf[0].as_ref().expect("unigram idf");

        let mock = MockGenerator;
        let command = (!cfg.profile.generator.is_empty()).then(|| CommandGenerator {
            program: cfg.profile.generator[0].clone(),
            args: cfg.profile.generator[1..].to_vec(),
            timeout: Duration::from_secs(cfg.profile.generator_timeout_secs),
            retries: cfg.profile.generator_retries,
        });
        let mut ctx = ProfileContext::new(unigram, &items);
        for n in 2..=3 {
            ctx.idf_ngram[n - 1] = idf[n - 1].as_ref();
        }
        ctx.generator_chunk_chars = cfg.profile.generator_chunk_chars;
        ctx.generator = if cfg.profile.mock_generator {
            Some(&mock as &dyn KeyphraseGenerator)
        } else {
            command.as_ref().map(|c| c as &dyn KeyphraseGenerator)
        };

        let mut reviews: BTreeMap<&str, Vec<Review>> = BTreeMap::new();
        for (u, s) in &split.users {
            let train: BTreeSet<&str> = s.train.iter().map(String::as_str).collect();
            let list: Vec<Review> = corpus
                .iter()
                .filter(|i| i.user_id == *u && train.contains(i.item_id.as_str()))
                .map(|i| Review {
                    item_id: i.item_id.clone(),
                    text: i.review.clone(),
                    position: i.position,
                })
                .collect();
            reviews.insert(u.as_str(), list);
        }
        let pcfg = cfg.profile.profile_config();
        let users: Vec<(&String, &corpus::UserSplit)> = split.users.iter().collect();
        let built: Vec<Result<(String, Vec<Profile>)>> = self.pool.install(|| {
            users
                .par_iter()
                .map(|(u, s)| {
                    let train_items: Vec<&Item> = s.train.iter().filter_map(|i| items.get(i)).collect();
                    let chunks = chunk_profile(&reviews[u.as_str()], &train_items, &ctx, &pcfg)?;
                    Ok(((*u).clone(), chunks))
                })
                .collect()
        });
        let user_profiles: Vec<(String, Vec<Profile>)> = built.into_iter().collect::<Result<_>>()?;
        let item_profiles: Vec<(String, Vec<Profile>)> = items
            .values()
            .map(|it| (it.item_id.clone(), vec![item_text(it, cfg.profile.item_variant, cfg.profile.budget)]))
            .collect();

        self.write_text(files::IDF, "idf", |w| unigram.write_tsv(w))?;
        self.write_text(files::USER_PROFILES, "user-profiles", |w| {
            write_profiles(w, user_profiles.iter().map(|(u, p)| (u.as_str(), p.as_slice())))
        })?;
        self.write_text(files::ITEM_PROFILES, "item-profiles", |w| {
            write_profiles(w, item_profiles.iter().map(|(i, p)| (i.as_str(), p.as_slice())))
        })
    }

    pub fn load_user_profiles(&self) -> Result<BTreeMap<String, Vec<Profile>>> {
        read_profiles(self.open(files::USER_PROFILES, Stage::Profile)?, self.config.profile.budget)
    }

    pub fn load_item_profiles(&self) -> Result<BTreeMap<String, Profile>> {
        let raw = read_profiles(self.open(files::ITEM_PROFILES, Stage::Profile)?, self.config.profile.budget)?;
        Ok(raw
            .into_iter()
            .filter_map(|(id, mut chunks)| (!chunks.is_empty()).then(|| (id, chunks.swap_remove(0))))
            .collect())
    }

    // ---- train-mf ----

    fn train_mf(&self) -> Result<()> {
        let split = self.load_split()?;
        let positives: Vec<(String, String)> = split
            .users
            .iter()
            .flat_map(|(u, s)| s.train.iter().map(move |i| (u.clone(), i.clone())))
            .collect();
        let universe: Vec<String> = split.all_items.iter().cloned().collect();
        let (model, trace) = train_mf(&positives, &universe, &self.config.mf.mf_config())?;
        info!("train-mf: final loss {:.5}", trace.last().copied().unwrap_or(f64::NAN));
        self.write_text(files::MF_MODEL, "mf-model", |w| model.write(w))
    }

    pub fn load_mf(&self) -> Result<FactorModel> {
        FactorModel::read(self.open(files::MF_MODEL, Stage::TrainMf)?)
    }

    // ---- sample ----

    fn sample(&self) -> Result<()> {
        let cfg = &self.config;
        let split = self.load_split()?;
        let seed = crate::seeding::derive_seed(cfg.seed, "sample");
        let examples = match cfg.sampling.mode {
            SamplingMode::Uniform => build_training_set(&split, SamplingMode::Uniform, cfg.sampling.ratio, None, seed)?,
            SamplingMode::Weighted => {
                let model = self.load_mf()?;
                let population: Vec<String> = split
                    .all_items
                    .iter()
                    .filter(|i| model.item_idx(i).is_some())
                    .cloned()
                    .collect();
                let bounds = RelatednessBounds::estimate(&model, &population, cfg.sampling.relatedness_max_pairs, seed)?;
                build_training_set(&split, SamplingMode::Weighted, cfg.sampling.ratio, Some((&model, &bounds)), seed)?
            }
        };
        info!("sample: {} training examples", examples.len());
        self.write_text(files::EXAMPLES, "examples", |w| write_examples(w, &examples))
    }

    // ---- train ----

    /// Trains the towers and writes parameters, vocabulary and loss trace.
    /// Returns the per-epoch timings, which are not persisted.
    pub fn train(&self) -> Result<TrainTimings> {
        let cfg = &self.config;
        let examples = read_examples(self.open(files::EXAMPLES, Stage::Sample)?)?;
        let user_profiles = self.load_user_profiles()?;
        let item_profiles = self.load_item_profiles()?;
        let tcfg = cfg.train.train_config();
        let latent = if tcfg.cf_concat {
            Some(LatentVectors::from_model(&self.load_mf()?))
        } else {
            None
        };

        let mut tokens: BTreeSet<&String> = BTreeSet::new();
        let users: BTreeSet<&str> = examples.iter().map(|e| e.user_id.as_str()).collect();
        let items: BTreeSet<&str> = examples.iter().map(|e| e.item_id.as_str()).collect();
        for u in &users {
            if let Some(chunks) = user_profiles.get(*u) {
                tokens.extend(chunks.iter().flat_map(|p| &p.tokens));
            }
        }
        for i in &items {
            if let Some(p) = item_profiles.get(*i) {
                tokens.extend(&p.tokens);
            }
        }
        let vocab = Vocabulary::build(tokens);
        let set = EncodedSet::build(&examples, &user_profiles, &item_profiles, &vocab, latent.as_ref())?;
        let outcome = towers::train(&set, &vocab, &tcfg)?;
        info!(
            "train: vocab {} tokens, final loss {:.5}",
            vocab.len(),
            outcome.loss_trace.last().copied().unwrap_or(f64::NAN)
        );

        self.write_text(files::VOCAB, "vocab", |w| vocab.write(w))?;
        self.write_text(files::LOSS, "loss", |w| {
            for (e, l) in outcome.loss_trace.iter().enumerate() {
                writeln!(w, "{}\t{l:?}", e + 1)?;
            }
            Ok(())
        })?;
        let path = self.path(files::TOWERS);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let extra = [
            ("config_hash".to_string(), self.hash.clone()),
            ("seed".to_string(), cfg.seed.to_string()),
        ];
        outcome
            .params
            .write(&mut w, &extra)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        Ok(TrainTimings {
            epoch_seconds: outcome.epoch_seconds,
            loss_trace: outcome.loss_trace,
        })
    }

    pub fn load_model(&self) -> Result<TwoTower> {
        let vocab = Vocabulary::read(self.open(files::VOCAB, Stage::Train)?)?;
        let path = self.path(files::TOWERS);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                stage: Stage::Train.name(),
                path: path.clone(),
            },
            _ => Error::io(&path, e),
        })?;
        let (params, header) = TowerParameters::read(BufReader::new(file), vocab.hash())?;
        self.check_hash(&path, header.get("config_hash").cloned())?;
        let tcfg = self.config.train.train_config();
        let latent = if tcfg.cf_concat {
            Some(LatentVectors::from_model(&self.load_mf()?))
        } else {
            None
        };
        Ok(TwoTower {
            params,
            vocab,
            latent,
            pooling: tcfg.chunk_pooling,
        })
    }

    // ---- eval ----

    fn eval(&self) -> Result<()> {
        let cfg = &self.config;
        let model = self.load_model()?;
        let split = self.load_split()?;
        let user_profiles = self.load_user_profiles()?;
        let item_profiles = self.load_item_profiles()?;
        let groups = evaluation::assign_groups(&split)?;
        let seed = crate::seeding::derive_seed(cfg.seed, &format!("eval:{}", cfg.eval.seed));

        let cases: Vec<TestCase> = match cfg.eval.mode {
            EvalMode::Standard => evaluation::build_standard_testcases(&split, seed, cfg.eval.negatives),
            EvalMode::Search => {
                let items = self.load_catalog()?;
                let index = build_item_index(items.values(), cfg.eval.include_title)?;
                let with_scores = evaluation::build_search_testcases(
                    &split,
                    &items,
                    &index,
                    cfg.eval.include_title,
                    seed,
                    cfg.eval.negatives,
                )?;
                self.write_text(files::CANDIDATES, "candidates", |w| {
                    for (case, retrieved) in &with_scores {
                        write_candidates(&mut *w, &case.positive, retrieved)?;
                    }
                    Ok(())
                })?;
                with_scores.into_iter().map(|(c, _)| c).collect()
            }
        };

        let item_vectors = model.item_vectors(&item_profiles);
        let empty: Vec<Profile> = Vec::new();
        let records: Vec<Result<EvalRecord>> = self.pool.install(|| {
            cases
                .par_iter()
                .map(|case| {
                    let chunks = user_profiles.get(&case.user_id).unwrap_or(&empty);
                    let user_vec = model.user_vector(&case.user_id, chunks);
                    let ranked = towers::predict_rank(&user_vec, &case.candidates, &item_vectors)?;
                    let ids: Vec<String> = ranked.into_iter().map(|(id, _)| id).collect();
                    let rank = evaluation::rank_of(&case.positive, &ids).expect("positive is a candidate");
                    Ok(EvalRecord {
                        user_id: case.user_id.clone(),
                        positive: case.positive.clone(),
                        candidates: case.candidates.len(),
                        rank,
                        item_group: groups.item_group(&case.positive),
                        user_group: groups.user_group(&case.user_id),
                    })
                })
                .collect()
        });
        let records: Vec<EvalRecord> = records.into_iter().collect::<Result<_>>()?;
        info!("eval: {} test cases", records.len());
        self.write_text(files::RECORDS, "records", |w| evaluation::write_records(w, &records))
    }

    pub fn load_records(&self) -> Result<Vec<EvalRecord>> {
        evaluation::read_records(self.open(files::RECORDS, Stage::Eval)?)
    }

    // ---- report ----

    pub fn report_paths(&self) -> (PathBuf, PathBuf) {
        let r = &self.config.report;
        let fix = |p: &Path| if p.is_relative() { self.workdir.join(p) } else { p.to_path_buf() };
        (fix(&r.tsv), fix(&r.table))
    }

    fn report(&self) -> Result<()> {
        let records = self.load_records()?;
        let report = evaluation::aggregate(&records, self.config.eval.macro_average)?;
        let (tsv, table) = self.report_paths();
        for (path, table_form) in [(tsv, false), (table, true)] {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            let res = writeln!(w, "{}", header("report", &self.hash, self.config.seed))
                .and_then(|_| if table_form { report.write_table(&mut w) } else { report.write_tsv(&mut w) })
                .and_then(|_| w.flush());
            res.map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn write_jsonl<W: Write, T: serde::Serialize>(w: &mut W, rows: &[T]) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn read_jsonl<R: BufRead, T: serde::de::DeserializeOwned>(reader: R, what: &'static str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<{what}>"), e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(what, format!("line {}: {e}", n + 2)))?);
    }
    Ok(out)
}
