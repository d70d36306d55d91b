//! Run configuration: a TOML file of flat sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Density;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_NEGATIVES;
use crate::factorization::{MfConfig, MAX_EXACT_PAIRS};
use crate::profiles::{ItemVariant, ProfileConfig, Provenance, DEFAULT_BUDGET, GENERATOR_CHUNK_CHARS};
use crate::sampling::SamplingMode;
use crate::towers::{ChunkPooling, TowerDims, TrainConfig, TrainableScope};

pub const WORKDIR_ENV: &str = "PROFILEREC_WORKDIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub paths: PathsSection,
    pub filter: FilterSection,
    pub slice: SliceSection,
    pub profile: ProfileSection,
    pub sampling: SamplingSection,
    pub mf: MfSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: 1,
            paths: PathsSection::default(),
            filter: FilterSection::default(),
            slice: SliceSection::default(),
            profile: ProfileSection::default(),
            sampling: SamplingSection::default(),
            mf: MfSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub interactions: PathBuf,
    pub items: PathBuf,
    pub workdir: PathBuf,
    /// Optional `term \t weight` file replacing corpus idf.
    pub idf: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            interactions: "interactions.jsonl".into(),
            items: "items.jsonl".into(),
            workdir: "work".into(),
            idf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub min_rating: u8,
    pub min_books: usize,
    pub test_fraction: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            min_rating: 4,
            min_books: 3,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    All,
    Rich,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceSection {
    pub kind: SliceKind,
    pub users: usize,
    pub seed_users: usize,
    pub seed_items: usize,
}

impl Default for SliceSection {
    fn default() -> Self {
        SliceSection {
            kind: SliceKind::All,
            users: 1000,
            seed_users: 100,
            seed_items: 5,
        }
    }
}

impl SliceSection {
    pub fn density(&self) -> Option<Density> {
        match self.kind {
            SliceKind::Dense => Some(Density::Dense),
            SliceKind::Sparse => Some(Density::Sparse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub strategy: Provenance,
    pub budget: usize,
    pub chunks: usize,
    pub round_robin: bool,
    pub item_variant: ItemVariant,
    /// Program and arguments of an external keyphrase generator.
    pub generator: Vec<String>,
    pub generator_timeout_secs: u64,
    pub generator_retries: usize,
    pub generator_chunk_chars: usize,
    /// Use the bundled offline mock instead of `generator`.
    pub mock_generator: bool,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection {
            strategy: Provenance::IdfSentences,
            budget: DEFAULT_BUDGET,
            chunks: 1,
            round_robin: true,
            item_variant: ItemVariant::Expanded,
            generator: Vec::new(),
            generator_timeout_secs: 60,
            generator_retries: 1,
            generator_chunk_chars: GENERATOR_CHUNK_CHARS,
            mock_generator: false,
        }
    }
}

impl ProfileSection {
    pub fn profile_config(&self) -> ProfileConfig {
        ProfileConfig {
            budget: self.budget,
            chunks: self.chunks,
            strategy: self.strategy,
            round_robin: self.round_robin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub mode: SamplingMode,
    pub ratio: usize,
    pub relatedness_max_pairs: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            mode: SamplingMode::Uniform,
            ratio: 4,
            relatedness_max_pairs: MAX_EXACT_PAIRS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfSection {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub use_bias: bool,
    pub rng_seed: u64,
}

impl Default for MfSection {
    fn default() -> Self {
        let d = MfConfig::default();
        MfSection {
            dim: d.dim,
            learning_rate: d.learning_rate,
            l2_weight: d.l2_weight,
            epochs: d.epochs,
            negatives_per_positive: d.negatives_per_positive,
            use_bias: d.use_bias,
            rng_seed: d.rng_seed,
        }
    }
}

impl MfSection {
    pub fn mf_config(&self) -> MfConfig {
        MfConfig {
            dim: self.dim,
            learning_rate: self.learning_rate,
            l2_weight: self.l2_weight,
            epochs: self.epochs,
            negatives_per_positive: self.negatives_per_positive,
            use_bias: self.use_bias,
            rng_seed: self.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub embedding: usize,
    pub hidden: usize,
    pub output: usize,
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

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(t: &TrainConfig) -> Self {
        TrainSection {
            embedding: t.dims.embedding,
            hidden: t.dims.hidden,
            output: t.dims.output,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            epochs: t.epochs,
            batch_size: t.batch_size,
            rng_seed: t.rng_seed,
            trainable_scope: t.trainable_scope,
            cf_concat: t.cf_concat,
            chunk_pooling: t.chunk_pooling,
            shared_embeddings: t.shared_embeddings,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dims: TowerDims {
                embedding: self.embedding,
                hidden: self.hidden,
                output: self.output,
            },
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            epochs: self.epochs,
            batch_size: self.batch_size,
            rng_seed: self.rng_seed,
            trainable_scope: self.trainable_scope,
            cf_concat: self.cf_concat,
            chunk_pooling: self.chunk_pooling,
            shared_embeddings: self.shared_embeddings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Standard,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub negatives: usize,
    pub seed: u64,
    pub include_title: bool,
    pub macro_average: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            mode: EvalMode::Standard,
            negatives: DEFAULT_NEGATIVES,
            seed: 101,
            include_title: false,
            macro_average: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub tsv: PathBuf,
    pub table: PathBuf,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            tsv: "report.tsv".into(),
            table: "report.txt".into(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.interactions);
        fix(&mut self.paths.items);
        fix(&mut self.paths.workdir);
        if let Some(idf) = self.paths.idf.as_mut() {
            fix(idf);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if !(self.filter.test_fraction > 0.0 && self.filter.test_fraction < 1.0) {
            return Err(Error::Config("filter.test_fraction must lie in (0, 1)".into()));
        }
        if self.eval.negatives == 0 {
            return Err(Error::Config("eval.negatives must be at least 1".into()));
        }
        self.profile.profile_config().validate()?;
        self.mf.mf_config().validate()?;
        self.train.train_config().validate()?;
        if self.sampling.ratio == 0 {
            return Err(Error::Config("sampling.ratio must be at least 1".into()));
        }
        Ok(())
    }

    /// Input files that must exist before any stage runs.
    pub fn check_inputs(&self) -> Result<()> {
        let mut required = vec![&self.paths.interactions, &self.paths.items];
        if let Some(idf) = &self.paths.idf {
            required.push(idf);
        }
        for p in required {
            if !p.exists() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form with the workdir and thread
    /// count left out; 16 hex digits.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = 0;
        canonical.paths.workdir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
