//! Run configuration (TOML).
//!
//! ```toml
//! seed = 7
//! execution = "parallel"
//! checkpoint_dir = "run"
//!
//! [data]
//! vocab = "vocab.txt"
//! eval_corpus = "test"
//! corpora = { source = "source.jsonl", train = "train.jsonl", test = "test.jsonl" }
//! lexicons = [{ path = "i2b2.lex" }, { path = "umls.lex", policy = { mode = "overlap", overlap_threshold = 1.0 } }]
//!
//! [[phases]]
//! name = "source"
//! role = "source"
//! corpus = "source"
//! epochs = 20
//! weights = { alpha_c = 1.0, alpha_k = { i2b2 = 0.5, umls = 0.2 }, beta = [1.0, 0.3, 0.3] }
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::{LearningRates, OptimizerKind};
use super::store::InitMode;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lexicon::MatchPolicy;
use crate::losses::{LossSettings, LossWeights};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconRef {
    pub path: PathBuf,
    #[serde(default)]
    pub policy: MatchPolicy,
    /// Match gold spans that have no label from this lexicon yet.
    #[serde(default = "yes")]
    pub annotate: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub vocab: PathBuf,
    pub lowercase: Option<bool>,
    pub corpora: BTreeMap<String, PathBuf>,
    pub lexicons: Vec<LexiconRef>,
    /// Corpus key scored by `evaluate` and sampled by `project`.
    pub eval_corpus: String,
    /// Documents longer than this are truncated at load.
    pub max_tokens: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub shuffle: bool,
    pub source_phase_rl: bool,
    pub init: InitMode,
    /// Lexicon whose labels form the scaffold classes; defaults to the first
    /// coarse lexicon.
    pub scaffold_lexicon: Option<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: OptimizerKind::Adam,
            batch_size: 1,
            shuffle: true,
            source_phase_rl: true,
            init: InitMode::Uniform,
            scaffold_lexicon: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseRole {
    Source,
    #[default]
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub name: String,
    #[serde(default)]
    pub role: PhaseRole,
    /// Key into `data.corpora`.
    pub corpus: String,
    pub epochs: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_task_lr")]
    pub task_lr: f64,
    #[serde(default)]
    pub weights: LossWeights,
}

fn default_base_lr() -> f64 {
    1e-2
}

fn default_task_lr() -> f64 {
    1e-2
}

impl PhaseConfig {
    pub fn rates(&self) -> LearningRates {
        LearningRates {
            base: self.base_lr,
            task: self.task_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { samples: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub threshold: f64,
    pub coordinates: usize,
    /// Number of documents of the first target phase corpus to check on.
    pub documents: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            threshold: 1e-4,
            coordinates: 20,
            documents: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub execution: Execution,
    pub checkpoint_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub training: TrainingConfig,
    pub phases: Vec<PhaseConfig>,
    pub projection: ProjectionConfig,
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            execution: Execution::Sequential,
            checkpoint_dir: PathBuf::from("run"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossSettings::default(),
            training: TrainingConfig::default(),
            phases: Vec::new(),
            projection: ProjectionConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.checkpoint_dir);
        fix(&mut self.data.vocab);
        self.data.corpora.values_mut().for_each(fix);
        self.data.lexicons.iter_mut().for_each(|l| fix(&mut l.path));
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.data.vocab.as_os_str().is_empty() {
            return Err(Error::Config("data.vocab is required".into()));
        }
        for l in &self.data.lexicons {
            l.policy.validate()?;
        }
        if self.phases.is_empty() {
            return Err(Error::Config("at least one [[phases]] entry is required".into()));
        }
        for p in &self.phases {
            if !self.data.corpora.contains_key(&p.corpus) {
                return Err(Error::Config(format!(
                    "phase {}: corpus {:?} is not listed in data.corpora",
                    p.name, p.corpus
                )));
            }
            if p.epochs == 0 {
                return Err(Error::Config(format!("phase {}: epochs must be ≥ 1", p.name)));
            }
            if !(p.base_lr > 0.0 && p.task_lr > 0.0) {
                return Err(Error::Config(format!("phase {}: learning rates must be positive", p.name)));
            }
            p.weights
                .validate()
                .map_err(|e| Error::Config(format!("phase {}: {e}", p.name)))?;
        }
        if !self.data.eval_corpus.is_empty() && !self.data.corpora.contains_key(&self.data.eval_corpus) {
            return Err(Error::Config(format!(
                "data.eval_corpus {:?} is not listed in data.corpora",
                self.data.eval_corpus
            )));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be ≥ 1".into()));
        }
        if self.loss.pair_budget == 0 {
            return Err(Error::Config("loss.pair_budget must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Rates used in the source / target phases of the original fine-tuning
    /// recipe: 2e-5 for the encoder, 1e-4 for the task heads.
    pub const REFERENCE_RATES: LearningRates = LearningRates {
        base: 2e-5,
        task: 1e-4,
    };
}
