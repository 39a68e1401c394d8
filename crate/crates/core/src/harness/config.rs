use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consolidation::MixConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, ModelConfig};
use crate::tasks::{self, TaskSpec};

/// Training method for a continual run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "modelmix")]
    ModelMix,
    #[serde(rename = "sac")]
    Sac,
    #[serde(rename = "uir")]
    Uir,
    #[default]
    #[serde(rename = "sac+uir")]
    SacUir,
    #[serde(rename = "fkl")]
    Fkl,
    #[serde(rename = "ewc")]
    Ewc,
    #[serde(rename = "replay")]
    Replay,
    #[serde(rename = "joint")]
    Joint,
}

/// How stage parameters are merged into the running model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Consolidation {
    None,
    Mix,
    Sac,
}

/// Extra term added to the task loss during a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    None,
    Inquiry,
    ForwardKl,
    Ewc,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Vanilla,
        Method::ModelMix,
        Method::Sac,
        Method::Uir,
        Method::SacUir,
        Method::Fkl,
        Method::Ewc,
        Method::Replay,
        Method::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::ModelMix => "modelmix",
            Method::Sac => "sac",
            Method::Uir => "uir",
            Method::SacUir => "sac+uir",
            Method::Fkl => "fkl",
            Method::Ewc => "ewc",
            Method::Replay => "replay",
            Method::Joint => "joint",
        }
    }

    pub fn consolidation(self) -> Consolidation {
        match self {
            Method::ModelMix => Consolidation::Mix,
            Method::Sac | Method::SacUir => Consolidation::Sac,
            _ => Consolidation::None,
        }
    }

    pub fn regularizer(self) -> Regularizer {
        match self {
            Method::Uir | Method::SacUir => Regularizer::Inquiry,
            Method::Fkl => Regularizer::ForwardKl,
            Method::Ewc => Regularizer::Ewc,
            _ => Regularizer::None,
        }
    }

    pub fn uses_alpha(self) -> bool {
        self.consolidation() != Consolidation::None
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Starting point of a stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Randomly initialized weights.
    Random,
    /// Weights first trained jointly on the general templates.
    #[default]
    BaseMixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// General templates: learned by the base model, probed after each
    /// stage, and the source of inquiry prompts. Never trained during the
    /// stream.
    pub base_templates: Vec<TaskSpec>,
    /// The task sequence `D_1 … D_T`.
    pub tasks: Vec<TaskSpec>,
    pub init: InitMode,
    /// Inquiry-set size as a fraction of the mean stage training-set size.
    pub inquiry_fraction: f64,
    /// Share of inquiry prompts that are free-form word strings.
    pub free_form_fraction: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            base_templates: tasks::default_base_templates(400, 100),
            tasks: tasks::default_stream_tasks(1000, 100),
            init: InitMode::BaseMixture,
            inquiry_fraction: 0.1,
            free_form_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Peak learning rate of each stream stage.
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    /// Fraction of each stage's steps spent in linear warmup before the
    /// cosine decay.
    pub warmup_ratio: f64,
    /// Peak learning rate and epoch count for base-model training.
    pub base_lr: f64,
    pub base_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adamw: AdamWConfig::default(),
            batch_size: 8,
            epochs_per_stage: 1,
            warmup_ratio: 0.03,
            base_lr: 3e-3,
            base_epochs: 8,
        }
    }
}

/// Everything that determines a run. Serialized as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Label for CSV rows; derived from method, alpha and seed when absent.
    pub run_id: Option<String>,
    pub model: ModelConfig,
    pub stream: StreamConfig,
    pub method: Method,
    pub mix: MixConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub ewc_lambda: f64,
    /// Share of replayed examples in each stage's training data.
    pub replay_ratio: f64,
    /// Upper bound on generated tokens during evaluation.
    pub max_new_tokens: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            model: ModelConfig::default(),
            stream: StreamConfig::default(),
            method: Method::default(),
            mix: MixConfig::default(),
            optim: OptimConfig::default(),
            seed: 0,
            ewc_lambda: 100.0,
            replay_ratio: 0.1,
            max_new_tokens: 8,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_id(&self) -> String {
        match &self.run_id {
            Some(id) => id.clone(),
            None if self.method.uses_alpha() => format!("{}-a{}-s{}", self.method, self.mix.alpha, self.seed),
            None => format!("{}-s{}", self.method, self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.model.validate().map_err(cfg_err)?;
        self.mix.validate().map_err(cfg_err)?;
        if self.model.vocab_size < tasks::vocab::SIZE {
            return Err(Error::Config(format!(
                "vocab_size {} is smaller than the task vocabulary ({})",
                self.model.vocab_size,
                tasks::vocab::SIZE
            )));
        }
        let s = &self.stream;
        if s.tasks.is_empty() {
            return Err(Error::Config("the task stream is empty".into()));
        }
        if s.base_templates.is_empty() {
            return Err(Error::Config("at least one general template is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for spec in s.base_templates.iter().chain(&s.tasks) {
            spec.validate()?;
            if spec.n_train == 0 || spec.n_test == 0 {
                return Err(Error::Config(format!("task `{}` needs nonempty train and test splits", spec.task_id)));
            }
            if !seen.insert(spec.task_id.as_str()) {
                return Err(Error::Config(format!("duplicate task id `{}`", spec.task_id)));
            }
            let answer = match &spec.rule {
                tasks::Rule::Copy | tasks::Rule::Reverse | tasks::Rule::Shift { .. } => spec.key_len,
                tasks::Rule::Constant { tokens } => tokens.len(),
                tasks::Rule::Pick { indices } => indices.len(),
                _ => 1,
            };
            // model inputs drop the final target token
            let longest = 1 + spec.instruction.len() + spec.key_len + 1 + answer;
            if longest > self.model.context_length {
                return Err(Error::Config(format!(
                    "task `{}` examples can exceed the context length {}",
                    spec.task_id, self.model.context_length
                )));
            }
        }
        if !(s.inquiry_fraction > 0.0 && s.inquiry_fraction <= 1.0) {
            return Err(Error::Config(format!("inquiry_fraction must lie in (0, 1], got {}", s.inquiry_fraction)));
        }
        if !(0.0..=1.0).contains(&s.free_form_fraction) {
            return Err(Error::Config(format!("free_form_fraction must lie in [0, 1], got {}", s.free_form_fraction)));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(o.base_lr > 0.0 && o.base_lr.is_finite()) {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        if o.batch_size == 0 || o.epochs_per_stage == 0 {
            return Err(Error::Config("batch_size and epochs_per_stage must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.warmup_ratio) {
            return Err(Error::Config(format!("warmup_ratio must lie in [0, 1), got {}", o.warmup_ratio)));
        }
        if self.method == Method::Ewc && !(self.ewc_lambda >= 0.0 && self.ewc_lambda.is_finite()) {
            return Err(Error::Config("ewc_lambda must be nonnegative and finite".into()));
        }
        if self.method == Method::Replay && !(self.replay_ratio > 0.0 && self.replay_ratio < 1.0) {
            return Err(Error::Config(format!("replay_ratio must lie in (0, 1), got {}", self.replay_ratio)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from a run seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
