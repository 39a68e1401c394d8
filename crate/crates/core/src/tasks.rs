//! Synthetic instruction-task streams.
//!
//! Every example is `BOS, instruction…, key…, SEP` followed by a response
//! terminated by `EOS`. The instruction token selects a deterministic rule
//! that maps the key (a short string of content symbols) to the response.
//! Rules answer in one of three formats (a phrase, a single token, or an
//! option letter), so a stream can be built whose tasks pull the model
//! toward conflicting answer formats.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sequence;

/// Shared 64-token vocabulary.
pub mod vocab {
    pub const SIZE: usize = 64;
    pub const BOS: u32 = 0;
    pub const SEP: u32 = 1;
    pub const EOS: u32 = 2;

    pub const INSTR_BASE: u32 = 3;
    pub const N_INSTR: u32 = 12;
    pub const SYM_BASE: u32 = INSTR_BASE + N_INSTR;
    pub const N_SYM: u32 = 24;
    pub const OPT_BASE: u32 = SYM_BASE + N_SYM;
    pub const N_OPT: u32 = 4;
    pub const DIGIT_BASE: u32 = OPT_BASE + N_OPT;
    pub const N_DIGIT: u32 = 10;
    pub const WORD_BASE: u32 = DIGIT_BASE + N_DIGIT;
    pub const N_WORD: u32 = SIZE as u32 - WORD_BASE;

    pub fn instr(i: u32) -> u32 {
        assert!(i < N_INSTR);
        INSTR_BASE + i
    }

    pub fn sym(i: u32) -> u32 {
        assert!(i < N_SYM);
        SYM_BASE + i
    }

    pub fn opt(i: u32) -> u32 {
        assert!(i < N_OPT);
        OPT_BASE + i
    }

    pub fn digit(i: u32) -> u32 {
        assert!(i < N_DIGIT);
        DIGIT_BASE + i
    }

    pub fn word(i: u32) -> u32 {
        assert!(i < N_WORD);
        WORD_BASE + i
    }

    /// Index of a content symbol, if `tok` is one.
    pub fn sym_index(tok: u32) -> Option<u32> {
        (SYM_BASE..SYM_BASE + N_SYM).contains(&tok).then(|| tok - SYM_BASE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseFormat {
    SingleToken,
    Phrase,
    OptionLetter,
}

/// Deterministic key → answer mapping. Symbol arithmetic is over the task's
/// alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Rule {
    Copy,
    Reverse,
    /// Each symbol advanced by `by` (mod alphabet).
    Shift {
        by: u32,
    },
    First,
    Last,
    /// Largest symbol.
    Max,
    /// Sum of symbol indices mod 10, as a digit.
    SumDigit,
    /// Sum of symbol indices mod 4, as an option letter.
    OptionClass,
    /// Symbol at `index`, as an option letter (index mod 4).
    OptionAt {
        index: usize,
    },
    /// A fixed phrase regardless of the key.
    Constant {
        tokens: Vec<u32>,
    },
    /// Key symbols at the given positions, in order.
    Pick {
        indices: Vec<usize>,
    },
}

impl Rule {
    pub fn format(&self) -> ResponseFormat {
        match self {
            Rule::Pick { indices } if indices.len() == 1 => ResponseFormat::SingleToken,
            Rule::Copy | Rule::Reverse | Rule::Shift { .. } | Rule::Constant { .. } | Rule::Pick { .. } => {
                ResponseFormat::Phrase
            }
            Rule::First | Rule::Last | Rule::Max | Rule::SumDigit => ResponseFormat::SingleToken,
            Rule::OptionClass | Rule::OptionAt { .. } => ResponseFormat::OptionLetter,
        }
    }

    /// Answer tokens for `key` (symbol indices), without the trailing EOS.
    pub fn apply(&self, key: &[u32], alphabet: u32) -> Vec<u32> {
        match self {
            Rule::Copy => key.iter().map(|&s| vocab::sym(s)).collect(),
            Rule::Reverse => key.iter().rev().map(|&s| vocab::sym(s)).collect(),
            Rule::Shift { by } => key.iter().map(|&s| vocab::sym((s + by) % alphabet)).collect(),
            Rule::First => vec![vocab::sym(key[0])],
            Rule::Last => vec![vocab::sym(key[key.len() - 1])],
            Rule::Max => vec![vocab::sym(*key.iter().max().expect("nonempty key"))],
            Rule::SumDigit => vec![vocab::digit(key.iter().sum::<u32>() % vocab::N_DIGIT)],
            Rule::OptionClass => vec![vocab::opt(key.iter().sum::<u32>() % vocab::N_OPT)],
            Rule::OptionAt { index } => vec![vocab::opt(key[*index] % vocab::N_OPT)],
            Rule::Constant { tokens } => tokens.clone(),
            Rule::Pick { indices } => indices.iter().map(|&i| vocab::sym(key[i])).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    /// Tokens placed between BOS and the key.
    pub instruction: Vec<u32>,
    pub rule: Rule,
    pub response_format: ResponseFormat,
    pub key_len: usize,
    /// Number of content symbols keys are drawn from.
    pub alphabet: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(task_id: &str, instruction: u32, rule: Rule, n_train: usize, n_test: usize, seed: u64) -> Self {
        let response_format = rule.format();
        Self {
            task_id: task_id.to_string(),
            instruction: vec![vocab::instr(instruction)],
            rule,
            response_format,
            key_len: 3,
            alphabet: 12,
            n_train,
            n_test,
            seed,
        }
    }

    pub fn keyspace(&self) -> u128 {
        (self.alphabet as u128).saturating_pow(self.key_len as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_len == 0 || self.alphabet == 0 || self.alphabet > vocab::N_SYM {
            return Err(Error::Config(format!(
                "task `{}`: key_len must be ≥ 1 and alphabet in 1..={}",
                self.task_id,
                vocab::N_SYM
            )));
        }
        if self.rule.format() != self.response_format {
            return Err(Error::Config(format!(
                "task `{}`: rule answers in {:?} but response_format is {:?}",
                self.task_id,
                self.rule.format(),
                self.response_format
            )));
        }
        if let Rule::OptionAt { index } = self.rule {
            if index >= self.key_len {
                return Err(Error::Config(format!("task `{}`: option index out of key", self.task_id)));
            }
        }
        if let Rule::Pick { indices } = &self.rule {
            if indices.is_empty() || indices.iter().any(|&i| i >= self.key_len) {
                return Err(Error::Config(format!(
                    "task `{}`: pick indices must be nonempty and inside the key",
                    self.task_id
                )));
            }
        }
        if let Rule::Constant { tokens } = &self.rule {
            if tokens.iter().any(|&t| t as usize >= vocab::SIZE) {
                return Err(Error::Config(format!("task `{}`: constant answer outside vocabulary", self.task_id)));
            }
        }
        if self.instruction.iter().any(|&t| t as usize >= vocab::SIZE) {
            return Err(Error::Config(format!("task `{}`: instruction outside vocabulary", self.task_id)));
        }
        if (self.n_train + self.n_test) as u128 > self.keyspace() {
            return Err(Error::Config(format!(
                "task `{}`: {} examples requested but only {} distinct keys exist",
                self.task_id,
                self.n_train + self.n_test,
                self.keyspace()
            )));
        }
        Ok(())
    }

    /// Full prompt for a key: `BOS, instruction…, key symbols…, SEP`.
    pub fn prompt_for(&self, key: &[u32]) -> Vec<u32> {
        let mut p = vec![vocab::BOS];
        p.extend(&self.instruction);
        p.extend(key.iter().map(|&s| vocab::sym(s)));
        p.push(vocab::SEP);
        p
    }

    pub fn example_for(&self, key: &[u32]) -> Example {
        let mut response = self.rule.apply(key, self.alphabet);
        response.push(vocab::EOS);
        Example {
            task_id: self.task_id.clone(),
            instruction: self.instruction.clone(),
            prompt: key.iter().map(|&s| vocab::sym(s)).collect(),
            response,
        }
    }

    fn key_from_index(&self, mut idx: u128) -> Vec<u32> {
        let a = self.alphabet as u128;
        let mut key = vec![0; self.key_len];
        for slot in key.iter_mut().rev() {
            *slot = (idx % a) as u32;
            idx /= a;
        }
        key
    }

    /// `count` distinct keys, sampled deterministically from `seed`.
    fn sample_keys(&self, count: usize, seed: u64) -> Vec<Vec<u32>> {
        let space = self.keyspace();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if (count as u128) * 2 >= space {
            let mut all: Vec<u128> = (0..space).collect();
            all.shuffle(&mut rng);
            return all[..count].iter().map(|&i| self.key_from_index(i)).collect();
        }
        let mut seen = HashSet::with_capacity(count);
        let mut keys = Vec::with_capacity(count);
        while keys.len() < count {
            let idx = rng.random_range(0..space);
            if seen.insert(idx) {
                keys.push(self.key_from_index(idx));
            }
        }
        keys
    }
}

/// One instruction example. `prompt` holds the key tokens only; BOS and SEP
/// are added by [`Example::prompt_tokens`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub task_id: String,
    pub instruction: Vec<u32>,
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
}

impl Example {
    pub fn prompt_tokens(&self) -> Vec<u32> {
        let mut p = vec![vocab::BOS];
        p.extend(&self.instruction);
        p.extend(&self.prompt);
        p.push(vocab::SEP);
        p
    }

    pub fn to_sequence(&self) -> Sequence {
        Sequence::from_prompt_response(&self.prompt_tokens(), &self.response)
    }

    pub fn format(&self) -> ResponseFormat {
        let body = &self.response[..self.response.len().saturating_sub(1)];
        if body.len() == 1 && (vocab::OPT_BASE..vocab::OPT_BASE + vocab::N_OPT).contains(&body[0]) {
            ResponseFormat::OptionLetter
        } else if body.len() == 1 {
            ResponseFormat::SingleToken
        } else {
            ResponseFormat::Phrase
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Generates disjoint train/test splits for a task.
pub fn gen_task(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let keys = spec.sample_keys(spec.n_train + spec.n_test, spec.seed);
    let examples: Vec<Example> = keys.iter().map(|k| spec.example_for(k)).collect();
    let test = examples[spec.n_train..].to_vec();
    let mut train = examples;
    train.truncate(spec.n_train);
    Ok(TaskData { spec: spec.clone(), train, test })
}

/// A shuffled multitask dataset and its per-task proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub examples: Vec<Example>,
    /// `(task_id, λ_k, realized count)`.
    pub proportions: Vec<(String, f64, usize)>,
}

/// Mixes task training sets with proportions `λ_k = |D_k| / |D|`. When
/// `total` is smaller than the union, per-task counts are allocated by the
/// largest-remainder method and taken from the front of each set.
///
/// Task slots are shuffled under `seed`; within a task, examples keep their
/// original order, so a single-task mixture is that task's data unchanged.
pub fn joint_mixture(tasks: &[&TaskData], total: Option<usize>, seed: u64) -> Result<Mixture> {
    if tasks.is_empty() {
        return Err(Error::invalid("joint mixture needs at least one task"));
    }
    let sizes: Vec<usize> = tasks.iter().map(|t| t.train.len()).collect();
    let union: usize = sizes.iter().sum();
    let total = total.unwrap_or(union);
    if union == 0 || total == 0 {
        return Err(Error::invalid("joint mixture would be empty"));
    }
    if total > union {
        return Err(Error::invalid(format!("requested {total} examples but tasks only hold {union}")));
    }
    let counts = largest_remainder(&sizes, total);
    let mut slots: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut next = vec![0usize; tasks.len()];
    let examples = slots
        .into_iter()
        .map(|k| {
            next[k] += 1;
            tasks[k].train[next[k] - 1].clone()
        })
        .collect();
    let proportions = tasks
        .iter()
        .zip(&sizes)
        .zip(&counts)
        .map(|((t, &size), &count)| (t.spec.task_id.clone(), size as f64 / union as f64, count))
        .collect();
    Ok(Mixture { examples, proportions })
}

fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let union: usize = sizes.iter().sum();
    let mut counts: Vec<usize> = sizes.iter().map(|&s| s * total / union).collect();
    let mut rema: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| (s * total % union, i)).collect();
    // larger remainder first, lower index on ties
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - counts.iter().sum::<usize>();
    for &(_, i) in rema.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Interleaves replayed buffer examples into a new task's data so that
/// replayed examples make up `ratio` of the result (±1 example). The buffer
/// is cycled in a seeded order if it is smaller than needed.
pub fn replay_mixture(new_task: &[Example], buffer: &[Example], ratio: f64, seed: u64) -> Result<Vec<Example>> {
    if buffer.is_empty() {
        return Err(Error::invalid("replay buffer is empty"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("replay ratio must lie in (0, 1), got {ratio}")));
    }
    let n_replay = (ratio / (1.0 - ratio) * new_task.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    order.shuffle(&mut rng);
    let mut out: Vec<Example> = new_task.to_vec();
    out.extend((0..n_replay).map(|i| buffer[order[i % order.len()]].clone()));
    out.shuffle(&mut rng);
    Ok(out)
}

/// Unlabeled inquiry prompts plus, for the template-derived ones, the
/// labeled examples they were taken from (used only by the replay baseline).
#[derive(Clone, Debug, PartialEq)]
pub struct InquirySet {
    pub prompts: Vec<Vec<u32>>,
    pub labeled: Vec<Example>,
}

/// Unlabeled prompts from the given templates plus free-form word strings.
/// Keys are drawn from each template's training split so inquiries never
/// reveal held-out keys.
pub fn gen_inquiry(templates: &[&TaskData], size: usize, free_form_fraction: f64, seed: u64) -> Result<InquirySet> {
    if size == 0 {
        return Err(Error::invalid("inquiry set size must be positive"));
    }
    let n_free = ((size as f64) * free_form_fraction.clamp(0.0, 1.0)).round() as usize;
    if templates.is_empty() && n_free < size {
        return Err(Error::invalid("inquiry set needs templates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prompts = Vec::with_capacity(size);
    let mut labeled = Vec::with_capacity(size - n_free);
    for i in 0..size - n_free {
        let t = templates[i % templates.len()];
        let ex = &t.train[rng.random_range(0..t.train.len())];
        prompts.push(ex.prompt_tokens());
        labeled.push(ex.clone());
    }
    for _ in 0..n_free {
        let len = rng.random_range(2..=5);
        let mut p = vec![vocab::BOS];
        p.extend((0..len).map(|_| vocab::word(rng.random_range(0..vocab::N_WORD))));
        p.push(vocab::SEP);
        prompts.push(p);
    }
    prompts.shuffle(&mut rng);
    Ok(InquirySet { prompts, labeled })
}

/// Held-out evaluation over templates the stream never trains on.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralProbe {
    pub examples: Vec<Example>,
}

impl GeneralProbe {
    /// Test splits of the general templates, which are disjoint from every
    /// training split by construction.
    pub fn from_templates(templates: &[&TaskData]) -> Self {
        Self { examples: templates.iter().flat_map(|t| t.test.iter().cloned()).collect() }
    }

    pub fn prompts(&self) -> Vec<Vec<u32>> {
        self.examples.iter().map(Example::prompt_tokens).collect()
    }
}

/// Writes examples as JSON lines: one example per line.
pub fn write_jsonl<W: Write>(mut w: W, examples: &[Example]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// General templates learned before the stream starts: two phrase rules, a
/// single-token rule and an option-letter rule.
pub fn default_base_templates(n_train: usize, n_test: usize) -> Vec<TaskSpec> {
    vec![
        TaskSpec::new("gen-copy", 0, Rule::Copy, n_train, n_test, 101),
        TaskSpec::new("gen-reverse", 1, Rule::Reverse, n_train, n_test, 102),
        TaskSpec::new("gen-first", 2, Rule::First, n_train, n_test, 103),
        TaskSpec::new("gen-option", 3, Rule::OptionAt { index: 0 }, n_train, n_test, 104),
    ]
}

/// Three stream tasks whose answer formats conflict with each other and with
/// the phrase-heavy general templates.
pub fn default_stream_tasks(n_train: usize, n_test: usize) -> Vec<TaskSpec> {
    vec![
        TaskSpec::new("task-last", 4, Rule::Last, n_train, n_test, 201),
        TaskSpec::new("task-option", 5, Rule::OptionAt { index: 2 }, n_train, n_test, 202),
        TaskSpec::new("task-prefix", 6, Rule::Pick { indices: vec![0, 1] }, n_train, n_test, 203),
    ]
}
