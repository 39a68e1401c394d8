use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{derive_seed, Consolidation, InitMode, Method, Regularizer, RunConfig};
use crate::consolidation::{model_mix, sac_consolidate};
use crate::error::{Error, Result};
use crate::nn::{self, accumulate_ce, AdamW, Batch, Gradients, Model, ModelConfig};
use crate::params::ParamSet;
use crate::regularizers::{self, accumulate_fkl, accumulate_uir, ewc_penalty, InquiryBatch};
use crate::tasks::{self, Example, GeneralProbe, InquirySet, TaskData};

const SALT_TASK: u64 = 1;
const SALT_INIT: u64 = 2;
const SALT_BASE_MIX: u64 = 3;
const SALT_BASE_TRAIN: u64 = 4;
const SALT_INQUIRY: u64 = 5;
const SALT_STAGE: u64 = 6;
const SALT_REPLAY: u64 = 7;
const SALT_JOINT_MIX: u64 = 8;

/// Examples per stage used for the EWC Fisher estimate.
const FISHER_EXAMPLES: usize = 64;

/// All data a run needs, generated deterministically from the config.
#[derive(Clone, Debug)]
pub struct StreamData {
    pub base: Vec<TaskData>,
    pub tasks: Vec<TaskData>,
    pub probe: GeneralProbe,
    /// Probe prompts, used to measure language shift.
    pub probe_batch: InquiryBatch,
    pub inquiry: InquirySet,
}

impl StreamData {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = |spec: &tasks::TaskSpec| {
            let mut spec = spec.clone();
            spec.seed = derive_seed(derive_seed(cfg.seed, SALT_TASK), spec.seed);
            tasks::gen_task(&spec)
        };
        let base = cfg.stream.base_templates.iter().map(gen).collect::<Result<Vec<_>>>()?;
        let stream = cfg.stream.tasks.iter().map(gen).collect::<Result<Vec<_>>>()?;
        let base_refs: Vec<&TaskData> = base.iter().collect();
        let probe = GeneralProbe::from_templates(&base_refs);
        let probe_batch = InquiryBatch::new(probe.prompts())?;
        let mean_train = stream.iter().map(|t| t.train.len()).sum::<usize>() as f64 / stream.len() as f64;
        let size = ((mean_train * cfg.stream.inquiry_fraction).round() as usize).max(1);
        let inquiry =
            tasks::gen_inquiry(&base_refs, size, cfg.stream.free_form_fraction, derive_seed(cfg.seed, SALT_INQUIRY))?;
        Ok(Self { base, tasks: stream, probe, probe_batch, inquiry })
    }
}

/// Evaluation of one task after a stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEval {
    pub task_id: String,
    /// Mean response-token cross-entropy on the test split.
    pub loss: f64,
    /// Exact-match accuracy of greedy decoding on the test split.
    pub acc: f64,
    /// `max(0, loss − loss at the end of the stage that learned the task)`.
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    /// 0 is the starting model; stage `t` follows training on `D_t`.
    pub stage: usize,
    pub tasks: Vec<TaskEval>,
    pub gen_acc: f64,
    pub lang_shift: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run_id: String,
    pub method: Method,
    /// Mixing ratio for consolidating methods.
    pub alpha: Option<f64>,
    pub seed: u64,
    stages: Vec<StageRecord>,
    pub wall_time: Duration,
    pub final_params: ParamSet<f32>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, method: Method, alpha: Option<f64>, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            method,
            alpha,
            seed,
            stages: Vec::new(),
            wall_time: Duration::ZERO,
            final_params: ParamSet::new(),
        }
    }

    /// Appends a stage; stages must arrive in increasing order.
    pub fn push_stage(&mut self, stage: StageRecord) -> Result<()> {
        if let Some(last) = self.stages.last() {
            if stage.stage <= last.stage {
                return Err(Error::invalid(format!("stage {} recorded after stage {}", stage.stage, last.stage)));
            }
        }
        self.stages.push(stage);
        Ok(())
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn initial(&self) -> Option<&StageRecord> {
        self.stages.first()
    }

    pub fn final_stage(&self) -> Option<&StageRecord> {
        self.stages.last()
    }

    /// Mean accuracy over all tasks evaluated at the final stage.
    pub fn final_task_acc(&self) -> f64 {
        self.final_stage().map_or(0.0, |s| mean(s.tasks.iter().map(|t| t.acc)))
    }

    pub fn final_gen_acc(&self) -> f64 {
        self.final_stage().map_or(0.0, |s| s.gen_acc)
    }

    pub fn initial_gen_acc(&self) -> f64 {
        self.initial().map_or(0.0, |s| s.gen_acc)
    }

    pub fn final_lang_shift(&self) -> f64 {
        self.final_stage().map_or(0.0, |s| s.lang_shift)
    }

    /// Mean of final task accuracy and final general-probe accuracy.
    pub fn combined(&self) -> f64 {
        0.5 * (self.final_task_acc() + self.final_gen_acc())
    }
}

pub(crate) fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Forgetting slack of every task except the last one evaluated at the final
/// stage: `max(0, final loss − loss when the task was first evaluated)`.
pub fn forgetting(record: &RunRecord) -> Vec<f64> {
    let Some(last) = record.final_stage() else {
        return Vec::new();
    };
    let n = last.tasks.len().saturating_sub(1);
    last.tasks[..n]
        .iter()
        .map(|t| {
            let first = record
                .stages
                .iter()
                .find_map(|s| s.tasks.iter().find(|u| u.task_id == t.task_id))
                .map_or(t.loss, |u| u.loss);
            (t.loss - first).max(0.0)
        })
        .collect()
}

/// Inquiry distance between two snapshots on a probe batch.
pub fn language_shift(
    cfg: &ModelConfig,
    model_t: &ParamSet<f32>,
    model_base: &ParamSet<f32>,
    probe: &InquiryBatch,
) -> Result<f64> {
    let a = Model::new(cfg, model_t)?;
    let b = Model::new(cfg, model_base)?;
    Ok(regularizers::hidden_shift(&a, &b, probe)? as f64)
}

/// Learning rate at `step` of `total`: linear warmup then cosine decay.
pub fn lr_at(peak: f64, step: usize, total: usize, warmup_ratio: f64) -> f64 {
    let warmup = ((warmup_ratio * total as f64).ceil() as usize).min(total);
    if step < warmup {
        peak * (step + 1) as f64 / warmup as f64
    } else {
        let progress = (step - warmup) as f64 / (total - warmup) as f64;
        peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

enum StageReg<'a> {
    None,
    Inquiry { teacher: &'a ParamSet<f32>, prompts: &'a [Vec<u32>] },
    ForwardKl { teacher: &'a ParamSet<f32>, prompts: &'a [Vec<u32>] },
    Ewc { anchor: &'a ParamSet<f32>, fisher: &'a ParamSet<f32>, lambda: f64 },
}

struct Schedule {
    stage: usize,
    lr: f64,
    epochs: usize,
    seed: u64,
}

/// Trains `params` in place; returns the mean task loss of the last epoch.
fn train(
    cfg: &RunConfig,
    params: &mut ParamSet<f32>,
    examples: &[Example],
    sched: &Schedule,
    reg: &StageReg,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mcfg = &cfg.model;
    let bs = cfg.optim.batch_size;
    let per_epoch = examples.len().div_ceil(bs);
    let total = per_epoch * sched.epochs;
    let mut opt = AdamW::new(cfg.optim.adamw.clone(), params);
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    let mut epoch_loss = 0.0;
    for _ in 0..sched.epochs {
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for chunk in order.chunks(bs) {
            let batch = Batch::new(chunk.iter().map(|&i| examples[i].to_sequence()).collect());
            let (loss, grads) = {
                let model = Model::new(mcfg, params)?;
                let mut grads = Gradients::zeros(mcfg);
                let mut loss = accumulate_ce(&model, &batch, 1.0, &mut grads)? as f64;
                match reg {
                    StageReg::None | StageReg::Ewc { .. } => {}
                    StageReg::Inquiry { teacher, prompts } | StageReg::ForwardKl { teacher, prompts } => {
                        let teacher = Model::new(mcfg, teacher)?;
                        let inq = InquiryBatch::new(cycle_slice(prompts, step * bs, bs))?;
                        loss += if matches!(reg, StageReg::Inquiry { .. }) {
                            accumulate_uir(&model, &teacher, &inq, 1.0, &mut grads)? as f64
                        } else {
                            accumulate_fkl(&model, &teacher, &inq, 1.0, &mut grads)? as f64
                        };
                    }
                }
                let mut grads = grads.into_params(mcfg);
                if let StageReg::Ewc { anchor, fisher, lambda } = reg {
                    let (pen, g) = ewc_penalty(params, anchor, fisher, *lambda)?;
                    loss += pen as f64;
                    grads.add_scaled(&g, 1.0)?;
                }
                (loss, grads)
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { stage: sched.stage, step, loss });
            }
            opt.step(params, &grads, lr_at(sched.lr, step, total, cfg.optim.warmup_ratio))?;
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
    }
    Ok(epoch_loss / examples.len() as f64)
}

fn cycle_slice(items: &[Vec<u32>], start: usize, n: usize) -> Vec<Vec<u32>> {
    let n = n.min(items.len());
    (0..n).map(|i| items[(start + i) % items.len()].clone()).collect()
}

/// Whether greedy decoding from the prompt reproduces the response exactly.
pub fn exact_match(model: &Model<'_, f32>, example: &Example, max_new: usize) -> Result<bool> {
    let v = model.config().vocab_size;
    let mut seq = example.prompt_tokens();
    for (i, &want) in example.response.iter().enumerate() {
        if i >= max_new || seq.len() > model.config().context_length {
            return Ok(false);
        }
        let trace = model.forward_tokens(&seq)?;
        let last = &trace.logits()[(seq.len() - 1) * v..seq.len() * v];
        if nn::argmax(last) as u32 != want {
            return Ok(false);
        }
        seq.push(want);
    }
    Ok(true)
}

/// Mean test cross-entropy and exact-match accuracy on `examples`.
pub fn evaluate(cfg: &RunConfig, params: &ParamSet<f32>, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let model = Model::new(&cfg.model, params)?;
    let batch = Batch::new(examples.iter().map(Example::to_sequence).collect());
    let loss = nn::loss_ce(&model.forward(&batch)?, &batch)? as f64;
    let mut hits = 0usize;
    for ex in examples {
        hits += exact_match(&model, ex, cfg.max_new_tokens)? as usize;
    }
    Ok((loss, hits as f64 / examples.len() as f64))
}

fn evaluate_stage(
    cfg: &RunConfig,
    data: &StreamData,
    params: &ParamSet<f32>,
    initial: &ParamSet<f32>,
    stage: usize,
    seen: &[&TaskData],
    first_loss: &mut Vec<f64>,
) -> Result<StageRecord> {
    let mut evals = Vec::with_capacity(seen.len());
    for (i, task) in seen.iter().enumerate() {
        let (loss, acc) = evaluate(cfg, params, &task.test)?;
        if first_loss.len() == i {
            first_loss.push(loss);
        }
        evals.push(TaskEval { task_id: task.spec.task_id.clone(), loss, acc, eps: (loss - first_loss[i]).max(0.0) });
    }
    let (_, gen_acc) = evaluate(cfg, params, &data.probe.examples)?;
    let lang_shift = language_shift(&cfg.model, params, initial, &data.probe_batch)?;
    Ok(StageRecord { stage, tasks: evals, gen_acc, lang_shift })
}

/// Starting weights for the stream: random, or trained on the general
/// templates. Depends only on the model, stream, optimizer and seed, so one
/// initial model can be shared by every method.
pub fn prepare_initial(cfg: &RunConfig, data: &StreamData) -> Result<ParamSet<f32>> {
    let mut mcfg = cfg.model.clone();
    mcfg.seed = derive_seed(derive_seed(cfg.seed, SALT_INIT), cfg.model.seed);
    let mut params = nn::init_params::<f32>(&mcfg)?;
    if cfg.stream.init == InitMode::BaseMixture {
        let refs: Vec<&TaskData> = data.base.iter().collect();
        let mixture = tasks::joint_mixture(&refs, None, derive_seed(cfg.seed, SALT_BASE_MIX))?;
        let sched = Schedule {
            stage: 0,
            lr: cfg.optim.base_lr,
            epochs: cfg.optim.base_epochs,
            seed: derive_seed(cfg.seed, SALT_BASE_TRAIN),
        };
        train(cfg, &mut params, &mixture.examples, &sched, &StageReg::None)?;
    }
    Ok(params)
}

/// Parameters produced at the end of a stage.
pub struct StageSnapshot<'a> {
    pub stage: usize,
    /// Weights after training on the stage's data.
    pub trained: &'a ParamSet<f32>,
    /// Weights carried into the next stage.
    pub consolidated: &'a ParamSet<f32>,
}

/// Generates data, prepares the starting model and runs the stream.
pub fn continual_run(cfg: &RunConfig) -> Result<RunRecord> {
    let data = StreamData::generate(cfg)?;
    let initial = prepare_initial(cfg, &data)?;
    continual_run_from(cfg, &data, &initial, &mut |_| Ok(()))
}

/// Runs the stream from prepared data and starting weights, calling
/// `observer` after every stage.
pub fn continual_run_from(
    cfg: &RunConfig,
    data: &StreamData,
    initial: &ParamSet<f32>,
    observer: &mut dyn FnMut(&StageSnapshot) -> Result<()>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.method == Method::Joint {
        return joint_run_from(cfg, data, initial, observer);
    }
    let started = Instant::now();
    let method = cfg.method;
    let mut record = RunRecord::new(cfg.run_id(), method, method.uses_alpha().then_some(cfg.mix.alpha), cfg.seed);
    let mut first_loss = Vec::new();
    record.push_stage(evaluate_stage(cfg, data, initial, initial, 0, &[], &mut first_loss)?)?;

    if method == Method::Replay && data.inquiry.labeled.is_empty() {
        return Err(Error::Config("replay needs template-derived inquiries to label".into()));
    }
    let mut current = initial.clone();
    let mut ewc: Option<(ParamSet<f32>, ParamSet<f32>)> = None;
    let mut seen: Vec<&TaskData> = Vec::new();
    for (idx, task) in data.tasks.iter().enumerate() {
        let stage = idx + 1;
        let stage_seed = derive_seed(derive_seed(cfg.seed, SALT_STAGE), stage as u64);
        let examples = if method == Method::Replay {
            let seed = derive_seed(derive_seed(cfg.seed, SALT_REPLAY), stage as u64);
            tasks::replay_mixture(&task.train, &data.inquiry.labeled, cfg.replay_ratio, seed)?
        } else {
            task.train.clone()
        };
        let reg = match (method.regularizer(), &ewc) {
            (Regularizer::Inquiry, _) => StageReg::Inquiry { teacher: &current, prompts: &data.inquiry.prompts },
            (Regularizer::ForwardKl, _) => StageReg::ForwardKl { teacher: &current, prompts: &data.inquiry.prompts },
            (Regularizer::Ewc, Some((anchor, fisher))) => StageReg::Ewc { anchor, fisher, lambda: cfg.ewc_lambda },
            _ => StageReg::None,
        };
        let mut trained = current.clone();
        let sched = Schedule { stage, lr: cfg.optim.lr, epochs: cfg.optim.epochs_per_stage, seed: stage_seed };
        train(cfg, &mut trained, &examples, &sched, &reg)?;
        let consolidated = match method.consolidation() {
            Consolidation::None => trained.clone(),
            Consolidation::Mix => model_mix(&current, &trained, cfg.mix.alpha)?,
            Consolidation::Sac => sac_consolidate(&current, &trained, &cfg.mix)?,
        };
        observer(&StageSnapshot { stage, trained: &trained, consolidated: &consolidated })?;
        current = consolidated;

        if method == Method::Ewc {
            let seqs: Vec<nn::Sequence> = task.train.iter().take(FISHER_EXAMPLES).map(Example::to_sequence).collect();
            let f = regularizers::diagonal_fisher(&cfg.model, &current, &seqs)?;
            let fisher = match ewc.take() {
                Some((_, mut acc)) => {
                    acc.add_scaled(&f, 1.0)?;
                    acc
                }
                None => f,
            };
            ewc = Some((current.clone(), fisher));
        }

        seen.push(task);
        record.push_stage(evaluate_stage(cfg, data, &current, initial, stage, &seen, &mut first_loss)?)?;
    }
    record.final_params = current;
    record.wall_time = started.elapsed();
    Ok(record)
}

/// Multitask baseline: generates data and trains once on the union of all
/// stream tasks.
pub fn joint_run(cfg: &RunConfig) -> Result<RunRecord> {
    let data = StreamData::generate(cfg)?;
    let initial = prepare_initial(cfg, &data)?;
    joint_run_from(cfg, &data, &initial, &mut |_| Ok(()))
}

/// One training pass over the joint mixture of all stream tasks, recorded
/// as stage 1 and evaluated like a continual stage.
pub fn joint_run_from(
    cfg: &RunConfig,
    data: &StreamData,
    initial: &ParamSet<f32>,
    observer: &mut dyn FnMut(&StageSnapshot) -> Result<()>,
) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let mut record = RunRecord::new(cfg.run_id(), Method::Joint, None, cfg.seed);
    let mut first_loss = Vec::new();
    record.push_stage(evaluate_stage(cfg, data, initial, initial, 0, &[], &mut first_loss)?)?;

    let refs: Vec<&TaskData> = data.tasks.iter().collect();
    let mixture = tasks::joint_mixture(&refs, None, derive_seed(cfg.seed, SALT_JOINT_MIX))?;
    let mut params = initial.clone();
    let sched = Schedule {
        stage: 1,
        lr: cfg.optim.lr,
        epochs: cfg.optim.epochs_per_stage,
        seed: derive_seed(derive_seed(cfg.seed, SALT_STAGE), 1),
    };
    train(cfg, &mut params, &mixture.examples, &sched, &StageReg::None)?;
    observer(&StageSnapshot { stage: 1, trained: &params, consolidated: &params })?;
    record.push_stage(evaluate_stage(cfg, data, &params, initial, 1, &refs, &mut first_loss)?)?;
    record.final_params = params;
    record.wall_time = started.elapsed();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{Rule, TaskSpec};

    pub(crate) fn tiny_config(method: Method) -> RunConfig {
        let mut cfg = RunConfig { method, ..RunConfig::default() };
        cfg.model = ModelConfig { vocab_size: 64, context_length: 12, embed_dim: 16, n_layers: 1, n_heads: 2, seed: 0 };
        cfg.stream.base_templates = vec![
            TaskSpec::new("g-copy", 0, Rule::Copy, 24, 8, 11),
            TaskSpec::new("g-first", 2, Rule::First, 24, 8, 12),
        ];
        cfg.stream.tasks = vec![
            TaskSpec::new("t-last", 4, Rule::Last, 24, 8, 21),
            TaskSpec::new("t-opt", 5, Rule::OptionAt { index: 1 }, 24, 8, 22),
        ];
        cfg.optim.base_epochs = 2;
        cfg.optim.lr = 1e-3;
        cfg
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let lrs: Vec<f64> = (0..100).map(|s| lr_at(1.0, s, 100, 0.03)).collect();
        assert!((lrs[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(lrs[2], 1.0);
        assert_eq!(lrs[3], 1.0);
        assert!(lrs[3..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&x| x > 0.0));
        assert_eq!(lr_at(0.5, 0, 1, 0.03), 0.5);
    }

    #[test]
    fn forgetting_from_hand_built_record() {
        let te = |id: &str, loss| TaskEval { task_id: id.into(), loss, acc: 0.0, eps: 0.0 };
        let mut rec = RunRecord::new("r", Method::Vanilla, None, 0);
        rec.push_stage(StageRecord { stage: 0, tasks: vec![], gen_acc: 0.0, lang_shift: 0.0 }).unwrap();
        assert!(forgetting(&rec).is_empty());
        rec.push_stage(StageRecord { stage: 1, tasks: vec![te("a", 1.0)], gen_acc: 0.0, lang_shift: 0.0 }).unwrap();
        assert!(forgetting(&rec).is_empty());
        rec.push_stage(StageRecord {
            stage: 2,
            tasks: vec![te("a", 1.4), te("b", 0.5)],
            gen_acc: 0.0,
            lang_shift: 0.0,
        })
        .unwrap();
        let eps = forgetting(&rec);
        assert_eq!(eps.len(), 1);
        assert!((eps[0] - 0.4).abs() < 1e-12);
        assert!(rec.push_stage(StageRecord { stage: 2, tasks: vec![], gen_acc: 0.0, lang_shift: 0.0 }).is_err());
    }

    #[test]
    fn modelmix_alpha_zero_keeps_initial() {
        let mut cfg = tiny_config(Method::ModelMix);
        cfg.mix.alpha = 0.0;
        let data = StreamData::generate(&cfg).unwrap();
        let initial = prepare_initial(&cfg, &data).unwrap();
        let rec = continual_run_from(&cfg, &data, &initial, &mut |_| Ok(())).unwrap();
        assert_eq!(rec.final_params, initial);
        assert_eq!(rec.stages().len(), 3);
        assert!(forgetting(&rec).iter().all(|&e| e == 0.0));
    }

    #[test]
    fn single_task_joint_equals_vanilla() {
        let mut cfg = tiny_config(Method::Vanilla);
        cfg.stream.tasks.truncate(1);
        let data = StreamData::generate(&cfg).unwrap();
        let initial = prepare_initial(&cfg, &data).unwrap();
        let seq = continual_run_from(&cfg, &data, &initial, &mut |_| Ok(())).unwrap();
        let joint = joint_run_from(&cfg, &data, &initial, &mut |_| Ok(())).unwrap();
        assert_eq!(seq.final_params, joint.final_params);
        assert_eq!(seq.stages(), joint.stages());
    }

    #[test]
    fn every_method_runs() {
        for m in Method::ALL {
            let cfg = tiny_config(m);
            let rec = continual_run(&cfg).unwrap();
            let last = rec.final_stage().unwrap();
            assert_eq!(last.tasks.len(), 2, "{m}");
            assert!(last.tasks.iter().all(|t| t.eps >= 0.0 && t.loss.is_finite()));
            assert!(rec.final_params.is_finite());
            assert_eq!(rec.initial().unwrap().lang_shift, 0.0);
        }
    }

    #[test]
    fn divergence_is_reported_with_stage() {
        let mut cfg = tiny_config(Method::Vanilla);
        cfg.optim.lr = 1e30;
        let data = StreamData::generate(&cfg).unwrap();
        let initial = prepare_initial(&cfg, &data).unwrap();
        let err = continual_run_from(&cfg, &data, &initial, &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Divergence { stage: 1, .. }), "{err}");
    }
}
