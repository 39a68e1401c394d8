//! Stage-time regularizers.
//!
//! * Inquiry regularization: mean over unlabeled inquiry sequences of the L2
//!   distance between the student's and the frozen teacher's final hidden
//!   states, with each sequence's positions flattened into one vector.
//! * The total stage objective: instruction-tuning cross-entropy plus the
//!   inquiry term with unit weight.
//! * Baselines: forward KL on logits, a diagonal-Fisher EWC penalty.

use crate::error::{Error, Result};
use crate::nn::{self, Batch, Gradients, Model, ModelConfig, Sequence};
use crate::params::{ParamSet, Scalar};

/// Read-only snapshot of the consolidated model entering a stage.
pub struct FrozenTeacher<T: Scalar = f32> {
    params: ParamSet<T>,
}

impl<T: Scalar> FrozenTeacher<T> {
    pub fn new(params: ParamSet<T>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }
}

/// Unlabeled inquiry token sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct InquiryBatch {
    sequences: Vec<Vec<u32>>,
}

impl InquiryBatch {
    pub fn new(sequences: Vec<Vec<u32>>) -> Result<Self> {
        if sequences.is_empty() || sequences.iter().any(Vec::is_empty) {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { sequences })
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// L2 norm of a flattened hidden-state difference and its gradient with
/// respect to the student's hidden states, scaled by `weight`.
///
/// The norm is not differentiable at zero; the zero subgradient is used there.
pub fn hidden_l2<T: Scalar>(student: &[T], teacher: &[T], weight: T) -> Result<(T, Vec<T>)> {
    if student.len() != teacher.len() {
        return Err(Error::ShapeMismatch(format!("hidden states of length {} and {}", student.len(), teacher.len())));
    }
    let diff: Vec<T> = student.iter().zip(teacher).map(|(&a, &b)| a - b).collect();
    let norm = diff.iter().map(|&x| x * x).sum::<T>().sqrt();
    let grad = if norm > T::zero() {
        diff.into_iter().map(|x| x * weight / norm).collect()
    } else {
        vec![T::zero(); student.len()]
    };
    Ok((norm, grad))
}

/// Inquiry regularization loss; the gradient (student only) is added into
/// `grads` scaled by `weight`.
pub fn accumulate_uir<T: Scalar>(
    student: &Model<'_, T>,
    teacher: &Model<'_, T>,
    batch: &InquiryBatch,
    weight: T,
    grads: &mut Gradients<T>,
) -> Result<T> {
    let n = T::of(batch.len() as f64);
    let mut total = T::zero();
    for seq in batch.sequences() {
        let trace = student.forward_tokens(seq)?;
        let target = teacher.final_hidden(seq)?;
        let (norm, dh) = hidden_l2(trace.final_hidden(), &target, weight / n)?;
        total += norm;
        student.backward_sequence(&trace, None, Some(&dh), grads);
    }
    Ok(total / n)
}

/// Inquiry regularization loss and gradient with respect to the student.
pub fn uir_loss<T: Scalar>(
    cfg: &ModelConfig,
    student: &ParamSet<T>,
    teacher: &FrozenTeacher<T>,
    batch: &InquiryBatch,
) -> Result<(T, ParamSet<T>)> {
    student.check_compatible(teacher.params())?;
    let s = Model::new(cfg, student)?;
    let t = Model::new(cfg, teacher.params())?;
    let mut grads = Gradients::zeros(cfg);
    let loss = accumulate_uir(&s, &t, batch, T::one(), &mut grads)?;
    Ok((loss, grads.into_params(cfg)))
}

/// Value of the inquiry distance between two arbitrary snapshots.
pub fn hidden_shift<T: Scalar>(a: &Model<'_, T>, b: &Model<'_, T>, batch: &InquiryBatch) -> Result<T> {
    let mut total = T::zero();
    for seq in batch.sequences() {
        let ha = a.final_hidden(seq)?;
        let hb = b.final_hidden(seq)?;
        total += hidden_l2(&ha, &hb, T::one())?.0;
    }
    Ok(total / T::of(batch.len() as f64))
}

/// Breakdown of the stage objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue<T> {
    pub total: T,
    pub task: T,
    pub inquiry: T,
}

/// `L = L_task + L_inquiry` with unit weights and the summed gradient.
pub fn total_objective<T: Scalar>(
    cfg: &ModelConfig,
    student: &ParamSet<T>,
    teacher: &FrozenTeacher<T>,
    task_batch: &Batch,
    inquiry_batch: &InquiryBatch,
) -> Result<(ObjectiveValue<T>, ParamSet<T>)> {
    total_objective_weighted(cfg, student, teacher, task_batch, inquiry_batch, T::one())
}

/// As [`total_objective`] with an explicit inquiry weight; weight zero
/// recovers plain instruction tuning.
pub fn total_objective_weighted<T: Scalar>(
    cfg: &ModelConfig,
    student: &ParamSet<T>,
    teacher: &FrozenTeacher<T>,
    task_batch: &Batch,
    inquiry_batch: &InquiryBatch,
    inquiry_weight: T,
) -> Result<(ObjectiveValue<T>, ParamSet<T>)> {
    student.check_compatible(teacher.params())?;
    let s = Model::new(cfg, student)?;
    let t = Model::new(cfg, teacher.params())?;
    let mut grads = Gradients::zeros(cfg);
    let task = nn::accumulate_ce(&s, task_batch, T::one(), &mut grads)?;
    let inquiry = if inquiry_weight == T::zero() {
        T::zero()
    } else {
        accumulate_uir(&s, &t, inquiry_batch, inquiry_weight, &mut grads)?
    };
    Ok((ObjectiveValue { total: task + inquiry_weight * inquiry, task, inquiry }, grads.into_params(cfg)))
}

/// Forward KL(teacher ‖ student) between per-position softmax distributions,
/// averaged over all positions; gradient is added into `grads`.
pub fn accumulate_fkl<T: Scalar>(
    student: &Model<'_, T>,
    teacher: &Model<'_, T>,
    batch: &InquiryBatch,
    weight: T,
    grads: &mut Gradients<T>,
) -> Result<T> {
    let v = student.config().vocab_size;
    let positions: usize = batch.sequences().iter().map(Vec::len).sum();
    let scale = weight / T::of(positions as f64);
    let mut total = T::zero();
    for seq in batch.sequences() {
        let trace = student.forward_tokens(seq)?;
        let t_trace = teacher.forward_tokens(seq)?;
        let mut dlogits = vec![T::zero(); trace.logits().len()];
        for t in 0..seq.len() {
            let s_row = &trace.logits()[t * v..(t + 1) * v];
            let t_row = &t_trace.logits()[t * v..(t + 1) * v];
            total += kl_from_logits(t_row, s_row);
            let q = nn::softmax(s_row);
            let p = nn::softmax(t_row);
            for ((d, &qi), &pi) in dlogits[t * v..(t + 1) * v].iter_mut().zip(&q).zip(&p) {
                *d = (qi - pi) * scale;
            }
        }
        student.backward_sequence(&trace, Some(&dlogits), None, grads);
    }
    Ok(total / T::of(positions as f64))
}

/// `KL(softmax(p_logits) ‖ softmax(q_logits))`.
pub fn kl_from_logits<T: Scalar>(p_logits: &[T], q_logits: &[T]) -> T {
    let lp = nn::log_sum_exp(p_logits);
    let lq = nn::log_sum_exp(q_logits);
    let mut kl = T::zero();
    for (&a, &b) in p_logits.iter().zip(q_logits) {
        let log_p = a - lp;
        let log_q = b - lq;
        kl += log_p.exp() * (log_p - log_q);
    }
    kl.max(T::zero())
}

pub fn fkl_loss<T: Scalar>(
    cfg: &ModelConfig,
    student: &ParamSet<T>,
    teacher: &FrozenTeacher<T>,
    batch: &InquiryBatch,
) -> Result<(T, ParamSet<T>)> {
    student.check_compatible(teacher.params())?;
    let s = Model::new(cfg, student)?;
    let t = Model::new(cfg, teacher.params())?;
    let mut grads = Gradients::zeros(cfg);
    let loss = accumulate_fkl(&s, &t, batch, T::one(), &mut grads)?;
    Ok((loss, grads.into_params(cfg)))
}

/// `(λ/2) Σ F_j (θ_j − θ*_j)²` and its gradient `λ F ⊙ (θ − θ*)`.
pub fn ewc_penalty<T: Scalar>(
    student: &ParamSet<T>,
    anchor: &ParamSet<T>,
    fisher: &ParamSet<T>,
    lambda: f64,
) -> Result<(T, ParamSet<T>)> {
    student.check_compatible(anchor)?;
    student.check_compatible(fisher)?;
    let lam = T::of(lambda);
    let half = T::of(0.5 * lambda);
    let mut grads = student.zeros_like();
    let mut total = T::zero();
    for ((((_, s), (_, a)), (_, f)), (_, g)) in
        student.iter().zip(anchor.iter()).zip(fisher.iter()).zip(grads.iter_mut())
    {
        for (((&s, &a), &f), g) in s.data().iter().zip(a.data()).zip(f.data()).zip(g.data_mut()) {
            let d = s - a;
            total += half * f * d * d;
            *g = lam * f * d;
        }
    }
    Ok((total, grads))
}

/// Diagonal empirical Fisher: mean over examples of squared per-example
/// cross-entropy gradients.
pub fn diagonal_fisher<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    examples: &[Sequence],
) -> Result<ParamSet<T>> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let model = Model::new(cfg, params)?;
    let mut fisher = params.zeros_like();
    let inv = T::of(1.0 / examples.len() as f64);
    for seq in examples {
        let mut grads = Gradients::zeros(cfg);
        nn::accumulate_ce(&model, &Batch::new(vec![seq.clone()]), T::one(), &mut grads)?;
        let g = grads.into_params(cfg);
        for ((_, f), (_, g)) in fisher.iter_mut().zip(g.iter()) {
            for (f, &g) in f.data_mut().iter_mut().zip(g.data()) {
                *f += g * g * inv;
            }
        }
    }
    Ok(fisher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Tensor;

    #[test]
    fn hidden_difference_three_four_five() {
        let (norm, grad) = hidden_l2(&[3.0f64, 4.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(norm, 5.0);
        assert_eq!(grad, vec![0.6, 0.8]);
        let (norm, grad) = hidden_l2(&[1.0f64, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(norm, 0.0);
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn uir_zero_for_identical_models() {
        let cfg = ModelConfig::micro();
        let p = nn::init_params::<f64>(&cfg).unwrap();
        let batch = InquiryBatch::new(vec![vec![0, 3, 4, 1], vec![0, 7]]).unwrap();
        let (loss, grads) = uir_loss(&cfg, &p, &FrozenTeacher::new(p.clone()), &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|(_, t)| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn fkl_zero_for_identical_models() {
        let cfg = ModelConfig::micro();
        let p = nn::init_params::<f64>(&cfg).unwrap();
        let batch = InquiryBatch::new(vec![vec![0, 3, 4, 1]]).unwrap();
        let (loss, _) = fkl_loss(&cfg, &p, &FrozenTeacher::new(p.clone()), &batch).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn kl_against_uniform() {
        // teacher nearly one-hot, student uniform, |C| = 4
        let teacher = [5.0f64, 0.0, 0.0, 0.0];
        let student = [0.0f64; 4];
        let p: Vec<f64> = {
            let z: f64 = teacher.iter().map(|x| x.exp()).sum();
            teacher.iter().map(|x| x.exp() / z).collect()
        };
        let entropy: f64 = -p.iter().map(|&x| x * x.ln()).sum::<f64>();
        let kl = kl_from_logits(&teacher, &student);
        assert!((kl - (4f64.ln() - entropy)).abs() < 1e-12);
    }

    #[test]
    fn ewc_arithmetic() {
        let mut s = ParamSet::<f64>::new();
        s.insert("w", Tensor::scalar(3.0));
        let mut a = ParamSet::new();
        a.insert("w", Tensor::scalar(1.0));
        let mut f = ParamSet::new();
        f.insert("w", Tensor::scalar(1.0));
        let (pen, g) = ewc_penalty(&s, &a, &f, 1.0).unwrap();
        assert_eq!(pen, 2.0);
        assert_eq!(g.get("w").unwrap().data(), &[2.0]);
        assert_eq!(ewc_penalty(&s, &s, &f, 1.0).unwrap().0, 0.0);

        let mut bad = ParamSet::new();
        bad.insert("v", Tensor::scalar(1.0));
        assert!(ewc_penalty(&s, &bad, &f, 1.0).is_err());
    }

    #[test]
    fn empty_inquiry_rejected() {
        assert!(InquiryBatch::new(vec![]).is_err());
        assert!(InquiryBatch::new(vec![vec![]]).is_err());
    }
}
