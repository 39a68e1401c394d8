//! Analytic gradients against central finite differences in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spcl_core::nn::{self, Batch, ModelConfig, Sequence};
use spcl_core::regularizers::{self, FrozenTeacher, InquiryBatch};
use spcl_core::{ParamSet, Tensor};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Random parameters with enough spread to exercise every nonlinearity.
fn random_params(cfg: &ModelConfig, seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cfg.param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".gain") {
                (0..n).map(|_| 1.0 + rng.random_range(-0.3..0.3)).collect()
            } else {
                (0..n).map(|_| rng.random_range(-0.4..0.4)).collect()
            };
            (name, Tensor::new(shape, data).unwrap())
        })
        .collect()
}

fn task_batch() -> Batch {
    Batch::new(vec![
        Sequence::from_prompt_response(&[0, 3, 5, 7, 1], &[9, 2]),
        Sequence::from_prompt_response(&[0, 4, 1], &[11, 12, 13, 2]),
        Sequence::from_prompt_response(&[0, 6, 6, 1], &[15, 2]),
    ])
}

fn inquiry_batch() -> InquiryBatch {
    InquiryBatch::new(vec![vec![0, 3, 5, 7, 1], vec![0, 14, 10, 1, 8, 9], vec![2, 4]]).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Max relative error over every parameter entry.
fn check(params: &ParamSet<f64>, analytic: &ParamSet<f64>, loss: impl Fn(&ParamSet<f64>) -> f64) -> (f64, String) {
    let mut worst = (0.0f64, String::new());
    for (name, t) in params {
        let g = analytic.get(name).unwrap();
        for i in 0..t.numel() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += H;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let e = rel_err(g.data()[i], numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {} numeric {numeric}", g.data()[i]));
            }
        }
    }
    worst
}

#[test]
fn cross_entropy_gradient() {
    let cfg = ModelConfig::micro();
    let p = random_params(&cfg, 1);
    let batch = task_batch();
    let (_, g) = nn::ce_loss_and_grad(&cfg, &p, &batch).unwrap();
    let (err, at) = check(&p, &g, |q| nn::ce_loss_and_grad(&cfg, q, &batch).unwrap().0);
    assert!(err <= TOL, "{err} at {at}");
}

#[test]
fn cross_entropy_gradient_two_layers() {
    let cfg = ModelConfig { n_layers: 2, n_heads: 4, ..ModelConfig::micro() };
    let p = random_params(&cfg, 2);
    let batch = task_batch();
    let (_, g) = nn::ce_loss_and_grad(&cfg, &p, &batch).unwrap();
    let (err, at) = check(&p, &g, |q| nn::ce_loss_and_grad(&cfg, q, &batch).unwrap().0);
    assert!(err <= TOL, "{err} at {at}");
}

#[test]
fn inquiry_gradient() {
    let cfg = ModelConfig::micro();
    let student = random_params(&cfg, 3);
    let teacher = FrozenTeacher::new(random_params(&cfg, 4));
    let batch = inquiry_batch();
    let (_, g) = regularizers::uir_loss(&cfg, &student, &teacher, &batch).unwrap();
    let (err, at) = check(&student, &g, |q| regularizers::uir_loss(&cfg, q, &teacher, &batch).unwrap().0);
    assert!(err <= TOL, "{err} at {at}");
    for name in ["head.weight", "head.bias"] {
        assert!(g.get(name).unwrap().data().iter().all(|&x| x == 0.0), "{name} must receive no gradient");
    }
}

#[test]
fn forward_kl_gradient() {
    let cfg = ModelConfig::micro();
    let student = random_params(&cfg, 5);
    let teacher = FrozenTeacher::new(random_params(&cfg, 6));
    let batch = inquiry_batch();
    let (_, g) = regularizers::fkl_loss(&cfg, &student, &teacher, &batch).unwrap();
    let (err, at) = check(&student, &g, |q| regularizers::fkl_loss(&cfg, q, &teacher, &batch).unwrap().0);
    assert!(err <= TOL, "{err} at {at}");
}

#[test]
fn ewc_gradient() {
    let cfg = ModelConfig::micro();
    let student = random_params(&cfg, 7);
    let anchor = random_params(&cfg, 8);
    let mut fisher = random_params(&cfg, 9);
    for (_, t) in fisher.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = x.abs());
    }
    let (_, g) = regularizers::ewc_penalty(&student, &anchor, &fisher, 3.0).unwrap();
    let (err, at) = check(&student, &g, |q| regularizers::ewc_penalty(q, &anchor, &fisher, 3.0).unwrap().0);
    assert!(err <= TOL, "{err} at {at}");
}

#[test]
fn total_objective_gradient_is_sum_of_parts() {
    let cfg = ModelConfig::micro();
    let student = random_params(&cfg, 10);
    let teacher = FrozenTeacher::new(random_params(&cfg, 11));
    let (tb, ib) = (task_batch(), inquiry_batch());
    let (value, g) = regularizers::total_objective(&cfg, &student, &teacher, &tb, &ib).unwrap();
    let (ce, g_ce) = nn::ce_loss_and_grad(&cfg, &student, &tb).unwrap();
    let (uir, g_uir) = regularizers::uir_loss(&cfg, &student, &teacher, &ib).unwrap();
    assert!((value.total - (ce + uir)).abs() <= 1e-12);
    assert_eq!(value.task, ce);
    assert_eq!(value.inquiry, uir);
    for (((_, a), (_, b)), (_, c)) in g.iter().zip(g_ce.iter()).zip(g_uir.iter()) {
        for ((&a, &b), &c) in a.data().iter().zip(b.data()).zip(c.data()) {
            assert!((a - (b + c)).abs() <= 1e-12, "{a} vs {b} + {c}");
        }
    }
    let (err, at) =
        check(&student, &g, |q| regularizers::total_objective(&cfg, q, &teacher, &tb, &ib).unwrap().0.total);
    assert!(err <= TOL, "{err} at {at}");

    // zero inquiry weight recovers plain instruction tuning
    let (v0, g0) = regularizers::total_objective_weighted(&cfg, &student, &teacher, &tb, &ib, 0.0).unwrap();
    assert_eq!(v0.total, ce);
    assert_eq!(g0, g_ce);
}
