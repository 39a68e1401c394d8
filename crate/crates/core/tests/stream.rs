//! Orderings on the default stream, as means over five seeds.

use std::sync::OnceLock;

use spcl_core::harness::{
    alpha_sweep, continual_run_from, evaluate, forgetting, prepare_initial, Method, RunConfig, RunRecord, StreamData,
};
use spcl_core::ParamSet;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Setup {
    cfg: RunConfig,
    data: StreamData,
    initial: ParamSet<f32>,
}

fn setups() -> &'static [Setup] {
    static S: OnceLock<Vec<Setup>> = OnceLock::new();
    S.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = RunConfig { seed, ..RunConfig::default() };
                let data = StreamData::generate(&cfg).unwrap();
                let initial = prepare_initial(&cfg, &data).unwrap();
                Setup { cfg, data, initial }
            })
            .collect()
    })
}

fn run(s: &Setup, method: Method, alpha: f64) -> RunRecord {
    let mut cfg = RunConfig { method, ..s.cfg.clone() };
    cfg.mix.alpha = alpha;
    continual_run_from(&cfg, &s.data, &s.initial, &mut |_| Ok(())).unwrap()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn sac_task_accuracy_at_least_model_mix() {
    for alpha in [0.2, 0.5] {
        let sac = mean(setups().iter().map(|s| run(s, Method::Sac, alpha).final_task_acc()));
        let mix = mean(setups().iter().map(|s| run(s, Method::ModelMix, alpha).final_task_acc()));
        println!("alpha {alpha}: sac {sac:.4}, modelmix {mix:.4}");
        assert!(sac >= mix, "alpha {alpha}: sac {sac} < modelmix {mix}");
    }
}

#[test]
fn inquiry_consolidation_keeps_general_accuracy_at_every_stage() {
    let ours: Vec<RunRecord> = setups().iter().map(|s| run(s, Method::SacUir, s.cfg.mix.alpha)).collect();
    let vanilla: Vec<RunRecord> = setups().iter().map(|s| run(s, Method::Vanilla, 0.0)).collect();
    let stages = ours[0].stages().len();
    for t in 0..stages {
        let a = mean(ours.iter().map(|r| r.stages()[t].gen_acc));
        let b = mean(vanilla.iter().map(|r| r.stages()[t].gen_acc));
        assert!(a >= b, "stage {t}: sac+uir {a} < vanilla {b}");
    }
    for r in ours.iter().chain(&vanilla) {
        let eps = forgetting(r);
        assert_eq!(eps.len(), stages - 2);
        assert!(eps.iter().all(|&e| e >= 0.0));
    }
}

#[test]
fn single_token_task_degrades_phrase_answers() {
    let s = &setups()[0];
    let phrase: Vec<_> = s
        .data
        .base
        .iter()
        .filter(|t| t.spec.response_format == spcl_core::tasks::ResponseFormat::Phrase)
        .flat_map(|t| t.test.iter().cloned())
        .collect();
    assert!(!phrase.is_empty());
    let mut cfg = RunConfig { method: Method::Vanilla, ..s.cfg.clone() };
    cfg.stream.tasks.retain(|t| t.response_format == spcl_core::tasks::ResponseFormat::SingleToken);
    assert!(!cfg.stream.tasks.is_empty());
    let data = StreamData::generate(&cfg).unwrap();
    let record = continual_run_from(&cfg, &data, &s.initial, &mut |_| Ok(())).unwrap();
    let (_, before) = evaluate(&cfg, &s.initial, &phrase).unwrap();
    let (_, after) = evaluate(&cfg, &record.final_params, &phrase).unwrap();
    assert!(after < before, "phrase accuracy {before} -> {after}");
}

#[test]
fn sweep_endpoints_are_trivial() {
    let s = &setups()[0];
    let sweep = alpha_sweep(&s.cfg, &[0.0, 1.0], &[Method::ModelMix], 0.02, 1).unwrap();
    let (zero, one) = (&sweep.records[0], &sweep.records[1]);
    assert_eq!(zero.final_params, s.initial);
    assert_eq!(zero.final_gen_acc(), zero.initial_gen_acc());
    assert_eq!(zero.final_lang_shift(), 0.0);
    let vanilla = run(s, Method::Vanilla, 0.0);
    assert_eq!(one.final_params, vanilla.final_params);
    assert_eq!(one.stages(), vanilla.stages());
}
