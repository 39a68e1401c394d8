//! Window selection, spectral rescaling and tensor-level consolidation.

mod common;

use common::{random_matrix, rng};
use proptest::prelude::*;
use rand::Rng;
use spcl_core::consolidation::{
    effective_alphas, model_mix, sac_consolidate, sac_consolidate_with_report, select_window, spectral_scale,
    MeanConvention, MixConfig,
};
use spcl_core::linalg::{reconstruct, svd, Matrix};
use spcl_core::{ParamSet, Tensor};

const WM: MeanConvention = MeanConvention::WindowMean;

/// Direct window aggregate: σ_i ..= σ_{i+k}, padded with the last value,
/// divided by the number of terms.
fn naive_window(sigma: &[f64], i: usize, k: usize) -> f64 {
    let last = *sigma.last().unwrap();
    (i..=i + k).map(|j| sigma.get(j).copied().unwrap_or(last)).sum::<f64>() / (k + 1) as f64
}

/// Exhaustive search over every window size.
fn oracle(sigma: &[f64], alpha: f64) -> (usize, Vec<f64>) {
    let target = alpha * sigma[0];
    let k = (1..=sigma.len())
        .min_by(|&a, &b| {
            let ea = (naive_window(sigma, 0, a) - target).powi(2);
            let eb = (naive_window(sigma, 0, b) - target).powi(2);
            ea.total_cmp(&eb).then(a.cmp(&b))
        })
        .unwrap();
    (k, (0..sigma.len()).map(|i| naive_window(sigma, i, k)).collect())
}

fn random_spectrum(rng: &mut impl Rng) -> Vec<f64> {
    let r = rng.random_range(1..=24);
    let mut s: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..10.0)).collect();
    if rng.random_bool(0.2) {
        // repeated values and exact zeros
        for x in s.iter_mut() {
            *x = (*x / 2.5).floor();
        }
    }
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] == 0.0 {
        s[0] = 1.0;
    }
    s
}

#[test]
fn three_value_oracle() {
    let sigma = [4.0, 2.0, 1.0];
    let k = select_window(&sigma, 0.5, WM).unwrap();
    let g = spectral_scale(&sigma, k, WM).unwrap();
    let a = effective_alphas(&sigma, &g).unwrap();
    assert_eq!(k, 3);
    for (got, want) in g.iter().zip([2.0, 1.25, 1.0]) {
        assert!((got - want).abs() <= 1e-12);
    }
    for (got, want) in a.iter().zip([0.5, 0.625, 1.0]) {
        assert!((got - want).abs() <= 1e-12);
    }
    let (ko, go) = oracle(&sigma, 0.5);
    assert_eq!(ko, k);
    assert_eq!(go, g);
}

#[test]
fn two_by_two_oracle() {
    // Δ = diag(4, 2): k = 1 gives 3, k = 2 gives 8/3 against a target of 2
    let old: ParamSet<f64> =
        [("w".to_string(), Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())].into_iter().collect();
    let new: ParamSet<f64> =
        [("w".to_string(), Tensor::new(vec![2, 2], vec![5.0, 0.0, 0.0, 3.0]).unwrap())].into_iter().collect();
    let (out, report) = sac_consolidate_with_report(&old, &new, &MixConfig::with_alpha(0.5)).unwrap();
    assert_eq!(report[0].window, Some(2));
    let w = out.get("w").unwrap().data();
    let expect = [1.0 + 8.0 / 3.0, 0.0, 0.0, 1.0 + 2.0];
    for (got, want) in w.iter().zip(expect) {
        assert!((got - want).abs() <= 1e-12, "{w:?}");
    }
}

#[test]
fn uniform_scaling_is_spectral() {
    let mut rng = rng(2);
    for i in 0..100 {
        let d = random_matrix(&mut rng, 24, i);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let f = svd(&d).unwrap();
        let scaled = reconstruct(&f.with_sigma(f.sigma.iter().map(|s| alpha * s).collect()).unwrap()).unwrap();
        let direct = d.scale(alpha);
        let scale = direct.frobenius_norm().max(f64::MIN_POSITIVE);
        assert!(scaled.sub(&direct).unwrap().frobenius_norm() / scale <= 1e-8, "pair {i}");
    }
}

#[test]
fn random_spectra_properties() {
    let mut rng = rng(3);
    for n in 0..1000 {
        let sigma = random_spectrum(&mut rng);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let k = select_window(&sigma, alpha, WM).unwrap();
        let g = spectral_scale(&sigma, k, WM).unwrap();
        let (ko, go) = oracle(&sigma, alpha);
        assert_eq!(k, ko, "spectrum {n}: {sigma:?}, alpha {alpha}");
        for (x, y) in g.iter().zip(&go) {
            assert!((x - y).abs() <= 1e-12 * sigma[0]);
        }
        assert!(g.windows(2).all(|w| w[0] >= w[1]), "spectrum {n}");
        assert!(g.iter().zip(&sigma).all(|(gi, si)| *gi <= *si), "spectrum {n}");
        assert_eq!(g.last(), sigma.last());
        for a in effective_alphas(&sigma, &g).unwrap() {
            assert!((0.0..=1.0).contains(&a), "spectrum {n}: alpha_i {a}");
        }
    }
}

#[test]
fn constant_spectra_pass_through() {
    for r in 1..10 {
        let sigma = vec![3.5; r];
        for alpha in [0.0, 0.2, 0.5, 1.0] {
            let k = select_window(&sigma, alpha, WM).unwrap();
            assert_eq!(spectral_scale(&sigma, k, WM).unwrap(), sigma);
        }
    }
}

#[test]
fn scaled_identity_delta_returns_new_model() {
    let mut rng = rng(4);
    for n in [1usize, 3, 8] {
        let old: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(0.5..2.0);
        let new: Vec<f64> = old.iter().enumerate().map(|(i, x)| if i % (n + 1) == 0 { x + c } else { *x }).collect();
        let old: ParamSet<f64> = [("w".to_string(), Tensor::new(vec![n, n], old).unwrap())].into_iter().collect();
        let new: ParamSet<f64> = [("w".to_string(), Tensor::new(vec![n, n], new).unwrap())].into_iter().collect();
        let out = sac_consolidate(&old, &new, &MixConfig::with_alpha(0.3)).unwrap();
        let (o, w) = (out.get("w").unwrap().data(), new.get("w").unwrap().data());
        let num: f64 = o.iter().zip(w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = w.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den <= 1e-8, "n = {n}");
    }
}

#[test]
fn consolidation_matches_manual_pipeline() {
    let mut rng = rng(5);
    let old = Matrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
    let new = Matrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
    let alpha = 0.35;
    let f = svd(&new.sub(&old).unwrap()).unwrap();
    let (k, g) = oracle(&f.sigma, alpha);
    let expect = reconstruct(&f.with_sigma(g).unwrap()).unwrap();

    let to_set = |m: &Matrix| -> ParamSet<f64> {
        [("w".to_string(), Tensor::new(vec![6, 4], m.data().to_vec()).unwrap())].into_iter().collect()
    };
    let (out, report) =
        sac_consolidate_with_report(&to_set(&old), &to_set(&new), &MixConfig::with_alpha(alpha)).unwrap();
    assert_eq!(report[0].window, Some(k));
    let got = out.get("w").unwrap().data();
    for ((x, o), e) in got.iter().zip(old.data()).zip(expect.data()) {
        assert!((x - o - e).abs() <= 1e-12);
    }
}

fn pair() -> impl Strategy<Value = (ParamSet<f64>, ParamSet<f64>)> {
    (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(m, n, b)| {
        let mat = prop::collection::vec(-5f64..5.0, m * n);
        let vec = prop::collection::vec(-5f64..5.0, b);
        (mat.clone(), mat, vec.clone(), vec).prop_map(move |(w0, w1, b0, b1)| {
            let set = |w: Vec<f64>, v: Vec<f64>| -> ParamSet<f64> {
                [
                    ("b".to_string(), Tensor::new(vec![b], v).unwrap()),
                    ("w".to_string(), Tensor::new(vec![m, n], w).unwrap()),
                ]
                .into_iter()
                .collect()
            };
            (set(w0, b0), set(w1, b1))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn window_choice_is_an_argmin(
        sigma in prop::collection::vec(0f64..100.0, 1..16).prop_map(|mut s| {
            s.sort_by(|a, b| b.total_cmp(a));
            s[0] += 1.0;
            s
        }),
        alpha in 0f64..=1.0,
    ) {
        let k = select_window(&sigma, alpha, WM).unwrap();
        let err = |k: usize| (naive_window(&sigma, 0, k) - alpha * sigma[0]).powi(2);
        for other in 1..=sigma.len() {
            prop_assert!(err(k) <= err(other) + 1e-9 * sigma[0] * sigma[0]);
        }
    }

    #[test]
    fn endpoints_of_mixing((old, new) in pair()) {
        prop_assert_eq!(model_mix(&old, &new, 0.0).unwrap(), old.clone());
        let full = model_mix(&old, &new, 1.0).unwrap();
        for ((_, a), (_, b)) in full.iter().zip(new.iter()) {
            prop_assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn sac_preserves_shapes_and_mixes_vectors((old, new) in pair(), alpha in 0f64..=1.0) {
        let out = sac_consolidate(&old, &new, &MixConfig::with_alpha(alpha)).unwrap();
        prop_assert!(out.check_compatible(&old).is_ok());
        let (o, n, x) = (old.get("b").unwrap(), new.get("b").unwrap(), out.get("b").unwrap());
        for ((a, b), c) in o.data().iter().zip(n.data()).zip(x.data()) {
            prop_assert!((c - (a + alpha * (b - a))).abs() <= 1e-12);
        }
        // the matrix update never exceeds the raw delta in Frobenius norm
        let delta: f64 = old.get("w").unwrap().data().iter().zip(new.get("w").unwrap().data())
            .map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        let step: f64 = old.get("w").unwrap().data().iter().zip(out.get("w").unwrap().data())
            .map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        prop_assert!(step <= delta * (1.0 + 1e-10) + 1e-12);
    }
}
