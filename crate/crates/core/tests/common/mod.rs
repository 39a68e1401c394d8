//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spcl_core::linalg::{reconstruct, Matrix, SvdFactorization};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random matrix with a random shape in `1..=max_dim` per side. Every fifth
/// matrix is built as a product of thinner factors so that it is rank
/// deficient.
pub fn random_matrix(rng: &mut ChaCha8Rng, max_dim: usize, index: usize) -> Matrix {
    let m = rng.random_range(1..=max_dim);
    let n = rng.random_range(1..=max_dim);
    let dense = |rng: &mut ChaCha8Rng, r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    if index % 5 == 4 && m.min(n) > 1 {
        let k = rng.random_range(1..m.min(n));
        dense(rng, m, k).matmul(&dense(rng, k, n)).unwrap()
    } else {
        dense(rng, m, n)
    }
}

/// Largest absolute entry of `QᵀQ − I` over the columns of `q`.
pub fn orthonormality_residual(q: &Matrix) -> f64 {
    let g = q.transpose().matmul(q).unwrap();
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}

pub struct SvdCheck {
    pub reconstruction: f64,
    pub orthonormality: f64,
    pub sorted: bool,
}

pub fn check_svd(a: &Matrix, f: &SvdFactorization) -> SvdCheck {
    let r = a.rows().min(a.cols());
    assert_eq!((f.u.rows(), f.u.cols()), (a.rows(), r));
    assert_eq!((f.vt.rows(), f.vt.cols()), (r, a.cols()));
    assert_eq!(f.sigma.len(), r);
    let back = reconstruct(f).unwrap();
    let reconstruction =
        if a.frobenius_norm() == 0.0 { back.frobenius_norm() } else { back.rel_frobenius_error(a).unwrap() };
    let orthonormality = orthonormality_residual(&f.u).max(orthonormality_residual(&f.vt.transpose()));
    let sorted = f.sigma.windows(2).all(|w| w[0] >= w[1]) && f.sigma.iter().all(|&s| s >= 0.0);
    SvdCheck { reconstruction, orthonormality, sorted }
}
