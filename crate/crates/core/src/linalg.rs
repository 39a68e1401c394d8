//! Dense `f64` matrices, one-sided Jacobi SVD, and tensor reshaping.
//!
//! Consolidation runs entirely in double precision: parameter deltas are
//! widened, folded into matrices, decomposed, rescaled and narrowed again.

use crate::error::{Error, Result};
use crate::params::{Scalar, Tensor};

/// Convergence threshold on the normalized off-diagonal Gram entry
/// `|a_pq| / sqrt(a_pp a_qq)` of any column pair.
const JACOBI_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 60;

/// Row-major real matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!("matrix must be at least 1x1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, cols)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be at least 1x1");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot subtract {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F / ‖other‖_F`, or the absolute error when `other` is zero.
    pub fn rel_frobenius_error(&self, reference: &Matrix) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius_norm();
        let norm = reference.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

fn check_finite(data: &[f64], cols: usize) -> Result<()> {
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: "matrix".into(), index: format!("({}, {})", pos / cols, pos % cols) });
    }
    Ok(())
}

/// `A = U diag(sigma) Vᵀ` with `r = min(M, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactorization {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdFactorization {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Same factors with `sigma` replaced; used for spectral rescaling.
    pub fn with_sigma(&self, sigma: Vec<f64>) -> Result<SvdFactorization> {
        if sigma.len() != self.sigma.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} singular values, got {}",
                self.sigma.len(),
                sigma.len()
            )));
        }
        Ok(SvdFactorization { u: self.u.clone(), sigma, vt: self.vt.clone() })
    }
}

/// Full thin SVD by one-sided Jacobi rotations.
///
/// Singular values are sorted nonincreasing (stable on ties). Each left
/// singular vector is oriented so that its largest-magnitude entry (lowest
/// index on ties) is nonnegative, with the matching row of `vt` flipped too.
pub fn svd(a: &Matrix) -> Result<SvdFactorization> {
    check_finite(&a.data, a.cols)?;
    if a.rows >= a.cols {
        jacobi_tall(a)
    } else {
        // Aᵀ = U' Σ V'ᵀ  =>  A = V' Σ U'ᵀ
        let t = jacobi_tall(&a.transpose())?;
        let mut f = SvdFactorization { u: t.vt.transpose(), sigma: t.sigma, vt: t.u.transpose() };
        orient(&mut f);
        Ok(f)
    }
}

/// One-sided Jacobi for M ≥ N: orthogonalizes the columns of a working copy.
fn jacobi_tall(a: &Matrix) -> Result<SvdFactorization> {
    let (m, n) = (a.rows, a.cols);
    // Column-major working storage so rotations touch contiguous memory.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // columns at or below this norm are rounding noise and count as zero
    let tiny = a.frobenius_norm() * (m.max(n) as f64) * f64::EPSILON;
    let tiny_sq = tiny * tiny;
    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let (app, aqq, apq) = gram(&cols[p], &cols[q]);
                if app <= tiny_sq || aqq <= tiny_sq {
                    continue;
                }
                let off = apq.abs() / (app * aqq).sqrt();
                max_off = max_off.max(off);
                if off <= JACOBI_TOL {
                    continue;
                }
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if max_off <= JACOBI_TOL {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdFailed {
            name: format!("{m}x{n} matrix"),
            reason: format!("no convergence after {MAX_SWEEPS} sweeps"),
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (rank, &j) in order.iter().enumerate() {
        let col = if sigma[rank] > tiny && sigma[rank] > 0.0 {
            cols[j].iter().map(|x| x / sigma[rank]).collect()
        } else {
            complete_basis(&u_cols, m)
        };
        u_cols.push(col);
    }

    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    let vt = Matrix::from_fn(n, n, |k, j| v[order[k]][j]);
    let mut f = SvdFactorization { u, sigma, vt };
    orient(&mut f);
    Ok(f)
}

#[inline]
fn gram(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        xx += a * a;
        yy += b * b;
        xy += a * b;
    }
    (xx, yy, xy)
}

#[inline]
fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// A unit vector orthogonal to every vector in `basis`: the standard basis
/// vector with the largest residual after two rounds of Gram-Schmidt. With
/// fewer than `m` orthonormal vectors that residual is at least `1/sqrt(m)`.
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best = (0.0f64, Vec::new());
    for k in 0..m {
        let mut cand = vec![0.0; m];
        cand[k] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let dot: f64 = cand.iter().zip(b).map(|(x, y)| x * y).sum();
                for (c, y) in cand.iter_mut().zip(b) {
                    *c -= dot * y;
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > best.0 {
            best = (norm, cand);
        }
    }
    let (norm, cand) = best;
    debug_assert!(norm > 0.0, "fewer than m basis vectors always leave a free direction");
    cand.into_iter().map(|x| x / norm).collect()
}

fn orient(f: &mut SvdFactorization) {
    let (m, r) = (f.u.rows, f.u.cols);
    for k in 0..r {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let a = f.u.get(i, k).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if f.u.get(best, k) < 0.0 {
            for i in 0..m {
                let x = f.u.get(i, k);
                f.u.set(i, k, -x);
            }
            for j in 0..f.vt.cols {
                let x = f.vt.get(k, j);
                f.vt.set(k, j, -x);
            }
        }
    }
}

/// `u · diag(sigma) · vt`.
pub fn reconstruct(f: &SvdFactorization) -> Result<Matrix> {
    let r = f.sigma.len();
    if f.u.cols != r || f.vt.rows != r {
        return Err(Error::ShapeMismatch(format!(
            "u is {}x{}, sigma has {}, vt is {}x{}",
            f.u.rows, f.u.cols, r, f.vt.rows, f.vt.cols
        )));
    }
    let (m, n) = (f.u.rows, f.vt.cols);
    let mut out = Matrix::zeros(m, n);
    for k in 0..r {
        let s = f.sigma[k];
        if s == 0.0 {
            continue;
        }
        let vrow = &f.vt.data[k * n..(k + 1) * n];
        for i in 0..m {
            let a = f.u.get(i, k) * s;
            if a == 0.0 {
                continue;
            }
            let row = &mut out.data[i * n..(i + 1) * n];
            for (o, &b) in row.iter_mut().zip(vrow) {
                *o += a * b;
            }
        }
    }
    Ok(out)
}

/// Folds a tensor of rank ≥ 2 into `dim0 × (product of the remaining dims)`,
/// widening to `f64`. Row-major order is preserved.
pub fn matricize<T: Scalar>(t: &Tensor<T>) -> Result<Matrix> {
    if t.ndim() < 2 {
        return Err(Error::invalid(format!("cannot matricize a {}-D tensor of shape {:?}", t.ndim(), t.shape())));
    }
    let rows = t.shape()[0];
    let cols = t.shape()[1..].iter().product();
    Matrix::new(rows, cols, t.data().iter().map(|x| x.widen()).collect())
}

/// Inverse of [`matricize`]: restores `shape`, narrowing to `T`.
pub fn dematricize<T: Scalar>(m: &Matrix, shape: &[usize]) -> Result<Tensor<T>> {
    if shape.len() < 2 || shape[0] != m.rows || shape[1..].iter().product::<usize>() != m.cols {
        return Err(Error::ShapeMismatch(format!("{}x{} matrix cannot be unfolded to {shape:?}", m.rows, m.cols)));
    }
    Tensor::new(shape.to_vec(), m.data.iter().map(|&x| T::of(x)).collect())
}
