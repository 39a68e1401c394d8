//! Model mixing and spectral-aware consolidation of parameter updates.
//!
//! Plain mixing scales the whole update `Δ = new − old` by `α`. Seen through
//! the SVD of `Δ`, that scales every singular value by the same `α`.
//! Spectral-aware consolidation (SAC) instead replaces the spectrum with a
//! sliding-window aggregate of itself: dominant directions are damped to
//! roughly `α σ₁` while the small-σ tail is kept almost intact. The window
//! size `k` is picked so that the first aggregate lands as close as possible
//! to `α σ₁`, so no hyperparameter beyond `α` is introduced.
//!
//! Windows that run past the end of the spectrum are padded with the last
//! singular value `σ_r` by default, or cut at `σ_r` under
//! [`WindowEdge::Truncate`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dematricize, matricize, reconstruct, svd};
use crate::params::{ParamSet, Scalar, Tensor};

/// Mixing ratio used when none is configured.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Divisor used for the sliding-window aggregate of `k + 1` singular values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanConvention {
    /// Divide by the number of terms, `k + 1`. A true mean: `g[i] ≤ σ_i`.
    #[default]
    WindowMean,
    /// Divide by `k`, as the window formula is commonly typeset.
    PaperLiteral,
}

impl MeanConvention {
    fn divisor(self, k: usize) -> f64 {
        match self {
            MeanConvention::WindowMean => (k + 1) as f64,
            MeanConvention::PaperLiteral => k as f64,
        }
    }
}

impl std::str::FromStr for MeanConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window-mean" => Ok(Self::WindowMean),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::Config(format!("unknown mean convention `{other}`"))),
        }
    }
}

/// What a window does when it runs past `σ_r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowEdge {
    /// Missing terms are filled with `σ_r`; every window has `k + 1` terms.
    #[default]
    PadLast,
    /// The window stops at `σ_r`. Under the window-mean convention the
    /// divisor is the number of terms present.
    Truncate,
}

impl std::str::FromStr for WindowEdge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pad-last" => Ok(Self::PadLast),
            "truncate" => Ok(Self::Truncate),
            other => Err(Error::Config(format!("unknown window edge `{other}`"))),
        }
    }
}

/// How ties in the window-size objective are resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    SmallestK,
}

/// Treatment of 0-D and 1-D tensors, which have no useful spectrum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorPolicy {
    #[default]
    ScalarMix,
}

/// Number of singular values kept per matricized tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    /// `r = min(M, N)`, zero singular values included.
    #[default]
    FullSpectrum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub alpha: f64,
    pub mean_convention: MeanConvention,
    pub window_edge: WindowEdge,
    pub tie_break: TieBreak,
    pub vector_policy: VectorPolicy,
    pub rank_policy: RankPolicy,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mean_convention: MeanConvention::default(),
            window_edge: WindowEdge::default(),
            tie_break: TieBreak::default(),
            vector_policy: VectorPolicy::default(),
            rank_policy: RankPolicy::default(),
        }
    }
}

impl MixConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_spectrum(sigma: &[f64]) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    for (i, &s) in sigma.iter().enumerate() {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::invalid(format!("sigma[{i}] = {s} is not a finite nonnegative value")));
        }
    }
    if let Some(i) = sigma.windows(2).position(|w| w[0] < w[1]) {
        return Err(Error::invalid(format!("spectrum increases at index {i}: {} < {}", sigma[i], sigma[i + 1])));
    }
    Ok(())
}

/// Aggregate of `σ_start ..= σ_{start+k}` (0-based).
fn window_value(sigma: &[f64], start: usize, k: usize, convention: MeanConvention, edge: WindowEdge) -> f64 {
    // shifted by the first entry so a constant window aggregates exactly
    let last = sigma[sigma.len() - 1];
    let first = sigma[start];
    let end = match edge {
        WindowEdge::PadLast => start + k,
        WindowEdge::Truncate => (start + k).min(sigma.len() - 1),
    };
    let terms = end - start + 1;
    let dev: f64 = (start..=end).map(|j| sigma.get(j).copied().unwrap_or(last) - first).sum();
    let div = match (edge, convention) {
        (WindowEdge::Truncate, MeanConvention::WindowMean) => terms as f64,
        _ => convention.divisor(k),
    };
    first * (terms as f64 / div) + dev / div
}

/// Window size `k ∈ {1..r}` minimizing `(w₁(k) − α σ₁)²`, where `w₁(k)` is
/// the first window aggregate. Ties go to the smallest `k`.
pub fn select_window(sigma: &[f64], alpha: f64, convention: MeanConvention) -> Result<usize> {
    select_window_with(sigma, alpha, convention, WindowEdge::PadLast)
}

pub fn select_window_with(sigma: &[f64], alpha: f64, convention: MeanConvention, edge: WindowEdge) -> Result<usize> {
    check_spectrum(sigma)?;
    check_alpha(alpha)?;
    let target = alpha * sigma[0];
    let mut best = (1, f64::INFINITY);
    for k in 1..=sigma.len() {
        let err = window_value(sigma, 0, k, convention, edge) - target;
        let obj = err * err;
        if obj < best.1 {
            best = (k, obj);
        }
    }
    Ok(best.0)
}

/// Sliding-window rescaling `g[i] = aggregate(σ_i ..= σ_{i+k})`.
pub fn spectral_scale(sigma: &[f64], k: usize, convention: MeanConvention) -> Result<Vec<f64>> {
    spectral_scale_with(sigma, k, convention, WindowEdge::PadLast)
}

pub fn spectral_scale_with(sigma: &[f64], k: usize, convention: MeanConvention, edge: WindowEdge) -> Result<Vec<f64>> {
    check_spectrum(sigma)?;
    if k == 0 || k > sigma.len() {
        return Err(Error::invalid(format!("window size {k} outside 1..={}", sigma.len())));
    }
    Ok((0..sigma.len()).map(|i| window_value(sigma, i, k, convention, edge)).collect())
}

/// Per-direction effective mixing ratios `g[i] / σ_i`; `1` where `σ_i = 0`.
pub fn effective_alphas(sigma: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != g.len() {
        return Err(Error::ShapeMismatch(format!("sigma has {} values, g has {}", sigma.len(), g.len())));
    }
    Ok(sigma.iter().zip(g).map(|(&s, &gi)| if s == 0.0 { 1.0 } else { gi / s }).collect())
}

/// Elementwise `α·new + (1−α)·old`, computed in `f64`.
pub fn model_mix<T: Scalar>(old: &ParamSet<T>, new: &ParamSet<T>, alpha: f64) -> Result<ParamSet<T>> {
    check_alpha(alpha)?;
    old.check_compatible(new)?;
    Ok(old
        .iter()
        .zip(new.iter())
        .map(|((name, o), (_, n))| {
            let data = o
                .data()
                .iter()
                .zip(n.data())
                .map(|(&a, &b)| T::of(alpha * b.widen() + (1.0 - alpha) * a.widen()))
                .collect();
            (name.clone(), Tensor::new(o.shape().to_vec(), data).expect("shape preserved"))
        })
        .collect())
}

/// What happened to one tensor during consolidation.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorReport {
    pub name: String,
    /// Chosen window, `None` for scalar-mixed or unchanged tensors.
    pub window: Option<usize>,
    pub sigma_max: f64,
}

/// Spectral-aware consolidation of `new` into `old`.
pub fn sac_consolidate<T: Scalar>(old: &ParamSet<T>, new: &ParamSet<T>, cfg: &MixConfig) -> Result<ParamSet<T>> {
    sac_consolidate_with_report(old, new, cfg).map(|(p, _)| p)
}

pub fn sac_consolidate_with_report<T: Scalar>(
    old: &ParamSet<T>,
    new: &ParamSet<T>,
    cfg: &MixConfig,
) -> Result<(ParamSet<T>, Vec<TensorReport>)> {
    cfg.validate()?;
    old.check_compatible(new)?;
    let pairs: Vec<(&String, &Tensor<T>, &Tensor<T>)> =
        old.iter().zip(new.iter()).map(|((name, o), (_, n))| (name, o, n)).collect();
    let results: Vec<Result<(String, Tensor<T>, TensorReport)>> = pairs
        .par_iter()
        .map(|&(name, o, n)| {
            let (t, report) = consolidate_tensor(name, o, n, cfg)?;
            Ok((name.clone(), t, report))
        })
        .collect();

    let mut out = ParamSet::new();
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        let (name, t, report) = r?;
        out.insert(name, t);
        reports.push(report);
    }
    Ok((out, reports))
}

fn consolidate_tensor<T: Scalar>(
    name: &str,
    old: &Tensor<T>,
    new: &Tensor<T>,
    cfg: &MixConfig,
) -> Result<(Tensor<T>, TensorReport)> {
    let delta: Vec<f64> = old.data().iter().zip(new.data()).map(|(&a, &b)| b.widen() - a.widen()).collect();

    if old.ndim() < 2 {
        let data = old.data().iter().zip(&delta).map(|(&a, &d)| T::of(a.widen() + cfg.alpha * d)).collect();
        let report = TensorReport { name: name.to_string(), window: None, sigma_max: 0.0 };
        return Ok((Tensor::new(old.shape().to_vec(), data)?, report));
    }

    let delta_t = Tensor::new(old.shape().to_vec(), delta)?;
    let mat = matricize(&delta_t).map_err(|e| Error::SvdFailed { name: name.into(), reason: e.to_string() })?;
    let f = svd(&mat).map_err(|e| Error::SvdFailed { name: name.into(), reason: e.to_string() })?;
    let sigma_max = f.sigma[0];
    if sigma_max == 0.0 {
        let report = TensorReport { name: name.to_string(), window: None, sigma_max };
        return Ok((old.clone(), report));
    }
    let k = select_window_with(&f.sigma, cfg.alpha, cfg.mean_convention, cfg.window_edge)?;
    let g = spectral_scale_with(&f.sigma, k, cfg.mean_convention, cfg.window_edge)?;
    let scaled = reconstruct(&f.with_sigma(g)?)?;
    let scaled: Tensor<f64> = dematricize(&scaled, old.shape())?;
    let data = old.data().iter().zip(scaled.data()).map(|(&a, &d)| T::of(a.widen() + d)).collect();
    let report = TensorReport { name: name.to_string(), window: Some(k), sigma_max };
    Ok((Tensor::new(old.shape().to_vec(), data)?, report))
}
