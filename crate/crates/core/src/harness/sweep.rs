use rayon::prelude::*;

use super::config::{Method, RunConfig};
use super::run::{continual_run_from, prepare_initial, RunRecord, StreamData};
use crate::error::{Error, Result};

/// Default tolerance (absolute accuracy) for the stable-region boundaries.
pub const DEFAULT_BOUNDARY_TOL: f64 = 0.02;

/// Methods swept over alpha.
pub const SWEEP_METHODS: [Method; 3] = [Method::ModelMix, Method::Sac, Method::SacUir];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub method: Method,
    pub task_acc: f64,
    pub gen_acc: f64,
}

/// Stable-region edges for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundaries {
    pub method: Method,
    /// Largest grid alpha up to which general accuracy stays within the
    /// tolerance of its value at the smallest alpha.
    pub general_stable: f64,
    /// Smallest grid alpha from which task accuracy stays within the
    /// tolerance of its value at the largest alpha.
    pub task_stable: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Ordered by method (as requested) then by alpha ascending.
    pub points: Vec<SweepPoint>,
    pub boundaries: Vec<Boundaries>,
    pub records: Vec<RunRecord>,
}

/// One continual run per (method, alpha), all sharing data and starting
/// weights. Runs execute on up to `jobs` threads; results are ordered
/// independently of scheduling.
pub fn alpha_sweep(cfg: &RunConfig, alphas: &[f64], methods: &[Method], tol: f64, jobs: usize) -> Result<SweepResult> {
    if alphas.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods to sweep".into()));
    }
    if let Some(m) = methods.iter().find(|m| !m.uses_alpha()) {
        return Err(Error::Config(format!("method `{m}` has no mixing ratio to sweep")));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::Config(format!("boundary tolerance must be nonnegative, got {tol}")));
    }
    let mut grid = alphas.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let data = StreamData::generate(cfg)?;
    let initial = prepare_initial(cfg, &data)?;
    let jobs_list: Vec<RunConfig> = methods
        .iter()
        .flat_map(|&method| {
            grid.iter().map(move |&alpha| {
                let mut c = cfg.clone();
                c.method = method;
                c.mix.alpha = alpha;
                c.run_id = None;
                c
            })
        })
        .collect();
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::Config(e.to_string()))?;
    let records: Vec<RunRecord> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|c| continual_run_from(c, &data, &initial, &mut |_| Ok(())))
            .collect::<Result<Vec<_>>>()
    })?;

    let points: Vec<SweepPoint> = records
        .iter()
        .zip(&jobs_list)
        .map(|(r, c)| SweepPoint {
            alpha: c.mix.alpha,
            method: c.method,
            task_acc: r.final_task_acc(),
            gen_acc: r.final_gen_acc(),
        })
        .collect();
    let boundaries = methods
        .iter()
        .map(|&m| {
            let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.method == m).collect();
            boundaries(m, &pts, tol)
        })
        .collect();
    Ok(SweepResult { points, boundaries, records })
}

/// Boundary search over points sorted by alpha.
pub fn boundaries(method: Method, points: &[&SweepPoint], tol: f64) -> Boundaries {
    let first = points[0];
    let last = points[points.len() - 1];
    let mut general_stable = first.alpha;
    for p in points {
        if p.gen_acc < first.gen_acc - tol {
            break;
        }
        general_stable = p.alpha;
    }
    let mut task_stable = last.alpha;
    for p in points.iter().rev() {
        if p.task_acc < last.task_acc - tol {
            break;
        }
        task_stable = p.alpha;
    }
    Boundaries { method, general_stable, task_stable }
}
