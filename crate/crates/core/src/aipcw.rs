//! Cross-fitted augmented IPCW estimation of the Cox log hazard ratio of a
//! binary group indicator.
//!
//! All stochastic integrals are evaluated on a [`TimeGrid`]. Nuisance
//! curves enter through their right-continuous values `S(t_g+)` on the
//! grid; the left limit at `t_g` is the value after `t_{g-1}` (and 1 at the
//! first grid point). With these conventions the censoring martingale
//! identity
//!
//! ```text
//! sum_{u <= t} dM_c(u) / S_c(u+) = 1 - I(X > t) / S_c(t+) - N(t) / S_c(X-)
//! ```
//!
//! holds exactly for every subject, where
//! `dLambda_c(u) = (S_c(u-) - S_c(u+)) / S_c(u-)` and the censoring at-risk
//! indicator drops a subject at its own failure time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::{cross_fit, CrossFitBundle, NuisanceSpec};
use crate::rng;
use crate::solver::{self, Root};

/// Ordered distinct times carrying all mass of the estimating equations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Union of observed times, `extra` jump times within `[0, tau]`, and `tau`.
    pub fn new(data: &Dataset, extra: &[f64]) -> Self {
        let tau = data.tau();
        let mut times: Vec<f64> = data
            .iter()
            .map(|o| o.time)
            .chain(extra.iter().copied().filter(|&t| t >= 0.0 && t <= tau))
            .chain(std::iter::once(tau))
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self { times }
    }

    pub fn for_bundle(data: &Dataset, bundle: &CrossFitBundle) -> Self {
        Self::new(data, &bundle.jump_times())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Position of `t` on the grid, if it is a grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|s| s.total_cmp(&t)).ok()
    }
}

/// Per-subject quantities entering the estimating equation: the augmented
/// event increments `dN/S_c(t-) - J(t-) dS(t)` and the risk factor
/// `Y/S_c(t-) + J(t-) S(t-)`, both on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProcesses {
    pub group: bool,
    pub event: bool,
    pub exit_index: usize,
    pub d_aug: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `S_c(X-)`, the censoring survival used to weight the exit time.
    pub censoring_at_exit: f64,
    /// Grid values of either curve sitting at the trim floor.
    pub trimmed: usize,
}

impl SubjectProcesses {
    pub fn a(&self) -> f64 {
        if self.group {
            1.0
        } else {
            0.0
        }
    }
}

/// Every intermediate process of one subject, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessTrace {
    pub at_risk: Vec<f64>,
    pub censoring_at_risk: Vec<f64>,
    pub d_n: Vec<f64>,
    pub d_nc: Vec<f64>,
    pub d_lambda_c: Vec<f64>,
    pub d_mc: Vec<f64>,
    pub d_s: Vec<f64>,
    /// Running integral through `t_g` inclusive.
    pub j: Vec<f64>,
    pub d_aug: Vec<f64>,
    pub gamma: Vec<f64>,
}

fn left(values: &[f64], g: usize) -> f64 {
    if g == 0 {
        1.0
    } else {
        values[g - 1]
    }
}

/// Full process trace of a subject with exit grid index `exit_index`,
/// given right-continuous grid values of `S` and `S_c`.
pub fn trace_subject(event: bool, exit_index: usize, s_after: &[f64], c_after: &[f64]) -> ProcessTrace {
    let n = s_after.len();
    let mut t = ProcessTrace {
        at_risk: vec![0.0; n],
        censoring_at_risk: vec![0.0; n],
        d_n: vec![0.0; n],
        d_nc: vec![0.0; n],
        d_lambda_c: vec![0.0; n],
        d_mc: vec![0.0; n],
        d_s: vec![0.0; n],
        j: vec![0.0; n],
        d_aug: vec![0.0; n],
        gamma: vec![0.0; n],
    };
    let k = exit_index;
    for g in 0..n {
        let (c_left, s_left) = (left(c_after, g), left(s_after, g));
        let j_left = if g == 0 { 0.0 } else { t.j[g - 1] };
        t.at_risk[g] = if g <= k { 1.0 } else { 0.0 };
        t.censoring_at_risk[g] = if g < k || (g == k && !event) { 1.0 } else { 0.0 };
        t.d_n[g] = if g == k && event { 1.0 } else { 0.0 };
        t.d_nc[g] = if g == k && !event { 1.0 } else { 0.0 };
        t.d_lambda_c[g] = (c_left - c_after[g]) / c_left;
        t.d_mc[g] = t.d_nc[g] - t.censoring_at_risk[g] * t.d_lambda_c[g];
        t.d_s[g] = s_after[g] - s_left;
        t.j[g] = j_left + t.d_mc[g] / (s_after[g] * c_after[g]);
        t.d_aug[g] = t.d_n[g] / c_left - j_left * t.d_s[g];
        t.gamma[g] = t.at_risk[g] / c_left + j_left * s_left;
    }
    t
}

fn subject_processes(o: &Observation, exit_index: usize, s_after: &[f64], c_after: &[f64], floor: (f64, f64)) -> SubjectProcesses {
    let n = s_after.len();
    let k = exit_index;
    let mut d_aug = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut j = 0.0;
    for g in 0..n {
        let (c_left, s_left) = (left(c_after, g), left(s_after, g));
        let dn = if g == k && o.event { 1.0 / c_left } else { 0.0 };
        d_aug[g] = dn - j * (s_after[g] - s_left);
        gamma[g] = if g <= k { 1.0 / c_left } else { 0.0 } + j * s_left;
        if g < k {
            j -= (c_left - c_after[g]) / c_left / (s_after[g] * c_after[g]);
        } else if g == k && !o.event {
            // censoring jump net of its own drift
            j += c_after[g] / c_left / (s_after[g] * c_after[g]);
        }
    }
    let trimmed = s_after.iter().filter(|&&s| s <= floor.0).count() + c_after.iter().filter(|&&c| c <= floor.1).count();
    SubjectProcesses {
        group: o.group,
        event: o.event,
        exit_index,
        d_aug,
        gamma,
        censoring_at_exit: left(c_after, k),
        trimmed,
    }
}

/// Per-subject processes with each subject's nuisances taken from its own
/// fold's out-of-fold models.
pub fn build_processes(data: &Dataset, bundle: &CrossFitBundle, grid: &TimeGrid) -> Result<Vec<SubjectProcesses>> {
    if bundle.len() != data.len() {
        return Err(Error::Invalid(format!(
            "nuisance bundle covers {} subjects but the dataset has {}",
            bundle.len(),
            data.len()
        )));
    }
    let mut out: Vec<Option<SubjectProcesses>> = vec![None; data.len()];
    for (m, pair) in bundle.models().iter().enumerate() {
        let members = bundle.fold_members(m);
        let subjects: Vec<&Observation> = members.iter().map(|&i| data.get(i)).collect();
        let s_rows = pair.failure.survival_on_grid(&subjects, grid.times())?;
        let c_rows = pair.censoring.survival_on_grid(&subjects, grid.times())?;
        let floor = (pair.failure.trim_floor(), pair.censoring.trim_floor());
        for ((&i, s), c) in members.iter().zip(&s_rows).zip(&c_rows) {
            let o = data.get(i);
            let k = grid
                .index_of(o.time)
                .ok_or_else(|| Error::Invalid(format!("subject {i}: time {} is not on the grid", o.time)))?;
            out[i] = Some(subject_processes(o, k, s, c, floor));
        }
    }
    Ok(out.into_iter().map(|p| p.expect("folds partition the subjects")).collect())
}

/// Group-wise sums over subjects that do not depend on `beta`.
#[derive(Debug, Clone)]
struct GroupSums {
    n: f64,
    gamma0: Vec<f64>,
    gamma1: Vec<f64>,
    d_all: Vec<f64>,
    d_treated: Vec<f64>,
}

impl GroupSums {
    fn new(processes: &[SubjectProcesses], grid_len: usize) -> Result<Self> {
        let mut s = GroupSums {
            n: processes.len() as f64,
            gamma0: vec![0.0; grid_len],
            gamma1: vec![0.0; grid_len],
            d_all: vec![0.0; grid_len],
            d_treated: vec![0.0; grid_len],
        };
        for p in processes {
            if p.gamma.len() != grid_len || p.d_aug.len() != grid_len {
                return Err(Error::DimensionMismatch {
                    expected: grid_len,
                    found: p.gamma.len(),
                });
            }
            let gamma = if p.group { &mut s.gamma1 } else { &mut s.gamma0 };
            for (acc, v) in gamma.iter_mut().zip(&p.gamma) {
                *acc += v;
            }
            for (acc, v) in s.d_all.iter_mut().zip(&p.d_aug) {
                *acc += v;
            }
            if p.group {
                for (acc, v) in s.d_treated.iter_mut().zip(&p.d_aug) {
                    *acc += v;
                }
            }
        }
        Ok(s)
    }

    fn aggregates(&self, beta: f64, grid: &TimeGrid) -> Result<RiskAggregates> {
        let eb = beta.exp();
        let len = self.gamma0.len();
        let mut r = RiskAggregates {
            s0: Vec::with_capacity(len),
            s1: Vec::with_capacity(len),
            a_bar: Vec::with_capacity(len),
            v: Vec::with_capacity(len),
        };
        for g in 0..len {
            let s1 = eb * self.gamma1[g] / self.n;
            let s0 = self.gamma0[g] / self.n + s1;
            let a_bar = if s0 != 0.0 {
                s1 / s0
            } else if self.d_all[g] != 0.0 || self.d_treated[g] != 0.0 {
                return Err(Error::ZeroRiskSet { time: grid.times()[g] });
            } else {
                0.0
            };
            r.s0.push(s0);
            r.s1.push(s1);
            r.a_bar.push(a_bar);
            r.v.push(a_bar - a_bar * a_bar);
        }
        Ok(r)
    }

    fn score(&self, agg: &RiskAggregates) -> f64 {
        let total: f64 = (0..agg.a_bar.len())
            .map(|g| self.d_treated[g] - agg.a_bar[g] * self.d_all[g])
            .sum();
        total / self.n
    }

    fn derivative(&self, agg: &RiskAggregates) -> f64 {
        -agg.v.iter().zip(&self.d_all).map(|(v, d)| v * d).sum::<f64>() / self.n
    }
}

/// Weighted risk-set averages on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskAggregates {
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn risk_aggregates(beta: f64, processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<RiskAggregates> {
    GroupSums::new(processes, grid.len())?.aggregates(beta, grid)
}

/// `(1/n) sum_i sum_g dN_aug_i(t_g) (A_i - Abar(beta, t_g))`.
pub fn aipcw_score(beta: f64, processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<f64> {
    let sums = GroupSums::new(processes, grid.len())?;
    Ok(sums.score(&sums.aggregates(beta, grid)?))
}

pub fn aipcw_score_derivative(beta: f64, processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<f64> {
    let sums = GroupSums::new(processes, grid.len())?;
    Ok(sums.derivative(&sums.aggregates(beta, grid)?))
}

fn baseline_increments(sums: &GroupSums, agg: &RiskAggregates) -> Vec<f64> {
    sums.d_all
        .iter()
        .zip(&agg.s0)
        .map(|(d, s0)| if *d == 0.0 { 0.0 } else { d / sums.n / s0 })
        .collect()
}

/// Cumulative baseline hazard solving the baseline estimating equation at
/// `beta`. Increments may be negative.
pub fn aipcw_baseline(beta: f64, processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<StepCurve> {
    let sums = GroupSums::new(processes, grid.len())?;
    let agg = sums.aggregates(beta, grid)?;
    baseline_curve(grid, &baseline_increments(&sums, &agg))
}

fn baseline_curve(grid: &TimeGrid, increments: &[f64]) -> Result<StepCurve> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    for (&t, &d) in grid.times().iter().zip(increments) {
        if d != 0.0 {
            h += d;
            times.push(t);
            values.push(h);
        }
    }
    StepCurve::new(times, values, 0.0)
}

fn variance_parts(beta: f64, processes: &[SubjectProcesses], sums: &GroupSums, agg: &RiskAggregates) -> Result<(f64, Vec<f64>)> {
    let nu = -sums.derivative(agg);
    let d_lambda = baseline_increments(sums, agg);
    let eb = beta.exp();
    let psi = processes
        .iter()
        .map(|p| {
            let (a, risk) = if p.group { (1.0, eb) } else { (0.0, 1.0) };
            (0..p.d_aug.len())
                .map(|g| (a - agg.a_bar[g]) * (p.d_aug[g] - risk * p.gamma[g] * d_lambda[g]))
                .sum()
        })
        .collect();
    if !(nu > 0.0) {
        return Err(Error::NonPositive {
            what: "score slope (1/n) sum V dN_aug",
            value: nu,
        });
    }
    Ok((nu, psi))
}

/// Per-subject influence terms at `beta`; they sum to `n U(beta)`.
pub fn influence_terms(beta: f64, processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<Vec<f64>> {
    let sums = GroupSums::new(processes, grid.len())?;
    let agg = sums.aggregates(beta, grid)?;
    Ok(variance_parts(beta, processes, &sums, &agg)?.1)
}

/// Sandwich standard error `sqrt(K / (n nu^2))` with
/// `nu = (1/n) sum V dN_aug` and `K = (1/n) sum psi_i^2`.
pub fn aipcw_variance(beta: f64, processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<f64> {
    let sums = GroupSums::new(processes, grid.len())?;
    let agg = sums.aggregates(beta, grid)?;
    let (nu, psi) = variance_parts(beta, processes, &sums, &agg)?;
    let n = sums.n;
    let k = psi.iter().map(|x| x * x).sum::<f64>() / n;
    Ok((k / (n * nu * nu)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipcwDiagnostics {
    /// Smallest `S_c(X-)` among failures.
    pub min_censoring_survival_at_events: f64,
    /// Share of grid predictions sitting at the trim floor.
    pub trimmed_share: f64,
    /// Number of negative baseline increments.
    pub baseline_decreasing_steps: usize,
    pub bisected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AipcwFit {
    pub beta_hat: f64,
    pub se: f64,
    pub baseline: StepCurve,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: AipcwDiagnostics,
}

/// Solves the estimating equation with the given nuisance bundle and
/// computes the baseline hazard and sandwich standard error at the root.
pub fn solve_aipcw(data: &Dataset, bundle: &CrossFitBundle) -> Result<AipcwFit> {
    let grid = TimeGrid::for_bundle(data, bundle);
    let processes = build_processes(data, bundle, &grid)?;
    solve_processes(&processes, &grid)
}

/// [`solve_aipcw`] on prebuilt processes.
pub fn solve_processes(processes: &[SubjectProcesses], grid: &TimeGrid) -> Result<AipcwFit> {
    if !processes.iter().any(|p| p.group) || processes.iter().all(|p| p.group) {
        return Err(Error::Invalid("both groups must be present".into()));
    }
    let sums = GroupSums::new(processes, grid.len())?;
    let Root {
        beta,
        iterations,
        bisected,
    } = solver::find_root("aipcw", |b| {
        let agg = sums.aggregates(b, grid)?;
        Ok((sums.score(&agg), sums.derivative(&agg)))
    })?;
    let agg = sums.aggregates(beta, grid)?;
    let baseline = baseline_curve(grid, &baseline_increments(&sums, &agg))?;
    let (nu, psi) = variance_parts(beta, processes, &sums, &agg)?;
    let n = sums.n;
    let k = psi.iter().map(|x| x * x).sum::<f64>() / n;
    let se = (k / (n * nu * nu)).sqrt();

    let total_values = processes.iter().map(|p| 2 * p.d_aug.len()).sum::<usize>().max(1);
    let diagnostics = AipcwDiagnostics {
        min_censoring_survival_at_events: processes
            .iter()
            .filter(|p| p.event)
            .map(|p| p.censoring_at_exit)
            .fold(f64::INFINITY, f64::min),
        trimmed_share: processes.iter().map(|p| p.trimmed).sum::<usize>() as f64 / total_values as f64,
        baseline_decreasing_steps: baseline.decreasing_steps(),
        bisected,
    };
    Ok(AipcwFit {
        beta_hat: beta,
        se,
        baseline,
        iterations,
        converged: true,
        diagnostics,
    })
}

/// Nonparametric bootstrap standard error: subjects are resampled with
/// replacement and folds and nuisances are refitted on each resample.
pub fn bootstrap_se(
    data: &Dataset,
    spec_s: &NuisanceSpec,
    spec_c: &NuisanceSpec,
    folds: usize,
    trim_floor: f64,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if resamples < 50 {
        return Err(Error::Invalid(format!("bootstrap needs at least 50 resamples, got {resamples}")));
    }
    let n = data.len();
    let mut estimates = Vec::with_capacity(resamples);
    let mut failed = 0;
    for b in 0..resamples {
        let mut r = rng::stream(seed, &[rng::BOOTSTRAP, b as u64]);
        let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let fit = data.subset(&idx).and_then(|d| {
            let bundle = cross_fit(&d, folds, spec_s, spec_c, rng::derive_seed(seed, &[b as u64]))?.with_trim_floor(trim_floor)?;
            solve_aipcw(&d, &bundle)
        });
        match fit {
            Ok(f) => estimates.push(f.beta_hat),
            Err(_) => failed += 1,
        }
    }
    if failed * 10 > resamples {
        return Err(Error::BootstrapFailures { failed, total: resamples });
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    Ok((estimates.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt())
}
