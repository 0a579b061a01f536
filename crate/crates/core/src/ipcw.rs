//! Inverse probability of censoring weighted partial likelihood for the
//! group log hazard ratio, with a sandwich standard error that treats the
//! weights as known.

use serde::{Deserialize, Serialize};

use crate::aipcw::TimeGrid;
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::ConditionalSurvivalModel;
use crate::solver::{self, Root};

/// Weighted at-risk and event sums per grid time.
#[derive(Debug, Clone)]
struct WeightedRisk {
    grid: TimeGrid,
    n: f64,
    /// `sum_{j: A=a, X_j >= t} w_j(t)`
    at_risk: [Vec<f64>; 2],
    /// `sum` of `w_i(t)` over failures at `t`
    events: Vec<f64>,
    events_treated: Vec<f64>,
    /// weights `1 / S_c(t-)` per subject on grid points `0..=exit`
    weights: Vec<Vec<f64>>,
    exit: Vec<usize>,
}

impl WeightedRisk {
    fn build(data: &Dataset, sc_model: &ConditionalSurvivalModel) -> Result<Self> {
        if sc_model.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: sc_model.dim(),
                found: data.dim(),
            });
        }
        let grid = TimeGrid::new(data, &sc_model.jump_times());
        let len = grid.len();
        let subjects: Vec<&Observation> = data.iter().collect();
        let c_rows = sc_model.survival_on_grid(&subjects, grid.times())?;
        let mut at_risk = [vec![0.0; len], vec![0.0; len]];
        let mut events = vec![0.0; len];
        let mut events_treated = vec![0.0; len];
        let mut weights = Vec::with_capacity(data.len());
        let mut exit = Vec::with_capacity(data.len());
        for (o, c) in data.iter().zip(&c_rows) {
            let k = grid.index_of(o.time).expect("observed times are grid points");
            let w: Vec<f64> = (0..=k).map(|g| 1.0 / if g == 0 { 1.0 } else { c[g - 1] }).collect();
            for (acc, wg) in at_risk[o.group as usize].iter_mut().zip(&w) {
                *acc += wg;
            }
            if o.event {
                events[k] += w[k];
                if o.group {
                    events_treated[k] += w[k];
                }
            }
            weights.push(w);
            exit.push(k);
        }
        Ok(Self {
            grid,
            n: data.len() as f64,
            at_risk,
            events,
            events_treated,
            weights,
            exit,
        })
    }

    /// `(Abar, V, S0)` at grid point `g`.
    fn moments(&self, beta: f64, g: usize) -> Result<(f64, f64, f64)> {
        let s1 = beta.exp() * self.at_risk[1][g];
        let s0 = self.at_risk[0][g] + s1;
        if s0 <= 0.0 {
            return Err(Error::ZeroRiskSet {
                time: self.grid.times()[g],
            });
        }
        let a_bar = s1 / s0;
        Ok((a_bar, a_bar - a_bar * a_bar, s0))
    }

    fn score_and_slope(&self, beta: f64) -> Result<(f64, f64)> {
        let (mut u, mut du) = (0.0, 0.0);
        for g in 0..self.grid.len() {
            if self.events[g] == 0.0 {
                continue;
            }
            let (a_bar, v, _) = self.moments(beta, g)?;
            u += self.events_treated[g] - a_bar * self.events[g];
            du -= v * self.events[g];
        }
        Ok((u / self.n, du / self.n))
    }
}

/// `(1/n) sum_i w_i(X_i) dN_i (A_i - S1/S0)` with `w = 1/S_c(t-)` and
/// weighted risk sums `S_l = sum_j A_j^l w_j(t) Y_j(t) e^{beta A_j}`.
pub fn ipcw_score(beta: f64, data: &Dataset, sc_model: &ConditionalSurvivalModel) -> Result<f64> {
    Ok(WeightedRisk::build(data, sc_model)?.score_and_slope(beta)?.0)
}

pub fn ipcw_score_derivative(beta: f64, data: &Dataset, sc_model: &ConditionalSurvivalModel) -> Result<f64> {
    Ok(WeightedRisk::build(data, sc_model)?.score_and_slope(beta)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    /// Smallest and largest `S_c(X-)` over failures.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcwFit {
    pub beta_hat: f64,
    pub se: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weights_summary: WeightsSummary,
}

pub fn solve_ipcw(data: &Dataset, sc_model: &ConditionalSurvivalModel) -> Result<IpcwFit> {
    let risk = WeightedRisk::build(data, sc_model)?;
    let Root { beta, iterations, .. } = solver::find_root("ipcw", |b| risk.score_and_slope(b))?;
    let se = sandwich(&risk, data, beta)?;
    let at_events: Vec<f64> = data
        .iter()
        .enumerate()
        .filter(|(_, o)| o.event)
        .map(|(i, _)| 1.0 / risk.weights[i][risk.exit[i]])
        .collect();
    Ok(IpcwFit {
        beta_hat: beta,
        se,
        iterations,
        converged: true,
        weights_summary: WeightsSummary {
            min: at_events.iter().copied().fold(f64::INFINITY, f64::min),
            max: at_events.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
    })
}

fn sandwich(risk: &WeightedRisk, data: &Dataset, beta: f64) -> Result<f64> {
    let len = risk.grid.len();
    let mut a_bar = vec![0.0; len];
    let mut d_lambda = vec![0.0; len];
    let mut info = 0.0;
    for g in 0..len {
        if risk.events[g] == 0.0 {
            continue;
        }
        let (ab, v, s0) = risk.moments(beta, g)?;
        a_bar[g] = ab;
        d_lambda[g] = risk.events[g] / s0;
        info += v * risk.events[g];
    }
    info /= risk.n;
    if !(info > 0.0) {
        return Err(Error::Singular(format!("IPCW information is {info}")));
    }
    let eb = beta.exp();
    let total: f64 = data
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (a, r) = if o.group { (1.0, eb) } else { (0.0, 1.0) };
            let k = risk.exit[i];
            let w = &risk.weights[i];
            let mut u = if o.event { w[k] * (a - a_bar[k]) } else { 0.0 };
            for g in 0..=k {
                u -= w[g] * r * (a - a_bar[g]) * d_lambda[g];
            }
            u * u
        })
        .sum();
    Ok((total / (risk.n * risk.n) / (info * info)).sqrt())
}

/// Sandwich standard error at `fit.beta_hat`.
pub fn ipcw_sandwich_se(fit: &IpcwFit, data: &Dataset, sc_model: &ConditionalSurvivalModel) -> Result<f64> {
    sandwich(&WeightedRisk::build(data, sc_model)?, data, fit.beta_hat)
}
