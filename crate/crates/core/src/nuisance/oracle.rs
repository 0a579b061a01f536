//! Closed-form conditional survival functions of the simulation designs,
//! used as "oracle" nuisance models and as deliberately wrong models.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard deviation of `Z2 | U1`.
pub(crate) const Z2_SD: f64 = 0.3;
const POSTERIOR_POINTS: usize = 2001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum OracleForm {
    /// `S(t) = 1` for all `t`.
    Unit,
    /// `S(t | a) = exp(-t * exp(log_rate + group_effect * a))`; covariates ignored.
    Exponential { log_rate: f64, group_effect: f64 },
    /// True `P(T >= t | A, Z)` of the two-scenario design, where
    /// `T = -log(0.5 U1 + 0.5) exp(-beta A)` and `Z` carries information on `U1`.
    ScenarioFailure { beta: f64 },
    /// `P(C >= t | A, Z) = exp(-t exp(-1 + 2 Z2))`.
    Scenario1Censoring,
    /// Log-normal mixture censoring of the second scenario.
    Scenario2Censoring,
}

impl OracleForm {
    pub fn required_dim(&self) -> usize {
        match self {
            OracleForm::Unit | OracleForm::Exponential { .. } => 0,
            OracleForm::ScenarioFailure { .. }
            | OracleForm::Scenario1Censoring
            | OracleForm::Scenario2Censoring => 2,
        }
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        let need = self.required_dim();
        if z.len() < need {
            return Err(Error::DimensionMismatch {
                expected: need,
                found: z.len(),
            });
        }
        Ok(())
    }

    pub fn survival(&self, t: f64, a: bool, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        Ok(self.survival_many(&[t], a, z)[0])
    }

    /// Survival at each of `times`; the posterior over `U1` is tabulated
    /// once per call for the scenario failure model.
    pub(crate) fn survival_many(&self, times: &[f64], a: bool, z: &[f64]) -> Vec<f64> {
        let af = if a { 1.0 } else { 0.0 };
        match self {
            OracleForm::Unit => vec![1.0; times.len()],
            OracleForm::Exponential {
                log_rate,
                group_effect,
            } => {
                let rate = (log_rate + group_effect * af).exp();
                times.iter().map(|&t| (-t * rate).exp()).collect()
            }
            OracleForm::Scenario1Censoring => {
                let rate = (-1.0 + 2.0 * z[1]).exp();
                times.iter().map(|&t| (-t * rate).exp()).collect()
            }
            OracleForm::Scenario2Censoring => times
                .iter()
                .map(|&t| scenario2_censoring_survival(t, af, z[0], z[1]))
                .collect(),
            OracleForm::ScenarioFailure { beta } => {
                let posterior = U1Posterior::new(z[0], z[1]);
                let rate = (beta * af).exp();
                times
                    .iter()
                    .map(|&t| posterior.cdf(2.0 * (-t * rate).exp() - 1.0))
                    .collect()
            }
        }
    }
}

fn scenario2_censoring_survival(t: f64, a: f64, z1: f64, z2: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let std_normal = Normal::standard();
    let log_t = t.ln();
    if z1 > 0.0 {
        // log C = -0.2a - 2 sqrt|z2| + 0.3 U2, U2 = e^W
        let m = log_t + 0.2 * a + 2.0 * z2.abs().sqrt();
        if m <= 0.0 {
            1.0
        } else {
            1.0 - std_normal.cdf((m / 0.3).ln())
        }
    } else {
        // log C = k - U2
        let k = 2.4 - 0.3 * a + 0.5 * z1.abs().sqrt() + 0.5 * z2.abs().sqrt();
        let room = k - log_t;
        if room <= 0.0 {
            0.0
        } else {
            std_normal.cdf(room.ln())
        }
    }
}

/// Posterior CDF of `U1 ~ Unif(-1, 1)` given `Z1 ~ N(0.5 U1, 1)` and
/// `Z2 ~ N(U1^2, 0.09)`, tabulated by the trapezoid rule.
struct U1Posterior {
    cdf: Vec<f64>,
    step: f64,
}

impl U1Posterior {
    fn new(z1: f64, z2: f64) -> Self {
        let m = POSTERIOR_POINTS;
        let step = 2.0 / (m - 1) as f64;
        let log_density: Vec<f64> = (0..m)
            .map(|k| {
                let u = -1.0 + k as f64 * step;
                let r1 = z1 - 0.5 * u;
                let r2 = (z2 - u * u) / Z2_SD;
                -0.5 * (r1 * r1 + r2 * r2)
            })
            .collect();
        let peak = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let density: Vec<f64> = log_density.iter().map(|l| (l - peak).exp()).collect();
        let mut cdf = Vec::with_capacity(m);
        cdf.push(0.0);
        for k in 1..m {
            let prev = cdf[k - 1];
            cdf.push(prev + 0.5 * step * (density[k - 1] + density[k]));
        }
        let total = cdf[m - 1];
        for c in &mut cdf {
            *c /= total;
        }
        Self { cdf, step }
    }

    fn cdf(&self, u: f64) -> f64 {
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let x = (u + 1.0) / self.step;
        let k = (x.floor() as usize).min(self.cdf.len() - 2);
        let frac = x - k as f64;
        self.cdf[k] + frac * (self.cdf[k + 1] - self.cdf[k])
    }
}
