//! Counting-process estimators: product-limit, Nelson–Aalen, and the Cox
//! model fitted by maximum partial likelihood with Breslow ties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::data::{Dataset, Observation, Target};
use crate::error::{Error, Result};

pub const COX_TOLERANCE: f64 = 1e-8;
pub const COX_MAX_ITERATIONS: usize = 50;
// |beta| beyond this is treated as a diverging (monotone) likelihood
const COX_BETA_BOUND: f64 = 25.0;
const COX_STEP_TOLERANCE: f64 = 1e-6;

/// Distinct target-event times with weighted event counts `d` and risk-set
/// sizes `r` (risk set `X >= t`).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    pub times: Vec<f64>,
    pub events: Vec<f64>,
    pub at_risk: Vec<f64>,
}

impl RiskTable {
    /// `weights` are case weights (bootstrap multiplicities); `None` means 1.
    pub fn build(times: &[f64], events: &[bool], weights: Option<&[f64]>) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let w = |i: usize| weights.map_or(1.0, |w| w[i]);
        let mut remaining: f64 = (0..times.len()).map(w).sum();

        let mut table = RiskTable {
            times: Vec::new(),
            events: Vec::new(),
            at_risk: Vec::new(),
        };
        let mut k = 0;
        while k < order.len() {
            let t = times[order[k]];
            let mut d = 0.0;
            let mut leaving = 0.0;
            while k < order.len() && times[order[k]] == t {
                let i = order[k];
                if events[i] {
                    d += w(i);
                }
                leaving += w(i);
                k += 1;
            }
            if d > 0.0 {
                table.times.push(t);
                table.events.push(d);
                table.at_risk.push(remaining);
            }
            remaining -= leaving;
        }
        table
    }

    fn for_target(data: &Dataset, target: Target) -> Self {
        let times: Vec<f64> = data.iter().map(|o| o.time).collect();
        let events: Vec<bool> = (0..data.len())
            .map(|i| data.is_target_event(i, target))
            .collect();
        Self::build(&times, &events, None)
    }

    pub fn product_limit(&self) -> StepCurve {
        let mut s = 1.0;
        let values = self
            .events
            .iter()
            .zip(&self.at_risk)
            .map(|(d, r)| {
                s *= 1.0 - d / r;
                s
            })
            .collect();
        StepCurve::new(self.times.clone(), values, 1.0).expect("risk table times are sorted")
    }

    pub fn nelson_aalen(&self) -> StepCurve {
        let mut h = 0.0;
        let values = self
            .events
            .iter()
            .zip(&self.at_risk)
            .map(|(d, r)| {
                h += d / r;
                h
            })
            .collect();
        StepCurve::new(self.times.clone(), values, 0.0).expect("risk table times are sorted")
    }
}

/// Kaplan–Meier curve of the target event. For `Target::Censoring` the
/// roles of the indicator are flipped.
pub fn product_limit(data: &Dataset, target: Target) -> Result<StepCurve> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RiskTable::for_target(data, target).product_limit())
}

pub fn nelson_aalen(data: &Dataset, target: Target) -> Result<StepCurve> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RiskTable::for_target(data, target).nelson_aalen())
}

/// Which of `(A, Z1, ..., Zp)` enter the Cox linear predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    GroupOnly,
    GroupAndCovariates,
    /// Explicit feature indices: 0 is `A`, `j >= 1` is `Z_j`.
    Features(Vec<usize>),
}

impl Design {
    pub fn features(&self, dim: usize) -> Vec<usize> {
        match self {
            Design::GroupOnly => vec![0],
            Design::GroupAndCovariates => (0..=dim).collect(),
            Design::Features(f) => f.clone(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let f = self.features(dim);
        if f.is_empty() {
            return Err(Error::Invalid("Cox design selects no features".into()));
        }
        if let Some(&bad) = f.iter().find(|&&j| j > dim) {
            return Err(Error::Invalid(format!(
                "Cox design selects feature {bad} but the data have p = {dim}"
            )));
        }
        Ok(())
    }
}

fn design_row(o: &Observation, features: &[usize]) -> Vec<f64> {
    features
        .iter()
        .map(|&j| if j == 0 { o.a() } else { o.covariates[j - 1] })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Negative Hessian of the log partial likelihood at `beta`, row-major.
    pub information: Vec<Vec<f64>>,
    /// Breslow cumulative baseline hazard.
    pub baseline: StepCurve,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub score_norm: f64,
    features: Vec<usize>,
    dim: usize,
}

impl CoxFit {
    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn linear_predictor(&self, a: bool, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        Ok(self
            .features
            .iter()
            .zip(&self.beta)
            .map(|(&j, b)| {
                let x = if j == 0 {
                    if a {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    z[j - 1]
                };
                b * x
            })
            .sum())
    }

    /// Inverse information (model-based covariance of `beta`).
    pub fn covariance(&self) -> Result<Vec<Vec<f64>>> {
        let info = to_matrix(&self.information);
        let inv = info
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Singular("Cox information matrix".into()))?;
        Ok(from_matrix(&inv))
    }

    /// Model-based standard errors, `sqrt(diag(I^-1))`.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let cov = self.covariance()?;
        Ok((0..cov.len()).map(|j| cov[j][j].sqrt()).collect())
    }

    /// Per-subject score residuals at `beta` (Lin–Wei), one vector per
    /// subject. They sum to the partial-likelihood score.
    pub fn score_residuals(&self, data: &Dataset) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = data.iter().map(|o| design_row(o, &self.features)).collect();
        let q = self.features.len();
        let risk: Vec<f64> = rows.iter().map(|w| dot(w, &self.beta).exp()).collect();
        let sums = RiskSums::compute(data, &rows, &risk);

        // cumulative dH0 = d/S0 and dH1 = wbar d/S0 over event times
        let mut h0 = Vec::with_capacity(sums.times.len());
        let mut h1 = Vec::with_capacity(sums.times.len());
        let (mut c0, mut c1) = (0.0, vec![0.0; q]);
        for k in 0..sums.times.len() {
            let inc = sums.events[k] / sums.s0[k];
            c0 += inc;
            for j in 0..q {
                c1[j] += sums.s1[k][j] / sums.s0[k] * inc;
            }
            h0.push(c0);
            h1.push(c1.clone());
        }

        data.iter()
            .enumerate()
            .map(|(i, o)| {
                let w = &rows[i];
                // event times <= X_i
                let k = sums.times.partition_point(|&t| t <= o.time);
                let mut r = vec![0.0; q];
                if o.event {
                    let e = sums.times.partition_point(|&t| t < o.time);
                    for j in 0..q {
                        r[j] += w[j] - sums.s1[e][j] / sums.s0[e];
                    }
                }
                if k > 0 {
                    for j in 0..q {
                        r[j] -= risk[i] * (w[j] * h0[k - 1] - h1[k - 1][j]);
                    }
                }
                r
            })
            .collect()
    }

    /// Robust (sandwich) covariance `I^-1 (sum r r') I^-1`.
    pub fn robust_covariance(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        let q = self.features.len();
        let mut meat = DMatrix::<f64>::zeros(q, q);
        for r in self.score_residuals(data) {
            let v = DVector::from_vec(r);
            meat += &v * v.transpose();
        }
        let bread = to_matrix(&self.covariance()?);
        Ok(from_matrix(&(&bread * meat * &bread)))
    }
}

/// Risk-set sums `S0, S1, S2` at each distinct failure time.
struct RiskSums {
    times: Vec<f64>,
    events: Vec<f64>,
    s0: Vec<f64>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
    /// sum of the design rows of subjects failing at each time
    event_rows: Vec<Vec<f64>>,
}

impl RiskSums {
    fn compute(data: &Dataset, rows: &[Vec<f64>], risk: &[f64]) -> Self {
        let q = rows.first().map_or(0, Vec::len);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| data.get(b).time.total_cmp(&data.get(a).time));

        let mut out = RiskSums {
            times: Vec::new(),
            events: Vec::new(),
            s0: Vec::new(),
            s1: Vec::new(),
            s2: Vec::new(),
            event_rows: Vec::new(),
        };
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; q];
        let mut s2 = vec![0.0; q * q];
        let mut k = 0;
        while k < order.len() {
            let t = data.get(order[k]).time;
            let mut d = 0.0;
            let mut ev = vec![0.0; q];
            while k < order.len() && data.get(order[k]).time == t {
                let i = order[k];
                let w = &rows[i];
                s0 += risk[i];
                for a in 0..q {
                    s1[a] += risk[i] * w[a];
                    for b in 0..q {
                        s2[a * q + b] += risk[i] * w[a] * w[b];
                    }
                }
                if data.get(i).event {
                    d += 1.0;
                    for a in 0..q {
                        ev[a] += w[a];
                    }
                }
                k += 1;
            }
            if d > 0.0 {
                out.times.push(t);
                out.events.push(d);
                out.s0.push(s0);
                out.s1.push(s1.clone());
                out.s2.push(s2.clone());
                out.event_rows.push(ev);
            }
        }
        // ascending time order
        out.times.reverse();
        out.events.reverse();
        out.s0.reverse();
        out.s1.reverse();
        out.s2.reverse();
        out.event_rows.reverse();
        out
    }
}

struct PartialLikelihood {
    log_likelihood: f64,
    score: Vec<f64>,
    information: DMatrix<f64>,
}

fn evaluate(data: &Dataset, rows: &[Vec<f64>], beta: &[f64]) -> PartialLikelihood {
    let q = beta.len();
    let eta: Vec<f64> = rows.iter().map(|w| dot(w, beta)).collect();
    let risk: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let sums = RiskSums::compute(data, rows, &risk);
    let mut ll = 0.0;
    let mut score = vec![0.0; q];
    let mut info = DMatrix::<f64>::zeros(q, q);
    for k in 0..sums.times.len() {
        let d = sums.events[k];
        let s0 = sums.s0[k];
        ll += dot(&sums.event_rows[k], beta) - d * s0.ln();
        for a in 0..q {
            let abar = sums.s1[k][a] / s0;
            score[a] += sums.event_rows[k][a] - d * abar;
            for b in 0..q {
                let bbar = sums.s1[k][b] / s0;
                info[(a, b)] += d * (sums.s2[k][a * q + b] / s0 - abar * bbar);
            }
        }
    }
    PartialLikelihood {
        log_likelihood: ll,
        score,
        information: info,
    }
}

/// Partial-likelihood score (unscaled sum over failures) at `beta`.
pub fn cox_score(data: &Dataset, design: &Design, beta: &[f64]) -> Result<Vec<f64>> {
    design.validate(data.dim())?;
    let features = design.features(data.dim());
    if beta.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: beta.len(),
        });
    }
    let rows: Vec<Vec<f64>> = data.iter().map(|o| design_row(o, &features)).collect();
    Ok(evaluate(data, &rows, beta).score)
}

/// Maximum partial likelihood fit by Newton–Raphson from zero, with step
/// halving. Divergence and singular information are reported through
/// `converged = false` rather than an error.
pub fn cox_mple(data: &Dataset, design: &Design) -> Result<CoxFit> {
    design.validate(data.dim())?;
    if data.count_events(Target::Failure) == 0 {
        return Err(Error::NoEvents {
            target: Target::Failure,
            fold: None,
        });
    }
    let features = design.features(data.dim());
    let q = features.len();
    let raw_rows: Vec<Vec<f64>> = data.iter().map(|o| design_row(o, &features)).collect();
    // centering leaves beta unchanged and keeps exp(eta) tame
    let n = data.len() as f64;
    let means: Vec<f64> = (0..q)
        .map(|j| raw_rows.iter().map(|w| w[j]).sum::<f64>() / n)
        .collect();
    let rows: Vec<Vec<f64>> = raw_rows
        .iter()
        .map(|w| w.iter().zip(&means).map(|(x, m)| x - m).collect())
        .collect();

    let mut beta = vec![0.0; q];
    let mut current = evaluate(data, &rows, &beta);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let Some(chol) = current.information.clone().cholesky() else {
            break;
        };
        let step = chol.solve(&DVector::from_column_slice(&current.score));
        // a vanishing score with a large Newton step is a flat, diverging likelihood
        if norm(&current.score) < COX_TOLERANCE && step.norm() < COX_STEP_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= COX_MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let next = evaluate(data, &rows, &candidate);
            if next.log_likelihood.is_finite()
                && next.log_likelihood >= current.log_likelihood - 1e-10 * current.log_likelihood.abs().max(1.0)
            {
                accepted = Some((candidate, next));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, next)) = accepted else {
            break;
        };
        beta = candidate;
        current = next;
        if beta.iter().any(|b| b.abs() > COX_BETA_BOUND) {
            break;
        }
    }

    let risk: Vec<f64> = raw_rows.iter().map(|w| dot(w, &beta).exp()).collect();
    let sums = RiskSums::compute(data, &raw_rows, &risk);
    let mut h = 0.0;
    let values = sums
        .events
        .iter()
        .zip(&sums.s0)
        .map(|(d, s0)| {
            h += d / s0;
            h
        })
        .collect();
    let baseline = StepCurve::new(sums.times.clone(), values, 0.0)?;

    Ok(CoxFit {
        score_norm: norm(&current.score),
        beta,
        information: from_matrix(&current.information),
        baseline,
        iterations,
        converged,
        log_likelihood: current.log_likelihood,
        features,
        dim: data.dim(),
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let q = m.len();
    DMatrix::from_fn(q, q, |a, b| m[a][b])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obs(time: f64, event: bool, group: bool) -> Observation {
        Observation::new(time, event, group, vec![])
    }

    fn three_subjects() -> Dataset {
        Dataset::new(
            vec![obs(1.0, true, false), obs(2.0, false, false), obs(3.0, true, false)],
            3.0,
        )
        .unwrap()
    }

    fn four_subjects() -> Dataset {
        Dataset::new(
            vec![
                obs(1.0, true, true),
                obs(3.0, true, true),
                obs(2.0, true, false),
                obs(4.0, true, false),
            ],
            4.0,
        )
        .unwrap()
    }

    #[test]
    fn product_limit_hand_example() {
        let s = product_limit(&three_subjects(), Target::Failure).unwrap();
        assert_eq!(s.jump_times(), &[1.0, 3.0]);
        assert_relative_eq!(s.values_after()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.values_after()[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn product_limit_censoring_flips_indicator() {
        let sc = product_limit(&three_subjects(), Target::Censoring).unwrap();
        assert_eq!(sc.jump_times(), &[2.0]);
        assert_relative_eq!(sc.values_after()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn no_events_gives_flat_curves() {
        let data = Dataset::new(vec![obs(1.0, false, false), obs(0.5, false, true)], 2.0).unwrap();
        let s = product_limit(&data, Target::Failure).unwrap();
        assert!(s.jump_times().is_empty());
        assert_eq!(s.evaluate_left(5.0), 1.0);
        let h = nelson_aalen(&data, Target::Failure).unwrap();
        assert_eq!(h.evaluate_right(5.0), 0.0);
    }

    #[test]
    fn nelson_aalen_hand_examples() {
        let data = Dataset::new(vec![obs(1.0, true, false), obs(3.0, true, false)], 3.0).unwrap();
        let h = nelson_aalen(&data, Target::Failure).unwrap();
        assert_relative_eq!(h.evaluate_right(1.0), 0.5);
        assert_relative_eq!(h.evaluate_right(3.0), 1.5);

        let single = Dataset::new(vec![obs(2.0, true, false)], 2.0).unwrap();
        assert_relative_eq!(nelson_aalen(&single, Target::Failure).unwrap().evaluate_right(2.0), 1.0);
    }

    #[test]
    fn tied_events_multiply_once() {
        let data = Dataset::new(
            vec![obs(1.0, true, false), obs(1.0, true, false), obs(2.0, false, false), obs(3.0, true, false)],
            3.0,
        )
        .unwrap();
        let s = product_limit(&data, Target::Failure).unwrap();
        assert_relative_eq!(s.evaluate_right(1.0), 0.5);
        assert_relative_eq!(s.evaluate_right(3.0), 0.0);
    }

    #[test]
    fn cox_score_hand_value_at_zero() {
        let u = cox_score(&four_subjects(), &Design::GroupOnly, &[0.0]).unwrap();
        assert_relative_eq!(u[0], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn cox_solution_zeroes_score() {
        let fit = cox_mple(&four_subjects(), &Design::GroupOnly).unwrap();
        assert!(fit.converged);
        let u = cox_score(&four_subjects(), &Design::GroupOnly, &fit.beta).unwrap();
        assert!(u[0].abs() < 1e-8);
        assert!(fit.baseline.is_nondecreasing());
        assert!(fit.information[0][0] > 0.0);
    }

    #[test]
    fn one_group_is_flagged_not_silent() {
        let data = Dataset::new(vec![obs(1.0, true, true), obs(2.0, true, true)], 2.0).unwrap();
        let fit = cox_mple(&data, &Design::GroupOnly).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn separated_groups_flag_monotone_likelihood() {
        // every A=1 subject fails before any A=0 subject
        let data = Dataset::new(
            vec![obs(1.0, true, true), obs(2.0, true, true), obs(3.0, true, false), obs(4.0, true, false)],
            4.0,
        )
        .unwrap();
        let fit = cox_mple(&data, &Design::GroupOnly).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn no_failures_is_an_error() {
        let data = Dataset::new(vec![obs(1.0, false, true), obs(2.0, false, false)], 2.0).unwrap();
        assert!(matches!(cox_mple(&data, &Design::GroupOnly), Err(Error::NoEvents { .. })));
    }

    #[test]
    fn breslow_at_zero_effect_is_nelson_aalen() {
        // single group: beta is not identified, baseline at beta = 0 is NA
        let data = Dataset::new(
            vec![
                Observation::new(0.5, true, false, vec![0.3]),
                Observation::new(0.9, false, false, vec![-1.0]),
                Observation::new(1.2, true, false, vec![2.0]),
                Observation::new(1.2, true, false, vec![0.1]),
                Observation::new(2.0, true, false, vec![0.0]),
            ],
            2.0,
        )
        .unwrap();
        let fit = cox_mple(&data, &Design::GroupOnly).unwrap();
        assert_eq!(fit.beta, vec![0.0]);
        let na = nelson_aalen(&data, Target::Failure).unwrap();
        assert_eq!(fit.baseline.jump_times(), na.jump_times());
        for (a, b) in fit.baseline.values_after().iter().zip(na.values_after()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn score_residuals_sum_to_score() {
        let data = Dataset::new(
            vec![
                Observation::new(0.5, true, true, vec![0.3]),
                Observation::new(0.9, false, false, vec![-1.0]),
                Observation::new(1.2, true, false, vec![2.0]),
                Observation::new(1.2, true, true, vec![0.1]),
                Observation::new(1.7, false, true, vec![0.4]),
                Observation::new(2.0, true, false, vec![0.0]),
            ],
            2.0,
        )
        .unwrap();
        let design = Design::GroupAndCovariates;
        let mut fit = cox_mple(&data, &design).unwrap();
        fit.beta = vec![0.3, -0.2];
        let score = cox_score(&data, &design, &fit.beta).unwrap();
        let res = fit.score_residuals(&data);
        for j in 0..2 {
            let total: f64 = res.iter().map(|r| r[j]).sum();
            assert_relative_eq!(total, score[j], epsilon = 1e-12);
        }
    }
}
