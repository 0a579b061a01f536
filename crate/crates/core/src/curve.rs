use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant function of time: `value_at_zero` on `[0, t1)`, then
/// `values_after[k]` on `[t_k, t_{k+1})`.
///
/// Survival curves are read as `P(T >= t)`, so [`StepCurve::evaluate_left`]
/// is the default evaluation: a jump at `t` does not affect the value at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    jump_times: Vec<f64>,
    values_after: Vec<f64>,
    value_at_zero: f64,
}

impl StepCurve {
    pub fn new(jump_times: Vec<f64>, values_after: Vec<f64>, value_at_zero: f64) -> Result<Self> {
        if jump_times.len() != values_after.len() {
            return Err(Error::Invalid(format!(
                "step curve: {} jump times but {} values",
                jump_times.len(),
                values_after.len()
            )));
        }
        if jump_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Invalid("step curve: jump times must be finite and >= 0".into()));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("step curve: jump times must be strictly increasing".into()));
        }
        Ok(Self {
            jump_times,
            values_after,
            value_at_zero,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            jump_times: Vec::new(),
            values_after: Vec::new(),
            value_at_zero: value,
        }
    }

    #[inline]
    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    #[inline]
    pub fn values_after(&self) -> &[f64] {
        &self.values_after
    }

    #[inline]
    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    /// Left limit at `t`: the value on the last interval strictly before `t`.
    pub fn evaluate_left(&self, t: f64) -> f64 {
        // number of jumps strictly before t
        let k = self.jump_times.partition_point(|&s| s < t);
        if k == 0 {
            self.value_at_zero
        } else {
            self.values_after[k - 1]
        }
    }

    /// Right-continuous value at `t` (jumps at `t` included).
    pub fn evaluate_right(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.value_at_zero
        } else {
            self.values_after[k - 1]
        }
    }

    /// Right-continuous values at each point of an increasing grid, in one
    /// merge pass.
    pub fn right_values_on(&self, grid: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        let mut k = 0;
        let mut current = self.value_at_zero;
        for &t in grid {
            while k < self.jump_times.len() && self.jump_times[k] <= t {
                current = self.values_after[k];
                k += 1;
            }
            out.push(current);
        }
        out
    }

    /// `exp(-scale * self)`: turns a cumulative hazard into a survival curve.
    pub fn exp_neg(&self, scale: f64) -> StepCurve {
        StepCurve {
            jump_times: self.jump_times.clone(),
            values_after: self.values_after.iter().map(|v| (-scale * v).exp()).collect(),
            value_at_zero: (-scale * self.value_at_zero).exp(),
        }
    }

    /// Number of steps where the value goes down.
    pub fn decreasing_steps(&self) -> usize {
        let mut prev = self.value_at_zero;
        let mut count = 0;
        for &v in &self.values_after {
            if v < prev {
                count += 1;
            }
            prev = v;
        }
        count
    }

    pub fn is_nonincreasing(&self) -> bool {
        let mut prev = self.value_at_zero;
        self.values_after.iter().all(|&v| {
            let ok = v <= prev;
            prev = v;
            ok
        })
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.decreasing_steps() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_at_one() -> StepCurve {
        StepCurve::new(vec![1.0], vec![0.5], 1.0).unwrap()
    }

    #[test]
    fn left_limit_ignores_jump_at_t() {
        let c = half_at_one();
        assert_eq!(c.evaluate_left(1.0), 1.0);
        assert_eq!(c.evaluate_left(1.5), 0.5);
        assert_eq!(c.evaluate_right(1.0), 0.5);
        assert_eq!(c.evaluate_left(0.0), 1.0);
    }

    #[test]
    fn empty_curve_is_constant() {
        let c = StepCurve::constant(0.3);
        for t in [0.0, 0.1, 7.0, 1e9] {
            assert_eq!(c.evaluate_left(t), 0.3);
            assert_eq!(c.evaluate_right(t), 0.3);
        }
    }

    #[test]
    fn right_values_on_grid_match_pointwise() {
        let c = StepCurve::new(vec![0.5, 1.0, 2.0], vec![0.9, 0.6, 0.2], 1.0).unwrap();
        let grid = [0.1, 0.5, 0.7, 1.0, 1.9, 2.0, 3.0];
        let merged = c.right_values_on(&grid);
        let direct: Vec<f64> = grid.iter().map(|&t| c.evaluate_right(t)).collect();
        assert_eq!(merged, direct);
    }

    #[test]
    fn rejects_unsorted_jumps() {
        assert!(StepCurve::new(vec![1.0, 1.0], vec![0.5, 0.4], 1.0).is_err());
        assert!(StepCurve::new(vec![1.0], vec![], 1.0).is_err());
    }
}
