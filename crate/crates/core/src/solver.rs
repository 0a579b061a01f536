//! One-dimensional root finding for decreasing estimating functions.

use crate::error::{Error, Result};

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 50;
/// Bracket searched when Newton–Raphson fails.
pub const FALLBACK_BRACKET: (f64, f64) = (-10.0, 10.0);
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub beta: f64,
    /// Newton iterations, plus bisection steps when the fallback ran.
    pub iterations: usize,
    pub bisected: bool,
}

/// Finds `beta` with `|f(beta)| < SCORE_TOLERANCE`, where `f` returns the
/// estimating function and its derivative. Newton–Raphson from 0 first;
/// if a step is not a descent step, leaves the bracket, or runs out of
/// iterations, bisection on the fallback bracket takes over.
pub fn find_root<F>(estimator: &str, mut f: F) -> Result<Root>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (lo, hi) = FALLBACK_BRACKET;
    let mut beta = 0.0;
    let mut iterations = 0;
    loop {
        let (u, du) = f(beta)?;
        if u.abs() < SCORE_TOLERANCE {
            // one more Newton step costs little and removes the tolerance-sized error
            if du < 0.0 {
                let polished = beta - u / du;
                if f(polished).is_ok_and(|(v, _)| v.abs() <= u.abs()) {
                    beta = polished;
                }
            }
            return Ok(Root {
                beta,
                iterations,
                bisected: false,
            });
        }
        if iterations >= MAX_NEWTON_ITERATIONS || !(du < 0.0) || !u.is_finite() {
            break;
        }
        let next = beta - u / du;
        if !(lo..=hi).contains(&next) {
            break;
        }
        beta = next;
        iterations += 1;
    }
    bisect(estimator, &mut f, lo, hi, iterations)
}

fn bisect<F>(estimator: &str, f: &mut F, mut lo: f64, mut hi: f64, mut iterations: usize) -> Result<Root>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (mut f_lo, _) = f(lo)?;
    let (f_hi, _) = f(hi)?;
    if f_lo.abs() < SCORE_TOLERANCE {
        return Ok(Root { beta: lo, iterations, bisected: true });
    }
    if f_hi.abs() < SCORE_TOLERANCE {
        return Ok(Root { beta: hi, iterations, bisected: true });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NonConvergence {
            estimator: estimator.to_string(),
            detail: format!(
                "Newton-Raphson failed and the estimating function has no sign change on [{lo}, {hi}]"
            ),
        });
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let (f_mid, _) = f(mid)?;
        iterations += 1;
        if f_mid.abs() < SCORE_TOLERANCE || hi - lo < 1e-14 {
            return Ok(Root { beta: mid, iterations, bisected: true });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        estimator: estimator.to_string(),
        detail: "bisection did not reach the score tolerance".into(),
    })
}
