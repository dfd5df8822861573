//! Power-iteration estimates of the largest singular value and the
//! one-sided spectral projection built on them.

use super::matrix::{norm2, DenseMatrix};
use crate::error::{shape_err, Result};

/// Iteration cap when refining an estimate to convergence.
pub const MAX_POWER_ITERS: usize = 2000;
/// Relative change in the estimate below which power iteration stops.
pub const POWER_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    /// Updated unit left singular vector.
    pub state: Vec<f64>,
    pub iterations: usize,
}

fn check_state(weight: &DenseMatrix, state: &[f64]) -> Result<()> {
    if state.len() != weight.rows() {
        return shape_err(format!(
            "power-iteration state has length {}, weight has {} rows",
            state.len(),
            weight.rows()
        ));
    }
    Ok(())
}

/// Starting right vector when the stored state is orthogonal to the row space.
fn fallback_right_vector(weight: &DenseMatrix) -> Vec<f64> {
    let best = weight
        .iter_rows()
        .max_by(|a, b| norm2(a).total_cmp(&norm2(b)))
        .expect("non-empty");
    let n = norm2(best);
    best.iter().map(|v| v / n).collect()
}

/// One power step from left vector `u`. Returns `(sigma, new_u)`; `None` when
/// `W` maps everything to zero.
fn power_step(weight: &DenseMatrix, u: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut v = weight.t_matvec(u).expect("checked shape");
    let mut nv = norm2(&v);
    if nv == 0.0 {
        if weight.data().iter().all(|&w| w == 0.0) {
            return None;
        }
        v = fallback_right_vector(weight);
        nv = 1.0;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut u_new = weight.matvec(&v).expect("checked shape");
    let sigma = norm2(&u_new);
    if sigma == 0.0 {
        return None;
    }
    u_new.iter_mut().for_each(|x| *x /= sigma);
    Some((sigma, u_new))
}

/// Estimates the spectral norm with exactly `iters` warm-started power steps.
/// For the zero matrix the estimate is 0 and the state is returned unchanged.
pub fn sigma_max(weight: &DenseMatrix, state: &[f64], iters: usize) -> Result<SigmaEstimate> {
    check_state(weight, state)?;
    if iters == 0 {
        return shape_err("power iteration needs at least one step");
    }
    let mut u = state.to_vec();
    let mut sigma = 0.0;
    for i in 0..iters {
        match power_step(weight, &u) {
            Some((s, next)) => {
                sigma = s;
                u = next;
            }
            None => {
                return Ok(SigmaEstimate {
                    sigma: 0.0,
                    state: state.to_vec(),
                    iterations: i + 1,
                })
            }
        }
    }
    Ok(SigmaEstimate {
        sigma,
        state: u,
        iterations: iters,
    })
}

/// Runs at least `min_iters` power steps, then keeps going until the estimate
/// stops changing (relative [`POWER_TOL`]) or [`MAX_POWER_ITERS`] is reached.
pub fn sigma_max_converged(weight: &DenseMatrix, state: &[f64], min_iters: usize) -> Result<SigmaEstimate> {
    let mut est = sigma_max(weight, state, min_iters.max(1))?;
    if est.sigma == 0.0 {
        return Ok(est);
    }
    let mut prev = est.sigma;
    while est.iterations < MAX_POWER_ITERS {
        let (s, u) = power_step(weight, &est.state).expect("nonzero matrix");
        est.sigma = s;
        est.state = u;
        est.iterations += 1;
        if (s - prev).abs() <= POWER_TOL * s {
            break;
        }
        prev = s;
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: DenseMatrix,
    pub state: Vec<f64>,
    /// Spectral norm estimate before projection.
    pub sigma: f64,
}

/// Divides `weight` by its spectral norm when that norm exceeds one; smaller
/// matrices pass through unchanged. The estimate is warm-started from `state`
/// with at least `iters` steps and refined to convergence, so the projected
/// matrix satisfies `σ_max ≤ 1` up to rounding.
pub fn one_sided_sn_project(weight: &DenseMatrix, state: &[f64], iters: usize) -> Result<Projection> {
    let est = sigma_max_converged(weight, state, iters)?;
    let mut projected = weight.clone();
    if est.sigma > 1.0 {
        projected.scale(1.0 / est.sigma);
    }
    Ok(Projection {
        weight: projected,
        state: est.state,
        sigma: est.sigma,
    })
}
