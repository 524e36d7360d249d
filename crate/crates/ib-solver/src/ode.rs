//! First-order flow of a root along the multiplier.
//!
//! At a root the implicit function theorem turns the fixed-point
//! equation of the cycle map into a linear system for the velocity of
//! the log-decoder coordinates: `(I - J) v = b`, where `J` is the
//! cycle Jacobian and `b` its multiplier partial. The system goes
//! singular exactly where roots collide, so the checked entry point
//! refuses to solve once the singularity metric drops below a
//! threshold and callers that knowingly operate near a collision use
//! the unchecked one.

use crate::ba::divergence_matrix;
use crate::deriv::{
    ba_jacobian_log_decoder, beta_partials_log_decoder, didx, midx, s_matrix, step_quantities,
    DerivError,
};
use crate::numerics::{lu_solve, sigma_min, NumericsError};
use crate::probability::{DecoderRoot, IBProblem};
use ndarray::{Array1, Array2};
use thiserror::Error;

/// Default lower bound on the singularity metric for the checked
/// solver. Calibrated on the symmetric binary channel so that a
/// thousand-point tracking grid trips the near-bifurcation guard
/// within a step or two of the fold; predictor lag keeps the metric
/// near 1.1e-2 at the closest approach there, while the preceding
/// grid point still reads above 2e-2.
pub const SINGULAR_THRESHOLD_DEFAULT: f64 = 1.5e-2;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error(transparent)]
    Deriv(#[from] DerivError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(
        "root is too close to a bifurcation: singularity metric {singular_metric:.3e} is below {threshold:.3e}"
    )]
    NearBifurcation { singular_metric: f64, threshold: f64 },
}

/// Velocity of a root in the log-decoder chart, with the conditioning
/// diagnostics of the solve that produced it.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    /// `d/d beta` of the log-decoder coordinates.
    pub v: Array1<f64>,
    /// 1-norm condition estimate of `I - J`.
    pub condition_estimate: f64,
    /// Smallest singular value of `I - S`; collapses to zero at a
    /// bifurcation.
    pub singular_metric: f64,
}

/// Multiplier partial of the cycle map assembled by the raw double sum
/// over source symbols and clusters. [`beta_partials_log_decoder`]
/// computes the same vector through the collapsed encoder-averaged
/// form; keeping both routes makes their agreement a meaningful test.
pub fn beta_rhs_direct_sum(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<Array1<f64>, OdeError> {
    let retagged = root.with_beta(beta).map_err(DerivError::from)?;
    let q = step_quantities(&retagged, prob, beta)?;
    let d_in = divergence_matrix(&root.decoders(), prob);
    if let Some(((x, t), _)) = d_in.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(DerivError::BoundaryRoot { y: x, cluster: t }.into());
    }
    let t_count = root.cluster_count();
    let ny = prob.ny();
    let nx = prob.nx();
    let pyx = prob.p_y_given_x();
    let mut out = Array1::zeros(t_count * (ny + 1));
    for t in 0..t_count {
        for y in 0..ny {
            let mut s = 0.0;
            for x in 0..nx {
                for tpp in 0..t_count {
                    let kron = if t == tpp { 1.0 } else { 0.0 };
                    s += (1.0 - pyx[[y, x]] / q.dec[[y, t]])
                        * (kron - q.enc[[tpp, x]])
                        * q.inv[[x, t]]
                        * d_in[[x, tpp]];
                }
            }
            out[didx(t, y, ny)] = s;
        }
        let mut s = 0.0;
        for x in 0..nx {
            for tpp in 0..t_count {
                let kron = if t == tpp { 1.0 } else { 0.0 };
                s += (kron - q.enc[[tpp, x]]) * q.inv[[x, t]] * d_in[[x, tpp]];
            }
        }
        out[midx(t, t_count, ny)] = -s;
    }
    Ok(out)
}

/// Solves the root flow regardless of how close the system is to
/// singular. The diagnostics still report the conditioning so callers
/// can judge the result.
pub fn solve_ib_ode_unchecked(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<OdeSolution, OdeError> {
    let jac = ba_jacobian_log_decoder(root, prob, beta)?;
    let rhs = beta_partials_log_decoder(root, prob, beta)?;
    let n = jac.matrix.nrows();
    let system = &Array2::eye(n) - &jac.matrix;
    let report = lu_solve(&system.view(), &rhs.view())?;
    let s = s_matrix(root, prob, beta)?;
    let m = s.nrows();
    let singular_metric = sigma_min(&(&Array2::eye(m) - &s).view())?;
    Ok(OdeSolution {
        v: report.solution,
        condition_estimate: report.condition_estimate,
        singular_metric,
    })
}

/// Solves the root flow, refusing when the singularity metric is below
/// `threshold`.
pub fn solve_ib_ode_with_threshold(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
    threshold: f64,
) -> Result<OdeSolution, OdeError> {
    let sol = solve_ib_ode_unchecked(root, prob, beta)?;
    if sol.singular_metric < threshold {
        return Err(OdeError::NearBifurcation {
            singular_metric: sol.singular_metric,
            threshold,
        });
    }
    Ok(sol)
}

/// Solves the root flow with the default singularity threshold.
pub fn solve_ib_ode(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<OdeSolution, OdeError> {
    solve_ib_ode_with_threshold(root, prob, beta, SINGULAR_THRESHOLD_DEFAULT)
}
