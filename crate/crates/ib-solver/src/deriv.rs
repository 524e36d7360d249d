//! Closed-form derivatives of the decoder-coordinate cycle map.
//!
//! Roots live in the log-decoder chart: the flat vector holds
//! `log p(y|t)` for every cluster (cluster-major, label-minor, see
//! [`didx`]) followed by `log p(t)` (see [`midx`]). All derivative
//! formulas are evaluated with the quantities produced by one cycle
//! step from the input pair, so they are exact at roots and remain
//! well-defined slightly off them.
//!
//! The Jacobian here is the total derivative through the full
//! dependency chain of the cycle: a perturbation of a cluster's log
//! mass also moves that cluster's input decoder through the Bayes
//! relation. The finite-difference harness below differences along
//! exactly those chart directions, which is why its marginal columns
//! pair the mass bump with an opposite bump of the cluster's decoder
//! coordinates.

use crate::ba::{decode_raw, divergence_matrix, encode_raw, BaError};
use crate::probability::{DecoderRoot, IBProblem, ProbabilityError, LOG_CLAMP};
use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DerivError {
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
    #[error(transparent)]
    Ba(#[from] BaError),
    #[error("vector has length {got}, expected {expected}")]
    VectorLength { got: usize, expected: usize },
    #[error("cluster index {index} out of range for {count} clusters")]
    ClusterIndex { index: usize, count: usize },
    #[error("step {0} must be positive and finite")]
    InvalidStep(f64),
    #[error("decoder sits on the simplex boundary: p(y={y}|t={cluster}) = 0")]
    BoundaryRoot { y: usize, cluster: usize },
}

/// Flat index of the decoder coordinate `log p(y|t)`.
pub fn didx(t: usize, y: usize, ny: usize) -> usize {
    t * ny + y
}

/// Flat index of the marginal coordinate `log p(t)`.
pub fn midx(t: usize, cluster_count: usize, ny: usize) -> usize {
    cluster_count * ny + t
}

/// One cycle step's worth of distributions, the common input to every
/// derivative formula.
pub(crate) struct StepQuantities {
    /// Encoder generated by the input pair, `T x |X|`.
    pub enc: Array2<f64>,
    /// Bayes inverse of that encoder, `|X| x T`.
    pub inv: Array2<f64>,
    /// Decoder pair it induces.
    pub dec: Array2<f64>,
    #[allow(dead_code)]
    pub mrg: Array1<f64>,
}

pub(crate) fn step_quantities(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<StepQuantities, DerivError> {
    let (enc, _z) = encode_raw(&root.decoders(), &root.marginal(), prob, beta)?;
    let (dec, mrg, inv) = decode_raw(&enc.view(), prob)?;
    for ((y, t), &v) in dec.indexed_iter() {
        if v == 0.0 {
            return Err(DerivError::BoundaryRoot { y, cluster: t });
        }
    }
    Ok(StepQuantities { enc, inv, dec, mrg })
}

/// Contraction tensors of the cycle map at a root.
///
/// With `w(x; t, t') = p(t'|x) p(x|t)` taken from one cycle step:
/// * `a[t, t'] = sum_x w`
/// * `b[t, t', y] = sum_x p(y|x) w`
/// * `c[t, t', y, y'] = sum_x p(y|x) p(y'|x) w`
/// * `d[t, y, y'] = sum_x p(y|x) p(y'|x) p(x|t) / p(y|t)`
#[derive(Debug, Clone)]
pub struct DerivTensors {
    pub a: Array2<f64>,
    pub b: Array3<f64>,
    pub c: Array4<f64>,
    pub d: Array3<f64>,
}

fn tensors_from_step(q: &StepQuantities, prob: &IBProblem) -> DerivTensors {
    let t_count = q.enc.nrows();
    let ny = prob.ny();
    let nx = prob.nx();
    let pyx = prob.p_y_given_x();
    let mut a = Array2::zeros((t_count, t_count));
    let mut b = Array3::zeros((t_count, t_count, ny));
    let mut c = Array4::zeros((t_count, t_count, ny, ny));
    let mut d = Array3::zeros((t_count, ny, ny));
    for t in 0..t_count {
        for tp in 0..t_count {
            for x in 0..nx {
                let w = q.enc[[tp, x]] * q.inv[[x, t]];
                a[[t, tp]] += w;
                for y in 0..ny {
                    b[[t, tp, y]] += pyx[[y, x]] * w;
                    for yp in 0..ny {
                        c[[t, tp, y, yp]] += pyx[[y, x]] * pyx[[yp, x]] * w;
                    }
                }
            }
        }
        for x in 0..nx {
            for y in 0..ny {
                for yp in 0..ny {
                    d[[t, y, yp]] +=
                        pyx[[y, x]] * pyx[[yp, x]] * q.inv[[x, t]] / q.dec[[y, t]];
                }
            }
        }
    }
    DerivTensors { a, b, c, d }
}

/// Builds the contraction tensors from one cycle step at the root's
/// own multiplier. Each tensor is accumulated by its own direct sum
/// over `x`, so the marginalization identities between them are real
/// floating-point checks rather than tautologies.
pub fn deriv_tensors(root: &DecoderRoot, prob: &IBProblem) -> Result<DerivTensors, DerivError> {
    let q = step_quantities(root, prob, root.beta())?;
    Ok(tensors_from_step(&q, prob))
}

/// Jacobian of the cycle map in the log-decoder chart.
#[derive(Debug, Clone)]
pub struct BaJacobian {
    /// Square matrix of side `T (|Y| + 1)`, indexed by [`didx`] and
    /// [`midx`].
    pub matrix: Array2<f64>,
    pub cluster_count: usize,
    pub ny: usize,
}

/// Closed-form Jacobian of one cycle step at `beta`, assembled from
/// the contraction tensors.
pub fn ba_jacobian_log_decoder(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<BaJacobian, DerivError> {
    let retagged = root.with_beta(beta)?;
    let q = step_quantities(&retagged, prob, beta)?;
    let tensors = tensors_from_step(&q, prob);
    let t_count = retagged.cluster_count();
    let ny = prob.ny();
    let n = t_count * (ny + 1);
    let mut j = Array2::zeros((n, n));
    for t in 0..t_count {
        for y in 0..ny {
            let row = didx(t, y, ny);
            for tp in 0..t_count {
                for yp in 0..ny {
                    let mut val = tensors.b[[t, tp, yp]]
                        - tensors.c[[t, tp, y, yp]] / q.dec[[y, t]];
                    if t == tp {
                        val += tensors.d[[t, y, yp]] - q.dec[[yp, t]];
                    }
                    j[[row, didx(tp, yp, ny)]] = beta * val;
                }
                j[[row, midx(tp, t_count, ny)]] = (1.0 - beta)
                    * (tensors.a[[t, tp]] - tensors.b[[t, tp, y]] / q.dec[[y, t]]);
            }
        }
    }
    for t in 0..t_count {
        let row = midx(t, t_count, ny);
        for tp in 0..t_count {
            for yp in 0..ny {
                let kron = if t == tp { q.dec[[yp, t]] } else { 0.0 };
                j[[row, didx(tp, yp, ny)]] = beta * (kron - tensors.b[[t, tp, yp]]);
            }
            let kron = if t == tp { 1.0 } else { 0.0 };
            j[[row, midx(tp, t_count, ny)]] = (1.0 - beta) * (kron - tensors.a[[t, tp]]);
        }
    }
    Ok(BaJacobian {
        matrix: j,
        cluster_count: t_count,
        ny,
    })
}

/// Partial derivative of the cycle map with respect to `beta`, in the
/// log-decoder chart. The divergences are taken against the input
/// decoder; everything else comes from the step the input generates.
pub fn beta_partials_log_decoder(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<Array1<f64>, DerivError> {
    let retagged = root.with_beta(beta)?;
    let q = step_quantities(&retagged, prob, beta)?;
    let d_in = divergence_matrix(&root.decoders(), prob);
    if let Some(((x, t), _)) = d_in.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(DerivError::BoundaryRoot { y: x, cluster: t });
    }
    let t_count = root.cluster_count();
    let ny = prob.ny();
    let nx = prob.nx();
    let pyx = prob.p_y_given_x();
    // dbar[x] = sum_t p(t|x) D(x,t), the encoder-averaged divergence
    let mut dbar = vec![0.0f64; nx];
    for x in 0..nx {
        for t in 0..t_count {
            dbar[x] += q.enc[[t, x]] * d_in[[x, t]];
        }
    }
    let mut out = Array1::zeros(t_count * (ny + 1));
    for t in 0..t_count {
        for y in 0..ny {
            let mut s = 0.0;
            for x in 0..nx {
                s += (1.0 - pyx[[y, x]] / q.dec[[y, t]])
                    * q.inv[[x, t]]
                    * (d_in[[x, t]] - dbar[x]);
            }
            out[didx(t, y, ny)] = s;
        }
        let mut s = 0.0;
        for x in 0..nx {
            s += q.inv[[x, t]] * (d_in[[x, t]] - dbar[x]);
        }
        out[midx(t, t_count, ny)] = -s;
    }
    Ok(out)
}

fn pack_log(dec: &Array2<f64>, mrg: &Array1<f64>) -> Array1<f64> {
    let (ny, t_count) = dec.dim();
    let mut out = Array1::zeros(t_count * (ny + 1));
    for t in 0..t_count {
        for y in 0..ny {
            out[didx(t, y, ny)] = dec[[y, t]].max(LOG_CLAMP).ln();
        }
        out[midx(t, t_count, ny)] = mrg[t].max(LOG_CLAMP).ln();
    }
    out
}

fn cycle_log(
    dec: &Array2<f64>,
    mrg: &Array1<f64>,
    prob: &IBProblem,
    beta: f64,
) -> Result<Array1<f64>, DerivError> {
    let (enc, _z) = encode_raw(&dec.view(), &mrg.view(), prob, beta)?;
    let (dec2, mrg2, _inv) = decode_raw(&enc.view(), prob)?;
    Ok(pack_log(&dec2, &mrg2))
}

/// Central finite differences of the cycle map along the chart
/// directions, for validating the closed-form Jacobian. A decoder
/// coordinate is bumped alone; a marginal coordinate is bumped
/// together with an opposite bump of its cluster's decoder
/// coordinates, matching the chart the closed form differentiates.
pub fn fd_jacobian_log_decoder(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
    step: f64,
) -> Result<Array2<f64>, DerivError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(DerivError::InvalidStep(step));
    }
    let t_count = root.cluster_count();
    let ny = root.ny();
    let n = t_count * (ny + 1);
    let dec0 = root.decoders().to_owned();
    let mrg0 = root.marginal().to_owned();
    let mut j = Array2::zeros((n, n));
    let eval = |dec: &Array2<f64>, mrg: &Array1<f64>| cycle_log(dec, mrg, prob, beta);
    for col in 0..n {
        let mut dec_p = dec0.clone();
        let mut mrg_p = mrg0.clone();
        let mut dec_m = dec0.clone();
        let mut mrg_m = mrg0.clone();
        if col < t_count * ny {
            let t = col / ny;
            let y = col % ny;
            dec_p[[y, t]] *= step.exp();
            dec_m[[y, t]] *= (-step).exp();
        } else {
            let t = col - t_count * ny;
            mrg_p[t] *= step.exp();
            mrg_m[t] *= (-step).exp();
            for y in 0..ny {
                dec_p[[y, t]] *= (-step).exp();
                dec_m[[y, t]] *= step.exp();
            }
        }
        let fp = eval(&dec_p, &mrg_p)?;
        let fm = eval(&dec_m, &mrg_m)?;
        for row in 0..n {
            j[[row, col]] = (fp[row] - fm[row]) / (2.0 * step);
        }
    }
    Ok(j)
}

/// Central finite differences of the cycle map in `beta`, for
/// validating the closed-form partials.
pub fn fd_beta_partials_log_decoder(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
    step: f64,
) -> Result<Array1<f64>, DerivError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(DerivError::InvalidStep(step));
    }
    let dec = root.decoders().to_owned();
    let mrg = root.marginal().to_owned();
    let fp = cycle_log(&dec, &mrg, prob, beta + step)?;
    let fm = cycle_log(&dec, &mrg, prob, beta - step)?;
    Ok((&fp - &fm) / (2.0 * step))
}

/// The reduced decoder-block sensitivity matrix of side `T |Y|`. Its
/// kernel of `I - S` has the same dimension as that of `I - J` for the
/// full Jacobian `J`, so it is the cheaper singularity probe.
pub fn s_matrix(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<Array2<f64>, DerivError> {
    let retagged = root.with_beta(beta)?;
    let q = step_quantities(&retagged, prob, beta)?;
    let t_count = root.cluster_count();
    let ny = prob.ny();
    let nx = prob.nx();
    let pyx = prob.p_y_given_x();
    let mut s = Array2::zeros((t_count * ny, t_count * ny));
    for t in 0..t_count {
        for y in 0..ny {
            for tp in 0..t_count {
                for yp in 0..ny {
                    let mut acc = 0.0;
                    for x in 0..nx {
                        let kron = if t == tp { 1.0 } else { 0.0 };
                        acc += q.inv[[x, t]]
                            * (beta * pyx[[y, x]] / q.dec[[y, t]] + 1.0 - 2.0 * beta)
                            * pyx[[yp, x]]
                            * (kron - q.enc[[tp, x]]);
                    }
                    s[[didx(t, y, ny), didx(tp, yp, ny)]] = acc;
                }
            }
        }
    }
    Ok(s)
}

/// Lifts a left-null vector of `I - S` to a left-null vector of
/// `I - J` by appending the marginal components
/// `u_t = (1 - beta)/beta * sum_y v_{t,y}`.
pub fn kernel_lift(
    v: &ArrayView1<f64>,
    cluster_count: usize,
    beta: f64,
) -> Result<Array1<f64>, DerivError> {
    if cluster_count == 0 || v.len() % cluster_count != 0 || v.is_empty() {
        return Err(DerivError::VectorLength {
            got: v.len(),
            expected: cluster_count.max(1),
        });
    }
    let ny = v.len() / cluster_count;
    let mut out = Array1::zeros(cluster_count * (ny + 1));
    for t in 0..cluster_count {
        let mut row_sum = 0.0;
        for y in 0..ny {
            out[didx(t, y, ny)] = v[didx(t, y, ny)];
            row_sum += v[didx(t, y, ny)];
        }
        out[midx(t, cluster_count, ny)] = (1.0 - beta) / beta * row_sum;
    }
    Ok(out)
}

/// Per-cluster source-space sensitivity matrix, `|X| x |X|`. Cluster
/// merging at a bifurcation shows up as an eigenvalue crossing
/// `1/beta`.
pub fn cx_matrix(
    root: &DecoderRoot,
    prob: &IBProblem,
    cluster: usize,
) -> Result<Array2<f64>, DerivError> {
    let t_count = root.cluster_count();
    if cluster >= t_count {
        return Err(DerivError::ClusterIndex {
            index: cluster,
            count: t_count,
        });
    }
    let q = step_quantities(root, prob, root.beta())?;
    let nx = prob.nx();
    let ny = prob.ny();
    let pyx = prob.p_y_given_x();
    let mut cx = Array2::zeros((nx, nx));
    for x in 0..nx {
        for xp in 0..nx {
            let mut acc = 0.0;
            for y in 0..ny {
                acc += pyx[[y, x]] * pyx[[y, xp]] * q.inv[[xp, cluster]]
                    / q.dec[[y, cluster]];
            }
            cx[[x, xp]] = acc;
        }
    }
    Ok(cx)
}

/// Converts a multiplier derivative from the log decoder chart to log
/// encoder coordinates: the `T x |X|` matrix `d log p(t|x) / d beta`.
pub fn exchange_dec_to_enc(
    v: &ArrayView1<f64>,
    root: &DecoderRoot,
    prob: &IBProblem,
) -> Result<Array2<f64>, DerivError> {
    let t_count = root.cluster_count();
    let ny = prob.ny();
    let n = t_count * (ny + 1);
    if v.len() != n {
        return Err(DerivError::VectorLength {
            got: v.len(),
            expected: n,
        });
    }
    let beta = root.beta();
    let q = step_quantities(root, prob, beta)?;
    let d_in = divergence_matrix(&root.decoders(), prob);
    if let Some(((x, t), _)) = d_in.indexed_iter().find(|(_, val)| !val.is_finite()) {
        return Err(DerivError::BoundaryRoot { y: x, cluster: t });
    }
    let nx = prob.nx();
    let pyx = prob.p_y_given_x();
    let mut out = Array2::zeros((t_count, nx));
    for x in 0..nx {
        // encoder-averaged pulls shared by every cluster for symbol x
        let mut avg_dec = 0.0;
        let mut avg_mrg = 0.0;
        let mut avg_div = 0.0;
        for tp in 0..t_count {
            let mut dot = 0.0;
            for yp in 0..ny {
                dot += pyx[[yp, x]] * v[didx(tp, yp, ny)];
            }
            avg_dec += q.enc[[tp, x]] * dot;
            avg_mrg += q.enc[[tp, x]] * v[midx(tp, t_count, ny)];
            avg_div += q.enc[[tp, x]] * d_in[[x, tp]];
        }
        for t in 0..t_count {
            let mut dot = 0.0;
            for yp in 0..ny {
                dot += pyx[[yp, x]] * v[didx(t, yp, ny)];
            }
            out[[t, x]] = beta * (dot - avg_dec)
                + (1.0 - beta) * (v[midx(t, t_count, ny)] - avg_mrg)
                + (avg_div - d_in[[x, t]]);
        }
    }
    Ok(out)
}

/// Converts a multiplier derivative in log encoder coordinates back to
/// the log decoder chart.
pub fn exchange_enc_to_dec(
    v_enc: &ArrayView2<f64>,
    root: &DecoderRoot,
    prob: &IBProblem,
) -> Result<Array1<f64>, DerivError> {
    let t_count = root.cluster_count();
    let ny = prob.ny();
    let nx = prob.nx();
    if v_enc.dim() != (t_count, nx) {
        return Err(DerivError::VectorLength {
            got: v_enc.len(),
            expected: t_count * nx,
        });
    }
    let q = step_quantities(root, prob, root.beta())?;
    let pyx = prob.p_y_given_x();
    let mut out = Array1::zeros(t_count * (ny + 1));
    for t in 0..t_count {
        for y in 0..ny {
            let mut s = 0.0;
            for x in 0..nx {
                s += (pyx[[y, x]] / q.dec[[y, t]] - 1.0) * q.inv[[x, t]] * v_enc[[t, x]];
            }
            out[didx(t, y, ny)] = s;
        }
        let mut s = 0.0;
        for x in 0..nx {
            s += q.inv[[x, t]] * v_enc[[t, x]];
        }
        out[midx(t, t_count, ny)] = s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba::test_fixtures::{asymmetric_problem, asymmetric_root};
    use crate::ba::{ba_iterate, random_encoder};
    use crate::numerics::{eigenvalues, sigma_min};
    use crate::oracles::{bsc_exact_derivative, bsc_exact_root, bsc_problem};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn tensor_marginalization_identities() {
        let prob = asymmetric_problem();
        let root = asymmetric_root(8.0, 3);
        let t = deriv_tensors(&root, &prob).unwrap();
        let q = step_quantities(&root, &prob, 8.0).unwrap();
        let nt = root.cluster_count();
        let ny = prob.ny();
        for i in 0..nt {
            for j in 0..nt {
                for y in 0..ny {
                    let c_sum: f64 = (0..ny).map(|yp| t.c[[i, j, y, yp]]).sum();
                    assert_abs_diff_eq!(c_sum, t.b[[i, j, y]], epsilon = 1e-12);
                }
                let b_sum: f64 = (0..ny).map(|y| t.b[[i, j, y]]).sum();
                assert_abs_diff_eq!(b_sum, t.a[[i, j]], epsilon = 1e-12);
            }
            let a_sum: f64 = (0..nt).map(|j| t.a[[i, j]]).sum();
            assert_abs_diff_eq!(a_sum, 1.0, epsilon = 1e-12);
            for y in 0..ny {
                let c_total: f64 = (0..nt)
                    .map(|j| (0..ny).map(|yp| t.c[[i, j, y, yp]]).sum::<f64>())
                    .sum();
                assert_abs_diff_eq!(c_total, q.dec[[y, i]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_chart_finite_differences_symmetric() {
        let prob = bsc_problem(0.3).unwrap();
        let sol = bsc_exact_root(0.3, 10.0).unwrap();
        let j = ba_jacobian_log_decoder(&sol.root, &prob, 10.0).unwrap();
        let fd = fd_jacobian_log_decoder(&sol.root, &prob, 10.0, 1e-6).unwrap();
        assert!(max_abs_diff(&j.matrix, &fd) < 1e-5);
    }

    #[test]
    fn jacobian_matches_chart_finite_differences_asymmetric() {
        let prob = asymmetric_problem();
        let root = asymmetric_root(8.0, 3);
        let j = ba_jacobian_log_decoder(&root, &prob, 8.0).unwrap();
        let fd = fd_jacobian_log_decoder(&root, &prob, 8.0, 1e-6).unwrap();
        assert!(max_abs_diff(&j.matrix, &fd) < 1e-5, "diff {}", max_abs_diff(&j.matrix, &fd));
    }

    #[test]
    fn jacobian_finite_differences_agree_off_root() {
        // the closed form holds for any interior pair, not only roots
        let prob = asymmetric_problem();
        let root = crate::probability::DecoderRoot::new(
            array![[0.5, 0.2, 0.3], [0.3, 0.5, 0.4], [0.2, 0.3, 0.3]],
            array![0.3, 0.3, 0.4],
            4.0,
        )
        .unwrap();
        let j = ba_jacobian_log_decoder(&root, &prob, 4.0).unwrap();
        let fd = fd_jacobian_log_decoder(&root, &prob, 4.0, 1e-6).unwrap();
        assert!(max_abs_diff(&j.matrix, &fd) < 1e-5, "diff {}", max_abs_diff(&j.matrix, &fd));
    }

    #[test]
    fn beta_partials_match_finite_differences() {
        let prob = asymmetric_problem();
        let root = asymmetric_root(8.0, 3);
        let bp = beta_partials_log_decoder(&root, &prob, 8.0).unwrap();
        let fd = fd_beta_partials_log_decoder(&root, &prob, 8.0, 1e-6).unwrap();
        let diff = bp
            .iter()
            .zip(fd.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-5, "diff {diff}");
    }

    #[test]
    fn sensitivity_matrix_goes_singular_at_the_bifurcation() {
        let prob = bsc_problem(0.3).unwrap();
        let near = bsc_exact_root(0.3, 6.26).unwrap();
        let far = bsc_exact_root(0.3, 10.0).unwrap();
        let s_near = s_matrix(&near.root, &prob, 6.26).unwrap();
        let s_far = s_matrix(&far.root, &prob, 10.0).unwrap();
        let n = s_near.nrows();
        let eye = Array2::eye(n);
        let sm_near = sigma_min(&(&eye - &s_near).view()).unwrap();
        let sm_far = sigma_min(&(&eye - &s_far).view()).unwrap();
        assert!(sm_near < 1e-2, "near {sm_near}");
        assert!(sm_far > 1e-1, "far {sm_far}");
        // frozen magnitude from the scalar branch equation
        assert_abs_diff_eq!(sm_near, 3.19e-3, epsilon = 7e-4);
    }

    #[test]
    fn kernel_nullity_matches_between_full_and_reduced_systems() {
        let prob = bsc_problem(0.3).unwrap();
        for beta in [6.26, 8.0] {
            let sol = bsc_exact_root(0.3, beta).unwrap();
            let s = s_matrix(&sol.root, &prob, beta).unwrap();
            let j = ba_jacobian_log_decoder(&sol.root, &prob, beta).unwrap();
            let eye_s = Array2::eye(s.nrows());
            let eye_j = Array2::eye(j.matrix.nrows());
            let sm_s = sigma_min(&(&eye_s - &s).view()).unwrap();
            let sm_j = sigma_min(&(&eye_j - &j.matrix).view()).unwrap();
            // both singular or both regular at the same threshold
            assert_eq!(sm_s < 1e-2, sm_j < 1e-2, "beta {beta}: {sm_s} vs {sm_j}");
        }
    }

    #[test]
    fn kernel_lift_preserves_left_residual_near_the_bifurcation() {
        let prob = bsc_problem(0.3).unwrap();
        // the singularity metric scales like 0.32 (beta - beta_c), so
        // residuals below 1e-6 need a root this close to critical
        let beta = 6.25 + 1e-8;
        let sol = bsc_exact_root(0.3, beta).unwrap();
        let s = s_matrix(&sol.root, &prob, beta).unwrap();
        let n = s.nrows();
        let eye = Array2::eye(n);
        let i_minus_s_t = (&eye - &s).t().to_owned();
        // inverse iteration on the transpose pulls out the left-null
        // direction of I - S
        let mut w = ndarray::Array1::from_elem(n, 1.0);
        w[0] += 0.5;
        for _ in 0..30 {
            let sol_step = crate::numerics::lu_solve(&i_minus_s_t.view(), &w.view()).unwrap();
            let norm = sol_step
                .solution
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            w = sol_step.solution.mapv(|v| v / norm);
        }
        let res_s = {
            let r = w.dot(&(&eye - &s));
            r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let lifted = kernel_lift(&w.view(), sol.root.cluster_count(), beta).unwrap();
        let j = ba_jacobian_log_decoder(&sol.root, &prob, beta).unwrap();
        let eye_j = Array2::eye(j.matrix.nrows());
        let res_j = {
            let r = lifted.dot(&(&eye_j - &j.matrix));
            r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        assert!(res_s < 1e-6, "reduced residual {res_s}");
        assert!(res_j < 1e-6, "lifted residual {res_j}");
        // side conditions: label sums and total mass drift vanish
        let ny = prob.ny();
        let t_count = sol.root.cluster_count();
        for y in 0..ny {
            let s_y: f64 = (0..t_count).map(|t| lifted[didx(t, y, ny)]).sum();
            assert_abs_diff_eq!(s_y, 0.0, epsilon = 1e-8);
        }
        let s_m: f64 = (0..t_count)
            .map(|t| lifted[midx(t, t_count, ny)])
            .sum();
        assert_abs_diff_eq!(s_m, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn source_sensitivity_eigenvalues_at_the_critical_multiplier() {
        let prob = bsc_problem(0.3).unwrap();
        let sol = bsc_exact_root(0.3, 6.25).unwrap();
        let cx = cx_matrix(&sol.root, &prob, 0).unwrap();
        let eigs = eigenvalues(&cx.view()).unwrap();
        assert_abs_diff_eq!(eigs[0].re, 0.16, epsilon = 1e-10);
        assert_abs_diff_eq!(eigs[1].re, 1.0, epsilon = 1e-10);
        // the merging eigenvalue equals 1/beta exactly at the critical
        // multiplier
        assert_abs_diff_eq!(eigs[0].re, 1.0 / 6.25, epsilon = 1e-10);
    }

    #[test]
    fn source_sensitivity_transpose_identity() {
        let prob = asymmetric_problem();
        let root = asymmetric_root(8.0, 3);
        let cx = cx_matrix(&root, &prob, 1).unwrap();
        // independently coded transpose-form accumulation
        let q = step_quantities(&root, &prob, 8.0).unwrap();
        let pyx = prob.p_y_given_x();
        let nx = prob.nx();
        let mut v = Array2::zeros((nx, nx));
        for x in 0..nx {
            for xp in 0..nx {
                let mut acc = 0.0;
                for y in 0..prob.ny() {
                    acc += pyx[[y, xp]] * pyx[[y, x]] * q.inv[[x, 1]] / q.dec[[y, 1]];
                }
                v[[x, xp]] = acc;
            }
        }
        assert!(max_abs_diff(&v, &cx.t().to_owned()) < 1e-14);
    }

    #[test]
    fn exchange_matches_the_closed_form_encoder_derivative() {
        let prob = bsc_problem(0.3).unwrap();
        let sol = bsc_exact_root(0.3, 10.0).unwrap();
        let d = bsc_exact_derivative(0.3, 10.0).unwrap();
        let v_enc = exchange_dec_to_enc(&d.v_log_decoder.view(), &sol.root, &prob).unwrap();
        for t in 0..2 {
            for x in 0..2 {
                let want = d.d_encoder_dbeta[[t, x]] / sol.encoder.p()[[t, x]];
                assert_abs_diff_eq!(v_enc[[t, x]], want, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn exchange_round_trip_along_the_exact_path() {
        let prob = bsc_problem(0.3).unwrap();
        let sol = bsc_exact_root(0.3, 10.0).unwrap();
        let d = bsc_exact_derivative(0.3, 10.0).unwrap();
        let v_enc = exchange_dec_to_enc(&d.v_log_decoder.view(), &sol.root, &prob).unwrap();
        let back = exchange_enc_to_dec(&v_enc.view(), &sol.root, &prob).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(back[k], d.v_log_decoder[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn at_unit_multiplier_the_exchange_ignores_marginal_components() {
        let prob = asymmetric_problem();
        let init = random_encoder(2, 3, 5).unwrap();
        let res = ba_iterate(&init, &prob, 1.0, 1e-12, 100_000).unwrap();
        let root = res.root;
        let n = root.cluster_count() * (prob.ny() + 1);
        let mut v1 = ndarray::Array1::zeros(n);
        let mut v2 = ndarray::Array1::zeros(n);
        for k in 0..root.cluster_count() * prob.ny() {
            v1[k] = 0.1 * (k as f64 + 1.0);
            v2[k] = v1[k];
        }
        for t in 0..root.cluster_count() {
            v2[midx(t, root.cluster_count(), prob.ny())] = 7.0 - t as f64;
        }
        let a = exchange_dec_to_enc(&v1.view(), &root, &prob).unwrap();
        let b = exchange_dec_to_enc(&v2.view(), &root, &prob).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn boundary_roots_are_rejected() {
        let prob = crate::oracles::decomposable_problem();
        let root = crate::probability::DecoderRoot::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            array![0.3, 0.7],
            2.0,
        )
        .unwrap();
        assert!(matches!(
            ba_jacobian_log_decoder(&root, &prob, 2.0),
            Err(DerivError::BoundaryRoot { .. })
        ));
    }

    #[test]
    fn index_helpers_cover_the_chart_without_collision() {
        let t_count = 3;
        let ny = 4;
        let mut seen = vec![false; t_count * (ny + 1)];
        for t in 0..t_count {
            for y in 0..ny {
                seen[didx(t, y, ny)] = true;
            }
            seen[midx(t, t_count, ny)] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn kernel_lift_validates_shape() {
        let v = ndarray::Array1::zeros(5);
        assert!(matches!(
            kernel_lift(&v.view(), 2, 2.0),
            Err(DerivError::VectorLength { .. })
        ));
    }
}
