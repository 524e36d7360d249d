//! Analytical reference solutions used to validate the solver.
//!
//! Three independent sources of ground truth:
//! * the binary symmetric channel, whose nontrivial roots reduce to a
//!   scalar equation for the encoder flip rate and whose information
//!   curve has a closed form,
//! * a decomposable two-symbol problem (identity channel) whose roots
//!   are hard clusterings,
//! * brute-force minimization of the clustering objective over a
//!   simplex grid of encoders, independent of any fixed-point
//!   iteration.

use crate::ba::{ba_step_decoder, BaError};
use crate::probability::{
    mutual_informations, DecoderRoot, Encoder, IBProblem, ProbabilityError,
};
use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("alpha = {0} must lie strictly between 0 and 1/2")]
    InvalidAlpha(f64),
    #[error("beta = {0} must be positive and finite")]
    InvalidBeta(f64),
    #[error("no nontrivial branch at beta = {beta}: the critical multiplier is {beta_c}")]
    TrivialBranch { beta: f64, beta_c: f64 },
    #[error("i_x = {0} lies outside [0, ln 2]")]
    InfoOutOfRange(f64),
    #[error("resolution must be at least 1")]
    ZeroResolution,
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("grid would hold {points} encoders, cap is {cap}")]
    GridTooLarge { points: u128, cap: u128 },
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
    #[error(transparent)]
    Ba(#[from] BaError),
}

/// Binary convolution `a * b = a(1-b) + b(1-a)`.
pub fn binary_convolve(a: f64, b: f64) -> f64 {
    a * (1.0 - b) + b * (1.0 - a)
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// Inverse of [`binary_entropy`] on `[0, 1/2]`.
pub fn binary_entropy_inverse(h: f64) -> Result<f64, OracleError> {
    let ln2 = std::f64::consts::LN_2;
    if !(h.is_finite() && (-1e-12..=ln2 + 1e-12).contains(&h)) {
        return Err(OracleError::InfoOutOfRange(h));
    }
    let target = h.clamp(0.0, ln2);
    let mut lo = 0.0f64;
    let mut hi = 0.5f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_alpha(alpha: f64) -> Result<(), OracleError> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(OracleError::InvalidAlpha(alpha))
    }
}

fn check_beta(beta: f64) -> Result<(), OracleError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidBeta(beta))
    }
}

/// The binary symmetric channel with crossover `alpha` and a uniform
/// source.
pub fn bsc_problem(alpha: f64) -> Result<IBProblem, OracleError> {
    check_alpha(alpha)?;
    Ok(IBProblem::new(
        ndarray::array![[1.0 - alpha, alpha], [alpha, 1.0 - alpha]],
        ndarray::array![0.5, 0.5],
    )?)
}

/// Multiplier at which the nontrivial branch of the symmetric channel
/// is born: `1 / (1 - 2 alpha)^2`.
pub fn bsc_beta_c(alpha: f64) -> Result<f64, OracleError> {
    check_alpha(alpha)?;
    let s = 1.0 - 2.0 * alpha;
    Ok(1.0 / (s * s))
}

/// Exact symmetric-channel solution at one multiplier.
#[derive(Debug, Clone)]
pub struct BscSolution {
    pub alpha: f64,
    pub beta: f64,
    pub beta_c: f64,
    /// Encoder flip rate; `1/2` on the trivial branch.
    pub delta: f64,
    pub encoder: Encoder,
    pub root: DecoderRoot,
}

fn bsc_branch_equation(alpha: f64, beta: f64, delta: f64) -> f64 {
    let m = binary_convolve(alpha, delta);
    beta * (1.0 - 2.0 * alpha) * ((1.0 - m) / m).ln() - ((1.0 - delta) / delta).ln()
}

fn bsc_delta(alpha: f64, beta: f64) -> f64 {
    // the flip rate solves
    //   beta (1-2a) ln[(1-a*d)/(a*d)] = ln[(1-d)/d]
    // on (0, 1/2); the left side wins near 1/2 exactly when beta
    // exceeds the critical multiplier, so bisection brackets the
    // nontrivial solution
    let mut lo = 1e-16;
    let mut hi = 0.5 - 1e-16;
    let mut flo = bsc_branch_equation(alpha, beta, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = bsc_branch_equation(alpha, beta, mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn bsc_solution_from_delta(
    alpha: f64,
    beta: f64,
    beta_c: f64,
    delta: f64,
) -> Result<BscSolution, OracleError> {
    let m = binary_convolve(alpha, delta);
    let encoder = Encoder::new(ndarray::array![
        [1.0 - delta, delta],
        [delta, 1.0 - delta]
    ])?;
    let root = DecoderRoot::new(
        ndarray::array![[1.0 - m, m], [m, 1.0 - m]],
        ndarray::array![0.5, 0.5],
        beta,
    )?;
    Ok(BscSolution {
        alpha,
        beta,
        beta_c,
        delta,
        encoder,
        root,
    })
}

/// Exact root of the symmetric channel at `beta`. Below the critical
/// multiplier only the trivial branch exists and the flip rate is
/// `1/2`.
pub fn bsc_exact_root(alpha: f64, beta: f64) -> Result<BscSolution, OracleError> {
    check_alpha(alpha)?;
    check_beta(beta)?;
    let beta_c = bsc_beta_c(alpha)?;
    let delta = if beta <= beta_c {
        0.5
    } else {
        bsc_delta(alpha, beta)
    };
    bsc_solution_from_delta(alpha, beta, beta_c, delta)
}

/// Exact multiplier derivative of the symmetric-channel root path.
#[derive(Debug, Clone)]
pub struct BscDerivative {
    /// Derivative of the root in log decoder coordinates, ordered as
    /// [`crate::deriv::didx`] then [`crate::deriv::midx`]. The marginal
    /// slots are zero by symmetry.
    pub v_log_decoder: Array1<f64>,
    /// Plain derivative of the encoder entries, `T x |X|`.
    pub d_encoder_dbeta: Array2<f64>,
    /// Derivative of the flip rate.
    pub d_delta_dbeta: f64,
}

/// Closed-form derivative of the nontrivial branch. Errors at or below
/// the critical multiplier where that branch does not exist.
pub fn bsc_exact_derivative(alpha: f64, beta: f64) -> Result<BscDerivative, OracleError> {
    check_alpha(alpha)?;
    check_beta(beta)?;
    let beta_c = bsc_beta_c(alpha)?;
    if beta <= beta_c {
        return Err(OracleError::TrivialBranch { beta, beta_c });
    }
    let delta = bsc_delta(alpha, beta);
    let s = 1.0 - 2.0 * alpha;
    let m = binary_convolve(alpha, delta);
    // beta(d) = g(d) / (s f(d)) with g = ln((1-d)/d), f = ln((1-m)/m),
    // differentiated in closed form and inverted
    let g = ((1.0 - delta) / delta).ln();
    let f = ((1.0 - m) / m).ln();
    let gp = -1.0 / (delta * (1.0 - delta));
    let fp = -s / (m * (1.0 - m));
    let d_beta_d_delta = (gp * f - g * fp) / (s * f * f);
    let d_delta_dbeta = 1.0 / d_beta_d_delta;
    let dm = s * d_delta_dbeta;
    let mut v = Array1::zeros(6);
    v[0] = -dm / (1.0 - m);
    v[1] = dm / m;
    v[2] = dm / m;
    v[3] = -dm / (1.0 - m);
    let d_encoder_dbeta = ndarray::array![
        [-d_delta_dbeta, d_delta_dbeta],
        [d_delta_dbeta, -d_delta_dbeta]
    ];
    Ok(BscDerivative {
        v_log_decoder: v,
        d_encoder_dbeta,
        d_delta_dbeta,
    })
}

/// The exact information curve of the symmetric channel: the largest
/// `I(Y;T)` attainable at a given `I(X;T)`, both in nats.
pub fn mrs_gerber_curve(alpha: f64, i_x: f64) -> Result<f64, OracleError> {
    check_alpha(alpha)?;
    let ln2 = std::f64::consts::LN_2;
    if !(i_x.is_finite() && (-1e-12..=ln2 + 1e-12).contains(&i_x)) {
        return Err(OracleError::InfoOutOfRange(i_x));
    }
    let delta = binary_entropy_inverse(ln2 - i_x.clamp(0.0, ln2))?;
    Ok(ln2 - binary_entropy(binary_convolve(alpha, delta)))
}

/// A two-symbol problem that decomposes: the channel is the identity,
/// so optimal clusterings are hard and every tradeoff point is a
/// corner.
pub fn decomposable_problem() -> IBProblem {
    IBProblem::new(
        ndarray::array![[1.0, 0.0], [0.0, 1.0]],
        ndarray::array![0.3, 0.7],
    )
    .expect("fixed valid distributions")
}

const BRUTE_FORCE_CAP: u128 = 50_000_000;

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, idx: usize, left: u32) {
        if idx + 1 == cur.len() {
            cur[idx] = left;
            out.push(cur.clone());
            return;
        }
        for k in (0..=left).rev() {
            cur[idx] = k;
            rec(out, cur, idx + 1, left - k);
        }
    }
    rec(&mut out, &mut cur, 0, total);
    out
}

/// Exhaustive minimization of `I(X;T) - beta I(Y;T)` over all encoders
/// whose columns live on the simplex grid with `resolution` levels.
/// Returns the best grid encoder and its objective value. Ties keep
/// the first encoder in enumeration order, so results are
/// deterministic.
pub fn brute_force_root(
    prob: &IBProblem,
    beta: f64,
    t: usize,
    resolution: u32,
) -> Result<(Encoder, f64), OracleError> {
    check_beta(beta)?;
    if t == 0 {
        return Err(OracleError::ZeroClusters);
    }
    if resolution == 0 {
        return Err(OracleError::ZeroResolution);
    }
    let nx = prob.nx();
    let cols = compositions(resolution, t);
    let k = cols.len() as u128;
    let points = k
        .checked_pow(nx as u32)
        .unwrap_or(u128::MAX);
    if points > BRUTE_FORCE_CAP {
        return Err(OracleError::GridTooLarge {
            points,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let scale = 1.0 / resolution as f64;
    let mut best: Option<(Encoder, f64)> = None;
    let mut odometer = vec![0usize; nx];
    loop {
        let mut p = Array2::zeros((t, nx));
        for (x, &ci) in odometer.iter().enumerate() {
            for (c, &mass) in cols[ci].iter().enumerate() {
                p[[c, x]] = mass as f64 * scale;
            }
        }
        let enc = Encoder::new(p)?;
        let info = mutual_informations(&enc, prob)?;
        let value = info.i_x - beta * info.i_y;
        if best.as_ref().map_or(true, |(_, b)| value < *b) {
            best = Some((enc, value));
        }
        // advance the per-symbol column indices like an odometer
        let mut x = 0;
        loop {
            if x == nx {
                let (enc, value) = best.expect("grid has at least one point");
                return Ok((enc, value));
            }
            odometer[x] += 1;
            if odometer[x] < cols.len() {
                break;
            }
            odometer[x] = 0;
            x += 1;
        }
    }
}

/// Verifies the exact symmetric-channel root against the fixed-point
/// map, for use in tests of other components.
pub fn bsc_root_residual(sol: &BscSolution, prob: &IBProblem) -> Result<f64, OracleError> {
    let next = ba_step_decoder(&sol.root, prob, sol.beta)?;
    let mut r = 0.0f64;
    for y in 0..2 {
        for c in 0..2 {
            r = r.max((next.decoders()[[y, c]] - sol.root.decoders()[[y, c]]).abs());
        }
    }
    for c in 0..2 {
        r = r.max((next.marginal()[c] - sol.root.marginal()[c]).abs());
    }
    Ok(r)
}
