//! The self-consistent fixed-point iteration on encoders and its
//! decoder-coordinate cycle map.
//!
//! One cycle maps a decoder pair `(p(y|t), p(t))` to an encoder by the
//! Gibbs rule
//!
//! ```text
//! p(t|x) = p(t) exp(-beta D(x,t)) / Z(x),   D(x,t) = KL(p(y|x) || p(y|t))
//! ```
//!
//! and back to a decoder pair through the cluster marginal and Bayes
//! inversion. Roots of the iteration at a given `beta` are the
//! stationary points the rest of the crate differentiates and tracks.

use crate::probability::{DecoderRoot, Encoder, IBProblem, ProbabilityError};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default convergence threshold on the encoder sup-norm change.
pub const DEFAULT_STOP: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Error)]
pub enum BaError {
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
    #[error("cluster {index} lost all mass")]
    ZeroMassCluster { index: usize },
    #[error("source symbol {index} has no cluster with finite divergence")]
    NoFeasibleCluster { index: usize },
    #[error("beta = {0} must be positive and finite")]
    InvalidBeta(f64),
    #[error("stop threshold {0} must be positive")]
    InvalidStop(f64),
    #[error("iteration cap must be positive")]
    ZeroMaxIter,
    #[error("operands have {got} labels, problem has {expected}")]
    LabelMismatch { got: usize, expected: usize },
    #[error("operands have {got} source symbols, problem has {expected}")]
    SourceMismatch { got: usize, expected: usize },
}

/// Outcome of running the fixed-point iteration.
#[derive(Debug, Clone)]
pub struct BaResult {
    pub root: DecoderRoot,
    pub encoder: Encoder,
    /// Bayes inverse `p(x|t)` of the final encoder, `|X| x T`.
    pub inverse_encoder: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last sup-norm change of the encoder.
    pub final_change: f64,
}

fn check_beta(beta: f64) -> Result<(), BaError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(BaError::InvalidBeta(beta))
    }
}

/// Divergences `D(x,t) = KL(p(y|x) || p(y|t))`. A zero decoder entry
/// under positive channel mass yields `+inf`, which downstream turns
/// into a zero encoder entry rather than an error.
pub(crate) fn divergence_matrix(dec: &ArrayView2<f64>, prob: &IBProblem) -> Array2<f64> {
    let pyx = prob.p_y_given_x();
    let (ny, t) = dec.dim();
    let nx = prob.nx();
    let mut d = Array2::zeros((nx, t));
    for x in 0..nx {
        for c in 0..t {
            let mut sum = 0.0;
            for y in 0..ny {
                let p = pyx[[y, x]];
                if p > 0.0 {
                    let q = dec[[y, c]];
                    if q > 0.0 {
                        sum += p * (p / q).ln();
                    } else {
                        sum = f64::INFINITY;
                        break;
                    }
                }
            }
            d[[x, c]] = sum;
        }
    }
    d
}

/// Gibbs step: decoder pair to encoder, plus the partition values
/// `Z(x)`. Accepts raw views so callers may evaluate the map slightly
/// off the simplex.
pub(crate) fn encode_raw(
    dec: &ArrayView2<f64>,
    mrg: &ArrayView1<f64>,
    prob: &IBProblem,
    beta: f64,
) -> Result<(Array2<f64>, Array1<f64>), BaError> {
    let t = mrg.len();
    let nx = prob.nx();
    let d = divergence_matrix(dec, prob);
    let mut enc = Array2::zeros((t, nx));
    let mut z = Array1::zeros(nx);
    for x in 0..nx {
        let mut logits = vec![f64::NEG_INFINITY; t];
        let mut top = f64::NEG_INFINITY;
        for c in 0..t {
            if mrg[c] > 0.0 && d[[x, c]].is_finite() {
                logits[c] = mrg[c].ln() - beta * d[[x, c]];
                top = top.max(logits[c]);
            }
        }
        if top == f64::NEG_INFINITY {
            return Err(BaError::NoFeasibleCluster { index: x });
        }
        let mut sum = 0.0;
        for c in 0..t {
            let e = (logits[c] - top).exp();
            enc[[c, x]] = e;
            sum += e;
        }
        for c in 0..t {
            enc[[c, x]] /= sum;
        }
        z[x] = (top + sum.ln()).exp();
    }
    Ok((enc, z))
}

/// Marginal, Bayes inverse and decoder induced by an encoder.
pub(crate) fn decode_raw(
    enc: &ArrayView2<f64>,
    prob: &IBProblem,
) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>), BaError> {
    let (t, nx) = enc.dim();
    let px = prob.p_x();
    let pyx = prob.p_y_given_x();
    let ny = prob.ny();
    let mut mrg = Array1::zeros(t);
    for c in 0..t {
        for x in 0..nx {
            mrg[c] += enc[[c, x]] * px[x];
        }
    }
    let mut inv = Array2::zeros((nx, t));
    for c in 0..t {
        if mrg[c] <= 0.0 {
            return Err(BaError::ZeroMassCluster { index: c });
        }
        for x in 0..nx {
            inv[[x, c]] = enc[[c, x]] * px[x] / mrg[c];
        }
    }
    let mut dec = Array2::zeros((ny, t));
    for c in 0..t {
        for y in 0..ny {
            let mut s = 0.0;
            for x in 0..nx {
                s += pyx[[y, x]] * inv[[x, c]];
            }
            dec[[y, c]] = s;
        }
    }
    // normalize the marginal so raw off-simplex inputs still produce a
    // valid pair; on-simplex inputs are unchanged up to rounding
    let total = mrg.sum();
    mrg.mapv_inplace(|v| v / total);
    Ok((dec, mrg, inv))
}

fn check_encoder(enc: &Encoder, prob: &IBProblem) -> Result<(), BaError> {
    if enc.nx() != prob.nx() {
        return Err(BaError::SourceMismatch {
            got: enc.nx(),
            expected: prob.nx(),
        });
    }
    Ok(())
}

fn check_root(root: &DecoderRoot, prob: &IBProblem) -> Result<(), BaError> {
    if root.ny() != prob.ny() {
        return Err(BaError::LabelMismatch {
            got: root.ny(),
            expected: prob.ny(),
        });
    }
    Ok(())
}

/// Decoder pair and Bayes inverse generated by an encoder.
pub fn decoder_from_encoder(
    enc: &Encoder,
    prob: &IBProblem,
    beta: f64,
) -> Result<(DecoderRoot, Array2<f64>), BaError> {
    check_encoder(enc, prob)?;
    check_beta(beta)?;
    let (dec, mrg, inv) = decode_raw(&enc.p(), prob)?;
    Ok((DecoderRoot::new(dec, mrg, beta)?, inv))
}

/// Gibbs encoder of a decoder pair at the root's own multiplier, plus
/// the partition values `Z(x)`.
pub fn encoder_from_decoder(
    root: &DecoderRoot,
    prob: &IBProblem,
) -> Result<(Encoder, Array1<f64>), BaError> {
    check_root(root, prob)?;
    let (enc, z) = encode_raw(&root.decoders(), &root.marginal(), prob, root.beta())?;
    Ok((Encoder::new(enc)?, z))
}

/// One full cycle in decoder coordinates: decoder pair to encoder to
/// decoder pair, evaluated at `beta`.
pub fn ba_step_decoder(
    root: &DecoderRoot,
    prob: &IBProblem,
    beta: f64,
) -> Result<DecoderRoot, BaError> {
    check_root(root, prob)?;
    check_beta(beta)?;
    let (enc, _z) = encode_raw(&root.decoders(), &root.marginal(), prob, beta)?;
    let (dec, mrg, _inv) = decode_raw(&enc.view(), prob)?;
    Ok(DecoderRoot::new(dec, mrg, beta)?)
}

/// Runs the fixed-point iteration from `init` until the encoder change
/// drops below `stop` in sup norm or `max_iter` is reached.
pub fn ba_iterate(
    init: &Encoder,
    prob: &IBProblem,
    beta: f64,
    stop: f64,
    max_iter: usize,
) -> Result<BaResult, BaError> {
    check_encoder(init, prob)?;
    check_beta(beta)?;
    if !(stop.is_finite() && stop > 0.0) {
        return Err(BaError::InvalidStop(stop));
    }
    if max_iter == 0 {
        return Err(BaError::ZeroMaxIter);
    }
    let mut enc = init.p().to_owned();
    let mut iterations = 0;
    let mut converged = false;
    let mut final_change = f64::INFINITY;
    while iterations < max_iter {
        let (dec, mrg, _inv) = decode_raw(&enc.view(), prob)?;
        let (enc_new, _z) = encode_raw(&dec.view(), &mrg.view(), prob, beta)?;
        let change = enc_new
            .iter()
            .zip(enc.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        enc = enc_new;
        iterations += 1;
        final_change = change;
        if change < stop {
            converged = true;
            break;
        }
    }
    let (dec, mrg, inv) = decode_raw(&enc.view(), prob)?;
    let root = DecoderRoot::new(dec, mrg, beta)?;
    Ok(BaResult {
        root,
        encoder: Encoder::new(enc)?,
        inverse_encoder: inv,
        iterations,
        converged,
        final_change,
    })
}

/// The maximum-entropy encoder: every symbol spread evenly over `t`
/// clusters.
pub fn uniform_encoder(t: usize, nx: usize) -> Result<Encoder, ProbabilityError> {
    if t == 0 {
        return Err(ProbabilityError::EmptyAlphabet("cluster"));
    }
    Encoder::new(Array2::from_elem((t, nx), 1.0 / t as f64))
}

/// A reproducible random encoder: each column drawn uniformly from the
/// simplex via normalized exponentials.
pub fn random_encoder(t: usize, nx: usize, seed: u64) -> Result<Encoder, ProbabilityError> {
    if t == 0 {
        return Err(ProbabilityError::EmptyAlphabet("cluster"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array2::zeros((t, nx));
    for x in 0..nx {
        let mut sum = 0.0;
        for c in 0..t {
            let u: f64 = rng.random();
            let e = -(1.0 - u).ln();
            p[[c, x]] = e;
            sum += e;
        }
        for c in 0..t {
            p[[c, x]] /= sum;
        }
    }
    Encoder::new(p)
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;
    use ndarray::array;

    /// Strictly positive asymmetric 3x3 problem used across modules.
    pub fn asymmetric_problem() -> IBProblem {
        IBProblem::new(
            array![
                [0.60, 0.20, 0.25],
                [0.30, 0.50, 0.35],
                [0.10, 0.30, 0.40]
            ],
            array![0.2, 0.5, 0.3],
        )
        .unwrap()
    }

    /// A converged interior root of the asymmetric problem.
    pub fn asymmetric_root(beta: f64, t: usize) -> DecoderRoot {
        let prob = asymmetric_problem();
        let init = random_encoder(t, 3, 11).unwrap();
        let res = ba_iterate(&init, &prob, beta, 1e-14, 200_000).unwrap();
        assert!(res.converged);
        res.root
    }
}
