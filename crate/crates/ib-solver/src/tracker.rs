//! Root tracking along the multiplier: Euler prediction in log
//! coordinates, fixed-point correction, reduction bookkeeping, and the
//! merge heuristic for continuous bifurcations.
//!
//! The driver marches a grid `beta_0, beta_0 + dbeta, ...` with
//! `dbeta < 0`. Per grid point it solves the root flow, takes an Euler
//! step, re-canonicalizes the root, and applies a configurable number
//! of fixed-point corrections at the new multiplier. When the
//! singularity metric collapses it instead fuses the two fastest
//! clusters and re-converges, stepping over the bifurcation rather
//! than into it.

use crate::ba::{ba_iterate, ba_step_decoder, encoder_from_decoder, BaError};
use crate::deriv::didx;
use crate::ode::{solve_ib_ode_unchecked, OdeError, OdeSolution};
use crate::probability::{
    mutual_informations, DecoderRoot, IBProblem, InfoPoint, ProbabilityError,
};
use crate::reduction::{reduce_root, ReductionError};
use ndarray::{Array1, Array2};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
    #[error(transparent)]
    Ba(#[from] BaError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error("step size {0} must be finite and strictly negative")]
    InvalidStep(f64),
    #[error("configuration field {name} = {value} is out of range")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error("velocity has length {got}, expected {expected}")]
    VelocityLength { got: usize, expected: usize },
    #[error("velocity contains a non-finite component")]
    NonFiniteVelocity,
    #[error("euler step overflows the log coordinates")]
    StepTooLarge,
    #[error("cannot merge clusters of a single-cluster root")]
    CannotReduce,
    #[error("target {target} is outside the step bracket around {base}")]
    OffGridRange { target: f64, base: f64 },
}

/// Knobs of the tracking loop.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Grid step, strictly negative.
    pub delta_beta: f64,
    /// Mass threshold below which a cluster is deleted.
    pub delta1: f64,
    /// Sup-norm decoder gap below which clusters are fused.
    pub delta2: f64,
    /// Singularity-metric threshold that triggers the merge heuristic.
    pub delta3: f64,
    /// Convergence threshold for full fixed-point runs.
    pub ba_stop: f64,
    /// Iteration cap for full fixed-point runs.
    pub ba_max_iter: usize,
    /// Fixed-point corrections applied at every new grid point;
    /// 0 gives the vanilla Euler method, 1 the modified one.
    pub corrector_steps: usize,
    /// With the check off the loop never invokes the merge heuristic
    /// and relies on reduction alone.
    pub singularity_check: bool,
}

impl TrackerConfig {
    pub fn new(delta_beta: f64) -> Self {
        Self {
            delta_beta,
            delta1: 1e-2,
            delta2: 1e-2,
            delta3: crate::ode::SINGULAR_THRESHOLD_DEFAULT,
            ba_stop: crate::ba::DEFAULT_STOP,
            ba_max_iter: crate::ba::DEFAULT_MAX_ITER,
            corrector_steps: 1,
            singularity_check: true,
        }
    }

    fn validate(&self) -> Result<(), TrackerError> {
        if !(self.delta_beta.is_finite() && self.delta_beta < 0.0) {
            return Err(TrackerError::InvalidStep(self.delta_beta));
        }
        for (name, value) in [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
        ] {
            if !(value.is_finite() && value > 0.0 && value < 1.0) {
                return Err(TrackerError::InvalidThreshold { name, value });
            }
        }
        if !(self.ba_stop.is_finite() && self.ba_stop > 0.0) {
            return Err(TrackerError::InvalidThreshold {
                name: "ba_stop",
                value: self.ba_stop,
            });
        }
        if self.ba_max_iter == 0 {
            return Err(TrackerError::InvalidThreshold {
                name: "ba_max_iter",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// How a grid point was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackEvent {
    /// Plain predictor-corrector step.
    None,
    /// Reduction changed the cluster set on arrival.
    Reduced,
    /// The merge heuristic stepped over a bifurcation.
    SingularityHandled,
    /// The root is trivial without any step having collapsed it.
    ConvergedTrivial,
}

impl fmt::Display for TrackEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrackEvent::None => "none",
            TrackEvent::Reduced => "reduced",
            TrackEvent::SingularityHandled => "singularity_handled",
            TrackEvent::ConvergedTrivial => "converged_trivial",
        };
        f.write_str(s)
    }
}

/// One grid point of a tracking run.
#[derive(Debug, Clone)]
pub struct TrackRecord {
    pub beta: f64,
    pub root: DecoderRoot,
    pub info: InfoPoint,
    pub event: TrackEvent,
    /// Condition estimate of the flow solve at this grid point.
    pub ode_condition: f64,
    /// Singularity metric at this grid point.
    pub singular_metric: f64,
    /// False when a full fixed-point run on the way here hit its
    /// iteration cap; tracking continues from the last iterate.
    pub ba_converged: bool,
}

/// Advances a root by `delta_beta` along the flow `v`: log coordinates
/// move linearly, then everything is exponentiated and renormalized.
/// `delta_beta = 0` reproduces the root exactly.
pub fn euler_step(
    root: &DecoderRoot,
    sol: &OdeSolution,
    delta_beta: f64,
) -> Result<DecoderRoot, TrackerError> {
    if !delta_beta.is_finite() {
        return Err(TrackerError::InvalidStep(delta_beta));
    }
    let coords = root.log_coordinates();
    if sol.v.len() != coords.len() {
        return Err(TrackerError::VelocityLength {
            got: sol.v.len(),
            expected: coords.len(),
        });
    }
    if sol.v.iter().any(|v| !v.is_finite()) {
        return Err(TrackerError::NonFiniteVelocity);
    }
    let moved = &coords + &(delta_beta * &sol.v);
    // exp overflows past ln(f64::MAX) ~ 709.8
    if moved.iter().any(|&c| !c.is_finite() || c > 700.0) {
        return Err(TrackerError::StepTooLarge);
    }
    Ok(DecoderRoot::from_log_coordinates(
        &moved.view(),
        root.ny(),
        root.beta() + delta_beta,
    )?)
}

/// Fuses the two clusters with the largest decoder velocity in sup
/// norm into their unweighted mean at the lower index, summing masses.
/// Ties break toward ascending index.
pub(crate) fn merge_fastest_pair(
    root: &DecoderRoot,
    v: &Array1<f64>,
) -> Result<(Array2<f64>, Array1<f64>, (usize, usize)), TrackerError> {
    let t_count = root.cluster_count();
    let ny = root.ny();
    if t_count < 2 {
        return Err(TrackerError::CannotReduce);
    }
    if v.len() != t_count * (ny + 1) {
        return Err(TrackerError::VelocityLength {
            got: v.len(),
            expected: t_count * (ny + 1),
        });
    }
    let speed = |t: usize| -> f64 {
        (0..ny).fold(0.0f64, |m, y| m.max(v[didx(t, y, ny)].abs()))
    };
    let mut order: Vec<usize> = (0..t_count).collect();
    order.sort_by(|&a, &b| speed(b).total_cmp(&speed(a)));
    let (i, j) = (order[0].min(order[1]), order[0].max(order[1]));

    let dec = root.decoders();
    let mrg = root.marginal();
    let mut dec_out = Array2::zeros((ny, t_count - 1));
    let mut mrg_out = Array1::zeros(t_count - 1);
    let mut k = 0;
    for t in 0..t_count {
        if t == j {
            continue;
        }
        if t == i {
            for y in 0..ny {
                dec_out[[y, k]] = 0.5 * (dec[[y, i]] + dec[[y, j]]);
            }
            mrg_out[k] = mrg[i] + mrg[j];
        } else {
            dec_out.column_mut(k).assign(&dec.column(t));
            mrg_out[k] = mrg[t];
        }
        k += 1;
    }
    Ok((dec_out, mrg_out, (i, j)))
}

/// Steps over a continuous bifurcation: the two fastest clusters are
/// replaced by their mean, the encoder is regenerated at `beta_next`,
/// and the fixed-point iteration is run to convergence there. Returns
/// the re-converged root and whether the iteration converged within
/// the cap.
pub fn handle_singularity(
    prob: &IBProblem,
    root: &DecoderRoot,
    sol: &OdeSolution,
    beta_next: f64,
    cfg: &TrackerConfig,
) -> Result<(DecoderRoot, bool), TrackerError> {
    let (dec, mrg, _pair) = merge_fastest_pair(root, &sol.v)?;
    let merged = DecoderRoot::new(dec, mrg, beta_next)?;
    let (enc, _z) = encoder_from_decoder(&merged, prob)?;
    let res = ba_iterate(&enc, prob, beta_next, cfg.ba_stop, cfg.ba_max_iter)?;
    Ok((res.root, res.converged))
}

fn record_at(
    prob: &IBProblem,
    root: &DecoderRoot,
    beta: f64,
    event: TrackEvent,
    ba_converged: bool,
) -> Result<(TrackRecord, OdeSolution), TrackerError> {
    let sol = solve_ib_ode_unchecked(root, prob, beta)?;
    let (enc, _z) = encoder_from_decoder(root, prob)?;
    let info = mutual_informations(&enc, prob)?;
    let event = if root.cluster_count() == 1 && event == TrackEvent::None {
        TrackEvent::ConvergedTrivial
    } else {
        event
    };
    Ok((
        TrackRecord {
            beta,
            root: root.clone(),
            info,
            event,
            ode_condition: sol.condition_estimate,
            singular_metric: sol.singular_metric,
            ba_converged,
        },
        sol,
    ))
}

/// Tracks the root from `beta0` down the grid until the root is
/// trivial or the next grid point would be non-positive. `root0` is
/// taken as-is and should be a reduced root at `beta0` (obtained via
/// [`ba_iterate`] and [`reduce_root`]). One record is appended per
/// grid point, the first for `beta0` itself; each record's event tells
/// how that grid point was reached.
pub fn ibrt1(
    prob: &IBProblem,
    beta0: f64,
    root0: &DecoderRoot,
    cfg: &TrackerConfig,
) -> Result<Vec<TrackRecord>, TrackerError> {
    cfg.validate()?;
    let mut root = root0.with_beta(beta0)?;
    let mut event = TrackEvent::None;
    let mut ba_converged = true;
    let mut records = Vec::new();
    let mut n: usize = 0;
    loop {
        let beta = beta0 + n as f64 * cfg.delta_beta;
        let (record, sol) = record_at(prob, &root, beta, event, ba_converged)?;
        records.push(record);
        if root.cluster_count() <= 1 || beta <= cfg.delta_beta.abs() {
            break;
        }
        let beta_next = beta0 + (n + 1) as f64 * cfg.delta_beta;
        if cfg.singularity_check && sol.singular_metric < cfg.delta3 {
            let (merged, conv) = handle_singularity(prob, &root, &sol, beta_next, cfg)?;
            root = merged;
            ba_converged = conv;
            event = TrackEvent::SingularityHandled;
        } else {
            let predicted = euler_step(&root, &sol, cfg.delta_beta)?;
            let red = reduce_root(&predicted, cfg.delta1, cfg.delta2)?;
            if red.changed {
                let (enc, _z) = encoder_from_decoder(&red.root, prob)?;
                let res = ba_iterate(&enc, prob, beta_next, cfg.ba_stop, cfg.ba_max_iter)?;
                root = res.root;
                ba_converged = res.converged;
                event = TrackEvent::Reduced;
            } else {
                root = red.root;
                ba_converged = true;
                event = TrackEvent::None;
            }
        }
        for _ in 0..cfg.corrector_steps {
            root = ba_step_decoder(&root, prob, beta_next)?;
        }
        n += 1;
    }
    Ok(records)
}

/// Correction-only baseline: no flow solve, no Euler term — the root
/// is dragged down the same grid by `steps_per_point` fixed-point
/// iterations per grid point. Stops once the next grid point would
/// fall below `beta_end` or be non-positive.
pub fn reverse_anneal(
    prob: &IBProblem,
    beta0: f64,
    root0: &DecoderRoot,
    delta_beta: f64,
    beta_end: f64,
    steps_per_point: usize,
) -> Result<Vec<(f64, DecoderRoot)>, TrackerError> {
    if !(delta_beta.is_finite() && delta_beta < 0.0) {
        return Err(TrackerError::InvalidStep(delta_beta));
    }
    if steps_per_point == 0 {
        return Err(TrackerError::InvalidThreshold {
            name: "steps_per_point",
            value: 0.0,
        });
    }
    let mut root = root0.with_beta(beta0)?;
    let mut out = Vec::new();
    let mut n: usize = 0;
    loop {
        let beta = beta0 + n as f64 * delta_beta;
        out.push((beta, root.clone()));
        let beta_next = beta0 + (n + 1) as f64 * delta_beta;
        if beta_next < beta_end - 1e-12 || beta_next <= 0.0 {
            break;
        }
        for _ in 0..steps_per_point {
            root = ba_step_decoder(&root, prob, beta_next)?;
        }
        n += 1;
    }
    Ok(out)
}

/// Euler extrapolation from a stored grid point to a nearby off-grid
/// multiplier — no reduction, no correction. `delta_beta` is the grid
/// step that brackets valid targets.
pub fn interpolate_offgrid(
    record: &TrackRecord,
    sol: &OdeSolution,
    beta_target: f64,
    delta_beta: f64,
) -> Result<DecoderRoot, TrackerError> {
    if !delta_beta.is_finite() {
        return Err(TrackerError::InvalidStep(delta_beta));
    }
    let offset = beta_target - record.beta;
    if !offset.is_finite() || offset.abs() > delta_beta.abs() + 1e-12 {
        return Err(TrackerError::OffGridRange {
            target: beta_target,
            base: record.beta,
        });
    }
    euler_step(&record.root, sol, offset)
}
