//! Canonical form of a root: drop vanishing clusters, fuse duplicate
//! ones.
//!
//! Root multiplicity is only meaningful on reduced roots: a cluster of
//! vanishing mass or a duplicated decoder column adds spurious
//! directions along which the fixed point is degenerate. Reduction
//! deletes clusters whose mass falls below one threshold, renormalizes
//! the survivors, then repeatedly fuses the first (lowest-index) pair
//! of clusters whose decoders agree within a second threshold.

use crate::probability::{DecoderRoot, ProbabilityError};
use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
    #[error("threshold {0} must be finite and non-negative")]
    InvalidThreshold(f64),
    #[error("reduction removed every cluster")]
    EmptyRoot,
}

/// Outcome of reducing a root. Cluster indices refer to the input
/// root's numbering.
#[derive(Debug, Clone)]
pub struct ReductionReport {
    pub root: DecoderRoot,
    /// Clusters deleted for falling below the mass threshold.
    pub removed: Vec<usize>,
    /// Pairs `(kept, absorbed)` fused for agreeing decoders.
    pub merged: Vec<(usize, usize)>,
    pub changed: bool,
}

/// Reduces a root: clusters with mass below `delta_mass` are deleted
/// (and the marginal renormalized), then pairs of clusters whose
/// decoder columns agree within `delta_decoder` in the sup norm are
/// fused in ascending index order, keeping the lower-indexed decoder
/// and summing the masses. Applying the result again is a no-op.
pub fn reduce_root(
    root: &DecoderRoot,
    delta_mass: f64,
    delta_decoder: f64,
) -> Result<ReductionReport, ReductionError> {
    for d in [delta_mass, delta_decoder] {
        if !(d.is_finite() && d >= 0.0) {
            return Err(ReductionError::InvalidThreshold(d));
        }
    }
    let dec = root.decoders();
    let mrg = root.marginal();
    let ny = root.ny();

    let mut survivors: Vec<usize> = Vec::new();
    let mut removed: Vec<usize> = Vec::new();
    for t in 0..root.cluster_count() {
        if mrg[t] < delta_mass {
            removed.push(t);
        } else {
            survivors.push(t);
        }
    }
    if survivors.is_empty() {
        return Err(ReductionError::EmptyRoot);
    }

    // survivors carry (original index, decoder column, mass)
    let mut cols: Vec<(usize, Array1<f64>, f64)> = survivors
        .iter()
        .map(|&t| (t, dec.column(t).to_owned(), mrg[t]))
        .collect();
    let total: f64 = cols.iter().map(|(_, _, m)| *m).sum();
    for c in cols.iter_mut() {
        c.2 /= total;
    }

    let mut merged: Vec<(usize, usize)> = Vec::new();
    'rescan: loop {
        for i in 0..cols.len() {
            for j in (i + 1)..cols.len() {
                let gap = cols[i]
                    .1
                    .iter()
                    .zip(cols[j].1.iter())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if gap < delta_decoder {
                    let (orig_j, _, mass_j) = cols.remove(j);
                    merged.push((cols[i].0, orig_j));
                    cols[i].2 += mass_j;
                    continue 'rescan;
                }
            }
        }
        break;
    }

    let t_out = cols.len();
    let mut dec_out = Array2::zeros((ny, t_out));
    let mut mrg_out = Array1::zeros(t_out);
    for (k, (_, col, mass)) in cols.iter().enumerate() {
        dec_out.column_mut(k).assign(col);
        mrg_out[k] = *mass;
    }
    let changed = !removed.is_empty() || !merged.is_empty();
    let out = DecoderRoot::new(dec_out, mrg_out, root.beta())?;
    Ok(ReductionReport {
        root: out,
        removed,
        merged,
        changed,
    })
}

/// Number of clusters a root has after reduction.
pub fn effective_cardinality(
    root: &DecoderRoot,
    delta_mass: f64,
    delta_decoder: f64,
) -> Result<usize, ReductionError> {
    Ok(reduce_root(root, delta_mass, delta_decoder)?.root.cluster_count())
}
