//! Validated probability types and information measures.
//!
//! Constructors check shapes, nonnegativity and normalization once;
//! after that the types are immutable, so downstream numerics never
//! re-validate. Normalization checks use [`SIMPLEX_TOL`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Tolerance for "sums to one" checks on constructor inputs.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Smallest mass substituted for zero inside logarithms.
pub(crate) const LOG_CLAMP: f64 = 1e-300;

/// Errors raised by probability constructors and information measures.
#[derive(Debug, Error)]
pub enum ProbabilityError {
    #[error("p(y|x) is {ny}x{nx} but p(x) has length {len}")]
    ShapeMismatch { ny: usize, nx: usize, len: usize },
    #[error("empty {0} alphabet")]
    EmptyAlphabet(&'static str),
    #[error("{name}[{row},{col}] = {value} is not a valid probability")]
    InvalidEntry {
        name: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("column {col} of {name} sums to {sum:e}, expected 1")]
    ColumnNotNormalized {
        name: &'static str,
        col: usize,
        sum: f64,
    },
    #[error("{name} sums to {sum:e}, expected 1")]
    NotNormalized { name: &'static str, sum: f64 },
    #[error("source symbol {index} has zero mass")]
    ZeroMassSymbol { index: usize },
    #[error("cluster {index} has zero mass")]
    ZeroMassCluster { index: usize },
    #[error("beta = {0} is not a positive finite multiplier")]
    InvalidBeta(f64),
    #[error("distributions have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("divergence is infinite: p[{index}] > 0 but q[{index}] = 0")]
    InfiniteDivergence { index: usize },
    #[error("encoder is {t}x{nx} but the problem has {expected} source symbols")]
    EncoderMismatch { t: usize, nx: usize, expected: usize },
    #[error("problem file: {0}")]
    Io(#[from] std::io::Error),
    #[error("problem json: {0}")]
    Json(#[from] serde_json::Error),
}

fn check_column_stochastic(
    name: &'static str,
    m: &ArrayView2<f64>,
) -> Result<(), ProbabilityError> {
    for ((r, c), &v) in m.indexed_iter() {
        if !v.is_finite() || v < 0.0 || v > 1.0 + SIMPLEX_TOL {
            return Err(ProbabilityError::InvalidEntry {
                name,
                row: r,
                col: c,
                value: v,
            });
        }
    }
    for (c, col) in m.columns().into_iter().enumerate() {
        let sum: f64 = col.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ProbabilityError::ColumnNotNormalized { name, col: c, sum });
        }
    }
    Ok(())
}

fn check_distribution(name: &'static str, p: &ArrayView1<f64>) -> Result<(), ProbabilityError> {
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() || v < 0.0 || v > 1.0 + SIMPLEX_TOL {
            return Err(ProbabilityError::InvalidEntry {
                name,
                row: i,
                col: 0,
                value: v,
            });
        }
    }
    let sum: f64 = p.sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(ProbabilityError::NotNormalized { name, sum });
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ProblemFile {
    p_y_given_x: Vec<Vec<f64>>,
    p_x: Vec<f64>,
}

/// A finite joint source: channel `p(y|x)` and source marginal `p(x)`.
///
/// `p(y|x)` is stored as a `|Y| x |X|` matrix whose columns are
/// distributions over `y`. Every source symbol must carry positive
/// mass; zero-mass symbols would make inverse encoders ill-defined.
#[derive(Debug, Clone)]
pub struct IBProblem {
    p_y_given_x: Array2<f64>,
    p_x: Array1<f64>,
    p_y: Array1<f64>,
    strictly_positive: bool,
}

impl IBProblem {
    pub fn new(p_y_given_x: Array2<f64>, p_x: Array1<f64>) -> Result<Self, ProbabilityError> {
        let (ny, nx) = p_y_given_x.dim();
        if ny == 0 {
            return Err(ProbabilityError::EmptyAlphabet("label"));
        }
        if nx == 0 || p_x.is_empty() {
            return Err(ProbabilityError::EmptyAlphabet("source"));
        }
        if p_x.len() != nx {
            return Err(ProbabilityError::ShapeMismatch {
                ny,
                nx,
                len: p_x.len(),
            });
        }
        check_column_stochastic("p(y|x)", &p_y_given_x.view())?;
        check_distribution("p(x)", &p_x.view())?;
        if let Some(index) = p_x.iter().position(|&v| v == 0.0) {
            return Err(ProbabilityError::ZeroMassSymbol { index });
        }
        let p_y = p_y_given_x.dot(&p_x);
        let strictly_positive = p_y_given_x.iter().all(|&v| v > 0.0);
        Ok(Self {
            p_y_given_x,
            p_x,
            p_y,
            strictly_positive,
        })
    }

    /// Parses the problem JSON format: an object with `p_y_given_x`
    /// (rows indexed by `y`) and `p_x`.
    pub fn from_json_str(s: &str) -> Result<Self, ProbabilityError> {
        let raw: ProblemFile = serde_json::from_str(s)?;
        let ny = raw.p_y_given_x.len();
        let nx = raw.p_y_given_x.first().map_or(0, Vec::len);
        if ny == 0 || nx == 0 {
            return Err(ProbabilityError::EmptyAlphabet("label"));
        }
        if raw.p_y_given_x.iter().any(|row| row.len() != nx) {
            return Err(ProbabilityError::ShapeMismatch {
                ny,
                nx,
                len: raw.p_x.len(),
            });
        }
        let flat: Vec<f64> = raw.p_y_given_x.into_iter().flatten().collect();
        let m = Array2::from_shape_vec((ny, nx), flat).expect("row lengths checked above");
        Self::new(m, Array1::from_vec(raw.p_x))
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ProbabilityError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn nx(&self) -> usize {
        self.p_x.len()
    }

    pub fn ny(&self) -> usize {
        self.p_y_given_x.nrows()
    }

    pub fn p_y_given_x(&self) -> ArrayView2<'_, f64> {
        self.p_y_given_x.view()
    }

    pub fn p_x(&self) -> ArrayView1<'_, f64> {
        self.p_x.view()
    }

    pub fn p_y(&self) -> ArrayView1<'_, f64> {
        self.p_y.view()
    }

    /// True when every channel entry is positive, which keeps all
    /// reachable roots in the interior of the simplex and makes log
    /// coordinates globally safe.
    pub fn strictly_positive(&self) -> bool {
        self.strictly_positive
    }
}

/// A soft clustering `p(t|x)`: a `T x |X|` column-stochastic matrix.
#[derive(Debug, Clone)]
pub struct Encoder {
    p: Array2<f64>,
}

impl Encoder {
    pub fn new(p: Array2<f64>) -> Result<Self, ProbabilityError> {
        let (t, nx) = p.dim();
        if t == 0 {
            return Err(ProbabilityError::EmptyAlphabet("cluster"));
        }
        if nx == 0 {
            return Err(ProbabilityError::EmptyAlphabet("source"));
        }
        check_column_stochastic("p(t|x)", &p.view())?;
        Ok(Self { p })
    }

    pub fn cluster_count(&self) -> usize {
        self.p.nrows()
    }

    pub fn nx(&self) -> usize {
        self.p.ncols()
    }

    pub fn p(&self) -> ArrayView2<'_, f64> {
        self.p.view()
    }
}

/// A root in decoder coordinates: per-cluster decoders `p(y|t)` as the
/// columns of a `|Y| x T` matrix, the cluster marginal `p(t)`, and the
/// multiplier `beta` the root belongs to.
#[derive(Debug, Clone)]
pub struct DecoderRoot {
    decoders: Array2<f64>,
    marginal: Array1<f64>,
    beta: f64,
}

impl DecoderRoot {
    pub fn new(
        decoders: Array2<f64>,
        marginal: Array1<f64>,
        beta: f64,
    ) -> Result<Self, ProbabilityError> {
        let (ny, t) = decoders.dim();
        if ny == 0 {
            return Err(ProbabilityError::EmptyAlphabet("label"));
        }
        if t == 0 || marginal.is_empty() {
            return Err(ProbabilityError::EmptyAlphabet("cluster"));
        }
        if marginal.len() != t {
            return Err(ProbabilityError::ShapeMismatch {
                ny,
                nx: t,
                len: marginal.len(),
            });
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(ProbabilityError::InvalidBeta(beta));
        }
        check_column_stochastic("p(y|t)", &decoders.view())?;
        check_distribution("p(t)", &marginal.view())?;
        Ok(Self {
            decoders,
            marginal,
            beta,
        })
    }

    /// Rebuilds a root from log coordinates, exponentiating and then
    /// renormalizing each decoder column and the marginal. The vector
    /// layout matches [`crate::deriv::didx`] and [`crate::deriv::midx`].
    pub fn from_log_coordinates(
        coords: &ArrayView1<f64>,
        ny: usize,
        beta: f64,
    ) -> Result<Self, ProbabilityError> {
        let t = coords.len() / (ny + 1);
        if ny == 0 || t == 0 || t * (ny + 1) != coords.len() {
            return Err(ProbabilityError::EmptyAlphabet("cluster"));
        }
        let mut decoders = Array2::zeros((ny, t));
        let mut marginal = Array1::zeros(t);
        for c in 0..t {
            for y in 0..ny {
                decoders[[y, c]] = coords[c * ny + y].exp();
            }
            marginal[c] = coords[t * ny + c].exp();
        }
        if decoders.iter().any(|v| !v.is_finite()) || marginal.iter().any(|v| !v.is_finite()) {
            return Err(ProbabilityError::InvalidEntry {
                name: "exp(log coords)",
                row: 0,
                col: 0,
                value: f64::INFINITY,
            });
        }
        for c in 0..t {
            let s = decoders.column(c).sum();
            if s <= 0.0 {
                return Err(ProbabilityError::ZeroMassCluster { index: c });
            }
            decoders.column_mut(c).mapv_inplace(|v| v / s);
        }
        let ms = marginal.sum();
        if ms <= 0.0 {
            return Err(ProbabilityError::ZeroMassCluster { index: 0 });
        }
        marginal.mapv_inplace(|v| v / ms);
        Self::new(decoders, marginal, beta)
    }

    /// Log coordinates of the root, zero masses clamped at `1e-300`.
    pub fn log_coordinates(&self) -> Array1<f64> {
        let (ny, t) = self.decoders.dim();
        let mut out = Array1::zeros(t * (ny + 1));
        for c in 0..t {
            for y in 0..ny {
                out[c * ny + y] = self.decoders[[y, c]].max(LOG_CLAMP).ln();
            }
            out[t * ny + c] = self.marginal[c].max(LOG_CLAMP).ln();
        }
        out
    }

    pub fn cluster_count(&self) -> usize {
        self.marginal.len()
    }

    pub fn ny(&self) -> usize {
        self.decoders.nrows()
    }

    pub fn decoders(&self) -> ArrayView2<'_, f64> {
        self.decoders.view()
    }

    pub fn marginal(&self) -> ArrayView1<'_, f64> {
        self.marginal.view()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same root re-tagged with a different multiplier.
    pub fn with_beta(&self, beta: f64) -> Result<Self, ProbabilityError> {
        Self::new(self.decoders.clone(), self.marginal.clone(), beta)
    }
}

/// A point on the information plane, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfoPoint {
    pub i_x: f64,
    pub i_y: f64,
}

/// Shannon entropy of a distribution, in nats. Zero entries contribute
/// zero.
pub fn entropy(p: &ArrayView1<f64>) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Kullback-Leibler divergence `D(p || q)` in nats.
pub fn kl_divergence(
    p: &ArrayView1<f64>,
    q: &ArrayView1<f64>,
) -> Result<f64, ProbabilityError> {
    if p.len() != q.len() {
        return Err(ProbabilityError::LengthMismatch(p.len(), q.len()));
    }
    let mut sum = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q.iter()).enumerate() {
        if pi > 0.0 {
            if qi == 0.0 {
                return Err(ProbabilityError::InfiniteDivergence { index });
            }
            sum += pi * (pi / qi).ln();
        }
    }
    Ok(sum)
}

/// Mutual informations `(I(X;T), I(Y;T))` of an encoder against its
/// problem, in nats. Zero-mass clusters contribute nothing.
pub fn mutual_informations(
    enc: &Encoder,
    prob: &IBProblem,
) -> Result<InfoPoint, ProbabilityError> {
    if enc.nx() != prob.nx() {
        return Err(ProbabilityError::EncoderMismatch {
            t: enc.cluster_count(),
            nx: enc.nx(),
            expected: prob.nx(),
        });
    }
    let t = enc.cluster_count();
    let p = enc.p();
    let px = prob.p_x();
    let marginal = p.dot(&px);

    let mut i_x = 0.0;
    for x in 0..prob.nx() {
        for c in 0..t {
            let v = p[[c, x]];
            if v > 0.0 && marginal[c] > 0.0 {
                i_x += px[x] * v * (v / marginal[c]).ln();
            }
        }
    }

    let py = prob.p_y();
    let pyx = prob.p_y_given_x();
    let mut i_y = 0.0;
    for c in 0..t {
        if marginal[c] == 0.0 {
            continue;
        }
        for y in 0..prob.ny() {
            // decoder entry p(y|t) via the Markov chain Y - X - T
            let mut dec = 0.0;
            for x in 0..prob.nx() {
                dec += pyx[[y, x]] * p[[c, x]] * px[x];
            }
            dec /= marginal[c];
            if dec > 0.0 && py[y] > 0.0 {
                i_y += marginal[c] * dec * (dec / py[y]).ln();
            }
        }
    }
    Ok(InfoPoint { i_x, i_y })
}
