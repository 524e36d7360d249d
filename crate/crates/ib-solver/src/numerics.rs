//! Dense linear algebra kernels for the small systems the solver
//! builds (a few dozen unknowns): LU solves with an exact 1-norm
//! condition number, smallest singular values via one-sided Jacobi,
//! and full spectra via Hessenberg reduction plus shifted complex QR.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix is empty")]
    Empty,
    #[error("entry [{row},{col}] = {value} is not finite")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("right-hand side has length {0}, matrix has {1} rows")]
    RhsMismatch(usize, usize),
    #[error("matrix is singular: zero pivot at elimination step {index}")]
    SingularPivot { index: usize },
    #[error("eigenvalue iteration stalled: {converged} of {total} eigenvalues found")]
    PartialSpectrum { converged: usize, total: usize },
}

/// Solution of a square linear system together with conditioning
/// diagnostics.
#[derive(Debug, Clone)]
pub struct LinearSolveReport {
    pub solution: Array1<f64>,
    /// Exact 1-norm condition number `norm1(A) * norm1(inv(A))`,
    /// computed from `n` extra triangular solves.
    pub condition_estimate: f64,
    /// Element growth through elimination: the largest magnitude seen
    /// in `A` or `U`, over the largest magnitude in `A`. At least 1.
    pub pivot_growth: f64,
}

fn check_square_finite(a: &ArrayView2<f64>) -> Result<usize, NumericsError> {
    let (n, m) = a.dim();
    if n != m {
        return Err(NumericsError::NotSquare(n, m));
    }
    if n == 0 {
        return Err(NumericsError::Empty);
    }
    for ((r, c), &v) in a.indexed_iter() {
        if !v.is_finite() {
            return Err(NumericsError::NonFinite {
                row: r,
                col: c,
                value: v,
            });
        }
    }
    Ok(n)
}

struct LuFactors {
    lu: Array2<f64>,
    pivots: Vec<usize>,
    pivot_growth: f64,
}

fn lu_factor(a: &ArrayView2<f64>) -> Result<LuFactors, NumericsError> {
    let n = check_square_finite(a)?;
    let mut lu = a.to_owned();
    let mut pivots = Vec::with_capacity(n);
    let max_a = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    for k in 0..n {
        let mut p = k;
        let mut best = lu[[k, k]].abs();
        for i in k + 1..n {
            let v = lu[[i, k]].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(NumericsError::SingularPivot { index: k });
        }
        if p != k {
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
        }
        pivots.push(p);
        let pivot = lu[[k, k]];
        for i in k + 1..n {
            let factor = lu[[i, k]] / pivot;
            lu[[i, k]] = factor;
            for j in k + 1..n {
                lu[[i, j]] -= factor * lu[[k, j]];
            }
        }
    }
    let mut max_u = 0.0f64;
    for i in 0..n {
        for j in i..n {
            max_u = max_u.max(lu[[i, j]].abs());
        }
    }
    let pivot_growth = if max_a > 0.0 {
        (max_u / max_a).max(1.0)
    } else {
        1.0
    };
    Ok(LuFactors {
        lu,
        pivots,
        pivot_growth,
    })
}

impl LuFactors {
    fn solve(&self, b: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.pivots.len();
        let mut x = b.to_owned();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
        }
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }
}

fn norm1(a: &ArrayView2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` by LU with partial pivoting and reports the exact
/// 1-norm condition number of `A`.
pub fn lu_solve(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
) -> Result<LinearSolveReport, NumericsError> {
    let factors = lu_factor(a)?;
    let n = factors.pivots.len();
    if b.len() != n {
        return Err(NumericsError::RhsMismatch(b.len(), n));
    }
    if let Some((i, &v)) = b.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(NumericsError::NonFinite {
            row: i,
            col: 0,
            value: v,
        });
    }
    let solution = factors.solve(b);
    // norm1(inv(A)) is the largest column 1-norm of the inverse, so n
    // unit-vector solves give it exactly rather than by estimation
    let mut inv_norm = 0.0f64;
    let mut e = Array1::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let col = factors.solve(&e.view());
        inv_norm = inv_norm.max(col.iter().map(|v| v.abs()).sum());
        e[j] = 0.0;
    }
    Ok(LinearSolveReport {
        solution,
        condition_estimate: norm1(a) * inv_norm,
        pivot_growth: factors.pivot_growth,
    })
}

/// All singular values sorted ascending, by one-sided Jacobi on the
/// columns. Works on any nonempty finite matrix; accurate for tiny
/// singular values because no normal-equations matrix is ever formed.
pub fn singular_values(a: &ArrayView2<f64>) -> Result<Vec<f64>, NumericsError> {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Err(NumericsError::Empty);
    }
    if let Some(((r, c), &v)) = a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(NumericsError::NonFinite {
            row: r,
            col: c,
            value: v,
        });
    }
    let mut b = if rows >= cols {
        a.to_owned()
    } else {
        a.t().to_owned()
    };
    let n = b.ncols();
    let m = b.nrows();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    app += b[[i, p]] * b[[i, p]];
                    aqq += b[[i, q]] * b[[i, q]];
                    apq += b[[i, p]] * b[[i, q]];
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bip = b[[i, p]];
                    let biq = b[[i, q]];
                    b[[i, p]] = c * bip - s * biq;
                    b[[i, q]] = s * bip + c * biq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| b.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(f64::total_cmp);
    Ok(sv)
}

/// Smallest singular value.
pub fn sigma_min(a: &ArrayView2<f64>) -> Result<f64, NumericsError> {
    Ok(singular_values(a)?[0])
}

fn hessenberg(a: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut h = a.to_owned();
    for k in 0..n.saturating_sub(2) {
        let norm: f64 = (k + 1..n).map(|i| h[[i, k]] * h[[i, k]]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if h[[k + 1, k]] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k + 1..n).map(|i| h[[i, k]]).collect();
        v[0] -= alpha;
        let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        // H = I - 2 v v^T applied as a similarity on rows and columns
        for j in k..n {
            let dot: f64 = (0..v.len()).map(|i| v[i] * h[[k + 1 + i, j]]).sum();
            for i in 0..v.len() {
                h[[k + 1 + i, j]] -= 2.0 * v[i] * dot;
            }
        }
        for i in 0..n {
            let dot: f64 = (0..v.len()).map(|j| v[j] * h[[i, k + 1 + j]]).sum();
            for j in 0..v.len() {
                h[[i, k + 1 + j]] -= 2.0 * v[j] * dot;
            }
        }
        for i in k + 2..n {
            h[[i, k]] = 0.0;
        }
        h[[k + 1, k]] = alpha;
    }
    h
}

fn givens(alpha: Complex64, beta: Complex64) -> (f64, Complex64) {
    let na = alpha.norm();
    let nb = beta.norm();
    if nb == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (0.0, Complex64::new(1.0, 0.0));
    }
    let r = na.hypot(nb);
    let c = na / r;
    let s = (alpha / na) * (beta.conj() / r);
    (c, s)
}

/// All eigenvalues of a real square matrix, as complex numbers sorted
/// by real part then imaginary part. Uses Householder reduction to
/// Hessenberg form and a Wilkinson-shifted complex QR iteration capped
/// at `100 n` steps.
pub fn eigenvalues(a: &ArrayView2<f64>) -> Result<Vec<Complex64>, NumericsError> {
    let n = check_square_finite(a)?;
    let hr = hessenberg(a);
    let mut h = Array2::from_shape_fn((n, n), |(i, j)| Complex64::new(hr[[i, j]], 0.0));
    let mut eigs: Vec<Complex64> = Vec::with_capacity(n);
    // matrix-scale floor for deflation: a vanishing local diagonal (repeated
    // zero eigenvalues) must not force the subdiagonal test below eps * |H|
    let hnorm = h.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let mut hi = n;
    let mut iters = 0usize;
    let cap = 100 * n;
    let mut since_deflation = 0usize;
    while hi > 0 {
        if hi == 1 {
            eigs.push(h[[0, 0]]);
            break;
        }
        // find the start of the trailing irreducible block
        let mut lo = hi - 1;
        while lo > 0 {
            let scale = h[[lo - 1, lo - 1]].norm() + h[[lo, lo]].norm();
            if h[[lo, lo - 1]].norm() <= f64::EPSILON * scale.max(hnorm) {
                h[[lo, lo - 1]] = Complex64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi - 1 {
            eigs.push(h[[hi - 1, hi - 1]]);
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        iters += 1;
        since_deflation += 1;
        if iters > cap {
            eigs.sort_by(order_key);
            return Err(NumericsError::PartialSpectrum {
                converged: eigs.len(),
                total: n,
            });
        }
        let mu = if since_deflation % 25 == 0 {
            // exceptional shift to break symmetric stalls
            Complex64::new(
                h[[hi - 1, hi - 2]].norm() + h[[hi - 2, hi - 2]].norm(),
                0.0,
            )
        } else {
            let a2 = h[[hi - 2, hi - 2]];
            let b2 = h[[hi - 2, hi - 1]];
            let c2 = h[[hi - 1, hi - 2]];
            let d2 = h[[hi - 1, hi - 1]];
            let tr = a2 + d2;
            let disc = (tr * tr - 4.0 * (a2 * d2 - b2 * c2)).sqrt();
            let mu1 = (tr + disc) * 0.5;
            let mu2 = (tr - disc) * 0.5;
            if (mu1 - d2).norm() <= (mu2 - d2).norm() {
                mu1
            } else {
                mu2
            }
        };
        for i in lo..hi {
            h[[i, i]] -= mu;
        }
        let mut rots: Vec<(f64, Complex64)> = Vec::with_capacity(hi - lo - 1);
        for k in lo..hi - 1 {
            let (c, s) = givens(h[[k, k]], h[[k + 1, k]]);
            for j in lo..hi {
                let hk = h[[k, j]];
                let hk1 = h[[k + 1, j]];
                h[[k, j]] = c * hk + s * hk1;
                h[[k + 1, j]] = -s.conj() * hk + c * hk1;
            }
            rots.push((c, s));
        }
        for (k, (c, s)) in rots.into_iter().enumerate() {
            let k = lo + k;
            for i in lo..hi {
                let hik = h[[i, k]];
                let hik1 = h[[i, k + 1]];
                h[[i, k]] = c * hik + s.conj() * hik1;
                h[[i, k + 1]] = -s * hik + c * hik1;
            }
        }
        for i in lo..hi {
            h[[i, i]] += mu;
        }
    }
    eigs.sort_by(order_key);
    Ok(eigs)
}

fn order_key(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}
