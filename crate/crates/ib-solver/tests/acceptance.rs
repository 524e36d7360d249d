//! Acceptance suite: eight end-to-end checks of the solver against
//! analytical oracles and qualitative claims. Each test prints one
//! `[criterion N] PASS` line with its measured numbers and asserts a
//! wall-clock budget; run with `--nocapture` to see the lines.

use std::time::Instant;

use ib_solver::ba::{encoder_from_decoder, random_encoder};
use ib_solver::probability::mutual_informations;
use ib_solver::{
    ba_iterate, ba_jacobian_log_decoder, ba_step_decoder, brute_force_root, bsc_exact_derivative,
    bsc_exact_root, bsc_problem, cx_matrix, decomposable_problem, didx, eigenvalues,
    fd_beta_partials_log_decoder, fd_jacobian_log_decoder, ibrt1, kernel_lift, lu_solve, midx,
    mrs_gerber_curve, reduce_root, reverse_anneal, s_matrix, singular_values, solve_ib_ode,
    beta_partials_log_decoder, DecoderRoot, Encoder, IBProblem, TrackRecord, TrackerConfig,
};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.3;
const BETA_C: f64 = 6.25;

fn bsc() -> IBProblem {
    bsc_problem(ALPHA).unwrap()
}

/// Sup distance between two roots in plain (decoder, marginal)
/// coordinates. Shapes must match.
fn sup_gap(a: &DecoderRoot, b: &DecoderRoot) -> f64 {
    assert_eq!(a.cluster_count(), b.cluster_count());
    assert_eq!(a.ny(), b.ny());
    let mut m = 0.0f64;
    for (u, v) in a.decoders().iter().zip(b.decoders().iter()) {
        m = m.max((u - v).abs());
    }
    for (u, v) in a.marginal().iter().zip(b.marginal().iter()) {
        m = m.max((u - v).abs());
    }
    m
}

/// Same, modulo the cluster relabeling of a two-cluster root.
fn sup_gap_mod_swap(a: &DecoderRoot, b: &DecoderRoot) -> f64 {
    let plain = sup_gap(a, b);
    if a.cluster_count() != 2 {
        return plain;
    }
    let d = a.decoders();
    let swapped = DecoderRoot::new(
        ndarray::stack![ndarray::Axis(1), d.column(1), d.column(0)],
        array![a.marginal()[1], a.marginal()[0]],
        a.beta(),
    )
    .unwrap();
    plain.min(sup_gap(&swapped, b))
}

/// Least-squares slope of `ln err` against `ln h`.
fn log_log_slope(hs: &[f64], errs: &[f64]) -> f64 {
    assert_eq!(hs.len(), errs.len());
    let n = hs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&h, &e) in hs.iter().zip(errs.iter()) {
        let x = h.ln();
        let y = e.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Sup distance between the direct encoders of two roots at their
/// shared multiplier. Errors on the encoder avoid the bias that
/// low-mass clusters put on decoder coordinates.
fn sup_encoder_gap(a: &DecoderRoot, b: &DecoderRoot, prob: &IBProblem) -> f64 {
    let (ea, _) = encoder_from_decoder(a, prob).unwrap();
    let (eb, _) = encoder_from_decoder(b, prob).unwrap();
    ea.p()
        .iter()
        .zip(eb.p().iter())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0f64, f64::max)
}

/// Worst direct-encoder error against the exact symmetric-channel
/// root, over two-cluster records at multipliers above `floor`.
fn sup_tracked_error(records: &[TrackRecord], floor: f64, prob: &IBProblem) -> f64 {
    records
        .iter()
        .filter(|r| r.beta >= floor - 1e-9 && r.root.cluster_count() == 2)
        .map(|r| {
            let oracle = bsc_exact_root(ALPHA, r.beta).unwrap().root;
            sup_encoder_gap(&r.root, &oracle, prob)
        })
        .fold(0.0, f64::max)
}

fn random_problem(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> IBProblem {
    let mut channel = Array2::zeros((ny, nx));
    for x in 0..nx {
        let mut s = 0.0;
        for y in 0..ny {
            let v = 0.05 + 0.95 * rng.random::<f64>();
            channel[[y, x]] = v;
            s += v;
        }
        for y in 0..ny {
            channel[[y, x]] /= s;
        }
    }
    let mut px = Array1::zeros(nx);
    let mut s = 0.0;
    for x in 0..nx {
        let v = 0.05 + 0.95 * rng.random::<f64>();
        px[x] = v;
        s += v;
    }
    px.mapv_inplace(|v| v / s);
    IBProblem::new(channel, px).unwrap()
}

fn random_root(rng: &mut ChaCha8Rng, ny: usize, t: usize, beta: f64) -> DecoderRoot {
    let mut dec = Array2::zeros((ny, t));
    for c in 0..t {
        let mut s = 0.0;
        for y in 0..ny {
            let v = 0.05 + 0.95 * rng.random::<f64>();
            dec[[y, c]] = v;
            s += v;
        }
        for y in 0..ny {
            dec[[y, c]] /= s;
        }
    }
    let mut mrg = Array1::zeros(t);
    let mut s = 0.0;
    for c in 0..t {
        let v = 0.05 + 0.95 * rng.random::<f64>();
        mrg[c] = v;
        s += v;
    }
    mrg.mapv_inplace(|v| v / s);
    DecoderRoot::new(dec, mrg, beta).unwrap()
}

fn min_unit_eig_distance(root: &DecoderRoot, prob: &IBProblem, beta: f64) -> f64 {
    let j = ba_jacobian_log_decoder(root, prob, beta).unwrap();
    let eigs = eigenvalues(&j.matrix.view()).unwrap();
    eigs.iter()
        .map(|e| ((1.0 - e.re).powi(2) + e.im.powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn kernel_dim(m: &Array2<f64>) -> usize {
    let eye = Array2::eye(m.nrows());
    let shifted = &eye - m;
    singular_values(&shifted.view())
        .unwrap()
        .iter()
        .filter(|&&s| s < 1e-6)
        .count()
}

/// Tracking the symmetric channel with the paper-scale coarse step
/// finds the cluster-count drop near the known critical multiplier.
#[test]
fn criterion_1_bifurcation_located_on_coarse_grid() {
    let t0 = Instant::now();
    let prob = bsc();
    let init = ba_iterate(
        &random_encoder(2, 2, 7).unwrap(),
        &prob,
        32.0,
        1e-12,
        200_000,
    )
    .unwrap();
    assert!(init.converged);
    let cfg = TrackerConfig::new(-103.0 / 3200.0);
    let records = ibrt1(&prob, 32.0, &init.root, &cfg).unwrap();
    let mut drop = None;
    for w in records.windows(2) {
        if w[0].root.cluster_count() == 2 && w[1].root.cluster_count() == 1 {
            drop = Some((w[1].beta, w[1].event));
            break;
        }
    }
    let (beta_drop, event) = drop.expect("cluster count never dropped 2 -> 1");
    assert!(
        (6.15..=6.35).contains(&beta_drop),
        "drop at beta {beta_drop}, outside [6.15, 6.35]"
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "took {dt:.2}s, budget 10s");
    println!(
        "[criterion 1] PASS cluster drop 2->1 at beta {beta_drop:.6} (event {event}, {} records) in {dt:.2}s",
        records.len()
    );
}

/// The flow solution at exact roots matches the closed-form root
/// derivative to near machine precision.
#[test]
fn criterion_2_flow_matches_analytic_derivative() {
    let t0 = Instant::now();
    let prob = bsc();
    let mut worst = 0.0f64;
    for beta in [7.5, 8.0, 10.0, 16.0, 32.0] {
        let sol = bsc_exact_root(ALPHA, beta).unwrap();
        let ode = solve_ib_ode(&sol.root, &prob, beta).unwrap();
        let exact = bsc_exact_derivative(ALPHA, beta).unwrap();
        let gap = ode
            .v
            .iter()
            .zip(exact.v_log_decoder.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-8, "flow error {gap:.3e} at beta {beta}");
        worst = worst.max(gap);
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "took {dt:.2}s, budget 1s");
    println!("[criterion 2] PASS worst flow error {worst:.3e} over 5 multipliers in {dt:.2}s");
}

/// Halving the grid step 7 times reproduces the expected convergence
/// orders: ~1 for plain Euler, ~2 with one fixed-point correction,
/// ~1 for the annealing baseline.
#[test]
fn criterion_3_order_of_convergence() {
    let t0 = Instant::now();
    let prob = bsc();
    let start = bsc_exact_root(ALPHA, 32.0).unwrap().root;
    let window_floor = BETA_C + 0.1;
    let base = 103.0 / 32.0;
    // errors are compared at the multipliers every grid shares: the
    // coarsest grid's points inside the window. Measuring each grid at
    // its own lowest point instead would let the fold's error spike
    // dominate the fine grids only, destroying the power law.
    let common_floor = 32.0 - 7.0 * base;
    let mut hs = Vec::new();
    let (mut e_euler0, mut e_euler1, mut e_anneal) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..8 {
        let h = -base / f64::powi(2.0, k);
        hs.push(-h);

        let mut cfg0 = TrackerConfig::new(h);
        cfg0.corrector_steps = 0;
        let rec0 = ibrt1(&prob, 32.0, &start, &cfg0).unwrap();
        e_euler0.push(sup_tracked_error(&rec0, common_floor, &prob));

        let cfg1 = TrackerConfig::new(h);
        let rec1 = ibrt1(&prob, 32.0, &start, &cfg1).unwrap();
        e_euler1.push(sup_tracked_error(&rec1, common_floor, &prob));

        let ann = reverse_anneal(&prob, 32.0, &start, h, window_floor, 1).unwrap();
        let err = ann
            .iter()
            .filter(|(b, _)| *b >= common_floor - 1e-9)
            .map(|(b, root)| {
                let oracle = bsc_exact_root(ALPHA, *b).unwrap().root;
                sup_encoder_gap(root, &oracle, &prob)
            })
            .fold(0.0, f64::max);
        e_anneal.push(err);
    }
    // slopes are read off the three finest grids, where the step is
    // small enough for the leading-order error term to dominate
    let s0 = log_log_slope(&hs[5..], &e_euler0[5..]);
    let s1 = log_log_slope(&hs[5..], &e_euler1[5..]);
    let sa = log_log_slope(&hs[5..], &e_anneal[5..]);
    assert!(
        (0.85..=1.15).contains(&s0),
        "plain Euler slope {s0:.3} outside [0.85, 1.15]"
    );
    assert!(s1 >= 1.7, "corrected Euler slope {s1:.3} below 1.7");
    assert!(
        (0.7..=1.1).contains(&sa),
        "annealing slope {sa:.3} outside [0.7, 1.1]"
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "took {dt:.2}s, budget 60s");
    println!(
        "[criterion 3] PASS slopes: euler {s0:.3}, corrected {s1:.3}, annealing {sa:.3} in {dt:.2}s"
    );
}

/// Even on a coarse 100-point grid the tracked information-plane
/// points sit on the known exact tradeoff curve.
#[test]
fn criterion_4_curve_matches_oracle_on_coarse_grid() {
    let t0 = Instant::now();
    let prob = bsc();
    let init = ba_iterate(
        &random_encoder(2, 2, 11).unwrap(),
        &prob,
        32.0,
        1e-12,
        200_000,
    )
    .unwrap();
    assert!(init.converged);
    let cfg = TrackerConfig::new(-(32.0 - BETA_C) / 100.0);
    let records = ibrt1(&prob, 32.0, &init.root, &cfg).unwrap();
    let mut worst = 0.0f64;
    for rec in &records {
        let on_curve = mrs_gerber_curve(ALPHA, rec.info.i_x).unwrap();
        worst = worst.max((rec.info.i_y - on_curve).abs());
    }
    assert!(worst < 2e-3, "vertical curve deviation {worst:.3e}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "took {dt:.2}s, budget 5s");
    println!(
        "[criterion 4] PASS worst vertical deviation {worst:.3e} nats over {} grid points in {dt:.2}s",
        records.len()
    );
}

/// On the decomposable problem the single-cluster representation of
/// the trivial root never shows a unit eigenvalue below the
/// bifurcation, while two-cluster representations show one exactly at
/// the critical multiplier.
#[test]
fn criterion_5_detectability_needs_enough_clusters() {
    let t0 = Instant::now();
    let prob = decomposable_problem();
    // single-cluster trivial root: p(y|t) = p_y, unit mass
    for k in 0..10 {
        let beta = 0.5 + 0.05 * k as f64;
        let trivial = DecoderRoot::new(array![[0.3], [0.7]], array![1.0], beta).unwrap();
        let m = min_unit_eig_distance(&trivial, &prob, beta);
        assert!(
            m > 0.05,
            "unit eigenvalue visible on one cluster at beta {beta}: distance {m:.3e}"
        );
    }
    // two-cluster roots from a near-hard start: the unit eigenvalue
    // appears only at the critical multiplier
    let near_hard = Encoder::new(array![[0.99, 0.01], [0.01, 0.99]]).unwrap();
    let scan = [1.0, 1.1, 1.25, 1.5];
    let mut dists = Vec::new();
    let mut unit_locations = Vec::new();
    for &beta in &scan {
        let res = ba_iterate(&near_hard, &prob, beta, 1e-12, 500_000).unwrap();
        assert!(res.converged, "fixed-point run stalled at beta {beta}");
        let m = min_unit_eig_distance(&res.root, &prob, beta);
        dists.push(m);
        if m < 1e-3 {
            unit_locations.push(beta);
        }
    }
    assert!(
        !unit_locations.is_empty(),
        "no unit eigenvalue found on two clusters: distances {dists:?}"
    );
    assert!(
        unit_locations.iter().all(|b| (b - 1.0).abs() <= 0.02),
        "unit eigenvalue outside beta = 1 +- 0.02: at {unit_locations:?}"
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "took {dt:.2}s, budget 10s");
    println!(
        "[criterion 5] PASS one-cluster distances > 0.05; two-cluster unit eigenvalue at {unit_locations:?} (distances {:?}) in {dt:.2}s",
        dists.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()
    );
}

/// The kernel of the reduced-order operator matches the kernel of the
/// full Jacobian in dimension, and the explicit lift carries kernel
/// vectors across with small residual and the expected side sums.
#[test]
fn criterion_6_reduced_kernel_correspondence() {
    let t0 = Instant::now();
    // five random reduced roots: both kernels empty
    let specs: [(usize, usize, usize, f64, u64); 5] = [
        (3, 3, 2, 3.0, 101),
        (4, 3, 3, 4.5, 202),
        (3, 4, 2, 2.5, 303),
        (5, 4, 3, 5.0, 404),
        (4, 2, 2, 3.5, 505),
    ];
    let mut dims = Vec::new();
    for (nx, ny, t, beta, seed) in specs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob = random_problem(&mut rng, nx, ny);
        let res = ba_iterate(
            &random_encoder(t, nx, seed ^ 0xabc).unwrap(),
            &prob,
            beta,
            1e-12,
            300_000,
        )
        .unwrap();
        assert!(res.converged);
        let red = reduce_root(&res.root, 1e-2, 1e-2).unwrap();
        let root = if red.changed {
            let (enc, _z) = encoder_from_decoder(&red.root, &prob).unwrap();
            ba_iterate(&enc, &prob, beta, 1e-12, 300_000).unwrap().root
        } else {
            red.root
        };
        let s = s_matrix(&root, &prob, beta).unwrap();
        let j = ba_jacobian_log_decoder(&root, &prob, beta).unwrap();
        let (ds, dj) = (kernel_dim(&s), kernel_dim(&j.matrix));
        assert_eq!(ds, dj, "kernel dimensions differ at seed {seed}");
        dims.push(ds);
    }
    // the symmetric channel near its critical multiplier: both kernels
    // one-dimensional, and the lift preserves left-kernel vectors
    let prob = bsc();
    let beta = BETA_C + 1e-8;
    let sol = bsc_exact_root(ALPHA, beta).unwrap();
    let s = s_matrix(&sol.root, &prob, beta).unwrap();
    let j = ba_jacobian_log_decoder(&sol.root, &prob, beta).unwrap();
    let (ds, dj) = (kernel_dim(&s), kernel_dim(&j.matrix));
    assert_eq!(ds, 1, "reduced-operator kernel dimension {ds}");
    assert_eq!(dj, 1, "full Jacobian kernel dimension {dj}");
    let n = s.nrows();
    let eye = Array2::eye(n);
    let i_minus_s_t = (&eye - &s).t().to_owned();
    let mut w = Array1::from_elem(n, 1.0);
    w[0] += 0.5;
    for _ in 0..30 {
        let step = lu_solve(&i_minus_s_t.view(), &w.view()).unwrap();
        let norm = step.solution.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        w = step.solution.mapv(|v| v / norm);
    }
    let res_s = w
        .dot(&(&eye - &s))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let lifted = kernel_lift(&w.view(), sol.root.cluster_count(), beta).unwrap();
    let eye_j = Array2::eye(j.matrix.nrows());
    let res_j = lifted
        .dot(&(&eye_j - &j.matrix))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(res_s < 1e-6, "reduced kernel residual {res_s:.3e}");
    assert!(res_j < 1e-6, "lifted kernel residual {res_j:.3e}");
    let ny = prob.ny();
    let t_count = sol.root.cluster_count();
    let mut side = 0.0f64;
    for y in 0..ny {
        let s_y: f64 = (0..t_count).map(|t| lifted[didx(t, y, ny)]).sum();
        side = side.max(s_y.abs());
    }
    let s_m: f64 = (0..t_count).map(|t| lifted[midx(t, t_count, ny)]).sum();
    side = side.max(s_m.abs());
    assert!(side < 1e-8, "side-condition violation {side:.3e}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "took {dt:.2}s, budget 5s");
    println!(
        "[criterion 6] PASS kernel dims {dims:?} + critical 1=1, residuals {res_s:.2e}/{res_j:.2e}, side sums {side:.2e} in {dt:.2}s"
    );
}

/// Exhaustive grid search agrees with the closed-form root, and the
/// source-sensitivity eigenvalue crosses `1/beta` at the critical
/// multiplier.
#[test]
fn criterion_7_oracle_cross_validation() {
    let t0 = Instant::now();
    let prob = bsc();
    let mut worst = 0.0f64;
    for beta in [8.0, 16.0] {
        let (enc, _value) = brute_force_root(&prob, beta, 2, 101).unwrap();
        let polished = ba_iterate(&enc, &prob, beta, 1e-13, 200_000).unwrap();
        assert!(polished.converged);
        let oracle = bsc_exact_root(ALPHA, beta).unwrap();
        let p = polished.encoder.p();
        let q = oracle.encoder.p();
        let direct = p
            .iter()
            .zip(q.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let swapped = (0..2)
            .flat_map(|t| (0..2).map(move |x| (t, x)))
            .fold(0.0f64, |m, (t, x)| m.max((p[[1 - t, x]] - q[[t, x]]).abs()));
        let gap = direct.min(swapped);
        assert!(gap < 1e-6, "encoder gap {gap:.3e} at beta {beta}");
        worst = worst.max(gap);
    }

    // signed distance from the merging source-sensitivity eigenvalue
    // to 1/beta, at the optimal root for that multiplier
    let g = |beta: f64| -> f64 {
        let root = bsc_exact_root(ALPHA, beta).unwrap().root;
        let cx = cx_matrix(&root, &prob, 0).unwrap();
        let target = 1.0 / beta;
        let merging = eigenvalues(&cx.view())
            .unwrap()
            .iter()
            .map(|e| e.re)
            .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
            .unwrap();
        merging - target
    };
    let (lo, hi, steps) = (6.2f64, 6.3f64, 400usize);
    let mut crossing = None;
    let mut prev = g(lo);
    let mut best = (prev.abs(), lo);
    for i in 1..=steps {
        let beta = lo + (hi - lo) * i as f64 / steps as f64;
        let cur = g(beta);
        if cur.abs() < best.0 {
            best = (cur.abs(), beta);
        }
        if prev.signum() != cur.signum() {
            // bisect the bracket
            let (mut a, mut b) = (beta - (hi - lo) / steps as f64, beta);
            let mut ga = prev;
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                let gm = g(mid);
                if gm.signum() == ga.signum() {
                    a = mid;
                    ga = gm;
                } else {
                    b = mid;
                }
            }
            crossing = Some(0.5 * (a + b));
            break;
        }
        prev = cur;
    }
    // a strict sign change may be absent when the eigenvalue only
    // touches 1/beta; the |g| minimizer locates the contact point
    let found = crossing.unwrap_or(best.1);
    assert!(
        (found - BETA_C).abs() <= 1e-3,
        "eigenvalue crossing at {found:.5}, expected {BETA_C} +- 1e-3"
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "took {dt:.2}s, budget 60s");
    println!(
        "[criterion 7] PASS worst polished-grid encoder gap {worst:.3e}; sensitivity crossing at {found:.6} in {dt:.2}s"
    );
}

/// Bundled structural properties: fixed-point steps stay normalized
/// and Bayes-consistent, derivatives agree with finite differences,
/// reduction is idempotent and information-preserving, and tracking
/// pulls perturbations back toward the followed branch.
#[test]
fn criterion_8_property_bundle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(88);

    // 1000 random fixed-point steps: simplex membership and
    // Bayes-consistency with the regenerated encoder
    for _ in 0..1000 {
        let nx = rng.random_range(2..=4);
        let ny = rng.random_range(2..=4);
        let t = rng.random_range(1..=4);
        let beta = 0.6 + 7.4 * rng.random::<f64>();
        let prob = random_problem(&mut rng, nx, ny);
        let root = random_root(&mut rng, ny, t, beta);
        let stepped = ba_step_decoder(&root, &prob, beta).unwrap();
        for c in 0..stepped.cluster_count() {
            let s: f64 = stepped.decoders().column(c).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((stepped.marginal().sum() - 1.0).abs() < 1e-12);
        let (enc, _z) = encoder_from_decoder(&root, &prob).unwrap();
        let pyx = prob.p_y_given_x();
        let px = prob.p_x();
        for c in 0..t {
            let mut mass = 0.0;
            for x in 0..nx {
                mass += enc.p()[[c, x]] * px[x];
            }
            assert!((stepped.marginal()[c] - mass).abs() < 1e-12);
            for y in 0..ny {
                let mut joint = 0.0;
                for x in 0..nx {
                    joint += pyx[[y, x]] * enc.p()[[c, x]] * px[x];
                }
                assert!((stepped.decoders()[[y, c]] * mass - joint).abs() < 1e-12);
            }
        }
    }

    // derivative tensors against finite differences at random points
    for _ in 0..20 {
        let nx = rng.random_range(2..=4);
        let ny = rng.random_range(2..=4);
        let t = rng.random_range(1..=3);
        let beta = 0.6 + 4.4 * rng.random::<f64>();
        let prob = random_problem(&mut rng, nx, ny);
        let root = random_root(&mut rng, ny, t, beta);
        let j = ba_jacobian_log_decoder(&root, &prob, beta).unwrap();
        let fd = fd_jacobian_log_decoder(&root, &prob, beta, 1e-6).unwrap();
        let dj = j
            .matrix
            .iter()
            .zip(fd.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dj < 1e-5, "Jacobian finite-difference gap {dj:.3e}");
        let bp = beta_partials_log_decoder(&root, &prob, beta).unwrap();
        let fdb = fd_beta_partials_log_decoder(&root, &prob, beta, 1e-6).unwrap();
        let db = bp
            .iter()
            .zip(fdb.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(db < 1e-5, "partials finite-difference gap {db:.3e}");
    }

    // reduction: removing a planted duplicate and a dust cluster is
    // idempotent and leaves the information coordinates in place
    for _ in 0..200 {
        let ny = rng.random_range(2..=4);
        let t = rng.random_range(1..=3);
        let beta = 0.6 + 7.4 * rng.random::<f64>();
        let prob = random_problem(&mut rng, 3, ny);
        // resample until the base columns are well separated, so the
        // only fusable pair is the planted one
        let base = loop {
            let cand = random_root(&mut rng, ny, t, beta);
            let mut min_gap = f64::INFINITY;
            for a in 0..t {
                for b in (a + 1)..t {
                    let gap = (0..ny)
                        .map(|y| (cand.decoders()[[y, a]] - cand.decoders()[[y, b]]).abs())
                        .fold(0.0f64, f64::max);
                    min_gap = min_gap.min(gap);
                }
            }
            if min_gap > 5e-3 {
                break cand;
            }
        };
        // pad with an exact duplicate of column 0 (mass split) and a
        // dust cluster of mass 1e-5
        let lambda = 0.3 + 0.4 * rng.random::<f64>();
        let dust_mass = 1e-5;
        let mut dec = Array2::zeros((ny, t + 2));
        let mut mrg = Array1::zeros(t + 2);
        for c in 0..t {
            for y in 0..ny {
                dec[[y, c]] = base.decoders()[[y, c]];
            }
            mrg[c] = base.marginal()[c];
        }
        for y in 0..ny {
            dec[[y, t]] = base.decoders()[[y, 0]];
        }
        mrg[t] = (1.0 - lambda) * base.marginal()[0];
        mrg[0] *= lambda;
        let dust = random_root(&mut rng, ny, 1, beta);
        for y in 0..ny {
            dec[[y, t + 1]] = dust.decoders()[[y, 0]];
        }
        mrg[t + 1] = dust_mass;
        let total = mrg.sum();
        mrg.mapv_inplace(|v| v / total);
        let padded = DecoderRoot::new(dec, mrg, beta).unwrap();

        let red = reduce_root(&padded, 1e-3, 1e-3).unwrap();
        assert!(red.changed);
        assert_eq!(red.root.cluster_count(), t);
        let again = reduce_root(&red.root, 1e-3, 1e-3).unwrap();
        assert!(!again.changed);

        let (enc_before, _) = encoder_from_decoder(&padded, &prob).unwrap();
        let (enc_after, _) = encoder_from_decoder(&red.root, &prob).unwrap();
        let before = mutual_informations(&enc_before, &prob).unwrap();
        let after = mutual_informations(&enc_after, &prob).unwrap();
        assert!(
            (before.i_x - after.i_x).abs() < 1e-3,
            "source information moved by {:.3e}",
            (before.i_x - after.i_x).abs()
        );
        assert!(
            (before.i_y - after.i_y).abs() < 1e-3,
            "label information moved by {:.3e}",
            (before.i_y - after.i_y).abs()
        );
    }

    // stability pull-back: a 1e-3 perturbation at beta = 12 has shrunk
    // by beta = 9, measured against an identically tracked twin
    let prob = bsc();
    let oracle12 = bsc_exact_root(ALPHA, 12.0).unwrap();
    let coords = oracle12.root.log_coordinates();
    let mut bumped = coords.clone();
    for (i, v) in bumped.iter_mut().enumerate() {
        *v += if i % 2 == 0 { 1e-3 } else { -1e-3 };
    }
    let perturbed = DecoderRoot::from_log_coordinates(&bumped.view(), 2, 12.0).unwrap();
    let gap0 = sup_gap(&perturbed, &oracle12.root);
    assert!(gap0 > 1e-5);
    let cfg = TrackerConfig::new(-0.05);
    let tracked_p = ibrt1(&prob, 12.0, &perturbed, &cfg).unwrap();
    let tracked_u = ibrt1(&prob, 12.0, &oracle12.root, &cfg).unwrap();
    let idx = 60; // beta = 12 - 60 * 0.05 = 9
    assert!((tracked_p[idx].beta - 9.0).abs() < 1e-9);
    assert!((tracked_u[idx].beta - 9.0).abs() < 1e-9);
    let gap1 = sup_gap(&tracked_p[idx].root, &tracked_u[idx].root);
    assert!(
        gap1 < 0.5 * gap0,
        "perturbation grew: {gap0:.3e} -> {gap1:.3e}"
    );

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "took {dt:.2}s, budget 120s");
    println!(
        "[criterion 8] PASS 1000 steps + 20 derivative checks + 200 reductions; pull-back {gap0:.2e} -> {gap1:.2e} in {dt:.2}s"
    );
}
