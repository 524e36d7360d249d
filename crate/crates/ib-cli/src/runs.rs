//! Command implementations behind the argument surface in `main`.
//!
//! Exit-code policy: argument problems (bad flags, bad grids, bad
//! combinations) exit 2; unreadable or invalid inputs exit 3;
//! failures inside the numerics exit 4.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array1, Array2};
use thiserror::Error;

use ib_solver::ba::{
    decoder_from_encoder, encoder_from_decoder, random_encoder, uniform_encoder,
};
use ib_solver::oracles::bsc_beta_c;
use ib_solver::{
    ba_iterate, ba_jacobian_log_decoder, bsc_exact_derivative, bsc_exact_root, bsc_problem,
    decomposable_problem, eigenvalues, ibrt1, mrs_gerber_curve, mutual_informations,
    reduce_root, reverse_anneal, s_matrix, sigma_min, solve_ib_ode_unchecked, DecoderRoot,
    Encoder, IBProblem, TrackRecord, TrackerConfig,
};

use crate::output::{emit, fmt_float, Cell, RunManifest, Table};
use crate::{
    BaSolveArgs, Command, CurveArgs, CurveMethod, DerivCheckArgs, EigScanArgs, InitKind,
    OrderStudyArgs, TrackArgs,
};

/// Environment variable capping the worker threads of fanned-out runs.
pub const THREAD_CAP_VAR: &str = "IB_SOLVER_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(e.to_string())
            }
        })*
    };
}

numerical_from!(
    ib_solver::BaError,
    ib_solver::TrackerError,
    ib_solver::OdeError,
    ib_solver::DerivError,
    ib_solver::NumericsError,
    ib_solver::OracleError,
    ib_solver::ProbabilityError,
    ib_solver::ReductionError,
);

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::BaSolve(args) => cmd_ba_solve(args),
        Command::Track(args) => cmd_track(args),
        Command::Curve(args) => cmd_curve(args),
        Command::DerivCheck(args) => cmd_deriv_check(args),
        Command::OrderStudy(args) => cmd_order_study(args),
        Command::EigScan(args) => cmd_eig_scan(args),
    }
}

/// What the problem spec denoted, kept around for oracle dispatch.
enum ProblemKind {
    Bsc(f64),
    Decomposable,
    File,
}

fn load_problem(spec: &str) -> Result<(IBProblem, ProblemKind), CliError> {
    if let Some(rest) = spec.strip_prefix("bsc:") {
        let alpha: f64 = rest.parse().map_err(|_| {
            CliError::Usage(format!("problem spec {spec:?}: flip rate is not a number"))
        })?;
        let prob =
            bsc_problem(alpha).map_err(|e| CliError::Input(format!("problem {spec:?}: {e}")))?;
        Ok((prob, ProblemKind::Bsc(alpha)))
    } else if spec == "decomposable" {
        Ok((decomposable_problem(), ProblemKind::Decomposable))
    } else {
        let prob = IBProblem::from_path(spec)
            .map_err(|e| CliError::Input(format!("problem file {spec:?}: {e}")))?;
        Ok((prob, ProblemKind::File))
    }
}

fn init_encoder(
    init: InitKind,
    t: usize,
    seed: u64,
    prob: &IBProblem,
) -> Result<Encoder, CliError> {
    if t == 0 {
        return Err(CliError::Usage("cluster count t must be at least 1".into()));
    }
    let nx = prob.nx();
    match init {
        InitKind::Identity => {
            if t > nx {
                return Err(CliError::Usage(format!(
                    "identity init needs t <= |X| = {nx}, got t = {t}"
                )));
            }
            if !prob.strictly_positive() {
                return Err(CliError::Usage(
                    "identity init on a channel with zero entries produces infinite \
                     divergences; use --init random"
                        .into(),
                ));
            }
            let mut p = Array2::zeros((t, nx));
            for x in 0..nx {
                p[[x % t, x]] = 1.0;
            }
            Ok(Encoder::new(p)?)
        }
        InitKind::Uniform => Ok(uniform_encoder(t, nx)?),
        InitKind::Random => Ok(random_encoder(t, nx, seed)?),
    }
}

/// Inclusive evenly spaced grid from a `start:end:count` spec. The
/// last point is pinned to `end` exactly.
fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("grid {spec:?} must be start:end:count"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let end: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if !start.is_finite() || !end.is_finite() {
        return Err(bad());
    }
    if count == 0 {
        return Err(CliError::Usage(format!("grid {spec:?} is empty")));
    }
    if count == 1 {
        if start != end {
            return Err(CliError::Usage(format!(
                "grid {spec:?} has one point but start != end"
            )));
        }
        return Ok(vec![start]);
    }
    let step = (end - start) / ((count - 1) as f64);
    Ok((0..count)
        .map(|i| if i + 1 == count { end } else { start + i as f64 * step })
        .collect())
}

fn require_positive(grid: &[f64]) -> Result<(), CliError> {
    match grid.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        Some(b) => Err(CliError::Usage(format!(
            "multiplier grid must be strictly positive, got {b}"
        ))),
        None => Ok(()),
    }
}

fn info_scale(bits: bool) -> (f64, &'static str, &'static str) {
    if bits {
        (std::f64::consts::LN_2, "i_x_bits", "i_y_bits")
    } else {
        (1.0, "i_x_nats", "i_y_nats")
    }
}

/// Least-squares slope of `ln err` against `ln h`.
fn log_log_slope(hs: &[f64], errs: &[f64]) -> f64 {
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

/// Sup distance between the direct encoders of two roots of equal
/// cluster count. Encoder coordinates avoid the bias that low-mass
/// clusters put on decoder coordinates.
fn sup_encoder_gap(
    a: &DecoderRoot,
    b: &DecoderRoot,
    prob: &IBProblem,
) -> Result<f64, CliError> {
    let (ea, _) = encoder_from_decoder(a, prob)?;
    let (eb, _) = encoder_from_decoder(b, prob)?;
    Ok(ea
        .p()
        .iter()
        .zip(eb.p().iter())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0f64, f64::max))
}

fn cmd_ba_solve(args: BaSolveArgs) -> Result<(), CliError> {
    if !(args.beta.is_finite() && args.beta > 0.0) {
        return Err(CliError::Usage(format!(
            "beta must be a positive number, got {}",
            args.beta
        )));
    }
    let (prob, _) = load_problem(&args.problem)?;
    let t = args.t.unwrap_or(prob.nx());
    let enc = init_encoder(args.init, t, args.seed, &prob)?;
    let res = ba_iterate(&enc, &prob, args.beta, args.stop, args.max_iter)?;
    let info = mutual_informations(&res.encoder, &prob)?;
    let (scale, xname, yname) = info_scale(args.bits);
    let (ix, iy) = (info.i_x / scale, info.i_y / scale);

    println!("beta: {}", fmt_float(args.beta));
    println!("iterations: {}", res.iterations);
    println!("converged: {}", res.converged);
    println!("final_change: {}", fmt_float(res.final_change));
    println!("cluster_count: {}", res.root.cluster_count());
    println!("{xname}: {}", fmt_float(ix));
    println!("{yname}: {}", fmt_float(iy));
    let marg: Vec<String> = res.root.marginal().iter().map(|&v| fmt_float(v)).collect();
    println!("marginal: {}", marg.join(" "));
    for c in 0..res.root.cluster_count() {
        let col: Vec<String> = res
            .root
            .decoders()
            .column(c)
            .iter()
            .map(|&v| fmt_float(v))
            .collect();
        println!("decoder[t={c}]: {}", col.join(" "));
    }

    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new("ba-solve", &args.problem);
        manifest.set("beta", args.beta);
        manifest.set("t", t);
        manifest.set("init", args.init.name());
        manifest.set("seed", args.seed);
        manifest.set("stop", args.stop);
        manifest.set("max_iter", args.max_iter);
        manifest.set("bits", args.bits);
        manifest.outputs = vec![out.display().to_string()];
        let decoder: Vec<Vec<f64>> = (0..res.root.cluster_count())
            .map(|c| res.root.decoders().column(c).to_vec())
            .collect();
        let doc = serde_json::json!({
            "manifest": manifest,
            "beta": args.beta,
            "iterations": res.iterations,
            "converged": res.converged,
            "final_change": res.final_change,
            xname: ix,
            yname: iy,
            "marginal": res.root.marginal().to_vec(),
            "decoder": decoder,
        });
        std::fs::write(out, format!("{:#}\n", doc))
            .map_err(|e| CliError::Input(format!("writing {}: {e}", out.display())))?;
    }
    Ok(())
}

/// Flattened root columns: decoders cluster by cluster, then the
/// marginal. Runs shrink the cluster set, so rows are padded with NaN
/// for clusters that no longer exist.
fn root_columns(t0: usize, ny: usize) -> Vec<String> {
    let mut cols = Vec::new();
    for t in 0..t0 {
        for y in 0..ny {
            cols.push(format!("dec_t{t}_y{y}"));
        }
    }
    for t in 0..t0 {
        cols.push(format!("mrg_t{t}"));
    }
    cols
}

fn root_cells(root: &DecoderRoot, t0: usize, ny: usize, row: &mut Vec<Cell>) {
    let k = root.cluster_count();
    for t in 0..t0 {
        for y in 0..ny {
            row.push(Cell::F(if t < k {
                root.decoders()[[y, t]]
            } else {
                f64::NAN
            }));
        }
    }
    for t in 0..t0 {
        row.push(Cell::F(if t < k { root.marginal()[t] } else { f64::NAN }));
    }
}

fn track_table(
    records: &[TrackRecord],
    t0: usize,
    ny: usize,
    bits: bool,
) -> Table {
    let (scale, xname, yname) = info_scale(bits);
    let mut columns = vec![
        "beta".to_string(),
        xname.to_string(),
        yname.to_string(),
        "cluster_count".to_string(),
        "event".to_string(),
        "singular_metric".to_string(),
        "ode_condition".to_string(),
    ];
    columns.extend(root_columns(t0, ny));
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![
                Cell::F(r.beta),
                Cell::F(r.info.i_x / scale),
                Cell::F(r.info.i_y / scale),
                Cell::I(r.root.cluster_count() as i64),
                Cell::S(r.event.to_string()),
                Cell::F(r.singular_metric),
                Cell::F(r.ode_condition),
            ];
            root_cells(&r.root, t0, ny, &mut row);
            row
        })
        .collect();
    Table {
        schema: "track.v1",
        columns,
        rows,
    }
}

fn cmd_track(args: TrackArgs) -> Result<(), CliError> {
    if !(args.delta_beta.is_finite() && args.delta_beta < 0.0) {
        return Err(CliError::Usage(format!(
            "delta-beta must be strictly negative, got {}",
            args.delta_beta
        )));
    }
    if !(args.beta0.is_finite() && args.beta0 > 0.0) {
        return Err(CliError::Usage(format!(
            "beta0 must be a positive number, got {}",
            args.beta0
        )));
    }
    let (prob, _) = load_problem(&args.problem)?;
    warn_if_boundary_prone(&prob);
    let t = args.t.unwrap_or(prob.nx());
    let enc = init_encoder(args.init, t, args.seed, &prob)?;
    let start = ba_iterate(&enc, &prob, args.beta0, args.ba_stop, args.ba_max_iter)?;
    if !start.converged {
        eprintln!(
            "note: initial fixed-point run hit the iteration cap (final change {})",
            fmt_float(start.final_change)
        );
    }
    let red = reduce_root(&start.root, args.delta1, args.delta2)?;

    let mut cfg = TrackerConfig::new(args.delta_beta);
    cfg.delta1 = args.delta1;
    cfg.delta2 = args.delta2;
    cfg.delta3 = args.delta3;
    cfg.ba_stop = args.ba_stop;
    cfg.ba_max_iter = args.ba_max_iter;
    cfg.corrector_steps = args.corrector_steps;
    cfg.singularity_check = !args.no_singularity_check;
    let records = ibrt1(&prob, args.beta0, &red.root, &cfg)?;
    for r in &records {
        if !r.ba_converged {
            eprintln!(
                "note: correction at beta {} hit the iteration cap; tracking continued \
                 from the last iterate",
                fmt_float(r.beta)
            );
        }
    }

    let table = track_table(&records, red.root.cluster_count(), prob.ny(), args.bits);
    let mut manifest = RunManifest::new("track", &args.problem);
    manifest.set("beta0", args.beta0);
    manifest.set("delta_beta", args.delta_beta);
    manifest.set("delta1", args.delta1);
    manifest.set("delta2", args.delta2);
    manifest.set("delta3", args.delta3);
    manifest.set("corrector_steps", args.corrector_steps);
    manifest.set("ba_stop", args.ba_stop);
    manifest.set("ba_max_iter", args.ba_max_iter);
    manifest.set("t", t);
    manifest.set("init", args.init.name());
    manifest.set("seed", args.seed);
    manifest.set("bits", args.bits);
    manifest.set("singularity_check", cfg.singularity_check);
    set_outputs(&mut manifest, args.out.as_deref(), args.json);
    emit(&table, &manifest, args.out.as_deref(), args.json)
}

/// Root tracking lives in log decoder coordinates; channels with zero
/// entries can pin roots to the simplex boundary where those
/// coordinates do not exist.
fn warn_if_boundary_prone(prob: &IBProblem) {
    if !prob.strictly_positive() {
        eprintln!(
            "note: the channel has zero entries, so roots may sit on the simplex \
             boundary where log-coordinate tracking fails; the ba_anneal curve method \
             and ba-solve handle such corners"
        );
    }
}

fn set_outputs(manifest: &mut RunManifest, out: Option<&Path>, json: bool) {
    match out {
        Some(p) => {
            manifest.outputs.push(p.display().to_string());
            if json {
                manifest
                    .outputs
                    .push(crate::output::mirror_path(p).display().to_string());
            }
        }
        None => manifest.outputs.push("-".to_string()),
    }
}

fn cmd_curve(args: CurveArgs) -> Result<(), CliError> {
    let (prob, kind) = load_problem(&args.problem)?;
    let (scale, xname, yname) = info_scale(args.bits);

    let mut manifest = RunManifest::new("curve", &args.problem);
    manifest.set("method", args.method.name());
    manifest.set("bits", args.bits);

    if let Some(spec) = &args.ix_grid {
        if args.method != CurveMethod::Oracle {
            return Err(CliError::Usage(
                "--ix-grid is only meaningful with --method oracle".into(),
            ));
        }
        let ProblemKind::Bsc(alpha) = kind else {
            return Err(CliError::Input(
                "information-grid curves need the closed-form tradeoff of a bsc:<alpha> \
                 builtin"
                    .into(),
            ));
        };
        let grid = parse_grid(spec)?;
        let rows: Vec<Vec<Cell>> = grid
            .iter()
            .map(|&ix| {
                let iy = mrs_gerber_curve(alpha, ix)
                    .map_err(|e| CliError::Input(format!("i_x = {ix}: {e}")))?;
                Ok(vec![Cell::F(ix / scale), Cell::F(iy / scale)])
            })
            .collect::<Result<_, CliError>>()?;
        manifest.set("ix_grid", spec);
        set_outputs(&mut manifest, args.out.as_deref(), args.json);
        let table = Table {
            schema: "curve_ix.v1",
            columns: vec![xname.to_string(), yname.to_string()],
            rows,
        };
        return emit(&table, &manifest, args.out.as_deref(), args.json);
    }

    let spec = args.grid.as_ref().expect("clap enforces one grid flag");
    let grid = parse_grid(spec)?;
    require_positive(&grid)?;
    manifest.set("grid", spec);

    let infos: Vec<(f64, f64)> = match args.method {
        CurveMethod::Oracle => {
            let ProblemKind::Bsc(alpha) = kind else {
                return Err(CliError::Input(
                    "no curve oracle for this problem; oracle curves need a bsc:<alpha> \
                     builtin"
                        .into(),
                ));
            };
            grid.iter()
                .map(|&b| {
                    let sol = bsc_exact_root(alpha, b)?;
                    let info = mutual_informations(&sol.encoder, &prob)?;
                    Ok((info.i_x, info.i_y))
                })
                .collect::<Result<_, CliError>>()?
        }
        CurveMethod::BaAnneal => {
            let t = args.t.unwrap_or(prob.nx());
            manifest.set("t", t);
            manifest.set("init", args.init.name());
            manifest.set("seed", args.seed);
            manifest.set("ba_stop", args.ba_stop);
            manifest.set("ba_max_iter", args.ba_max_iter);
            let mut order: Vec<usize> = (0..grid.len()).collect();
            order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
            let mut enc = init_encoder(args.init, t, args.seed, &prob)?;
            let mut out = vec![(0.0, 0.0); grid.len()];
            for idx in order {
                let res = ba_iterate(&enc, &prob, grid[idx], args.ba_stop, args.ba_max_iter)?;
                let info = mutual_informations(&res.encoder, &prob)?;
                out[idx] = (info.i_x, info.i_y);
                enc = res.encoder;
            }
            out
        }
        CurveMethod::Track => {
            let t = args.t.unwrap_or(prob.nx());
            manifest.set("t", t);
            manifest.set("init", args.init.name());
            manifest.set("seed", args.seed);
            manifest.set("ba_stop", args.ba_stop);
            manifest.set("ba_max_iter", args.ba_max_iter);
            manifest.set("corrector_steps", args.corrector_steps);
            manifest.set("delta1", args.delta1);
            manifest.set("delta2", args.delta2);
            manifest.set("delta3", args.delta3);
            curve_by_tracking(&args, &prob, &grid, t)?
        }
    };

    let rows = grid
        .iter()
        .zip(infos.iter())
        .map(|(&b, &(ix, iy))| vec![Cell::F(b), Cell::F(ix / scale), Cell::F(iy / scale)])
        .collect();
    set_outputs(&mut manifest, args.out.as_deref(), args.json);
    let table = Table {
        schema: "curve.v1",
        columns: vec!["beta".to_string(), xname.to_string(), yname.to_string()],
        rows,
    };
    emit(&table, &manifest, args.out.as_deref(), args.json)
}

/// Tracks from the top of the grid downward and reads the information
/// point of each grid multiplier off the run. Grid points below the
/// run's trivial-root termination sit at the origin exactly.
fn curve_by_tracking(
    args: &CurveArgs,
    prob: &IBProblem,
    grid: &[f64],
    t: usize,
) -> Result<Vec<(f64, f64)>, CliError> {
    if grid.len() < 2 {
        return Err(CliError::Usage(
            "tracking a curve needs a grid with at least two points".into(),
        ));
    }
    let bmax = grid.iter().cloned().fold(f64::MIN, f64::max);
    let bmin = grid.iter().cloned().fold(f64::MAX, f64::min);
    let h = (bmax - bmin) / ((grid.len() - 1) as f64);
    if h <= 0.0 {
        return Err(CliError::Usage(
            "tracking a curve needs a non-degenerate grid".into(),
        ));
    }
    warn_if_boundary_prone(prob);
    let enc = init_encoder(args.init, t, args.seed, prob)?;
    let start = ba_iterate(&enc, prob, bmax, args.ba_stop, args.ba_max_iter)?;
    let red = reduce_root(&start.root, args.delta1, args.delta2)?;
    let mut cfg = TrackerConfig::new(-h);
    cfg.ba_stop = args.ba_stop;
    cfg.ba_max_iter = args.ba_max_iter;
    cfg.corrector_steps = args.corrector_steps;
    cfg.delta1 = args.delta1;
    cfg.delta2 = args.delta2;
    cfg.delta3 = args.delta3;
    let records = ibrt1(prob, bmax, &red.root, &cfg)?;
    let ended_trivial = records
        .last()
        .is_some_and(|r| r.root.cluster_count() <= 1);
    grid.iter()
        .map(|&b| {
            let k = ((bmax - b) / h).round() as usize;
            if let Some(r) = records.get(k) {
                debug_assert!((r.beta - b).abs() < 1e-6 * b.max(1.0));
                Ok((r.info.i_x, r.info.i_y))
            } else if ended_trivial {
                Ok((0.0, 0.0))
            } else {
                Err(CliError::Numerical(format!(
                    "tracking stopped before reaching beta = {b}"
                )))
            }
        })
        .collect()
}

fn cmd_deriv_check(args: DerivCheckArgs) -> Result<(), CliError> {
    let (prob, kind) = load_problem(&args.problem)?;
    let grid = parse_grid(&args.grid)?;
    require_positive(&grid)?;

    let mut manifest = RunManifest::new("deriv-check", &args.problem);
    manifest.set("grid", &args.grid);

    let rows: Vec<Vec<Cell>> = if let ProblemKind::Bsc(alpha) = kind {
        manifest.set("reference", "oracle");
        let beta_c = bsc_beta_c(alpha)?;
        grid.iter()
            .map(|&b| {
                let sol = bsc_exact_root(alpha, b)?;
                let ode = solve_ib_ode_unchecked(&sol.root, &prob, b)?;
                // below the critical multiplier the exact branch is the
                // trivial root, which does not move with beta
                let vref = if b > beta_c {
                    bsc_exact_derivative(alpha, b)?.v_log_decoder
                } else {
                    Array1::zeros(ode.v.len())
                };
                let err = ode
                    .v
                    .iter()
                    .zip(vref.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                Ok(vec![
                    Cell::F(b),
                    Cell::F(err),
                    Cell::F(ode.condition_estimate),
                    Cell::S("oracle".into()),
                ])
            })
            .collect::<Result<_, CliError>>()?
    } else {
        manifest.set("reference", "fd");
        manifest.set("fd_step", args.fd_step);
        let bmin = grid.iter().cloned().fold(f64::MAX, f64::min);
        if !(args.fd_step > 0.0 && args.fd_step < bmin) {
            return Err(CliError::Usage(format!(
                "fd-step must be positive and below the smallest grid multiplier, got {}",
                args.fd_step
            )));
        }
        eprintln!(
            "note: no analytic derivative for this problem; comparing against central \
             finite differences (step {})",
            args.fd_step
        );
        // walk the grid from the top so every start point is the
        // converged root of the previous, warmer multiplier
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
        let mut roots: Vec<Option<DecoderRoot>> = vec![None; grid.len()];
        let mut enc = random_encoder(prob.nx(), prob.nx(), 0)?;
        for idx in order {
            let res = ba_iterate(&enc, &prob, grid[idx], 1e-12, 500_000)?;
            roots[idx] = Some(res.root);
            enc = res.encoder;
        }
        grid.iter()
            .zip(roots.iter())
            .map(|(&b, root)| {
                let root = root.as_ref().expect("filled above");
                let ode = solve_ib_ode_unchecked(root, &prob, b)?;
                let h = args.fd_step;
                let (enc_here, _) = encoder_from_decoder(root, &prob)?;
                let up = ba_iterate(&enc_here, &prob, b + h, 1e-12, 500_000)?;
                let dn = ba_iterate(&enc_here, &prob, b - h, 1e-12, 500_000)?;
                let lu = up.root.log_coordinates();
                let ld = dn.root.log_coordinates();
                let err = ode
                    .v
                    .iter()
                    .zip(lu.iter().zip(ld.iter()))
                    .map(|(v, (u, d))| (v - (u - d) / (2.0 * h)).abs())
                    .fold(0.0f64, f64::max);
                Ok(vec![
                    Cell::F(b),
                    Cell::F(err),
                    Cell::F(ode.condition_estimate),
                    Cell::S("fd".into()),
                ])
            })
            .collect::<Result<_, CliError>>()?
    };

    set_outputs(&mut manifest, args.out.as_deref(), args.json);
    let table = Table {
        schema: "deriv_check.v1",
        columns: ["beta", "linf_error", "ode_condition", "reference"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows,
    };
    emit(&table, &manifest, args.out.as_deref(), args.json)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum StudyMethod {
    Euler(usize),
    Anneal,
}

impl StudyMethod {
    fn name(self) -> String {
        match self {
            StudyMethod::Euler(c) => format!("euler_c{c}"),
            StudyMethod::Anneal => "anneal".to_string(),
        }
    }
}

fn cmd_order_study(args: OrderStudyArgs) -> Result<(), CliError> {
    let (prob, kind) = load_problem(&args.problem)?;
    let ProblemKind::Bsc(alpha) = kind else {
        return Err(CliError::Input(
            "order studies measure against the closed-form root and need a bsc:<alpha> \
             builtin"
                .into(),
        ));
    };
    if !(args.beta_end > 0.0 && args.beta_end < args.beta0 && args.beta0.is_finite()) {
        return Err(CliError::Usage(format!(
            "need 0 < beta-end < beta0, got beta0 = {}, beta-end = {}",
            args.beta0, args.beta_end
        )));
    }
    let range = args.beta0 - args.beta_end;
    if args.steps.is_empty() {
        return Err(CliError::Usage("step list is empty".into()));
    }
    for &h in &args.steps {
        if !(h.is_finite() && h > 0.0 && h <= range) {
            return Err(CliError::Usage(format!(
                "steps must lie in (0, beta0 - beta-end], got {h}"
            )));
        }
    }
    if args.anneal_ba_steps == 0 {
        return Err(CliError::Usage("anneal-ba-steps must be at least 1".into()));
    }
    let start = bsc_exact_root(alpha, args.beta0)?;
    if start.delta == 0.5 {
        return Err(CliError::Input(format!(
            "beta0 = {} is at or below the critical multiplier; no branch to track",
            args.beta0
        )));
    }
    let oracle_clusters = start.root.cluster_count();

    // errors are compared at the multipliers every grid shares: all of
    // a run's grid points at or above the lowest point of the coarsest
    // grid inside the window
    let hmax = args.steps.iter().cloned().fold(0.0f64, f64::max);
    let common_floor = args.beta0 - (range / hmax + 1e-12).floor() * hmax;

    let mut methods: Vec<StudyMethod> = args
        .correctors
        .iter()
        .map(|&c| StudyMethod::Euler(c))
        .collect();
    methods.push(StudyMethod::Anneal);
    methods.sort();
    methods.dedup();

    let mut steps = args.steps.clone();
    steps.sort_by(|a, b| b.total_cmp(a));
    steps.dedup();

    let tasks: Vec<(f64, StudyMethod)> = steps
        .iter()
        .flat_map(|&h| methods.iter().map(move |&m| (h, m)))
        .collect();

    let run_task = |&(h, method): &(f64, StudyMethod)| -> Result<f64, CliError> {
        let sup = |pairs: &mut dyn Iterator<Item = (f64, DecoderRoot)>| {
            let mut worst = 0.0f64;
            for (b, root) in pairs {
                if b < common_floor - 1e-9 || root.cluster_count() != oracle_clusters {
                    continue;
                }
                let oracle = bsc_exact_root(alpha, b)?.root;
                worst = worst.max(sup_encoder_gap(&root, &oracle, &prob)?);
            }
            Ok::<f64, CliError>(worst)
        };
        match method {
            StudyMethod::Euler(c) => {
                let mut cfg = TrackerConfig::new(-h);
                cfg.corrector_steps = c;
                let records = ibrt1(&prob, args.beta0, &start.root, &cfg)?;
                sup(&mut records.into_iter().map(|r| (r.beta, r.root)))
            }
            StudyMethod::Anneal => {
                let pts = reverse_anneal(
                    &prob,
                    args.beta0,
                    &start.root,
                    -h,
                    args.beta_end,
                    args.anneal_ba_steps,
                )?;
                sup(&mut pts.into_iter())
            }
        }
    };

    // fan the independent runs over a small worker pool; results land
    // in task order so the merge is deterministic by (step, method)
    let cap = std::env::var(THREAD_CAP_VAR)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let workers = cap.min(tasks.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<f64, CliError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let r = run_task(&tasks[i]);
                *results[i].lock().expect("poisoned result slot") = Some(r);
            });
        }
    });
    let mut errors = Vec::with_capacity(tasks.len());
    for slot in results {
        errors.push(
            slot.into_inner()
                .expect("poisoned result slot")
                .expect("every task index was claimed")?,
        );
    }

    // one fitted slope per method, read off the three finest steps
    let slope_for = |method: StudyMethod| -> f64 {
        let mut pairs: Vec<(f64, f64)> = tasks
            .iter()
            .zip(errors.iter())
            .filter(|((_, m), _)| *m == method)
            .map(|(&(h, _), &e)| (h, e))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.truncate(3);
        if pairs.len() < 2 {
            return f64::NAN;
        }
        let hs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let es: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        log_log_slope(&hs, &es)
    };
    let slopes: Vec<(StudyMethod, f64)> =
        methods.iter().map(|&m| (m, slope_for(m))).collect();

    let rows: Vec<Vec<Cell>> = tasks
        .iter()
        .zip(errors.iter())
        .map(|(&(h, m), &e)| {
            let slope = slopes
                .iter()
                .find(|(sm, _)| *sm == m)
                .map(|(_, s)| *s)
                .expect("every task method has a slope");
            vec![
                Cell::F(h),
                Cell::S(m.name()),
                Cell::F(e),
                Cell::F(slope),
            ]
        })
        .collect();

    let mut manifest = RunManifest::new("order-study", &args.problem);
    manifest.set("beta0", args.beta0);
    manifest.set("beta_end", args.beta_end);
    manifest.set("common_floor", common_floor);
    manifest.set(
        "steps",
        steps
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set(
        "correctors",
        args.correctors
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set("anneal_ba_steps", args.anneal_ba_steps);
    set_outputs(&mut manifest, args.out.as_deref(), args.json);
    let table = Table {
        schema: "order_study.v1",
        columns: ["step", "method", "sup_error", "fitted_slope"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows,
    };
    emit(&table, &manifest, args.out.as_deref(), args.json)
}

fn cmd_eig_scan(args: EigScanArgs) -> Result<(), CliError> {
    if args.t == 0 {
        return Err(CliError::Usage("t must be at least 1".into()));
    }
    let (prob, _) = load_problem(&args.problem)?;
    let grid = parse_grid(&args.grid)?;
    require_positive(&grid)?;

    // the scan evaluates on the trivial root spread over t identical
    // clusters: the same optimum, but whether a unit eigenvalue is
    // visible depends on the cluster count of the representation
    let enc = uniform_encoder(args.t, prob.nx())?;
    let n = args.t * (prob.ny() + 1);
    let mut columns = vec!["beta".to_string()];
    for k in 0..n {
        columns.push(format!("eig{k}_re"));
        columns.push(format!("eig{k}_im"));
    }
    columns.push("sigma_min_i_minus_s".to_string());

    let rows: Vec<Vec<Cell>> = grid
        .iter()
        .map(|&b| {
            let (root, _) = decoder_from_encoder(&enc, &prob, b)?;
            let jac = ba_jacobian_log_decoder(&root, &prob, b)?;
            let eigs = eigenvalues(&jac.matrix.view())?;
            let s = s_matrix(&root, &prob, b)?;
            let i_minus_s = Array2::eye(s.nrows()) - &s;
            let sm = sigma_min(&i_minus_s.view())?;
            let mut row = Vec::with_capacity(2 * n + 2);
            row.push(Cell::F(b));
            for e in &eigs {
                row.push(Cell::F(e.re));
                row.push(Cell::F(e.im));
            }
            row.push(Cell::F(sm));
            Ok(row)
        })
        .collect::<Result<_, CliError>>()?;

    let mut manifest = RunManifest::new("eig-scan", &args.problem);
    manifest.set("grid", &args.grid);
    manifest.set("t", args.t);
    set_outputs(&mut manifest, args.out.as_deref(), args.json);
    let table = Table {
        schema: "eig_scan.v1",
        columns,
        rows,
    };
    emit(&table, &manifest, args.out.as_deref(), args.json)
}
