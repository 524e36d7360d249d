//! Command-line driver for the solver library: fixed-point runs, root
//! tracking down multiplier grids, information-curve and spectrum
//! scans, derivative checks, and convergence-order studies. Results go
//! out as CSV (or JSON) with an embedded run manifest, deterministic
//! across reruns.

mod output;
mod runs;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use ib_solver::ba::{DEFAULT_MAX_ITER, DEFAULT_STOP};
use ib_solver::SINGULAR_THRESHOLD_DEFAULT;

#[derive(Parser)]
#[command(
    name = "ibsolve",
    version,
    about = "Finite Information Bottleneck solver: fixed points, root tracking, curves, spectra"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the fixed-point iteration at one multiplier and print the root.
    BaSolve(BaSolveArgs),
    /// Track a root down a multiplier grid; one CSV row per grid point.
    Track(TrackArgs),
    /// Information-plane curve points by tracking, annealing, or an oracle.
    Curve(CurveArgs),
    /// Flow derivative vs. the exact derivative or finite differences.
    DerivCheck(DerivCheckArgs),
    /// Tracking error against the exact root across steps and methods.
    OrderStudy(OrderStudyArgs),
    /// Fixed-point Jacobian spectra on the trivial root with t clusters.
    EigScan(EigScanArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    /// Hard assignment x -> x mod t.
    Identity,
    /// Every column uniform over clusters (a trivial-root start).
    Uniform,
    /// Seeded random columns drawn from the simplex.
    Random,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::Identity => "identity",
            InitKind::Uniform => "uniform",
            InitKind::Random => "random",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveMethod {
    /// Flow-based root tracking from the top of the grid.
    Track,
    /// Fixed-point runs chained down the grid.
    #[value(name = "ba_anneal", alias = "ba-anneal")]
    BaAnneal,
    /// Closed-form tradeoff (bsc builtins only).
    Oracle,
}

impl CurveMethod {
    pub fn name(self) -> &'static str {
        match self {
            CurveMethod::Track => "track",
            CurveMethod::BaAnneal => "ba_anneal",
            CurveMethod::Oracle => "oracle",
        }
    }
}

/// Problem spec: `bsc:<alpha>`, `decomposable`, or a path to a problem
/// JSON file with `p_y_given_x` (rows indexed by y) and `p_x`.
const PROBLEM_HELP: &str = "bsc:<alpha>, decomposable, or a problem JSON path";

#[derive(Args)]
pub struct BaSolveArgs {
    #[arg(long, help = PROBLEM_HELP)]
    pub problem: String,
    /// Tradeoff multiplier; strictly positive.
    #[arg(long)]
    pub beta: f64,
    /// Cluster count of the initial encoder; defaults to |X|.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitKind::Identity)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sup-norm encoder change that counts as converged.
    #[arg(long, default_value_t = DEFAULT_STOP)]
    pub stop: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Also write the root and manifest as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report information in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Args)]
pub struct TrackArgs {
    #[arg(long, help = PROBLEM_HELP)]
    pub problem: String,
    /// Starting multiplier of the downward grid.
    #[arg(long)]
    pub beta0: f64,
    /// Grid step; must be strictly negative.
    #[arg(long, allow_hyphen_values = true)]
    pub delta_beta: f64,
    /// Cluster mass below which a cluster is deleted.
    #[arg(long, default_value_t = 1e-2)]
    pub delta1: f64,
    /// Sup-norm decoder gap below which clusters are fused.
    #[arg(long, default_value_t = 1e-2)]
    pub delta2: f64,
    /// Singularity-metric floor that triggers the merge heuristic.
    #[arg(long, default_value_t = SINGULAR_THRESHOLD_DEFAULT)]
    pub delta3: f64,
    /// Fixed-point corrections after every predictor step.
    #[arg(long, default_value_t = 1)]
    pub corrector_steps: usize,
    #[arg(long, default_value_t = DEFAULT_STOP)]
    pub ba_stop: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub ba_max_iter: usize,
    /// Cluster count of the initial encoder; defaults to |X|.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitKind::Identity)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable the near-singularity merge heuristic.
    #[arg(long)]
    pub no_singularity_check: bool,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a JSON mirror next to --out.
    #[arg(long, requires = "out")]
    pub json: bool,
    #[arg(long)]
    pub bits: bool,
}

#[derive(Args)]
#[command(group = ArgGroup::new("grid_spec").required(true))]
pub struct CurveArgs {
    #[arg(long, help = PROBLEM_HELP)]
    pub problem: String,
    #[arg(long, value_enum)]
    pub method: CurveMethod,
    /// Multiplier grid start:end:count.
    #[arg(long, group = "grid_spec")]
    pub grid: Option<String>,
    /// Compression-information grid start:end:count in nats
    /// (oracle method only).
    #[arg(long, group = "grid_spec")]
    pub ix_grid: Option<String>,
    /// Cluster count of the initial encoder; defaults to |X|.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitKind::Identity)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub corrector_steps: usize,
    /// Weight floor for dropping clusters (track method).
    #[arg(long, default_value_t = 1e-2)]
    pub delta1: f64,
    /// Overlap radius for merging clusters (track method).
    #[arg(long, default_value_t = 1e-2)]
    pub delta2: f64,
    /// Near-singularity threshold on sigma_min(I - S) (track method).
    #[arg(long, default_value_t = SINGULAR_THRESHOLD_DEFAULT)]
    pub delta3: f64,
    #[arg(long, default_value_t = DEFAULT_STOP)]
    pub ba_stop: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub ba_max_iter: usize,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, requires = "out")]
    pub json: bool,
    #[arg(long)]
    pub bits: bool,
}

#[derive(Args)]
pub struct DerivCheckArgs {
    #[arg(long, help = PROBLEM_HELP)]
    pub problem: String,
    /// Multiplier grid start:end:count.
    #[arg(long)]
    pub grid: String,
    /// Central-difference step for problems without an exact derivative.
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, requires = "out")]
    pub json: bool,
}

#[derive(Args)]
pub struct OrderStudyArgs {
    #[arg(long, help = PROBLEM_HELP)]
    pub problem: String,
    /// Starting multiplier of every run.
    #[arg(long)]
    pub beta0: f64,
    /// Lower edge of the comparison window.
    #[arg(long)]
    pub beta_end: f64,
    /// Comma-separated positive step magnitudes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub steps: Vec<f64>,
    /// Comma-separated corrector counts, one tracked method each.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1])]
    pub correctors: Vec<usize>,
    /// Fixed-point steps per grid point of the annealing baseline.
    #[arg(long, default_value_t = 1)]
    pub anneal_ba_steps: usize,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, requires = "out")]
    pub json: bool,
}

#[derive(Args)]
pub struct EigScanArgs {
    #[arg(long, help = PROBLEM_HELP)]
    pub problem: String,
    /// Multiplier grid start:end:count.
    #[arg(long)]
    pub grid: String,
    /// Cluster count of the trivial-root representation.
    #[arg(long)]
    pub t: usize,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, requires = "out")]
    pub json: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = runs::dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
