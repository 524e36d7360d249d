//! Solvers for finite Information Bottleneck problems.
//!
//! The crate covers the pieces needed to compute and follow the IB
//! tradeoff curve of a finite joint distribution: fixed-point
//! (Blahut-Arimoto style) iteration, closed-form derivative tensors of
//! the fixed-point map, an implicit ODE in the multiplier `beta` whose
//! solutions are root paths, cluster reduction, root tracking with
//! bifurcation handling, and analytical oracles for problems whose
//! solutions are known exactly.
//!
//! Conventions used throughout:
//! * All information quantities are in nats.
//! * `x` indexes source symbols, `y` labels, `t` clusters.
//! * An encoder is a `T x |X|` column-stochastic matrix `p(t|x)`.
//! * A root is carried in decoder coordinates: per-cluster label
//!   distributions `p(y|t)` plus the cluster marginal `p(t)`.

pub mod ba;
pub mod deriv;
pub mod numerics;
pub mod ode;
pub mod oracles;
pub mod probability;
pub mod reduction;
pub mod tracker;

pub use ba::{ba_iterate, ba_step_decoder, BaError, BaResult};
pub use deriv::{
    ba_jacobian_log_decoder, beta_partials_log_decoder, cx_matrix, deriv_tensors, didx,
    exchange_dec_to_enc, exchange_enc_to_dec, fd_beta_partials_log_decoder,
    fd_jacobian_log_decoder, kernel_lift, midx, s_matrix, BaJacobian, DerivError, DerivTensors,
};
pub use numerics::{
    eigenvalues, lu_solve, sigma_min, singular_values, LinearSolveReport, NumericsError,
};
pub use ode::{
    beta_rhs_direct_sum, solve_ib_ode, solve_ib_ode_unchecked, solve_ib_ode_with_threshold,
    OdeError, OdeSolution, SINGULAR_THRESHOLD_DEFAULT,
};
pub use oracles::{
    brute_force_root, bsc_exact_derivative, bsc_exact_root, bsc_problem, decomposable_problem,
    mrs_gerber_curve, BscDerivative, BscSolution, OracleError,
};
pub use probability::{
    entropy, kl_divergence, mutual_informations, DecoderRoot, Encoder, IBProblem, InfoPoint,
    ProbabilityError,
};
pub use reduction::{effective_cardinality, reduce_root, ReductionError, ReductionReport};
pub use tracker::{
    euler_step, handle_singularity, ibrt1, interpolate_offgrid, reverse_anneal, TrackEvent,
    TrackRecord, TrackerConfig, TrackerError,
};
