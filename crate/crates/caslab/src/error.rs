use num_complex::Complex64;
use thiserror::Error;

/// Failures shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CasError {
    #[error("non-finite sample {value} at node ({j}, {k}), z = {z}")]
    NonFinite { j: usize, k: usize, z: Complex64, value: Complex64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("metric not positive: {0}")]
    NotPositive(String),
    #[error("singular metric at node ({j}, {k}), z = {z}: |f1 - f2bar| = {gap:.3e}")]
    SingularMetric { j: usize, k: usize, z: Complex64, gap: f64 },
    #[error("logarithm branch obstruction: winding {winding} along {axis}")]
    Branch { axis: &'static str, winding: i64 },
    #[error("field vanishes at node ({j}, {k})")]
    Vanishing { j: usize, k: usize },
    #[error("support touches the window boundary (|h| = {0:.3e} on the boundary)")]
    SupportTouchesBoundary(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, contraction estimate {contraction:.4})")]
    NoConvergence { iterations: usize, residual: f64, contraction: f64 },
    #[error("singular linearization: smallest singular value {0:.3e} (infinitesimally non-rigid at grid scale)")]
    SingularLinearization(f64),
    #[error("newton diverged at iteration {iteration}: residual {residual:.3e}")]
    Divergence { iteration: usize, residual: f64 },
    #[error("continuation step underflow near parameter {t:.8}, fold bracket [{lo:.8}, {hi:.8}]")]
    StepUnderflow { t: f64, lo: f64, hi: f64 },
    #[error("frame degeneracy: |G| = {0:.3e}")]
    FrameDegenerate(f64),
    #[error("loop leaves the chart window at {0}")]
    LoopOutside(Complex64),
    #[error("matrix is singular (|det| = {0:.3e})")]
    SingularMatrix(f64),
    #[error("operator too large for dense mode: {0} unknowns")]
    TooLarge(usize),
    #[error("eigensolver did not converge: {0}")]
    Eigen(String),
    #[error("series order mismatch: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("transport breakdown at t = {t:.6}: coefficient norm grew by {ratio:.2}x in one step")]
    Breakdown { t: f64, ratio: f64 },
    #[error("immersion not admissible at node ({j}, {k}): rank defect {sv:.3e}")]
    NotAdmissible { j: usize, k: usize, sv: f64 },
    #[error("frame basis nearly degenerate at node ({j}, {k}): condition {cond:.3e}")]
    IllConditioned { j: usize, k: usize, cond: f64 },
    #[error("snapshot format: {0}")]
    Snapshot(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CasError>;
