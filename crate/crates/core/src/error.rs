//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants carry
//! enough context to point at the offending input rather than just naming the
//! failure class.

use thiserror::Error;

/// Errors produced by geometry construction, discretization, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Scale parameters violate `0 < a_eps < epsilon <= 1` (or `dim < 2`).
    #[error("ordering violation: {0}")]
    OrderingViolation(String),

    /// `a_eps == epsilon`, which makes `eta = 1` and degenerates the cell problem.
    #[error("degenerate eta: a_eps == epsilon = {0} gives eta = 1")]
    DegenerateEta(f64),

    /// A scaling family outside the supported classification table.
    #[error("unsupported scaling family: {0}")]
    UnsupportedFamily(String),

    /// One of the inclusions `B(0, d1*eta) ⊂ eta*T ⊂ B(0, d2*eta) ⊂ B(0, d3) ⊂⊂ Q0` failed.
    #[error("inclusion violation: {0}")]
    InclusionViolation(String),

    /// A hole spans fewer grid cells across its diameter than the resolvability threshold.
    #[error("unresolved hole: diameter spans {cells:.2} cells at N = {n}, need >= {min_cells}")]
    UnresolvedHole { cells: f64, n: usize, min_cells: f64 },

    /// An input that must have zero mean does not.
    #[error("nonzero mean: |mean| = {mean:.3e} exceeds {tol:.3e} * ||f||")]
    NonZeroMean { mean: f64, tol: f64 },

    /// Iterative solve exhausted its iteration budget before reaching tolerance.
    #[error("no convergence after {iterations} iterations: residual {residual:.3e} > tol {tol:.3e} ({context})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
        context: String,
    },

    /// The pressure null space is larger than the constants (disconnected fluid region).
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// Eigenvalue solve on an operator with no Dirichlet data (fully periodic, no hole).
    #[error("no Dirichlet data: the operator has a constant null vector")]
    NoDirichletData,

    /// A cell-problem operation was asked to run on a hole-free cell.
    #[error("missing hole: the cell geometry carries no perforation")]
    MissingHole,

    /// Grids that must align (tiling, comparison) do not.
    #[error("alignment error: {0}")]
    AlignmentError(String),

    /// Coarse-graining window below the resolvable minimum.
    #[error("window too small: window = {window:.4e}, need >= {min:.4e}")]
    WindowTooSmall { window: f64, min: f64 },

    /// A permeability matrix that must be symmetric positive definite is not.
    #[error("matrix not SPD: {0}")]
    NotSpd(String),

    /// A requested resolution exceeds the configured grid budget.
    #[error("budget exceeded: need N = {needed} but cap is {cap} ({context})")]
    BudgetExceeded {
        needed: usize,
        cap: usize,
        context: String,
    },

    /// Malformed CLI argument or config entry.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure (field dumps, CSV artifacts).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
