//! Upwind finite-difference solvers for the Hamilton-Jacobi equation
//!
//! ```text
//! u_{x_1} · u_{x_2} · ... · u_{x_n} = f   in (0,1]^n,    u = 0 on the lower boundary,
//! ```
//!
//! the continuum limit of nondominated sorting: `u(x)` plays the role of the
//! Pareto layer index of a point `x` when `f` is the density of the sorted
//! point cloud.
//!
//! The solution has a gradient singularity on the axes, so the equation is
//! factored through `w = u / (n (x_1 ⋯ x_n)^{1/n})`, which is Lipschitz and
//! satisfies `Π_i (w + n x_i w_{x_i}) = f`. That factored equation is solved
//! on a uniform lattice in a single lexicographic sweep, committing at each
//! node the largest root of a degree-`n` polynomial built from backward
//! difference quotients.
//!
//! Three scheme families are provided:
//!
//! * the first-order monotone upwind scheme (stable, provably convergent),
//! * k-th order backward-difference schemes (more accurate, not monotone,
//!   unstable for large k),
//! * filtered schemes that use the k-th order scheme only where it agrees
//!   with the monotone one within `√h`, keeping stability at any order.
//!
//! Supporting machinery: an exact rational stencil generator with a
//! moment-condition oracle ([`fd_coeffs`]), manufactured test problems with a
//! residual verifier ([`test_problems`]), a convergence benchmark harness
//! ([`mod@bench`]), and a PDE-based ranking pipeline validated against exact
//! Pareto-front peeling ([`ranking`]).

pub mod bench;
pub mod fd_coeffs;
pub mod grid;
pub mod hj_solver;
pub mod ranking;
pub mod rational;
pub mod test_problems;

pub use rational::Rational;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on caller-supplied data failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A closed-form inverse did not reproduce the identity when multiplied
    /// against its matrix. Carries the first offending product entry
    /// (boxed: bignum payloads would otherwise dominate every `Result`).
    #[error("closed-form inverse mismatch: (A·B)[{row},{col}] = {got}, expected {expected}")]
    ClosedFormMismatch {
        row: usize,
        col: usize,
        got: Box<Rational>,
        expected: Box<Rational>,
    },

    /// The per-node root solver did not converge.
    #[error("root solver failed at node {node:?}: residual {residual:.3e} after {iterations} iterations")]
    SolverFailure {
        node: Vec<usize>,
        residual: f64,
        iterations: usize,
    },

    /// A structural invariant of a computed solution was violated.
    #[error("invariant violated at node {node:?}: {detail}")]
    InvariantViolation { node: Vec<usize>, detail: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
