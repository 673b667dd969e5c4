use thiserror::Error;

/// Failure modes shared by all solvers in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogError {
    #[error("zero vector cannot define a direction")]
    ZeroVector,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no integer vector within 1e-3 rad of eta with norm <= 1e4")]
    EtaNotRepresentable,
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),
    #[error("ellipticity violated at y={y:?}, e={e:?}: {what} = {value}")]
    EllipticityViolation {
        y: Vec<f64>,
        e: Vec<f64>,
        what: &'static str,
        value: f64,
    },
    #[error(
        "iterative solver hit its cap of {iterations} iterations (relative residual {residual:e})"
    )]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("iterative solver stagnated at relative residual {residual:e}")]
    IllConditioned { residual: f64 },
    #[error("delta extrapolation spread {spread:e} exceeds tolerance {tol:e}")]
    NonConvergent { spread: f64, tol: f64 },
    #[error("slice right-hand side is not compatible: weighted mean {0:e}")]
    CompatibilityViolation(f64),
    #[error("small divisor at k={k:?}: |Pk| = {norm:e}")]
    SmallDivisor { k: Vec<i64>, norm: f64 },
    #[error("adjoint null vector is not unique or not positive: {0}")]
    NullspaceDegenerate(String),
    #[error("approach sequence did not settle: {0}")]
    SequenceNotSettled(String),
    #[error("forcing alpha must be nonzero")]
    InvalidAlpha,
    #[error("no nonnegative margin found up to |beta - alpha| = {0}")]
    NoMargin(f64),
    #[error("|Du| = {0} dropped below the nondegeneracy floor")]
    GradientDegenerate(f64),
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("projected SOR did not converge after {0} sweeps")]
    NotConverged(usize),
    #[error(
        "sub bracket [{sub_lo}, {sub_hi}] and super bracket [{sup_lo}, {sup_hi}] are disjoint"
    )]
    BracketsDisagree {
        sub_lo: f64,
        sub_hi: f64,
        sup_lo: f64,
        sup_hi: f64,
    },
}

pub type Result<T> = std::result::Result<T, HomogError>;
