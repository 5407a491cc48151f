use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("boundary node expected, got interior node ({i}, {k})")]
    InteriorNode { i: usize, k: usize },
    #[error("not executable for d = {0}: only formula evaluation is supported")]
    NotExecutable(usize),
    #[error("factorization failed: matrix not positive definite at row {0}")]
    NotPositiveDefinite(usize),
    #[error("solver breakdown: relative residual {residual:.3e} above {tol:.1e}")]
    SolverBreakdown { residual: f64, tol: f64 },
    #[error("eigensolver did not converge after {iterations} iterations; worst residual {worst:.3e}")]
    EigenNonConvergence { iterations: usize, worst: f64 },
    #[error("degenerate cluster at modes {0} and {1}")]
    DegenerateCluster(usize, usize),
    #[error("near-degenerate gap between modes {0} and {1}")]
    NearDegenerateGap(usize, usize),
    #[error("spectral truncation tail {tail:.3e} above {tol:.1e}; raise the mode count")]
    TruncationTail { tail: f64, tol: f64 },
    #[error("limit equation residual too large: {0:.3e}")]
    Compatibility(f64),
    #[error("blow-up guard: sup norm {sup:.3e} exceeds {limit:.3e}")]
    BlowUp { sup: f64, limit: f64 },
    #[error("hyperbolicity hypothesis violated: equilibrium {index} (mean value {mean:.6}) is not hyperbolic (margin {margin:.3e})")]
    NotHyperbolic { index: usize, mean: f64, margin: f64 },
    #[error("graph iteration budget exhausted after {iterations} sweeps; last contraction factor {factor:.3e}")]
    GraphBudget { iterations: usize, factor: f64 },
    #[error("gap insufficient in practice: graph Lipschitz constant {0:.3e} >= 1")]
    GapInsufficient(f64),
    #[error("Newton divergence; residual history {0:?}")]
    NewtonDivergence(Vec<f64>),
    #[error("outside shadowing neighborhood: {0}")]
    OutsideNeighborhood(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn pre(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(LabError::Precondition(msg()))
    }
}
