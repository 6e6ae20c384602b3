use crate::params::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Invalid(Box<ValidationReport>),

    #[error("{0}")]
    Domain(String),

    #[error("unsupported number of regimes: got {got}, this routine needs {need}")]
    Regimes { got: usize, need: &'static str },

    #[error("characteristic quartic has only {real} real roots")]
    ComplexRoots { real: usize },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, last iterate {last:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("converged corridor violates the ordering a(1) <= .. <= a(N) < b(1) <= .. <= b(N): a={a:?}, b={b:?}")]
    Ordering { a: Vec<f64>, b: Vec<f64> },

    #[error("corridor fails the stopping-region inequalities (worst margin {worst_margin:.3e})")]
    Constraints { worst_margin: f64 },

    #[error("horizon {horizon} too short: tail bound {bound:.3e} exceeds tolerance {tol:.3e}")]
    TailBound { horizon: f64, bound: f64, tol: f64 },

    #[error("no contact with the {which} obstacle in regime {regime}; widen the grid")]
    EmptyContact { regime: usize, which: &'static str },
}

impl Error {
    /// Whether the error means "the iteration did not settle" as opposed to
    /// bad input. The CLI maps this to its own exit code.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::Singular(_) | Error::ComplexRoots { .. }
        )
    }
}
