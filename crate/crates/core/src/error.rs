use thiserror::Error;

/// Errors raised by the geometry, analysis and driver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({0}, {1}) lies outside the parametric domain")]
    Domain(f64, f64),

    #[error("invalid knot vector: {0}")]
    KnotVector(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("hierarchy depth {0} exceeds the maximum of {1}")]
    Depth(usize, usize),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("Newton iteration did not converge after {iterations} steps (last residual {last:.3e})")]
    Convergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("parameterization folds at {} points after {rounds} refinement rounds", .locations.len())]
    Validity {
        rounds: usize,
        locations: Vec<[f64; 2]>,
    },

    #[error("boundary fit self-intersects at {} points after {rounds} repair rounds", .locations.len())]
    SelfIntersection {
        rounds: usize,
        locations: Vec<[f64; 2]>,
    },

    #[error("ill-posed problem: {0}")]
    WellPosedness(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
