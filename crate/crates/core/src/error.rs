use thiserror::Error;

/// Errors produced by meshing, assembly, and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid problem data: {0}")]
    Data(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("gradient flow did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Recorded dual-energy history of the failed run.
        dual_energy_history: Vec<f64>,
    },

    #[error("study failed at level {level}: {msg}")]
    Study { level: u32, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
