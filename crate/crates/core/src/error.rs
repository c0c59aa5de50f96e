use thiserror::Error;

use crate::model::Species;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A particle position became NaN or infinite.
    #[error("blow-up at step {step} (t = {t}): {species} particle {index} is non-finite")]
    BlowUp {
        step: usize,
        t: f64,
        species: Species,
        index: usize,
    },

    #[error("norm grid too small: weighted tail of component {component} beyond |x| = {radius} may exceed the grid maximum")]
    GridTooSmall { component: usize, radius: f64 },

    #[error("quadrature domain too narrow: {0}")]
    QuadratureDomain(String),

    #[error("time step {dt} violates the CFL bound {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("positivity lost in cell {cell}")]
    Positivity { cell: usize },

    #[error("symmetry precondition violated: {0}")]
    SymmetryPrecondition(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
