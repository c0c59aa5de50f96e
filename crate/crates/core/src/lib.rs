//! Numerics for the two-species McKean–Vlasov system
//!
//! ```text
//! dX = σ dW − ∇V₁(X) dt − a (∇F₁₁ ∗ μ)(X) dt − (1−a) (∇F₁₂ ∗ ν)(X) dt
//! dY = σ dŴ − ∇V₂(Y) dt − a (∇F₂₁ ∗ μ)(Y) dt − (1−a) (∇F₂₂ ∗ ν)(Y) dt
//! ```
//!
//! with μ, ν the laws of X and Y. The crate covers
//!
//! * [`model`]: polynomial potentials, interaction kernels and the standing
//!   growth/convexity assumptions,
//! * [`sde`]: seeded Euler–Maruyama for the interacting particle system and
//!   for ensembles driven by a prescribed drift,
//! * [`picard`]: the fixed-point construction of the nonlinear drift,
//! * [`poc`]: synchronous-coupling propagation-of-chaos experiments,
//! * [`invariant`]: stationary measures for quadratic interactions,
//! * [`fokker_planck`]: a finite-volume solver for the nonlocal PDE,
//! * [`util`]: shared numerics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fokker_planck;
pub mod invariant;
pub mod model;
pub mod output;
pub mod picard;
pub mod poc;
pub mod sde;
pub mod util;

pub use error::{Error, Result};
pub use fokker_planck::{DensityPair, FluxScheme, Grid1D};
pub use invariant::{LaplaceExpansion, MeanPair, QuadratureRule, StationaryPair};
pub use model::{
    AssumptionReport, InteractionSpec, ModelConfig, Polynomial, QuadraticInteraction, Species,
};
pub use picard::{DriftNorms, DriftPair, GridSpec, McParams};
pub use poc::{CouplingRun, ErrorStats, RateFit};
pub use sde::{Ensemble, InitialLaw, MomentVector, NoiseTape, SimParams, Trajectory};
