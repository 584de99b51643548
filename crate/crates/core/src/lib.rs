//! Score-driven filtering for exponential dispersion models, with numerical
//! and exact checks of the Bayesian identities behind it.
//!
//! * [`edm`]: families, scores, Fisher information and variance-function scaling.
//! * [`quadrature`]: brute-force marginal densities and posterior means.
//! * [`tweedie`]: Tweedie posterior-mean identities.
//! * [`conjugate`]: exact conjugate filtering under precision discounting.
//! * [`local`]: small-variance score approximations to the posterior correction.
//! * [`recursion`]: the observation-driven score recursion, GARCH mapping and fitting.
//! * [`simulate`]: seeded data generators ([`rng`] holds the variate transforms).
//! * [`verify`]: identity suites comparing score forms with quadrature.

// negated comparisons are used so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conjugate;
pub mod edm;
pub mod error;
pub mod local;
pub mod quadrature;
pub mod recursion;
pub mod rng;
pub mod simulate;
pub mod tweedie;
pub mod verify;

mod optim;

pub use conjugate::{ConjugateState, ConjugateTrace, DiscountConfig};
pub use edm::{EdmSpec, Family, Link, MeanParam, NaturalParam};
pub use error::{Error, Result};
pub use local::{ExpansionStudy, PredictiveState};
pub use quadrature::{PriorSpec, QuadratureConfig, Scheme, Target};
pub use recursion::{FilterTrace, FitBounds, FitResult, GarchCoefficients, RecursionParams};
pub use simulate::{Dgp, SimConfig, SimOutput};
pub use tweedie::{IdentityId, IdentityReport};
pub use verify::Suite;
