//! Numerical laboratory for the nonlocal semilinear heat equation
//!
//! ```text
//! u_t = Δu + (|x|^{-1} * |u|^p) |u|^{p-2} u      in Ω = (0,1)³,
//! u = 0                                          on ∂Ω,
//! u(·,0) = u₀,
//! ```
//!
//! together with the potential-well machinery that governs its dynamics:
//! the energy `J` and Nehari functional `I`, the family `I_δ`, the sharp
//! Rayleigh constant `C*`, the well-depth curve `d(δ)`, and the diagnostics
//! (energy dissipation, concavity indicator, vacuum region, exponential
//! decay/growth rates) that let the global-existence/blow-up dichotomy be
//! exercised and property-tested at desk scale.
//!
//! Modules mirror the layers of the lab:
//!
//! - [`field`]: uniform Dirichlet grid on the unit cube, discrete operators,
//!   sine-transform solves, norms.
//! - [`nonlocal`]: free-space convolution with the Newtonian kernel `1/|x|`,
//!   fast transform path plus a direct-sum oracle.
//! - [`functionals`]: `J`, `I`, `I_δ`, the Nehari scaling `λ(δ,u)`, and the
//!   variational gradient `J'(u)`.
//! - [`well`]: Rayleigh-quotient maximization for `C*`, the closed-form
//!   `d(δ)`, its roots, and the gradient barriers `α₁, α₂`.
//! - [`flow`]: IMEX time stepping with an energy-residual step controller,
//!   blow-up detection, and trajectory recording.
//! - [`experiments`]: vacuum-isolating checks, threshold location, rate
//!   fitting, and initial-data classification.
//! - [`harness`]: CLI commands, JSON config, reproducible artifact output.

pub mod checkpoint;
pub mod error;
pub mod experiments;
pub mod field;
pub mod flow;
pub mod functionals;
pub mod harness;
pub mod nonlocal;
pub mod well;

pub use error::{Error, Result};
pub use field::{GridSpec, ScalarField};
pub use functionals::ModelParams;
pub use nonlocal::KernelTable;
pub use well::WellCurve;
