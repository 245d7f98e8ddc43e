//! Spectral representation of quasiperiodic functions and the regularized
//! Benjamin–Ono flow
//!
//! ```text
//! u_t = χ_n[(χ_n u)(χ_n u)_x] + χ_n[H u_xx]
//! ```
//!
//! on coefficient fields over the frequency lattice `Z^N`.
//!
//! - [`lattice`]: frequency bases, the symmetric lattice box, weights.
//! - [`field`]: coefficient fields, Fourier multipliers, exact products,
//!   norms and pairings.
//! - [`dynamics`]: the right-hand side, RK4 and integrating-factor RK4
//!   steppers, Picard iteration, a priori envelopes.
//! - [`diagnostics`]: conserved functionals, exact-identity residuals and
//!   inequality audits.
//! - [`experiments`]: scripted studies that write CSV tables and JSON
//!   summaries.

pub mod convolve;
pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod field;
pub mod lattice;

pub use field::{FieldError, PairingValue, ProductExtent, QpField};
pub use lattice::{FrequencyBasis, LatticePoint};
