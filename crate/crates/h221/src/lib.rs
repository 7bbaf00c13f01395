//! Flows of the two-degrees-of-freedom Garnier degeneration `H^{2+2+1}` and
//! the scalar evolution equations solved by the kernel of its linear problem.
//!
//! The crate is organized bottom-up:
//!
//! * [`params`] — the parameter constants shared by everything else, tied
//!   together by the trace condition at the singular points.
//! * [`hamiltonians`] — the three equivalent coordinate charts (rational,
//!   polynomial, canonical) with exact phase-space gradients.
//! * [`flows`] — adaptive Runge–Kutta transport along either time direction,
//!   plus commutativity and reversibility diagnostics.
//! * [`lax`] — the 2×2 connection matrices deformed by the flows, the gauge
//!   that removes the exponential part, and zero-curvature residuals.
//! * [`prlg`] — the reduction of the deformation equations to a
//!   Pohlmeyer–Lund–Regge-type first-order system and its second-order form.
//! * [`psi`] — the two-point kernel `M(ζ,η)` built from a fundamental
//!   solution, and residual certificates for the scalar PDEs it satisfies in
//!   four coordinate presentations (spectral, algebraic, conjugated,
//!   polynomial).
//! * [`harness`] — run configuration, residual reports with fitted
//!   convergence orders, CSV/JSON emission, and the CLI entry points.
//!
//! Everything numerical is complex-analytic: states, times, and spectral
//! points are `Complex64`, and all derivative checks are centered finite
//! differences driven to a floor set by the integrator tolerance.

pub mod flows;
pub mod hamiltonians;
pub mod harness;
pub mod lax;
pub mod params;
pub mod prlg;
pub mod psi;

/// Scalar type used throughout: double-precision complex.
pub type C64 = num_complex::Complex64;

/// 2×2 complex matrix (connection coefficients, fundamental solutions).
pub type M2 = nalgebra::Matrix2<C64>;

/// Shorthand for a real-valued `C64`.
#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Shorthand for a general `C64`.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
