//! Two-point kernel of the reduced linear system and certification of the
//! scalar evolution identities its entries satisfy.
//!
//! The reduced family of `lax` defines a linear system over the
//! (spectral × two-time) base. A fundamental solution `Z`, normalized to the
//! identity at a chosen base point, is single-valued on simply connected
//! patches because the system is flat (the compatibility certified by the
//! zero-curvature tests). This module transports `Z`, forms the two-point
//! kernel `M(ζ, η) = Z(η)⁻¹ Z(ζ)`, and evaluates centered finite-difference
//! residuals of five pairs of scalar evolution equations satisfied by every
//! matrix entry of the kernel and its gauge descendants:
//!
//! * **kernel pair** — second-order rational-coefficient evolution equations
//!   in the spectral pair `(ζ, η)` with state-dependent potentials `g₁, g₂`;
//! * **gauged pair** — the same differential operators acting on
//!   `W = e^{−S} M`, where the action gauge `S` absorbs the state dependence:
//!   the potentials `g₃, g₄` depend on times, spectral points, and constants
//!   only;
//! * **ratio pair** — the gauged pair rewritten in the Möbius ratio
//!   coordinates `x = ζ/(ζ−1)`, `y = η/(η−1)` (an involution);
//! * **normalized pair** — after the full scalar normalization
//!   `Ψ = e^{−f₁−f₂} W`, the evolution pair with the Schrödinger-analogue
//!   shape: pure second-order terms, first-order terms with the
//!   characteristic simple-pole brackets, and a zeroth-order potential;
//! * **polynomial pair** — the normalized pair transplanted to the
//!   polynomial-chart variables `r = (x−1)(y−1)/τ₁`, `ρ = xy` with evolution
//!   parameters `s₁ = 1/τ₁`, `s₂ = −τ₂`.
//!
//! Time and spectral derivatives are centered differences over a 13-point
//! stencil whose off-center anchors are produced by short fixed-step
//! re-integration from the center (step placement independent of the data,
//! so the stencil stays smooth in the stencil parameter). Spectral legs
//! transport the solution slices along the spectral equation; time legs
//! transport state, action gauge, and both slices together as one augmented
//! system along the plain-time flows.
//!
//! [`PsiMutation`] lists deliberate single-term corruptions used as negative
//! controls: each reproduces one uncorrected transcription of the equation
//! tower and must surface as a non-decaying residual plateau where the
//! corrected forms decay at second order.

use crate::flows::{
    adaptive_ode, fixed_step_ode, FlowError, FlowPath, PathSegment, PATH_CLEARANCE,
};
use crate::hamiltonians::{kns_velocity, KnsState, PhaseError, TimePoint};
use crate::lax::{max_abs, reduced_family, u_eta, u_t1, u_t2, ReducedFamily};
use crate::params::ParameterSet;
use crate::{cr, C64, M2};
use thiserror::Error;

/// Minimum allowed distance between the two spectral points, and from any
/// spectral transport segment to the poles at 0 and 1, and of the ratio
/// coordinates from their degenerate values.
pub const SPECTRAL_CLEARANCE: f64 = 0.05;

/// Fixed-step count per transport leg inside a finite-difference stencil.
pub const STENCIL_TRANSPORT_STEPS: usize = 8;

/// A solution slice with determinant below this is treated as singular.
pub const SINGULAR_DET_TOL: f64 = 1e-12;

/// Step sizes used by the convergence studies of the residual families.
/// The finest step keeps the quadratic signal of even the smallest residual
/// family well above the rounding floor of second differences (≈ 4·ε/h²),
/// which would otherwise flatten the fitted order.
pub const DEFAULT_RESIDUAL_STEPS: [f64; 4] = [8e-3, 4e-3, 2e-3, 1e-3];

#[derive(Debug, Error)]
pub enum PsiError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("spectral points coincide: |ζ−η| = {dist:.3e} < {clearance}")]
    CoincidentSpectral { dist: f64, clearance: f64 },
    #[error("spectral segment passes within {clearance} of the pole at {pole}")]
    SpectralClearance { pole: f64, clearance: f64 },
    #[error("ratio coordinate too close to a degenerate value: {what}")]
    MapPole { what: &'static str },
    #[error("solution slice is numerically singular: |det Z| = {det_norm:.3e}")]
    SingularSolution { det_norm: f64 },
    #[error("transport is path-dependent: loop deviation {dev:.3e} exceeds {max:.3e}")]
    PathDependence { dev: f64, max: f64 },
    #[error("coordinate-change Jacobian is numerically singular")]
    JacobianSingular,
}

/// How a transport leg is integrated: adaptive with the given tolerance, or
/// with a fixed number of equal steps (for stencil legs, where step
/// placement must not depend on the data).
#[derive(Clone, Copy, Debug)]
pub enum Transport {
    Adaptive(f64),
    Fixed(usize),
}

/// Deliberate single-term corruptions, each a negative control for one
/// residual family. Corrected evaluations use [`PsiMutation::None`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PsiMutation {
    #[default]
    None,
    /// Add +1 to the state-dependent potential of the first kernel equation.
    ShiftG1,
    /// Drop the determinant term from the τ₁ action rate, corrupting the
    /// quadrature of `S` (surfaces as order-swap disagreement and as a
    /// gauged-pair plateau).
    DropActionDet,
    /// Use ratio-pair first-derivative coefficients without the chain-rule
    /// cross terms generated by the second-derivative transformation.
    ChainDrop,
    /// Shift the log weights of the scalar normalization: κ₁/2 instead of
    /// κ₁/2 − 1 on the `ln((x−1)(y−1))` term and an extra −ln τ₁.
    LogWeight,
    /// Use κ instead of κ+1 in the normalized pair's potentials.
    KappaConstant,
    /// Flip the sign of the (γ₁²−1) term in the first normalized potential.
    GammaSignFlip,
    /// Add spurious (x−y)⁻² pole terms to the normalized potentials.
    PoleTerm,
    /// Constraint violation: evaluate the normalized potentials with κ
    /// shifted by +0.1.
    KappaPerturb,
}

// ---------------------------------------------------------------------------
// Small complex/matrix helpers
// ---------------------------------------------------------------------------

fn det2(m: &M2) -> C64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

/// Inverse through the adjugate, guarded against a vanishing determinant.
/// The slices this acts on are unimodular up to integrator error.
pub fn invert_unimodular(z: &M2) -> Result<M2, PsiError> {
    let det = det2(z);
    if det.norm() < SINGULAR_DET_TOL {
        return Err(PsiError::SingularSolution { det_norm: det.norm() });
    }
    Ok(M2::new(z[(1, 1)], -z[(0, 1)], -z[(1, 0)], z[(0, 0)]) / det)
}

fn pack(m: &M2, buf: &mut [C64]) {
    buf.copy_from_slice(m.as_slice());
}

fn unpack(buf: &[C64]) -> M2 {
    M2::from_column_slice(buf)
}

/// Distance from the segment `[a, b] ⊂ ℂ` to the point `p`.
fn segment_point_distance(a: C64, b: C64, p: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (a - p).norm();
    }
    let ap = p - a;
    let t = ((ap.re * d.re + ap.im * d.im) / len2).clamp(0.0, 1.0);
    (a + d * t - p).norm()
}

// ---------------------------------------------------------------------------
// Coordinates and scalar gauges
// ---------------------------------------------------------------------------

/// The Möbius ratio coordinate `x = ζ/(ζ−1)`. Applying it twice returns ζ,
/// so the same function maps back.
pub fn ratio_coordinate(zeta: C64) -> Result<C64, PsiError> {
    if (zeta - 1.0).norm() < SINGULAR_DET_TOL {
        return Err(PsiError::MapPole { what: "ζ at the fixed pole 1" });
    }
    Ok(zeta / (zeta - 1.0))
}

fn ensure_ratio_clear(x: C64, y: C64) -> Result<(), PsiError> {
    let checks: [(C64, &'static str); 5] = [
        (x, "x at 0"),
        (x - 1.0, "x at 1"),
        (y, "y at 0"),
        (y - 1.0, "y at 1"),
        (x - y, "x = y"),
    ];
    for (v, what) in checks {
        if v.norm() < SPECTRAL_CLEARANCE {
            return Err(PsiError::MapPole { what });
        }
    }
    Ok(())
}

/// Spectral part of the scalar normalization exponent,
/// `f₁ = (κ₀/2 − 1)·ln(xy) + (κ₁/2 − 1)·ln((x−1)(y−1)) + ln(x−y)
///      + γ₁τ₂(x+y)/(2xy) + γ₂τ₁(x+y−2)/(2(x−1)(y−1))`,
/// principal logarithm branches. With `shifted_log_weights` the weight of
/// the second logarithm becomes κ₁/2 (negative control; see
/// [`PsiMutation::LogWeight`]).
pub fn f1_gauge(
    x: C64,
    y: C64,
    time: &TimePoint,
    pr: &ParameterSet,
    shifted_log_weights: bool,
) -> C64 {
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let w0 = pr.kappa0 / 2.0 - 1.0;
    let w1 = if shifted_log_weights {
        pr.kappa1 / 2.0
    } else {
        pr.kappa1 / 2.0 - 1.0
    };
    w0 * (x * y).ln()
        + w1 * ((x - 1.0) * (y - 1.0)).ln()
        + (x - y).ln()
        + pr.gamma1 * t2 * (x + y) / (2.0 * x * y)
        + pr.gamma2 * t1 * (x + y - 2.0) / (2.0 * (x - 1.0) * (y - 1.0))
}

/// Time-only part of the scalar normalization exponent,
/// `f₂ = ((κ₁−2)² − (θ¹)²)·ln τ₁/4 + (κ₀−2)²·ln τ₂/4
///      − ((κ₀−2)γ₂ + θ⁰ + 2θ₂^∞)·τ₁/2 + ((κ₁−2)γ₁ + θ⁰)·τ₂/2 + γ₁γ₂τ₁τ₂/2`.
/// With `shifted_log_weights` the ln τ₁ weight gains the spurious −1.
pub fn f2_gauge(time: &TimePoint, pr: &ParameterSet, shifted_log_weights: bool) -> C64 {
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let k0m = pr.kappa0 - 2.0;
    let k1m = pr.kappa1 - 2.0;
    let mut w_ln1 = (k1m * k1m - pr.theta1 * pr.theta1) / 4.0;
    if shifted_log_weights {
        w_ln1 -= 1.0;
    }
    w_ln1 * t1.ln() + k0m * k0m / 4.0 * t2.ln()
        - (k0m * pr.gamma2 + pr.theta0 + 2.0 * pr.theta2_inf) * t1 / 2.0
        + (k1m * pr.gamma1 + pr.theta0) * t2 / 2.0
        + pr.gamma1 * pr.gamma2 * t1 * t2 / 2.0
}

// ---------------------------------------------------------------------------
// Action rates and potentials
// ---------------------------------------------------------------------------

fn action_rates_from(
    fam: &ReducedFamily,
    tau: &TimePoint,
    st: &KnsState,
    drop_det: bool,
) -> (C64, C64) {
    let b00 = &fam.b0_0;
    let b10 = &fam.b1_0;
    let b0m = &fam.b0_m1;
    let det00 = det2(b00);
    let shared = tau.c1 * tau.c2 * (0.5 - st.p2);
    let cross_a = 2.0 * b00[(0, 0)] * b10[(0, 0)]
        + b00[(1, 0)] * b10[(0, 1)]
        + b00[(0, 1)] * b10[(1, 0)];
    let cross_b = 2.0 * b0m[(0, 0)] * b10[(0, 0)]
        + b0m[(1, 0)] * b10[(0, 1)]
        + b0m[(0, 1)] * b10[(1, 0)];
    let det_first = if drop_det { cr(0.0) } else { det00 };
    let sr1 = shared + det_first - cross_a - tau.c1 * st.p1 * st.q1;
    let sr2 = shared + det00 + cross_b;
    (sr1, sr2)
}

/// The two weighted rates of the action gauge, `(τ₁·∂τ₁S, τ₂·∂τ₂S)`, as
/// functions of the state. `S` itself is their path quadrature with `S = 0`
/// at the construction's base point; the cross-derivative compatibility of
/// the two rates along the flows is what the order-swap check certifies.
pub fn action_rates(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
) -> Result<(C64, C64), PhaseError> {
    let tau = time.to_tau();
    let fam = reduced_family(&tau, st, pr)?;
    Ok(action_rates_from(&fam, &tau, st, false))
}

/// State-dependent potentials `(g₁, g₂)` of the kernel pair.
pub fn kernel_potentials(
    time: &TimePoint,
    zeta: C64,
    eta: C64,
    st: &KnsState,
    pr: &ParameterSet,
) -> Result<(C64, C64), PhaseError> {
    let tau = time.to_tau();
    let fam = reduced_family(&tau, st, pr)?;
    let (t1, t2) = (tau.c1, tau.c2);
    let (z, e) = (zeta, eta);
    let ze = z * e;
    let b00 = &fam.b0_0;
    let b10 = &fam.b1_0;
    let b0m = &fam.b0_m1;
    let g1 = t2 * t2 * (ze - z - e) / (4.0 * ze * ze)
        - pr.theta0 * t2 / (2.0 * ze)
        + t1 * t2 * (0.5 - st.p2)
        + det2(b00)
        + pr.theta1 * pr.theta1 * (z + e - ze) / (4.0 * (z - 1.0) * (e - 1.0))
        - 2.0 * b00[(0, 0)] * b10[(0, 0)]
        - b00[(1, 0)] * b10[(0, 1)]
        - b00[(0, 1)] * b10[(1, 0)]
        - t1 * (st.p1 * st.q1 + 0.5 * pr.theta0 + pr.theta2_inf)
        + 0.5 * t1 * (pr.theta2_inf - pr.theta1_inf) * (z + e)
        + 0.25 * t1 * t1 * (z + e - z * z - e * e - ze);
    let g2 = t2 * t2 * (ze * (z + e) - z * z - e * e - ze) / (4.0 * ze * ze)
        + pr.theta0 * t2 * (ze - z - e) / (2.0 * ze)
        + t1 * t2 * (0.5 - st.p2)
        + det2(b00)
        + pr.theta1 * pr.theta1 * ze / (4.0 * (z - 1.0) * (e - 1.0))
        + 2.0 * b0m[(0, 0)] * b10[(0, 0)]
        + b0m[(1, 0)] * b10[(0, 1)]
        + b0m[(0, 1)] * b10[(1, 0)]
        + 0.5 * t1 * (pr.theta2_inf - pr.theta1_inf) * ze
        + 0.25 * t1 * t1 * ze * (1.0 - z - e);
    Ok((g1, g2))
}

/// State-free potentials `(g₃, g₄)` of the gauged pair. By construction
/// they equal the kernel potentials minus the action rates; the signature
/// taking no state is part of the claim.
pub fn gauged_potentials(
    time: &TimePoint,
    zeta: C64,
    eta: C64,
    pr: &ParameterSet,
) -> (C64, C64) {
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let (z, e) = (zeta, eta);
    let ze = z * e;
    let g3 = t2 * t2 * (ze - z - e) / (4.0 * ze * ze)
        - pr.theta0 * t2 / (2.0 * ze)
        + pr.theta1 * pr.theta1 * (z + e - ze) / (4.0 * (z - 1.0) * (e - 1.0))
        - t1 * (0.5 * pr.theta0 + pr.theta2_inf)
        + 0.5 * t1 * (pr.theta2_inf - pr.theta1_inf) * (z + e)
        + 0.25 * t1 * t1 * (z + e - z * z - e * e - ze);
    let g4 = t2 * t2 * (ze * (z + e) - z * z - e * e - ze) / (4.0 * ze * ze)
        + pr.theta0 * t2 * (ze - z - e) / (2.0 * ze)
        + pr.theta1 * pr.theta1 * ze / (4.0 * (z - 1.0) * (e - 1.0))
        + 0.5 * t1 * (pr.theta2_inf - pr.theta1_inf) * ze
        + 0.25 * t1 * t1 * ze * (1.0 - z - e);
    (g3, g4)
}

/// Potentials `(g₅, g₆)` of the ratio pair — the gauged potentials pulled
/// back through the ratio map, written directly in `(x, y)`.
pub fn ratio_potentials(time: &TimePoint, x: C64, y: C64, pr: &ParameterSet) -> (C64, C64) {
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let xy = x * y;
    let xm = x - 1.0;
    let ym = y - 1.0;
    let g5 = t2 * t2 * (x + y - xy) * xm * ym / (4.0 * xy * xy)
        - pr.theta0 * t2 * xm * ym / (2.0 * xy)
        + 0.25 * pr.theta1 * pr.theta1 * (xy - x - y)
        - t1 * (0.5 * pr.theta0 + pr.theta2_inf)
        + t1 * (pr.theta2_inf - pr.theta1_inf) * (2.0 * xy - x - y) / (2.0 * xm * ym)
        - t1 * t1 * (xy * xy - 3.0 * xy + x + y) / (4.0 * xm * xm * ym * ym);
    let g6 = t2 * t2 * (2.0 * x * xy + 2.0 * y * xy - xy * xy - xy - x * x - y * y)
        / (4.0 * xy * xy)
        + pr.theta0 * t2 * (x + y - xy) / (2.0 * xy)
        + 0.25 * pr.theta1 * pr.theta1 * xy
        + t1 * (pr.theta2_inf - pr.theta1_inf) * xy / (2.0 * xm * ym)
        + t1 * t1 * xy * (1.0 - xy) / (4.0 * xm * xm * ym * ym);
    (g5, g6)
}

/// Potentials `(g₇, g₈)` of the normalized pair. The corrected forms carry
/// κ+1 and a negative (γ₁²−1) weight in the first potential and no
/// `(x−y)⁻²` terms; the mutations reinstate the uncorrected variants.
pub fn normalized_potentials(
    time: &TimePoint,
    x: C64,
    y: C64,
    pr: &ParameterSet,
    mutation: PsiMutation,
) -> (C64, C64) {
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let xy = x * y;
    let xm = x - 1.0;
    let ym = y - 1.0;
    let kap = match mutation {
        PsiMutation::KappaConstant => pr.kappa,
        PsiMutation::KappaPerturb => pr.kappa + 1.0 + 0.1,
        _ => pr.kappa + 1.0,
    };
    let c1sq = pr.gamma1 * pr.gamma1 - 1.0;
    let c2sq = pr.gamma2 * pr.gamma2 - 1.0;
    let gamma1_first_sign = if mutation == PsiMutation::GammaSignFlip {
        1.0
    } else {
        -1.0
    };
    let mut g7 = -kap * xm * ym
        + gamma1_first_sign * c1sq * t2 * t2 * xm * ym * (x + y - xy) / (4.0 * xy * xy)
        + c2sq * t1 * t1 * (xy * xy - 3.0 * xy + x + y) / (4.0 * xm * xm * ym * ym);
    let mut g8 = -kap * xy
        + c1sq * t2 * t2 * (xy * xy + xy + x * x + y * y - 2.0 * x * xy - 2.0 * y * xy)
            / (4.0 * xy * xy)
        + c2sq * t1 * t1 * xy * (xy - 1.0) / (4.0 * xm * xm * ym * ym);
    if mutation == PsiMutation::PoleTerm {
        let d2 = (x - y) * (x - y);
        g7 += 4.0 * xm * ym * xy / d2;
        g8 += 2.0 * xy * (2.0 * xy - x - y) / d2;
    }
    (g7, g8)
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

/// Transport one solution slice along the straight spectral segment
/// `from → to` at frozen times. The segment must keep clear of the two
/// spectral poles.
pub fn spectral_transport(
    fam: &ReducedFamily,
    z: &M2,
    from: C64,
    to: C64,
    how: Transport,
) -> Result<M2, PsiError> {
    for pole in [0.0, 1.0] {
        if segment_point_distance(from, to, cr(pole)) < SPECTRAL_CLEARANCE {
            return Err(PsiError::SpectralClearance { pole, clearance: SPECTRAL_CLEARANCE });
        }
    }
    let delta = to - from;
    let mut y = [cr(0.0); 4];
    pack(z, &mut y);
    let mut rhs = |sigma: f64, y: &[C64], dy: &mut [C64]| -> Result<(), PhaseError> {
        let s = from + delta * sigma;
        let u = u_eta(fam, s)?;
        let dz = u * unpack(y) * delta;
        pack(&dz, dy);
        Ok(())
    };
    match how {
        Transport::Adaptive(tol) => {
            adaptive_ode(&mut rhs, &mut y, tol)?;
        }
        Transport::Fixed(n) => fixed_step_ode(&mut rhs, &mut y, n)?,
    }
    Ok(unpack(&y))
}

/// One straight leg of the augmented system along a plain-time coordinate:
/// state (5), action gauge (1), and one solution slice per spectral column.
/// `y` is laid out `[q₁, q₂, p₁, p₂, u, S, Z₀…, Z₁…, …]`. Returns the
/// endpoint time (plain chart).
fn augmented_leg(
    start: &TimePoint,
    y: &mut [C64],
    j: u8,
    target: C64,
    spectral: &[C64],
    pr: &ParameterSet,
    how: Transport,
    drop_det: bool,
) -> Result<TimePoint, PsiError> {
    debug_assert_eq!(y.len(), 6 + 4 * spectral.len());
    let t0 = start.to_t();
    let path = FlowPath {
        start: t0,
        segments: vec![PathSegment { j, to: target }],
    };
    path.validate(PATH_CLEARANCE)?;
    let (from, frozen) = if j == 1 { (t0.c1, t0.c2) } else { (t0.c2, t0.c1) };
    let delta = target - from;
    let mut rhs = |sigma: f64, y: &[C64], dy: &mut [C64]| -> Result<(), PhaseError> {
        let tj = from + delta * sigma;
        let tp = if j == 1 {
            TimePoint::t(tj, frozen)
        } else {
            TimePoint::t(frozen, tj)
        };
        let st = KnsState::new(y[0], y[1], y[2], y[3], y[4]);
        let vel = kns_velocity(j, &tp, &st, pr)?;
        let tau = tp.to_tau();
        let fam = reduced_family(&tau, &st, pr)?;
        let (sr1, sr2) = action_rates_from(&fam, &tau, &st, drop_det);
        dy[0] = delta * vel.q1;
        dy[1] = delta * vel.q2;
        dy[2] = delta * vel.p1;
        dy[3] = delta * vel.p2;
        dy[4] = delta * vel.u;
        dy[5] = delta
            * if j == 1 {
                (sr1 - sr2) / tau.c1
            } else {
                sr2 / (tau.c1 * tau.c2)
            };
        for (k, &sp) in spectral.iter().enumerate() {
            let u = if j == 1 {
                u_t1(&fam, &tau, sp)?
            } else {
                u_t2(&fam, &tau, sp)?
            };
            let lo = 6 + 4 * k;
            let dz = u * unpack(&y[lo..lo + 4]) * delta;
            pack(&dz, &mut dy[lo..lo + 4]);
        }
        Ok(())
    };
    match how {
        Transport::Adaptive(tol) => {
            adaptive_ode(&mut rhs, y, tol)?;
        }
        Transport::Fixed(n) => fixed_step_ode(&mut rhs, y, n)?,
    }
    Ok(if j == 1 {
        TimePoint::t(target, frozen)
    } else {
        TimePoint::t(frozen, target)
    })
}

/// Transport (state, action gauge, slices) along the `τ_j` direction by
/// `delta`, holding the other τ-coordinate fixed. A τ₁ displacement moves
/// both plain times, so it is a `t₁` leg followed by a `t₂` leg.
fn flow_columns(
    time: &TimePoint,
    st: &KnsState,
    s_gauge: C64,
    slices: &[M2],
    spectral: &[C64],
    j: u8,
    delta: C64,
    pr: &ParameterSet,
    how: Transport,
    drop_det: bool,
) -> Result<(TimePoint, KnsState, C64, Vec<M2>), PsiError> {
    let tau = time.to_tau();
    let t = tau.to_t();
    let mut y = vec![cr(0.0); 6 + 4 * spectral.len()];
    y[0] = st.q1;
    y[1] = st.q2;
    y[2] = st.p1;
    y[3] = st.p2;
    y[4] = st.u;
    y[5] = s_gauge;
    for (k, z) in slices.iter().enumerate() {
        pack(z, &mut y[6 + 4 * k..10 + 4 * k]);
    }
    let end = if j == 1 {
        let t1_new = tau.c1 + delta;
        let mid = augmented_leg(&t, &mut y, 1, t1_new, spectral, pr, how, drop_det)?;
        augmented_leg(&mid, &mut y, 2, t1_new * tau.c2, spectral, pr, how, drop_det)?
    } else {
        augmented_leg(&t, &mut y, 2, tau.c1 * (tau.c2 + delta), spectral, pr, how, drop_det)?
    };
    let state = KnsState::new(y[0], y[1], y[2], y[3], y[4]);
    let out = (0..spectral.len())
        .map(|k| unpack(&y[6 + 4 * k..10 + 4 * k]))
        .collect();
    Ok((end.to_tau(), state, y[5], out))
}

// ---------------------------------------------------------------------------
// Kernel points and stencils
// ---------------------------------------------------------------------------

/// Everything the construction carries at one `(τ, ζ, η)` point: the
/// canonical state, the accumulated action gauge (zero at the base point),
/// and the two solution slices.
#[derive(Clone, Copy, Debug)]
pub struct KernelPoint {
    pub time: TimePoint,
    pub state: KnsState,
    pub s_gauge: C64,
    pub zeta: C64,
    pub eta: C64,
    pub z_zeta: M2,
    pub z_eta: M2,
}

/// Which spectral slice a displacement moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralLeg {
    Zeta,
    Eta,
}

/// Normalize the construction at `(time, st)`: the slice at ζ is the
/// identity, the slice at η is transported from it along the spectral
/// segment, and the action gauge starts at zero.
pub fn base_point(
    time: &TimePoint,
    st: &KnsState,
    zeta: C64,
    eta: C64,
    pr: &ParameterSet,
    how: Transport,
) -> Result<KernelPoint, PsiError> {
    let dist = (zeta - eta).norm();
    if dist < SPECTRAL_CLEARANCE {
        return Err(PsiError::CoincidentSpectral { dist, clearance: SPECTRAL_CLEARANCE });
    }
    let tau = time.to_tau();
    let fam = reduced_family(&tau, st, pr)?;
    let z_eta = spectral_transport(&fam, &M2::identity(), zeta, eta, how)?;
    Ok(KernelPoint {
        time: tau,
        state: *st,
        s_gauge: cr(0.0),
        zeta,
        eta,
        z_zeta: M2::identity(),
        z_eta,
    })
}

/// Displace one spectral point by `delta`, transporting its slice.
pub fn shift_spectral(
    p: &KernelPoint,
    leg: SpectralLeg,
    delta: C64,
    pr: &ParameterSet,
    how: Transport,
) -> Result<KernelPoint, PsiError> {
    let tau = p.time.to_tau();
    let fam = reduced_family(&tau, &p.state, pr)?;
    let mut out = *p;
    match leg {
        SpectralLeg::Zeta => {
            out.z_zeta = spectral_transport(&fam, &p.z_zeta, p.zeta, p.zeta + delta, how)?;
            out.zeta = p.zeta + delta;
        }
        SpectralLeg::Eta => {
            out.z_eta = spectral_transport(&fam, &p.z_eta, p.eta, p.eta + delta, how)?;
            out.eta = p.eta + delta;
        }
    }
    Ok(out)
}

/// Displace the point along `τ_j` by `delta`, transporting state, action
/// gauge, and both slices together.
pub fn shift_time(
    p: &KernelPoint,
    j: u8,
    delta: C64,
    pr: &ParameterSet,
    how: Transport,
    drop_det: bool,
) -> Result<KernelPoint, PsiError> {
    let spectral = [p.zeta, p.eta];
    let slices = [p.z_zeta, p.z_eta];
    let (time, state, s_gauge, out) =
        flow_columns(&p.time, &p.state, p.s_gauge, &slices, &spectral, j, delta, pr, how, drop_det)?;
    Ok(KernelPoint {
        time,
        state,
        s_gauge,
        zeta: p.zeta,
        eta: p.eta,
        z_zeta: out[0],
        z_eta: out[1],
    })
}

/// Exchange the roles of the two spectral points in place (no transport);
/// the kernel of the swapped point is the inverse of the original kernel.
pub fn swap_roles(p: &KernelPoint) -> KernelPoint {
    KernelPoint {
        time: p.time,
        state: p.state,
        s_gauge: p.s_gauge,
        zeta: p.eta,
        eta: p.zeta,
        z_zeta: p.z_eta,
        z_eta: p.z_zeta,
    }
}

/// The two-point kernel `M = Z(η)⁻¹ Z(ζ)` at this point.
pub fn kernel(p: &KernelPoint) -> Result<M2, PsiError> {
    Ok(invert_unimodular(&p.z_eta)? * p.z_zeta)
}

/// Step sizes of one centered stencil: one step for the two time
/// directions, one for the two spectral directions.
#[derive(Clone, Copy, Debug)]
pub struct StencilSpec {
    pub h_tau: f64,
    pub h_spec: f64,
}

impl StencilSpec {
    pub fn uniform(h: f64) -> Self {
        Self { h_tau: h, h_spec: h }
    }
}

/// The thirteen anchors of one centered second-order stencil: the center,
/// ± displacements along ζ, η, τ₁, τ₂, and the four (ζ±h, η±h) corners for
/// the mixed spectral derivative.
pub struct Stencil {
    pub center: KernelPoint,
    spec: StencilSpec,
    zp: KernelPoint,
    zm: KernelPoint,
    ep: KernelPoint,
    em: KernelPoint,
    t1p: KernelPoint,
    t1m: KernelPoint,
    t2p: KernelPoint,
    t2m: KernelPoint,
    pp: KernelPoint,
    pm: KernelPoint,
    mp: KernelPoint,
    mm: KernelPoint,
}

/// Build all stencil anchors by fixed-step transport from the center.
/// `drop_det` corrupts the action quadrature on the time legs (negative
/// control for the action-gauged families).
pub fn build_stencil(
    center: &KernelPoint,
    pr: &ParameterSet,
    spec: StencilSpec,
    drop_det: bool,
) -> Result<Stencil, PsiError> {
    let how = Transport::Fixed(STENCIL_TRANSPORT_STEPS);
    let hz = cr(spec.h_spec);
    let ht = cr(spec.h_tau);
    let zp = shift_spectral(center, SpectralLeg::Zeta, hz, pr, how)?;
    let zm = shift_spectral(center, SpectralLeg::Zeta, -hz, pr, how)?;
    let ep = shift_spectral(center, SpectralLeg::Eta, hz, pr, how)?;
    let em = shift_spectral(center, SpectralLeg::Eta, -hz, pr, how)?;
    let pp = shift_spectral(&zp, SpectralLeg::Eta, hz, pr, how)?;
    let pm = shift_spectral(&zp, SpectralLeg::Eta, -hz, pr, how)?;
    let mp = shift_spectral(&zm, SpectralLeg::Eta, hz, pr, how)?;
    let mm = shift_spectral(&zm, SpectralLeg::Eta, -hz, pr, how)?;
    let t1p = shift_time(center, 1, ht, pr, how, drop_det)?;
    let t1m = shift_time(center, 1, -ht, pr, how, drop_det)?;
    let t2p = shift_time(center, 2, ht, pr, how, drop_det)?;
    let t2m = shift_time(center, 2, -ht, pr, how, drop_det)?;
    Ok(Stencil {
        center: *center,
        spec,
        zp,
        zm,
        ep,
        em,
        t1p,
        t1m,
        t2p,
        t2m,
        pp,
        pm,
        mp,
        mm,
    })
}

/// Which scalar field the stencil is differenced on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldLevel {
    /// An entry of the kernel `M` itself.
    Kernel,
    /// The action-gauged entry of `W = e^{−S} M`.
    Gauged,
    /// The fully normalized entry of `Ψ = e^{−f₁−f₂} W`.
    Normalized,
    /// Normalized with the shifted log weights (negative control).
    NormalizedShiftedLogs,
}

/// The scalar value of the chosen field at one kernel point.
pub fn level_value(
    p: &KernelPoint,
    pr: &ParameterSet,
    level: FieldLevel,
    entry: (usize, usize),
) -> Result<C64, PsiError> {
    let m = kernel(p)?;
    let v = m[entry];
    Ok(match level {
        FieldLevel::Kernel => v,
        FieldLevel::Gauged => (-p.s_gauge).exp() * v,
        FieldLevel::Normalized | FieldLevel::NormalizedShiftedLogs => {
            let shifted = level == FieldLevel::NormalizedShiftedLogs;
            let x = ratio_coordinate(p.zeta)?;
            let y = ratio_coordinate(p.eta)?;
            let f = f1_gauge(x, y, &p.time, pr, shifted) + f2_gauge(&p.time, pr, shifted);
            (-p.s_gauge - f).exp() * v
        }
    })
}

/// Centered finite-difference jet of one scalar field at the stencil
/// center: value, first and second derivatives in the two spectral
/// directions (including the mixed one), and the two time derivatives.
#[derive(Clone, Copy, Debug)]
pub struct ScalarJet {
    pub v: C64,
    pub vz: C64,
    pub ve: C64,
    pub vzz: C64,
    pub vee: C64,
    pub vze: C64,
    pub vt1: C64,
    pub vt2: C64,
}

/// Difference the chosen field over the stencil.
pub fn scalar_jet(
    st: &Stencil,
    pr: &ParameterSet,
    level: FieldLevel,
    entry: (usize, usize),
) -> Result<ScalarJet, PsiError> {
    let f = |p: &KernelPoint| level_value(p, pr, level, entry);
    let v = f(&st.center)?;
    let (vzp, vzm) = (f(&st.zp)?, f(&st.zm)?);
    let (vep, vem) = (f(&st.ep)?, f(&st.em)?);
    let (v1p, v1m) = (f(&st.t1p)?, f(&st.t1m)?);
    let (v2p, v2m) = (f(&st.t2p)?, f(&st.t2m)?);
    let (vpp, vpm, vmp, vmm) = (f(&st.pp)?, f(&st.pm)?, f(&st.mp)?, f(&st.mm)?);
    let hs = st.spec.h_spec;
    let ht = st.spec.h_tau;
    Ok(ScalarJet {
        v,
        vz: (vzp - vzm) / (2.0 * hs),
        ve: (vep - vem) / (2.0 * hs),
        vzz: (vzp - 2.0 * v + vzm) / (hs * hs),
        vee: (vep - 2.0 * v + vem) / (hs * hs),
        vze: (vpp - vpm - vmp + vmm) / (4.0 * hs * hs),
        vt1: (v1p - v1m) / (2.0 * ht),
        vt2: (v2p - v2m) / (2.0 * ht),
    })
}

// ---------------------------------------------------------------------------
// Residual families
// ---------------------------------------------------------------------------

/// LHS − RHS of the shared second-order spectral operator pair applied to a
/// jet, with the given zeroth-order potentials.
fn spectral_operator_defects(
    j: &ScalarJet,
    t1: C64,
    t2: C64,
    z: C64,
    e: C64,
    g_first: C64,
    g_second: C64,
) -> (C64, C64) {
    let d = z - e;
    let d2 = d * d;
    let first = t1 * j.vt1
        - (z * z * (z - 1.0) / d * j.vzz - e * e * (e - 1.0) / d * j.vee
            + z * (z * z - 3.0 * z * e + 2.0 * e) / d2 * j.vz
            + e * (e * e - 3.0 * z * e + 2.0 * z) / d2 * j.ve
            + g_first * j.v);
    let second = t2 * j.vt2
        - (z * z * e * (z - 1.0) / d * j.vzz - z * e * e * (e - 1.0) / d * j.vee
            + z * e * (z + e - 2.0 * z * e) / d2 * (j.vz + j.ve)
            + g_second * j.v);
    (first, second)
}

/// Raw complex defects of the kernel pair at the jet's center. With
/// `shift_g1` the first potential is corrupted by +1, which must move the
/// first defect by exactly the field value.
pub fn kernel_defects(
    jet: &ScalarJet,
    time: &TimePoint,
    zeta: C64,
    eta: C64,
    st: &KnsState,
    pr: &ParameterSet,
    shift_g1: bool,
) -> Result<(C64, C64), PsiError> {
    let dist = (zeta - eta).norm();
    if dist < SPECTRAL_CLEARANCE {
        return Err(PsiError::CoincidentSpectral { dist, clearance: SPECTRAL_CLEARANCE });
    }
    let tau = time.to_tau();
    let (mut g1, g2) = kernel_potentials(&tau, zeta, eta, st, pr)?;
    if shift_g1 {
        g1 += 1.0;
    }
    Ok(spectral_operator_defects(jet, tau.c1, tau.c2, zeta, eta, g1, g2))
}

/// Raw complex defects of the gauged pair (state-free potentials).
pub fn gauged_defects(
    jet: &ScalarJet,
    time: &TimePoint,
    zeta: C64,
    eta: C64,
    pr: &ParameterSet,
) -> Result<(C64, C64), PsiError> {
    let dist = (zeta - eta).norm();
    if dist < SPECTRAL_CLEARANCE {
        return Err(PsiError::CoincidentSpectral { dist, clearance: SPECTRAL_CLEARANCE });
    }
    let tau = time.to_tau();
    let (g3, g4) = gauged_potentials(&tau, zeta, eta, pr);
    Ok(spectral_operator_defects(jet, tau.c1, tau.c2, zeta, eta, g3, g4))
}

/// A jet re-expressed in the ratio coordinates, by the exact chain rule of
/// the involution (`dζ/dx = −(ζ−1)²`, `d²ζ/dx² = 2(ζ−1)³`).
#[derive(Clone, Copy, Debug)]
pub struct RatioJet {
    pub v: C64,
    pub vx: C64,
    pub vy: C64,
    pub vxx: C64,
    pub vyy: C64,
    pub vxy: C64,
    pub vt1: C64,
    pub vt2: C64,
}

pub fn ratio_jet(j: &ScalarJet, zeta: C64, eta: C64) -> RatioJet {
    let dz = -(zeta - 1.0) * (zeta - 1.0);
    let dzz = 2.0 * (zeta - 1.0) * (zeta - 1.0) * (zeta - 1.0);
    let de = -(eta - 1.0) * (eta - 1.0);
    let dee = 2.0 * (eta - 1.0) * (eta - 1.0) * (eta - 1.0);
    RatioJet {
        v: j.v,
        vx: j.vz * dz,
        vy: j.ve * de,
        vxx: j.vzz * dz * dz + j.vz * dzz,
        vyy: j.vee * de * de + j.ve * dee,
        vxy: j.vze * dz * de,
        vt1: j.vt1,
        vt2: j.vt2,
    }
}

/// Raw complex defects of the ratio pair. The corrected first-derivative
/// coefficients carry the chain-rule cross terms of the coordinate change;
/// `drop_chain_terms` removes them (negative control) — the resulting pair
/// looks plausible but is not satisfied by the construction.
pub fn ratio_defects(
    rj: &RatioJet,
    time: &TimePoint,
    x: C64,
    y: C64,
    pr: &ParameterSet,
    drop_chain_terms: bool,
) -> Result<(C64, C64), PsiError> {
    ensure_ratio_clear(x, y)?;
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let xm = x - 1.0;
    let ym = y - 1.0;
    let d = x - y;
    let d2 = d * d;
    let fxx = x * x * xm * xm * ym / d;
    let fyy = y * y * ym * ym * xm / d;
    let gxx = x * x * xm * xm * y / d;
    let gyy = x * y * y * ym * ym / d;
    let (cx, cy, ex, ey) = if drop_chain_terms {
        (
            x * xm * ym * (x * x + x * y - 2.0 * y) / d2,
            y * ym * xm * (y * y + x * y - 2.0 * x) / d2,
            x * y * (x + y) * xm * xm / d2,
            x * y * (x + y) * ym * ym / d2,
        )
    } else {
        (
            -x * xm * ym * (x * x - 3.0 * x * y + 2.0 * y) / d2,
            -y * xm * ym * (y * y - 3.0 * x * y + 2.0 * x) / d2,
            -x * y * xm * (x * x - 3.0 * x * y + x + y) / d2,
            -x * y * ym * (y * y - 3.0 * x * y + x + y) / d2,
        )
    };
    let (g5, g6) = ratio_potentials(&tau, x, y, pr);
    let first = t1 * rj.vt1 - (-fxx * rj.vxx + fyy * rj.vyy + cx * rj.vx + cy * rj.vy + g5 * rj.v);
    let second = t2 * rj.vt2 - (-gxx * rj.vxx + gyy * rj.vyy + ex * rj.vx + ey * rj.vy + g6 * rj.v);
    Ok((first, second))
}

/// Raw complex defects of the normalized pair: simple-pole first-derivative
/// brackets and the normalized potentials (with mutation hooks).
pub fn normalized_defects(
    rj: &RatioJet,
    time: &TimePoint,
    x: C64,
    y: C64,
    pr: &ParameterSet,
    mutation: PsiMutation,
) -> Result<(C64, C64), PsiError> {
    ensure_ratio_clear(x, y)?;
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let xm = x - 1.0;
    let ym = y - 1.0;
    let d = x - y;
    let fxx = x * x * xm * xm * ym / d;
    let fyy = y * y * ym * ym * xm / d;
    let gxx = x * x * xm * xm * y / d;
    let gyy = x * y * y * ym * ym / d;
    let bracket_first = |s: C64| {
        pr.kappa0 / s - pr.gamma1 * t2 / (s * s) + (pr.kappa1 - 1.0) / (s - 1.0)
            - pr.gamma2 * t1 / ((s - 1.0) * (s - 1.0))
    };
    let bracket_second = |s: C64| {
        (pr.kappa0 - 1.0) / s - pr.gamma1 * t2 / (s * s) + pr.kappa1 / (s - 1.0)
            - pr.gamma2 * t1 / ((s - 1.0) * (s - 1.0))
    };
    let (g7, g8) = normalized_potentials(&tau, x, y, pr, mutation);
    let first = t1 * rj.vt1
        - (-fxx * rj.vxx + fyy * rj.vyy - fxx * bracket_first(x) * rj.vx
            + fyy * bracket_first(y) * rj.vy
            + g7 * rj.v);
    let second = t2 * rj.vt2
        - (-gxx * rj.vxx + gyy * rj.vyy - gxx * bracket_second(x) * rj.vx
            + gyy * bracket_second(y) * rj.vy
            + g8 * rj.v);
    Ok((first, second))
}

/// A jet transplanted to the polynomial-chart variables by exact linear
/// solves against the coordinate-change Jacobian.
#[derive(Clone, Copy, Debug)]
pub struct PolynomialJet {
    pub v: C64,
    pub vr: C64,
    pub vrho: C64,
    pub vrr: C64,
    pub vrrho: C64,
    pub vrhorho: C64,
    pub vs1: C64,
    pub vs2: C64,
    pub r: C64,
    pub rho: C64,
    pub s1: C64,
    pub s2: C64,
}

/// Re-express a ratio-coordinate jet in `(r, ρ, s₁, s₂)`. The first
/// derivatives solve the 2×2 Jacobian system; the second derivatives solve
/// the 3×3 system with the mixed-map corrections `r_{xy} = 1/τ₁`,
/// `ρ_{xy} = 1` (the only nonvanishing second partials of the map); the
/// evolution derivatives fold in the τ dependence of `r` and `s₁`.
pub fn polynomial_jet(
    rj: &RatioJet,
    time: &TimePoint,
    x: C64,
    y: C64,
) -> Result<PolynomialJet, PsiError> {
    let tau = time.to_tau();
    let (t1, t2) = (tau.c1, tau.c2);
    let r = (x - 1.0) * (y - 1.0) / t1;
    let rho = x * y;
    let s1 = 1.0 / t1;
    let s2 = -t2;
    let rx = (y - 1.0) / t1;
    let ry = (x - 1.0) / t1;
    let px = y;
    let py = x;
    let det = rx * py - px * ry;
    if det.norm() < 1e-13 {
        return Err(PsiError::JacobianSingular);
    }
    let vr = (rj.vx * py - rj.vy * px) / det;
    let vrho = (rx * rj.vy - ry * rj.vx) / det;
    let a = nalgebra::Matrix3::new(
        rx * rx,
        2.0 * rx * px,
        px * px,
        rx * ry,
        rx * py + px * ry,
        px * py,
        ry * ry,
        2.0 * ry * py,
        py * py,
    );
    let b = nalgebra::Vector3::new(rj.vxx, rj.vxy - vr / t1 - vrho, rj.vyy);
    let sec = a.lu().solve(&b).ok_or(PsiError::JacobianSingular)?;
    Ok(PolynomialJet {
        v: rj.v,
        vr,
        vrho,
        vrr: sec[0],
        vrrho: sec[1],
        vrhorho: sec[2],
        vs1: -t1 * t1 * rj.vt1 - t1 * r * vr,
        vs2: -rj.vt2,
        r,
        rho,
        s1,
        s2,
    })
}

/// Raw complex defects of the polynomial pair. The corrected potentials
/// carry κ+1 and zeroth-order defect terms proportional to (γ₁²−1) and
/// (γ₂²−1), which vanish exactly on the γ₁² = γ₂² = 1 parameter locus.
pub fn polynomial_defects(pj: &PolynomialJet, pr: &ParameterSet) -> (C64, C64) {
    let (r, rho, s1, s2) = (pj.r, pj.rho, pj.s1, pj.s2);
    let kap = pr.kappa + 1.0;
    let c1sq = pr.gamma1 * pr.gamma1 - 1.0;
    let c2sq = pr.gamma2 * pr.gamma2 - 1.0;
    let rho1 = rho - 1.0;
    let d1 = -c2sq * (s1 * rho1 * rho1 - r) / (4.0 * r * r)
        - c1sq * s2 * s2 * r * (r - s1) / (4.0 * s1 * rho * rho);
    let d2 = -c1sq * s2 * s2 * ((r - s1) * (r - s1) - s1 * s1 * rho) / (4.0 * s1 * s1 * rho * rho)
        - c2sq * rho * rho1 / (4.0 * r * r);
    let first = s1 * s1 * pj.vs1
        - (r * r * (r - s1) * pj.vrr + 2.0 * r * r * rho * pj.vrrho + r * rho * rho * pj.vrhorho
            + ((pr.kappa0 - 1.0) * r * r + (pr.kappa1 * r + pr.gamma2) * (r - s1)
                + pr.gamma2 * s1 * rho)
                * pj.vr
            + ((pr.kappa0 + pr.kappa1 - 1.0) * r * rho + pr.gamma1 * s2 * r + pr.gamma2 * rho)
                * pj.vrho
            + (kap * r + d1) * pj.v);
    let second = -s2 * pj.vs2
        - (r * r * rho * pj.vrr + 2.0 * r * rho * rho * pj.vrrho
            + rho * rho * rho1 * pj.vrhorho
            + ((pr.kappa0 + pr.kappa1 - 1.0) * r * rho + pr.gamma1 * s2 * r + pr.gamma2 * rho)
                * pj.vr
            + ((pr.kappa0 - 1.0) * rho * rho1 + pr.kappa1 * rho * rho + pr.gamma1 * s2 * r / s1
                + pr.gamma1 * s2 * rho1)
                * pj.vrho
            + (kap * rho + d2) * pj.v);
    (first, second)
}

/// Normalized residual magnitudes of all five equation pairs at one center,
/// each `|LHS − RHS| / (1 + |field value|)`.
#[derive(Clone, Copy, Debug)]
pub struct NodeResiduals {
    pub kernel: [f64; 2],
    pub gauged: [f64; 2],
    pub ratio: [f64; 2],
    pub normalized: [f64; 2],
    pub polynomial: [f64; 2],
}

impl NodeResiduals {
    pub fn max(&self) -> f64 {
        [self.kernel, self.gauged, self.ratio, self.normalized, self.polynomial]
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

fn normalized_pair(defects: (C64, C64), value: C64) -> [f64; 2] {
    let denom = 1.0 + value.norm();
    [defects.0.norm() / denom, defects.1.norm() / denom]
}

/// Evaluate all five residual families on one matrix entry at one center,
/// with one stencil build. The mutation (if any) is routed to the family it
/// corrupts; every other family sees the corrected evaluation, except that
/// the action-quadrature corruption propagates to every `S`-dependent level
/// and the log-weight corruption to the normalized and polynomial levels.
pub fn node_residuals(
    center: &KernelPoint,
    pr: &ParameterSet,
    spec: StencilSpec,
    entry: (usize, usize),
    mutation: PsiMutation,
) -> Result<NodeResiduals, PsiError> {
    let stencil = build_stencil(center, pr, spec, mutation == PsiMutation::DropActionDet)?;
    let x = ratio_coordinate(center.zeta)?;
    let y = ratio_coordinate(center.eta)?;
    ensure_ratio_clear(x, y)?;

    let mjet = scalar_jet(&stencil, pr, FieldLevel::Kernel, entry)?;
    let wjet = scalar_jet(&stencil, pr, FieldLevel::Gauged, entry)?;
    let level = if mutation == PsiMutation::LogWeight {
        FieldLevel::NormalizedShiftedLogs
    } else {
        FieldLevel::Normalized
    };
    let njet = scalar_jet(&stencil, pr, level, entry)?;

    let time = &center.time;
    let kernel_d = kernel_defects(
        &mjet,
        time,
        center.zeta,
        center.eta,
        &center.state,
        pr,
        mutation == PsiMutation::ShiftG1,
    )?;
    let gauged_d = gauged_defects(&wjet, time, center.zeta, center.eta, pr)?;
    let wxy = ratio_jet(&wjet, center.zeta, center.eta);
    let ratio_d = ratio_defects(&wxy, time, x, y, pr, mutation == PsiMutation::ChainDrop)?;
    let nxy = ratio_jet(&njet, center.zeta, center.eta);
    let normalized_d = normalized_defects(&nxy, time, x, y, pr, mutation)?;
    let poly = polynomial_jet(&nxy, time, x, y)?;
    let polynomial_d = polynomial_defects(&poly, pr);

    Ok(NodeResiduals {
        kernel: normalized_pair(kernel_d, mjet.v),
        gauged: normalized_pair(gauged_d, wjet.v),
        ratio: normalized_pair(ratio_d, wjet.v),
        normalized: normalized_pair(normalized_d, njet.v),
        polynomial: normalized_pair(polynomial_d, njet.v),
    })
}

// ---------------------------------------------------------------------------
// Solution grids and path independence
// ---------------------------------------------------------------------------

/// Fundamental-solution samples over a rectangular τ-grid × spectral nodes,
/// built spectral-first at the base time and then transported along the
/// flows (row of τ₁ steps, then columns of τ₂ steps).
pub struct SolutionGrid {
    pub base: TimePoint,
    pub dt: f64,
    pub n1: usize,
    pub n2: usize,
    pub spectral: Vec<C64>,
    states: Vec<KnsState>,
    s_gauge: Vec<C64>,
    z: Vec<M2>,
}

impl SolutionGrid {
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n1 && j < self.n2);
        i * self.n2 + j
    }

    pub fn time_at(&self, i: usize, j: usize) -> TimePoint {
        TimePoint::tau(self.base.c1 + cr(i as f64 * self.dt), self.base.c2 + cr(j as f64 * self.dt))
    }

    pub fn state(&self, i: usize, j: usize) -> &KnsState {
        &self.states[self.idx(i, j)]
    }

    pub fn action(&self, i: usize, j: usize) -> C64 {
        self.s_gauge[self.idx(i, j)]
    }

    pub fn slice(&self, i: usize, j: usize, k: usize) -> &M2 {
        &self.z[self.idx(i, j) * self.spectral.len() + k]
    }

    /// Largest deviation of any slice determinant from 1.
    pub fn max_det_deviation(&self) -> f64 {
        self.z
            .iter()
            .map(|m| (det2(m) - 1.0).norm())
            .fold(0.0, f64::max)
    }

    /// The kernel between two spectral nodes at one grid time.
    pub fn kernel(&self, i: usize, j: usize, kz: usize, ke: usize) -> Result<M2, PsiError> {
        Ok(invert_unimodular(self.slice(i, j, ke))? * self.slice(i, j, kz))
    }
}

/// Build a [`SolutionGrid`]: normalize `Z` to the identity at the first
/// spectral node of the base time, chain spectral transports through the
/// remaining nodes, then transport every column along the time grid.
pub fn build_solution_grid(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
    dt: f64,
    n1: usize,
    n2: usize,
    spectral: &[C64],
    tol: f64,
) -> Result<SolutionGrid, PsiError> {
    assert!(n1 > 0 && n2 > 0 && !spectral.is_empty());
    let tau = time.to_tau();
    let how = Transport::Adaptive(tol);
    let ns = spectral.len();

    // Base-time slices, chained node to node along the spectral line.
    let fam = reduced_family(&tau, st, pr)?;
    let mut base_slices = Vec::with_capacity(ns);
    base_slices.push(M2::identity());
    for k in 1..ns {
        let prev = base_slices[k - 1];
        base_slices.push(spectral_transport(&fam, &prev, spectral[k - 1], spectral[k], how)?);
    }

    let mut states = vec![*st; n1 * n2];
    let mut s_gauge = vec![cr(0.0); n1 * n2];
    let mut z = vec![M2::identity(); n1 * n2 * ns];
    z[..ns].copy_from_slice(&base_slices);

    // First row: τ₁ marches.
    for i in 1..n1 {
        let prev = (i - 1) * n2;
        let slices: Vec<M2> = (0..ns).map(|k| z[prev * ns + k]).collect();
        let tp = TimePoint::tau(tau.c1 + cr((i - 1) as f64 * dt), tau.c2);
        let (_, state, s, out) = flow_columns(
            &tp,
            &states[prev],
            s_gauge[prev],
            &slices,
            spectral,
            1,
            cr(dt),
            pr,
            how,
            false,
        )?;
        let here = i * n2;
        states[here] = state;
        s_gauge[here] = s;
        z[here * ns..(here + 1) * ns].copy_from_slice(&out);
    }

    // Columns: τ₂ marches from each row-0 node.
    for i in 0..n1 {
        for j in 1..n2 {
            let prev = i * n2 + (j - 1);
            let slices: Vec<M2> = (0..ns).map(|k| z[prev * ns + k]).collect();
            let tp = TimePoint::tau(tau.c1 + cr(i as f64 * dt), tau.c2 + cr((j - 1) as f64 * dt));
            let (_, state, s, out) = flow_columns(
                &tp,
                &states[prev],
                s_gauge[prev],
                &slices,
                spectral,
                2,
                cr(dt),
                pr,
                how,
                false,
            )?;
            let here = i * n2 + j;
            states[here] = state;
            s_gauge[here] = s;
            z[here * ns..(here + 1) * ns].copy_from_slice(&out);
        }
    }

    Ok(SolutionGrid {
        base: tau,
        dt,
        n1,
        n2,
        spectral: spectral.to_vec(),
        states,
        s_gauge,
        z,
    })
}

/// Transport a slice around the closed loop
/// `(τ, η₀) → (τ, η₁) → (τ₁+δ, η₁) → (τ₁+δ, η₀) → (τ, η₀)`
/// and return the deviation of the result from the identity. Flatness of
/// the combined system makes the transport path-independent, so the
/// deviation measures accumulated integrator error only.
pub fn loop_deviation(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
    eta0: C64,
    eta1: C64,
    dtau1: C64,
    tol: f64,
) -> Result<f64, PsiError> {
    let tau = time.to_tau();
    let how = Transport::Adaptive(tol);
    let fam = reduced_family(&tau, st, pr)?;
    // Out along the spectral line at the base time.
    let z1 = spectral_transport(&fam, &M2::identity(), eta0, eta1, how)?;
    // Forward in τ₁ carrying the η₁ slice.
    let (t_fwd, st_fwd, s_fwd, out) =
        flow_columns(&tau, st, cr(0.0), &[z1], &[eta1], 1, dtau1, pr, how, false)?;
    // Back along the spectral line at the shifted time.
    let fam_fwd = reduced_family(&t_fwd, &st_fwd, pr)?;
    let z3 = spectral_transport(&fam_fwd, &out[0], eta1, eta0, how)?;
    // Back in τ₁ carrying the η₀ slice.
    let (_, _, _, back) =
        flow_columns(&t_fwd, &st_fwd, s_fwd, &[z3], &[eta0], 1, -dtau1, pr, how, false)?;
    Ok(max_abs(&(back[0] - M2::identity())))
}

/// [`loop_deviation`] with a hard acceptance threshold.
pub fn certify_loop(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
    eta0: C64,
    eta1: C64,
    dtau1: C64,
    tol: f64,
    max_dev: f64,
) -> Result<f64, PsiError> {
    let dev = loop_deviation(time, st, pr, eta0, eta1, dtau1, tol)?;
    if dev > max_dev {
        return Err(PsiError::PathDependence { dev, max: max_dev });
    }
    Ok(dev)
}

// ---------------------------------------------------------------------------
