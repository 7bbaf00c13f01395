//! The three equivalent coordinate charts of the two-time Hamiltonian system
//! and their exact phase-space gradients.
//!
//! * **Rational chart** `(λ₁, λ₂, μ₁, μ₂)` with times `(τ₁, τ₂)`: the
//!   Hamiltonians are rational in the coordinates, with poles at
//!   `λ ∈ {0, 1}` and on the diagonal `λ₁ = λ₂`.
//! * **Polynomial chart** `(q₁, q₂, p₁, p₂)` with times `(s₁, s₂)`: the
//!   Hamiltonians are polynomial in all phase variables.
//! * **Canonical chart** `(Q₁, Q₂, P₁, P₂)` with times `(t₁, t₂)` plus the
//!   gauge scalar `u`: the chart in which the 2×2 linear problem is written.
//!
//! The time charts are linked by `τ₁ = t₁`, `τ₂ = t₂/t₁` and
//! `s₁ = 1/τ₁`, `s₂ = −τ₂`; the coordinate half of the symplectic map
//! between the rational and polynomial charts is
//! `q₁ = (λ₁−1)(λ₂−1)/τ₁`, `q₂ = λ₁λ₂`.
//!
//! All gradients are closed-form (logarithmic derivatives of the prefactors,
//! hand-expanded brackets), not finite differences: downstream residual
//! certificates need noise-free vector fields. The finite-difference check
//! lives in the test suite as an oracle.

use crate::params::ParameterSet;
use crate::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard-error distance to the singular set (pole crossings, zero times).
pub const POLE_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("state within {tol:e} of the singular set ({what})")]
    Pole { what: &'static str, tol: f64 },
    #[error("time coordinate {which} vanishes (all charts need nonzero times)")]
    ZeroTime { which: &'static str },
}

/// Which coordinate chart a state or flow lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    Rational,
    Polynomial,
    Kns,
}

/// Which two-time chart a `TimePoint` is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeChart {
    /// `(t₁, t₂)` — canonical chart times.
    T,
    /// `(τ₁, τ₂) = (t₁, t₂/t₁)` — rational chart times.
    Tau,
    /// `(s₁, s₂) = (1/τ₁, −τ₂)` — polynomial chart times.
    S,
}

/// A point in complex two-time space, tagged with its chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub chart: TimeChart,
    pub c1: C64,
    pub c2: C64,
}

impl TimePoint {
    pub fn t(t1: C64, t2: C64) -> Self {
        Self { chart: TimeChart::T, c1: t1, c2: t2 }
    }

    pub fn tau(tau1: C64, tau2: C64) -> Self {
        Self { chart: TimeChart::Tau, c1: tau1, c2: tau2 }
    }

    pub fn s(s1: C64, s2: C64) -> Self {
        Self { chart: TimeChart::S, c1: s1, c2: s2 }
    }

    pub fn ensure_nonzero(&self) -> Result<(), PhaseError> {
        if self.c1.norm() < POLE_TOL {
            return Err(PhaseError::ZeroTime { which: "first" });
        }
        if self.c2.norm() < POLE_TOL {
            return Err(PhaseError::ZeroTime { which: "second" });
        }
        Ok(())
    }

    /// Exact conversion to the `(τ₁, τ₂)` chart.
    pub fn to_tau(&self) -> TimePoint {
        match self.chart {
            TimeChart::Tau => *self,
            TimeChart::T => TimePoint::tau(self.c1, self.c2 / self.c1),
            TimeChart::S => TimePoint::tau(1.0 / self.c1, -self.c2),
        }
    }

    /// Exact conversion to the `(t₁, t₂)` chart.
    pub fn to_t(&self) -> TimePoint {
        if self.chart == TimeChart::T {
            return *self;
        }
        let tau = self.to_tau();
        TimePoint::t(tau.c1, tau.c1 * tau.c2)
    }

    /// Exact conversion to the `(s₁, s₂)` chart.
    pub fn to_s(&self) -> TimePoint {
        if self.chart == TimeChart::S {
            return *self;
        }
        let tau = self.to_tau();
        TimePoint::s(1.0 / tau.c1, -tau.c2)
    }
}

/// State of the rational chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalState {
    pub lambda1: C64,
    pub lambda2: C64,
    pub mu1: C64,
    pub mu2: C64,
}

/// State of the polynomial chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialState {
    pub q1: C64,
    pub q2: C64,
    pub p1: C64,
    pub p2: C64,
}

/// State of the canonical chart, including the gauge scalar `u` that the
/// linear-problem matrices depend on (`u` rides along the flow but does not
/// enter the Hamiltonians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnsState {
    pub q1: C64,
    pub q2: C64,
    pub p1: C64,
    pub p2: C64,
    pub u: C64,
}

impl RationalState {
    pub fn new(lambda1: C64, lambda2: C64, mu1: C64, mu2: C64) -> Self {
        Self { lambda1, lambda2, mu1, mu2 }
    }

    fn ensure_regular(&self) -> Result<(), PhaseError> {
        let pole = |what| PhaseError::Pole { what, tol: POLE_TOL };
        if self.lambda1.norm() < POLE_TOL || self.lambda2.norm() < POLE_TOL {
            return Err(pole("lambda at 0"));
        }
        if (self.lambda1 - 1.0).norm() < POLE_TOL || (self.lambda2 - 1.0).norm() < POLE_TOL {
            return Err(pole("lambda at 1"));
        }
        if (self.lambda1 - self.lambda2).norm() < POLE_TOL {
            return Err(pole("lambda collision"));
        }
        Ok(())
    }
}

impl PolynomialState {
    pub fn new(q1: C64, q2: C64, p1: C64, p2: C64) -> Self {
        Self { q1, q2, p1, p2 }
    }
}

impl KnsState {
    pub fn new(q1: C64, q2: C64, p1: C64, p2: C64, u: C64) -> Self {
        Self { q1, q2, p1, p2, u }
    }
}

/// A chart-tagged state, the common currency of the flow integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum State {
    Rational(RationalState),
    Polynomial(PolynomialState),
    Kns(KnsState),
}

impl State {
    pub fn form(&self) -> Form {
        match self {
            State::Rational(_) => Form::Rational,
            State::Polynomial(_) => Form::Polynomial,
            State::Kns(_) => Form::Kns,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            State::Kns(_) => 5,
            _ => 4,
        }
    }

    pub fn write_to(&self, buf: &mut [C64]) {
        match self {
            State::Rational(s) => {
                buf[..4].copy_from_slice(&[s.lambda1, s.lambda2, s.mu1, s.mu2]);
            }
            State::Polynomial(s) => {
                buf[..4].copy_from_slice(&[s.q1, s.q2, s.p1, s.p2]);
            }
            State::Kns(s) => {
                buf[..5].copy_from_slice(&[s.q1, s.q2, s.p1, s.p2, s.u]);
            }
        }
    }

    pub fn read_from(form: Form, buf: &[C64]) -> State {
        match form {
            Form::Rational => State::Rational(RationalState::new(buf[0], buf[1], buf[2], buf[3])),
            Form::Polynomial => {
                State::Polynomial(PolynomialState::new(buf[0], buf[1], buf[2], buf[3]))
            }
            Form::Kns => State::Kns(KnsState::new(buf[0], buf[1], buf[2], buf[3], buf[4])),
        }
    }
}

// ---------------------------------------------------------------------------
// Rational chart
// ---------------------------------------------------------------------------

/// Shared shape of both rational Hamiltonians:
///   pref = −f₁μ₁² + f₂μ₂² + f₁·φ(λ₁)·μ₁ − f₂·φ(λ₂)·μ₂ + z,
/// where `pref` is `τ₁H₁` (j = 1) or `H₂` (j = 2). The struct carries the
/// prefactors, their λ-derivatives (via logarithmic differentiation), the
/// bracket φ at both λ's, and its derivative.
struct RationalPieces {
    f1: C64,
    f2: C64,
    d1_f1: C64,
    d2_f1: C64,
    d1_f2: C64,
    d2_f2: C64,
    phi1: C64,
    phi2: C64,
    dphi1: C64,
    dphi2: C64,
    z: C64,
    dz1: C64,
    dz2: C64,
}

fn rational_pieces(j: u8, tau: &TimePoint, st: &RationalState, pr: &ParameterSet) -> RationalPieces {
    let (l1, l2) = (st.lambda1, st.lambda2);
    let delta = l1 - l2;
    let (tau1, tau2) = (tau.c1, tau.c2);

    // Bracket constants: j = 1 uses (κ₀, κ₁−1), j = 2 uses (κ₀−1, κ₁).
    let (a, b) = match j {
        1 => (pr.kappa0, pr.kappa1 - 1.0),
        2 => (pr.kappa0 - 1.0, pr.kappa1),
        _ => unreachable!("flow index must be 1 or 2"),
    };
    let phi = |s: C64| a / s - pr.gamma1 * tau2 / (s * s) + b / (s - 1.0)
        - pr.gamma2 * tau1 / ((s - 1.0) * (s - 1.0));
    let dphi = |s: C64| -a / (s * s) + 2.0 * pr.gamma1 * tau2 / (s * s * s)
        - b / ((s - 1.0) * (s - 1.0))
        + 2.0 * pr.gamma2 * tau1 / ((s - 1.0) * (s - 1.0) * (s - 1.0));

    match j {
        1 => {
            let f1 = l1 * l1 * (l1 - 1.0) * (l1 - 1.0) * (l2 - 1.0) / delta;
            let f2 = l2 * l2 * (l1 - 1.0) * (l2 - 1.0) * (l2 - 1.0) / delta;
            RationalPieces {
                f1,
                f2,
                d1_f1: f1 * (2.0 / l1 + 2.0 / (l1 - 1.0) - 1.0 / delta),
                d2_f1: f1 * (1.0 / (l2 - 1.0) + 1.0 / delta),
                d1_f2: f2 * (1.0 / (l1 - 1.0) - 1.0 / delta),
                d2_f2: f2 * (2.0 / l2 + 2.0 / (l2 - 1.0) + 1.0 / delta),
                phi1: phi(l1),
                phi2: phi(l2),
                dphi1: dphi(l1),
                dphi2: dphi(l2),
                z: -pr.kappa * (l1 - 1.0) * (l2 - 1.0),
                dz1: -pr.kappa * (l2 - 1.0),
                dz2: -pr.kappa * (l1 - 1.0),
            }
        }
        2 => {
            let f1 = l1 * l1 * l2 * (l1 - 1.0) * (l1 - 1.0) / delta;
            let f2 = l1 * l2 * l2 * (l2 - 1.0) * (l2 - 1.0) / delta;
            RationalPieces {
                f1,
                f2,
                d1_f1: f1 * (2.0 / l1 + 2.0 / (l1 - 1.0) - 1.0 / delta),
                d2_f1: f1 * (1.0 / l2 + 1.0 / delta),
                d1_f2: f2 * (1.0 / l1 - 1.0 / delta),
                d2_f2: f2 * (2.0 / l2 + 2.0 / (l2 - 1.0) + 1.0 / delta),
                phi1: phi(l1),
                phi2: phi(l2),
                dphi1: dphi(l1),
                dphi2: dphi(l2),
                z: -pr.kappa * l1 * l2,
                dz1: -pr.kappa * l2,
                dz2: -pr.kappa * l1,
            }
        }
        _ => unreachable!(),
    }
}

/// `H_j` of the rational chart. Each Hamiltonian is defined through
/// `τ_j·H_j`, so the raw expression is divided by its own time. (The weight
/// on `H₂` is forced by compatibility: it is what the symplectic image of
/// the polynomial pair produces, and without it the two flows fail to
/// commute — see the flow-level cross-chart tests.)
pub fn eval_h_rational(
    j: u8,
    time: &TimePoint,
    state: &RationalState,
    params: &ParameterSet,
) -> Result<C64, PhaseError> {
    let tau = time.to_tau();
    tau.ensure_nonzero()?;
    state.ensure_regular()?;
    let pc = rational_pieces(j, &tau, state, params);
    let (m1, m2) = (state.mu1, state.mu2);
    let raw = -pc.f1 * m1 * m1 + pc.f2 * m2 * m2 + pc.f1 * pc.phi1 * m1 - pc.f2 * pc.phi2 * m2
        + pc.z;
    Ok(raw / if j == 1 { tau.c1 } else { tau.c2 })
}

/// Hamiltonian phase velocity of the rational chart for the `τ_j` flow:
/// `(dλ₁, dλ₂, dμ₁, dμ₂)/dτ_j`.
pub fn rational_velocity(
    j: u8,
    time: &TimePoint,
    state: &RationalState,
    params: &ParameterSet,
) -> Result<RationalState, PhaseError> {
    let tau = time.to_tau();
    tau.ensure_nonzero()?;
    state.ensure_regular()?;
    let pc = rational_pieces(j, &tau, state, params);
    let (m1, m2) = (state.mu1, state.mu2);

    let dh_dm1 = -2.0 * pc.f1 * m1 + pc.f1 * pc.phi1;
    let dh_dm2 = 2.0 * pc.f2 * m2 - pc.f2 * pc.phi2;
    let dh_dl1 = -pc.d1_f1 * m1 * m1 + pc.d1_f2 * m2 * m2
        + (pc.d1_f1 * pc.phi1 + pc.f1 * pc.dphi1) * m1
        - pc.d1_f2 * pc.phi2 * m2
        + pc.dz1;
    let dh_dl2 = -pc.d2_f1 * m1 * m1 + pc.d2_f2 * m2 * m2 + pc.d2_f1 * pc.phi1 * m1
        - (pc.d2_f2 * pc.phi2 + pc.f2 * pc.dphi2) * m2
        + pc.dz2;

    let scale = if j == 1 { tau.c1 } else { tau.c2 };
    Ok(RationalState::new(
        dh_dm1 / scale,
        dh_dm2 / scale,
        -dh_dl1 / scale,
        -dh_dl2 / scale,
    ))
}

// ---------------------------------------------------------------------------
// Polynomial chart
// ---------------------------------------------------------------------------

/// `H_j` of the polynomial chart. The raw expressions are `s₁²H₁` and
/// `−s₂H₂`, so the results are divided by `s₁²` and `−s₂` respectively.
pub fn eval_h_polynomial(
    j: u8,
    time: &TimePoint,
    state: &PolynomialState,
    params: &ParameterSet,
) -> Result<C64, PhaseError> {
    let s = time.to_s();
    s.ensure_nonzero()?;
    let (s1, s2) = (s.c1, s.c2);
    let (q1, q2, p1, p2) = (state.q1, state.q2, state.p1, state.p2);
    let pr = params;
    match j {
        1 => {
            let l1 = (pr.kappa0 - 1.0) * q1 * q1
                + pr.kappa1 * q1 * (q1 - s1)
                + pr.gamma2 * (q1 - s1)
                + pr.gamma2 * s1 * q2;
            let l2 = (pr.kappa0 + pr.kappa1 - 1.0) * q1 * q2 + pr.gamma1 * s2 * q1 + pr.gamma2 * q2;
            let raw = q1 * q1 * (q1 - s1) * p1 * p1 + 2.0 * q1 * q1 * q2 * p1 * p2
                + q1 * q2 * q2 * p2 * p2
                - l1 * p1
                - l2 * p2
                + pr.kappa * q1;
            Ok(raw / (s1 * s1))
        }
        2 => {
            let m1 = (pr.kappa0 + pr.kappa1 - 1.0) * q1 * q2 + pr.gamma1 * s2 * q1 + pr.gamma2 * q2;
            let m2 = (pr.kappa0 - 1.0) * q2 * (q2 - 1.0)
                + pr.kappa1 * q2 * q2
                + pr.gamma1 * s2 / s1 * q1
                + pr.gamma1 * s2 * (q2 - 1.0);
            let raw = q1 * q1 * q2 * p1 * p1 + 2.0 * q1 * q2 * q2 * p1 * p2
                + q2 * q2 * (q2 - 1.0) * p2 * p2
                - m1 * p1
                - m2 * p2
                + pr.kappa * q2;
            Ok(-raw / s2)
        }
        _ => unreachable!("flow index must be 1 or 2"),
    }
}

/// Hamiltonian phase velocity of the polynomial chart for the `s_j` flow:
/// `(dq₁, dq₂, dp₁, dp₂)/ds_j`.
pub fn polynomial_velocity(
    j: u8,
    time: &TimePoint,
    state: &PolynomialState,
    params: &ParameterSet,
) -> Result<PolynomialState, PhaseError> {
    let s = time.to_s();
    s.ensure_nonzero()?;
    let (s1, s2) = (s.c1, s.c2);
    let (q1, q2, p1, p2) = (state.q1, state.q2, state.p1, state.p2);
    let pr = params;
    match j {
        1 => {
            let l1 = (pr.kappa0 - 1.0) * q1 * q1
                + pr.kappa1 * q1 * (q1 - s1)
                + pr.gamma2 * (q1 - s1)
                + pr.gamma2 * s1 * q2;
            let l2 = (pr.kappa0 + pr.kappa1 - 1.0) * q1 * q2 + pr.gamma1 * s2 * q1 + pr.gamma2 * q2;
            let dp1 = 2.0 * q1 * q1 * (q1 - s1) * p1 + 2.0 * q1 * q1 * q2 * p2 - l1;
            let dp2 = 2.0 * q1 * q1 * q2 * p1 + 2.0 * q1 * q2 * q2 * p2 - l2;
            let dq1 = (3.0 * q1 * q1 - 2.0 * s1 * q1) * p1 * p1 + 4.0 * q1 * q2 * p1 * p2
                + q2 * q2 * p2 * p2
                - (2.0 * (pr.kappa0 - 1.0) * q1 + pr.kappa1 * (2.0 * q1 - s1) + pr.gamma2) * p1
                - ((pr.kappa0 + pr.kappa1 - 1.0) * q2 + pr.gamma1 * s2) * p2
                + pr.kappa;
            let dq2 = 2.0 * q1 * q1 * p1 * p2 + 2.0 * q1 * q2 * p2 * p2 - pr.gamma2 * s1 * p1
                - ((pr.kappa0 + pr.kappa1 - 1.0) * q1 + pr.gamma2) * p2;
            let s1s1 = s1 * s1;
            Ok(PolynomialState::new(dp1 / s1s1, dp2 / s1s1, -dq1 / s1s1, -dq2 / s1s1))
        }
        2 => {
            let m1 = (pr.kappa0 + pr.kappa1 - 1.0) * q1 * q2 + pr.gamma1 * s2 * q1 + pr.gamma2 * q2;
            let m2 = (pr.kappa0 - 1.0) * q2 * (q2 - 1.0)
                + pr.kappa1 * q2 * q2
                + pr.gamma1 * s2 / s1 * q1
                + pr.gamma1 * s2 * (q2 - 1.0);
            let dp1 = 2.0 * q1 * q1 * q2 * p1 + 2.0 * q1 * q2 * q2 * p2 - m1;
            let dp2 = 2.0 * q1 * q2 * q2 * p1 + 2.0 * q2 * q2 * (q2 - 1.0) * p2 - m2;
            let dq1 = 2.0 * q1 * q2 * p1 * p1 + 2.0 * q2 * q2 * p1 * p2
                - ((pr.kappa0 + pr.kappa1 - 1.0) * q2 + pr.gamma1 * s2) * p1
                - pr.gamma1 * s2 / s1 * p2;
            let dq2 = q1 * q1 * p1 * p1 + 4.0 * q1 * q2 * p1 * p2
                + (3.0 * q2 * q2 - 2.0 * q2) * p2 * p2
                - ((pr.kappa0 + pr.kappa1 - 1.0) * q1 + pr.gamma2) * p1
                - ((pr.kappa0 - 1.0) * (2.0 * q2 - 1.0) + 2.0 * pr.kappa1 * q2 + pr.gamma1 * s2)
                    * p2
                + pr.kappa;
            let neg_s2 = -s2;
            Ok(PolynomialState::new(dp1 / neg_s2, dp2 / neg_s2, -dq1 / neg_s2, -dq2 / neg_s2))
        }
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Canonical chart
// ---------------------------------------------------------------------------

/// `K_j` of the canonical chart. The raw expressions are `t_j K_j`, divided
/// out before returning.
pub fn eval_k(
    j: u8,
    time: &TimePoint,
    state: &KnsState,
    params: &ParameterSet,
) -> Result<C64, PhaseError> {
    let t = time.to_t();
    t.ensure_nonzero()?;
    let (t1, t2) = (t.c1, t.c2);
    let r = t2 / t1;
    let (q1, q2, p1, p2) = (state.q1, state.q2, state.p1, state.p2);
    let pr = params;
    match j {
        1 => {
            let bracket = (pr.theta1 + pr.theta1_inf) * (q1 - 1.0)
                + (pr.theta2_inf - pr.theta1) * q1 * (q1 - 1.0)
                + t1 * q1;
            let raw = p1 * p1 * q1 * (q1 - 1.0) * (q1 - 1.0) + bracket * p1
                - pr.theta1 * pr.theta2_inf * (q1 - 1.0)
                + (p1 * q1 * q1 - pr.theta1 * q1 - p1) * p2 * q2
                + p1 * q2
                - r * (p1 * q1 - p1 - pr.theta1) * (p2 * q1 - p2 + 1.0);
            Ok(raw / t1)
        }
        2 => {
            let raw = p2 * p2 * q2 * q2 - p2 * q2 * q2 - pr.theta0 * p2 * q2 + t2 * p2
                - pr.theta2_inf * q2
                - p1 * q1 * q2
                + r * (p1 * q1 - p1 - pr.theta1) * (p2 * q1 - p2 + 1.0);
            Ok(raw / t2)
        }
        _ => unreachable!("flow index must be 1 or 2"),
    }
}

/// Hamiltonian phase velocity of the canonical chart for the `t_j` flow,
/// including the gauge-scalar rate from its linear auxiliary equations:
/// `t₁u_{t₁} = u(θ¹(1−Q₁) + P₁(1−Q₁)² + θ₁^∞ − θ₂^∞)`, `t₂u_{t₂} = −uQ₂`.
pub fn kns_velocity(
    j: u8,
    time: &TimePoint,
    state: &KnsState,
    params: &ParameterSet,
) -> Result<KnsState, PhaseError> {
    let t = time.to_t();
    t.ensure_nonzero()?;
    let (t1, t2) = (t.c1, t.c2);
    let r = t2 / t1;
    let (q1, q2, p1, p2, u) = (state.q1, state.q2, state.p1, state.p2, state.u);
    let pr = params;
    match j {
        1 => {
            let bracket = (pr.theta1 + pr.theta1_inf) * (q1 - 1.0)
                + (pr.theta2_inf - pr.theta1) * q1 * (q1 - 1.0)
                + t1 * q1;
            let dk_dp1 = 2.0 * p1 * q1 * (q1 - 1.0) * (q1 - 1.0) + bracket
                + (q1 * q1 - 1.0) * p2 * q2
                + q2
                - r * (q1 - 1.0) * (p2 * q1 - p2 + 1.0);
            let dk_dp2 = (p1 * q1 * q1 - pr.theta1 * q1 - p1) * q2
                - r * (p1 * q1 - p1 - pr.theta1) * (q1 - 1.0);
            let dk_dq1 = p1 * p1 * ((q1 - 1.0) * (q1 - 1.0) + 2.0 * q1 * (q1 - 1.0))
                + ((pr.theta1 + pr.theta1_inf)
                    + (pr.theta2_inf - pr.theta1) * (2.0 * q1 - 1.0)
                    + t1)
                    * p1
                - pr.theta1 * pr.theta2_inf
                + (2.0 * p1 * q1 - pr.theta1) * p2 * q2
                - r * (p1 * (p2 * q1 - p2 + 1.0) + (p1 * q1 - p1 - pr.theta1) * p2);
            let dk_dq2 = (p1 * q1 * q1 - pr.theta1 * q1 - p1) * p2 + p1;
            let du = u
                * (pr.theta1 * (1.0 - q1)
                    + p1 * (1.0 - q1) * (1.0 - q1)
                    + pr.theta1_inf
                    - pr.theta2_inf);
            Ok(KnsState::new(
                dk_dp1 / t1,
                dk_dp2 / t1,
                -dk_dq1 / t1,
                -dk_dq2 / t1,
                du / t1,
            ))
        }
        2 => {
            let dk_dp1 = -q1 * q2 + r * (q1 - 1.0) * (p2 * q1 - p2 + 1.0);
            let dk_dp2 = 2.0 * p2 * q2 * q2 - q2 * q2 - pr.theta0 * q2 + t2
                + r * (p1 * q1 - p1 - pr.theta1) * (q1 - 1.0);
            let dk_dq1 = -p1 * q2
                + r * (p1 * (p2 * q1 - p2 + 1.0) + (p1 * q1 - p1 - pr.theta1) * p2);
            let dk_dq2 = 2.0 * p2 * p2 * q2 - 2.0 * p2 * q2 - pr.theta0 * p2 - pr.theta2_inf
                - p1 * q1;
            let du = -u * q2;
            Ok(KnsState::new(
                dk_dp1 / t2,
                dk_dp2 / t2,
                -dk_dq1 / t2,
                -dk_dq2 / t2,
                du / t2,
            ))
        }
        _ => unreachable!(),
    }
}

/// Chart-dispatching phase velocity, the single entry point the flow
/// integrator uses. `j` selects which of the two times flows (in the chart's
/// own time coordinates).
pub fn vector_field(
    form: Form,
    j: u8,
    time: &TimePoint,
    state: &State,
    params: &ParameterSet,
) -> Result<State, PhaseError> {
    match (form, state) {
        (Form::Rational, State::Rational(s)) => {
            Ok(State::Rational(rational_velocity(j, time, s, params)?))
        }
        (Form::Polynomial, State::Polynomial(s)) => {
            Ok(State::Polynomial(polynomial_velocity(j, time, s, params)?))
        }
        (Form::Kns, State::Kns(s)) => Ok(State::Kns(kns_velocity(j, time, s, params)?)),
        _ => panic!("state/form mismatch"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterSet;
    use crate::{c, cr};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_params() -> ParameterSet {
        ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3))
    }

    fn integer_params() -> ParameterSet {
        // Small integers so the oracle arithmetic below is exactly checkable.
        let mut p = ParameterSet::new(cr(3.0), cr(2.0), cr(1.0), cr(2.0), cr(1.0));
        p.kappa = cr(2.0); // decouple κ for the transcription test
        p
    }

    // -- spot values ---------------------------------------------------------

    #[test]
    fn rational_h1_momentum_free_value() {
        let mut p = demo_params();
        p.kappa = cr(1.0);
        let st = RationalState::new(cr(2.0), cr(3.0), cr(0.0), cr(0.0));
        let time = TimePoint::tau(cr(1.0), cr(0.7));
        let h1 = eval_h_rational(1, &time, &st, &p).unwrap();
        assert!((h1 - cr(-2.0)).norm() < 1e-14); // −κ(λ₁−1)(λ₂−1)/τ₁
    }

    #[test]
    fn rational_h2_momentum_free_value() {
        let mut p = demo_params();
        p.kappa = cr(1.0);
        let st = RationalState::new(cr(2.0), cr(3.0), cr(0.0), cr(0.0));
        let time = TimePoint::tau(cr(1.4), cr(0.5));
        let h2 = eval_h_rational(2, &time, &st, &p).unwrap();
        assert!((h2 - cr(-12.0)).norm() < 1e-13); // −κλ₁λ₂/τ₂
    }

    #[test]
    fn polynomial_momentum_free_values() {
        let mut p = demo_params();
        p.kappa = cr(1.0);
        let st = PolynomialState::new(cr(5.0), cr(7.0), cr(0.0), cr(0.0));
        let h1 = eval_h_polynomial(1, &TimePoint::s(cr(1.0), cr(-0.5)), &st, &p).unwrap();
        assert!((h1 - cr(5.0)).norm() < 1e-14); // κq₁/s₁²
        let h2 = eval_h_polynomial(2, &TimePoint::s(cr(1.0), cr(-1.0)), &st, &p).unwrap();
        assert!((h2 - cr(7.0)).norm() < 1e-14); // −κq₂/s₂
    }

    #[test]
    fn canonical_k1_zero_state_value() {
        // All momenta and coordinates zero: t₁K₁ = θ¹θ₂^∞ + (t₂/t₁)θ¹.
        let p = demo_params();
        let st = KnsState::new(cr(0.0), cr(0.0), cr(0.0), cr(0.0), cr(1.0));
        let t = TimePoint::t(cr(1.3), cr(0.9));
        let k1 = eval_k(1, &t, &st, &p).unwrap();
        let want = (p.theta1 * p.theta2_inf + (t.c2 / t.c1) * p.theta1) / t.c1;
        assert!((k1 - want).norm() < 1e-14);
    }

    #[test]
    fn canonical_k1_unit_q1_value() {
        // P₂ = Q₂ = 0, Q₁ = 1: t₁K₁ = t₁P₁ + (t₂/t₁)θ¹.
        let p = demo_params();
        let st = KnsState::new(cr(1.0), cr(0.0), cr(0.45), cr(0.0), cr(1.0));
        let t = TimePoint::t(cr(1.3), cr(0.9));
        let k1 = eval_k(1, &t, &st, &p).unwrap();
        let want = (t.c1 * st.p1 + (t.c2 / t.c1) * p.theta1) / t.c1;
        assert!((k1 - want).norm() < 1e-14);
    }

    #[test]
    fn canonical_k2_momentum_free_value() {
        // P₁ = P₂ = 0: t₂K₂ = −θ₂^∞Q₂ − (t₂/t₁)θ¹.
        let p = demo_params();
        let st = KnsState::new(cr(0.7), cr(1.9), cr(0.0), cr(0.0), cr(1.0));
        let t = TimePoint::t(cr(1.3), cr(0.9));
        let k2 = eval_k(2, &t, &st, &p).unwrap();
        let want = (-p.theta2_inf * st.q2 - (t.c2 / t.c1) * p.theta1) / t.c2;
        assert!((k2 - want).norm() < 1e-14);
    }

    // -- independent transcription oracles ------------------------------------
    //
    // Each oracle below re-derives the Hamiltonian value with a different
    // arrangement of the arithmetic (explicit term lists, no shared helper
    // code), so a slip in the production transcription cannot cancel here.

    #[test]
    fn rational_h1_matches_term_by_term_oracle() {
        let p = integer_params();
        let (l1, l2) = (cr(2.0), cr(3.0));
        let (m1, m2) = (cr(1.0), cr(2.0));
        let (tau1, tau2) = (cr(2.0), cr(1.0));
        let st = RationalState::new(l1, l2, m1, m2);
        let got = eval_h_rational(1, &TimePoint::tau(tau1, tau2), &st, &p).unwrap();

        // λ₁=2, λ₂=3: Δ=−1, A₁ = 4·1·2/(−1) = −8, A₂ = 9·1·4/(−1) = −36.
        // φ(2) = κ₀/2 − γ₁τ₂/4 + (κ₁−1)/1 − γ₂τ₁/1 = 1.5 − 0.25 + 1 − 4 = −1.75
        // φ(3) = 1 − 1/9 + 0.5 − 1 = 0.5 − 1/9
        // τ₁H₁ = −A₁m₁² + A₂m₂² + A₁φ(2)m₁ − A₂φ(3)m₂ − κ·1·2
        //      = 8 − 144 + 14 + 72(0.5 − 1/9)·... careful: −A₂φ(3)m₂ = 36·φ(3)·2
        let phi3 = 0.5 - 1.0 / 9.0;
        let raw = 8.0 - 144.0 + 14.0 + 72.0 * phi3 - 4.0;
        let want = raw / 2.0;
        assert!((got - cr(want)).norm() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn rational_h2_matches_term_by_term_oracle() {
        let p = integer_params();
        let (l1, l2) = (cr(2.0), cr(3.0));
        let (m1, m2) = (cr(1.0), cr(-1.0));
        let (tau1, tau2) = (cr(2.0), cr(2.0));
        let st = RationalState::new(l1, l2, m1, m2);
        let got = eval_h_rational(2, &TimePoint::tau(tau1, tau2), &st, &p).unwrap();

        // C₁ = 4·3·1/(−1) = −12, C₂ = 2·9·4/(−1) = −72.
        // ψ(2) = (κ₀−1)/2 − γ₁τ₂/4 + κ₁/1 − γ₂τ₁/1 = 1 − 0.5 + 2 − 4 = −1.5
        // ψ(3) = 2/3 − 2/9 + 1 − 1 = 4/9
        // raw  = 12 − 72 + (−12)(−1.5)(1) − (−72)(4/9)(−1) − 12 = −86
        let want = -86.0 / 2.0; // raw/τ₂
        assert!((got - cr(want)).norm() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn polynomial_h1_matches_term_by_term_oracle() {
        let p = integer_params();
        let st = PolynomialState::new(cr(2.0), cr(3.0), cr(1.0), cr(2.0));
        let (s1, s2) = (cr(2.0), cr(-1.0));
        let got = eval_h_polynomial(1, &TimePoint::s(s1, s2), &st, &p).unwrap();

        // s₁²H₁ term by term at q₁=2, q₂=3, p₁=1, p₂=2:
        //   q₁²(q₁−s₁)p₁²      = 4·0·1   = 0
        //   2q₁²q₂p₁p₂         = 2·4·3·2 = 48
        //   q₁q₂²p₂²           = 2·9·4   = 72
        //   bracket₁·p₁: (κ₀−1)q₁² + κ₁q₁(q₁−s₁) + γ₂(q₁−s₁) + γ₂s₁q₂
        //              = 2·4 + 0 + 0 + 2·2·3 = 20
        //   bracket₂·p₂: (κ₀+κ₁−1)q₁q₂ + γ₁s₂q₁ + γ₂q₂ = 4·6 + (−2) + 6 = 28
        //   κq₁ = 4
        let raw = 0.0 + 48.0 + 72.0 - 20.0 - 28.0 * 2.0 + 4.0;
        let want = raw / 4.0;
        assert!((got - cr(want)).norm() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn polynomial_h2_matches_term_by_term_oracle() {
        let p = integer_params();
        let st = PolynomialState::new(cr(2.0), cr(3.0), cr(1.0), cr(2.0));
        let (s1, s2) = (cr(2.0), cr(-1.0));
        let got = eval_h_polynomial(2, &TimePoint::s(s1, s2), &st, &p).unwrap();

        //   q₁²q₂p₁²        = 4·3    = 12
        //   2q₁q₂²p₁p₂      = 2·2·9·2 = 72
        //   q₂²(q₂−1)p₂²    = 9·2·4  = 72
        //   bracket₁·p₁: (κ₀+κ₁−1)q₁q₂ + γ₁s₂q₁ + γ₂q₂ = 24 − 2 + 6 = 28
        //   bracket₂·p₂: (κ₀−1)q₂(q₂−1) + κ₁q₂² + (γ₁s₂/s₁)q₁ + γ₁s₂(q₂−1)
        //              = 2·6 + 2·9 + (−0.5)·2 + (−1)·2 = 12 + 18 − 1 − 2 = 27
        //   κq₂ = 6
        let raw = 12.0 + 72.0 + 72.0 - 28.0 - 27.0 * 2.0 + 6.0;
        let want = -raw / -1.0_f64; // divide by −s₂ = 1
        assert!((got - cr(want)).norm() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn canonical_k_matches_term_by_term_oracle() {
        let p = integer_params();
        // θ's for (3, 2, 1, 2, 1): θ⁰ = 1, diff = 0, sum = −2 → θ₁^∞ = θ₂^∞ = −1.
        assert!((p.theta0 - cr(1.0)).norm() < 1e-15);
        assert!((p.theta2_inf - cr(-1.0)).norm() < 1e-15);
        let st = KnsState::new(cr(2.0), cr(3.0), cr(1.0), cr(2.0), cr(1.0));
        let t = TimePoint::t(cr(2.0), cr(4.0)); // t₂/t₁ = 2
        let got1 = eval_k(1, &t, &st, &p).unwrap();
        let got2 = eval_k(2, &t, &st, &p).unwrap();

        // t₁K₁: P₁²Q₁(Q₁−1)² = 2
        //   bracket: (θ¹+θ₁^∞)(Q₁−1) + (θ₂^∞−θ¹)Q₁(Q₁−1) + t₁Q₁ = 0 + (−2)·2 + 4 = 0
        //   −θ¹θ₂^∞(Q₁−1) = 1
        //   (P₁Q₁²−θ¹Q₁−P₁)P₂Q₂ = (4−2−1)·6 = 6
        //   P₁Q₂ = 3
        //   −(t₂/t₁)(P₁Q₁−P₁−θ¹)(P₂Q₁−P₂+1) = −2·(2−1−1)(4−2+1) = 0
        let want1 = (2.0 + 0.0 + 1.0 + 6.0 + 3.0 - 0.0) / 2.0;
        assert!((got1 - cr(want1)).norm() < 1e-13);

        // t₂K₂: P₂²Q₂² = 36; −P₂Q₂² = −18; −θ⁰P₂Q₂ = −6; t₂P₂ = 8;
        //   −θ₂^∞Q₂ = 3; −P₁Q₁Q₂ = −6; +2·(0)(3) = 0
        let want2 = (36.0 - 18.0 - 6.0 + 8.0 + 3.0 - 6.0 + 0.0) / 4.0;
        assert!((got2 - cr(want2)).norm() < 1e-13);
    }

    // -- gradient oracle -------------------------------------------------------

    /// Central finite difference of an eval along one complex coordinate.
    fn fd_partial<F: Fn(C64) -> C64>(f: F, z: C64) -> C64 {
        let h = 1e-6 * (1.0 + z.norm());
        (f(z + h) - f(z - h)) / (2.0 * h)
    }

    fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
        c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn rational_gradient_matches_finite_differences() {
        let p = demo_params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let st = RationalState::new(
                random_c64(&mut rng),
                random_c64(&mut rng),
                random_c64(&mut rng),
                random_c64(&mut rng),
            );
            let clear = st.lambda1.norm() > 0.1
                && st.lambda2.norm() > 0.1
                && (st.lambda1 - 1.0).norm() > 0.1
                && (st.lambda2 - 1.0).norm() > 0.1
                && (st.lambda1 - st.lambda2).norm() > 0.1;
            if !clear {
                continue;
            }
            let time = TimePoint::tau(c(1.1, 0.2), c(0.8, -0.1));
            for j in [1u8, 2u8] {
                let v = rational_velocity(j, &time, &st, &p).unwrap();
                let eval = |s: RationalState| eval_h_rational(j, &time, &s, &p).unwrap();
                let fd_l1 = fd_partial(|z| eval(RationalState { lambda1: z, ..st }), st.lambda1);
                let fd_l2 = fd_partial(|z| eval(RationalState { lambda2: z, ..st }), st.lambda2);
                let fd_m1 = fd_partial(|z| eval(RationalState { mu1: z, ..st }), st.mu1);
                let fd_m2 = fd_partial(|z| eval(RationalState { mu2: z, ..st }), st.mu2);
                let pairs = [
                    (v.lambda1, fd_m1),
                    (v.lambda2, fd_m2),
                    (v.mu1, -fd_l1),
                    (v.mu2, -fd_l2),
                ];
                for (closed, fd) in pairs {
                    assert!(
                        (closed - fd).norm() <= 1e-6 * (1.0 + closed.norm()),
                        "j={j} closed={closed} fd={fd}"
                    );
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn polynomial_gradient_matches_finite_differences() {
        let p = demo_params();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let st = PolynomialState::new(
                random_c64(&mut rng),
                random_c64(&mut rng),
                random_c64(&mut rng),
                random_c64(&mut rng),
            );
            let time = TimePoint::s(c(0.9, 0.15), c(-0.8, 0.1));
            for j in [1u8, 2u8] {
                let v = polynomial_velocity(j, &time, &st, &p).unwrap();
                let eval = |s: PolynomialState| eval_h_polynomial(j, &time, &s, &p).unwrap();
                let fd_q1 = fd_partial(|z| eval(PolynomialState { q1: z, ..st }), st.q1);
                let fd_q2 = fd_partial(|z| eval(PolynomialState { q2: z, ..st }), st.q2);
                let fd_p1 = fd_partial(|z| eval(PolynomialState { p1: z, ..st }), st.p1);
                let fd_p2 = fd_partial(|z| eval(PolynomialState { p2: z, ..st }), st.p2);
                let pairs =
                    [(v.q1, fd_p1), (v.q2, fd_p2), (v.p1, -fd_q1), (v.p2, -fd_q2)];
                for (closed, fd) in pairs {
                    assert!(
                        (closed - fd).norm() <= 1e-6 * (1.0 + closed.norm()),
                        "j={j} closed={closed} fd={fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn canonical_gradient_matches_finite_differences() {
        let p = demo_params();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let st = KnsState::new(
                random_c64(&mut rng),
                random_c64(&mut rng),
                random_c64(&mut rng),
                random_c64(&mut rng),
                c(1.0, 0.3),
            );
            let time = TimePoint::t(c(1.2, -0.2), c(0.9, 0.25));
            for j in [1u8, 2u8] {
                let v = kns_velocity(j, &time, &st, &p).unwrap();
                let eval = |s: KnsState| eval_k(j, &time, &s, &p).unwrap();
                let fd_q1 = fd_partial(|z| eval(KnsState { q1: z, ..st }), st.q1);
                let fd_q2 = fd_partial(|z| eval(KnsState { q2: z, ..st }), st.q2);
                let fd_p1 = fd_partial(|z| eval(KnsState { p1: z, ..st }), st.p1);
                let fd_p2 = fd_partial(|z| eval(KnsState { p2: z, ..st }), st.p2);
                let pairs =
                    [(v.q1, fd_p1), (v.q2, fd_p2), (v.p1, -fd_q1), (v.p2, -fd_q2)];
                for (closed, fd) in pairs {
                    assert!(
                        (closed - fd).norm() <= 1e-6 * (1.0 + closed.norm()),
                        "j={j} closed={closed} fd={fd}"
                    );
                }
            }
        }
    }

    // -- structural spot checks ------------------------------------------------

    #[test]
    fn polynomial_coordinate_rates_linear_in_q_at_zero_momentum() {
        // At p = 0 the coordinate rates are −bracket/s₁² (flow 1), i.e. the
        // p-linear bracket coefficients with flipped sign.
        let p = demo_params();
        let time = TimePoint::s(cr(2.0), cr(-0.7));
        let st = PolynomialState::new(cr(1.3), cr(-0.4), cr(0.0), cr(0.0));
        let v = polynomial_velocity(1, &time, &st, &p).unwrap();
        let (s1, s2) = (time.c1, time.c2);
        let l1 = (p.kappa0 - 1.0) * st.q1 * st.q1
            + p.kappa1 * st.q1 * (st.q1 - s1)
            + p.gamma2 * (st.q1 - s1)
            + p.gamma2 * s1 * st.q2;
        let l2 = (p.kappa0 + p.kappa1 - 1.0) * st.q1 * st.q2 + p.gamma1 * s2 * st.q1
            + p.gamma2 * st.q2;
        assert!((v.q1 + l1 / (s1 * s1)).norm() < 1e-14);
        assert!((v.q2 + l2 / (s1 * s1)).norm() < 1e-14);
    }

    #[test]
    fn gauge_rate_at_unit_q1_zero_p1() {
        // Q₁ = 1, P₁ = 0 kills both (1−Q₁) factors.
        let p = demo_params();
        let st = KnsState::new(cr(1.0), cr(0.8), cr(0.0), cr(0.3), c(0.9, 0.1));
        let t = TimePoint::t(cr(1.5), cr(0.6));
        let v = kns_velocity(1, &t, &st, &p).unwrap();
        let want = st.u * (p.theta1_inf - p.theta2_inf) / t.c1;
        assert!((v.u - want).norm() < 1e-15);
    }

    // -- error paths -------------------------------------------------------------

    #[test]
    fn pole_proximity_is_rejected() {
        let p = demo_params();
        let time = TimePoint::tau(cr(1.0), cr(1.0));
        let st = RationalState::new(cr(1.0) + cr(1e-14), cr(3.0), cr(0.0), cr(0.0));
        assert!(matches!(
            eval_h_rational(1, &time, &st, &p),
            Err(PhaseError::Pole { .. })
        ));
        let st = RationalState::new(cr(2.0), cr(2.0), cr(0.0), cr(0.0));
        assert!(matches!(
            eval_h_rational(2, &time, &st, &p),
            Err(PhaseError::Pole { .. })
        ));
    }

    #[test]
    fn zero_time_is_rejected() {
        let p = demo_params();
        let st = PolynomialState::new(cr(1.0), cr(1.0), cr(0.0), cr(0.0));
        assert!(matches!(
            eval_h_polynomial(1, &TimePoint::s(cr(0.0), cr(-1.0)), &st, &p),
            Err(PhaseError::ZeroTime { .. })
        ));
        let kst = KnsState::new(cr(0.5), cr(0.5), cr(0.1), cr(0.1), cr(1.0));
        assert!(matches!(
            eval_k(2, &TimePoint::t(cr(1.0), cr(0.0)), &kst, &p),
            Err(PhaseError::ZeroTime { .. })
        ));
    }

    #[test]
    fn time_chart_conversions_roundtrip() {
        let t = TimePoint::t(c(1.3, 0.4), c(0.7, -0.2));
        let back = t.to_tau().to_s().to_t();
        assert!((back.c1 - t.c1).norm() < 1e-15);
        assert!((back.c2 - t.c2).norm() < 1e-15);
    }
}
