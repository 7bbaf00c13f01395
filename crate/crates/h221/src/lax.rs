//! Coefficient matrices of the 2×2 linear system attached to the canonical
//! chart, and finite-difference certification of its compatibility.
//!
//! Two parallel families are built from one canonical state. The plain
//! family has residues `A₀⁽⁻¹⁾, A₀⁽⁰⁾, A₁⁽⁰⁾, A_∞` in the `(t₁, t₂)` times;
//! the reduced family `B…` is its image under a diagonal scalar gauge and is
//! traceless slot by slot. The reduced system in the `(τ₁, τ₂)` times reads
//!
//! ```text
//!   ∂Z/∂η  = ( B₀⁽⁻¹⁾/η² + B₀⁽⁰⁾/η + B₁⁽⁰⁾/(η−1) + B_∞ ) · Z
//!   ∂Z/∂τ₁ = ( F₂·η + B₁ ) · Z
//!   ∂Z/∂τ₂ = −B₀⁽⁻¹⁾/(τ₂η) · Z
//! ```
//!
//! Compatibility of any two of these flows is a zero-curvature identity
//! `∂_b U_a − ∂_a U_b + [U_a, U_b] = 0` that holds along solutions of the
//! canonical Hamiltonian pair. `zero_curvature_residual` measures it with
//! central differences along the flow; the residual must shrink at second
//! order in the step and is the main guard on the matrix transcriptions.

use crate::flows::{integrate_fixed, FlowError};
use crate::hamiltonians::{Form, KnsState, PhaseError, State, TimePoint, POLE_TOL};
use crate::params::ParameterSet;
use crate::{cr, C64, M2};

/// Fixed DP5 steps per finite-difference transport leg.
const FD_TRANSPORT_STEPS: usize = 8;

/// State offset used by the negative control of the compatibility check.
pub const MUTATION_OFFSET: f64 = 0.1;

/// Constant coefficient of `η` in the first reduced deformation equation.
pub fn f2() -> M2 {
    M2::new(cr(-0.5), cr(0.0), cr(0.0), cr(0.5))
}

/// Constant coefficient of `η` in the first plain deformation equation.
pub fn e2() -> M2 {
    M2::new(cr(0.0), cr(0.0), cr(0.0), cr(1.0))
}

/// The plain family at one canonical state, `(t₁, t₂)` times.
#[derive(Clone, Copy, Debug)]
pub struct PlainFamily {
    pub a0_m1: M2,
    pub a0_0: M2,
    pub a1_0: M2,
    pub a_inf: M2,
}

/// The reduced (traceless) family at one canonical state, `(τ₁, τ₂)` times.
#[derive(Clone, Copy, Debug)]
pub struct ReducedFamily {
    pub b0_m1: M2,
    pub b0_0: M2,
    pub b1_0: M2,
    pub b_inf: M2,
    pub b1: M2,
}

fn ensure_gauge_regular(u: C64) -> Result<(), PhaseError> {
    if u.norm() < POLE_TOL {
        return Err(PhaseError::Pole {
            what: "gauge scalar u",
            tol: POLE_TOL,
        });
    }
    Ok(())
}

/// Plain family `A…` of the linear system in the `(t₁, t₂)` times.
pub fn plain_family(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
) -> Result<PlainFamily, PhaseError> {
    let t = time.to_t();
    t.ensure_nonzero()?;
    ensure_gauge_regular(st.u)?;
    let (t1, t2) = (t.c1, t.c2);
    let (q1, q2, p1, p2, u) = (st.q1, st.q2, st.p1, st.p2, st.u);
    let r = t2 / t1;

    let a0_m1 = M2::new(
        r * (1.0 - p2),
        r * u * p2,
        r * (1.0 - p2) / u,
        r * p2,
    );
    let a0_0 = M2::new(
        p1 * q1 - pr.theta1 - pr.theta1_inf,
        -u * (p1 * q1 + p2 * q2 + pr.theta2_inf),
        (p1 * q1 + (1.0 - p2) * q2 - pr.theta1 - pr.theta1_inf) / u,
        -p1 * q1 - pr.theta2_inf,
    );
    let a1_0 = M2::new(
        -p1 * q1 + pr.theta1,
        u * p1,
        (pr.theta1 * q1 - p1 * q1 * q1) / u,
        p1 * q1,
    );
    let a_inf = M2::new(cr(0.0), cr(0.0), cr(0.0), t1);
    Ok(PlainFamily { a0_m1, a0_0, a1_0, a_inf })
}

/// Reduced family `B…` of the linear system in the `(τ₁, τ₂)` times.
pub fn reduced_family(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
) -> Result<ReducedFamily, PhaseError> {
    let tau = time.to_tau();
    tau.ensure_nonzero()?;
    ensure_gauge_regular(st.u)?;
    let (tau1, tau2) = (tau.c1, tau.c2);
    let (q1, q2, p1, p2, u) = (st.q1, st.q2, st.p1, st.p2, st.u);

    let b0_m1 = M2::new(
        tau2 * (0.5 - p2),
        tau2 * u * p2,
        tau2 * (1.0 - p2) / u,
        tau2 * (p2 - 0.5),
    );
    let d00 = p1 * q1 + pr.theta0 / 2.0 + pr.theta2_inf;
    let b0_0 = M2::new(
        d00,
        -u * (p1 * q1 + p2 * q2 + pr.theta2_inf),
        (p1 * q1 + (1.0 - p2) * q2 - pr.theta1 - pr.theta1_inf) / u,
        -d00,
    );
    let d10 = -p1 * q1 + pr.theta1 / 2.0;
    let b1_0 = M2::new(
        d10,
        u * p1,
        (pr.theta1 * q1 - p1 * q1 * q1) / u,
        -d10,
    );
    let b_inf = M2::new(-tau1 / 2.0, cr(0.0), cr(0.0), tau1 / 2.0);
    // Off-diagonal residue sums, weighted by 1/τ₁.
    let b1 = M2::new(
        cr(0.0),
        (b0_0[(0, 1)] + b1_0[(0, 1)]) / tau1,
        (b0_0[(1, 0)] + b1_0[(1, 0)]) / tau1,
        cr(0.0),
    );
    Ok(ReducedFamily { b0_m1, b0_0, b1_0, b_inf, b1 })
}

/// Coefficient of the reduced spectral equation `∂Z/∂η`.
pub fn u_eta(fam: &ReducedFamily, eta: C64) -> Result<M2, PhaseError> {
    if eta.norm() < POLE_TOL {
        return Err(PhaseError::Pole { what: "spectral point at 0", tol: POLE_TOL });
    }
    if (eta - 1.0).norm() < POLE_TOL {
        return Err(PhaseError::Pole { what: "spectral point at 1", tol: POLE_TOL });
    }
    Ok(fam.b0_m1 / (eta * eta) + fam.b0_0 / eta + fam.b1_0 / (eta - cr(1.0)) + fam.b_inf)
}

/// Coefficient of the reduced first-time equation `∂Z/∂τ₁`.
pub fn u_tau1(fam: &ReducedFamily, eta: C64) -> M2 {
    f2() * eta + fam.b1
}

/// Coefficient of the reduced second-time equation `∂Z/∂τ₂`.
pub fn u_tau2(fam: &ReducedFamily, tau2: C64, eta: C64) -> Result<M2, PhaseError> {
    if tau2.norm() < POLE_TOL {
        return Err(PhaseError::ZeroTime { which: "second" });
    }
    if eta.norm() < POLE_TOL {
        return Err(PhaseError::Pole { what: "spectral point at 0", tol: POLE_TOL });
    }
    Ok(-fam.b0_m1 / (tau2 * eta))
}

/// Coefficients of the plain-time equations `∂Z/∂t₁`, `∂Z/∂t₂`, obtained
/// from the τ-pair by the change of times `τ₁ = t₁`, `τ₂ = t₂/t₁`.
pub fn u_t1(fam: &ReducedFamily, tau: &TimePoint, eta: C64) -> Result<M2, PhaseError> {
    let tau = tau.to_tau();
    Ok(u_tau1(fam, eta) - u_tau2(fam, tau.c2, eta)? * (tau.c2 / tau.c1))
}

pub fn u_t2(fam: &ReducedFamily, tau: &TimePoint, eta: C64) -> Result<M2, PhaseError> {
    let tau = tau.to_tau();
    Ok(u_tau2(fam, tau.c2, eta)? / tau.c1)
}

/// Logarithm of the diagonal scalar gauge linking the two families:
/// the reduced solution is `Z = exp(−φ(η))·Y` with
/// `φ = ητ₁/2 − τ₂/(2η) + (θ⁰/2)·ln η + (θ¹/2)·ln(η−1)`, principal branches.
pub fn log_gauge(eta: C64, time: &TimePoint, pr: &ParameterSet) -> C64 {
    let tau = time.to_tau();
    eta * tau.c1 / 2.0 - tau.c2 / (2.0 * eta)
        + pr.theta0 / 2.0 * eta.ln()
        + pr.theta1 / 2.0 * (eta - 1.0).ln()
}

fn comm(x: &M2, y: &M2) -> M2 {
    x * y - y * x
}

pub fn max_abs(m: &M2) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Transport a canonical state along the `τ_j` direction by `delta`,
/// holding the other τ-coordinate fixed. A τ₁ displacement moves both plain
/// times (`t₁ = τ₁`, `t₂ = τ₁τ₂`), so it is realized as a `t₁` leg followed
/// by a `t₂` leg; the flows commute, making the composition path-free.
pub fn flow_tau(
    time: &TimePoint,
    st: &KnsState,
    j: u8,
    delta: C64,
    pr: &ParameterSet,
    n: usize,
) -> Result<(TimePoint, KnsState), FlowError> {
    let tau = time.to_tau();
    let t = tau.to_t();
    let state = State::Kns(*st);
    let (tau1, tau2) = (tau.c1, tau.c2);
    let end = if j == 1 {
        let t1_new = tau1 + delta;
        let leg1 = integrate_fixed(Form::Kns, 1, &(t, state), t1_new, pr, n)?;
        integrate_fixed(Form::Kns, 2, &leg1, t1_new * tau2, pr, n)?
    } else {
        integrate_fixed(Form::Kns, 2, &(t, state), tau1 * (tau2 + delta), pr, n)?
    };
    match end.1 {
        State::Kns(k) => Ok((end.0.to_tau(), k)),
        _ => unreachable!(),
    }
}

/// Which pair of deformation directions to test for compatibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeformationPair {
    EtaTau1,
    EtaTau2,
    Tau1Tau2,
}

/// Max-entry norm of the zero-curvature defect of one deformation pair at
/// `(time, st, eta)`, with τ-derivatives taken as central differences of
/// step `h` along the flow. With `mutated` the state entering the
/// *pointwise* terms (the commutator and the analytic η-derivative) is
/// offset by [`MUTATION_OFFSET`] in `P₂` while the transported legs stay
/// exact, which must leave an O(offset) defect — the negative control.
pub fn zero_curvature_residual(
    pair: DeformationPair,
    time: &TimePoint,
    st: &KnsState,
    eta: C64,
    pr: &ParameterSet,
    h: f64,
    mutated: bool,
) -> Result<f64, FlowError> {
    let tau = time.to_tau();
    let tau2 = tau.c2;
    let n = FD_TRANSPORT_STEPS;

    let mut center_state = *st;
    if mutated {
        center_state.p2 += cr(MUTATION_OFFSET);
    }
    let center = reduced_family(&tau, &center_state, pr)?;

    let fd = |j: u8| -> Result<(ReducedFamily, ReducedFamily, TimePoint, TimePoint), FlowError> {
        let (tp_p, st_p) = flow_tau(&tau, st, j, cr(h), pr, n)?;
        let (tp_m, st_m) = flow_tau(&tau, st, j, cr(-h), pr, n)?;
        Ok((
            reduced_family(&tp_p, &st_p, pr)?,
            reduced_family(&tp_m, &st_m, pr)?,
            tp_p,
            tp_m,
        ))
    };

    let residual = match pair {
        DeformationPair::EtaTau1 => {
            let (fp, fm, _, _) = fd(1)?;
            let du_eta = (u_eta(&fp, eta)? - u_eta(&fm, eta)?) / cr(2.0 * h);
            // ∂η(F₂η + B₁) = F₂.
            du_eta - f2() + comm(&u_eta(&center, eta)?, &u_tau1(&center, eta))
        }
        DeformationPair::EtaTau2 => {
            let (fp, fm, _, _) = fd(2)?;
            let du_eta = (u_eta(&fp, eta)? - u_eta(&fm, eta)?) / cr(2.0 * h);
            // ∂η(−B₀⁽⁻¹⁾/(τ₂η)) = B₀⁽⁻¹⁾/(τ₂η²).
            let d_eta_u2 = center.b0_m1 / (tau2 * eta * eta);
            du_eta - d_eta_u2
                + comm(&u_eta(&center, eta)?, &u_tau2(&center, tau2, eta)?)
        }
        DeformationPair::Tau1Tau2 => {
            let (fp2, fm2, _, _) = fd(2)?;
            let du_tau1 = (u_tau1(&fp2, eta) - u_tau1(&fm2, eta)) / cr(2.0 * h);
            let (fp1, fm1, tp_p, tp_m) = fd(1)?;
            let du_tau2 = (u_tau2(&fp1, tp_p.c2, eta)? - u_tau2(&fm1, tp_m.c2, eta)?)
                / cr(2.0 * h);
            du_tau1 - du_tau2
                + comm(
                    &u_tau1(&center, eta),
                    &u_tau2(&center, tau2, eta)?,
                )
        }
    };
    Ok(max_abs(&residual))
}
