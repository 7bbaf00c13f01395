//! Transport along the two-time Hamiltonian flows.
//!
//! The integrator is an embedded Dormand–Prince 5(4) pair with PI step
//! control, working on complex state vectors along straight segments in one
//! complex time variable (the other held fixed). A fixed-step variant of the
//! same scheme backs the finite-difference stencils downstream: adaptive
//! step placement would otherwise contaminate the stencil's smoothness in
//! the stencil parameter.
//!
//! Each chart flows in its own native time coordinates: rational in
//! `(τ₁, τ₂)`, polynomial in `(s₁, s₂)`, canonical in `(t₁, t₂)`.

use crate::hamiltonians::{
    vector_field, Form, PhaseError, State, TimeChart, TimePoint,
};
use crate::params::ParameterSet;
use crate::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default local-error tolerance of the adaptive integrator.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Minimum distance any time segment must keep from a vanishing time
/// coordinate.
pub const PATH_CLEARANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("step size underflow at segment parameter {sigma}")]
    StepFailure { sigma: f64 },
    #[error("time segment passes within {clearance} of a vanishing {which} coordinate")]
    Clearance { which: &'static str, clearance: f64 },
}

/// The time chart a form's flow is defined in.
pub fn native_chart(form: Form) -> TimeChart {
    match form {
        Form::Rational => TimeChart::Tau,
        Form::Polynomial => TimeChart::S,
        Form::Kns => TimeChart::T,
    }
}

fn to_native(form: Form, tp: &TimePoint) -> TimePoint {
    match native_chart(form) {
        TimeChart::Tau => tp.to_tau(),
        TimeChart::S => tp.to_s(),
        TimeChart::T => tp.to_t(),
    }
}

/// Distance from the segment `[a, b] ⊂ ℂ` to the origin.
fn segment_origin_distance(a: C64, b: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return a.norm();
    }
    let t = (-(a.re * d.re + a.im * d.im) / len2).clamp(0.0, 1.0);
    (a + t * d).norm()
}

// ---------------------------------------------------------------------------
// Dormand–Prince 5(4)
// ---------------------------------------------------------------------------

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

const BS1: f64 = 5179.0 / 57600.0;
const BS3: f64 = 7571.0 / 16695.0;
const BS4: f64 = 393.0 / 640.0;
const BS5: f64 = -92097.0 / 339200.0;
const BS6: f64 = 187.0 / 2100.0;
const BS7: f64 = 1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
// PI controller exponents for a 5th-order error estimate.
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;
const MIN_STEP: f64 = 1e-14;

struct Dp5Workspace {
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    y5: Vec<C64>,
}

impl Dp5Workspace {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); dim]),
            stage: vec![C64::new(0.0, 0.0); dim],
            y5: vec![C64::new(0.0, 0.0); dim],
        }
    }
}

/// One DP5 step from `sigma` with size `h`. On return `ws.y5` holds the
/// 5th-order solution, `ws.k[6]` the FSAL derivative there, and the value
/// returned is the scaled error of the embedded 4th-order difference.
fn dp5_step<F>(
    rhs: &mut F,
    sigma: f64,
    h: f64,
    y: &[C64],
    k1: &[C64],
    ws: &mut Dp5Workspace,
    tol: f64,
) -> Result<f64, PhaseError>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<(), PhaseError>,
{
    let dim = y.len();
    ws.k[0].copy_from_slice(k1);

    macro_rules! stage {
        ($c:expr, $idx:expr, $($a:expr => $kj:expr),+) => {{
            for i in 0..dim {
                let mut acc = C64::new(0.0, 0.0);
                $(acc += $a * ws.k[$kj][i];)+
                ws.stage[i] = y[i] + h * acc;
            }
            let (head, tail) = ws.k.split_at_mut($idx);
            let _ = head;
            rhs(sigma + $c * h, &ws.stage, &mut tail[0])?;
        }};
    }

    stage!(C2, 1, A21 => 0);
    stage!(C3, 2, A31 => 0, A32 => 1);
    stage!(C4, 3, A41 => 0, A42 => 1, A43 => 2);
    stage!(C5, 4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
    stage!(1.0, 5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);

    for i in 0..dim {
        let acc = B1 * ws.k[0][i] + B3 * ws.k[2][i] + B4 * ws.k[3][i] + B5 * ws.k[4][i]
            + B6 * ws.k[5][i];
        ws.y5[i] = y[i] + h * acc;
    }
    {
        let (head, tail) = ws.k.split_at_mut(6);
        let _ = head;
        let y5 = &ws.y5;
        rhs(sigma + h, y5, &mut tail[0])?;
    }

    let mut err_sq = 0.0;
    for i in 0..dim {
        let diff = h
            * ((B1 - BS1) * ws.k[0][i] + (B3 - BS3) * ws.k[2][i] + (B4 - BS4) * ws.k[3][i]
                + (B5 - BS5) * ws.k[4][i]
                + (B6 - BS6) * ws.k[5][i]
                - BS7 * ws.k[6][i]);
        let scale = tol + tol * y[i].norm().max(ws.y5[i].norm());
        err_sq += (diff.norm() / scale).powi(2);
    }
    Ok((err_sq / dim as f64).sqrt())
}

/// Adaptive integration of `dy/dσ = rhs(σ, y)` over `σ ∈ [0, 1]`,
/// overwriting `y` with the endpoint value. The observer sees every accepted
/// step (including σ = 0). Returns (accepted, rejected) step counts.
pub fn adaptive_ode_observed<F, O>(
    rhs: &mut F,
    y: &mut [C64],
    tol: f64,
    mut observer: O,
) -> Result<(usize, usize), FlowError>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<(), PhaseError>,
    O: FnMut(f64, &[C64]),
{
    let dim = y.len();
    let mut ws = Dp5Workspace::new(dim);
    let mut k1 = vec![C64::new(0.0, 0.0); dim];
    rhs(0.0, y, &mut k1)?;
    observer(0.0, y);

    // Initial step from the magnitude of the first derivative.
    let d0 = y.iter().map(|z| z.norm()).fold(0.0_f64, f64::max).max(1.0);
    let d1 = k1.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    let mut h = if d1 > 0.0 {
        (0.01 * d0 / d1).clamp(1e-6, 0.05)
    } else {
        0.05
    };

    let mut sigma = 0.0_f64;
    let mut err_prev: f64 = 1.0;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut just_rejected = false;

    while sigma < 1.0 {
        h = h.min(1.0 - sigma);
        if h < MIN_STEP {
            return Err(FlowError::StepFailure { sigma });
        }
        let err = dp5_step(rhs, sigma, h, y, &k1, &mut ws, tol)?;
        if err <= 1.0 {
            sigma += h;
            y.copy_from_slice(&ws.y5);
            k1.copy_from_slice(&ws.k[6]); // FSAL
            observer(sigma, y);
            accepted += 1;
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA))
                    .clamp(FAC_MIN, if just_rejected { 1.0 } else { FAC_MAX })
            };
            err_prev = err.max(1e-10);
            h *= fac;
            just_rejected = false;
        } else {
            rejected += 1;
            just_rejected = true;
            h *= (SAFETY * err.powf(-PI_ALPHA)).clamp(FAC_MIN, 1.0);
        }
    }
    Ok((accepted, rejected))
}

/// Adaptive integration without an observer.
pub fn adaptive_ode<F>(rhs: &mut F, y: &mut [C64], tol: f64) -> Result<(usize, usize), FlowError>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<(), PhaseError>,
{
    adaptive_ode_observed(rhs, y, tol, |_, _| {})
}

/// Fixed-step DP5 over `σ ∈ [0, 1]` with `n` equal steps (no error control).
/// Used for stencil legs where step placement must not depend on the data.
pub fn fixed_step_ode<F>(rhs: &mut F, y: &mut [C64], n: usize) -> Result<(), FlowError>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<(), PhaseError>,
{
    assert!(n > 0);
    let dim = y.len();
    let mut ws = Dp5Workspace::new(dim);
    let mut k1 = vec![C64::new(0.0, 0.0); dim];
    let h = 1.0 / n as f64;
    for step in 0..n {
        let sigma = step as f64 * h;
        rhs(sigma, y, &mut k1)?;
        dp5_step(rhs, sigma, h, y, &k1, &mut ws, 1.0)?;
        y.copy_from_slice(&ws.y5);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Flow-level API
// ---------------------------------------------------------------------------

/// One leg of a piecewise path: flow time `j` to the value `to`, holding the
/// other coordinate fixed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PathSegment {
    pub j: u8,
    pub to: C64,
}

/// A piecewise-straight path in two-time space, one active time per segment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowPath {
    pub start: TimePoint,
    pub segments: Vec<PathSegment>,
}

impl FlowPath {
    /// Endpoint after all segments (in the start's chart).
    pub fn end(&self) -> TimePoint {
        let mut tp = self.start;
        for seg in &self.segments {
            if seg.j == 1 {
                tp.c1 = seg.to;
            } else {
                tp.c2 = seg.to;
            }
        }
        tp
    }

    /// Every segment (active and frozen coordinate alike) must keep the
    /// stated clearance from vanishing time coordinates.
    pub fn validate(&self, clearance: f64) -> Result<(), FlowError> {
        let mut tp = self.start;
        for seg in &self.segments {
            let (from, frozen, which) = if seg.j == 1 {
                (tp.c1, tp.c2, "first")
            } else {
                (tp.c2, tp.c1, "second")
            };
            if segment_origin_distance(from, seg.to) < clearance {
                return Err(FlowError::Clearance { which, clearance });
            }
            if frozen.norm() < clearance {
                return Err(FlowError::Clearance {
                    which: if seg.j == 1 { "second" } else { "first" },
                    clearance,
                });
            }
            if seg.j == 1 {
                tp.c1 = seg.to;
            } else {
                tp.c2 = seg.to;
            }
        }
        Ok(())
    }
}

/// Integrator statistics of one trajectory.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub tol: f64,
}

/// A flow trajectory: accepted-step samples of (time, state).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub form: Form,
    pub samples: Vec<(TimePoint, State)>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn end(&self) -> &(TimePoint, State) {
        self.samples.last().expect("trajectory has at least the start sample")
    }
}

/// Optional deliberate corruption of the vector field, used as a negative
/// control in compatibility checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldMutation {
    None,
    /// Flip the sign of the second momentum's rate.
    FlipSecondMomentumRate,
}

fn flow_rhs<'a>(
    form: Form,
    j: u8,
    base: TimePoint,
    delta: C64,
    params: &'a ParameterSet,
    mutation: FieldMutation,
) -> impl FnMut(f64, &[C64], &mut [C64]) -> Result<(), PhaseError> + 'a {
    move |sigma, y, dy| {
        let mut tp = base;
        let active = if j == 1 { &mut tp.c1 } else { &mut tp.c2 };
        *active += delta * sigma;
        let state = State::read_from(form, y);
        let v = vector_field(form, j, &tp, &state, params)?;
        v.write_to(dy);
        for z in dy.iter_mut() {
            *z *= delta;
        }
        if mutation == FieldMutation::FlipSecondMomentumRate {
            dy[3] = -dy[3];
        }
        Ok(())
    }
}

fn integrate_mutated(
    form: Form,
    j: u8,
    from: &(TimePoint, State),
    to: C64,
    params: &ParameterSet,
    tol: f64,
    mutation: FieldMutation,
) -> Result<Trajectory, FlowError> {
    assert!(j == 1 || j == 2, "flow index must be 1 or 2");
    let tp0 = to_native(form, &from.0);
    let path = FlowPath {
        start: tp0,
        segments: vec![PathSegment { j, to }],
    };
    path.validate(PATH_CLEARANCE)?;

    let delta = if j == 1 { to - tp0.c1 } else { to - tp0.c2 };
    if delta.norm() == 0.0 {
        return Ok(Trajectory {
            form,
            samples: vec![(tp0, from.1)],
            stats: IntegratorStats { tol, ..Default::default() },
        });
    }

    let dim = from.1.dim();
    let mut y = vec![C64::new(0.0, 0.0); dim];
    from.1.write_to(&mut y);

    let mut samples: Vec<(TimePoint, State)> = Vec::new();
    let mut rhs = flow_rhs(form, j, tp0, delta, params, mutation);
    let (accepted, rejected) = adaptive_ode_observed(&mut rhs, &mut y, tol, |sigma, y| {
        let mut tp = tp0;
        if j == 1 {
            tp.c1 += delta * sigma;
        } else {
            tp.c2 += delta * sigma;
        }
        samples.push((tp, State::read_from(form, y)));
    })?;

    Ok(Trajectory {
        form,
        samples,
        stats: IntegratorStats { accepted, rejected, tol },
    })
}

/// Transport a state along the `j`-th time flow of its chart, from
/// `from.0`'s native-chart time to the value `to` of that coordinate.
/// Samples are recorded at every accepted step.
pub fn integrate(
    form: Form,
    j: u8,
    from: &(TimePoint, State),
    to: C64,
    params: &ParameterSet,
    tol: f64,
) -> Result<Trajectory, FlowError> {
    integrate_mutated(form, j, from, to, params, tol, FieldMutation::None)
}

/// Transport along a multi-segment path.
pub fn integrate_path(
    form: Form,
    path: &FlowPath,
    state: &State,
    params: &ParameterSet,
    tol: f64,
) -> Result<Trajectory, FlowError> {
    path.validate(PATH_CLEARANCE)?;
    let mut tp = to_native(form, &path.start);
    let mut st = *state;
    let mut samples = vec![(tp, st)];
    let mut stats = IntegratorStats { tol, ..Default::default() };
    for seg in &path.segments {
        let leg = integrate(form, seg.j, &(tp, st), seg.to, params, tol)?;
        stats.accepted += leg.stats.accepted;
        stats.rejected += leg.stats.rejected;
        samples.extend(leg.samples.iter().skip(1).cloned());
        let (end_tp, end_st) = *leg.end();
        tp = end_tp;
        st = end_st;
    }
    Ok(Trajectory { form, samples, stats })
}

/// Fixed-step transport (n DP5 steps), for stencil legs.
pub fn integrate_fixed(
    form: Form,
    j: u8,
    from: &(TimePoint, State),
    to: C64,
    params: &ParameterSet,
    n: usize,
) -> Result<(TimePoint, State), FlowError> {
    let tp0 = to_native(form, &from.0);
    let delta = if j == 1 { to - tp0.c1 } else { to - tp0.c2 };
    let dim = from.1.dim();
    let mut y = vec![C64::new(0.0, 0.0); dim];
    from.1.write_to(&mut y);
    let mut rhs = flow_rhs(form, j, tp0, delta, params, FieldMutation::None);
    fixed_step_ode(&mut rhs, &mut y, n)?;
    let mut tp = tp0;
    if j == 1 {
        tp.c1 = to;
    } else {
        tp.c2 = to;
    }
    Ok((tp, State::read_from(form, &y)))
}

fn state_distance(a: &State, b: &State) -> f64 {
    let dim = a.dim();
    let mut ya = vec![C64::new(0.0, 0.0); dim];
    let mut yb = vec![C64::new(0.0, 0.0); dim];
    a.write_to(&mut ya);
    b.write_to(&mut yb);
    ya.iter()
        .zip(&yb)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

/// Flow the two times around both orders of a `(dt₁, dt₂)` rectangle and
/// return the endpoint deviation. For a compatible pair of flows this is
/// integrator-error sized.
pub fn commute_check(
    form: Form,
    from: &(TimePoint, State),
    dt1: C64,
    dt2: C64,
    params: &ParameterSet,
    tol: f64,
) -> Result<f64, FlowError> {
    commute_check_mutated(form, from, dt1, dt2, params, tol, FieldMutation::None)
}

/// `commute_check` with an optional vector-field corruption applied to the
/// *second* leg of each order (negative control: a genuine field commutes,
/// a corrupted one must not).
pub fn commute_check_mutated(
    form: Form,
    from: &(TimePoint, State),
    dt1: C64,
    dt2: C64,
    params: &ParameterSet,
    tol: f64,
    mutation: FieldMutation,
) -> Result<f64, FlowError> {
    let tp0 = to_native(form, &from.0);
    let start = (tp0, from.1);

    // t₁ then t₂
    let leg1 = integrate(form, 1, &start, tp0.c1 + dt1, params, tol)?;
    let leg2 = integrate_mutated(form, 2, leg1.end(), tp0.c2 + dt2, params, tol, mutation)?;
    let end_a = leg2.end().1;

    // t₂ then t₁
    let leg1 = integrate(form, 2, &start, tp0.c2 + dt2, params, tol)?;
    let leg2 = integrate_mutated(form, 1, leg1.end(), tp0.c1 + dt1, params, tol, mutation)?;
    let end_b = leg2.end().1;

    Ok(state_distance(&end_a, &end_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{KnsState, PolynomialState, RationalState};
    use crate::params::ParameterSet;
    use crate::{c, cr};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_params() -> ParameterSet {
        ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3))
    }

    fn demo_kns() -> (TimePoint, State) {
        (
            TimePoint::t(cr(1.0), cr(0.8)),
            State::Kns(KnsState::new(
                c(0.6, 0.1),
                c(1.4, -0.05),
                c(0.35, 0.0),
                c(0.41, 0.08),
                c(1.1, 0.2),
            )),
        )
    }

    #[test]
    fn zero_length_flow_is_identity() {
        let p = demo_params();
        let (tp, st) = demo_kns();
        let traj = integrate(Form::Kns, 1, &(tp, st), tp.c1, &p, 1e-10).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(state_distance(&traj.end().1, &st), 0.0);
    }

    #[test]
    fn tolerance_refinement_is_consistent() {
        let p = demo_params();
        let from = demo_kns();
        let to = cr(1.4);
        let coarse = integrate(Form::Kns, 1, &from, to, &p, 1e-8).unwrap();
        let fine = integrate(Form::Kns, 1, &from, to, &p, 1e-10).unwrap();
        let d = state_distance(&coarse.end().1, &fine.end().1);
        assert!(d < 1e-7, "endpoint drift {d}");
    }

    #[test]
    fn reversibility_within_tolerance() {
        let p = demo_params();
        let tol = 1e-10;
        let cases: [(Form, State, TimePoint, C64, u8); 3] = [
            (
                Form::Kns,
                demo_kns().1,
                TimePoint::t(cr(1.0), cr(0.8)),
                cr(1.35),
                2,
            ),
            (
                Form::Rational,
                State::Rational(RationalState::new(
                    c(2.0, 0.4),
                    c(3.1, -0.2),
                    c(0.12, 0.05),
                    c(-0.08, 0.1),
                )),
                TimePoint::tau(cr(1.0), cr(0.8)),
                cr(1.2),
                1,
            ),
            (
                Form::Polynomial,
                State::Polynomial(PolynomialState::new(
                    c(1.3, 0.2),
                    c(1.8, -0.3),
                    c(0.2, 0.1),
                    c(-0.15, 0.05),
                )),
                TimePoint::s(cr(1.0), cr(-0.8)),
                cr(0.75),
                1,
            ),
        ];
        for (form, st, tp, to, j) in cases {
            let fwd = integrate(form, j, &(tp, st), to, &p, tol).unwrap();
            let back = integrate(
                form,
                j,
                fwd.end(),
                if j == 1 { tp.c1 } else { tp.c2 },
                &p,
                tol,
            )
            .unwrap();
            // Bound tracks accumulated local error over the two legs.
            let d = state_distance(&back.end().1, &st);
            assert!(d < 100.0 * tol, "{form:?}: round trip drift {d}");
        }
    }

    #[test]
    fn kns_commutativity_is_integrator_sized() {
        let p = demo_params();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            let st = State::Kns(KnsState::new(
                c(rng.gen_range(-0.8..0.8), rng.gen_range(-0.3..0.3)),
                c(rng.gen_range(0.8..1.6), rng.gen_range(-0.3..0.3)),
                c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)),
                c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)),
                c(1.0, rng.gen_range(-0.3..0.3)),
            ));
            let tp = TimePoint::t(cr(1.0), cr(0.8));
            let d = commute_check(Form::Kns, &(tp, st), cr(0.1), cr(0.1), &p, 1e-10).unwrap();
            assert!(d < 1e-8, "commutativity deviation {d}");
        }
    }

    #[test]
    fn rational_and_polynomial_flows_commute() {
        let p = demo_params();
        let st = State::Rational(RationalState::new(
            c(2.0, 0.4),
            c(3.1, -0.2),
            c(0.12, 0.05),
            c(-0.08, 0.1),
        ));
        let tp = TimePoint::tau(cr(1.0), cr(0.8));
        let d = commute_check(Form::Rational, &(tp, st), cr(0.08), cr(0.08), &p, 1e-10).unwrap();
        assert!(d < 1e-8, "rational deviation {d}");

        let st = State::Polynomial(PolynomialState::new(
            c(1.3, 0.2),
            c(1.8, -0.3),
            c(0.2, 0.1),
            c(-0.15, 0.05),
        ));
        let tp = TimePoint::s(cr(1.0), cr(-0.8));
        let d = commute_check(Form::Polynomial, &(tp, st), cr(0.08), cr(0.08), &p, 1e-10).unwrap();
        assert!(d < 1e-8, "polynomial deviation {d}");
    }

    #[test]
    fn corrupted_field_breaks_commutativity() {
        let p = demo_params();
        let from = demo_kns();
        let d = commute_check_mutated(
            Form::Kns,
            &from,
            cr(0.1),
            cr(0.1),
            &p,
            1e-10,
            FieldMutation::FlipSecondMomentumRate,
        )
        .unwrap();
        assert!(d > 1e-3, "mutated deviation unexpectedly small: {d}");
    }

    #[test]
    fn zero_rectangle_sides_commute_exactly() {
        let p = demo_params();
        let from = demo_kns();
        let d = commute_check(Form::Kns, &from, cr(0.0), cr(0.1), &p, 1e-10).unwrap();
        assert!(d < 1e-9, "degenerate rectangle deviation {d}");
    }

    #[test]
    fn gauge_scalar_stays_nonzero() {
        let p = demo_params();
        let from = demo_kns();
        let traj = integrate(Form::Kns, 2, &from, cr(1.6), &p, 1e-10).unwrap();
        for (_, st) in &traj.samples {
            if let State::Kns(k) = st {
                assert!(k.u.norm() > 0.1);
            }
        }
    }

    #[test]
    fn clearance_violations_are_rejected() {
        let p = demo_params();
        let from = demo_kns();
        // Flowing t₂ through 0 must be refused.
        let r = integrate(Form::Kns, 2, &from, cr(-0.5), &p, 1e-10);
        assert!(matches!(r, Err(FlowError::Clearance { .. })));
    }

    // Modified Bessel functions of integer order 0,1 by power series; the
    // arguments below are ≈ 2.5 so the series converges in ~20 terms.
    fn bessel_i0(z: f64) -> f64 {
        let q = z * z / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            term *= q / ((k * k) as f64);
            sum += term;
        }
        sum
    }

    fn bessel_i1(z: f64) -> f64 {
        let q = z * z / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            term *= q / ((k * (k + 1)) as f64);
            sum += term;
        }
        sum * z / 2.0
    }

    #[test]
    fn gauge_scalar_matches_bessel_closed_form() {
        // With all exponents zero, the slice P₁ = P₂ = 0 is invariant under
        // the second-time flow and Q₂ obeys the Riccati equation
        // t₂·Q₂' = t₂ − Q₂², linearized by Q₂ = t₂ v'/v with
        // t₂v'' + v' − v = 0, i.e. v = I₀(2√t₂). Then the gauge equation
        // t₂·u' = −u·Q₂ integrates in closed form:
        //   Q₂(t₂) = √t₂·I₁(2√t₂)/I₀(2√t₂),  u(t₂) = u₀·I₀(2√a)/I₀(2√t₂).
        let p = ParameterSet::new(cr(2.0), cr(2.0), cr(1.0), cr(1.0), cr(0.0));
        assert!(p.theta0.norm() == 0.0 && p.theta1_inf.norm() == 0.0);

        let a = 0.5_f64; // start t₂
        let b = 1.5_f64; // end t₂
        let q2_of = |t2: f64| t2.sqrt() * bessel_i1(2.0 * t2.sqrt()) / bessel_i0(2.0 * t2.sqrt());
        let u0 = c(1.3, 0.4);

        let st = State::Kns(KnsState::new(
            c(0.7, 0.2), // Q₁ free
            cr(q2_of(a)),
            cr(0.0),
            cr(0.0),
            u0,
        ));
        let from = (TimePoint::t(cr(1.0), cr(a)), st);
        let traj = integrate(Form::Kns, 2, &from, cr(b), &p, 1e-12).unwrap();

        // Frozen-ness of the momenta along the whole trajectory (this is the
        // precondition for the closed form, checked, not assumed).
        for (_, s) in &traj.samples {
            if let State::Kns(k) = s {
                assert!(k.p1.norm() < 1e-10, "P₁ drifted: {}", k.p1);
                assert!(k.p2.norm() < 1e-10, "P₂ drifted: {}", k.p2);
            }
        }

        if let State::Kns(k) = traj.end().1 {
            let q2_want = cr(q2_of(b));
            assert!(
                (k.q2 - q2_want).norm() < 1e-9,
                "Q₂ vs Riccati closed form: {} vs {}",
                k.q2,
                q2_want
            );
            let u_want = u0 * bessel_i0(2.0 * a.sqrt()) / bessel_i0(2.0 * b.sqrt());
            assert!(
                (k.u - u_want).norm() < 1e-9,
                "u vs closed form: {} vs {}",
                k.u,
                u_want
            );
        } else {
            unreachable!()
        }
    }

    #[test]
    fn fixed_step_matches_adaptive() {
        let p = demo_params();
        let from = demo_kns();
        let to = cr(1.3);
        let adaptive = integrate(Form::Kns, 1, &from, to, &p, 1e-12).unwrap();
        let (_, fixed) = integrate_fixed(Form::Kns, 1, &from, to, &p, 64).unwrap();
        let d = state_distance(&adaptive.end().1, &fixed);
        assert!(d < 1e-8, "fixed-step drift {d}");
    }

    #[test]
    fn path_integration_concatenates_segments() {
        let p = demo_params();
        let (tp, st) = demo_kns();
        let path = FlowPath {
            start: tp,
            segments: vec![
                PathSegment { j: 1, to: cr(1.3) },
                PathSegment { j: 2, to: cr(1.1) },
            ],
        };
        let traj = integrate_path(Form::Kns, &path, &st, &p, 1e-10).unwrap();
        let end = traj.end().0;
        assert!((end.c1 - cr(1.3)).norm() < 1e-15);
        assert!((end.c2 - cr(1.1)).norm() < 1e-15);
        assert_eq!(path.end().c1, cr(1.3));
    }

    // Coordinate half of the symplectic map between the rational and
    // polynomial charts: q₁ = (λ₁−1)(λ₂−1)/τ₁, q₂ = λ₁λ₂, s₁ = 1/τ₁,
    // s₂ = −τ₂. The momentum half is not printed anywhere; the initial
    // (p₁, p₂) is solved from the coordinate velocities (the q-rates are
    // linear in p), after which the two flows must produce the same
    // q-curves.
    #[test]
    fn rational_flow_maps_onto_polynomial_flow() {
        let p = demo_params();
        let tau2 = cr(0.8);
        let st0 = RationalState::new(c(2.0, 0.4), c(3.1, -0.2), c(0.12, 0.05), c(-0.08, 0.1));
        let tau1_nodes: Vec<C64> = (0..=5).map(|i| cr(1.0 + 0.05 * i as f64)).collect();

        // Rational trajectory sampled at the nodes.
        let mut rat: Vec<(C64, RationalState)> = vec![(tau1_nodes[0], st0)];
        for w in tau1_nodes.windows(2) {
            let (tp_prev, st_prev) = {
                let (t1, s) = *rat.last().unwrap();
                (TimePoint::tau(t1, tau2), State::Rational(s))
            };
            let leg = integrate(Form::Rational, 1, &(tp_prev, st_prev), w[1], &p, 1e-12).unwrap();
            if let (tp, State::Rational(s)) = leg.end() {
                rat.push((tp.c1, *s));
            }
        }

        let map_q = |tau1: C64, s: &RationalState| {
            (
                (s.lambda1 - 1.0) * (s.lambda2 - 1.0) / tau1,
                s.lambda1 * s.lambda2,
            )
        };

        // Momenta at the first node from velocity matching.
        let (tau1_0, s0) = rat[0];
        let v = crate::hamiltonians::rational_velocity(1, &TimePoint::tau(tau1_0, tau2), &s0, &p)
            .unwrap();
        let (q1, q2) = map_q(tau1_0, &s0);
        let s1 = 1.0 / tau1_0;
        let s2 = -tau2;
        // dq/dτ₁ by the product/quotient rule, then dq/ds₁ = −τ₁²·dq/dτ₁.
        let dq1_dtau = (v.lambda1 * (s0.lambda2 - 1.0) + (s0.lambda1 - 1.0) * v.lambda2) / tau1_0
            - (s0.lambda1 - 1.0) * (s0.lambda2 - 1.0) / (tau1_0 * tau1_0);
        let dq2_dtau = v.lambda1 * s0.lambda2 + s0.lambda1 * v.lambda2;
        let dq1_ds = -tau1_0 * tau1_0 * dq1_dtau;
        let dq2_ds = -tau1_0 * tau1_0 * dq2_dtau;
        // The q-rates of the polynomial flow are linear in p:
        //   s₁²·dq₁/ds₁ = 2q₁²(q₁−s₁)p₁ + 2q₁²q₂p₂ − L₁, and similarly for q₂.
        let l1 = (p.kappa0 - 1.0) * q1 * q1
            + p.kappa1 * q1 * (q1 - s1)
            + p.gamma2 * (q1 - s1)
            + p.gamma2 * s1 * q2;
        let l2 = (p.kappa0 + p.kappa1 - 1.0) * q1 * q2 + p.gamma1 * s2 * q1 + p.gamma2 * q2;
        let m11 = 2.0 * q1 * q1 * (q1 - s1);
        let m12 = 2.0 * q1 * q1 * q2;
        let m21 = 2.0 * q1 * q1 * q2;
        let m22 = 2.0 * q1 * q2 * q2;
        let r1 = s1 * s1 * dq1_ds + l1;
        let r2 = s1 * s1 * dq2_ds + l2;
        let det = m11 * m22 - m12 * m21;
        let p1 = (r1 * m22 - m12 * r2) / det;
        let p2 = (m11 * r2 - r1 * m21) / det;

        // Polynomial trajectory through the image nodes.
        let mut poly_state = State::Polynomial(PolynomialState::new(q1, q2, p1, p2));
        let mut poly_tp = TimePoint::s(s1, s2);
        for (tau1, rst) in rat.iter().skip(1) {
            let target = 1.0 / *tau1;
            let leg =
                integrate(Form::Polynomial, 1, &(poly_tp, poly_state), target, &p, 1e-12).unwrap();
            let (tp_end, st_end) = *leg.end();
            poly_tp = tp_end;
            poly_state = st_end;
            if let State::Polynomial(ps) = poly_state {
                let (q1_want, q2_want) = map_q(*tau1, rst);
                assert!(
                    (ps.q1 - q1_want).norm() < 1e-8,
                    "q₁ mismatch at τ₁={tau1}: {} vs {}",
                    ps.q1,
                    q1_want
                );
                assert!(
                    (ps.q2 - q2_want).norm() < 1e-8,
                    "q₂ mismatch at τ₁={tau1}: {} vs {}",
                    ps.q2,
                    q2_want
                );
            }
        }
    }
}
