//! Reduction of the deformation data to five scalar fields and the
//! second-order system the off-diagonal pair closes into.
//!
//! The residue matrices of the linear system carry exactly five independent
//! scalars once the trace is removed. Three parametrize the irregular
//! residue, which factors as `−τ₂·[[c, d], [e, −c]]` with
//!
//! ```text
//!   c = P₂ − 1/2,   d = −u·P₂,   e = (P₂ − 1)/u,
//! ```
//!
//! and two more are the off-diagonal entries of the summed finite residues,
//! `a` below the diagonal and `b` above it. Along the two commuting flows
//! the five fields obey a closed first-order system,
//!
//! ```text
//!   τ₁ ∂τ₁ c = e·b − a·d          ∂τ₂ b = τ₁·d
//!   τ₁ ∂τ₁ d = −2·b·c             ∂τ₂ a = −τ₁·e
//!   τ₁ ∂τ₁ e = 2·a·c
//! ```
//!
//! with the pointwise algebraic constraint `c² + d·e = 1/4`, conserved by
//! the flow. Eliminating `c, d, e` leaves a pair of second-order equations
//! for `(a, b)` alone — an inhomogeneous complexified
//! Pohlmeyer–Regge–Lund–Getmanov system:
//!
//! ```text
//!   τ₁ ∂τ₁∂τ₂ b = ∂τ₂ b − b·s        s = √(τ₁² + 4·(∂τ₂ a)(∂τ₂ b))
//!   τ₁ ∂τ₁∂τ₂ a = ∂τ₂ a − a·s
//! ```
//!
//! On solutions the constraint collapses the radicand to `(2τ₁c)²`, so `s`
//! is the continuous branch equal to `2τ₁c`; as the derivative product
//! vanishes (`c → 1/2`) it tends to `τ₁`. From grid data alone the branch
//! is determined only up to one global sign — which degenerate fields
//! (`a = b = 0`) cannot fix — so the evaluator marches a continuous branch
//! from a corner anchor and reports the sign that fits the data. A root
//! collision between adjacent nodes raises
//! [`PrlgError::BranchAmbiguity`] rather than guessing a branch.
//!
//! All residuals are measured with central differences on a rectangular
//! `(τ₁, τ₂)`-grid of genuine flow samples and must decay at second order
//! in the spacing; the negative control flips the sign of `d` at every
//! node, which leaves a spacing-independent defect in the `d`-equation.

use crate::flows::FlowError;
use crate::hamiltonians::{KnsState, PhaseError, TimePoint};
use crate::lax::{flow_tau, plain_family};
use crate::params::ParameterSet;
use crate::{cr, C64};

/// Fixed DP5 steps per grid-leg transport, matching the stencil transport
/// of the compatibility checks: node placement must not depend on the data.
const GRID_TRANSPORT_STEPS: usize = 8;

/// One sample of the five reduced fields at a grid node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrlgSample {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
    pub e: C64,
}

/// Errors from grid assembly and branch tracking.
#[derive(Debug, thiserror::Error)]
pub enum PrlgError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    /// The radicand of the square root moved so far between two adjacent
    /// grid nodes that neither branch continues the previous value.
    #[error("square-root branch is ambiguous between grid nodes ({i}, {j})")]
    BranchAmbiguity { i: usize, j: usize },
}

/// Extracts the five reduced fields from one canonical state.
///
/// `a` and `b` are read off the plain residue family; `c, d, e` come from
/// the closed formulas in the module header. Requires `u ≠ 0`.
pub fn extract(time: &TimePoint, st: &KnsState, pr: &ParameterSet) -> Result<PrlgSample, PhaseError> {
    let fam = plain_family(time, st, pr)?;
    Ok(PrlgSample {
        a: fam.a0_0[(1, 0)] + fam.a1_0[(1, 0)],
        b: fam.a0_0[(0, 1)] + fam.a1_0[(0, 1)],
        c: st.p2 - cr(0.5),
        d: -st.u * st.p2,
        e: (st.p2 - cr(1.0)) / st.u,
    })
}

/// Defect of the pointwise constraint `c² + d·e = 1/4` at one sample.
pub fn constraint_residual(s: &PrlgSample) -> f64 {
    (s.c * s.c + s.d * s.e - cr(0.25)).norm()
}

/// Negative controls for the grid evaluators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrlgMutation {
    None,
    /// Flip the sign of `d` at every node: the `d`-flow residual
    /// `τ₁∂τ₁d + 2bc` then plateaus at `|4bc|` instead of shrinking.
    FlipD,
}

/// Rectangular grid of field samples with real spacing `h` in both times,
/// anchored at a (possibly complex) corner.
#[derive(Clone, Debug)]
pub struct PrlgGrid {
    base: TimePoint,
    h: f64,
    n1: usize,
    n2: usize,
    samples: Vec<PrlgSample>,
}

impl PrlgGrid {
    /// Builds a grid by evaluating `f(τ₁, τ₂)` at every node. This is the
    /// synthetic entry point used to validate the residual evaluators
    /// against closed-form solution families.
    pub fn from_fn(base: &TimePoint, h: f64, n1: usize, n2: usize, f: impl Fn(C64, C64) -> PrlgSample) -> Self {
        assert!(n1 >= 3 && n2 >= 3, "residual stencils need at least 3 nodes per side");
        let base = base.to_tau();
        let mut samples = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                let t1 = base.c1 + cr(i as f64 * h);
                let t2 = base.c2 + cr(j as f64 * h);
                samples.push(f(t1, t2));
            }
        }
        PrlgGrid { base, h, n1, n2, samples }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn tau1(&self, i: usize) -> C64 {
        self.base.c1 + cr(i as f64 * self.h)
    }

    pub fn tau2(&self, j: usize) -> C64 {
        self.base.c2 + cr(j as f64 * self.h)
    }

    pub fn sample(&self, i: usize, j: usize) -> &PrlgSample {
        &self.samples[i * self.n2 + j]
    }

    /// Largest constraint defect over all nodes.
    pub fn max_constraint_residual(&self) -> f64 {
        self.samples.iter().map(constraint_residual).fold(0.0, f64::max)
    }
}

/// Transports the state over an `n1 × n2` grid with spacing `h` starting at
/// `time` and extracts the five fields at every node. The first row marches
/// along `τ₁`, each column then marches along `τ₂`; path independence of
/// the two flows is certified separately by the compatibility checks.
pub fn sample_flow_grid(
    time: &TimePoint,
    st: &KnsState,
    pr: &ParameterSet,
    h: f64,
    n1: usize,
    n2: usize,
    mutation: PrlgMutation,
) -> Result<PrlgGrid, PrlgError> {
    assert!(n1 >= 3 && n2 >= 3, "residual stencils need at least 3 nodes per side");
    let base = time.to_tau();
    let mut samples = vec![
        PrlgSample { a: cr(0.0), b: cr(0.0), c: cr(0.0), d: cr(0.0), e: cr(0.0) };
        n1 * n2
    ];
    let mut col = (base, *st);
    for i in 0..n1 {
        if i > 0 {
            col = flow_tau(&col.0, &col.1, 1, cr(h), pr, GRID_TRANSPORT_STEPS)?;
        }
        let mut cur = col;
        for j in 0..n2 {
            if j > 0 {
                cur = flow_tau(&cur.0, &cur.1, 2, cr(h), pr, GRID_TRANSPORT_STEPS)?;
            }
            let mut s = extract(&cur.0, &cur.1, pr).map_err(FlowError::from)?;
            if mutation == PrlgMutation::FlipD {
                s.d = -s.d;
            }
            samples[i * n2 + j] = s;
        }
    }
    Ok(PrlgGrid { base, h, n1, n2, samples })
}

/// Max-norm finite-difference residuals of the five first-order equations
/// over the interior nodes of a grid.
#[derive(Clone, Copy, Debug)]
pub struct FirstOrderResiduals {
    /// `τ₁∂τ₁c − (eb − ad)`
    pub c_flow: f64,
    /// `τ₁∂τ₁d + 2bc`
    pub d_flow: f64,
    /// `τ₁∂τ₁e − 2ac`
    pub e_flow: f64,
    /// `∂τ₂b − τ₁d`
    pub b_drift: f64,
    /// `∂τ₂a + τ₁e`
    pub a_drift: f64,
}

impl FirstOrderResiduals {
    pub fn max(&self) -> f64 {
        self.c_flow.max(self.d_flow).max(self.e_flow).max(self.b_drift).max(self.a_drift)
    }
}

/// Evaluates the five first-order equations with central differences at
/// every interior node and returns the per-equation maxima.
pub fn first_order_residuals(g: &PrlgGrid) -> FirstOrderResiduals {
    let two_h = cr(2.0 * g.h);
    let mut r = FirstOrderResiduals { c_flow: 0.0, d_flow: 0.0, e_flow: 0.0, b_drift: 0.0, a_drift: 0.0 };
    for i in 1..g.n1 - 1 {
        let t1 = g.tau1(i);
        for j in 1..g.n2 - 1 {
            let s = g.sample(i, j);
            let up1 = g.sample(i + 1, j);
            let dn1 = g.sample(i - 1, j);
            let up2 = g.sample(i, j + 1);
            let dn2 = g.sample(i, j - 1);
            let dc = (up1.c - dn1.c) / two_h;
            let dd = (up1.d - dn1.d) / two_h;
            let de = (up1.e - dn1.e) / two_h;
            let db = (up2.b - dn2.b) / two_h;
            let da = (up2.a - dn2.a) / two_h;
            r.c_flow = r.c_flow.max((t1 * dc - (s.e * s.b - s.a * s.d)).norm());
            r.d_flow = r.d_flow.max((t1 * dd + 2.0 * s.b * s.c).norm());
            r.e_flow = r.e_flow.max((t1 * de - 2.0 * s.a * s.c).norm());
            r.b_drift = r.b_drift.max((db - t1 * s.d).norm());
            r.a_drift = r.a_drift.max((da + t1 * s.e).norm());
        }
    }
    r
}

/// Max-norm residuals of the two second-order equations, plus the branch
/// value the evaluator settled on at the first interior node.
#[derive(Clone, Copy, Debug)]
pub struct SecondOrderResiduals {
    /// `τ₁∂τ₁∂τ₂b − ∂τ₂b + b·s`
    pub b_eq: f64,
    /// `τ₁∂τ₁∂τ₂a − ∂τ₂a + a·s`
    pub a_eq: f64,
    /// Chosen continuous root at the corner interior node.
    pub corner_root: C64,
}

impl SecondOrderResiduals {
    pub fn max(&self) -> f64 {
        self.b_eq.max(self.a_eq)
    }
}

/// Evaluates the second-order pair on the interior nodes.
///
/// The τ₂-derivatives use central differences, the mixed partial a centered
/// four-point stencil. The square root is continued node to node starting
/// from a corner value anchored near `τ₁` (the limit of vanishing
/// derivative product); both global signs of the resulting branch field are
/// scored and the better one reported, since the field `(a, b)` determines
/// the branch only up to one overall sign.
pub fn second_order_residuals(g: &PrlgGrid) -> Result<SecondOrderResiduals, PrlgError> {
    let (n1, n2) = (g.n1, g.n2);
    let (m1, m2) = (n1 - 2, n2 - 2);
    let two_h = cr(2.0 * g.h);
    let four_h2 = cr(4.0 * g.h * g.h);

    // τ₂-derivatives of a and b and the continued root at interior nodes.
    let mut da = vec![cr(0.0); m1 * m2];
    let mut db = vec![cr(0.0); m1 * m2];
    let mut root = vec![cr(0.0); m1 * m2];
    for i in 1..n1 - 1 {
        for j in 1..n2 - 1 {
            let up2 = g.sample(i, j + 1);
            let dn2 = g.sample(i, j - 1);
            let k = (i - 1) * m2 + (j - 1);
            da[k] = (up2.a - dn2.a) / two_h;
            db[k] = (up2.b - dn2.b) / two_h;
        }
    }
    for i in 0..m1 {
        for j in 0..m2 {
            let k = i * m2 + j;
            let radicand = {
                let t1 = g.tau1(i + 1);
                t1 * t1 + 4.0 * da[k] * db[k]
            };
            let mut s = radicand.sqrt();
            if k == 0 {
                // Corner anchor: the branch that continues √(τ₁²) = τ₁.
                let t1 = g.tau1(1);
                if (s - t1).norm() > (s + t1).norm() {
                    s = -s;
                }
            } else {
                // Continue from the adjacent node already fixed: the left
                // neighbour within a row, the node below for a row start.
                let prev = if j > 0 { root[k - 1] } else { root[k - m2] };
                let (keep, flip) = ((s - prev).norm(), (s + prev).norm());
                if keep.min(flip) > prev.norm() {
                    return Err(PrlgError::BranchAmbiguity { i: i + 1, j: j + 1 });
                }
                if flip < keep {
                    s = -s;
                }
            }
            root[k] = s;
        }
    }

    // Score both global signs of the branch field in one sweep.
    let mut plus = (0.0_f64, 0.0_f64);
    let mut minus = (0.0_f64, 0.0_f64);
    for i in 1..n1 - 1 {
        let t1 = g.tau1(i);
        for j in 1..n2 - 1 {
            let k = (i - 1) * m2 + (j - 1);
            let s = g.sample(i, j);
            let mixed_b = (g.sample(i + 1, j + 1).b - g.sample(i + 1, j - 1).b
                - g.sample(i - 1, j + 1).b
                + g.sample(i - 1, j - 1).b)
                / four_h2;
            let mixed_a = (g.sample(i + 1, j + 1).a - g.sample(i + 1, j - 1).a
                - g.sample(i - 1, j + 1).a
                + g.sample(i - 1, j - 1).a)
                / four_h2;
            let lead_b = t1 * mixed_b - db[k];
            let lead_a = t1 * mixed_a - da[k];
            plus.0 = plus.0.max((lead_b + s.b * root[k]).norm());
            plus.1 = plus.1.max((lead_a + s.a * root[k]).norm());
            minus.0 = minus.0.max((lead_b - s.b * root[k]).norm());
            minus.1 = minus.1.max((lead_a - s.a * root[k]).norm());
        }
    }
    let (res, sign) = if plus.0.max(plus.1) <= minus.0.max(minus.1) {
        (plus, 1.0)
    } else {
        (minus, -1.0)
    };
    Ok(SecondOrderResiduals { b_eq: res.0, a_eq: res.1, corner_root: root[0] * sign })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lax::reduced_family;
    use crate::{c, cr};

    fn demo_params() -> ParameterSet {
        ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3))
    }

    fn demo_state() -> KnsState {
        KnsState::new(c(0.6, 0.1), c(1.4, -0.05), c(0.35, 0.0), c(0.41, 0.08), c(1.1, 0.2))
    }

    fn base_time() -> TimePoint {
        TimePoint::tau(cr(1.0), cr(0.8))
    }

    #[test]
    fn extraction_matches_the_printed_formulas() {
        // Three substitution checks pinning (c, d, e) and the constraint.
        let pr = demo_params();
        let tp = base_time();
        let cases = [
            (cr(0.5), cr(1.0), cr(0.0), cr(-0.5), cr(-0.5)),
            (cr(0.0), cr(1.0), cr(-0.5), cr(0.0), cr(-1.0)),
            (cr(1.0), cr(2.0), cr(0.5), cr(-2.0), cr(0.0)),
        ];
        for (p2, u, want_c, want_d, want_e) in cases {
            let st = KnsState::new(c(0.6, 0.1), c(1.4, -0.05), c(0.35, 0.0), p2, u);
            let s = extract(&tp, &st, &pr).unwrap();
            assert!((s.c - want_c).norm() < 1e-14);
            assert!((s.d - want_d).norm() < 1e-14);
            assert!((s.e - want_e).norm() < 1e-14);
            assert!(constraint_residual(&s) < 1e-14);
        }
    }

    #[test]
    fn constraint_is_an_algebraic_identity() {
        // c² + de = (P₂−1/2)² − P₂(P₂−1) − 1/4 cancels for any state.
        let pr = demo_params();
        let tp = base_time();
        for k in 0..20 {
            let x = 0.37 * k as f64 - 3.0;
            let st = KnsState::new(
                c(0.6 + x, 0.1),
                c(1.4, -0.05 * x),
                c(0.35, x),
                c(0.41 + 0.3 * x, 0.08 - 0.1 * x),
                c(1.1, 0.2 + 0.05 * x),
            );
            let s = extract(&tp, &st, &pr).unwrap();
            assert!(constraint_residual(&s) < 1e-12);
        }
    }

    #[test]
    fn off_diagonal_fields_match_the_deformation_residue() {
        // a and b are, up to the factor τ₁, the off-diagonal entries of the
        // residue matrix entering the τ₁-deformation equation.
        let pr = demo_params();
        let tp = TimePoint::tau(c(1.3, 0.2), c(0.8, -0.1));
        let st = demo_state();
        let s = extract(&tp, &st, &pr).unwrap();
        let fam = reduced_family(&tp, &st, &pr).unwrap();
        let tau1 = tp.to_tau().c1;
        assert!((s.b - fam.b1[(0, 1)] * tau1).norm() < 1e-13);
        assert!((s.a - fam.b1[(1, 0)] * tau1).norm() < 1e-13);
    }

    #[test]
    fn vanishing_gauge_scalar_is_rejected() {
        let pr = demo_params();
        let mut st = demo_state();
        st.u = cr(0.0);
        assert!(extract(&base_time(), &st, &pr).is_err());
    }

    #[test]
    fn constant_fields_have_exact_flow_residuals() {
        // With a = b = 0 and τ₁-independent fields, the three τ₁-equations
        // difference constants and their residuals vanish identically.
        let g = PrlgGrid::from_fn(&base_time(), 0.01, 5, 5, |_, _| PrlgSample {
            a: cr(0.0),
            b: cr(0.0),
            c: c(0.3, 0.1),
            d: c(-0.2, 0.4),
            e: c(0.1, -0.7),
        });
        let r = first_order_residuals(&g);
        assert_eq!(r.c_flow, 0.0);
        assert_eq!(r.d_flow, 0.0);
        assert_eq!(r.e_flow, 0.0);
        // The τ₂-equations are genuinely violated by such fields.
        assert!(r.b_drift > 0.1);
    }

    /// Closed-form solution family with `a = e = 0`: from the τ₂-equations
    /// `d = ∂τ₂b/τ₁`, the constraint forces `c = ±1/2`, and `c = 1/2` turns
    /// the d-equation into `τ₁∂τ₁b = (1 − τ₁/α)·b` up to the shared
    /// exponential, solved exactly by `b = τ₁·exp(ατ₂ − τ₁/α)`. This also
    /// realizes the degenerate second-order pair with root exactly `τ₁`.
    fn closed_form_sample(alpha: C64) -> impl Fn(C64, C64) -> PrlgSample {
        move |t1, t2| {
            let b = t1 * (alpha * t2 - t1 / alpha).exp();
            PrlgSample {
                a: cr(0.0),
                b,
                c: cr(0.5),
                d: alpha * b / t1,
                e: cr(0.0),
            }
        }
    }

    #[test]
    fn closed_form_family_satisfies_both_systems() {
        let alpha = c(0.7, 0.2);
        let mut at = Vec::new();
        for h in [0.02, 0.01] {
            let g = PrlgGrid::from_fn(&base_time(), h, 7, 7, closed_form_sample(alpha));
            assert!(g.max_constraint_residual() < 1e-15);
            let r1 = first_order_residuals(&g);
            let r2 = second_order_residuals(&g).unwrap();
            // The anchored branch continues √(τ₁²) = τ₁ = 2τ₁c.
            assert!((r2.corner_root - g.tau1(1)).norm() < 1e-12);
            at.push((r1, r2));
        }
        // Second-order convergence of every nonzero residual.
        for (coarse, fine) in [
            (at[0].0.d_flow, at[1].0.d_flow),
            (at[0].0.b_drift, at[1].0.b_drift),
            (at[0].1.b_eq, at[1].1.b_eq),
        ] {
            let order = (coarse / fine).log2();
            assert!(order > 1.7 && order < 2.3, "order {order:.2}");
        }
        // The a-sector is exactly zero for this family.
        assert!(at[1].0.a_drift < 1e-15);
        assert!(at[1].1.a_eq < 1e-15);
        assert!(at[1].0.c_flow < 1e-13);
        assert!(at[1].0.e_flow < 1e-15);
    }

    #[test]
    fn flow_samples_satisfy_the_first_order_system() {
        let pr = demo_params();
        let st = demo_state();
        let coarse =
            sample_flow_grid(&base_time(), &st, &pr, 2e-3, 8, 8, PrlgMutation::None).unwrap();
        let fine =
            sample_flow_grid(&base_time(), &st, &pr, 1e-3, 8, 8, PrlgMutation::None).unwrap();
        let rc = first_order_residuals(&coarse);
        let rf = first_order_residuals(&fine);
        assert!(rc.max() < 1e-4, "coarse residual {:.3e}", rc.max());
        for (name, c_val, f_val) in [
            ("c", rc.c_flow, rf.c_flow),
            ("d", rc.d_flow, rf.d_flow),
            ("e", rc.e_flow, rf.e_flow),
            ("b", rc.b_drift, rf.b_drift),
            ("a", rc.a_drift, rf.a_drift),
        ] {
            if c_val < 1e-12 {
                continue; // already at the integrator floor
            }
            let order = (c_val / f_val).log2();
            assert!(order > 1.7 && order < 2.4, "{name}: order {order:.2}");
        }
    }

    #[test]
    fn flow_samples_satisfy_the_second_order_pair() {
        let pr = demo_params();
        let st = demo_state();
        let mut res = Vec::new();
        for h in [2e-3, 1e-3] {
            let g = sample_flow_grid(&base_time(), &st, &pr, h, 8, 8, PrlgMutation::None).unwrap();
            assert!(g.max_constraint_residual() < 1e-10);
            res.push(second_order_residuals(&g).unwrap());
        }
        assert!(res[0].max() < 1e-4, "coarse residual {:.3e}", res[0].max());
        for (c_val, f_val) in [(res[0].b_eq, res[1].b_eq), (res[0].a_eq, res[1].a_eq)] {
            let order = (c_val / f_val).log2();
            assert!(order > 1.7 && order < 2.4, "order {order:.2}");
        }
        // On solutions the root equals 2τ₁c; check at the corner node.
        let g = sample_flow_grid(&base_time(), &st, &pr, 1e-3, 8, 8, PrlgMutation::None).unwrap();
        let want = 2.0 * g.tau1(1) * g.sample(1, 1).c;
        let got = second_order_residuals(&g).unwrap().corner_root;
        // The root is built from finite differences, so it carries its own
        // O(h²) error relative to the analytic value.
        assert!(
            (got - want).norm().min((got + want).norm()) < 1e-5,
            "corner root {got} vs ±{want}"
        );
    }

    #[test]
    fn sign_flip_mutation_plateaus() {
        let pr = demo_params();
        let st = demo_state();
        let mut vals = Vec::new();
        for h in [2e-3, 1e-3] {
            let g = sample_flow_grid(&base_time(), &st, &pr, h, 8, 8, PrlgMutation::FlipD).unwrap();
            vals.push(first_order_residuals(&g).d_flow);
        }
        assert!(vals[0] > 1e-3 && vals[1] > 1e-3, "{vals:?}");
        // Halving the spacing leaves the defect in place: no decay order.
        assert!(vals[1] > 0.5 * vals[0], "{vals:?}");
    }

    #[test]
    fn branch_collision_is_detected() {
        // Synthetic fields whose finite-difference radicand rotates by 0.9π
        // per node along τ₂: the root advances 81° per step, so neither
        // sign continues the previous value and the march must give up.
        let h = 0.01;
        let base = base_time();
        let omega = 0.9 * std::f64::consts::PI / h;
        let c1 = cr(h / (4.0 * (0.9 * std::f64::consts::PI).sin()));
        let g = PrlgGrid::from_fn(&base, h, 5, 5, |t1, t2| PrlgSample {
            a: -t1 * t1 * t2 / 4.0 + c1 * (c(0.0, omega) * t2).exp(),
            b: t2,
            c: cr(0.0),
            d: cr(0.0),
            e: cr(0.0),
        });
        match second_order_residuals(&g) {
            Err(PrlgError::BranchAmbiguity { .. }) => {}
            other => panic!("expected branch ambiguity, got {other:?}"),
        }
    }
}
