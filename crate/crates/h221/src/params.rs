//! Parameter constants shared by all modules.
//!
//! Nine complex constants appear across the three Hamiltonian charts and the
//! linear problem: `kappa0, kappa1, gamma1, gamma2, kappa` in the rational and
//! polynomial charts, and the four exponents `theta0, theta1, theta1_inf,
//! theta2_inf` in the canonical chart and the connection matrices. They are
//! not independent: the exponents must sum to zero (trace condition at the
//! singular points), and the scalar-PDE construction links the two groups by
//!
//! ```text
//! theta0               = (kappa0 - 2) gamma1
//! theta2_inf - theta1_inf = (kappa1 - 2) gamma2
//! kappa = (kappa0-2)^2/4 + (kappa1-2)^2/4 + kappa0 kappa1/2 - theta1^2/4 - 2
//! ```
//!
//! [`ParameterSet::new`] takes the five free constants and closes the rest;
//! [`ParameterSet::from_exponents`] admits arbitrary exponent sets for
//! flow/Lax-only experiments (the `psi` module rejects those).

use crate::C64;
use serde::{Deserialize, Serialize};

/// Relative tolerance for the internal linking constraints.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// The full set of constants, with all derived fields materialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub kappa0: C64,
    pub kappa1: C64,
    pub gamma1: C64,
    pub gamma2: C64,
    /// Exponent at the finite regular point `s = 1`.
    pub theta1: C64,
    /// Exponent at the finite regular point `s = 0`.
    pub theta0: C64,
    /// First exponent of the rank-(1/2) irregular point.
    pub theta1_inf: C64,
    /// Second exponent of the rank-(1/2) irregular point.
    pub theta2_inf: C64,
    /// Constant of the zeroth-order terms in the rational/polynomial charts.
    pub kappa: C64,
}

/// Residuals of the four internal constraints, in the order: trace sum,
/// `theta0` link, `theta2_inf - theta1_inf` link, `kappa` formula.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub fuchs_sum: f64,
    pub theta0_link: f64,
    pub theta_inf_link: f64,
    pub kappa_formula: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.fuchs_sum
            .max(self.theta0_link)
            .max(self.theta_inf_link)
            .max(self.kappa_formula)
    }

    pub fn all_within(&self, tol: f64) -> bool {
        self.max() < tol
    }
}

impl ParameterSet {
    /// Closes the parameter set from the five free constants.
    ///
    /// `theta0` comes straight from the first link; the pair
    /// `(theta1_inf, theta2_inf)` is the unique solution of the 2×2 linear
    /// system formed by their prescribed difference and the trace condition.
    pub fn new(kappa0: C64, kappa1: C64, gamma1: C64, gamma2: C64, theta1: C64) -> Self {
        let theta0 = (kappa0 - 2.0) * gamma1;
        let diff = (kappa1 - 2.0) * gamma2; // theta2_inf - theta1_inf
        let sum = -theta0 - theta1; // theta1_inf + theta2_inf
        let theta2_inf = (sum + diff) * 0.5;
        let theta1_inf = (sum - diff) * 0.5;
        let kappa = (kappa0 - 2.0) * (kappa0 - 2.0) * 0.25
            + (kappa1 - 2.0) * (kappa1 - 2.0) * 0.25
            + kappa0 * kappa1 * 0.5
            - theta1 * theta1 * 0.25
            - 2.0;
        Self {
            kappa0,
            kappa1,
            gamma1,
            gamma2,
            theta1,
            theta0,
            theta1_inf,
            theta2_inf,
            kappa,
        }
    }

    /// Builds a set from the four exponents alone, for experiments that only
    /// exercise the canonical chart and the linear problem. The rational and
    /// polynomial constants are filled with placeholders that do NOT satisfy
    /// the linking constraints; `validate` will report that, and the scalar
    /// PDE certificates refuse such sets.
    pub fn from_exponents(theta0: C64, theta1: C64, theta1_inf: C64, theta2_inf: C64) -> Self {
        Self {
            kappa0: C64::new(f64::NAN, 0.0),
            kappa1: C64::new(f64::NAN, 0.0),
            gamma1: C64::new(f64::NAN, 0.0),
            gamma2: C64::new(f64::NAN, 0.0),
            theta1,
            theta0,
            theta1_inf,
            theta2_inf,
            kappa: C64::new(f64::NAN, 0.0),
        }
    }

    /// Residuals of the trace condition and the three linking constraints,
    /// each normalized by the magnitude of the terms entering it.
    pub fn validate(&self) -> ConstraintResiduals {
        let scale = |terms: &[C64]| {
            1.0 + terms
                .iter()
                .map(|z| z.norm())
                .fold(0.0_f64, f64::max)
        };

        let fuchs = self.theta0 + self.theta1 + self.theta1_inf + self.theta2_inf;
        let fuchs_terms = [self.theta0, self.theta1, self.theta1_inf, self.theta2_inf];

        let t0_link = self.theta0 - (self.kappa0 - 2.0) * self.gamma1;
        let inf_link = (self.theta2_inf - self.theta1_inf) - (self.kappa1 - 2.0) * self.gamma2;
        let kappa_rhs = (self.kappa0 - 2.0) * (self.kappa0 - 2.0) * 0.25
            + (self.kappa1 - 2.0) * (self.kappa1 - 2.0) * 0.25
            + self.kappa0 * self.kappa1 * 0.5
            - self.theta1 * self.theta1 * 0.25
            - 2.0;
        let kappa_link = self.kappa - kappa_rhs;

        ConstraintResiduals {
            fuchs_sum: fuchs.norm() / scale(&fuchs_terms),
            theta0_link: t0_link.norm() / scale(&[self.theta0]),
            theta_inf_link: inf_link.norm() / scale(&[self.theta1_inf, self.theta2_inf]),
            kappa_formula: kappa_link.norm() / scale(&[self.kappa, kappa_rhs]),
        }
    }

    /// True when the rational/polynomial constants are present and all
    /// linking constraints hold; required by the scalar-PDE certificates.
    pub fn satisfies_links(&self) -> bool {
        self.kappa0.re.is_finite() && self.validate().all_within(CONSTRAINT_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr;

    #[test]
    fn trivial_set_closes_to_zero_exponents() {
        let p = ParameterSet::new(cr(2.0), cr(2.0), cr(1.0), cr(1.0), cr(0.0));
        assert!(p.theta0.norm() < 1e-15);
        assert!(p.theta1_inf.norm() < 1e-15);
        assert!(p.theta2_inf.norm() < 1e-15);
        assert!(p.kappa.norm() < 1e-15); // 0 + 0 + 2 - 0 - 2
    }

    #[test]
    fn hand_solved_set_matches_oracle() {
        // Hand-solving the linear relations for (4, 2, 1, 0, 0):
        //   theta0 = (4-2)*1 = 2
        //   theta2_inf - theta1_inf = 0, theta1_inf + theta2_inf = -2
        //   kappa = 4/4 + 0/4 + 8/2 - 0 - 2 = 3
        let p = ParameterSet::new(cr(4.0), cr(2.0), cr(1.0), cr(0.0), cr(0.0));
        assert!((p.theta0 - 2.0).norm() < 1e-15);
        assert!((p.theta1_inf + 1.0).norm() < 1e-15);
        assert!((p.theta2_inf + 1.0).norm() < 1e-15);
        assert!((p.kappa - 3.0).norm() < 1e-15);
    }

    #[test]
    fn constructed_sets_validate() {
        let cases = [
            (2.6, 2.4, 1.0, 1.0, 0.3),
            (4.0, 2.0, 1.0, 0.0, 0.0),
            (1.3, -0.7, 0.8, 1.3, -0.45),
        ];
        for (k0, k1, g1, g2, t1) in cases {
            let p = ParameterSet::new(cr(k0), cr(k1), cr(g1), cr(g2), cr(t1));
            let r = p.validate();
            assert!(r.all_within(CONSTRAINT_TOL), "residuals {r:?}");
            assert!(p.satisfies_links());
        }
    }

    #[test]
    fn complex_inputs_validate() {
        let p = ParameterSet::new(
            C64::new(2.2, 0.4),
            C64::new(1.7, -0.3),
            C64::new(0.9, 0.1),
            C64::new(1.1, -0.2),
            C64::new(0.25, 0.05),
        );
        assert!(p.validate().all_within(CONSTRAINT_TOL));
    }

    #[test]
    fn perturbed_theta0_shows_in_fuchs_residual() {
        let mut p = ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3));
        p.theta0 += 1e-3;
        let r = p.validate();
        assert!(r.fuchs_sum > 1e-4 && r.fuchs_sum < 1e-2, "{}", r.fuchs_sum);
        assert!(!p.satisfies_links());
    }

    #[test]
    fn perturbed_kappa_shows_as_its_own_residual() {
        let mut p = ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3));
        let delta = 3e-4;
        p.kappa += delta;
        let r = p.validate();
        let expected = delta / (1.0 + p.kappa.norm());
        assert!((r.kappa_formula - expected).abs() < 1e-12);
        assert!(r.fuchs_sum < CONSTRAINT_TOL);
    }

    #[test]
    fn exponent_only_sets_are_flagged() {
        let p = ParameterSet::from_exponents(cr(0.1), cr(0.2), cr(-0.5), cr(0.2));
        assert!(p.validate().fuchs_sum < CONSTRAINT_TOL);
        assert!(!p.satisfies_links());
    }
}
