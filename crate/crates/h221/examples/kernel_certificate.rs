//! The two-point kernel and its tower of scalar evolution equations.
//! Build the normalized solution of the reduced linear system, transport
//! it between two spectral anchors, and certify that the resulting kernel
//! entry — together with its action-gauged, ratio-mapped, and fully
//! normalized descendants — satisfies the expected pair of evolution
//! equations in each picture, at second order in the stencil step.

use h221::hamiltonians::{KnsState, TimePoint};
use h221::params::ParameterSet;
use h221::psi::{self, PsiMutation, StencilSpec, Transport};
use h221::{c, cr, M2};

fn main() {
    let pr = ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3));
    let st = KnsState::new(c(0.6, 0.1), c(1.4, -0.05), cr(0.35), c(0.41, 0.08), c(1.1, 0.2));
    let time = TimePoint::tau(cr(1.0), cr(0.8));
    let how = Transport::Adaptive(1e-10);

    // Normalization: the solution slice is the identity at the base anchor,
    // so the kernel at coincident anchors is the identity matrix.
    let point = psi::base_point(&time, &st, cr(1.5), cr(3.0), &pr, how).expect("kernel point");
    let m = psi::kernel(&point).expect("kernel");
    println!("kernel at anchors (1.5, 3.0):");
    println!("  [{:.6}, {:.6}]", m[(0, 0)], m[(0, 1)]);
    println!("  [{:.6}, {:.6}]", m[(1, 0)], m[(1, 1)]);

    // Exchanging the two anchor roles inverts the kernel exactly.
    let swapped = psi::kernel(&psi::swap_roles(&point)).expect("kernel");
    let id_dev = h221::lax::max_abs(&(m * swapped - M2::identity()));
    println!("  swapped-anchor kernel inverts it to {id_dev:.3e}");
    assert!(id_dev < 1e-10);

    // Transporting around a closed loop in (spectral x time) returns home.
    let loop_dev = psi::loop_deviation(&time, &st, &pr, cr(1.2), cr(2.95), cr(0.05), 1e-10)
        .expect("loop");
    println!("  closed-loop transport deviation = {loop_dev:.3e}");
    assert!(loop_dev < 1e-8);

    // The eight evolution-equation residuals (two per picture) decay
    // quadratically in the stencil step.
    println!("\nresidual ladders (relative residual per stencil step):");
    println!(
        "{:>8} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11}",
        "h", "kern-1", "kern-2", "gauge-1", "gauge-2", "ratio-1", "ratio-2", "norm-1", "norm-2"
    );
    let mut prev: Option<f64> = None;
    for h in [8e-3, 4e-3, 2e-3] {
        let r = psi::node_residuals(&point, &pr, StencilSpec::uniform(h), (0, 0), PsiMutation::None)
            .expect("stencil");
        println!(
            "{h:>8.1e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
            r.kernel[0], r.kernel[1], r.gauged[0], r.gauged[1], r.ratio[0], r.ratio[1],
            r.normalized[0], r.normalized[1]
        );
        let worst = r.max();
        if let Some(p) = prev {
            assert!((p / worst).log2() > 1.5, "expected quadratic decay of the worst residual");
        }
        prev = Some(worst);
    }

    // Negative control: perturbing the coupling constant by 0.1 leaves the
    // raw kernel equations intact but the normalized pair plateaus.
    let broken = psi::node_residuals(&point, &pr, StencilSpec::uniform(2e-3), (0, 0), PsiMutation::KappaPerturb)
        .expect("stencil");
    println!("\ncoupling constant perturbed by 0.1:");
    println!("  kernel pair residual     = {:.3e} (unchanged)", broken.kernel[0].max(broken.kernel[1]));
    println!("  normalized pair residual = {:.3e} (plateau)", broken.normalized[0].max(broken.normalized[1]));
    assert!(broken.normalized[0].max(broken.normalized[1]) > 1e-3);

    println!("\nthe kernel satisfies its full tower of evolution equations");
}
