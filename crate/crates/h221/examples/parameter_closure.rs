//! Parameter bookkeeping: the five free scalars (κ₀, κ₁, γ₁, γ₂, θ¹)
//! determine the four exponents and the coupling constant κ through
//! algebraic links, and the exponent sum closes to zero. Build sets from
//! both directions and confirm the links hold to machine precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use h221::params::ParameterSet;
use h221::{c, cr};

fn main() {
    // From the free scalars.
    let pr = ParameterSet::new(cr(2.6), cr(2.4), cr(1.0), cr(1.0), cr(0.3));
    println!("from free scalars:");
    println!("  theta0      = {:.6}", pr.theta0);
    println!("  theta1_inf  = {:.6}", pr.theta1_inf);
    println!("  theta2_inf  = {:.6}", pr.theta2_inf);
    println!("  kappa       = {:.6}", pr.kappa);
    let res = pr.validate();
    println!("  worst link residual = {:.3e}", res.max());
    assert!(pr.satisfies_links());

    // The exponent-only constructor is the unconstrained lane: it accepts
    // arbitrary exponent quadruples for flow and linear-system experiments
    // and deliberately leaves the chart-link fields unmaterialized, so such
    // a set never claims to satisfy the links.
    let free = ParameterSet::from_exponents(c(0.3, 0.1), cr(-0.7), cr(0.2), cr(0.9));
    println!("\narbitrary exponent set:");
    println!("  satisfies links: {}", free.satisfies_links());
    assert!(!free.satisfies_links());

    // The links close over a random batch of complex parameter choices.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| c(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
        let set = ParameterSet::new(
            draw(&mut rng),
            draw(&mut rng),
            draw(&mut rng),
            draw(&mut rng),
            draw(&mut rng),
        );
        worst = worst.max(set.validate().max());
    }
    println!("\n100 random complex parameter sets:");
    println!("  worst link residual = {worst:.3e}");
    assert!(worst < 1e-12);
    println!("\nall parameter links hold");
}
