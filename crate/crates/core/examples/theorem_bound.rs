//! Evaluates the non-convex convergence bound and its momentum trade-off.

use halos::analysis::{beta_g_tradeoff, theorem_bound_variant, BoundInputs, BoundVariant};

fn main() -> halos::Result<()> {
    let base = BoundInputs {
        f0_minus_fstar: 1.0,
        eta_0: 0.01,
        eta_m: 0.01,
        t: 10_000,
        beta_g: 0.5,
        beta_l: 0.9,
        l: 1.0,
        g: 1.0,
        sigma2: 1.0,
        d_g2: 0.1,
        d_l2: 0.1,
    };
    println!(
        "{:>6} {:>14} {:>14} {:>12}",
        "beta_g", "bound", "(1-b^2) form", "tradeoff"
    );
    for beta_g in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let b = BoundInputs { beta_g, ..base };
        println!(
            "{beta_g:>6} {:>14.4} {:>14.4} {:>12.2}",
            theorem_bound_variant(&b, BoundVariant::Stated)?,
            theorem_bound_variant(&b, BoundVariant::SquaredGlobal)?,
            beta_g_tradeoff(beta_g)?
        );
    }
    for t in [1_000u64, 10_000, 100_000] {
        let b = BoundInputs {
            t,
            sigma2: 0.0,
            d_g2: 0.0,
            d_l2: 0.0,
            ..base
        };
        println!(
            "T = {t:>6}: noiseless bound {:.6}",
            theorem_bound_variant(&b, BoundVariant::Stated)?
        );
    }
    Ok(())
}
