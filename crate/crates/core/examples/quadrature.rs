//! Gauss–Legendre tensor rules: exactness on a polynomial and convergence on
//! a smooth non-polynomial integrand.

use shs_moments::model::BoxDomain;
use shs_moments::quad::{integrate, tensor_rule};

fn main() -> shs_moments::Result<()> {
    let domain = BoxDomain::new(vec![0.0, -1.0], vec![2.0, 3.0])?;

    // ∫∫ x²y³ over [0,2]×[−1,3] = (8/3)·(80/4) = 160/3; degree 3 per axis
    // needs two points per axis.
    let rule = tensor_rule(&domain, &[2, 2])?;
    let v = integrate(|x| x[0] * x[0] * x[1].powi(3), &rule)?;
    println!(
        "x^2 y^3 with 2x2 nodes: {v:.15} (exact {:.15})",
        160.0 / 3.0
    );

    let exact = (1.0 - (-2.0f64).exp()) * ((3.0f64).sin() + (1.0f64).sin());
    for n in [2, 4, 8, 16] {
        let rule = tensor_rule(&domain, &[n, n])?;
        let v = integrate(|x| (-x[0]).exp() * x[1].cos(), &rule)?;
        println!(
            "exp(-x) cos(y), {n:>2} nodes/axis: error {:.2e}",
            (v - exact).abs()
        );
    }
    Ok(())
}
