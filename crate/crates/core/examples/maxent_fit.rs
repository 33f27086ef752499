//! Fits a maximum-entropy density to a skewed moment vector and checks that
//! its moments reproduce the input.

use shs_moments::maxent::MaxEntSolver;
use shs_moments::model::BoxDomain;
use shs_moments::polyalg::MomentVector;

fn main() -> shs_moments::Result<()> {
    let domain = BoxDomain::new(vec![-3.0, -3.0], vec![3.0, 3.0])?;
    let solver = MaxEntSolver::new(&domain, 4, &[64, 64])?;

    // Equal-weight mixture of two Gaussians, the second shifted in x2.
    let a = MomentVector::gaussian(&[0.0, -0.6], &[0.5, 0.4], 4);
    let b = MomentVector::gaussian(&[0.2, 0.8], &[0.4, 0.5], 4);
    let values: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let target = MomentVector::new(2, 4, values, 0.0)?;

    let (med, report) = solver.fit(&target, None)?;
    println!(
        "converged {} in {} iterations, |grad| {:.2e}, cond {:.2e}",
        report.converged, report.iterations, report.grad_norm, report.condition
    );
    println!(
        "exponent (state coordinates): {}",
        med.exponent_state().to_string_with_vars(&["x1", "x2"])
    );

    let back = solver.moments(&med)?;
    let worst = back
        .values()
        .iter()
        .zip(target.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    println!("max moment mismatch {worst:.2e}");
    Ok(())
}
