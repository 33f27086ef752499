//! MAP estimate of a bimodal maximum-entropy density.

use shs_moments::filter::{map_estimate, MapConfig};
use shs_moments::maxent::MaxEntSolver;
use shs_moments::model::BoxDomain;
use shs_moments::polyalg::MomentVector;

fn main() -> shs_moments::Result<()> {
    let domain = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0])?;
    let solver = MaxEntSolver::new(&domain, 4, &[64, 64])?;
    // Heavier mode near (0.7, 0.5), lighter one near (−0.7, −0.5).
    let a = MomentVector::gaussian(&[0.7, 0.5], &[0.3, 0.3], 4);
    let b = MomentVector::gaussian(&[-0.7, -0.5], &[0.3, 0.3], 4);
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| 0.65 * x + 0.35 * y)
        .collect();
    let (med, _) = solver.fit(&MomentVector::new(2, 4, values, 0.0)?, None)?;
    let est = map_estimate(&med, &domain, &MapConfig::default())?;
    println!(
        "MAP ({:.4}, {:.4}), exponent {:.4}, flat {}",
        est.x[0], est.x[1], est.value, est.degenerate_flat
    );
    Ok(())
}
