//! Bouncing-ball filtering with bimodal measurement noise, using the
//! built-in scenario defaults over a shortened horizon.

use shs_moments::cli::filter_scenario;
use shs_moments::config::ScenarioFile;

fn main() -> shs_moments::Result<()> {
    let mut file = ScenarioFile::default();
    file.propagation.t_end = 1.5;
    let scenario = file.validate(None)?.with_seed(4);
    let (run, _) = filter_scenario(&scenario)?;
    for u in &run.updates {
        let (pr, po) = (u.prior.values(), u.posterior.values());
        println!(
            "t={:.1} y={:+.3}  prior x1 {:.3} sd {:.3}  posterior x1 {:.3} sd {:.3}",
            u.t,
            u.y,
            pr[1],
            (pr[3] - pr[1] * pr[1]).sqrt(),
            po[1],
            (po[3] - po[1] * po[1]).sqrt()
        );
    }
    if let Some(r) = run.rmse() {
        println!("MAP rmse: position {:.4} m, velocity {:.4} m/s", r[0], r[1]);
    }
    Ok(())
}
