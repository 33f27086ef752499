//! Order-4 moment propagation of the bouncing ball through its first impact.

use shs_moments::model::{bouncing_ball_model, BouncingBallParams, InitialGaussian};
use shs_moments::propagate::{propagate, PropagationConfig};

fn main() -> shs_moments::Result<()> {
    let model = bouncing_ball_model(&BouncingBallParams::default())?;
    let init = InitialGaussian {
        mean: vec![1.5, 0.0],
        std: vec![0.2, 0.5],
    };
    let cfg = PropagationConfig {
        t_end: 1.0,
        output_stride: 100,
        ..Default::default()
    };
    let traj = propagate(&model, &init.moments(cfg.order), &cfg)?;
    println!(
        "{:>5} {:>9} {:>9} {:>9} {:>9}",
        "t", "E[x1]", "E[x2]", "Var[x2]", "flux_01"
    );
    for ((t, m), f) in traj.times.iter().zip(&traj.moments).zip(&traj.flux_log) {
        let v = m.values();
        println!(
            "{t:5.2} {:9.4} {:9.4} {:9.4} {:9.4}",
            v[1],
            v[2],
            v[5] - v[2] * v[2],
            f.flux[2]
        );
    }
    println!("max |m00 - 1| = {:.1e}", traj.max_mass_defect());
    Ok(())
}
