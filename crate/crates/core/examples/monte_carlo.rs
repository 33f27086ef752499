//! Monte Carlo reference ensemble and the normalized rollout error of a
//! propagated trajectory against it.

use shs_moments::mcref::{ensemble_moments, trajectory_rollout_error, McConfig};
use shs_moments::model::{bouncing_ball_model, BouncingBallParams, InitialGaussian};
use shs_moments::propagate::{propagate, PropagationConfig};

fn main() -> shs_moments::Result<()> {
    let model = bouncing_ball_model(&BouncingBallParams::default())?;
    let initial = InitialGaussian {
        mean: vec![1.5, 0.0],
        std: vec![0.2, 0.5],
    };
    let t_end = 1.0;
    let mc = McConfig {
        trajectories: 20_000,
        dt: 1e-4,
        seed: 3,
        initial: initial.clone(),
        t_start: 0.0,
        t_end,
        output_stride: 100,
    };
    let ens = ensemble_moments(&model, &mc, 4)?;
    println!(
        "{} paths, max excess mass {:.1e}",
        ens.trajectories,
        ens.max_excess_mass()
    );

    let cfg = PropagationConfig {
        t_end,
        output_stride: 10,
        ..Default::default()
    };
    let traj = propagate(&model, &initial.moments(4), &cfg)?;
    let errs = trajectory_rollout_error(&traj, &ens)?;
    for (alpha, e) in &errs.entries {
        match e {
            Some(e) => println!("m_{}: {e:.4}", alpha.label()),
            None => println!("m_{}: flagged", alpha.label()),
        }
    }
    Ok(())
}
