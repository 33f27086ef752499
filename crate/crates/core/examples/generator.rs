//! Symbolic generator and reset action for the bouncing ball.

use shs_moments::model::{
    bouncing_ball_model, generator_apply, reset_jump_polynomial, BouncingBallParams,
};
use shs_moments::polyalg::{MultiIndex, Polynomial};

fn main() -> shs_moments::Result<()> {
    let model = bouncing_ball_model(&BouncingBallParams::default())?;
    let vars = ["x1", "x2"];
    for (a, b) in [(1, 0), (0, 1), (0, 2), (1, 1), (2, 3)] {
        let f = Polynomial::monomial(MultiIndex::new(vec![a, b]), 1.0);
        let af = generator_apply(&model, &f)?;
        println!(
            "A[{}] = {}",
            f.to_string_with_vars(&vars),
            af.to_string_with_vars(&vars)
        );
    }
    // Jumps are expressed on the guard facet, whose only coordinate is x2.
    for k in 1..=4 {
        let f = Polynomial::monomial(MultiIndex::new(vec![0, k]), 1.0);
        let j = reset_jump_polynomial(&model, &f)?;
        println!(
            "f(reset(x)) - f(x) for x2^{k}: {}",
            j.to_string_with_vars(&["x2"])
        );
    }
    Ok(())
}
