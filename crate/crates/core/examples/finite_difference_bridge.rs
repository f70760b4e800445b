//! Differentiates each OPE estimator numerically on every trajectory and
//! compares against its PG counterpart.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgope::finite_diff::{verify_correspondence, CorrespondencePair, DEFAULT_EPS};
use pgope::generate::{random_dag, DagParams};
use pgope::{Result, SoftmaxPolicy};

fn main() -> Result<()> {
    let mdp = Arc::new(random_dag(&DagParams::small_stochastic(), 7)?);
    let policy = SoftmaxPolicy::random(
        mdp.num_states(),
        mdp.num_actions(),
        1.0,
        &mut ChaCha8Rng::seed_from_u64(11),
    );
    println!("{:<22} {:>13} {:>14}", "pair", "trajectories", "max deviation");
    for pair in CorrespondencePair::ALL {
        let side = pair.default_side(&mdp, &policy, 0)?;
        let report = verify_correspondence(pair, &mdp, &policy, &side, DEFAULT_EPS)?;
        println!(
            "{:<22} {:>13} {:>14.3e}",
            pair.name(),
            report.per_trajectory.len(),
            report.max_deviation
        );
    }

    // Central differences: halving eps divides the truncation error by four.
    let side = CorrespondencePair::StepIsVanilla.default_side(&mdp, &policy, 0)?;
    for eps in [4e-2, 2e-2, 1e-2, 5e-3] {
        let r = verify_correspondence(CorrespondencePair::StepIsVanilla, &mdp, &policy, &side, eps)?;
        println!("eps {eps:<6} step-is:vanilla deviation {:.3e}", r.max_deviation);
    }
    Ok(())
}
