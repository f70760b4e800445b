//! Off-policy evaluation: every estimator is unbiased for the target return
//! (checked by exact enumeration), but their spreads differ.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgope::generate::{random_dag, DagParams};
use pgope::mdp::{enumerate_trajectories, exact_return, value_tables};
use pgope::ope::OpeEstimator;
use pgope::qmodel::SnapshotKind;
use pgope::{QModel, Result, SoftmaxPolicy};

fn main() -> Result<()> {
    let mdp = Arc::new(random_dag(&DagParams::small_stochastic(), 7)?);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let behavior = SoftmaxPolicy::random(mdp.num_states(), mdp.num_actions(), 0.5, &mut rng);
    let target = SoftmaxPolicy::random(mdp.num_states(), mdp.num_actions(), 0.5, &mut rng);
    let truth = exact_return(&mdp, &target)?;
    let v = value_tables(&mdp, &target)?.v_table().to_vec();

    let estimators = [
        ("traj-is", OpeEstimator::TrajIs),
        ("step-is", OpeEstimator::StepIs),
        ("baseline b=V", OpeEstimator::Baseline(v)),
        ("dr zero", OpeEstimator::DrExpanded(QModel::zero())),
        (
            "dr noisy constant",
            OpeEstimator::DrExpanded(QModel::noisy_snapshot(
                SnapshotKind::Constant,
                mdp.clone(),
                &target,
                0.3,
                1,
            )?),
        ),
        ("dr exact", OpeEstimator::DrRecursive(QModel::exact_dp(mdp.clone()))),
    ];
    let trajectories = enumerate_trajectories(&mdp, &behavior)?;
    println!("target return J = {truth:.10}");
    println!("{:<18} {:>14} {:>12}", "estimator", "mean - J", "variance");
    for (name, est) in &estimators {
        let mut mean = 0.0;
        let mut second = 0.0;
        for (t, p) in &trajectories {
            let x = est.evaluate(t, &behavior, &target, mdp.gamma())?;
            mean += p * x;
            second += p * x * x;
        }
        println!("{name:<18} {:>14.3e} {:>12.6}", mean - truth, second - mean * mean);
    }
    Ok(())
}
