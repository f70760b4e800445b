//! On-policy gradient estimators on one sampled trajectory, and their exact
//! expectations against the true gradient.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgope::generate::{random_dag, DagParams};
use pgope::linalg::max_abs_diff;
use pgope::mdp::{enumerate_trajectories, exact_policy_gradient, sample_trajectory, value_tables};
use pgope::pg::{drpg_decomposition, PgEstimator};
use pgope::qmodel::SnapshotKind;
use pgope::{Gradient, QModel, Result, SoftmaxPolicy};

fn main() -> Result<()> {
    let mdp = Arc::new(random_dag(&DagParams::small_stochastic(), 7)?);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = SoftmaxPolicy::random(mdp.num_states(), mdp.num_actions(), 1.0, &mut rng);
    let exact = exact_policy_gradient(&mdp, &policy)?;
    let v = value_tables(&mdp, &policy)?.v_table().to_vec();
    let frozen = QModel::noisy_snapshot(SnapshotKind::FrozenLinear, mdp.clone(), &policy, 0.3, 2)?;

    let estimators = [
        PgEstimator::Reinforce,
        PgEstimator::Vanilla,
        PgEstimator::Baseline(v),
        PgEstimator::TrajCv(QModel::exact_dp(mdp.clone())),
        PgEstimator::Drpg(frozen.clone()),
        PgEstimator::DrpgRecursive(QModel::exact_dp(mdp.clone())),
    ];
    let traj = sample_trajectory(&mdp, &policy, &mut rng)?;
    let trajectories = enumerate_trajectories(&mdp, &policy)?;
    println!("{:<16} {:<14} {:>14} {:>14}", "estimator", "model", "|g(τ)|", "max bias");
    for est in &estimators {
        let bound = est.bind(&policy, mdp.gamma())?;
        let mut mean = Gradient::zeros(policy.dim());
        for (t, p) in &trajectories {
            mean.axpy(*p, &bound.estimate(t), 1.0);
        }
        println!(
            "{:<16} {:<14} {:>14.6} {:>14.3e}",
            est.name(),
            est.model_name(),
            bound.estimate(&traj).norm(),
            max_abs_diff(&mean, &exact)
        );
    }

    let side = frozen.evaluate(&policy)?;
    let terms = drpg_decomposition(&traj, &policy, mdp.gamma(), &side);
    for (t, (p2, p3)) in terms.p2.iter().zip(&terms.p3).enumerate() {
        println!("step {t}: |p2| = {:.4}, |p3| = {:.4}", p2.norm(), p3.norm());
    }
    Ok(())
}
