//! Covariance of the doubly robust gradient three ways: enumeration,
//! closed form (per-term), and Monte Carlo; then a variance-reduction table.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgope::generate::{random_dag, DagParams};
use pgope::pg::{drpg, PgEstimator};
use pgope::qmodel::SnapshotKind;
use pgope::variance::{brute_force_moments, mc_covariance, closed_form_terms, variance_table};
use pgope::{QModel, Result, SoftmaxPolicy};

fn main() -> Result<()> {
    let mdp = Arc::new(random_dag(&DagParams::small_stochastic(), 7)?);
    let policy = SoftmaxPolicy::random(
        mdp.num_states(),
        mdp.num_actions(),
        1.0,
        &mut ChaCha8Rng::seed_from_u64(11),
    );
    let model = QModel::noisy_snapshot(SnapshotKind::Constant, mdp.clone(), &policy, 0.3, 1)?;
    let side = model.evaluate(&policy)?;
    let est = |t: &pgope::Trajectory| drpg(t, &policy, mdp.gamma(), &side);

    let exact = brute_force_moments(&mdp, &policy, est)?;
    let terms = closed_form_terms(&mdp, &policy, &model)?;
    println!("brute-force trace   {:.12}", exact.covariance.trace());
    println!(
        "closed-form trace   {:.12} (reward {:.6}, action {:.6}, transition {:.6})",
        terms.total().trace(),
        terms.reward.trace(),
        terms.action.trace(),
        terms.transition.trace()
    );
    println!(
        "relative Frobenius error {:.3e}",
        terms.total().relative_frobenius_error(&exact.covariance, 1e-300)
    );
    for n in [1_000, 10_000, 100_000] {
        let mc = mc_covariance(&mdp, &policy, est, n, 42)?;
        let z = (mc.covariance.trace() - exact.covariance.trace()) / exact.trace_standard_error(n);
        println!("monte carlo n={n:<7} trace {:.6} (z = {z:+.2}), mse {:.6}", mc.covariance.trace(), mc.mse);
    }

    let rows = variance_table(
        &mdp,
        &policy,
        &[
            PgEstimator::Reinforce,
            PgEstimator::Vanilla,
            PgEstimator::Drpg(model),
            PgEstimator::Drpg(QModel::exact_dp(mdp.clone())),
        ],
        10_000,
        0,
    )?;
    println!("{:<10} {:<10} {:>10} {:>10}", "estimator", "model", "trace", "reduction");
    for r in rows {
        println!("{:<10} {:<10} {:>10.6} {:>10.4}", r.estimator, r.model, r.trace, r.reduction_vs_vanilla);
    }
    Ok(())
}
