//! Single-trajectory on-policy gradient estimators.
//!
//! Every estimator returns a vector in the policy's parameter order. The
//! trajectory is assumed to have been sampled from `policy`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Gradient;
use crate::mdp::Trajectory;
use crate::policy::SoftmaxPolicy;
use crate::qmodel::{QModel, SideInfo};

/// R_t = Σ_{t' ≥ t} γ^{t'} r_{t'} for every t, plus a trailing zero.
fn discounted_tails(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let n = traj.len();
    let mut tail = vec![0.0; n + 1];
    let mut g = gamma.powi(n as i32 - 1);
    for t in (0..n).rev() {
        tail[t] = g * traj.steps()[t].reward + tail[t + 1];
        g /= gamma;
    }
    tail
}

fn discounts(n: usize, gamma: f64) -> Vec<f64> {
    std::iter::successors(Some(1.0), |g| Some(g * gamma))
        .take(n)
        .collect()
}

/// Σ_t ∇log π_t · Σ_{t'} γ^{t'} r_{t'}.
pub fn reinforce(traj: &Trajectory, policy: &SoftmaxPolicy, gamma: f64) -> Gradient {
    let ret = traj.discounted_return(gamma);
    let mut g = Gradient::zeros(policy.dim());
    for step in traj.steps() {
        policy.add_grad_log_prob(step.state, step.action, ret, &mut g);
    }
    g
}

/// Σ_t ∇log π_t · Σ_{t' ≥ t} γ^{t'} r_{t'}.
pub fn vanilla_pg(traj: &Trajectory, policy: &SoftmaxPolicy, gamma: f64) -> Gradient {
    let tail = discounted_tails(traj, gamma);
    let mut g = Gradient::zeros(policy.dim());
    for (t, step) in traj.steps().iter().enumerate() {
        policy.add_grad_log_prob(step.state, step.action, tail[t], &mut g);
    }
    g
}

/// Σ_t ∇log π_t · (Σ_{t' ≥ t} γ^{t'} r_{t'} − γ^t b(s_t)).
pub fn baseline_pg(
    traj: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    baseline: &[f64],
) -> Result<Gradient> {
    check_len("baseline", baseline, policy.num_states())?;
    let tail = discounted_tails(traj, gamma);
    let disc = discounts(traj.len(), gamma);
    let mut g = Gradient::zeros(policy.dim());
    for (t, step) in traj.steps().iter().enumerate() {
        let weight = tail[t] - disc[t] * baseline[step.state];
        policy.add_grad_log_prob(step.state, step.action, weight, &mut g);
    }
    Ok(g)
}

/// The doubly robust gradient
/// Σ_t { ∇log π_t [R_t + Σ_{t₂>t} γ^{t₂}(Ṽ − Q̃)_{t₂}] + γ^t (∇Ṽ_t − ∇Q̃_t − Q̃_t ∇log π_t) },
/// with `side` the model evaluated at `policy`.
pub fn drpg(traj: &Trajectory, policy: &SoftmaxPolicy, gamma: f64, side: &SideInfo) -> Gradient {
    let terms = drpg_decomposition(traj, policy, gamma, side);
    let mut g = terms.vanilla;
    for (p2, p3) in terms.p2.iter().zip(&terms.p3) {
        g += p2;
        g += p3;
    }
    g
}

/// The pieces of [`drpg`]: the vanilla estimator plus, per step t, the
/// future-correction term p₂ᵗ = ∇log π_t Σ_{t₂>t} γ^{t₂}(Ṽ − Q̃)_{t₂} and the
/// local term p₃ᵗ = γ^t (∇Ṽ_t − ∇Q̃_t − Q̃_t ∇log π_t). Each p₂ᵗ and p₃ᵗ has
/// mean zero under the policy.
#[derive(Clone, Debug)]
pub struct DrpgTerms {
    pub vanilla: Gradient,
    pub p2: Vec<Gradient>,
    pub p3: Vec<Gradient>,
}

pub fn drpg_decomposition(
    traj: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    side: &SideInfo,
) -> DrpgTerms {
    let steps = traj.steps();
    let n = steps.len();
    let disc = discounts(n, gamma);
    let mut future = vec![0.0; n + 1];
    for t in (0..n).rev() {
        let s = &steps[t];
        future[t] = future[t + 1] + disc[t] * (side.v(s.state) - side.q(s.state, s.action));
    }
    let mut p2 = Vec::with_capacity(n);
    let mut p3 = Vec::with_capacity(n);
    for (t, s) in steps.iter().enumerate() {
        p2.push(policy.grad_log_prob(s.state, s.action) * future[t + 1]);
        let mut local = side.v_grad(s.state) - side.q_grad(s.state, s.action);
        policy.add_grad_log_prob(s.state, s.action, -side.q(s.state, s.action), &mut local);
        p3.push(local * disc[t]);
    }
    DrpgTerms {
        vanilla: vanilla_pg(traj, policy, gamma),
        p2,
        p3,
    }
}

/// The doubly robust gradient by the backward recursion
/// ∇DR_t = ∇Ṽ_t + ∇log π_t (r_t + γ DR_{t+1} − Q̃_t) + γ ∇DR_{t+1} − ∇Q̃_t.
pub fn drpg_recursive(
    traj: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    side: &SideInfo,
) -> Gradient {
    let mut dr = 0.0;
    let mut grad = Gradient::zeros(policy.dim());
    for step in traj.steps().iter().rev() {
        let (s, a) = (step.state, step.action);
        let delta = step.reward + gamma * dr - side.q(s, a);
        grad *= gamma;
        grad += side.v_grad(s);
        grad -= side.q_grad(s, a);
        policy.add_grad_log_prob(s, a, delta, &mut grad);
        dr = side.v(s) + delta;
    }
    grad
}

/// The trajectory-wise control-variate gradient for a fixed table Q̃, written
/// in prefix form Σ_t γ^t [G_t (r_t − Q̃_t) + G_{t−1} Ṽ_t + Σ_a Q̃(s_t, a) ∇π(a|s_t)]
/// where G_t = Σ_{k≤t} ∇log π_k and Ṽ_t = Σ_a π(a|s_t) Q̃(s_t, a). Any
/// dependence of Q̃ on θ is ignored.
pub fn trajcv_pg(
    traj: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    q: &[f64],
) -> Result<Gradient> {
    check_len("Q table", q, policy.dim())?;
    let na = policy.num_actions();
    let d = policy.dim();
    let mut prefix = Gradient::zeros(d);
    let mut out = Gradient::zeros(d);
    let mut disc = 1.0;
    for step in traj.steps() {
        let s = step.state;
        let probs = policy.action_probs(s);
        let v: f64 = (0..na).map(|a| probs[a] * q[s * na + a]).sum();
        out.axpy(disc * v, &prefix, 1.0);
        for a in 0..na {
            let p = probs[a];
            let mut dpi = Gradient::zeros(d);
            for b in 0..na {
                let indicator = if a == b { 1.0 } else { 0.0 };
                dpi[s * na + b] = p * (indicator - probs[b]);
            }
            out.axpy(disc * q[s * na + a], &dpi, 1.0);
        }
        policy.add_grad_log_prob(s, step.action, 1.0, &mut prefix);
        out.axpy(disc * (step.reward - q[s * na + step.action]), &prefix, 1.0);
        disc *= gamma;
    }
    Ok(out)
}

/// Σ_t γ^t ∇log π_t · f(s_t, a_t), with `critic` indexed like θ.
pub fn actor_critic_pg(
    traj: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    critic: &[f64],
) -> Result<Gradient> {
    check_len("critic", critic, policy.dim())?;
    let mut g = Gradient::zeros(policy.dim());
    let mut disc = 1.0;
    for step in traj.steps() {
        let f = critic[policy.index(step.state, step.action)];
        policy.add_grad_log_prob(step.state, step.action, disc * f, &mut g);
        disc *= gamma;
    }
    Ok(g)
}

fn check_len(what: &'static str, table: &[f64], expected: usize) -> Result<()> {
    if table.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got: table.len(),
        })
    }
}

/// A PG estimator with its side inputs, not yet tied to a policy.
#[derive(Clone, Debug)]
pub enum PgEstimator {
    Reinforce,
    Vanilla,
    Baseline(Vec<f64>),
    Drpg(QModel),
    DrpgRecursive(QModel),
    TrajCv(QModel),
    ActorCritic(Vec<f64>),
}

impl PgEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            PgEstimator::Reinforce => "reinforce",
            PgEstimator::Vanilla => "vanilla",
            PgEstimator::Baseline(_) => "baseline",
            PgEstimator::Drpg(_) => "drpg",
            PgEstimator::DrpgRecursive(_) => "drpg-recursive",
            PgEstimator::TrajCv(_) => "trajcv",
            PgEstimator::ActorCritic(_) => "actor-critic",
        }
    }

    /// Model variant name, or "-" for estimators without a model.
    pub fn model_name(&self) -> &'static str {
        match self {
            PgEstimator::Drpg(m) | PgEstimator::DrpgRecursive(m) | PgEstimator::TrajCv(m) => {
                m.variant_name()
            }
            _ => "-",
        }
    }

    /// Evaluates side information at `policy` once, so that the returned
    /// estimator is a cheap pure function of the trajectory.
    pub fn bind(&self, policy: &SoftmaxPolicy, gamma: f64) -> Result<BoundPg> {
        let kind = match self {
            PgEstimator::Reinforce => Bound::Reinforce,
            PgEstimator::Vanilla => Bound::Vanilla,
            PgEstimator::Baseline(b) => {
                check_len("baseline", b, policy.num_states())?;
                Bound::Baseline(b.clone())
            }
            PgEstimator::Drpg(m) => Bound::Drpg(m.evaluate(policy)?),
            PgEstimator::DrpgRecursive(m) => Bound::DrpgRecursive(m.evaluate(policy)?),
            PgEstimator::TrajCv(m) => Bound::TrajCv(m.evaluate(policy)?.q_table().to_vec()),
            PgEstimator::ActorCritic(f) => {
                check_len("critic", f, policy.dim())?;
                Bound::ActorCritic(f.clone())
            }
        };
        Ok(BoundPg {
            policy: policy.clone(),
            gamma,
            kind,
        })
    }
}

#[derive(Clone, Debug)]
enum Bound {
    Reinforce,
    Vanilla,
    Baseline(Vec<f64>),
    Drpg(Arc<SideInfo>),
    DrpgRecursive(Arc<SideInfo>),
    TrajCv(Vec<f64>),
    ActorCritic(Vec<f64>),
}

/// A PG estimator with its policy and side information fixed.
#[derive(Clone, Debug)]
pub struct BoundPg {
    policy: SoftmaxPolicy,
    gamma: f64,
    kind: Bound,
}

impl BoundPg {
    pub fn policy(&self) -> &SoftmaxPolicy {
        &self.policy
    }

    pub fn estimate(&self, traj: &Trajectory) -> Gradient {
        let (p, g) = (&self.policy, self.gamma);
        match &self.kind {
            Bound::Reinforce => reinforce(traj, p, g),
            Bound::Vanilla => vanilla_pg(traj, p, g),
            Bound::Baseline(b) => baseline_pg(traj, p, g, b).expect("length checked at bind"),
            Bound::Drpg(side) => drpg(traj, p, g, side),
            Bound::DrpgRecursive(side) => drpg_recursive(traj, p, g, side),
            Bound::TrajCv(q) => trajcv_pg(traj, p, g, q).expect("length checked at bind"),
            Bound::ActorCritic(f) => actor_critic_pg(traj, p, g, f).expect("length checked at bind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::generate::{random_dag, DagParams};
    use crate::linalg::max_abs_diff;
    use crate::mdp::{
        enumerate_trajectories, exact_policy_gradient, value_tables, Step, TabularMdp,
    };
    use crate::qmodel::SnapshotKind;

    fn setup(seed: u64) -> (Arc<TabularMdp>, SoftmaxPolicy) {
        let mdp = Arc::new(random_dag(&DagParams::small_stochastic(), seed).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let p = SoftmaxPolicy::random(mdp.num_states(), mdp.num_actions(), 1.0, &mut rng);
        (mdp, p)
    }

    fn expectation(
        mdp: &TabularMdp,
        policy: &SoftmaxPolicy,
        f: impl Fn(&Trajectory) -> Gradient,
    ) -> Gradient {
        let mut out = Gradient::zeros(policy.dim());
        for (t, p) in enumerate_trajectories(mdp, policy).unwrap() {
            out.axpy(p, &f(&t), 1.0);
        }
        out
    }

    fn models(mdp: &Arc<TabularMdp>, policy: &SoftmaxPolicy) -> Vec<QModel> {
        vec![
            QModel::zero(),
            QModel::noisy_snapshot(SnapshotKind::StateBaseline, mdp.clone(), policy, 0.4, 1)
                .unwrap(),
            QModel::noisy_snapshot(SnapshotKind::Constant, mdp.clone(), policy, 0.4, 2).unwrap(),
            QModel::noisy_snapshot(SnapshotKind::FrozenLinear, mdp.clone(), policy, 0.4, 3)
                .unwrap(),
            QModel::exact_dp(mdp.clone()),
            QModel::noisy_snapshot(SnapshotKind::ExactOffset, mdp.clone(), policy, 0.4, 4)
                .unwrap(),
        ]
    }

    #[test]
    fn zero_rewards_and_single_action_give_zero_gradients() {
        let traj = Trajectory::new(vec![
            Step { state: 0, action: 1, reward: 0.0 },
            Step { state: 1, action: 0, reward: 0.0 },
        ]);
        let p = SoftmaxPolicy::new(2, 2, vec![0.2, -0.1, 0.5, 0.3]).unwrap();
        assert_eq!(reinforce(&traj, &p, 0.9).amax(), 0.0);
        let one = SoftmaxPolicy::uniform(2, 1);
        let traj = Trajectory::new(vec![
            Step { state: 0, action: 0, reward: 1.0 },
            Step { state: 1, action: 0, reward: 2.0 },
        ]);
        assert_eq!(reinforce(&traj, &one, 0.9).amax(), 0.0);
        assert_eq!(vanilla_pg(&traj, &one, 0.9).amax(), 0.0);
    }

    #[test]
    fn single_step_vanilla_equals_reinforce() {
        let traj = Trajectory::new(vec![Step { state: 0, action: 1, reward: 1.5 }]);
        let p = SoftmaxPolicy::new(1, 3, vec![0.2, -0.1, 0.5]).unwrap();
        assert_eq!(reinforce(&traj, &p, 0.9), vanilla_pg(&traj, &p, 0.9));
        assert_eq!(vanilla_pg(&traj, &p, 0.9), p.grad_log_prob(0, 1) * 1.5);
    }

    #[test]
    fn score_estimators_are_unbiased() {
        let (mdp, p) = setup(1);
        let g = mdp.gamma();
        let exact = exact_policy_gradient(&mdp, &p).unwrap();
        assert!(max_abs_diff(&expectation(&mdp, &p, |t| reinforce(t, &p, g)), &exact) < 1e-10);
        assert!(max_abs_diff(&expectation(&mdp, &p, |t| vanilla_pg(t, &p, g)), &exact) < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<f64> = (0..mdp.num_states()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let e = expectation(&mdp, &p, |t| baseline_pg(t, &p, g, &b).unwrap());
        assert!(max_abs_diff(&e, &exact) < 1e-10);
    }

    #[test]
    fn model_estimators_are_unbiased_for_every_variant() {
        let (mdp, p) = setup(2);
        let g = mdp.gamma();
        let exact = exact_policy_gradient(&mdp, &p).unwrap();
        for m in models(&mdp, &p) {
            let side = m.evaluate(&p).unwrap();
            let e = expectation(&mdp, &p, |t| drpg(t, &p, g, &side));
            assert!(max_abs_diff(&e, &exact) < 1e-10, "{}", m.variant_name());
            let e = expectation(&mdp, &p, |t| trajcv_pg(t, &p, g, side.q_table()).unwrap());
            assert!(max_abs_diff(&e, &exact) < 1e-10, "{}", m.variant_name());
        }
    }

    #[test]
    fn specialization_lattice_holds_pathwise() {
        let (mdp, p) = setup(3);
        let g = mdp.gamma();
        let zero = QModel::zero().evaluate(&p).unwrap();
        let b: Vec<f64> = (0..mdp.num_states()).map(|s| (s as f64 * 0.7).cos()).collect();
        let sb = QModel::state_baseline(b.clone()).evaluate(&p).unwrap();
        let all = models(&mdp, &p);
        let sides: Vec<_> = all.iter().map(|m| m.evaluate(&p).unwrap()).collect();
        let constants: Vec<_> = all
            .iter()
            .map(|m| m.constant_snapshot(&p).unwrap().evaluate(&p).unwrap())
            .collect();
        for (traj, _) in enumerate_trajectories(&mdp, &p).unwrap() {
            let v = vanilla_pg(&traj, &p, g);
            assert!(max_abs_diff(&drpg(&traj, &p, g, &zero), &v) < 1e-12);
            assert!(max_abs_diff(&drpg_recursive(&traj, &p, g, &zero), &v) < 1e-12);
            assert!(max_abs_diff(&trajcv_pg(&traj, &p, g, zero.q_table()).unwrap(), &v) < 1e-12);
            let bl = baseline_pg(&traj, &p, g, &b).unwrap();
            assert!(max_abs_diff(&drpg(&traj, &p, g, &sb), &bl) < 1e-12);
            for (side, constant) in sides.iter().zip(&constants) {
                let e = drpg(&traj, &p, g, side);
                assert!(max_abs_diff(&drpg_recursive(&traj, &p, g, side), &e) < 1e-12);
                let cv = trajcv_pg(&traj, &p, g, side.q_table()).unwrap();
                assert!(max_abs_diff(&drpg(&traj, &p, g, constant), &cv) < 1e-12);
            }
        }
    }

    #[test]
    fn recursive_single_step_form() {
        let (mdp, p) = setup(4);
        let side = QModel::exact_dp(mdp.clone()).evaluate(&p).unwrap();
        let traj = Trajectory::new(vec![Step { state: 2, action: 1, reward: 0.8 }]);
        let mut expected = side.v_grad(2) - side.q_grad(2, 1);
        expected += p.grad_log_prob(2, 1) * (0.8 - side.q(2, 1));
        assert!(max_abs_diff(&drpg_recursive(&traj, &p, 0.9, &side), &expected) < 1e-15);
    }

    #[test]
    fn correction_terms_have_zero_mean_per_step() {
        let (mdp, p) = setup(5);
        for m in models(&mdp, &p) {
            let side = m.evaluate(&p).unwrap();
            let n = mdp.horizon() + 1;
            let mut p2 = vec![Gradient::zeros(p.dim()); n];
            let mut p3 = vec![Gradient::zeros(p.dim()); n];
            for (traj, w) in enumerate_trajectories(&mdp, &p).unwrap() {
                let terms = drpg_decomposition(&traj, &p, mdp.gamma(), &side);
                for t in 0..n {
                    p2[t].axpy(w, &terms.p2[t], 1.0);
                    p3[t].axpy(w, &terms.p3[t], 1.0);
                }
            }
            for t in 0..n {
                assert!(p2[t].amax() < 1e-10, "p2 t={t} {}", m.variant_name());
                assert!(p3[t].amax() < 1e-10, "p3 t={t} {}", m.variant_name());
            }
        }
    }

    #[test]
    fn exact_model_on_deterministic_mdp_has_constant_output() {
        let mdp = Arc::new(random_dag(&DagParams::small_deterministic(), 6).unwrap());
        let p = SoftmaxPolicy::random(mdp.num_states(), 2, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let exact = exact_policy_gradient(&mdp, &p).unwrap();
        let side = QModel::exact_dp(mdp.clone()).evaluate(&p).unwrap();
        for (traj, _) in enumerate_trajectories(&mdp, &p).unwrap() {
            assert!(max_abs_diff(&drpg(&traj, &p, mdp.gamma(), &side), &exact) < 1e-9);
        }
    }

    #[test]
    fn actor_critic_bias_and_exact_critic() {
        let (mdp, p) = setup(7);
        let g = mdp.gamma();
        let exact = exact_policy_gradient(&mdp, &p).unwrap();
        let traj = enumerate_trajectories(&mdp, &p).unwrap().remove(0).0;
        assert_eq!(actor_critic_pg(&traj, &p, g, &vec![0.0; p.dim()]).unwrap().amax(), 0.0);
        let q = value_tables(&mdp, &p).unwrap().q_table().to_vec();
        let e = expectation(&mdp, &p, |t| actor_critic_pg(t, &p, g, &q).unwrap());
        assert!(max_abs_diff(&e, &exact) < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let e = expectation(&mdp, &p, |t| actor_critic_pg(t, &p, g, &f).unwrap());
        assert!(max_abs_diff(&e, &exact) > 1e-3);
    }

    #[test]
    fn bound_estimators_match_free_functions() {
        let (mdp, p) = setup(8);
        let g = mdp.gamma();
        let m = QModel::exact_dp(mdp.clone());
        let side = m.evaluate(&p).unwrap();
        let bound = PgEstimator::Drpg(m.clone()).bind(&p, g).unwrap();
        let traj = enumerate_trajectories(&mdp, &p).unwrap().remove(3).0;
        assert_eq!(bound.estimate(&traj), drpg(&traj, &p, g, &side));
        assert_eq!(PgEstimator::TrajCv(m).model_name(), "exact-dp");
        assert!(PgEstimator::Baseline(vec![0.0]).bind(&p, g).is_err());
    }
}
