//! Covariance of PG estimators: exact enumeration, Monte Carlo, and the
//! closed-form three-term decomposition of the doubly robust gradient.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Covariance, Gradient, WeightedMoments};
use crate::mdp::{
    enumerate_trajectories, enumeration_cap, sample_trajectory, value_gradients, value_tables,
    walk_histories, HistoryVisitor, TabularMdp, Trajectory,
};
use crate::pg::PgEstimator;
use crate::policy::SoftmaxPolicy;
use crate::qmodel::QModel;

/// Exact first, second and fourth moments of an estimator's distribution.
#[derive(Clone, Debug)]
pub struct ExactMoments {
    pub mean: Gradient,
    pub covariance: Covariance,
    /// E‖g − E g‖⁴, used for the sampling error of a Monte Carlo trace.
    pub centered_fourth: f64,
}

impl ExactMoments {
    /// Standard error of the sample trace of `n` i.i.d. draws.
    pub fn trace_standard_error(&self, n: usize) -> f64 {
        let tr = self.covariance.trace();
        ((self.centered_fourth - tr * tr).max(0.0) / n as f64).sqrt()
    }
}

/// Moments of `estimator` over every enumerated trajectory.
pub fn brute_force_moments<F>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    estimator: F,
) -> Result<ExactMoments>
where
    F: Fn(&Trajectory) -> Gradient + Sync,
{
    let trajectories = enumerate_trajectories(mdp, policy)?;
    let values: Vec<Gradient> = trajectories.par_iter().map(|(t, _)| estimator(t)).collect();
    let d = policy.dim();
    let mut moments = WeightedMoments::new();
    for ((_, p), g) in trajectories.iter().zip(values) {
        moments.push(*p, g);
    }
    let mean = moments.mean(d);
    let covariance = Covariance::from_matrix(moments.covariance(d));
    let centered_fourth = trajectories
        .iter()
        .zip(moments.values())
        .map(|((_, p), g)| p * (g - &mean).norm_squared().powi(2))
        .sum();
    Ok(ExactMoments {
        mean,
        covariance,
        centered_fourth,
    })
}

/// Σ_τ p(τ) g(τ)g(τ)ᵀ − ḡḡᵀ over every enumerated trajectory.
pub fn brute_force_covariance<F>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    estimator: F,
) -> Result<Covariance>
where
    F: Fn(&Trajectory) -> Gradient + Sync,
{
    Ok(brute_force_moments(mdp, policy, estimator)?.covariance)
}

/// The three terms of the doubly robust covariance decomposition, summed
/// over steps n with weight γ^{2n}:
/// reward noise Var[r_n | s_n, a_n] G_n G_nᵀ, action noise
/// Cov_{a_n}[∇Q_n − ∇Q̃_n + G_n (Q_n − Q̃_n)], and transition noise
/// Cov_{s_n}[∇V_n + G_{n−1} V_n], with G_n = Σ_{t≤n} ∇log π_t.
#[derive(Clone, Debug)]
pub struct CovarianceTerms {
    pub reward: Covariance,
    pub action: Covariance,
    pub transition: Covariance,
}

impl CovarianceTerms {
    pub fn total(&self) -> Covariance {
        self.reward.clone() + self.action.clone() + self.transition.clone()
    }
}

/// Evaluates the decomposition exactly by enumerating state-action
/// histories, with exact V, Q, ∇V, ∇Q from dynamic programming and Q̃, ∇Q̃
/// from `model` at `policy`.
pub fn closed_form_terms(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    model: &QModel,
) -> Result<CovarianceTerms> {
    let tables = value_tables(mdp, policy)?;
    let grads = value_gradients(mdp, policy, &tables)?;
    let side = model.evaluate(policy)?;
    let d = policy.dim();
    let na = mdp.num_actions();
    let mut reward = DMatrix::zeros(d, d);
    let mut action = DMatrix::zeros(d, d);
    let mut transition = DMatrix::zeros(d, d);

    let mut on_state = |n: usize, s: usize, prob: f64, before: &Gradient| {
        let mut moments = WeightedMoments::new();
        for a in 0..na {
            let mut y = grads.q_grad(s, a) - side.q_grad(s, a);
            let mut g = before.clone();
            policy.add_grad_log_prob(s, a, 1.0, &mut g);
            y.axpy(tables.q(s, a) - side.q(s, a), &g, 1.0);
            moments.push(policy.prob(s, a), y);
        }
        action += moments.covariance(d) * (prob * mdp.discount(n).powi(2));
    };
    let mut on_action = |n: usize, s: usize, a: usize, prob: f64, score: &Gradient| {
        let var = mdp.reward_variance(s, a);
        if var > 0.0 {
            reward.ger(prob * mdp.discount(n).powi(2) * var, score, score, 1.0);
        }
        if n < mdp.horizon() {
            let mut moments = WeightedMoments::new();
            for x in mdp.transitions(s, a) {
                moments.push(x.p, grads.v_grad(x.state) + score * tables.v(x.state));
            }
            transition += moments.covariance(d) * (prob * mdp.discount(n + 1).powi(2));
        }
    };
    walk_histories(
        mdp,
        policy,
        &mut HistoryVisitor {
            on_state: &mut on_state,
            on_action: &mut on_action,
        },
    )?;
    Ok(CovarianceTerms {
        reward: Covariance::from_matrix(reward),
        action: Covariance::from_matrix(action),
        transition: Covariance::from_matrix(transition),
    })
}

/// Closed-form covariance of the doubly robust gradient with `model`.
pub fn theorem2_covariance(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    model: &QModel,
) -> Result<Covariance> {
    Ok(closed_form_terms(mdp, policy, model)?.total())
}

/// Sample statistics of a Monte Carlo run.
#[derive(Clone, Debug)]
pub struct McEstimate {
    pub samples: usize,
    pub mean: Gradient,
    /// Unbiased sample covariance (divisor n − 1).
    pub covariance: Covariance,
    /// Mean of ‖g − ∇J‖² against the exact gradient.
    pub mse: f64,
}

/// Draws `n_samples` on-policy trajectories and summarizes the estimator.
/// Sample i uses its own ChaCha stream (seed, stream i), so results do not
/// depend on thread scheduling.
pub fn mc_covariance<F>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    estimator: F,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&Trajectory) -> Gradient + Sync,
{
    if n_samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "Monte Carlo covariance needs at least 2 samples, got {n_samples}"
        )));
    }
    mdp.check_policy(policy)?;
    let tables = value_tables(mdp, policy)?;
    let exact = value_gradients(mdp, policy, &tables)?
        .v_grad(mdp.start_state())
        .clone();
    let values: Vec<Gradient> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let traj = sample_trajectory(mdp, policy, &mut rng).expect("policy shape checked");
            estimator(&traj)
        })
        .collect();
    let d = policy.dim();
    let n = n_samples as f64;
    let mut mean = Gradient::zeros(d);
    for g in &values {
        mean += g;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    let mut mse = 0.0;
    for g in &values {
        let c = g - &mean;
        cov.ger(1.0, &c, &c, 1.0);
        mse += (g - &exact).norm_squared();
    }
    Ok(McEstimate {
        samples: n_samples,
        mean,
        covariance: Covariance::from_matrix(cov / (n - 1.0)),
        mse: mse / n,
    })
}

/// (V_base − V_est) / V_base; zero when both vanish.
pub fn reduction_ratio(base: f64, est: f64) -> f64 {
    if base == 0.0 {
        if est == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (base - est) / base
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceMethod {
    BruteForce,
    MonteCarlo,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::BruteForce => "brute-force",
            VarianceMethod::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceRow {
    pub estimator: String,
    pub model: String,
    pub trace: f64,
    pub reduction_vs_vanilla: f64,
    pub method: VarianceMethod,
}

/// Covariance traces of each estimator and their reduction relative to the
/// vanilla estimator. Uses enumeration when the trajectory support fits
/// under the enumeration cap, otherwise `mc_samples` draws from `seed`.
pub fn variance_table(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    estimators: &[PgEstimator],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    let method = if mdp.support_size() <= enumeration_cap() as u128 {
        VarianceMethod::BruteForce
    } else {
        VarianceMethod::MonteCarlo
    };
    let trace_of = |est: &PgEstimator| -> Result<f64> {
        let bound = est.bind(policy, mdp.gamma())?;
        let f = |t: &Trajectory| bound.estimate(t);
        Ok(match method {
            VarianceMethod::BruteForce => brute_force_covariance(mdp, policy, f)?.trace(),
            VarianceMethod::MonteCarlo => mc_covariance(mdp, policy, f, mc_samples, seed)?
                .covariance
                .trace(),
        })
    };
    let base = trace_of(&PgEstimator::Vanilla)?;
    estimators
        .iter()
        .map(|est| {
            let trace = trace_of(est)?;
            Ok(VarianceRow {
                estimator: est.name().to_string(),
                model: est.model_name().to_string(),
                trace,
                reduction_vs_vanilla: reduction_ratio(base, trace),
                method,
            })
        })
        .collect()
}

/// E[Σ_t γ^{2t} Cov_{a_t}[f(s_t, a_t, G_t) | history]] where G_t includes a_t.
fn action_noise_formula<F>(mdp: &TabularMdp, policy: &SoftmaxPolicy, f: F) -> Result<Covariance>
where
    F: Fn(usize, usize, &Gradient) -> Gradient,
{
    let d = policy.dim();
    let mut total = DMatrix::zeros(d, d);
    let mut on_state = |t: usize, s: usize, prob: f64, before: &Gradient| {
        let mut moments = WeightedMoments::new();
        for a in 0..mdp.num_actions() {
            let mut g = before.clone();
            policy.add_grad_log_prob(s, a, 1.0, &mut g);
            moments.push(policy.prob(s, a), f(s, a, &g));
        }
        total += moments.covariance(d) * (prob * mdp.discount(t).powi(2));
    };
    let mut on_action = |_: usize, _: usize, _: usize, _: f64, _: &Gradient| {};
    walk_histories(
        mdp,
        policy,
        &mut HistoryVisitor {
            on_state: &mut on_state,
            on_action: &mut on_action,
        },
    )?;
    Ok(Covariance::from_matrix(total))
}

/// E[Σ γ^{2t} Cov_t[∇Q_t + Q_t G_t | s_t]]: the vanilla (step-IS) covariance
/// on MDPs with deterministic rewards and transitions.
pub fn step_is_deterministic_covariance(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<Covariance> {
    let tables = value_tables(mdp, policy)?;
    let grads = value_gradients(mdp, policy, &tables)?;
    action_noise_formula(mdp, policy, |s, a, g| {
        grads.q_grad(s, a) + g * tables.q(s, a)
    })
}

/// E[Σ γ^{2t} Cov_t[∇Q_t + A_t G_t | s_t]]: the covariance with baseline
/// b = V on deterministic MDPs.
pub fn baseline_deterministic_covariance(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<Covariance> {
    let tables = value_tables(mdp, policy)?;
    let grads = value_gradients(mdp, policy, &tables)?;
    action_noise_formula(mdp, policy, |s, a, g| {
        grads.q_grad(s, a) + g * (tables.q(s, a) - tables.v(s))
    })
}

/// E[Σ γ^{2t} Cov_t[∇Q_t | s_t]]: the covariance with exact Q̃ values but
/// ∇Q̃ ≡ 0 on deterministic MDPs.
pub fn constant_q_deterministic_covariance(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<Covariance> {
    let tables = value_tables(mdp, policy)?;
    let grads = value_gradients(mdp, policy, &tables)?;
    action_noise_formula(mdp, policy, |s, a, _| grads.q_grad(s, a).clone())
}
