//! Single-trajectory off-policy evaluation estimators.
//!
//! Each estimator maps one trajectory collected under a behavior policy to
//! an estimate of the target policy's return. Averaging over trajectories is
//! left to the caller.

use crate::error::{Error, Result};
use crate::mdp::{Trajectory, TERMINAL};
use crate::policy::SoftmaxPolicy;
use crate::qmodel::{QModel, SideInfo};

/// Per-step ratios ρ_t = π'(a_t|s_t) / π(a_t|s_t) and their running products.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights {
    ratios: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ImportanceWeights {
    pub fn new(traj: &Trajectory, behavior: &SoftmaxPolicy, target: &SoftmaxPolicy) -> Result<Self> {
        check_pair(behavior, target)?;
        let mut ratios = Vec::with_capacity(traj.len());
        let mut cumulative = Vec::with_capacity(traj.len());
        let mut running = 1.0;
        for step in traj.steps() {
            let pb = behavior.prob(step.state, step.action);
            if !(pb > 0.0) {
                return Err(Error::ZeroBehaviorProbability {
                    state: step.state,
                    action: step.action,
                });
            }
            let rho = target.prob(step.state, step.action) / pb;
            running *= rho;
            ratios.push(rho);
            cumulative.push(running);
        }
        Ok(Self { ratios, cumulative })
    }

    pub fn ratio(&self, t: usize) -> f64 {
        self.ratios[t]
    }

    /// ρ_{[0:t]}.
    pub fn through(&self, t: usize) -> f64 {
        self.cumulative[t]
    }

    /// ρ_{[0:t-1]}, which is 1 for t = 0.
    pub fn before(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.cumulative[t - 1]
        }
    }
}

fn check_pair(behavior: &SoftmaxPolicy, target: &SoftmaxPolicy) -> Result<()> {
    target.check_shape(behavior.num_states(), behavior.num_actions())
}

fn check_table(what: &'static str, table: &[f64], expected: usize) -> Result<()> {
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

/// ρ_{[0:T]} Σ_t γ^t r_t.
pub fn traj_is(
    traj: &Trajectory,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    gamma: f64,
) -> Result<f64> {
    let w = ImportanceWeights::new(traj, behavior, target)?;
    Ok(w.through(traj.len() - 1) * traj.discounted_return(gamma))
}

/// Σ_t γ^t ρ_{[0:t]} r_t.
pub fn step_is(
    traj: &Trajectory,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    gamma: f64,
) -> Result<f64> {
    let w = ImportanceWeights::new(traj, behavior, target)?;
    let mut g = 1.0;
    let mut total = 0.0;
    for (t, step) in traj.steps().iter().enumerate() {
        total += g * w.through(t) * step.reward;
        g *= gamma;
    }
    Ok(total)
}

/// b(s₀) + Σ_t γ^t ρ_{[0:t]} (r_t − b(s_t) + γ b(s_{t+1})), with b = 0 after
/// the last step.
pub fn baseline_ope(
    traj: &Trajectory,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    gamma: f64,
    baseline: &[f64],
) -> Result<f64> {
    check_table("baseline", baseline, behavior.num_states())?;
    let w = ImportanceWeights::new(traj, behavior, target)?;
    let b = |s: usize| if s == TERMINAL { 0.0 } else { baseline[s] };
    let steps = traj.steps();
    let mut g = 1.0;
    let mut total = b(steps[0].state);
    for (t, step) in steps.iter().enumerate() {
        total += g * w.through(t) * (step.reward - b(step.state) + gamma * b(traj.state_after(t)));
        g *= gamma;
    }
    Ok(total)
}

/// Doubly robust estimate in expanded form:
/// Ṽ(s₀) + Σ_t γ^t ρ_{[0:t]} (r_t + γ Ṽ(s_{t+1}) − Q̃(s_t, a_t)).
/// `side` must be the model evaluated at `target`.
pub fn dr_ope_expanded(
    traj: &Trajectory,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    gamma: f64,
    side: &SideInfo,
) -> Result<f64> {
    let w = ImportanceWeights::new(traj, behavior, target)?;
    let steps = traj.steps();
    let mut g = 1.0;
    let mut total = side.v(steps[0].state);
    for (t, step) in steps.iter().enumerate() {
        let correction =
            step.reward + gamma * side.v(traj.state_after(t)) - side.q(step.state, step.action);
        total += g * w.through(t) * correction;
        g *= gamma;
    }
    Ok(total)
}

/// Doubly robust estimate by the backward recursion
/// DR_t = Ṽ_t + ρ_t (r_t + γ DR_{t+1} − Q̃_t), DR_{T+1} = 0.
pub fn dr_ope_recursive(
    traj: &Trajectory,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    gamma: f64,
    side: &SideInfo,
) -> Result<f64> {
    let w = ImportanceWeights::new(traj, behavior, target)?;
    let mut dr = 0.0;
    for (t, step) in traj.steps().iter().enumerate().rev() {
        dr = side.v(step.state)
            + w.ratio(t) * (step.reward + gamma * dr - side.q(step.state, step.action));
    }
    Ok(dr)
}

/// Σ_t γ^t ρ_{[0:t]} (f(s_t, a_t) − γ f(s_{t+1}, a_{t+1})), with f = 0 after
/// the last step. `critic` is indexed like the policy parameters.
pub fn actor_critic_ope(
    traj: &Trajectory,
    behavior: &SoftmaxPolicy,
    target: &SoftmaxPolicy,
    gamma: f64,
    critic: &[f64],
) -> Result<f64> {
    check_table("critic", critic, behavior.dim())?;
    let w = ImportanceWeights::new(traj, behavior, target)?;
    let f = |t: usize| {
        traj.steps()
            .get(t)
            .map_or(0.0, |x| critic[behavior.index(x.state, x.action)])
    };
    let mut g = 1.0;
    let mut total = 0.0;
    for t in 0..traj.len() {
        total += g * w.through(t) * (f(t) - gamma * f(t + 1));
        g *= gamma;
    }
    Ok(total)
}

/// An OPE estimator together with its side inputs.
#[derive(Clone, Debug)]
pub enum OpeEstimator {
    TrajIs,
    StepIs,
    Baseline(Vec<f64>),
    DrExpanded(QModel),
    DrRecursive(QModel),
    ActorCritic(Vec<f64>),
}

impl OpeEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            OpeEstimator::TrajIs => "traj-is",
            OpeEstimator::StepIs => "step-is",
            OpeEstimator::Baseline(_) => "baseline",
            OpeEstimator::DrExpanded(_) => "dr",
            OpeEstimator::DrRecursive(_) => "dr-recursive",
            OpeEstimator::ActorCritic(_) => "actor-critic",
        }
    }

    /// Evaluates the estimator; DR variants query their model at `target`.
    pub fn evaluate(
        &self,
        traj: &Trajectory,
        behavior: &SoftmaxPolicy,
        target: &SoftmaxPolicy,
        gamma: f64,
    ) -> Result<f64> {
        match self {
            OpeEstimator::TrajIs => traj_is(traj, behavior, target, gamma),
            OpeEstimator::StepIs => step_is(traj, behavior, target, gamma),
            OpeEstimator::Baseline(b) => baseline_ope(traj, behavior, target, gamma, b),
            OpeEstimator::DrExpanded(m) => {
                dr_ope_expanded(traj, behavior, target, gamma, &*m.evaluate(target)?)
            }
            OpeEstimator::DrRecursive(m) => {
                dr_ope_recursive(traj, behavior, target, gamma, &*m.evaluate(target)?)
            }
            OpeEstimator::ActorCritic(f) => actor_critic_ope(traj, behavior, target, gamma, f),
        }
    }
}
