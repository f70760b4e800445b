//! Central finite differences of OPE estimators on a fixed trajectory, and
//! pathwise comparison against the matching PG estimators.
//!
//! The behavior policy stays at θ while the target moves to θ ± ε·eᵢ, so
//! the difference quotient of an OPE estimate is a gradient estimate built
//! from the same on-policy trajectory.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, Gradient};
use crate::mdp::{enumerate_trajectories, TabularMdp, Trajectory};
use crate::ope::OpeEstimator;
use crate::pg::PgEstimator;
use crate::policy::SoftmaxPolicy;
use crate::qmodel::{QModel, SnapshotKind};

pub const DEFAULT_EPS: f64 = 1e-5;

/// θ ± ε·eᵢ for every coordinate i.
#[derive(Clone, Debug)]
pub struct Perturbations {
    eps: f64,
    plus: Vec<SoftmaxPolicy>,
    minus: Vec<SoftmaxPolicy>,
}

impl Perturbations {
    pub fn new(policy: &SoftmaxPolicy, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidEpsilon(eps));
        }
        let plus = (0..policy.dim())
            .map(|i| policy.perturb(i, eps))
            .collect::<Result<_>>()?;
        let minus = (0..policy.dim())
            .map(|i| policy.perturb(i, -eps))
            .collect::<Result<_>>()?;
        Ok(Self { eps, plus, minus })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Central-difference gradient of `ope(traj, behavior, target)` in the target.
    pub fn gradient<F>(&self, traj: &Trajectory, behavior: &SoftmaxPolicy, ope: F) -> Result<Gradient>
    where
        F: Fn(&Trajectory, &SoftmaxPolicy, &SoftmaxPolicy) -> Result<f64>,
    {
        let mut g = Gradient::zeros(self.plus.len());
        for (i, (up, down)) in self.plus.iter().zip(&self.minus).enumerate() {
            let hi = finite(ope(traj, behavior, up)?)?;
            let lo = finite(ope(traj, behavior, down)?)?;
            g[i] = (hi - lo) / (2.0 * self.eps);
        }
        Ok(g)
    }
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(x))
    }
}

/// Coordinate i is [ope(traj, π, π_{θ+εeᵢ}) − ope(traj, π, π_{θ−εeᵢ})] / 2ε.
pub fn finite_diff_ope_gradient<F>(
    ope: F,
    traj: &Trajectory,
    policy: &SoftmaxPolicy,
    eps: f64,
) -> Result<Gradient>
where
    F: Fn(&Trajectory, &SoftmaxPolicy, &SoftmaxPolicy) -> Result<f64>,
{
    Perturbations::new(policy, eps)?.gradient(traj, policy, ope)
}

/// An (OPE estimator, PG estimator) pair whose finite-difference
/// correspondence holds on every trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorrespondencePair {
    TrajIsReinforce,
    StepIsVanilla,
    Baseline,
    DrExactDrpg,
    DrFrozenDrpg,
    DrConstantTrajCv,
    ActorCritic,
}

impl CorrespondencePair {
    pub const ALL: [CorrespondencePair; 7] = [
        CorrespondencePair::TrajIsReinforce,
        CorrespondencePair::StepIsVanilla,
        CorrespondencePair::Baseline,
        CorrespondencePair::DrExactDrpg,
        CorrespondencePair::DrFrozenDrpg,
        CorrespondencePair::DrConstantTrajCv,
        CorrespondencePair::ActorCritic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrespondencePair::TrajIsReinforce => "traj-is:reinforce",
            CorrespondencePair::StepIsVanilla => "step-is:vanilla",
            CorrespondencePair::Baseline => "baseline",
            CorrespondencePair::DrExactDrpg => "dr-exact:drpg",
            CorrespondencePair::DrFrozenDrpg => "dr-frozen:drpg",
            CorrespondencePair::DrConstantTrajCv => "dr-constant:trajcv",
            CorrespondencePair::ActorCritic => "actor-critic",
        }
    }

    /// Side input used when none is supplied: a seeded random baseline or
    /// critic, or a model of the kind the pair names.
    pub fn default_side(
        self,
        mdp: &Arc<TabularMdp>,
        policy: &SoftmaxPolicy,
        seed: u64,
    ) -> Result<SideInput> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(match self {
            CorrespondencePair::TrajIsReinforce | CorrespondencePair::StepIsVanilla => {
                SideInput::None
            }
            CorrespondencePair::Baseline => SideInput::Baseline(
                (0..mdp.num_states()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ),
            CorrespondencePair::ActorCritic => SideInput::Critic(
                (0..mdp.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ),
            CorrespondencePair::DrExactDrpg => SideInput::Model(QModel::exact_dp(mdp.clone())),
            CorrespondencePair::DrFrozenDrpg => SideInput::Model(QModel::noisy_snapshot(
                SnapshotKind::FrozenLinear,
                mdp.clone(),
                policy,
                0.5,
                seed,
            )?),
            CorrespondencePair::DrConstantTrajCv => SideInput::Model(QModel::noisy_snapshot(
                SnapshotKind::Constant,
                mdp.clone(),
                policy,
                0.5,
                seed,
            )?),
        })
    }

    /// The two estimators of the pair, checking that `side` fits.
    pub fn estimators(self, side: &SideInput) -> Result<(OpeEstimator, PgEstimator)> {
        let mismatch = || {
            Error::InvalidParameter(format!(
                "pair {} cannot use side input {}",
                self.name(),
                side.describe()
            ))
        };
        Ok(match (self, side) {
            (CorrespondencePair::TrajIsReinforce, SideInput::None) => {
                (OpeEstimator::TrajIs, PgEstimator::Reinforce)
            }
            (CorrespondencePair::StepIsVanilla, SideInput::None) => {
                (OpeEstimator::StepIs, PgEstimator::Vanilla)
            }
            (CorrespondencePair::Baseline, SideInput::Baseline(b)) => {
                (OpeEstimator::Baseline(b.clone()), PgEstimator::Baseline(b.clone()))
            }
            (CorrespondencePair::ActorCritic, SideInput::Critic(f)) => {
                (OpeEstimator::ActorCritic(f.clone()), PgEstimator::ActorCritic(f.clone()))
            }
            (CorrespondencePair::DrExactDrpg, SideInput::Model(m @ QModel::ExactDp(_)))
            | (CorrespondencePair::DrFrozenDrpg, SideInput::Model(m @ QModel::FrozenLinear { .. })) => {
                (OpeEstimator::DrExpanded(m.clone()), PgEstimator::Drpg(m.clone()))
            }
            (
                CorrespondencePair::DrConstantTrajCv,
                SideInput::Model(
                    m @ (QModel::Zero | QModel::Constant { .. } | QModel::StateBaseline { .. }),
                ),
            ) => (OpeEstimator::DrExpanded(m.clone()), PgEstimator::TrajCv(m.clone())),
            _ => return Err(mismatch()),
        })
    }
}

impl fmt::Display for CorrespondencePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrespondencePair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "correspondence pair",
                name: s.to_string(),
            })
    }
}

/// The extra input a pair needs beyond trajectory and policy.
#[derive(Clone, Debug)]
pub enum SideInput {
    None,
    Baseline(Vec<f64>),
    Critic(Vec<f64>),
    Model(QModel),
}

impl SideInput {
    fn describe(&self) -> &'static str {
        match self {
            SideInput::None => "none",
            SideInput::Baseline(_) => "baseline",
            SideInput::Critic(_) => "critic",
            SideInput::Model(m) => m.variant_name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDeviation {
    /// Position in enumeration order.
    pub index: usize,
    pub probability: f64,
    pub deviation: f64,
}

/// Finite-difference vs PG comparison over every enumerated trajectory.
#[derive(Clone, Debug)]
pub struct CorrespondenceReport {
    pub pair: CorrespondencePair,
    pub eps: f64,
    pub per_trajectory: Vec<TrajectoryDeviation>,
    /// Largest max_i |fd_i − pg_i| over trajectories.
    pub max_deviation: f64,
    /// Finite-difference and PG vectors on the worst trajectory.
    pub worst_fd: Gradient,
    pub worst_pg: Gradient,
}

impl CorrespondenceReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

/// Compares the pair on every positive-probability trajectory of `mdp`
/// under `policy`.
pub fn verify_correspondence(
    pair: CorrespondencePair,
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    side: &SideInput,
    eps: f64,
) -> Result<CorrespondenceReport> {
    let (ope, pg) = pair.estimators(side)?;
    let pert = Perturbations::new(policy, eps)?;
    let bound = pg.bind(policy, mdp.gamma())?;
    let gamma = mdp.gamma();
    let trajectories = enumerate_trajectories(mdp, policy)?;
    let results: Vec<(f64, Gradient, Gradient)> = trajectories
        .par_iter()
        .map(|(traj, _)| {
            let fd = pert.gradient(traj, policy, |t, b, p| ope.evaluate(t, b, p, gamma))?;
            let est = bound.estimate(traj);
            Ok((max_abs_diff(&fd, &est), fd, est))
        })
        .collect::<Result<_>>()?;

    let mut per_trajectory = Vec::with_capacity(results.len());
    let mut worst = 0;
    for (index, ((_, p), (dev, _, _))) in trajectories.iter().zip(&results).enumerate() {
        if *dev > results[worst].0 {
            worst = index;
        }
        per_trajectory.push(TrajectoryDeviation {
            index,
            probability: *p,
            deviation: *dev,
        });
    }
    let (max_deviation, worst_fd, worst_pg) = results
        .into_iter()
        .nth(worst)
        .expect("at least one trajectory");
    Ok(CorrespondenceReport {
        pair,
        eps,
        per_trajectory,
        max_deviation,
        worst_fd,
        worst_pg,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::generate::{random_dag, DagParams};
    use crate::ope::{step_is, traj_is};
    use crate::pg::{reinforce, trajcv_pg, vanilla_pg};

    fn setup(seed: u64) -> (Arc<TabularMdp>, SoftmaxPolicy) {
        let mdp = Arc::new(random_dag(&DagParams::small_stochastic(), seed).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SoftmaxPolicy::random(mdp.num_states(), 2, 1.0, &mut rng);
        (mdp, p)
    }

    #[test]
    fn step_and_traj_is_differentiate_to_vanilla_and_reinforce() {
        let (mdp, p) = setup(1);
        let g = mdp.gamma();
        for (traj, _) in enumerate_trajectories(&mdp, &p).unwrap().iter().step_by(97) {
            let fd = finite_diff_ope_gradient(|t, b, q| step_is(t, b, q, g), traj, &p, 1e-5).unwrap();
            assert!(max_abs_diff(&fd, &vanilla_pg(traj, &p, g)) < 1e-6);
            let fd = finite_diff_ope_gradient(|t, b, q| traj_is(t, b, q, g), traj, &p, 1e-5).unwrap();
            assert!(max_abs_diff(&fd, &reinforce(traj, &p, g)) < 1e-6);
        }
    }

    #[test]
    fn constant_estimator_has_zero_gradient() {
        let (mdp, p) = setup(2);
        let traj = enumerate_trajectories(&mdp, &p).unwrap().remove(0).0;
        let fd = finite_diff_ope_gradient(|_, _, _| Ok(3.25), &traj, &p, 1e-5).unwrap();
        assert_eq!(fd.amax(), 0.0);
    }

    #[test]
    fn bad_epsilon_and_non_finite_values_are_errors() {
        let (mdp, p) = setup(3);
        let traj = enumerate_trajectories(&mdp, &p).unwrap().remove(0).0;
        assert!(matches!(
            finite_diff_ope_gradient(|_, _, _| Ok(0.0), &traj, &p, 0.0),
            Err(Error::InvalidEpsilon(_))
        ));
        assert!(matches!(
            finite_diff_ope_gradient(|_, _, _| Ok(f64::NAN), &traj, &p, 1e-5),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn every_pair_corresponds_pathwise() {
        let (mdp, p) = setup(4);
        for pair in CorrespondencePair::ALL {
            let side = pair.default_side(&mdp, &p, 9).unwrap();
            let report = verify_correspondence(pair, &mdp, &p, &side, DEFAULT_EPS).unwrap();
            assert!(report.passes(1e-6), "{pair}: {}", report.max_deviation);
            assert_eq!(report.per_trajectory.len(), 6912);
        }
    }

    #[test]
    fn frozen_gradients_matter() {
        let (mdp, p) = setup(5);
        let side = CorrespondencePair::DrFrozenDrpg.default_side(&mdp, &p, 3).unwrap();
        let report =
            verify_correspondence(CorrespondencePair::DrFrozenDrpg, &mdp, &p, &side, DEFAULT_EPS)
                .unwrap();
        assert!(report.passes(1e-6));
        let SideInput::Model(m) = &side else { unreachable!() };
        let info = m.evaluate(&p).unwrap();
        let stored = (0..mdp.dim())
            .map(|i| info.q_grad(i / 2, i % 2).amax())
            .fold(0.0, f64::max);
        let mut largest = 0.0f64;
        for (traj, _) in enumerate_trajectories(&mdp, &p).unwrap() {
            let cv = trajcv_pg(&traj, &p, mdp.gamma(), info.q_table()).unwrap();
            let dr = crate::pg::drpg(&traj, &p, mdp.gamma(), &info);
            largest = largest.max(max_abs_diff(&cv, &dr));
        }
        assert!(largest > 0.1 * stored, "{largest} vs {stored}");
    }

    #[test]
    fn halving_eps_quarters_the_error() {
        let (mdp, p) = setup(6);
        let g = mdp.gamma();
        let traj = enumerate_trajectories(&mdp, &p).unwrap().remove(11).0;
        let exact = vanilla_pg(&traj, &p, g);
        let err = |eps: f64| {
            let fd = finite_diff_ope_gradient(|t, b, q| step_is(t, b, q, g), &traj, &p, eps).unwrap();
            max_abs_diff(&fd, &exact)
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn pair_names_roundtrip_and_mismatches_fail() {
        for pair in CorrespondencePair::ALL {
            assert_eq!(pair.name().parse::<CorrespondencePair>().unwrap(), pair);
        }
        assert!(matches!(
            "nope".parse::<CorrespondencePair>(),
            Err(Error::Unknown { .. })
        ));
        assert!(CorrespondencePair::DrExactDrpg
            .estimators(&SideInput::Model(QModel::zero()))
            .is_err());
    }

    #[test]
    fn report_is_schedule_independent() {
        let (mdp, p) = setup(7);
        let side = CorrespondencePair::DrExactDrpg.default_side(&mdp, &p, 1).unwrap();
        let a = verify_correspondence(CorrespondencePair::DrExactDrpg, &mdp, &p, &side, 1e-5).unwrap();
        let b = verify_correspondence(CorrespondencePair::DrExactDrpg, &mdp, &p, &side, 1e-5).unwrap();
        assert_eq!(a.per_trajectory, b.per_trajectory);
        assert_eq!(a.worst_fd, b.worst_fd);
    }
}
