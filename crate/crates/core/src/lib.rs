//! Exact-enumeration laboratory for off-policy evaluation (OPE) and
//! policy-gradient (PG) estimators on small layered MDPs.
//!
//! Every OPE estimator has a PG counterpart obtained by differentiating it
//! with respect to the target policy. This crate implements both families on
//! tabular MDPs small enough to enumerate every trajectory, so that
//! unbiasedness, pathwise finite-difference correspondences, covariance
//! decompositions and Cramér–Rao bounds can be checked as float-precision
//! identities instead of statistical claims.
//!
//! Module map:
//!
//! - [`mdp`]: layered MDPs, sampling, enumeration and DP oracles.
//! - [`policy`]: tabular softmax policies.
//! - [`qmodel`]: approximate value side information with selectable θ-dependence.
//! - [`ope`]: trajectory/step IS, baseline, doubly robust and actor-critic OPE.
//! - [`pg`]: REINFORCE, vanilla, baseline, DR-PG, trajectory-CV and actor-critic PG.
//! - [`finite_diff`]: numerical differentiation of OPE estimators against PG estimators.
//! - [`variance`]: brute-force, Monte Carlo and closed-form covariance.
//! - [`cr_bound`]: Cramér–Rao lower bounds for tree and DAG MDPs.
//! - [`generate`] and [`harness`]: MDP generators and the batch experiment runner.

pub mod cr_bound;
pub mod error;
pub mod finite_diff;
pub mod generate;
pub mod harness;
pub mod linalg;
pub mod mdp;
pub mod ope;
pub mod pg;
pub mod policy;
pub mod qmodel;
pub mod variance;

pub use error::{Error, Result};
pub use linalg::{Covariance, Gradient};
pub use mdp::{Step, TabularMdp, Trajectory, ValueTables, TERMINAL};
pub use policy::SoftmaxPolicy;
pub use qmodel::{QModel, SideInfo};
