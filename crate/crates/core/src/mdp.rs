//! Layered finite-horizon MDPs with finite-support rewards.
//!
//! Every state belongs to exactly one time step (its layer), transitions go
//! from layer t to layer t+1, and layer-T states end the episode. The
//! absorbing state after layer T is implicit: it is addressed as
//! [`TERMINAL`] and every value model evaluates to zero there.
//!
//! Besides sampling, this module provides the exact oracles everything else
//! is checked against: full trajectory enumeration, backward-induction value
//! tables, and the exact policy gradient.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Gradient;
use crate::policy::SoftmaxPolicy;

/// Index used for the implicit absorbing state that follows layer T.
pub const TERMINAL: usize = usize::MAX;

pub const DEFAULT_ENUMERATION_CAP: usize = 10_000_000;

/// Environment variable overriding [`DEFAULT_ENUMERATION_CAP`].
pub const ENUMERATION_CAP_ENV: &str = "PGOPE_ENUMERATION_CAP";

const PROB_TOL: f64 = 1e-12;

/// Enumeration cap in effect: the environment override if it parses,
/// otherwise the default.
pub fn enumeration_cap() -> usize {
    std::env::var(ENUMERATION_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_ENUMERATION_CAP)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Successor {
    pub state: usize,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardAtom {
    pub value: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    start_state: usize,
    layer_of: Vec<usize>,
    transitions: Vec<Vec<Successor>>,
    rewards: Vec<Vec<RewardAtom>>,
    layers: Vec<Vec<usize>>,
}

impl TabularMdp {
    pub fn builder(num_states: usize, num_actions: usize, horizon: usize) -> MdpBuilder {
        MdpBuilder::new(num_states, num_actions, horizon)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// T: the last decision step. Episodes have T+1 steps.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    /// Number of policy parameters for a tabular policy on this MDP.
    pub fn dim(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn layer_of(&self, s: usize) -> usize {
        self.layer_of[s]
    }

    pub fn states_in_layer(&self, t: usize) -> &[usize] {
        &self.layers[t]
    }

    /// Successor distribution; empty for layer-T states.
    pub fn transitions(&self, s: usize, a: usize) -> &[Successor] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn rewards(&self, s: usize, a: usize) -> &[RewardAtom] {
        &self.rewards[s * self.num_actions + a]
    }

    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.rewards(s, a).iter().map(|r| r.p * r.value).sum()
    }

    pub fn reward_variance(&self, s: usize, a: usize) -> f64 {
        let mean = self.mean_reward(s, a);
        self.rewards(s, a)
            .iter()
            .map(|r| r.p * (r.value - mean).powi(2))
            .sum()
    }

    /// True when every positive-probability transition and reward is a point mass.
    pub fn is_deterministic(&self) -> bool {
        let point = |n: usize| n <= 1;
        self.transitions
            .iter()
            .all(|t| point(t.iter().filter(|x| x.p > 0.0).count()))
            && self
                .rewards
                .iter()
                .all(|r| point(r.iter().filter(|x| x.p > 0.0).count()))
    }

    /// γ^t, using exact integer powers.
    pub fn discount(&self, t: usize) -> f64 {
        self.gamma.powi(t as i32)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks the trajectory invariants: starts at s₀, layer_of(s_t) = t and
    /// every step has positive probability under the dynamics.
    pub fn validate_trajectory(&self, traj: &Trajectory) -> Result<()> {
        let steps = traj.steps();
        if steps.len() != self.horizon + 1 {
            return Err(Error::InvalidParameter(format!(
                "trajectory has {} steps, expected {}",
                steps.len(),
                self.horizon + 1
            )));
        }
        if steps[0].state != self.start_state {
            return Err(Error::InvalidParameter("trajectory does not start at s0".into()));
        }
        for (t, step) in steps.iter().enumerate() {
            if step.state >= self.num_states || step.action >= self.num_actions {
                return Err(Error::InvalidParameter(format!("step {t} is out of range")));
            }
            if self.layer_of[step.state] != t {
                return Err(Error::InvalidParameter(format!(
                    "state {} at step {t} belongs to layer {}",
                    step.state, self.layer_of[step.state]
                )));
            }
            let reward_ok = self
                .rewards(step.state, step.action)
                .iter()
                .any(|r| r.p > 0.0 && r.value == step.reward);
            if !reward_ok {
                return Err(Error::InvalidParameter(format!(
                    "reward {} has zero probability at step {t}",
                    step.reward
                )));
            }
            if let Some(next) = steps.get(t + 1) {
                let reachable = self
                    .transitions(step.state, step.action)
                    .iter()
                    .any(|x| x.p > 0.0 && x.state == next.state);
                if !reachable {
                    return Err(Error::InvalidParameter(format!(
                        "transition {} -> {} has zero probability",
                        step.state, next.state
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of positive-probability trajectories under a full-support policy.
    pub fn support_size(&self) -> u128 {
        let mut count = vec![0u128; self.num_states];
        for t in (0..=self.horizon).rev() {
            for &s in &self.layers[t] {
                let mut total = 0u128;
                for a in 0..self.num_actions {
                    let rewards = self.rewards(s, a).iter().filter(|r| r.p > 0.0).count() as u128;
                    let tail = if t == self.horizon {
                        1
                    } else {
                        self.transitions(s, a)
                            .iter()
                            .filter(|x| x.p > 0.0)
                            .fold(0u128, |acc, x| acc.saturating_add(count[x.state]))
                    };
                    total = total.saturating_add(rewards.saturating_mul(tail));
                }
                count[s] = total;
            }
        }
        count[self.start_state]
    }

    pub(crate) fn check_policy(&self, policy: &SoftmaxPolicy) -> Result<()> {
        policy.check_shape(self.num_states, self.num_actions)
    }
}

/// Incremental constructor; `build` runs every structural check.
#[derive(Clone, Debug)]
pub struct MdpBuilder {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    start_state: usize,
    layer_of: Vec<usize>,
    transitions: Vec<Option<Vec<Successor>>>,
    rewards: Vec<Option<Vec<RewardAtom>>>,
}

impl MdpBuilder {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            gamma: 1.0,
            start_state: 0,
            layer_of: vec![0; num_states],
            transitions: vec![None; num_states * num_actions],
            rewards: vec![None; num_states * num_actions],
        }
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn start_state(mut self, s: usize) -> Self {
        self.start_state = s;
        self
    }

    pub fn layer_of(mut self, layer_of: Vec<usize>) -> Self {
        self.layer_of = layer_of;
        self
    }

    pub fn transition(mut self, s: usize, a: usize, next: Vec<Successor>) -> Self {
        self.set_transition(s, a, next);
        self
    }

    pub fn reward(mut self, s: usize, a: usize, support: Vec<RewardAtom>) -> Self {
        self.set_reward(s, a, support);
        self
    }

    pub fn set_transition(&mut self, s: usize, a: usize, next: Vec<Successor>) {
        let i = s * self.num_actions + a;
        if i < self.transitions.len() {
            self.transitions[i] = Some(next);
        }
    }

    pub fn set_reward(&mut self, s: usize, a: usize, support: Vec<RewardAtom>) {
        let i = s * self.num_actions + a;
        if i < self.rewards.len() {
            self.rewards[i] = Some(support);
        }
    }

    pub fn build(self) -> Result<TabularMdp> {
        let Self {
            num_states,
            num_actions,
            horizon,
            gamma,
            start_state,
            layer_of,
            transitions,
            rewards,
        } = self;
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if layer_of.len() != num_states {
            return Err(Error::DimensionMismatch {
                what: "layer_of",
                expected: num_states,
                got: layer_of.len(),
            });
        }
        if start_state >= num_states {
            return Err(Error::InvalidMdp(format!("start state {start_state} out of range")));
        }
        if layer_of[start_state] != 0 {
            return Err(Error::InvalidMdp("start state must be in layer 0".into()));
        }
        if let Some(s) = layer_of.iter().position(|&l| l > horizon) {
            return Err(Error::InvalidMdp(format!(
                "state {s} has layer {} beyond horizon {horizon}",
                layer_of[s]
            )));
        }

        let mut trans_out = Vec::with_capacity(transitions.len());
        let mut reward_out = Vec::with_capacity(rewards.len());
        for s in 0..num_states {
            for a in 0..num_actions {
                let i = s * num_actions + a;
                let support = rewards[i].clone().ok_or_else(|| Error::BadDistribution {
                    what: "reward",
                    state: s,
                    action: a,
                    reason: "missing".into(),
                })?;
                check_distribution("reward", s, a, support.iter().map(|r| r.p))?;
                if let Some(r) = support.iter().find(|r| !r.value.is_finite()) {
                    return Err(Error::BadDistribution {
                        what: "reward",
                        state: s,
                        action: a,
                        reason: format!("non-finite value {}", r.value),
                    });
                }
                reward_out.push(support);

                let next = transitions[i].clone().unwrap_or_default();
                let layer = layer_of[s];
                if layer == horizon {
                    if next.iter().any(|x| x.p > 0.0) {
                        return Err(Error::BadDistribution {
                            what: "transition",
                            state: s,
                            action: a,
                            reason: "layer-T states end the episode".into(),
                        });
                    }
                    trans_out.push(Vec::new());
                    continue;
                }
                check_distribution("transition", s, a, next.iter().map(|x| x.p))?;
                for x in &next {
                    if x.state >= num_states {
                        return Err(Error::BadDistribution {
                            what: "transition",
                            state: s,
                            action: a,
                            reason: format!("successor {} out of range", x.state),
                        });
                    }
                    if x.p > 0.0 && layer_of[x.state] != layer + 1 {
                        return Err(Error::BadDistribution {
                            what: "transition",
                            state: s,
                            action: a,
                            reason: format!(
                                "successor {} is in layer {}, expected {}",
                                x.state,
                                layer_of[x.state],
                                layer + 1
                            ),
                        });
                    }
                }
                trans_out.push(next);
            }
        }

        let mut layers = vec![Vec::new(); horizon + 1];
        for (s, &l) in layer_of.iter().enumerate() {
            layers[l].push(s);
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            horizon,
            gamma,
            start_state,
            layer_of,
            transitions: trans_out,
            rewards: reward_out,
            layers,
        })
    }
}

fn check_distribution(
    what: &'static str,
    state: usize,
    action: usize,
    probs: impl Iterator<Item = f64>,
) -> Result<()> {
    let mut total = 0.0;
    let mut any = false;
    for p in probs {
        any = true;
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::BadDistribution {
                what,
                state,
                action,
                reason: format!("probability {p} is not a finite nonnegative number"),
            });
        }
        total += p;
    }
    if !any {
        return Err(Error::BadDistribution {
            what,
            state,
            action,
            reason: "empty support".into(),
        });
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::BadDistribution {
            what,
            state,
            action,
            reason: format!("probabilities sum to {total}"),
        });
    }
    Ok(())
}

// On-disk JSON layout.

#[derive(Serialize, Deserialize)]
struct MdpFile {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    start_state: usize,
    layer_of: Vec<usize>,
    transitions: Vec<TransitionEntry>,
    rewards: Vec<RewardEntry>,
}

#[derive(Serialize, Deserialize)]
struct TransitionEntry {
    s: usize,
    a: usize,
    next: Vec<Successor>,
}

#[derive(Serialize, Deserialize)]
struct RewardEntry {
    s: usize,
    a: usize,
    support: Vec<RewardAtom>,
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = Error;

    fn try_from(file: MdpFile) -> Result<Self> {
        let mut b = MdpBuilder::new(file.num_states, file.num_actions, file.horizon)
            .gamma(file.gamma)
            .start_state(file.start_state)
            .layer_of(file.layer_of);
        for e in file.transitions {
            if e.s >= file.num_states || e.a >= file.num_actions {
                return Err(Error::InvalidMdp(format!(
                    "transition entry (s={}, a={}) out of range",
                    e.s, e.a
                )));
            }
            b.set_transition(e.s, e.a, e.next);
        }
        for e in file.rewards {
            if e.s >= file.num_states || e.a >= file.num_actions {
                return Err(Error::InvalidMdp(format!(
                    "reward entry (s={}, a={}) out of range",
                    e.s, e.a
                )));
            }
            b.set_reward(e.s, e.a, e.support);
        }
        b.build()
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..m.num_states {
            for a in 0..m.num_actions {
                let i = s * m.num_actions + a;
                if m.layer_of[s] < m.horizon {
                    transitions.push(TransitionEntry {
                        s,
                        a,
                        next: m.transitions[i].clone(),
                    });
                }
                rewards.push(RewardEntry {
                    s,
                    a,
                    support: m.rewards[i].clone(),
                });
            }
        }
        MdpFile {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            gamma: m.gamma,
            start_state: m.start_state,
            layer_of: m.layer_of,
            transitions,
            rewards,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// One episode s₀, a₀, r₀, …, s_T, a_T, r_T.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>) -> Self {
        assert!(!steps.is_empty(), "a trajectory has at least one step");
        Self { steps }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// s_{t+1}, or [`TERMINAL`] after the last step.
    pub fn state_after(&self, t: usize) -> usize {
        self.steps.get(t + 1).map_or(TERMINAL, |x| x.state)
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 1.0;
        let mut total = 0.0;
        for step in &self.steps {
            total += g * step.reward;
            g *= gamma;
        }
        total
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Samples one on-policy trajectory; deterministic given the RNG state.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    rng: &mut R,
) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    let mut steps = Vec::with_capacity(mdp.horizon + 1);
    let mut s = mdp.start_state;
    for t in 0..=mdp.horizon {
        let a = draw(rng, policy.action_probs(s).iter().copied());
        let rewards = mdp.rewards(s, a);
        let r = rewards[draw(rng, rewards.iter().map(|x| x.p))].value;
        steps.push(Step {
            state: s,
            action: a,
            reward: r,
        });
        if t < mdp.horizon {
            let next = mdp.transitions(s, a);
            s = next[draw(rng, next.iter().map(|x| x.p))].state;
        }
    }
    Ok(Trajectory { steps })
}

/// Visits every positive-probability trajectory with its probability, in a
/// fixed depth-first order (actions, then rewards, then successors, each in
/// table order).
pub fn for_each_trajectory<F>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    cap: usize,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&[Step], f64),
{
    mdp.check_policy(policy)?;
    let size = mdp.support_size();
    if size > cap as u128 {
        return Err(Error::SupportCapExceeded { size, cap });
    }
    let mut steps = Vec::with_capacity(mdp.horizon + 1);
    walk(mdp, policy, mdp.start_state, 1.0, &mut steps, &mut visit);
    Ok(())
}

fn walk<F>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    s: usize,
    prob: f64,
    steps: &mut Vec<Step>,
    visit: &mut F,
) where
    F: FnMut(&[Step], f64),
{
    let last = steps.len() == mdp.horizon;
    for a in 0..mdp.num_actions {
        let pa = prob * policy.prob(s, a);
        for r in mdp.rewards(s, a).iter().filter(|r| r.p > 0.0) {
            let pr = pa * r.p;
            steps.push(Step {
                state: s,
                action: a,
                reward: r.value,
            });
            if last {
                visit(steps, pr);
            } else {
                for x in mdp.transitions(s, a).iter().filter(|x| x.p > 0.0) {
                    walk(mdp, policy, x.state, pr * x.p, steps, visit);
                }
            }
            steps.pop();
        }
    }
}

/// Every positive-probability trajectory with its probability, using the
/// cap from [`enumeration_cap`].
pub fn enumerate_trajectories(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<Vec<(Trajectory, f64)>> {
    enumerate_trajectories_with_cap(mdp, policy, enumeration_cap())
}

pub fn enumerate_trajectories_with_cap(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    cap: usize,
) -> Result<Vec<(Trajectory, f64)>> {
    let mut out = Vec::new();
    for_each_trajectory(mdp, policy, cap, |steps, p| {
        out.push((
            Trajectory {
                steps: steps.to_vec(),
            },
            p,
        ))
    })?;
    Ok(out)
}

/// Exact V^π and Q^π by backward induction over layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables {
    num_actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTables {
    /// V(s); zero at [`TERMINAL`].
    pub fn v(&self, s: usize) -> f64 {
        if s == TERMINAL {
            0.0
        } else {
            self.v[s]
        }
    }

    /// Q(s, a); zero at [`TERMINAL`].
    pub fn q(&self, s: usize, a: usize) -> f64 {
        if s == TERMINAL {
            0.0
        } else {
            self.q[s * self.num_actions + a]
        }
    }

    pub fn v_table(&self) -> &[f64] {
        &self.v
    }

    pub fn q_table(&self) -> &[f64] {
        &self.q
    }
}

pub fn value_tables(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<ValueTables> {
    mdp.check_policy(policy)?;
    let na = mdp.num_actions;
    let mut v = vec![0.0; mdp.num_states];
    let mut q = vec![0.0; mdp.num_states * na];
    for t in (0..=mdp.horizon).rev() {
        for &s in &mdp.layers[t] {
            let mut vs = 0.0;
            for a in 0..na {
                let cont: f64 = mdp.transitions(s, a).iter().map(|x| x.p * v[x.state]).sum();
                let qa = mdp.mean_reward(s, a) + mdp.gamma * cont;
                q[s * na + a] = qa;
                vs += policy.prob(s, a) * qa;
            }
            v[s] = vs;
        }
    }
    Ok(ValueTables {
        num_actions: na,
        v,
        q,
    })
}

/// J(π) = V^π(s₀).
pub fn exact_return(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<f64> {
    Ok(value_tables(mdp, policy)?.v(mdp.start_state))
}

/// Exact ∇θ V^π(s) and ∇θ Q^π(s, a) by backward induction:
/// ∇Q(s,a) = γ Σ P(s'|s,a) ∇V(s'), ∇V(s) = Σ_a ∇π(a|s) Q(s,a) + π(a|s) ∇Q(s,a).
#[derive(Clone, Debug)]
pub struct ValueGradients {
    num_actions: usize,
    zero: Gradient,
    v_grad: Vec<Gradient>,
    q_grad: Vec<Gradient>,
}

impl ValueGradients {
    pub fn v_grad(&self, s: usize) -> &Gradient {
        if s == TERMINAL {
            &self.zero
        } else {
            &self.v_grad[s]
        }
    }

    pub fn q_grad(&self, s: usize, a: usize) -> &Gradient {
        if s == TERMINAL {
            &self.zero
        } else {
            &self.q_grad[s * self.num_actions + a]
        }
    }

    pub(crate) fn into_q_grads(self) -> Vec<Gradient> {
        self.q_grad
    }
}

pub fn value_gradients(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    values: &ValueTables,
) -> Result<ValueGradients> {
    mdp.check_policy(policy)?;
    let na = mdp.num_actions;
    let d = mdp.dim();
    let mut v_grad = vec![Gradient::zeros(d); mdp.num_states];
    let mut q_grad = vec![Gradient::zeros(d); mdp.num_states * na];
    for t in (0..=mdp.horizon).rev() {
        for &s in &mdp.layers[t] {
            let mut vg = Gradient::zeros(d);
            for a in 0..na {
                let mut qg = Gradient::zeros(d);
                for x in mdp.transitions(s, a) {
                    qg.axpy(mdp.gamma * x.p, &v_grad[x.state], 1.0);
                }
                policy.add_grad_prob(s, a, values.q(s, a), &mut vg);
                vg.axpy(policy.prob(s, a), &qg, 1.0);
                q_grad[s * na + a] = qg;
            }
            v_grad[s] = vg;
        }
    }
    Ok(ValueGradients {
        num_actions: na,
        zero: Gradient::zeros(d),
        v_grad,
        q_grad,
    })
}

/// ∇θ J(π_θ) as the exact expectation of
/// Σ_t ∇log π(a_t|s_t) Σ_{t'≥t} γ^{t'} r_{t'} over enumerated trajectories.
pub fn exact_policy_gradient(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<Gradient> {
    let mut grad = Gradient::zeros(mdp.dim());
    let mut tail = vec![0.0; mdp.horizon + 2];
    for_each_trajectory(mdp, policy, enumeration_cap(), |steps, p| {
        for t in (0..steps.len()).rev() {
            tail[t] = mdp.discount(t) * steps[t].reward + tail[t + 1];
        }
        for (t, step) in steps.iter().enumerate() {
            policy.add_grad_log_prob(step.state, step.action, p * tail[t], &mut grad);
        }
    })?;
    Ok(grad)
}

/// Positive-probability state-action histories, without rewards. Each node is
/// visited once when its state is reached (`on_state`) and once per action
/// taken there (`on_action`); `score` is Σ ∇log π over the actions already
/// taken, so at `on_action` it includes the current action.
pub(crate) struct HistoryVisitor<'a> {
    pub on_state: &'a mut dyn FnMut(usize, usize, f64, &Gradient),
    pub on_action: &'a mut dyn FnMut(usize, usize, usize, f64, &Gradient),
}

pub(crate) fn walk_histories(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    visitor: &mut HistoryVisitor<'_>,
) -> Result<()> {
    mdp.check_policy(policy)?;
    let cap = enumeration_cap();
    let size = mdp.support_size();
    if size > cap as u128 {
        return Err(Error::SupportCapExceeded { size, cap });
    }
    let score = Gradient::zeros(mdp.dim());
    history_node(mdp, policy, 0, mdp.start_state, 1.0, &score, visitor);
    Ok(())
}

fn history_node(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    t: usize,
    s: usize,
    prob: f64,
    score: &Gradient,
    visitor: &mut HistoryVisitor<'_>,
) {
    (visitor.on_state)(t, s, prob, score);
    for a in 0..mdp.num_actions {
        let pa = prob * policy.prob(s, a);
        let mut next_score = score.clone();
        policy.add_grad_log_prob(s, a, 1.0, &mut next_score);
        (visitor.on_action)(t, s, a, pa, &next_score);
        if t < mdp.horizon {
            for x in mdp.transitions(s, a).iter().filter(|x| x.p > 0.0) {
                history_node(mdp, policy, t + 1, x.state, pa * x.p, &next_score, visitor);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(state: usize) -> Vec<Successor> {
        vec![Successor { state, p: 1.0 }]
    }

    fn point(value: f64) -> Vec<RewardAtom> {
        vec![RewardAtom { value, p: 1.0 }]
    }

    /// One state per layer, `na` actions all leading to the next layer.
    fn chain(horizon: usize, na: usize, gamma: f64, reward: f64) -> TabularMdp {
        let n = horizon + 1;
        let mut b = TabularMdp::builder(n, na, horizon)
            .gamma(gamma)
            .layer_of((0..n).collect());
        for s in 0..n {
            for a in 0..na {
                b.set_reward(s, a, point(reward));
                if s < horizon {
                    b.set_transition(s, a, det(s + 1));
                }
            }
        }
        b.build().unwrap()
    }

    /// s0 → {s1, s2} stochastically, then s1/s2 → {s3, s4}; rewards 2-point.
    fn stochastic_three_layer() -> TabularMdp {
        let mut b = TabularMdp::builder(5, 2, 2)
            .gamma(0.9)
            .layer_of(vec![0, 1, 1, 2, 2]);
        let mut k = 0.0;
        for s in 0..5 {
            for a in 0..2 {
                k += 1.0;
                b.set_reward(
                    s,
                    a,
                    vec![
                        RewardAtom { value: k, p: 0.3 },
                        RewardAtom { value: -0.5 * k, p: 0.7 },
                    ],
                );
            }
        }
        b.set_transition(0, 0, vec![Successor { state: 1, p: 0.25 }, Successor { state: 2, p: 0.75 }]);
        b.set_transition(0, 1, vec![Successor { state: 1, p: 0.6 }, Successor { state: 2, p: 0.4 }]);
        for s in [1, 2] {
            b.set_transition(s, 0, vec![Successor { state: 3, p: 0.5 }, Successor { state: 4, p: 0.5 }]);
            b.set_transition(s, 1, det(3 + (s - 1)));
        }
        b.build().unwrap()
    }

    fn random_policy(mdp: &TabularMdp, seed: u64) -> SoftmaxPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SoftmaxPolicy::random(mdp.num_states(), mdp.num_actions(), 1.0, &mut rng)
    }

    #[test]
    fn single_action_chain_has_one_trajectory() {
        let mdp = chain(2, 1, 0.9, 1.0);
        let pol = SoftmaxPolicy::uniform(3, 1);
        let all = enumerate_trajectories(&mdp, &pol).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].1, 1.0);
    }

    #[test]
    fn two_action_uniform_has_four_equal_trajectories() {
        let mdp = chain(1, 2, 1.0, 0.0);
        let pol = SoftmaxPolicy::uniform(2, 2);
        let all = enumerate_trajectories(&mdp, &pol).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|(_, p)| *p == 0.25));
    }

    #[test]
    fn enumeration_is_complete_and_layered() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 1);
        let all = enumerate_trajectories(&mdp, &pol).unwrap();
        assert_eq!(all.len() as u128, mdp.support_size());
        let total: f64 = all.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-10);
        for (traj, _) in &all {
            mdp.validate_trajectory(traj).unwrap();
        }
        let mut seen: Vec<_> = all.iter().map(|(t, _)| format!("{:?}", t.steps())).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), all.len());
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 1);
        let err = enumerate_trajectories_with_cap(&mdp, &pol, 10).unwrap_err();
        assert!(matches!(err, Error::SupportCapExceeded { cap: 10, .. }));
    }

    #[test]
    fn constant_reward_geometric_sum() {
        let c = 1.5;
        let mdp = chain(3, 2, 0.8, c);
        let pol = random_policy(&mdp, 4);
        let expected = c * (1.0 - 0.8f64.powi(4)) / (1.0 - 0.8);
        assert!((exact_return(&mdp, &pol).unwrap() - expected).abs() < 1e-12);

        let undiscounted = chain(3, 2, 1.0, c);
        let pol = random_policy(&undiscounted, 4);
        assert!((exact_return(&undiscounted, &pol).unwrap() - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn dp_matches_enumeration() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 2);
        let all = enumerate_trajectories(&mdp, &pol).unwrap();
        let mc: f64 = all
            .iter()
            .map(|(t, p)| p * t.discounted_return(mdp.gamma()))
            .sum();
        let tables = value_tables(&mdp, &pol).unwrap();
        assert_eq!(exact_return(&mdp, &pol).unwrap(), tables.v(0));
        assert!((mc - tables.v(0)).abs() < 1e-12);

        // V at a layer-1 state via enumeration conditioned on s1.
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, p) in &all {
            if t.steps()[1].state == 1 {
                let tail: f64 = t.steps()[1..]
                    .iter()
                    .enumerate()
                    .map(|(k, x)| mdp.gamma().powi(k as i32) * x.reward)
                    .sum();
                num += p * tail;
                den += p;
            }
        }
        assert!((num / den - tables.v(1)).abs() < 1e-12);
    }

    #[test]
    fn last_layer_q_is_mean_reward_and_terminal_is_zero() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 3);
        let tables = value_tables(&mdp, &pol).unwrap();
        for s in [3, 4] {
            for a in 0..2 {
                assert_eq!(tables.q(s, a), mdp.mean_reward(s, a));
            }
        }
        assert_eq!(tables.v(TERMINAL), 0.0);
        assert_eq!(tables.q(TERMINAL, 1), 0.0);
        for s in 0..5 {
            let v: f64 = (0..2).map(|a| pol.prob(s, a) * tables.q(s, a)).sum();
            assert!((v - tables.v(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_state_policy_does_not_change_return() {
        // State 2 sits in layer 1 but nothing transitions into it.
        let mut b = TabularMdp::builder(3, 2, 1).gamma(1.0).layer_of(vec![0, 1, 1]);
        for s in 0..3 {
            for a in 0..2 {
                b.set_reward(s, a, point((s + a) as f64));
            }
        }
        b.set_transition(0, 0, det(1));
        b.set_transition(0, 1, det(1));
        let mdp = b.build().unwrap();
        let pol = random_policy(&mdp, 8);
        let changed = pol.with_state_logits(2, &[5.0, -5.0]).unwrap();
        assert_eq!(
            exact_return(&mdp, &pol).unwrap(),
            exact_return(&mdp, &changed).unwrap()
        );
        let g = exact_policy_gradient(&mdp, &pol).unwrap();
        assert_eq!(g[pol.index(2, 0)], 0.0);
        assert_eq!(g[pol.index(2, 1)], 0.0);
    }

    #[test]
    fn single_action_gradient_is_zero() {
        let mdp = chain(2, 1, 0.9, 2.0);
        let pol = SoftmaxPolicy::uniform(3, 1);
        assert_eq!(exact_policy_gradient(&mdp, &pol).unwrap().amax(), 0.0);
    }

    #[test]
    fn policy_gradient_matches_finite_differences_and_dp() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 9);
        let g = exact_policy_gradient(&mdp, &pol).unwrap();
        let eps = 1e-5;
        for i in 0..pol.dim() {
            let up = exact_return(&mdp, &pol.perturb(i, eps).unwrap()).unwrap();
            let down = exact_return(&mdp, &pol.perturb(i, -eps).unwrap()).unwrap();
            assert!(((up - down) / (2.0 * eps) - g[i]).abs() < 1e-6, "coordinate {i}");
        }
        let tables = value_tables(&mdp, &pol).unwrap();
        let grads = value_gradients(&mdp, &pol, &tables).unwrap();
        assert!(crate::linalg::max_abs_diff(grads.v_grad(0), &g) < 1e-12);
    }

    #[test]
    fn q_gradients_match_finite_differences() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 10);
        let tables = value_tables(&mdp, &pol).unwrap();
        let grads = value_gradients(&mdp, &pol, &tables).unwrap();
        let eps = 1e-5;
        for i in 0..pol.dim() {
            let up = value_tables(&mdp, &pol.perturb(i, eps).unwrap()).unwrap();
            let down = value_tables(&mdp, &pol.perturb(i, -eps).unwrap()).unwrap();
            for s in 0..mdp.num_states() {
                for a in 0..2 {
                    let fd = (up.q(s, a) - down.q(s, a)) / (2.0 * eps);
                    assert!((fd - grads.q_grad(s, a)[i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_single_support_exact() {
        let mdp = chain(3, 2, 0.9, 1.0);
        let logits: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 40.0 } else { -40.0 }).collect();
        let pol = SoftmaxPolicy::new(4, 2, logits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = sample_trajectory(&mdp, &pol, &mut rng).unwrap();
        assert!(traj.steps().iter().all(|s| s.action == 0));
        assert_eq!(traj.steps().iter().map(|s| s.state).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 2);
        let a = sample_trajectory(&mdp, &pol, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_trajectory(&mdp, &pol, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        mdp.validate_trajectory(&a).unwrap();
    }

    #[test]
    fn sampled_visit_frequencies_match_enumeration() {
        let mdp = stochastic_three_layer();
        let pol = random_policy(&mdp, 6);
        let mut expected = vec![0.0; mdp.num_states()];
        for (t, p) in enumerate_trajectories(&mdp, &pol).unwrap() {
            for step in t.steps() {
                expected[step.state] += p;
            }
        }
        let n = 100_000;
        let mut counts = vec![0usize; mdp.num_states()];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..n {
            for step in sample_trajectory(&mdp, &pol, &mut rng).unwrap().steps() {
                counts[step.state] += 1;
            }
        }
        for s in 0..mdp.num_states() {
            let p = expected[s];
            let sigma = (p * (1.0 - p)).max(0.0).sqrt() / (n as f64).sqrt();
            let freq = counts[s] as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * sigma + 1e-9, "state {s}: {freq} vs {p}");
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let mdp = stochastic_three_layer();
        let text = mdp.to_json_string();
        assert_eq!(TabularMdp::from_json_str(&text).unwrap(), mdp);

        let broken = text.replacen("\"p\": 0.25", "\"p\": 0.35", 1);
        let err = TabularMdp::from_json_str(&broken).unwrap_err();
        assert!(err.to_string().contains("(s=0, a=0)"), "{err}");
    }

    #[test]
    fn rejects_layer_violations() {
        let mut b = TabularMdp::builder(3, 1, 2).layer_of(vec![0, 1, 2]);
        for s in 0..3 {
            b.set_reward(s, 0, point(0.0));
        }
        b.set_transition(0, 0, det(2));
        b.set_transition(1, 0, det(2));
        assert!(matches!(b.build(), Err(Error::BadDistribution { state: 0, .. })));
    }
}
