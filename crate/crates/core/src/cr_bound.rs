//! Cramér–Rao lower bounds on the per-coordinate variance of unbiased
//! policy-gradient estimators.
//!
//! [`dag_cr_bound`] applies to any layered MDP. [`tree_cr_bound`] is its
//! specialization to MDPs in which every reachable state has a unique
//! root path, and there the doubly robust gradient with exact side
//! information attains it.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::Gradient;
use crate::mdp::{
    value_gradients, value_tables, walk_histories, HistoryVisitor, TabularMdp, ValueGradients,
    ValueTables,
};
use crate::policy::SoftmaxPolicy;

/// Why an MDP is not tree-structured.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeRejection {
    pub state: usize,
    pub parents: Vec<(usize, usize)>,
}

impl fmt::Display for TreeRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "state {} is reachable from {} (state, action) pairs: {:?}",
            self.state,
            self.parents.len(),
            self.parents
        )
    }
}

impl std::error::Error for TreeRejection {}

/// Proof that every reachable state has exactly one root path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeCertificate {
    parent: Vec<Option<(usize, usize)>>,
    reachable: Vec<bool>,
}

impl TreeCertificate {
    /// The unique (state, action) leading to `s`; `None` for the start state
    /// and unreachable states.
    pub fn parent(&self, s: usize) -> Option<(usize, usize)> {
        self.parent[s]
    }

    pub fn is_reachable(&self, s: usize) -> bool {
        self.reachable[s]
    }

    /// The (state, action) pairs from the start state down to `s`'s parent.
    pub fn root_path(&self, s: usize) -> Vec<(usize, usize)> {
        let mut path = Vec::new();
        let mut cur = s;
        while let Some((p, a)) = self.parent[cur] {
            path.push((p, a));
            cur = p;
        }
        path.reverse();
        path
    }
}

/// Checks that each state reachable from s₀ has exactly one reachable
/// (state, action) parent with positive transition probability. Unreachable
/// states are ignored.
pub fn check_tree(mdp: &TabularMdp) -> std::result::Result<TreeCertificate, TreeRejection> {
    let n = mdp.num_states();
    let mut reachable = vec![false; n];
    let mut parents: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    reachable[mdp.start_state()] = true;
    for t in 0..=mdp.horizon() {
        for &s in mdp.states_in_layer(t) {
            if !reachable[s] {
                continue;
            }
            for a in 0..mdp.num_actions() {
                for x in mdp.transitions(s, a).iter().filter(|x| x.p > 0.0) {
                    reachable[x.state] = true;
                    parents[x.state].push((s, a));
                }
            }
        }
    }
    let mut parent = vec![None; n];
    for s in 0..n {
        if !reachable[s] || s == mdp.start_state() {
            continue;
        }
        match parents[s].as_slice() {
            [only] => parent[s] = Some(*only),
            _ => {
                return Err(TreeRejection {
                    state: s,
                    parents: parents[s].clone(),
                })
            }
        }
    }
    Ok(TreeCertificate { parent, reachable })
}

/// Per-coordinate variance of G·V(s') + ∇V(s') over s' ∼ P(·|s, a).
fn successor_variance(
    mdp: &TabularMdp,
    tables: &ValueTables,
    grads: &ValueGradients,
    s: usize,
    a: usize,
    score: &Gradient,
) -> Gradient {
    let next = mdp.transitions(s, a);
    let ys: Vec<Gradient> = next
        .iter()
        .map(|x| score * tables.v(x.state) + grads.v_grad(x.state))
        .collect();
    let mut mean = Gradient::zeros(score.len());
    for (x, y) in next.iter().zip(&ys) {
        mean.axpy(x.p, y, 1.0);
    }
    let mut var = Gradient::zeros(score.len());
    for (x, y) in next.iter().zip(&ys) {
        let c = y - &mean;
        var.axpy(x.p, &c.component_mul(&c), 1.0);
    }
    var
}

fn check_coord(policy: &SoftmaxPolicy, i: usize) -> Result<()> {
    if i < policy.dim() {
        Ok(())
    } else {
        Err(Error::CoordinateOutOfRange {
            index: i,
            dim: policy.dim(),
        })
    }
}

/// The tree bound for every coordinate:
/// E[Σ_t γ^{2t} { Var[r_t | s_t, a_t] G_{t,i}² + Var_t[V_t G_{t−1,i} + ∂_i V_t] }]
/// with G_t = Σ_{k≤t} ∇log π_k and Var_t over s_t given the history.
pub fn tree_cr_bound_all(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
    check_tree(mdp)?;
    let tables = value_tables(mdp, policy)?;
    let grads = value_gradients(mdp, policy, &tables)?;
    let d = mdp.dim();
    let mut bound = Gradient::zeros(d);
    let mut on_state = |_: usize, _: usize, _: f64, _: &Gradient| {};
    let mut on_action = |t: usize, s: usize, a: usize, prob: f64, score: &Gradient| {
        let w = prob * mdp.discount(t).powi(2);
        let var = mdp.reward_variance(s, a);
        if var > 0.0 {
            bound.axpy(w * var, &score.component_mul(score), 1.0);
        }
        if t < mdp.horizon() {
            let w = prob * mdp.discount(t + 1).powi(2);
            bound.axpy(w, &successor_variance(mdp, &tables, &grads, s, a, score), 1.0);
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
    Ok(bound.iter().copied().collect())
}

pub fn tree_cr_bound(mdp: &TabularMdp, policy: &SoftmaxPolicy, coord: usize) -> Result<f64> {
    check_coord(policy, coord)?;
    Ok(tree_cr_bound_all(mdp, policy)?[coord])
}

/// The general layered-MDP bound for every coordinate:
/// Σ_t γ^{2t} [ Σ_{(s,a) at t} P(s,a) Var[r|s,a] E[G_{t,i} | s,a]²
///            + Σ_{(s',a') at t−1} P(s',a') Var_{s∼P(·|s',a')}(E[G_{t−1,i} | s',a'] V(s) + ∂_i V(s)) ]
/// where P(s,a) is the marginal probability of visiting (s,a).
pub fn dag_cr_bound_all(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
    let tables = value_tables(mdp, policy)?;
    let grads = value_gradients(mdp, policy, &tables)?;
    let d = mdp.dim();
    let na = mdp.num_actions();
    let mut mass = vec![0.0; mdp.num_states() * na];
    let mut score_sum = vec![Gradient::zeros(d); mdp.num_states() * na];
    let mut on_state = |_: usize, _: usize, _: f64, _: &Gradient| {};
    let mut on_action = |_: usize, s: usize, a: usize, prob: f64, score: &Gradient| {
        mass[s * na + a] += prob;
        score_sum[s * na + a].axpy(prob, score, 1.0);
    };
    walk_histories(
        mdp,
        policy,
        &mut HistoryVisitor {
            on_state: &mut on_state,
            on_action: &mut on_action,
        },
    )?;
    let mut bound = Gradient::zeros(d);
    for t in 0..=mdp.horizon() {
        for &s in mdp.states_in_layer(t) {
            for a in 0..na {
                let m = mass[s * na + a];
                if m <= 0.0 {
                    continue;
                }
                let g = &score_sum[s * na + a] / m;
                let var = mdp.reward_variance(s, a);
                if var > 0.0 {
                    let w = m * mdp.discount(t).powi(2) * var;
                    bound.axpy(w, &g.component_mul(&g), 1.0);
                }
                if t < mdp.horizon() {
                    let w = m * mdp.discount(t + 1).powi(2);
                    bound.axpy(w, &successor_variance(mdp, &tables, &grads, s, a, &g), 1.0);
                }
            }
        }
    }
    Ok(bound.iter().copied().collect())
}

pub fn dag_cr_bound(mdp: &TabularMdp, policy: &SoftmaxPolicy, coord: usize) -> Result<f64> {
    check_coord(policy, coord)?;
    Ok(dag_cr_bound_all(mdp, policy)?[coord])
}
