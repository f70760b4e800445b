//! Seeded generators for layered test MDPs.
//!
//! All generators put a single start state in layer 0 and draw every random
//! table from a ChaCha stream seeded by the caller, so the same parameters
//! and seed always reproduce the same MDP (and the same JSON file).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpBuilder, RewardAtom, Successor, TabularMdp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub horizon: usize,
    pub num_actions: usize,
    pub reward_support: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub num_actions: usize,
    /// Fresh successor states per (s, a); 1 gives deterministic transitions.
    pub branching: usize,
    pub horizon: usize,
    pub reward_support: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub width: usize,
    pub horizon: usize,
    /// Probability that a move fails and the agent stays in place.
    pub slip: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagParams {
    pub states_per_layer: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Positive-probability successors per (s, a).
    pub successors: usize,
    pub reward_support: usize,
    pub reward_scale: f64,
    pub gamma: f64,
}

impl DagParams {
    /// 3 states per layer, 2 actions, T = 3, stochastic rewards and transitions.
    pub fn small_stochastic() -> Self {
        Self {
            states_per_layer: 3,
            num_actions: 2,
            horizon: 3,
            successors: 3,
            reward_support: 2,
            reward_scale: 1.0,
            gamma: 0.95,
        }
    }

    /// Same shape as [`small_stochastic`](Self::small_stochastic) with point-mass
    /// transitions and rewards.
    pub fn small_deterministic() -> Self {
        Self {
            successors: 1,
            reward_support: 1,
            ..Self::small_stochastic()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MdpKind {
    Chain(ChainParams),
    Tree(TreeParams),
    Gridlike(GridParams),
    RandomDag(DagParams),
}

impl MdpKind {
    pub fn generate(&self, seed: u64) -> Result<TabularMdp> {
        match self {
            MdpKind::Chain(p) => chain(p, seed),
            MdpKind::Tree(p) => tree(p, seed),
            MdpKind::Gridlike(p) => gridlike(p, seed),
            MdpKind::RandomDag(p) => random_dag(p, seed),
        }
    }
}

fn positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        Err(Error::InvalidParameter(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

/// Normalized weights bounded away from zero.
fn simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn reward_support<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<RewardAtom> {
    simplex(rng, n)
        .into_iter()
        .map(|p| RewardAtom {
            value: rng.gen_range(-scale..=scale),
            p,
        })
        .collect()
}

/// One state per layer; every action leads to the next layer's state.
pub fn chain(p: &ChainParams, seed: u64) -> Result<TabularMdp> {
    positive("num_actions", p.num_actions)?;
    positive("reward_support", p.reward_support)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.horizon + 1;
    let mut b = MdpBuilder::new(n, p.num_actions, p.horizon)
        .gamma(p.gamma)
        .layer_of((0..n).collect());
    for s in 0..n {
        for a in 0..p.num_actions {
            b.set_reward(s, a, reward_support(&mut rng, p.reward_support, 1.0));
            if s < p.horizon {
                b.set_transition(s, a, vec![Successor { state: s + 1, p: 1.0 }]);
            }
        }
    }
    b.build()
}

/// Every (s, a) leads to `branching` fresh states, so each state has a unique
/// root path. States are numbered breadth-first.
pub fn tree(p: &TreeParams, seed: u64) -> Result<TabularMdp> {
    positive("num_actions", p.num_actions)?;
    positive("branching", p.branching)?;
    positive("reward_support", p.reward_support)?;
    let fan = p.num_actions * p.branching;
    let mut layer_sizes = vec![1usize];
    for _ in 0..p.horizon {
        let next = layer_sizes
            .last()
            .unwrap()
            .checked_mul(fan)
            .filter(|&n| n <= 1_000_000)
            .ok_or_else(|| Error::InvalidParameter("tree is too large".into()))?;
        layer_sizes.push(next);
    }
    let n: usize = layer_sizes.iter().sum();
    let mut layer_of = Vec::with_capacity(n);
    for (t, &size) in layer_sizes.iter().enumerate() {
        layer_of.extend(std::iter::repeat(t).take(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = MdpBuilder::new(n, p.num_actions, p.horizon)
        .gamma(p.gamma)
        .layer_of(layer_of);
    let mut next_free = 1;
    for s in 0..n {
        for a in 0..p.num_actions {
            b.set_reward(s, a, reward_support(&mut rng, p.reward_support, 1.0));
        }
        if next_free < n {
            for a in 0..p.num_actions {
                let next = simplex(&mut rng, p.branching)
                    .into_iter()
                    .enumerate()
                    .map(|(k, p)| Successor {
                        state: next_free + k,
                        p,
                    })
                    .collect();
                next_free += p.branching;
                b.set_transition(s, a, next);
            }
        }
    }
    b.build()
}

/// `width` positions per layer; three actions move left, stay or right, and
/// a move slips (stays put) with probability `slip`. Reward is higher near
/// the right edge and carries a two-point noise term.
pub fn gridlike(p: &GridParams, seed: u64) -> Result<TabularMdp> {
    positive("width", p.width)?;
    if !(0.0..1.0).contains(&p.slip) {
        return Err(Error::InvalidParameter("slip must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1 + p.width * p.horizon;
    let state = |t: usize, x: usize| if t == 0 { 0 } else { 1 + (t - 1) * p.width + x };
    let mut layer_of = vec![0];
    for t in 1..=p.horizon {
        layer_of.extend(std::iter::repeat(t).take(p.width));
    }
    let mut b = MdpBuilder::new(n, 3, p.horizon)
        .gamma(p.gamma)
        .layer_of(layer_of);
    let start_x = p.width / 2;
    for t in 0..=p.horizon {
        let xs: Vec<usize> = if t == 0 { vec![start_x] } else { (0..p.width).collect() };
        for x in xs {
            let s = state(t, x);
            for a in 0..3 {
                let base = x as f64 / p.width.max(1) as f64;
                let noise = rng.gen_range(0.0..0.5);
                b.set_reward(
                    s,
                    a,
                    vec![
                        RewardAtom { value: base + noise, p: 0.5 },
                        RewardAtom { value: base - noise, p: 0.5 },
                    ],
                );
                if t < p.horizon {
                    let target = (x as isize + a as isize - 1).clamp(0, p.width as isize - 1) as usize;
                    let next = if target == x || p.slip == 0.0 {
                        vec![Successor { state: state(t + 1, target), p: 1.0 }]
                    } else {
                        vec![
                            Successor { state: state(t + 1, target), p: 1.0 - p.slip },
                            Successor { state: state(t + 1, x), p: p.slip },
                        ]
                    };
                    b.set_transition(s, a, next);
                }
            }
        }
    }
    b.build()
}

/// Random layered DAG: each (s, a) picks `successors` distinct states of the
/// next layer with random probabilities; rewards have `reward_support` atoms.
pub fn random_dag(p: &DagParams, seed: u64) -> Result<TabularMdp> {
    positive("states_per_layer", p.states_per_layer)?;
    positive("num_actions", p.num_actions)?;
    positive("successors", p.successors)?;
    positive("reward_support", p.reward_support)?;
    if p.successors > p.states_per_layer {
        return Err(Error::InvalidParameter(
            "successors cannot exceed states_per_layer".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = p.states_per_layer;
    let n = 1 + w * p.horizon;
    let first = |t: usize| if t == 0 { 0 } else { 1 + (t - 1) * w };
    let mut layer_of = vec![0];
    for t in 1..=p.horizon {
        layer_of.extend(std::iter::repeat(t).take(w));
    }
    let mut b = MdpBuilder::new(n, p.num_actions, p.horizon)
        .gamma(p.gamma)
        .layer_of(layer_of.clone());
    for s in 0..n {
        let t = layer_of[s];
        for a in 0..p.num_actions {
            b.set_reward(s, a, reward_support(&mut rng, p.reward_support, p.reward_scale));
            if t < p.horizon {
                let mut picks = sample(&mut rng, w, p.successors).into_vec();
                picks.sort_unstable();
                let next = picks
                    .into_iter()
                    .zip(simplex(&mut rng, p.successors))
                    .map(|(k, p)| Successor {
                        state: first(t + 1) + k,
                        p,
                    })
                    .collect();
                b.set_transition(s, a, next);
            }
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr_bound::check_tree;

    #[test]
    fn tree_sizes_and_certificate() {
        let p = TreeParams {
            num_actions: 2,
            branching: 1,
            horizon: 2,
            reward_support: 1,
            gamma: 1.0,
        };
        let mdp = tree(&p, 0).unwrap();
        assert_eq!(mdp.num_states(), 1 + 2 + 4);
        assert!(check_tree(&mdp).is_ok());

        let stochastic = TreeParams { branching: 2, reward_support: 2, ..p };
        let mdp = tree(&stochastic, 0).unwrap();
        assert_eq!(mdp.num_states(), 1 + 4 + 16);
        assert!(check_tree(&mdp).is_ok());
    }

    #[test]
    fn chain_has_one_state_per_layer() {
        let mdp = chain(
            &ChainParams {
                horizon: 3,
                num_actions: 2,
                reward_support: 2,
                gamma: 0.9,
            },
            1,
        )
        .unwrap();
        assert_eq!(mdp.num_states(), 4);
        for t in 0..=3 {
            assert_eq!(mdp.states_in_layer(t).len(), 1);
        }
    }

    #[test]
    fn random_dag_is_reproducible() {
        let p = DagParams::small_stochastic();
        let a = random_dag(&p, 7).unwrap().to_json_string();
        let b = random_dag(&p, 7).unwrap().to_json_string();
        let c = random_dag(&p, 8).unwrap().to_json_string();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_dag_is_deterministic() {
        let mdp = random_dag(&DagParams::small_deterministic(), 3).unwrap();
        assert!(mdp.is_deterministic());
        assert!(!random_dag(&DagParams::small_stochastic(), 3).unwrap().is_deterministic());
    }

    #[test]
    fn gridlike_is_valid() {
        let mdp = gridlike(
            &GridParams {
                width: 4,
                horizon: 3,
                slip: 0.2,
                gamma: 0.9,
            },
            5,
        )
        .unwrap();
        assert_eq!(mdp.num_states(), 13);
        assert_eq!(mdp.num_actions(), 3);
    }

    #[test]
    fn parameter_validation() {
        let mut p = DagParams::small_stochastic();
        p.successors = 4;
        assert!(random_dag(&p, 0).is_err());
        p.successors = 0;
        assert!(random_dag(&p, 0).is_err());
    }
}
