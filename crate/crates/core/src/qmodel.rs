//! Approximate value side information Q̃, Ṽ, ∇Q̃, ∇Ṽ for a policy π_θ.
//!
//! The zeroth-order values Q̃ and the first-order values ∇Q̃ are independent
//! inputs: each variant fixes how Q̃ moves when θ moves, which is what finite
//! differences of the doubly robust estimator observe.
//!
//! | variant        | Q̃ at θ'                          | ∇Q̃ at θ'            |
//! |----------------|----------------------------------|---------------------|
//! | `Zero`         | 0                                | 0                   |
//! | `Constant`     | stored table                     | 0                   |
//! | `StateBaseline`| b(s)                             | 0                   |
//! | `FrozenLinear` | table + ⟨stored grad, θ'−anchor⟩ | stored grad         |
//! | `ExactDp`      | Q^{π_θ'} (+ fixed offset)        | ∇Q^{π_θ'}           |
//!
//! Ṽ is always derived as Σ_a π(a|s) Q̃(s,a) and ∇Ṽ always includes both the
//! ∇π and the ∇Q̃ contributions.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Gradient;
use crate::mdp::{value_gradients, value_tables, TabularMdp, TERMINAL};
use crate::policy::SoftmaxPolicy;

const EXACT_CACHE_LIMIT: usize = 4096;

pub enum QModel {
    Zero,
    Constant {
        q: Vec<f64>,
    },
    StateBaseline {
        b: Vec<f64>,
    },
    FrozenLinear {
        q: Vec<f64>,
        q_grad: Vec<Gradient>,
        anchor: Vec<f64>,
    },
    ExactDp(ExactDpModel),
}

/// Exact Q^{π_θ} recomputed for every queried θ, optionally shifted by a
/// θ-independent offset table. Evaluations are cached per policy.
pub struct ExactDpModel {
    mdp: Arc<TabularMdp>,
    offset: Option<Vec<f64>>,
    cache: RwLock<HashMap<Vec<u64>, Arc<SideInfo>>>,
}

impl ExactDpModel {
    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn offset(&self) -> Option<&[f64]> {
        self.offset.as_deref()
    }

    fn evaluate(&self, policy: &SoftmaxPolicy) -> Result<Arc<SideInfo>> {
        let key = policy.cache_key();
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let tables = value_tables(&self.mdp, policy)?;
        let grads = value_gradients(&self.mdp, policy, &tables)?;
        let mut q = tables.q_table().to_vec();
        if let Some(off) = &self.offset {
            for (x, o) in q.iter_mut().zip(off) {
                *x += o;
            }
        }
        let info = Arc::new(SideInfo::build(policy, q, Some(grads.into_q_grads())));
        let mut cache = self.cache.write().expect("cache lock");
        if cache.len() >= EXACT_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, info.clone());
        Ok(info)
    }
}

impl Clone for QModel {
    fn clone(&self) -> Self {
        match self {
            QModel::Zero => QModel::Zero,
            QModel::Constant { q } => QModel::Constant { q: q.clone() },
            QModel::StateBaseline { b } => QModel::StateBaseline { b: b.clone() },
            QModel::FrozenLinear { q, q_grad, anchor } => QModel::FrozenLinear {
                q: q.clone(),
                q_grad: q_grad.clone(),
                anchor: anchor.clone(),
            },
            QModel::ExactDp(m) => QModel::ExactDp(ExactDpModel {
                mdp: m.mdp.clone(),
                offset: m.offset.clone(),
                cache: RwLock::new(HashMap::new()),
            }),
        }
    }
}

impl fmt::Debug for QModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QModel::ExactDp(m) => f
                .debug_struct("ExactDp")
                .field("offset", &m.offset.is_some())
                .finish(),
            other => f.write_str(other.variant_name()),
        }
    }
}

/// How a model snapshot is built from exact tables plus noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Constant,
    StateBaseline,
    FrozenLinear,
    /// ExactDp with a θ-independent noise offset on Q̃.
    ExactOffset,
}

impl QModel {
    pub fn zero() -> Self {
        QModel::Zero
    }

    pub fn constant(q: Vec<f64>) -> Self {
        QModel::Constant { q }
    }

    pub fn state_baseline(b: Vec<f64>) -> Self {
        QModel::StateBaseline { b }
    }

    pub fn frozen_linear(q: Vec<f64>, q_grad: Vec<Gradient>, anchor: Vec<f64>) -> Self {
        QModel::FrozenLinear { q, q_grad, anchor }
    }

    pub fn exact_dp(mdp: Arc<TabularMdp>) -> Self {
        QModel::ExactDp(ExactDpModel {
            mdp,
            offset: None,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn exact_dp_with_offset(mdp: Arc<TabularMdp>, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != mdp.dim() {
            return Err(Error::DimensionMismatch {
                what: "Q offset table",
                expected: mdp.dim(),
                got: offset.len(),
            });
        }
        Ok(QModel::ExactDp(ExactDpModel {
            mdp,
            offset: Some(offset),
            cache: RwLock::new(HashMap::new()),
        }))
    }

    /// A model built from exact quantities at `policy`, with every stored
    /// number perturbed once by independent uniform noise in [-noise, noise].
    /// Value noise and gradient noise are drawn independently.
    pub fn noisy_snapshot(
        kind: SnapshotKind,
        mdp: Arc<TabularMdp>,
        policy: &SoftmaxPolicy,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |x: f64| {
            if noise > 0.0 {
                x + rng.gen_range(-noise..=noise)
            } else {
                x
            }
        };
        let tables = value_tables(&mdp, policy)?;
        Ok(match kind {
            SnapshotKind::Constant => {
                QModel::constant(tables.q_table().iter().map(|&x| jitter(x)).collect())
            }
            SnapshotKind::StateBaseline => {
                QModel::state_baseline(tables.v_table().iter().map(|&x| jitter(x)).collect())
            }
            SnapshotKind::FrozenLinear => {
                let grads = value_gradients(&mdp, policy, &tables)?;
                let q = tables.q_table().iter().map(|&x| jitter(x)).collect();
                let q_grad = grads
                    .into_q_grads()
                    .into_iter()
                    .map(|g| g.map(&mut jitter))
                    .collect();
                QModel::frozen_linear(q, q_grad, policy.logits().to_vec())
            }
            SnapshotKind::ExactOffset => {
                let offset = (0..mdp.dim()).map(|_| jitter(0.0)).collect();
                QModel::exact_dp_with_offset(mdp, offset)?
            }
        })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            QModel::Zero => "zero",
            QModel::Constant { .. } => "constant",
            QModel::StateBaseline { .. } => "state-baseline",
            QModel::FrozenLinear { .. } => "frozen-linear",
            QModel::ExactDp(_) => "exact-dp",
        }
    }

    /// Q̃ and Ṽ, with their gradients, evaluated at `policy`.
    pub fn evaluate(&self, policy: &SoftmaxPolicy) -> Result<Arc<SideInfo>> {
        let sa = policy.dim();
        let check = |what: &'static str, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            }
        };
        let info = match self {
            QModel::Zero => SideInfo::build(policy, vec![0.0; sa], None),
            QModel::Constant { q } => {
                check("constant Q table", q.len(), sa)?;
                SideInfo::build(policy, q.clone(), None)
            }
            QModel::StateBaseline { b } => {
                check("baseline table", b.len(), policy.num_states())?;
                let na = policy.num_actions();
                let q = (0..sa).map(|i| b[i / na]).collect();
                SideInfo::build(policy, q, None)
            }
            QModel::FrozenLinear { q, q_grad, anchor } => {
                check("frozen Q table", q.len(), sa)?;
                check("frozen Q gradient table", q_grad.len(), sa)?;
                check("anchor", anchor.len(), sa)?;
                let delta = Gradient::from_iterator(
                    sa,
                    policy.logits().iter().zip(anchor).map(|(x, y)| x - y),
                );
                let values = q
                    .iter()
                    .zip(q_grad)
                    .map(|(q0, g)| {
                        check("frozen Q gradient", g.len(), sa)?;
                        Ok(q0 + g.dot(&delta))
                    })
                    .collect::<Result<Vec<_>>>()?;
                SideInfo::build(policy, values, Some(q_grad.clone()))
            }
            QModel::ExactDp(m) => return m.evaluate(policy),
        };
        Ok(Arc::new(info))
    }

    /// Q̃ frozen at its values for `policy`, with ∇Q̃ ≡ 0.
    pub fn constant_snapshot(&self, policy: &SoftmaxPolicy) -> Result<QModel> {
        Ok(QModel::constant(self.evaluate(policy)?.q_table().to_vec()))
    }

    pub fn q_value(&self, policy: &SoftmaxPolicy, s: usize, a: usize) -> Result<f64> {
        Ok(self.evaluate(policy)?.q(s, a))
    }

    pub fn v_value(&self, policy: &SoftmaxPolicy, s: usize) -> Result<f64> {
        Ok(self.evaluate(policy)?.v(s))
    }

    pub fn q_grad(&self, policy: &SoftmaxPolicy, s: usize, a: usize) -> Result<Gradient> {
        Ok(self.evaluate(policy)?.q_grad(s, a).clone())
    }

    pub fn v_grad(&self, policy: &SoftmaxPolicy, s: usize) -> Result<Gradient> {
        Ok(self.evaluate(policy)?.v_grad(s).clone())
    }
}

/// A model evaluated at one policy. Queries at [`TERMINAL`] return zero.
#[derive(Clone, Debug)]
pub struct SideInfo {
    num_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
    q_grad: Option<Vec<Gradient>>,
    v_grad: Vec<Gradient>,
    zero: Gradient,
}

impl SideInfo {
    /// Derives Ṽ and ∇Ṽ from Q̃ and ∇Q̃ (`None` means ∇Q̃ ≡ 0).
    pub fn build(policy: &SoftmaxPolicy, q: Vec<f64>, q_grad: Option<Vec<Gradient>>) -> Self {
        let na = policy.num_actions();
        let d = policy.dim();
        let mut v = vec![0.0; policy.num_states()];
        let mut v_grad = Vec::with_capacity(policy.num_states());
        for (s, vs) in v.iter_mut().enumerate() {
            let probs = policy.action_probs(s);
            let row = &q[s * na..(s + 1) * na];
            *vs = probs.iter().zip(row).map(|(p, q)| p * q).sum();
            // Σ_a Q̃(s,a) ∇π(a|s) has coordinate (s,b) = π(b|s)(Q̃(s,b) − Ṽ(s)).
            let mut g = Gradient::zeros(d);
            for b in 0..na {
                g[s * na + b] = probs[b] * (row[b] - *vs);
            }
            if let Some(qg) = &q_grad {
                for (a, p) in probs.iter().enumerate() {
                    g.axpy(*p, &qg[s * na + a], 1.0);
                }
            }
            v_grad.push(g);
        }
        Self {
            num_actions: na,
            q,
            v,
            q_grad,
            v_grad,
            zero: Gradient::zeros(d),
        }
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        if s == TERMINAL {
            0.0
        } else {
            self.q[s * self.num_actions + a]
        }
    }

    pub fn v(&self, s: usize) -> f64 {
        if s == TERMINAL {
            0.0
        } else {
            self.v[s]
        }
    }

    pub fn q_grad(&self, s: usize, a: usize) -> &Gradient {
        match &self.q_grad {
            Some(g) if s != TERMINAL => &g[s * self.num_actions + a],
            _ => &self.zero,
        }
    }

    pub fn v_grad(&self, s: usize) -> &Gradient {
        if s == TERMINAL {
            &self.zero
        } else {
            &self.v_grad[s]
        }
    }

    pub fn q_table(&self) -> &[f64] {
        &self.q
    }

    pub fn has_q_grad(&self) -> bool {
        self.q_grad.is_some()
    }
}
