//! Tabular softmax policies.
//!
//! The parameter vector θ has one logit per (state, action) pair, flattened
//! state-major: coordinate `s * num_actions + a`. Every module that produces
//! a gradient uses this order.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Gradient;

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidParameter("a policy needs at least one action".into()));
        }
        let dim = num_states * num_actions;
        if logits.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "policy logits",
                expected: dim,
                got: logits.len(),
            });
        }
        if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite logit {bad}")));
        }
        let mut probs = vec![0.0; dim];
        for s in 0..num_states {
            let row = &logits[s * num_actions..(s + 1) * num_actions];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut probs[s * num_actions..(s + 1) * num_actions];
            let mut total = 0.0;
            for (p, &l) in out.iter_mut().zip(row) {
                *p = (l - max).exp();
                total += *p;
            }
            for p in out.iter_mut() {
                *p /= total;
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            logits,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self::new(num_states, num_actions, vec![0.0; num_states * num_actions])
            .expect("zero logits are always valid")
    }

    /// Logits drawn uniformly from [-scale, scale].
    pub fn random<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let logits = (0..num_states * num_actions)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self::new(num_states, num_actions, logits).expect("finite logits")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Dimension d of θ.
    pub fn dim(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    pub fn action_probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[self.index(s, a)]
    }

    /// ∇θ log π(a|s): coordinate (s, b) is 1{b = a} − π(b|s); every other
    /// state's coordinates are zero.
    pub fn grad_log_prob(&self, s: usize, a: usize) -> Gradient {
        let mut g = Gradient::zeros(self.dim());
        self.add_grad_log_prob(s, a, 1.0, &mut g);
        g
    }

    /// `out += scale * ∇θ log π(a|s)` without materializing the sparse score.
    #[inline]
    pub fn add_grad_log_prob(&self, s: usize, a: usize, scale: f64, out: &mut Gradient) {
        let base = s * self.num_actions;
        for (b, p) in self.action_probs(s).iter().enumerate() {
            out[base + b] -= scale * p;
        }
        out[base + a] += scale;
    }

    /// `out += scale * ∇θ π(a|s)`.
    #[inline]
    pub fn add_grad_prob(&self, s: usize, a: usize, scale: f64, out: &mut Gradient) {
        self.add_grad_log_prob(s, a, scale * self.prob(s, a), out);
    }

    /// Copy of the policy with θᵢ shifted by `eps`.
    pub fn perturb(&self, i: usize, eps: f64) -> Result<Self> {
        if i >= self.dim() {
            return Err(Error::CoordinateOutOfRange {
                index: i,
                dim: self.dim(),
            });
        }
        let mut logits = self.logits.clone();
        logits[i] += eps;
        Self::new(self.num_states, self.num_actions, logits)
    }

    /// Copy with the logits of a single state replaced.
    pub fn with_state_logits(&self, s: usize, row: &[f64]) -> Result<Self> {
        if row.len() != self.num_actions {
            return Err(Error::DimensionMismatch {
                what: "state logits",
                expected: self.num_actions,
                got: row.len(),
            });
        }
        let mut logits = self.logits.clone();
        logits[s * self.num_actions..(s + 1) * self.num_actions].copy_from_slice(row);
        Self::new(self.num_states, self.num_actions, logits)
    }

    pub(crate) fn check_shape(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if self.num_states != num_states {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: num_states,
                got: self.num_states,
            });
        }
        if self.num_actions != num_actions {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: num_actions,
                got: self.num_actions,
            });
        }
        Ok(())
    }

    pub(crate) fn cache_key(&self) -> Vec<u64> {
        self.logits.iter().map(|x| x.to_bits()).collect()
    }
}
