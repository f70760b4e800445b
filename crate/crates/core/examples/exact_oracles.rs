//! Builds a small stochastic MDP by hand and compares the exact oracles:
//! trajectory enumeration, dynamic programming, and sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgope::mdp::{
    enumerate_trajectories, exact_policy_gradient, exact_return, sample_trajectory,
    value_gradients, value_tables, RewardAtom, Successor,
};
use pgope::{Result, SoftmaxPolicy, TabularMdp};

fn main() -> Result<()> {
    // s0 in layer 0, s1/s2 in layer 1; action 1 is risky.
    let coin = |lo: f64, hi: f64| vec![RewardAtom { value: lo, p: 0.5 }, RewardAtom { value: hi, p: 0.5 }];
    let mdp = TabularMdp::builder(3, 2, 1)
        .gamma(0.9)
        .layer_of(vec![0, 1, 1])
        .transition(0, 0, vec![Successor { state: 1, p: 1.0 }])
        .transition(0, 1, vec![Successor { state: 1, p: 0.3 }, Successor { state: 2, p: 0.7 }])
        .reward(0, 0, coin(0.0, 0.0))
        .reward(0, 1, coin(-1.0, 1.0))
        .reward(1, 0, coin(1.0, 1.0))
        .reward(1, 1, coin(0.0, 2.0))
        .reward(2, 0, coin(2.0, 2.0))
        .reward(2, 1, coin(-3.0, 3.0))
        .build()?;
    let policy = SoftmaxPolicy::new(3, 2, vec![0.2, -0.1, 0.0, 0.5, -0.4, 0.3])?;

    let trajectories = enumerate_trajectories(&mdp, &policy)?;
    let total: f64 = trajectories.iter().map(|(_, p)| p).sum();
    let by_enumeration: f64 = trajectories
        .iter()
        .map(|(t, p)| p * t.discounted_return(mdp.gamma()))
        .sum();
    println!("{} trajectories, total probability {total}", trajectories.len());
    println!("J by enumeration  = {by_enumeration:.12}");
    println!("J by DP           = {:.12}", exact_return(&mdp, &policy)?);

    let tables = value_tables(&mdp, &policy)?;
    let grads = value_gradients(&mdp, &policy, &tables)?;
    let by_dp = grads.v_grad(mdp.start_state());
    let by_enum = exact_policy_gradient(&mdp, &policy)?;
    println!("max |grad_DP - grad_enum| = {:.3e}", (by_dp - &by_enum).amax());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let mut mean = 0.0;
    for _ in 0..n {
        mean += sample_trajectory(&mdp, &policy, &mut rng)?.discounted_return(mdp.gamma());
    }
    println!("J by {n} samples = {:.4}", mean / n as f64);
    Ok(())
}
