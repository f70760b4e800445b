//! The four generator families and their JSON round trip.

use pgope::cr_bound::check_tree;
use pgope::generate::{ChainParams, DagParams, GridParams, MdpKind, TreeParams};
use pgope::{Result, TabularMdp};

fn main() -> Result<()> {
    let kinds = [
        MdpKind::Chain(ChainParams { horizon: 3, num_actions: 2, reward_support: 2, gamma: 0.95 }),
        MdpKind::Tree(TreeParams { num_actions: 2, branching: 2, horizon: 2, reward_support: 2, gamma: 0.95 }),
        MdpKind::Gridlike(GridParams { width: 4, horizon: 3, slip: 0.2, gamma: 0.95 }),
        MdpKind::RandomDag(DagParams::small_stochastic()),
    ];
    for kind in &kinds {
        let mdp = kind.generate(7)?;
        let json = mdp.to_json_string();
        assert_eq!(TabularMdp::from_json_str(&json)?, mdp);
        assert_eq!(kind.generate(7)?.to_json_string(), json);
        println!(
            "{:<40} states {:>3}, actions {}, trajectories {:>6}, tree: {}",
            serde_json::to_string(kind)?,
            mdp.num_states(),
            mdp.num_actions(),
            mdp.support_size(),
            check_tree(&mdp).is_ok()
        );
    }
    Ok(())
}
