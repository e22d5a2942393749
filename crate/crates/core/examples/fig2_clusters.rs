//! The heart environment has nine possible displacements. A parsimonious
//! model's predicted deltas fall into a few clusters per action, while the
//! baseline's spread out with the state.

use plsm_lab::envs::{generate_dataset, EnvConfig};
use plsm_lab::eval::{delta_clusters, DEFAULT_EPSILON};
use plsm_lab::model::{ModelConfig, Variant, WorldModel};
use plsm_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(15);
    let data = generate_dataset(&EnvConfig::heart().with_seed(3), 1000)?;
    let test = generate_dataset(&EnvConfig::heart().with_seed(4).with_episode_length(11), 200)?;
    for variant in [Variant::Plsm, Variant::Cwm] {
        let mut model = WorldModel::new(ModelConfig::default().with_variant(variant), data.obs_dim(), data.action_dim(), 0)?;
        train(&mut model, &data, &TrainConfig { epochs, ..TrainConfig::default() })?;
        let r = delta_clusters(&model, &test, DEFAULT_EPSILON)?;
        println!(
            "{variant}: per-action clusters {:?}, marginal {}, I(z; delta | a) = {:.3} bits",
            r.per_action_counts, r.marginal_count, r.empirical_mi
        );
    }
    Ok(())
}
