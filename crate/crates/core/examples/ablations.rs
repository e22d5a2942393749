//! The ablation variants side by side: no query network (latent L2
//! penalty), a top-k query, weight decay on the dynamics, and the hybrid
//! model whose latent is split into a parsimonious and a free half.

use plsm_lab::envs::{generate_dataset, EnvConfig};
use plsm_lab::eval::hits_at_1;
use plsm_lab::model::{ModelConfig, Variant, WorldModel};
use plsm_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let data = generate_dataset(&EnvConfig::shapes(5).with_seed(9), 500)?;
    let test = generate_dataset(&EnvConfig::shapes(5).with_seed(10).with_episode_length(11), 200)?;
    for variant in [Variant::Plsm, Variant::NoQuery, Variant::Topk, Variant::WeightDecay, Variant::Hybrid] {
        let config = ModelConfig { topk_k: 15, ..ModelConfig::default().with_variant(variant) };
        let mut model = WorldModel::new(config, data.obs_dim(), data.action_dim(), 0)?;
        let record = train(&mut model, &data, &TrainConfig { epochs, ..TrainConfig::default() })?;
        let hits = hits_at_1(&model, &test, &[1, 10])?;
        let last = record.final_loss().unwrap_or_default();
        println!("{variant:>12}: loss {:.4} (penalty {:.2e}, decay {:.2e}), Hits@1 h1 {:.3} h10 {:.3}",
            last.total, last.penalty, last.decay, hits.at(1).unwrap(), hits.at(10).unwrap());
    }
    Ok(())
}
