//! Trains a parsimonious model and the unregularised baseline on the shapes
//! environment and compares multi-step Hits@1 and the query norm.

use plsm_lab::envs::{generate_dataset, EnvConfig};
use plsm_lab::eval::{hits_at_1, norm_diagnostics, DEFAULT_HORIZONS};
use plsm_lab::model::{ModelConfig, Variant, WorldModel};
use plsm_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let data = generate_dataset(&EnvConfig::shapes(5).with_seed(11), 1000)?;
    let test = generate_dataset(&EnvConfig::shapes(5).with_seed(12).with_episode_length(11), 200)?;
    let train_cfg = TrainConfig { epochs, ..TrainConfig::default() };

    let mut models = Vec::new();
    for variant in [Variant::Plsm, Variant::Cwm] {
        let mut model = WorldModel::new(ModelConfig::default().with_variant(variant), data.obs_dim(), data.action_dim(), 0)?;
        let record = train(&mut model, &data, &train_cfg)?;
        let last = record.final_loss().unwrap_or_default();
        let hits = hits_at_1(&model, &test, &DEFAULT_HORIZONS)?;
        println!("{variant}: final loss {:.4} (penalty {:.2e}), Hits@1 {:?}", last.total, last.penalty, hits.accuracy);
        models.push(model);
    }
    let norms = norm_diagnostics(&models[0], &models[1], &test)?;
    println!("mean ||h|| / mean ||z|| = {:.4}, dynamics weight ratio {:.2}", norms.h_over_z, norms.weight_ratio);
    Ok(())
}
