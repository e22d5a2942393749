//! Self-prediction against an EMA target encoder has no negatives. With
//! raw squared error the latents shrink towards a constant; comparing
//! normalised vectors removes that shortcut.

use plsm_lab::envs::{generate_dataset, EnvConfig};
use plsm_lab::eval::collapse_metric;
use plsm_lab::model::{ModelConfig, Variant, WorldModel};
use plsm_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let data = generate_dataset(&EnvConfig::shapes(5).with_seed(8), 500)?;
    let runs = [("squared error, beta 0.1", 0.1, false), ("squared error, beta 1e3", 1e3, false), ("normalised, beta 0.1", 0.1, true)];
    for (name, beta, spr_normalize) in runs {
        let mut model = WorldModel::new(ModelConfig::default().with_variant(Variant::Spr), data.obs_dim(), data.action_dim(), 0)?;
        let start = collapse_metric(&model, &data)?.mean_variance;
        let cfg = TrainConfig { epochs, beta, spr_normalize, ..TrainConfig::default() };
        train(&mut model, &data, &cfg)?;
        let end = collapse_metric(&model, &data)?.mean_variance;
        println!("{name:>24}: mean latent variance {start:.2e} -> {end:.2e}");
    }
    Ok(())
}
