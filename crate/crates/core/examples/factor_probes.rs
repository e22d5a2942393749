//! Ridge probes decoding object positions from the latent state and from
//! the query state, with and without conditioning on the moved object.

use plsm_lab::envs::{generate_dataset, EnvConfig};
use plsm_lab::eval::probe_report;
use plsm_lab::model::{ModelConfig, WorldModel};
use plsm_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let data = generate_dataset(&EnvConfig::shapes(5).with_seed(5), 1000)?;
    let test = generate_dataset(&EnvConfig::shapes(5).with_seed(6), 200)?;
    let mut model = WorldModel::new(ModelConfig::default(), data.obs_dim(), data.action_dim(), 0)?;
    train(&mut model, &data, &TrainConfig { epochs, ..TrainConfig::default() })?;
    let p = probe_report(&model, &test)?;
    println!("R² from z: {:.3}", p.r2_latent);
    println!("R² from h: {:.3}", p.r2_query);
    println!("R² from h for the object the action moves: {:.3} (unconditioned {:.3})", p.r2_query_conditioned, p.r2_query_object);
    Ok(())
}
