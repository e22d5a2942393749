//! Generates the three environments, inspects a transition, corrupts a
//! dataset with observation noise and round-trips it through a file.

use plsm_lab::envs::{corrupt, generate_dataset, load_dataset, save_dataset, EnvConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for config in [EnvConfig::heart(), EnvConfig::wall(), EnvConfig::shapes(5)] {
        let ds = generate_dataset(&config.clone().with_seed(1), 100)?;
        println!(
            "{:>6}: {} episodes x {} observations, obs width {}, action width {}",
            config.kind.name(),
            ds.episodes(),
            ds.episode_length(),
            ds.obs_dim(),
            ds.action_dim()
        );
    }

    let ds = generate_dataset(&EnvConfig::shapes(5).with_seed(1), 100)?;
    let (before, after) = (ds.state(0, 0), ds.state(0, 1));
    let a = ds.action_index(0, 0);
    println!("episode 0: object {} direction {}: {:?} -> {:?}", a / 4, a % 4, before.positions, after.positions);

    // Fewer objects than slots: the action width stays that of five objects.
    let sparse = generate_dataset(&EnvConfig::shapes(5).with_present(2).with_seed(1), 10)?;
    println!("two present objects: action width {}, positions {:?}", sparse.action_dim(), sparse.state(0, 0).positions);

    let noisy = corrupt(&ds, 0.1, 7)?;
    println!("corrupted copy records sigma {}", noisy.noise_sigma);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("shapes.plsm");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    println!("round trip through {} bytes: identical = {}", std::fs::metadata(&path)?.len(), back.observations == ds.observations);
    Ok(())
}
